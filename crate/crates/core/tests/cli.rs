use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn posenc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posenc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Splits one CSV line, honouring double-quoted fields.
fn csv_fields(line: &str) -> Vec<String> {
    let (mut fields, mut field, mut quoted) = (Vec::new(), String::new(), false);
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' if quoted && chars.peek() == Some(&'"') => {
                field.push('"');
                chars.next();
            }
            '"' => quoted = !quoted,
            ',' if !quoted => fields.push(std::mem::take(&mut field)),
            _ => field.push(c),
        }
    }
    fields.push(field);
    fields
}

/// `(name, value)` pairs from `--csv -` output.
fn csv_rows(text: &str) -> Vec<(String, f64)> {
    text.lines()
        .skip(1)
        .map(|line| {
            let f = csv_fields(line);
            assert_eq!(f.len(), 3, "{line}");
            (f[0].clone(), f[1].parse().unwrap())
        })
        .collect()
}

fn synth(dir: &TempDir, name: &str, extra: &[&str]) -> String {
    let path = dir.path().join(name);
    let mut args = vec!["synth", "-o", path_str(&path)];
    args.extend_from_slice(extra);
    let out = posenc(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    path.to_str().unwrap().to_string()
}

#[test]
fn synth_writes_the_default_corpus() {
    let dir = TempDir::new().unwrap();
    let a = synth(&dir, "a.txt", &["--n", "32", "--v", "200", "--count", "5000", "--seed", "1"]);
    let text = fs::read_to_string(&a).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 5000);
    assert!(rows.iter().all(|r| r.split_whitespace().count() == 32));

    let b = synth(&dir, "b.txt", &["--seed", "1"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let c = synth(&dir, "c.txt", &["--seed", "2"]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&posenc(&["synth"])), 2);
    assert_eq!(code(&posenc(&["no-such-command"])), 2);
    assert_eq!(code(&posenc(&["report", "--tol", "0"])), 2);
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("e.txt");
    let odd = posenc(&["encode", "--kind", "sinusoidal", "--n", "8", "--d", "3", "-o", path_str(&out)]);
    assert_eq!(code(&odd), 2);
}

#[test]
fn bad_corpus_exits_3() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "1 2 3\n4 five 6\n").unwrap();
    let out = posenc(&["stress", "--corpus", path_str(&bad)]);
    assert_eq!(code(&out), 3);
    let ragged = dir.path().join("ragged.txt");
    fs::write(&ragged, "1 2 3\n4 5\n").unwrap();
    assert_eq!(code(&posenc(&["report", "--corpus", path_str(&ragged)])), 3);
    let missing = dir.path().join("missing.txt");
    assert_eq!(code(&posenc(&["estimate", "--corpus", path_str(&missing)])), 3);
}

#[test]
fn report_orders_stress_and_lists_ranks() {
    let out = posenc(&["report", "--ranks", "1,2,3,7", "--csv", "-"]);
    assert_eq!(code(&out), 0);
    let rows = csv_rows(&stdout(&out));
    let stress: Vec<&(String, f64)> = rows.iter().filter(|(n, _)| n.starts_with("stress:") && !n.contains("r=")).collect();
    assert_eq!(stress.len(), 3);
    assert!(stress[0].0.starts_with("stress:mds"));
    assert!(stress.windows(2).all(|w| w[0].1 <= w[1].1));
    let names: Vec<&str> = stress.iter().map(|(n, _)| n.as_str()).collect();
    assert!(names[1].contains("sinusoidal") && names[2].contains("random"), "{names:?}");
    let tradeoff: Vec<&(String, f64)> = rows.iter().filter(|(n, _)| n.starts_with("stress:r=")).collect();
    assert_eq!(tradeoff.len(), 4);
}

#[test]
fn csv_and_table_carry_the_same_values() {
    let table = stdout(&posenc(&["report", "--seed", "3"]));
    let csv = stdout(&posenc(&["report", "--seed", "3", "--csv", "-"]));
    for line in csv.lines().skip(1) {
        let value = &csv_fields(line)[1];
        assert!(table.contains(value.as_str()), "{value} missing from table");
    }
    let again = stdout(&posenc(&["report", "--seed", "3", "--csv", "-"]));
    assert_eq!(csv, again);
}

#[test]
fn single_sequence_corpus_still_reports() {
    let dir = TempDir::new().unwrap();
    let one = dir.path().join("one.txt");
    fs::write(&one, "0 1 2 1 0 3\n").unwrap();
    let out = posenc(&["report", "--corpus", path_str(&one), "--d", "4", "--table-dim", "8", "--ranks", "1,2", "--csv", "-"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&stdout(&out));
    assert!(rows.iter().any(|(n, v)| n.starts_with("stress:mds") && v.is_finite()));
}

#[test]
fn subcommands_round_trip_files() {
    let dir = TempDir::new().unwrap();
    let corpus = synth(&dir, "c.txt", &["--n", "12", "--v", "30", "--count", "400"]);
    let marg = dir.path().join("mu.txt");
    let dist = dir.path().join("d.txt");
    let out = posenc(&["estimate", "--corpus", &corpus, "-o", path_str(&marg), "--distances", path_str(&dist)]);
    assert_eq!(code(&out), 0);
    let mu = posenc::matrix_io::load_matrix(&marg).unwrap();
    assert_eq!(mu.dim(), (12, 30));
    assert_eq!(posenc::matrix_io::load_matrix(&dist).unwrap().dim(), (12, 12));

    let enc = dir.path().join("mds.txt");
    let out = posenc(&["encode", "--corpus", &corpus, "--kind", "mds", "--d", "4", "-o", path_str(&enc)]);
    assert_eq!(code(&out), 0);
    let from_file = csv_rows(&stdout(&posenc(&["stress", "--corpus", &corpus, "--encoding", path_str(&enc), "--csv", "-"])));
    let direct = csv_rows(&stdout(&posenc(&["stress", "--corpus", &corpus, "--kind", "mds", "--d", "4", "--csv", "-"])));
    assert_eq!(from_file[0].1, direct[0].1);

    let out = posenc(&["compare", "--corpus", &corpus, "--d", "4", "--encoding", path_str(&enc), "--csv", "-"]);
    assert_eq!(code(&out), 0);
    let rows = csv_rows(&stdout(&out));
    assert_eq!(rows.iter().filter(|(n, _)| n.starts_with("stress:")).count(), 6);

    let out = posenc(&["monotonicity", "--kind", "random", "--n", "40", "--d", "8", "--csv", "-"]);
    assert_eq!(code(&out), 0);
    let rows = csv_rows(&stdout(&out));
    assert!((rows[0].1 - 0.5).abs() < 0.1);
    let alibi = csv_rows(&stdout(&posenc(&["monotonicity", "--kind", "alibi", "--n", "20", "--csv", "-"])));
    assert_eq!(alibi[0].1, 0.0);
}

#[test]
fn ntk_reports_the_bound() {
    let dir = TempDir::new().unwrap();
    let dump = dir.path().join("dump");
    let out = posenc(&["ntk", "--line", "12", "--dump", path_str(&dump)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "lambda_min C_b L_f f_sup R C max_ratio violations");
    let fields: Vec<f64> = lines.next().unwrap().split_whitespace().map(|f| f.parse().unwrap()).collect();
    assert_eq!(fields.len(), 8);
    assert!(fields[6] <= fields[5], "max_ratio {} above C {}", fields[6], fields[5]);
    for f in ["alpha.txt", "b.txt", "p_star.txt", "summary.txt"] {
        assert!(dump.join(f).exists());
    }
    assert_eq!(posenc::matrix_io::load_matrix(dump.join("p_star.txt")).unwrap().dim(), (12, 2));
}

#[test]
fn ntk_without_ridge_on_clustered_corpus_exits_4() {
    let dir = TempDir::new().unwrap();
    let corpus = synth(&dir, "c.txt", &["--n", "9", "--v", "30", "--count", "2000"]);
    let out = posenc(&["ntk", "--corpus", &corpus, "--ridge", "0"]);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda_min"));
    assert_eq!(code(&posenc(&["ntk", "--corpus", &corpus])), 0);
}
