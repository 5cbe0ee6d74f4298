//! Plain-text matrix files shared by every subcommand.
//!
//! The first line is `<rows> <cols>`; each following line holds one row of
//! space-separated decimals written with 17 significant digits, which is
//! enough for an exact `f64` round trip. Blank lines are ignored.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::{Error, Result};

pub fn write_matrix<W: Write>(mut out: W, matrix: &Array2<f64>) -> Result<()> {
    writeln!(out, "{} {}", matrix.nrows(), matrix.ncols())?;
    for row in matrix.rows() {
        let mut first = true;
        for value in row {
            if !first {
                out.write_all(b" ")?;
            }
            write!(out, "{value:.16e}")?;
            first = false;
        }
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_matrix<R: Read>(input: R) -> Result<Array2<f64>> {
    let reader = BufReader::new(input);
    let mut lines = reader
        .lines()
        .enumerate()
        .map(|(i, line)| line.map(|l| (i + 1, l)))
        .filter(|res| res.as_ref().map_or(true, |(_, l)| !l.trim().is_empty()));

    let (line_no, header) = lines.next().ok_or(Error::EmptyInput)??;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|tok| tok.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse {
            line: line_no,
            message: format!("bad header: {e}"),
        })?;
    let [rows, cols] = dims[..] else {
        return Err(Error::Parse {
            line: line_no,
            message: "header must be `<rows> <cols>`".into(),
        });
    };

    let mut data = Vec::with_capacity(rows * cols);
    let mut seen_rows = 0;
    for entry in lines {
        let (line_no, line) = entry?;
        let before = data.len();
        for tok in line.split_whitespace() {
            let value: f64 = tok.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("not a number: {tok:?}"),
            })?;
            if !value.is_finite() {
                return Err(Error::NonFinite);
            }
            data.push(value);
        }
        if data.len() - before != cols {
            return Err(Error::RaggedRows {
                line: line_no,
                expected: cols,
                found: data.len() - before,
            });
        }
        seen_rows += 1;
    }
    if seen_rows != rows {
        return Err(Error::DimensionMismatch(format!(
            "header declares {rows} rows, file has {seen_rows}"
        )));
    }
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::DimensionMismatch(e.to_string()))
}

pub fn save_matrix(path: impl AsRef<Path>, matrix: &Array2<f64>) -> Result<()> {
    write_matrix(BufWriter::new(File::create(path)?), matrix)
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    read_matrix(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip_is_bit_exact() {
        let m = array![[0.1, -1.0 / 3.0, 1e-300], [std::f64::consts::PI, 0.0, -7.5e12]];
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        let back = read_matrix(&buf[..]).unwrap();
        for (a, b) in m.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn one_by_one() {
        let m = read_matrix("1 1\n2.5\n".as_bytes()).unwrap();
        assert_eq!(m.dim(), (1, 1));
        assert_eq!(m[[0, 0]], 2.5);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(read_matrix("".as_bytes()), Err(Error::EmptyInput)));
        assert!(matches!(
            read_matrix("2 2\n1 2\n3\n".as_bytes()),
            Err(Error::RaggedRows { line: 3, .. })
        ));
        assert!(matches!(
            read_matrix("1 2\n1 x\n".as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(read_matrix("1 1\nNaN\n".as_bytes()), Err(Error::NonFinite)));
        assert!(matches!(
            read_matrix("3 1\n1\n2\n".as_bytes()),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
