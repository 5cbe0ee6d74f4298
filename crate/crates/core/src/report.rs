//! Metric tables shared by the command-line front end: a human-readable
//! layout and a CSV mirror with one `name,value,metadata` row per metric.
//! Both print values with 12 significant digits.

use std::fmt::Write as _;
use std::io::{self, Write};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub name: String,
    pub value: f64,
    pub metadata: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub title: String,
    pub rows: Vec<MetricRow>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    sections: Vec<Section>,
}

pub fn format_value(value: f64) -> String {
    if value.is_finite() {
        format!("{value:.11e}")
    } else {
        format!("{value}")
    }
}

fn csv_field(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn section(&mut self, title: impl Into<String>) -> &mut Section {
        self.sections.push(Section {
            title: title.into(),
            rows: Vec::new(),
        });
        self.sections.last_mut().expect("just pushed")
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    pub fn rows(&self) -> impl Iterator<Item = &MetricRow> {
        self.sections.iter().flat_map(|s| &s.rows)
    }

    pub fn find(&self, name: &str) -> Option<&MetricRow> {
        self.rows().find(|r| r.name == name)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for (idx, section) in self.sections.iter().enumerate() {
            if idx > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "== {} ==", section.title);
            let name_w = section.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(6);
            let values: Vec<String> = section.rows.iter().map(|r| format_value(r.value)).collect();
            let value_w = values.iter().map(String::len).max().unwrap_or(0).max(5);
            for (row, value) in section.rows.iter().zip(&values) {
                let line = format!("{:<name_w$}  {:>value_w$}  {}", row.name, value, row.metadata);
                let _ = writeln!(out, "{}", line.trim_end());
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "name,value,metadata")?;
        for row in self.rows() {
            writeln!(
                out,
                "{},{},{}",
                csv_field(&row.name),
                format_value(row.value),
                csv_field(&row.metadata)
            )?;
        }
        out.flush()
    }
}

impl Section {
    pub fn push(&mut self, name: impl Into<String>, value: f64, metadata: impl Into<String>) -> &mut Self {
        self.rows.push(MetricRow {
            name: name.into(),
            value,
            metadata: metadata.into(),
        });
        self
    }
}
