//! Reports as ordered `key = value` sections with optional tables.
//!
//! The text and structured renderings are produced from the same entries,
//! so every number shown to a reader is also in the machine-readable form.

use std::fmt::Write;

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub entries: Vec<(String, String)>,
    pub table: Option<Table>,
}

impl Section {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            entries: Vec::new(),
            table: None,
        }
    }

    pub fn entry(mut self, key: &str, value: impl ToString) -> Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn table(mut self, columns: &[&str], rows: Vec<Vec<String>>) -> Self {
        self.table = Some(Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows,
        });
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub command: String,
    pub sections: Vec<Section>,
}

impl Report {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            sections: Vec::new(),
        }
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn render_structured(&self) -> String {
        let mut out = format!("# dtctrl {}\n", self.command);
        for s in &self.sections {
            let _ = writeln!(out, "\n[{}]", s.name);
            for (k, v) in &s.entries {
                let _ = writeln!(out, "{k} = {v}");
            }
            if let Some(t) = &s.table {
                let _ = writeln!(out, "columns = {}", t.columns.join("; "));
                for (i, row) in t.rows.iter().enumerate() {
                    let _ = writeln!(out, "row.{} = {}", i + 1, row.join("; "));
                }
            }
        }
        out
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for s in &self.sections {
            let _ = writeln!(out, "{}", s.name);
            let width = s.entries.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
            for (k, v) in &s.entries {
                let _ = writeln!(out, "  {k:<width$}  {v}");
            }
            if let Some(t) = &s.table {
                let mut widths: Vec<usize> = t.columns.iter().map(String::len).collect();
                for row in &t.rows {
                    for (w, cell) in widths.iter_mut().zip(row) {
                        *w = (*w).max(cell.len());
                    }
                }
                let line = |cells: &[String]| {
                    let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
                    format!("  {}", padded.join("  ").trim_end())
                };
                let _ = writeln!(out, "{}", line(&t.columns));
                for row in &t.rows {
                    let _ = writeln!(out, "{}", line(row));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Shortest round-trip form for moderate magnitudes, exponent form otherwise.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 {
        "0".into()
    } else if (1e-4..1e6).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map_or_else(|| "none".into(), num)
}

pub fn vector(v: &DVector<f64>) -> String {
    slice(v.as_slice())
}

pub fn slice(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|&x| num(x)).collect();
    format!("[{}]", parts.join(", "))
}

/// Columns of `m` as a list of vectors.
pub fn columns(m: &DMatrix<f64>) -> String {
    let parts: Vec<String> = m.column_iter().map(|c| vector(&c.into_owned())).collect();
    format!("[{}]", parts.join(", "))
}
