use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
}

impl fmt::Display for Value {
    /// NULL renders as the empty string.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => Ok(()),
            Value::Integer(n) => write!(f, "{n}"),
            Value::Real(x) => write!(f, "{x}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}

impl From<i64> for Value {
    fn from(n: i64) -> Self {
        Value::Integer(n)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("row {row} has {found} values, expected {expected}")]
pub struct RaggedRow {
    pub row: usize,
    pub found: usize,
    pub expected: usize,
}

/// Columns plus rows, every row exactly as wide as the header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTable")]
pub struct ResultTable {
    columns: Vec<String>,
    rows: Vec<Vec<Value>>,
}

#[derive(Deserialize)]
struct RawTable {
    columns: Vec<String>,
    rows: Vec<Vec<Value>>,
}

impl TryFrom<RawTable> for ResultTable {
    type Error = RaggedRow;

    fn try_from(raw: RawTable) -> Result<Self, Self::Error> {
        ResultTable::new(raw.columns, raw.rows)
    }
}

impl ResultTable {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<Value>>) -> Result<Self, RaggedRow> {
        if let Some((row, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != columns.len()) {
            return Err(RaggedRow {
                row,
                found: r.len(),
                expected: columns.len(),
            });
        }
        Ok(Self { columns, rows })
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn single_value(&self) -> Option<&Value> {
        match (self.columns.len(), self.rows.as_slice()) {
            (1, [row]) => row.first(),
            _ => None,
        }
    }

    /// Plain-text rendering for the response stage. A single cell renders as
    /// its bare value; larger tables are column-aligned and cut after
    /// `max_rows` with a `+N more rows` footer.
    pub fn render_plain(&self, max_rows: usize) -> String {
        if let Some(value) = self.single_value() {
            return value.to_string();
        }
        let shown: Vec<Vec<String>> = self
            .rows
            .iter()
            .take(max_rows)
            .map(|row| row.iter().map(|v| v.to_string().replace('\n', " ")).collect())
            .collect();
        let mut widths: Vec<usize> = self.columns.iter().map(|c| c.chars().count()).collect();
        for row in &shown {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: &mut dyn Iterator<Item = &str>| -> String {
            cells
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join(" | ")
                .trim_end()
                .to_string()
        };
        let mut out = vec![line(&mut self.columns.iter().map(String::as_str))];
        out.push(
            widths
                .iter()
                .map(|w| "-".repeat(*w))
                .collect::<Vec<_>>()
                .join("-+-"),
        );
        for row in &shown {
            out.push(line(&mut row.iter().map(String::as_str)));
        }
        if self.rows.is_empty() {
            out.push("(no rows)".to_string());
        } else if self.rows.len() > max_rows {
            out.push(format!("+{} more rows", self.rows.len() - max_rows));
        }
        out.join("\n")
    }
}

/// CSV export: comma-delimited, `"`-quoted only when a value contains a
/// comma, quote, CR or LF (quotes doubled), LF line endings, UTF-8.
pub fn export_csv(table: &ResultTable) -> Vec<u8> {
    let mut out = String::new();
    write_record(&mut out, table.columns.iter().map(String::as_str));
    for row in &table.rows {
        let cells: Vec<String> = row.iter().map(Value::to_string).collect();
        write_record(&mut out, cells.iter().map(String::as_str));
    }
    out.into_bytes()
}

fn write_record<'a>(out: &mut String, fields: impl ExactSizeIterator<Item = &'a str>) {
    let single = fields.len() == 1;
    for (i, field) in fields.enumerate() {
        if i > 0 {
            out.push(',');
        }
        let needs_quotes = field.contains([',', '"', '\n', '\r']) || (single && field.is_empty());
        if needs_quotes {
            out.push('"');
            out.push_str(&field.replace('"', "\"\""));
            out.push('"');
        } else {
            out.push_str(field);
        }
    }
    out.push('\n');
}
