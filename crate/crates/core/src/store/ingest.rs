//! CSV ingest: parse, label, upsert by EID.

use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::publication::{canonical_column, Publication, LABEL_COLUMN};
use super::StoreError;
use crate::label::ProgramLabel;

pub type LabelerError = Box<dyn std::error::Error + Send + Sync>;

/// Predicts a program for a publication that has no human label.
pub trait Labeler: Send + Sync {
    fn label(&self, publication: &Publication) -> Result<ProgramLabel, LabelerError>;
}

impl<F> Labeler for F
where
    F: Fn(&Publication) -> ProgramLabel + Send + Sync,
{
    fn label(&self, publication: &Publication) -> Result<ProgramLabel, LabelerError> {
        Ok(self(publication))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowIssue {
    /// 1-based line in the uploaded file.
    pub line: u64,
    pub message: String,
}

/// Outcome of one ingest.
///
/// `rows_with_ground_truth` counts rows whose stored label is human-provided
/// after the ingest (from the file, or kept from an earlier ingest or user
/// correction); `rows_predicted` counts the rest.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_inserted: usize,
    pub rows_updated: usize,
    pub rows_predicted: usize,
    pub rows_with_ground_truth: usize,
    pub errors: Vec<RowIssue>,
    pub warnings: Vec<RowIssue>,
}

impl IngestReport {
    pub fn summary(&self) -> String {
        let mut out = format!(
            "Read {} rows: {} inserted, {} updated, {} skipped. \
             {} rows carry a ground-truth or corrected program; {} programs were predicted.",
            self.rows_read,
            self.rows_inserted,
            self.rows_updated,
            self.errors.len(),
            self.rows_with_ground_truth,
            self.rows_predicted,
        );
        if !self.errors.is_empty() {
            let _ = write!(out, "\nErrors ({}):", self.errors.len());
            for issue in self.errors.iter().take(20) {
                let _ = write!(out, "\n- line {}: {}", issue.line, issue.message);
            }
        }
        if !self.warnings.is_empty() {
            let _ = write!(out, "\nWarnings ({}):", self.warnings.len());
            for issue in self.warnings.iter().take(20) {
                let _ = write!(out, "\n- line {}: {}", issue.line, issue.message);
            }
        }
        out
    }
}

pub(crate) struct ParsedRow {
    pub line: u64,
    pub publication: Publication,
    pub ground_truth: Option<ProgramLabel>,
}

pub(crate) struct ParsedCsv {
    pub rows: Vec<ParsedRow>,
    pub rows_read: usize,
    pub errors: Vec<RowIssue>,
    pub warnings: Vec<RowIssue>,
}

enum Target {
    Attribute(&'static str),
    Program,
    Ignored,
}

pub(crate) fn parse_csv(data: impl Read) -> Result<ParsedCsv, StoreError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(data);
    let headers = reader
        .byte_headers()
        .map_err(|e| StoreError::Exec(format!("unreadable CSV header: {e}")))?
        .clone();
    if headers.iter().all(|h| h.iter().all(u8::is_ascii_whitespace)) {
        return Err(StoreError::EmptyInput);
    }

    let mut warnings = Vec::new();
    let mut targets = Vec::with_capacity(headers.len());
    let mut seen = Vec::new();
    for raw in headers.iter() {
        let name = String::from_utf8_lossy(raw);
        let target = match canonical_column(&name) {
            Some(column) if seen.contains(&column) => {
                warnings.push(RowIssue {
                    line: 1,
                    message: format!("duplicate column {name:?} ignored"),
                });
                Target::Ignored
            }
            Some(column) => {
                seen.push(column);
                if column == LABEL_COLUMN {
                    Target::Program
                } else {
                    Target::Attribute(column)
                }
            }
            None => {
                warnings.push(RowIssue {
                    line: 1,
                    message: format!("unknown column {name:?} ignored"),
                });
                Target::Ignored
            }
        };
        targets.push(target);
    }
    let missing: Vec<String> = ["eid", "title"]
        .into_iter()
        .filter(|c| !seen.contains(c))
        .map(String::from)
        .collect();
    if !missing.is_empty() {
        return Err(StoreError::HeaderMissingRequired(missing));
    }

    let mut rows = Vec::new();
    let mut errors = Vec::new();
    let mut rows_read = 0;
    let mut record = csv::ByteRecord::new();
    loop {
        let line = reader.position().line();
        match reader.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                rows_read += 1;
                let line = e.position().map_or(line, |p| p.line());
                errors.push(RowIssue {
                    line,
                    message: format!("malformed CSV record: {e}"),
                });
                continue;
            }
        }
        rows_read += 1;
        let line = record.position().map_or(line, |p| p.line());
        match parse_record(&record, &targets, line, &mut warnings) {
            Ok(row) => rows.push(row),
            Err(message) => errors.push(RowIssue { line, message }),
        }
    }
    Ok(ParsedCsv {
        rows,
        rows_read,
        errors,
        warnings,
    })
}

fn parse_record(
    record: &csv::ByteRecord,
    targets: &[Target],
    line: u64,
    warnings: &mut Vec<RowIssue>,
) -> Result<ParsedRow, String> {
    if record.len() != targets.len() {
        return Err(format!(
            "expected {} fields, found {}",
            targets.len(),
            record.len()
        ));
    }
    let mut publication = Publication::new("", "");
    let mut ground_truth = None;
    for (raw, target) in record.iter().zip(targets) {
        let value = std::str::from_utf8(raw).map_err(|_| "invalid UTF-8 in field".to_string())?;
        match target {
            Target::Attribute(column) => publication.set_attribute(column, value)?,
            Target::Program => {
                let value = value.trim();
                if value.is_empty() {
                    continue;
                }
                match value.parse::<ProgramLabel>() {
                    Ok(label) => ground_truth = Some(label),
                    Err(_) => warnings.push(RowIssue {
                        line,
                        message: format!("unknown program {value:?}; label will be predicted"),
                    }),
                }
            }
            Target::Ignored => {}
        }
    }
    if publication.eid.is_empty() {
        return Err("eid is empty".to_string());
    }
    if publication.title.is_empty() {
        return Err("title is empty".to_string());
    }
    Ok(ParsedRow {
        line,
        publication,
        ground_truth,
    })
}
