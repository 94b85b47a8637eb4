use serde::{Deserialize, Serialize};

use crate::label::{LabelSource, ProgramLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnType {
    Text,
    Integer,
}

impl ColumnType {
    pub fn sql(self) -> &'static str {
        match self {
            ColumnType::Text => "TEXT",
            ColumnType::Integer => "INTEGER",
        }
    }
}

/// The twenty publication attributes, in storage order.
pub const ATTRIBUTE_COLUMNS: [(&str, ColumnType); 20] = [
    ("eid", ColumnType::Text),
    ("title", ColumnType::Text),
    ("year", ColumnType::Integer),
    ("authors", ColumnType::Text),
    ("authors_with_affil", ColumnType::Text),
    ("affiliations", ColumnType::Text),
    ("author_keywords", ColumnType::Text),
    ("index_keywords", ColumnType::Text),
    ("source_title", ColumnType::Text),
    ("doi", ColumnType::Text),
    ("abstract", ColumnType::Text),
    ("document_type", ColumnType::Text),
    ("publisher", ColumnType::Text),
    ("volume", ColumnType::Text),
    ("issue", ColumnType::Text),
    ("page_range", ColumnType::Text),
    ("cited_by", ColumnType::Integer),
    ("language", ColumnType::Text),
    ("open_access", ColumnType::Text),
    ("link", ColumnType::Text),
];

pub const LABEL_COLUMN: &str = "prog";
pub const LABEL_SOURCE_COLUMN: &str = "prog_source";

/// One stored publication record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Publication {
    pub eid: String,
    pub title: String,
    pub year: Option<i64>,
    pub authors: Option<String>,
    pub authors_with_affil: Option<String>,
    pub affiliations: Option<String>,
    pub author_keywords: Option<String>,
    pub index_keywords: Option<String>,
    pub source_title: Option<String>,
    pub doi: Option<String>,
    #[serde(rename = "abstract")]
    pub abstract_text: Option<String>,
    pub document_type: Option<String>,
    pub publisher: Option<String>,
    pub volume: Option<String>,
    pub issue: Option<String>,
    pub page_range: Option<String>,
    pub cited_by: Option<i64>,
    pub language: Option<String>,
    pub open_access: Option<String>,
    pub link: Option<String>,
    pub prog: ProgramLabel,
    pub prog_source: LabelSource,
}

/// A cell value as it is bound to / read from the `pub` table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Cell {
    Text(Option<String>),
    Integer(Option<i64>),
}

impl Publication {
    pub fn new(eid: impl Into<String>, title: impl Into<String>) -> Self {
        Self {
            eid: eid.into(),
            title: title.into(),
            year: None,
            authors: None,
            authors_with_affil: None,
            affiliations: None,
            author_keywords: None,
            index_keywords: None,
            source_title: None,
            doi: None,
            abstract_text: None,
            document_type: None,
            publisher: None,
            volume: None,
            issue: None,
            page_range: None,
            cited_by: None,
            language: None,
            open_access: None,
            link: None,
            prog: ProgramLabel::NoProgram,
            prog_source: LabelSource::Predicted,
        }
    }

    /// Text value of an attribute column; integer columns are formatted.
    pub fn attribute(&self, column: &str) -> Option<String> {
        match self.cell(column)? {
            Cell::Text(v) => v,
            Cell::Integer(v) => v.map(|n| n.to_string()),
        }
    }

    pub(crate) fn cell(&self, column: &str) -> Option<Cell> {
        let text = |v: &Option<String>| Some(Cell::Text(v.clone()));
        match column {
            "eid" => Some(Cell::Text(Some(self.eid.clone()))),
            "title" => Some(Cell::Text(Some(self.title.clone()))),
            "year" => Some(Cell::Integer(self.year)),
            "authors" => text(&self.authors),
            "authors_with_affil" => text(&self.authors_with_affil),
            "affiliations" => text(&self.affiliations),
            "author_keywords" => text(&self.author_keywords),
            "index_keywords" => text(&self.index_keywords),
            "source_title" => text(&self.source_title),
            "doi" => text(&self.doi),
            "abstract" => text(&self.abstract_text),
            "document_type" => text(&self.document_type),
            "publisher" => text(&self.publisher),
            "volume" => text(&self.volume),
            "issue" => text(&self.issue),
            "page_range" => text(&self.page_range),
            "cited_by" => Some(Cell::Integer(self.cited_by)),
            "language" => text(&self.language),
            "open_access" => text(&self.open_access),
            "link" => text(&self.link),
            _ => None,
        }
    }

    /// Sets an attribute from raw CSV text. Empty text means NULL.
    pub(crate) fn set_attribute(&mut self, column: &str, raw: &str) -> Result<(), String> {
        let value = raw.trim();
        let text = || (!value.is_empty()).then(|| value.to_string());
        let integer = || -> Result<Option<i64>, String> {
            if value.is_empty() {
                return Ok(None);
            }
            value
                .parse::<i64>()
                .map(Some)
                .map_err(|_| format!("{column} must be an integer, got {value:?}"))
        };
        match column {
            "eid" => self.eid = value.to_string(),
            "title" => self.title = value.to_string(),
            "year" => self.year = integer()?,
            "authors" => self.authors = text(),
            "authors_with_affil" => self.authors_with_affil = text(),
            "affiliations" => self.affiliations = text(),
            "author_keywords" => self.author_keywords = text(),
            "index_keywords" => self.index_keywords = text(),
            "source_title" => self.source_title = text(),
            "doi" => self.doi = text(),
            "abstract" => self.abstract_text = text(),
            "document_type" => self.document_type = text(),
            "publisher" => self.publisher = text(),
            "volume" => self.volume = text(),
            "issue" => self.issue = text(),
            "page_range" => self.page_range = text(),
            "cited_by" => self.cited_by = integer()?,
            "language" => self.language = text(),
            "open_access" => self.open_access = text(),
            "link" => self.link = text(),
            other => return Err(format!("unknown column {other}")),
        }
        Ok(())
    }
}

/// Maps a CSV header to a storage column. Accepts the snake_case names and
/// the common Scopus export spellings.
pub(crate) fn canonical_column(header: &str) -> Option<&'static str> {
    let mut normalized = String::new();
    for c in header.trim().trim_start_matches('\u{feff}').chars() {
        if c.is_alphanumeric() {
            normalized.extend(c.to_lowercase());
        } else if !normalized.ends_with('_') {
            normalized.push('_');
        }
    }
    let normalized = normalized.trim_matches('_');
    let aliased = match normalized {
        "author_s" | "author" => "authors",
        "authors_with_affiliations" | "author_with_affiliations" => "authors_with_affil",
        "source" => "source_title",
        "language_of_original_document" => "language",
        "open_access_status" => "open_access",
        "cited" | "citations" => "cited_by",
        "pages" => "page_range",
        "program" | "challenge_program" => LABEL_COLUMN,
        other => other,
    };
    ATTRIBUTE_COLUMNS
        .iter()
        .map(|(name, _)| *name)
        .chain([LABEL_COLUMN])
        .find(|name| *name == aliased)
}
