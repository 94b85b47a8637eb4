//! Embedded SQLite persistence.
//!
//! One database file holds the `pub` table (publications plus their program
//! label and its provenance) and the chat session tables. All writes go
//! through a single writer connection; file-backed stores serve reads from a
//! pool of read-only connections.

mod ingest;
mod publication;
mod table;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};
use std::time::Duration;

use rusqlite::types::ValueRef;
use rusqlite::{params, Connection, OpenFlags, OptionalExtension};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::label::{LabelSource, ProgramLabel};
use crate::sql_guard::{SqlPlan, StatementKind};

pub use ingest::{IngestReport, Labeler, LabelerError, RowIssue};
pub use publication::{ColumnType, Publication, ATTRIBUTE_COLUMNS, LABEL_COLUMN, LABEL_SOURCE_COLUMN};
pub use table::{export_csv, RaggedRow, ResultTable, Value};

use publication::Cell;

const EXAMPLE_ROWS: usize = 2;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("EMPTY_INPUT: the CSV has no header row")]
    EmptyInput,
    #[error("HEADER_MISSING_REQUIRED: missing column(s) {}", .0.join(", "))]
    HeaderMissingRequired(Vec<String>),
    #[error("EXEC_ERROR: {0}")]
    Exec(String),
    #[error("INVALID_LABEL: {0:?} is not a challenge program")]
    InvalidLabel(String),
    #[error("SESSION_NOT_FOUND: {0}")]
    SessionNotFound(String),
    #[error("STORE_CORRUPT: {0}")]
    Corrupt(String),
    #[error("STORE_UNAVAILABLE: {0}")]
    Unavailable(#[from] rusqlite::Error),
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::EmptyInput => "EMPTY_INPUT",
            StoreError::HeaderMissingRequired(_) => "HEADER_MISSING_REQUIRED",
            StoreError::Exec(_) => "EXEC_ERROR",
            StoreError::InvalidLabel(_) => "INVALID_LABEL",
            StoreError::SessionNotFound(_) => "SESSION_NOT_FOUND",
            StoreError::Corrupt(_) => "STORE_CORRUPT",
            StoreError::Unavailable(_) => "STORE_UNAVAILABLE",
        }
    }
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

struct ReaderPool {
    path: PathBuf,
    idle: Mutex<Vec<Connection>>,
}

pub struct Store {
    writer: Mutex<Connection>,
    readers: Option<ReaderPool>,
}

fn lock<T>(mutex: &Mutex<T>) -> MutexGuard<'_, T> {
    mutex.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn quote_literal(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

fn schema_sql() -> String {
    let mut columns = String::new();
    for (name, kind) in ATTRIBUTE_COLUMNS {
        let constraint = match name {
            "eid" => " PRIMARY KEY NOT NULL CHECK (length(eid) > 0)",
            "title" => " NOT NULL",
            _ => "",
        };
        let _ = writeln!(columns, "    {name} {}{constraint},", kind.sql());
    }
    let labels: Vec<String> = ProgramLabel::ALL.iter().map(|l| quote_literal(l.as_str())).collect();
    let sources: Vec<String> = LabelSource::ALL.iter().map(|s| quote_literal(s.as_str())).collect();
    format!(
        "CREATE TABLE IF NOT EXISTS pub (\n{columns}    \
         prog TEXT NOT NULL CHECK (prog IN ({})),\n    \
         prog_source TEXT NOT NULL CHECK (prog_source IN ({}))\n);\n\
         CREATE TABLE IF NOT EXISTS session (\n    \
         id TEXT PRIMARY KEY NOT NULL,\n    \
         created_at TEXT NOT NULL,\n    \
         last_result TEXT\n);\n\
         CREATE TABLE IF NOT EXISTS turn (\n    \
         session_id TEXT NOT NULL REFERENCES session(id),\n    \
         seq INTEGER NOT NULL,\n    \
         body TEXT NOT NULL,\n    \
         PRIMARY KEY (session_id, seq)\n);",
        labels.join(", "),
        sources.join(", ")
    )
}

fn all_columns() -> impl Iterator<Item = &'static str> {
    ATTRIBUTE_COLUMNS
        .iter()
        .map(|(name, _)| *name)
        .chain([LABEL_COLUMN, LABEL_SOURCE_COLUMN])
}

fn read_value(value: ValueRef<'_>) -> Value {
    match value {
        ValueRef::Null => Value::Null,
        ValueRef::Integer(n) => Value::Integer(n),
        ValueRef::Real(x) => Value::Real(x),
        ValueRef::Text(t) => Value::Text(String::from_utf8_lossy(t).into_owned()),
        ValueRef::Blob(b) => Value::Text(hex::encode(b)),
    }
}

impl Store {
    /// Opens (creating if needed) the database file at `path`.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let writer = Connection::open(&path)?;
        writer.busy_timeout(Duration::from_secs(5))?;
        writer.pragma_update(None, "journal_mode", "WAL")?;
        writer.pragma_update(None, "foreign_keys", true)?;
        writer.execute_batch(&schema_sql())?;
        Ok(Self {
            writer: Mutex::new(writer),
            readers: Some(ReaderPool {
                path,
                idle: Mutex::new(Vec::new()),
            }),
        })
    }

    /// A private in-memory database; reads share the writer connection.
    pub fn open_in_memory() -> Result<Self> {
        let writer = Connection::open_in_memory()?;
        writer.pragma_update(None, "foreign_keys", true)?;
        writer.execute_batch(&schema_sql())?;
        Ok(Self {
            writer: Mutex::new(writer),
            readers: None,
        })
    }

    fn with_reader<T>(&self, f: impl FnOnce(&Connection) -> Result<T>) -> Result<T> {
        let Some(pool) = &self.readers else {
            return f(&lock(&self.writer));
        };
        let conn = match lock(&pool.idle).pop() {
            Some(conn) => conn,
            None => {
                let conn = Connection::open_with_flags(
                    &pool.path,
                    OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
                )?;
                conn.busy_timeout(Duration::from_secs(5))?;
                conn
            }
        };
        let result = f(&conn);
        lock(&pool.idle).push(conn);
        result
    }

    // -- publications -------------------------------------------------------

    /// Upserts every valid row by EID. Rows with a valid program are stored
    /// as ground truth; other rows are labelled by `labeler` (or get
    /// `No Program`) unless a human label is already stored.
    pub fn ingest_csv(&self, data: impl Read, labeler: Option<&dyn Labeler>) -> Result<IngestReport> {
        let parsed = ingest::parse_csv(data)?;
        let mut report = IngestReport {
            rows_read: parsed.rows_read,
            errors: parsed.errors,
            warnings: parsed.warnings,
            ..IngestReport::default()
        };

        // Predict outside the writer lock; the write pass re-checks sources.
        let eids: Vec<&str> = parsed.rows.iter().map(|r| r.publication.eid.as_str()).collect();
        let existing = self.label_sources(&eids)?;
        let mut predictions: HashMap<usize, ProgramLabel> = HashMap::new();
        for (i, row) in parsed.rows.iter().enumerate() {
            let has_human = existing
                .get(row.publication.eid.as_str())
                .is_some_and(|src| src.is_human());
            if row.ground_truth.is_some() || has_human {
                continue;
            }
            let label = match labeler {
                Some(labeler) => labeler.label(&row.publication).unwrap_or_else(|e| {
                    report.warnings.push(RowIssue {
                        line: row.line,
                        message: format!("prediction failed ({e}); stored as No Program"),
                    });
                    ProgramLabel::NoProgram
                }),
                None => ProgramLabel::NoProgram,
            };
            predictions.insert(i, label);
        }

        let mut writer = lock(&self.writer);
        let tx = writer.transaction()?;
        {
            let mut lookup = tx.prepare_cached("SELECT prog, prog_source FROM pub WHERE eid = ?1")?;
            let mut upsert = tx.prepare_cached(&upsert_sql())?;
            for (i, row) in parsed.rows.iter().enumerate() {
                let stored: Option<(String, String)> = lookup
                    .query_row([&row.publication.eid], |r| Ok((r.get(0)?, r.get(1)?)))
                    .optional()?;
                let stored = stored
                    .map(|(prog, source)| parse_label_pair(&prog, &source))
                    .transpose()?;
                let (prog, source) = match (row.ground_truth, stored) {
                    (_, Some((prog, LabelSource::UserCorrected))) => (prog, LabelSource::UserCorrected),
                    (Some(truth), _) => (truth, LabelSource::GroundTruth),
                    (None, Some((prog, LabelSource::GroundTruth))) => (prog, LabelSource::GroundTruth),
                    (None, _) => {
                        let predicted = predictions.get(&i).copied().unwrap_or(ProgramLabel::NoProgram);
                        (predicted, LabelSource::Predicted)
                    }
                };
                let mut publication = row.publication.clone();
                publication.prog = prog;
                publication.prog_source = source;
                upsert.execute(rusqlite::params_from_iter(bind_values(&publication)))?;
                if stored.is_some() {
                    report.rows_updated += 1;
                } else {
                    report.rows_inserted += 1;
                }
                if source.is_human() {
                    report.rows_with_ground_truth += 1;
                } else {
                    report.rows_predicted += 1;
                }
            }
        }
        tx.commit()?;
        Ok(report)
    }

    fn label_sources<'a>(&self, eids: &[&'a str]) -> Result<HashMap<&'a str, LabelSource>> {
        self.with_reader(|conn| {
            let mut stmt = conn.prepare_cached("SELECT prog_source FROM pub WHERE eid = ?1")?;
            let mut out = HashMap::new();
            for eid in eids {
                let source: Option<String> = stmt.query_row([eid], |r| r.get(0)).optional()?;
                if let Some(source) = source {
                    let source = source.parse().map_err(StoreError::Corrupt)?;
                    out.insert(*eid, source);
                }
            }
            Ok(out)
        })
    }

    /// Runs a validated SELECT. Never modifies the store.
    pub fn execute_select(&self, plan: &SqlPlan) -> Result<ResultTable> {
        if plan.kind() != StatementKind::Select {
            return Err(StoreError::Exec("plan is not a SELECT".into()));
        }
        self.with_reader(|conn| {
            let mut stmt = conn
                .prepare(plan.statement())
                .map_err(|e| StoreError::Exec(e.to_string()))?;
            if !stmt.readonly() {
                return Err(StoreError::Exec("statement is not read-only".into()));
            }
            let columns: Vec<String> = stmt.column_names().into_iter().map(String::from).collect();
            let width = columns.len();
            let mut rows = Vec::new();
            let mut cursor = stmt.query([]).map_err(|e| StoreError::Exec(e.to_string()))?;
            while let Some(row) = cursor.next().map_err(|e| StoreError::Exec(e.to_string()))? {
                let mut values = Vec::with_capacity(width);
                for i in 0..width {
                    values.push(read_value(row.get_ref(i)?));
                }
                rows.push(values);
            }
            ResultTable::new(columns, rows).map_err(|e| StoreError::Exec(e.to_string()))
        })
    }

    /// Applies a validated `UPDATE pub SET prog = ...`, marking the affected
    /// rows as user-corrected. Returns the number of matched rows.
    pub fn execute_update(&self, plan: &SqlPlan) -> Result<usize> {
        let sql = update_sql(plan)?;
        let writer = lock(&self.writer);
        writer
            .execute(&sql, [plan_label(plan)?.as_str()])
            .map_err(|e| StoreError::Exec(e.to_string()))
    }

    /// Row count an UPDATE would affect, computed inside a rolled-back
    /// transaction.
    pub fn preview_update(&self, plan: &SqlPlan) -> Result<usize> {
        let sql = update_sql(plan)?;
        let mut writer = lock(&self.writer);
        let tx = writer.transaction()?;
        let affected = tx
            .execute(&sql, [plan_label(plan)?.as_str()])
            .map_err(|e| StoreError::Exec(e.to_string()));
        tx.rollback()?;
        affected
    }

    pub fn export_csv(&self, table: &ResultTable) -> Vec<u8> {
        export_csv(table)
    }

    /// Deterministic description of `pub` for the text-to-SQL prompt.
    pub fn schema_description(&self) -> Result<String> {
        let examples = self.with_reader(|conn| {
            let mut stmt = conn.prepare(&format!(
                "SELECT eid, title, year, authors_with_affil, prog FROM pub ORDER BY eid LIMIT {EXAMPLE_ROWS}"
            ))?;
            let rows = stmt.query_map([], |r| {
                (0..5)
                    .map(|i| r.get_ref(i).map(read_value))
                    .collect::<rusqlite::Result<Vec<Value>>>()
            })?;
            Ok(rows.collect::<rusqlite::Result<Vec<_>>>()?)
        })?;

        let mut out = String::from("Table pub: one row per publication, keyed by eid.\nColumns:\n");
        for (name, kind) in ATTRIBUTE_COLUMNS {
            let note = match name {
                "eid" => " -- Scopus EID, unique",
                "authors_with_affil" => " -- authors with their affiliations",
                "cited_by" => " -- citation count",
                _ => "",
            };
            let _ = writeln!(out, "  {name} {}{note}", kind.sql());
        }
        let _ = writeln!(out, "  {LABEL_COLUMN} TEXT -- challenge program, one of the values below");
        let _ = writeln!(
            out,
            "  {LABEL_SOURCE_COLUMN} TEXT -- GROUND_TRUTH, PREDICTED or USER_CORRECTED"
        );
        out.push_str("Valid prog values:\n");
        for label in ProgramLabel::ALL {
            let _ = writeln!(out, "  - {label}");
        }
        let _ = writeln!(out, "Example rows ({}):", examples.len());
        let names = ["eid", "title", "year", "authors_with_affil", "prog"];
        for row in &examples {
            let cells: Vec<String> = names
                .iter()
                .zip(row)
                .map(|(name, value)| match value {
                    Value::Text(s) => format!("{name}={}", quote_literal(&truncate(s, 80))),
                    other => format!("{name}={}", if *other == Value::Null { "NULL".into() } else { other.to_string() }),
                })
                .collect();
            let _ = writeln!(out, "  row: {}", cells.join("; "));
        }
        Ok(out)
    }

    pub fn publication_count(&self) -> Result<usize> {
        self.with_reader(|conn| {
            let n: i64 = conn.query_row("SELECT COUNT(*) FROM pub", [], |r| r.get(0))?;
            Ok(n as usize)
        })
    }

    /// All publications ordered by EID.
    pub fn publications(&self) -> Result<Vec<Publication>> {
        self.with_reader(|conn| {
            let columns: Vec<&str> = all_columns().collect();
            let mut stmt = conn.prepare(&format!("SELECT {} FROM pub ORDER BY eid", columns.join(", ")))?;
            let mut rows = stmt.query([])?;
            let mut out = Vec::new();
            while let Some(row) = rows.next()? {
                let mut publication = Publication::new("", "");
                for (i, (name, kind)) in ATTRIBUTE_COLUMNS.iter().enumerate() {
                    let raw = match (kind, row.get_ref(i)?) {
                        (_, ValueRef::Null) => String::new(),
                        (_, v) => read_value(v).to_string(),
                    };
                    publication
                        .set_attribute(name, &raw)
                        .map_err(StoreError::Corrupt)?;
                }
                let prog: String = row.get(ATTRIBUTE_COLUMNS.len())?;
                let source: String = row.get(ATTRIBUTE_COLUMNS.len() + 1)?;
                (publication.prog, publication.prog_source) = parse_label_pair(&prog, &source)?;
                out.push(publication);
            }
            Ok(out)
        })
    }

    /// Hash of every schema object definition.
    pub fn schema_fingerprint(&self) -> Result<String> {
        self.with_reader(|conn| {
            let mut stmt =
                conn.prepare("SELECT type, name, tbl_name, IFNULL(sql, '') FROM sqlite_master ORDER BY type, name")?;
            let mut hasher = Sha256::new();
            let mut rows = stmt.query([])?;
            while let Some(row) = rows.next()? {
                for i in 0..4 {
                    let s: String = row.get(i)?;
                    hasher.update(s.as_bytes());
                    hasher.update([0u8]);
                }
            }
            Ok(hex::encode(hasher.finalize()))
        })
    }

    /// Hash of the full `pub` dump. With `include_labels = false` the
    /// `prog`/`prog_source` columns are left out.
    pub fn content_fingerprint(&self, include_labels: bool) -> Result<String> {
        let columns: Vec<&str> = if include_labels {
            all_columns().collect()
        } else {
            ATTRIBUTE_COLUMNS.iter().map(|(n, _)| *n).collect()
        };
        self.with_reader(|conn| {
            let mut stmt = conn.prepare(&format!("SELECT {} FROM pub ORDER BY eid", columns.join(", ")))?;
            let mut hasher = Sha256::new();
            let mut rows = stmt.query([])?;
            while let Some(row) = rows.next()? {
                for i in 0..columns.len() {
                    match row.get_ref(i)? {
                        ValueRef::Null => hasher.update([0u8]),
                        v => {
                            hasher.update([1u8]);
                            hasher.update(read_value(v).to_string().as_bytes());
                        }
                    }
                    hasher.update([0x1f]);
                }
                hasher.update([0x1e]);
            }
            Ok(hex::encode(hasher.finalize()))
        })
    }

    // -- sessions -----------------------------------------------------------

    pub fn create_session(&self, id: &str, created_at: &str) -> Result<()> {
        lock(&self.writer).execute(
            "INSERT INTO session (id, created_at) VALUES (?1, ?2)",
            params![id, created_at],
        )?;
        Ok(())
    }

    /// `created_at` of a session, or `SESSION_NOT_FOUND`.
    pub fn session_created_at(&self, id: &str) -> Result<String> {
        self.with_reader(|conn| {
            conn.query_row("SELECT created_at FROM session WHERE id = ?1", [id], |r| r.get(0))
                .optional()?
                .ok_or_else(|| StoreError::SessionNotFound(id.to_string()))
        })
    }

    pub fn append_turn<T: Serialize>(&self, session_id: &str, turn: &T) -> Result<usize> {
        let body = serde_json::to_string(turn).map_err(|e| StoreError::Corrupt(e.to_string()))?;
        let mut writer = lock(&self.writer);
        let tx = writer.transaction()?;
        let exists: bool = tx
            .query_row("SELECT 1 FROM session WHERE id = ?1", [session_id], |_| Ok(true))
            .optional()?
            .unwrap_or(false);
        if !exists {
            return Err(StoreError::SessionNotFound(session_id.to_string()));
        }
        let seq: i64 = tx.query_row(
            "SELECT IFNULL(MAX(seq) + 1, 0) FROM turn WHERE session_id = ?1",
            [session_id],
            |r| r.get(0),
        )?;
        tx.execute(
            "INSERT INTO turn (session_id, seq, body) VALUES (?1, ?2, ?3)",
            params![session_id, seq, body],
        )?;
        tx.commit()?;
        Ok(seq as usize)
    }

    pub fn turns<T: DeserializeOwned>(&self, session_id: &str) -> Result<Vec<T>> {
        self.session_created_at(session_id)?;
        self.with_reader(|conn| {
            let mut stmt = conn.prepare("SELECT body FROM turn WHERE session_id = ?1 ORDER BY seq")?;
            let bodies = stmt
                .query_map([session_id], |r| r.get::<_, String>(0))?
                .collect::<rusqlite::Result<Vec<_>>>()?;
            bodies
                .iter()
                .map(|b| serde_json::from_str(b).map_err(|e| StoreError::Corrupt(e.to_string())))
                .collect()
        })
    }

    pub fn set_last_result(&self, session_id: &str, table: &ResultTable) -> Result<()> {
        let body = serde_json::to_string(table).map_err(|e| StoreError::Corrupt(e.to_string()))?;
        let changed = lock(&self.writer).execute(
            "UPDATE session SET last_result = ?2 WHERE id = ?1",
            params![session_id, body],
        )?;
        if changed == 0 {
            return Err(StoreError::SessionNotFound(session_id.to_string()));
        }
        Ok(())
    }

    pub fn last_result(&self, session_id: &str) -> Result<Option<ResultTable>> {
        self.with_reader(|conn| {
            let body: Option<Option<String>> = conn
                .query_row("SELECT last_result FROM session WHERE id = ?1", [session_id], |r| r.get(0))
                .optional()?;
            match body {
                None => Err(StoreError::SessionNotFound(session_id.to_string())),
                Some(None) => Ok(None),
                Some(Some(json)) => serde_json::from_str(&json)
                    .map(Some)
                    .map_err(|e| StoreError::Corrupt(e.to_string())),
            }
        })
    }
}

fn truncate(s: &str, max_chars: usize) -> String {
    let flat = s.replace(['\n', '\r'], " ");
    match flat.char_indices().nth(max_chars) {
        Some((cut, _)) => format!("{}...", &flat[..cut]),
        None => flat,
    }
}

fn parse_label_pair(prog: &str, source: &str) -> Result<(ProgramLabel, LabelSource)> {
    let prog = prog
        .parse()
        .map_err(|_| StoreError::Corrupt(format!("stored program {prog:?} is not a label")))?;
    let source = source.parse().map_err(StoreError::Corrupt)?;
    Ok((prog, source))
}

fn upsert_sql() -> String {
    let columns: Vec<&str> = all_columns().collect();
    let placeholders: Vec<String> = (1..=columns.len()).map(|i| format!("?{i}")).collect();
    let updates: Vec<String> = columns
        .iter()
        .skip(1)
        .map(|c| format!("{c} = excluded.{c}"))
        .collect();
    format!(
        "INSERT INTO pub ({}) VALUES ({}) ON CONFLICT(eid) DO UPDATE SET {}",
        columns.join(", "),
        placeholders.join(", "),
        updates.join(", ")
    )
}

fn bind_values(publication: &Publication) -> Vec<rusqlite::types::Value> {
    use rusqlite::types::Value as Sql;
    let mut values: Vec<Sql> = ATTRIBUTE_COLUMNS
        .iter()
        .map(|(name, _)| match publication.cell(name) {
            Some(Cell::Text(Some(s))) => Sql::Text(s),
            Some(Cell::Integer(Some(n))) => Sql::Integer(n),
            _ => Sql::Null,
        })
        .collect();
    values.push(Sql::Text(publication.prog.as_str().to_string()));
    values.push(Sql::Text(publication.prog_source.as_str().to_string()));
    values
}

fn plan_label(plan: &SqlPlan) -> Result<ProgramLabel> {
    plan.new_prog_value()
        .ok_or_else(|| StoreError::InvalidLabel("missing program value".into()))
}

fn update_sql(plan: &SqlPlan) -> Result<String> {
    if plan.kind() != StatementKind::Update {
        return Err(StoreError::Exec("plan is not an UPDATE".into()));
    }
    plan_label(plan)?;
    let filter = plan
        .update_filter()
        .ok_or_else(|| StoreError::Exec("UPDATE without a filter".into()))?;
    Ok(format!(
        "UPDATE pub SET prog = ?1, prog_source = 'USER_CORRECTED' WHERE {filter}"
    ))
}
