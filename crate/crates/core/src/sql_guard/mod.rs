//! Guard for model-generated SQL.
//!
//! [`validate`] admits exactly one statement that is either a `SELECT` over
//! `pub` or an `UPDATE pub SET prog = '<label>' WHERE ...`. Everything else
//! is rejected with a stable error code before it can reach the database.
//! Accepted statements are re-rendered from the parse tree, so what runs is
//! what was checked.

mod ast;
mod lexer;
mod parser;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::ProgramLabel;
use ast::Statement;

/// Statement keywords that are recognised as SQL but never admitted.
const FORBIDDEN_KEYWORDS: &[&str] = &[
    "INSERT", "DELETE", "DROP", "ALTER", "PRAGMA", "ATTACH", "DETACH", "CREATE", "REPLACE",
    "VACUUM", "REINDEX", "ANALYZE", "WITH", "EXPLAIN", "BEGIN", "COMMIT", "ROLLBACK", "SAVEPOINT",
    "RELEASE", "END", "VALUES", "TRUNCATE",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GuardError {
    #[error("NOT_SQL: no SQL statement found")]
    NotSql,
    #[error("MULTI_STATEMENT: found {count} statements, expected one")]
    MultiStatement { count: usize },
    #[error("FORBIDDEN_STATEMENT: {0} statements are not allowed")]
    ForbiddenStatement(String),
    #[error("FORBIDDEN_TABLE: table {0:?} is not accessible")]
    ForbiddenTable(String),
    #[error("FORBIDDEN_COLUMN: column {0:?} cannot be updated")]
    ForbiddenColumn(String),
    #[error("INVALID_LABEL: {0:?} is not a challenge program")]
    InvalidLabel(String),
    #[error("SYNTAX_ERROR at position {position}: {message}")]
    SyntaxError { position: usize, message: String },
}

impl GuardError {
    pub(crate) fn syntax(position: usize, message: impl Into<String>) -> Self {
        GuardError::SyntaxError {
            position,
            message: message.into(),
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            GuardError::NotSql => "NOT_SQL",
            GuardError::MultiStatement { .. } => "MULTI_STATEMENT",
            GuardError::ForbiddenStatement(_) => "FORBIDDEN_STATEMENT",
            GuardError::ForbiddenTable(_) => "FORBIDDEN_TABLE",
            GuardError::ForbiddenColumn(_) => "FORBIDDEN_COLUMN",
            GuardError::InvalidLabel(_) => "INVALID_LABEL",
            GuardError::SyntaxError { .. } => "SYNTAX_ERROR",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StatementKind {
    Select,
    Update,
}

impl fmt::Display for StatementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StatementKind::Select => "SELECT",
            StatementKind::Update => "UPDATE",
        })
    }
}

/// A validated statement, ready for the store. Only [`validate`] builds one.
#[derive(Debug, Clone, PartialEq)]
pub struct SqlPlan {
    kind: StatementKind,
    statement: String,
    tables: BTreeSet<String>,
    updated_columns: BTreeSet<String>,
    new_prog_value: Option<ProgramLabel>,
    update_filter: Option<String>,
}

impl SqlPlan {
    pub fn kind(&self) -> StatementKind {
        self.kind
    }

    /// Canonical single-statement text, terminated by `;`.
    pub fn statement(&self) -> &str {
        &self.statement
    }

    pub fn tables(&self) -> &BTreeSet<String> {
        &self.tables
    }

    pub fn updated_columns(&self) -> &BTreeSet<String> {
        &self.updated_columns
    }

    pub fn new_prog_value(&self) -> Option<ProgramLabel> {
        self.new_prog_value
    }

    /// Rendered `WHERE` expression of an UPDATE.
    pub(crate) fn update_filter(&self) -> Option<&str> {
        self.update_filter.as_deref()
    }
}

/// Parses and checks model output. Code fences and a leading `SQL:` label
/// are stripped first; a trailing semicolon is optional.
pub fn validate(sql_text: &str) -> Result<SqlPlan, GuardError> {
    let text = strip_wrapping(sql_text);
    let first_word: String = text
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect::<String>()
        .to_ascii_uppercase();
    let is_entry = first_word == "SELECT" || first_word == "UPDATE";
    if !is_entry && !FORBIDDEN_KEYWORDS.contains(&first_word.as_str()) {
        return Err(GuardError::NotSql);
    }

    let tokens = lexer::tokenize(&text)?;
    let statements: Vec<&[lexer::Token]> = tokens
        .split(|t| t.is_sym(";"))
        .filter(|s| !s.is_empty())
        .collect();
    match statements.len() {
        0 => return Err(GuardError::NotSql),
        1 => {}
        count => return Err(GuardError::MultiStatement { count }),
    }
    if !is_entry {
        return Err(GuardError::ForbiddenStatement(first_word));
    }
    let statement = statements[0];
    prescan_tables(statement)?;

    let parsed = parser::Parser::new(statement, text.chars().count()).parse_statement()?;
    let mut tables = BTreeSet::new();
    tables.insert("pub".to_string());
    let plan = match &parsed {
        Statement::Select(_) => SqlPlan {
            kind: StatementKind::Select,
            statement: parsed.to_string(),
            tables,
            updated_columns: BTreeSet::new(),
            new_prog_value: None,
            update_filter: None,
        },
        Statement::Update(update) => {
            let label = match &update.value {
                ast::Expr::Str(s) => s
                    .parse::<ProgramLabel>()
                    .map_err(|_| GuardError::InvalidLabel(s.clone()))?,
                other => return Err(GuardError::InvalidLabel(other.to_string())),
            };
            SqlPlan {
                kind: StatementKind::Update,
                statement: parsed.to_string(),
                tables,
                updated_columns: BTreeSet::from(["prog".to_string()]),
                new_prog_value: Some(label),
                update_filter: Some(update.filter.to_string()),
            }
        }
    };
    Ok(plan)
}

/// Statement kind of text that [`validate`] accepts.
pub fn classify_statement(sql_text: &str) -> Result<StatementKind, GuardError> {
    validate(sql_text).map(|plan| plan.kind())
}

/// Any `FROM x` / `JOIN x` naming a table other than `pub` is rejected up
/// front, including inside constructs the parser would reject anyway.
fn prescan_tables(tokens: &[lexer::Token]) -> Result<(), GuardError> {
    for window in tokens.windows(2) {
        if !(window[0].is_word("FROM") || window[0].is_word("JOIN")) {
            continue;
        }
        let name = match &window[1].tok {
            lexer::Tok::Word(w) => w.to_lowercase(),
            lexer::Tok::QuotedIdent(q) => q.to_lowercase(),
            _ => continue,
        };
        if name != "pub" {
            return Err(GuardError::ForbiddenTable(name));
        }
    }
    Ok(())
}

/// Removes Markdown code fences and a leading `SQL:` label.
fn strip_wrapping(raw: &str) -> String {
    let mut text = raw.trim();
    if let Some(open) = text.find("```") {
        let after = &text[open + 3..];
        let body = match after.find('\n') {
            Some(nl) if is_info_string(&after[..nl]) => &after[nl + 1..],
            _ => after,
        };
        text = match body.find("```") {
            Some(close) => &body[..close],
            None => body,
        };
        text = text.trim();
    }
    if text.len() >= 4 && text[..4].eq_ignore_ascii_case("sql:") {
        text = text[4..].trim_start();
    }
    text.trim().to_string()
}

fn is_info_string(line: &str) -> bool {
    let line = line.trim();
    line.is_empty() || (line.split_whitespace().count() == 1 && line.chars().all(|c| c.is_ascii_alphanumeric()))
        && !line.eq_ignore_ascii_case("select")
        && !line.eq_ignore_ascii_case("update")
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROW3: &str = "SELECT prog FROM pub WHERE title = 'A Study on the Use of Intake Flow Path Modification to Reduce Methane Slip of a Natural Gas-Diesel Dual-Fuel Engine';";
    const ROW4: &str = "SELECT COUNT(*) FROM pub WHERE authors_with_affil LIKE '%Alysa%';";

    fn code(sql: &str) -> &'static str {
        match validate(sql) {
            Ok(_) => "OK",
            Err(e) => e.code(),
        }
    }

    #[test]
    fn accepts_both_published_queries_verbatim() {
        for sql in [ROW3, ROW4] {
            let plan = validate(sql).unwrap();
            assert_eq!(plan.kind(), StatementKind::Select);
            assert_eq!(plan.statement(), sql);
            assert_eq!(plan.tables(), &BTreeSet::from(["pub".to_string()]));
            assert!(plan.updated_columns().is_empty());
        }
    }

    #[test]
    fn trailing_semicolon_is_optional() {
        let plan = validate(ROW4.trim_end_matches(';')).unwrap();
        assert_eq!(plan.statement(), ROW4);
    }

    #[test]
    fn strips_code_fences_and_label() {
        let fenced = "```sql\nSELECT prog FROM pub WHERE title = 'X';\n```";
        assert_eq!(
            validate(fenced).unwrap().statement(),
            "SELECT prog FROM pub WHERE title = 'X';"
        );
        assert_eq!(code("SQL: SELECT * FROM pub"), "OK");
        assert_eq!(code("Sure!\n```\nSELECT * FROM pub\n```\nHope this helps"), "OK");
        assert_eq!(code("```SELECT * FROM pub```"), "OK");
    }

    #[test]
    fn rejects_with_documented_codes() {
        assert_eq!(code("DROP TABLE pub;"), "FORBIDDEN_STATEMENT");
        assert_eq!(code("DELETE FROM pub"), "FORBIDDEN_STATEMENT");
        assert_eq!(code("INSERT INTO pub (eid) VALUES ('x')"), "FORBIDDEN_STATEMENT");
        assert_eq!(code("PRAGMA table_info(pub)"), "FORBIDDEN_STATEMENT");
        assert_eq!(code("ATTACH DATABASE 'x.db' AS x"), "FORBIDDEN_STATEMENT");
        assert_eq!(code("SELECT 1; SELECT 2;"), "MULTI_STATEMENT");
        assert_eq!(code("SELECT * FROM pub; DROP TABLE pub"), "MULTI_STATEMENT");
        assert_eq!(code("SELECT * FROM session"), "FORBIDDEN_TABLE");
        assert_eq!(code("SELECT * FROM sqlite_master"), "FORBIDDEN_TABLE");
        assert_eq!(code("SELECT * FROM main.pub"), "FORBIDDEN_TABLE");
        assert_eq!(code("SELECT * FROM pub, turn"), "FORBIDDEN_TABLE");
        assert_eq!(code("SELECT * FROM pub JOIN turn ON 1 = 1"), "FORBIDDEN_TABLE");
        assert_eq!(code("SELECT * FROM pub WHERE eid IN (SELECT id FROM session)"), "FORBIDDEN_TABLE");
        assert_eq!(code("SELECT x.title FROM pub"), "FORBIDDEN_TABLE");
        assert_eq!(code("UPDATE session SET prog = 'Pandemic Response' WHERE 1 = 1"), "FORBIDDEN_TABLE");
        assert_eq!(code("UPDATE pub SET title = 'x' WHERE eid = 'e1'"), "FORBIDDEN_COLUMN");
        assert_eq!(
            code("UPDATE pub SET prog = 'Pandemic Response', year = 1 WHERE eid = 'e1'"),
            "FORBIDDEN_COLUMN"
        );
        assert_eq!(code("UPDATE pub SET prog = 'Nonexistent Program' WHERE eid = 'e1'"), "INVALID_LABEL");
        assert_eq!(code("UPDATE pub SET prog = title WHERE eid = 'e1'"), "INVALID_LABEL");
        assert_eq!(code("I could not find that."), "NOT_SQL");
        assert_eq!(code(""), "NOT_SQL");
        assert_eq!(code(";;"), "NOT_SQL");
        assert_eq!(code("SELECT FROM pub"), "SYNTAX_ERROR");
        assert_eq!(code("SELECT load_extension('x') FROM pub"), "SYNTAX_ERROR");
        assert_eq!(code("SELECT * FROM pub UNION SELECT * FROM pub"), "SYNTAX_ERROR");
        assert_eq!(code("UPDATE pub SET prog = 'Pandemic Response'"), "SYNTAX_ERROR");
    }

    #[test]
    fn semicolon_inside_literal_is_one_statement() {
        let plan = validate("SELECT * FROM pub WHERE title = 'a; DROP TABLE pub';").unwrap();
        assert_eq!(plan.statement(), "SELECT * FROM pub WHERE title = 'a; DROP TABLE pub';");
    }

    #[test]
    fn update_plan_records_label_and_column() {
        let plan = validate("UPDATE pub SET prog='Materials for Clean Fuels' WHERE eid='e1'").unwrap();
        assert_eq!(plan.kind(), StatementKind::Update);
        assert_eq!(plan.new_prog_value(), Some(ProgramLabel::MaterialsForCleanFuels));
        assert_eq!(plan.updated_columns(), &BTreeSet::from(["prog".to_string()]));
        assert_eq!(plan.update_filter(), Some("eid = 'e1'"));
        assert_eq!(
            plan.statement(),
            "UPDATE pub SET prog = 'Materials for Clean Fuels' WHERE eid = 'e1';"
        );
    }

    #[test]
    fn keywords_and_identifiers_are_case_insensitive() {
        assert_eq!(
            classify_statement("update PUB set PROG='materials for clean fuels' where EID='e1'"),
            Ok(StatementKind::Update)
        );
        assert_eq!(classify_statement(ROW3), Ok(StatementKind::Select));
        assert_eq!(code("select Title from Pub p where p.year >= 2020"), "OK");
    }

    #[test]
    fn accepts_common_aggregate_shapes() {
        for sql in [
            "SELECT prog, COUNT(*) AS n FROM pub GROUP BY prog HAVING COUNT(*) > 1 ORDER BY n DESC LIMIT 5",
            "SELECT COUNT(DISTINCT prog) FROM pub WHERE year BETWEEN 2020 AND 2023",
            "SELECT title FROM pub WHERE prog IN ('Pandemic Response', 'AI for Design') AND NOT year IS NULL",
            "SELECT AVG(cited_by) FROM pub WHERE LOWER(author_keywords) NOT LIKE '%fuel%' OR -year < -2000",
            "SELECT DISTINCT source_title FROM pub ORDER BY source_title LIMIT 10 OFFSET 5",
            "SELECT eid, title || ' (' || year || ')' label FROM pub",
        ] {
            assert_eq!(code(sql), "OK", "{sql}");
        }
    }

    #[test]
    fn rendering_is_a_fixed_point() {
        let sql = "select  prog ,count( * )  from pub where ( year>2019 and - -cited_by <> 0 ) group by prog";
        let once = validate(sql).unwrap();
        let twice = validate(once.statement()).unwrap();
        assert_eq!(once.statement(), twice.statement());
        assert!(!once.statement().contains("--"));
    }

    #[test]
    fn syntax_error_reports_position() {
        match validate("SELECT title FROM pub WHERE") {
            Err(GuardError::SyntaxError { position, .. }) => assert_eq!(position, 27),
            other => panic!("unexpected {other:?}"),
        }
    }
}
