//! Text-to-SQL evaluation: run stages B and D on each question and compare
//! what the generated statement returns with the gold answer.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use super::{Orchestrator, QuestionType};
use crate::llm::{split_fields, ProviderError};
use crate::sql_guard::{self, SqlPlan, StatementKind};
use crate::store::{ResultTable, Store, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Stratum {
    Frequent,
    Infrequent,
}

impl Stratum {
    pub fn as_str(self) -> &'static str {
        match self {
            Stratum::Frequent => "FREQUENT",
            Stratum::Infrequent => "INFREQUENT",
        }
    }
}

impl FromStr for Stratum {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "FREQUENT" => Ok(Stratum::Frequent),
            "INFREQUENT" => Ok(Stratum::Infrequent),
            _ => Err(format!("unknown stratum {s:?}")),
        }
    }
}

/// The expected answer: a reference statement or a single count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Gold {
    Sql(String),
    Count(i64),
}

impl FromStr for Gold {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(sql) = s.strip_prefix("sql:") {
            Ok(Gold::Sql(sql.trim().to_string()))
        } else if let Some(n) = s.strip_prefix("count:") {
            n.trim().parse().map(Gold::Count).map_err(|_| format!("bad count {n:?}"))
        } else {
            Err(format!("gold must start with `sql:` or `count:`, got {s:?}"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Nl2SqlCase {
    pub stratum: Stratum,
    pub question: String,
    pub gold: Gold,
}

impl Nl2SqlCase {
    /// One case per `STRATUM | question | gold` line, with the escaping of
    /// mock scripts. Blank lines and `#` comments are skipped.
    pub fn parse_corpus(text: &str) -> Result<Vec<Self>, ProviderError> {
        let mut cases = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let error = |message: String| ProviderError::Parse { line: i + 1, message };
            let fields = split_fields(line).map_err(error)?;
            let [stratum, question, gold]: [String; 3] = fields
                .try_into()
                .map_err(|f: Vec<String>| error(format!("expected 3 fields, found {}", f.len())))?;
            cases.push(Nl2SqlCase {
                stratum: stratum.parse().map_err(error)?,
                question,
                gold: gold.parse().map_err(error)?,
            });
        }
        Ok(cases)
    }

    pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Self>, ProviderError> {
        Self::parse_corpus(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseOutcome {
    pub case: Nl2SqlCase,
    pub question_type: Option<QuestionType>,
    pub generated_sql: Option<String>,
    pub passed: bool,
    /// Why the case failed.
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StratumScore {
    pub passed: usize,
    pub total: usize,
}

/// Percentage rounded to four decimals; zero for an empty stratum.
fn percent(passed: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    (passed as f64 / total as f64 * 100.0 * 1e4).round() / 1e4
}

impl StratumScore {
    pub fn accuracy(&self) -> f64 {
        percent(self.passed, self.total)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Nl2SqlReport {
    pub outcomes: Vec<CaseOutcome>,
}

impl Nl2SqlReport {
    pub fn score(&self, stratum: Stratum) -> StratumScore {
        let mut score = StratumScore::default();
        for o in self.outcomes.iter().filter(|o| o.case.stratum == stratum) {
            score.total += 1;
            score.passed += usize::from(o.passed);
        }
        score
    }

    pub fn passed(&self) -> usize {
        self.outcomes.iter().filter(|o| o.passed).count()
    }

    pub fn accuracy(&self) -> f64 {
        percent(self.passed(), self.outcomes.len())
    }
}

impl fmt::Display for Nl2SqlReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for o in &self.outcomes {
            let verdict = if o.passed { "PASS" } else { "FAIL" };
            write!(f, "{verdict} [{}] {}", o.case.stratum.as_str(), o.case.question)?;
            if let Some(reason) = &o.reason {
                write!(f, " ({reason})")?;
            }
            writeln!(f)?;
        }
        for stratum in [Stratum::Frequent, Stratum::Infrequent] {
            let s = self.score(stratum);
            writeln!(f, "{}: {}/{} = {:.2}%", stratum.as_str(), s.passed, s.total, s.accuracy())?;
        }
        write!(f, "Overall: {}/{} = {:.2}%", self.passed(), self.outcomes.len(), self.accuracy())
    }
}

/// Order-insensitive comparison key for result rows.
fn row_multiset(table: &ResultTable) -> Vec<String> {
    let mut rows: Vec<String> = table
        .rows()
        .iter()
        .map(|r| serde_json::to_string(r).expect("values serialize"))
        .collect();
    rows.sort();
    rows
}

/// Rows an UPDATE would touch, identified by eid.
fn update_targets(store: &Store, plan: &SqlPlan) -> Result<Vec<String>, String> {
    let filter = plan.update_filter().ok_or("update without filter")?;
    let select = sql_guard::validate(&format!("SELECT eid FROM pub WHERE {filter}")).map_err(|e| e.to_string())?;
    let table = store.execute_select(&select).map_err(|e| e.to_string())?;
    Ok(row_multiset(&table))
}

fn compare(store: &Store, candidate: &SqlPlan, gold: &Gold) -> Result<(), String> {
    match gold {
        Gold::Count(n) => {
            if candidate.kind() != StatementKind::Select {
                return Err("expected a SELECT".into());
            }
            let table = store.execute_select(candidate).map_err(|e| e.to_string())?;
            match table.single_value() {
                Some(Value::Integer(v)) if v == n => Ok(()),
                other => Err(format!("expected {n}, got {other:?}")),
            }
        }
        Gold::Sql(sql) => {
            let gold = sql_guard::validate(sql).map_err(|e| format!("gold rejected: {e}"))?;
            if candidate.kind() != gold.kind() {
                return Err(format!("expected {}, got {}", gold.kind(), candidate.kind()));
            }
            match gold.kind() {
                StatementKind::Select => {
                    let want = store.execute_select(&gold).map_err(|e| format!("gold failed: {e}"))?;
                    let got = store.execute_select(candidate).map_err(|e| e.to_string())?;
                    if row_multiset(&want) == row_multiset(&got) {
                        Ok(())
                    } else {
                        Err(format!("rows differ: {} expected, {} returned", want.rows().len(), got.rows().len()))
                    }
                }
                StatementKind::Update => {
                    if candidate.new_prog_value() != gold.new_prog_value() {
                        return Err("different program value".into());
                    }
                    if update_targets(store, &gold)? == update_targets(store, candidate)? {
                        Ok(())
                    } else {
                        Err("different rows targeted".into())
                    }
                }
            }
        }
    }
}

/// Runs every case through stages B and D. Nothing is written to the store:
/// candidate UPDATEs are compared by the rows they would touch.
pub fn evaluate_text_to_sql(orchestrator: &Orchestrator, cases: &[Nl2SqlCase]) -> Nl2SqlReport {
    let store = orchestrator.store();
    let outcomes = cases
        .iter()
        .map(|case| {
            let mut trace = Vec::new();
            let mut outcome = CaseOutcome {
                case: case.clone(),
                question_type: None,
                generated_sql: None,
                passed: false,
                reason: None,
            };
            match orchestrator.classify_question(&case.question, &mut trace) {
                Ok(t) => outcome.question_type = Some(t),
                Err(e) => tracing::warn!(error = %e, "stage B failed during evaluation"),
            }
            let result = match orchestrator.generate_sql(&case.question, &mut trace) {
                Ok((raw, verdict)) => {
                    outcome.generated_sql = Some(raw.trim().to_string());
                    verdict
                        .map_err(|e| e.to_string())
                        .and_then(|plan| compare(store, &plan, &case.gold))
                }
                Err(e) => Err(e.to_string()),
            };
            match result {
                Ok(()) => outcome.passed = true,
                Err(reason) => outcome.reason = Some(reason),
            }
            outcome
        })
        .collect();
    Nl2SqlReport { outcomes }
}
