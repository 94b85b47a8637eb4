use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::llm::{FinishReason, StageId};
use crate::store::ResultTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum QuestionType {
    Generic,
    SqlQuery,
    SqlUpdate,
}

impl QuestionType {
    pub fn as_str(self) -> &'static str {
        match self {
            QuestionType::Generic => "GENERIC",
            QuestionType::SqlQuery => "SQL_QUERY",
            QuestionType::SqlUpdate => "SQL_UPDATE",
        }
    }

    pub fn is_sql(self) -> bool {
        self != QuestionType::Generic
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QuestionType {
    type Err = String;

    /// Accepts the three tokens in any case, with surrounding punctuation,
    /// and the bare `SQL` used for queries.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let normalized: String = s
            .trim()
            .trim_matches(|c: char| !c.is_ascii_alphanumeric() && c != '_')
            .to_ascii_uppercase()
            .replace([' ', '-'], "_");
        match normalized.as_str() {
            "GENERIC" => Ok(QuestionType::Generic),
            "SQL_QUERY" | "SQL" => Ok(QuestionType::SqlQuery),
            "SQL_UPDATE" => Ok(QuestionType::SqlUpdate),
            _ => Err(format!("unrecognized question type {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TurnKind {
    Chat,
    Ingest,
    Export,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTrace {
    pub stage: StageId,
    pub text: String,
    pub finish_reason: FinishReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub kind: TurnKind,
    pub user_text: String,
    pub rewritten_text: String,
    pub question_type: Option<QuestionType>,
    /// The statement as generated; the canonical rendering when accepted.
    pub sql: Option<String>,
    pub sql_result_summary: Option<String>,
    pub agent_text: String,
    pub stage_trace: Vec<StageTrace>,
    /// Set when a stage failed and `agent_text` is a notice.
    pub error_code: Option<String>,
}

impl ChatTurn {
    pub(crate) fn new(kind: TurnKind, user_text: &str) -> Self {
        Self {
            kind,
            user_text: user_text.to_string(),
            rewritten_text: user_text.to_string(),
            question_type: None,
            sql: None,
            sql_result_summary: None,
            agent_text: String::new(),
            stage_trace: Vec::new(),
            error_code: None,
        }
    }

    pub fn stages(&self) -> Vec<StageId> {
        self.stage_trace.iter().map(|t| t.stage).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatSession {
    pub session_id: String,
    pub created_at: String,
    pub turns: Vec<ChatTurn>,
    pub last_result: Option<ResultTable>,
}
