//! The chat pipeline and the upload/export workflows.
//!
//! A chat turn runs A1 (does the message depend on history?), A2 (rewrite
//! it if so), B (route it), then either C (general answer with retrieved
//! context) or D (text to SQL) followed by guarded execution and E (phrase
//! the answer from the result). Stage failures never escape a turn: they
//! become a notice in `agent_text` plus an `error_code`.

mod nl2sql;
mod retrieval;
mod session;
mod templates;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Arc, Mutex, RwLock};

use rand::RngCore;
use thiserror::Error;

use crate::label::ProgramLabel;
use crate::llm::{ChatProvider, FinishReason, ProviderError, StageId, StageRequest};
use crate::sql_guard::{self, SqlPlan, StatementKind};
use crate::store::{IngestReport, Labeler, ResultTable, Store, StoreError};

pub use nl2sql::{evaluate_text_to_sql, CaseOutcome, Gold, Nl2SqlCase, Nl2SqlReport, Stratum, StratumScore};
pub use retrieval::{Hit, RetrievalIndex};
pub use session::{ChatSession, ChatTurn, QuestionType, StageTrace, TurnKind};
pub use templates::{Bindings, PromptTemplate, TemplateError, TemplateRegistry, SLOTS};

pub const SQL_FAILURE_MESSAGE: &str =
    "I could not translate that into a database query. Please try rephrasing your request.";
pub const PROVIDER_FAILURE_MESSAGE: &str =
    "The language model service did not respond. Please try again in a moment.";

const INGEST_PROMPT: &str = "I uploaded a CSV file of publications.";
const EXPORT_PROMPT: &str = "Export the last result as a CSV file.";

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("SESSION_NOT_FOUND: {0}")]
    SessionNotFound(String),
    #[error("SESSION_BUSY: another request is running in session {0}")]
    SessionBusy(String),
    #[error("NO_RESULT_TO_EXPORT: the session has no query result yet")]
    NoResultToExport,
    #[error(transparent)]
    Store(StoreError),
}

impl From<StoreError> for OrchestratorError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::SessionNotFound(id) => OrchestratorError::SessionNotFound(id),
            other => OrchestratorError::Store(other),
        }
    }
}

impl OrchestratorError {
    pub fn code(&self) -> &'static str {
        match self {
            OrchestratorError::SessionNotFound(_) => "SESSION_NOT_FOUND",
            OrchestratorError::SessionBusy(_) => "SESSION_BUSY",
            OrchestratorError::NoResultToExport => "NO_RESULT_TO_EXPORT",
            OrchestratorError::Store(e) => e.code(),
        }
    }
}

/// What a second concurrent request on the same session does.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusyPolicy {
    Wait,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrchestratorConfig {
    /// Turns of history shown to stages A1 and A2.
    pub history_window: usize,
    pub retrieval_k: usize,
    /// Rows of a result table passed to stage E.
    pub evidence_rows: usize,
    pub busy_policy: BusyPolicy,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            history_window: 6,
            retrieval_k: 5,
            evidence_rows: 50,
            busy_policy: BusyPolicy::Wait,
        }
    }
}

/// A stage failure inside a turn.
enum StageFailure {
    Provider(ProviderError),
    Sql { code: &'static str, detail: String },
}

impl From<ProviderError> for StageFailure {
    fn from(e: ProviderError) -> Self {
        StageFailure::Provider(e)
    }
}

pub struct Orchestrator {
    store: Arc<Store>,
    provider: Arc<dyn ChatProvider>,
    templates: TemplateRegistry,
    config: OrchestratorConfig,
    labeler: RwLock<Option<Arc<dyn Labeler>>>,
    index: RwLock<Arc<RetrievalIndex>>,
    session_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

fn history_text(turns: &[ChatTurn], window: usize) -> String {
    let recent = &turns[turns.len().saturating_sub(window)..];
    if recent.is_empty() {
        return "(no earlier messages)".to_string();
    }
    let mut out = String::new();
    for turn in recent {
        let _ = writeln!(out, "User: {}", turn.user_text);
        let _ = writeln!(out, "Assistant: {}", turn.agent_text);
    }
    out.trim_end().to_string()
}

fn labels_text() -> String {
    ProgramLabel::ALL
        .iter()
        .map(|l| format!("'{}'", l.as_str()))
        .collect::<Vec<_>>()
        .join(", ")
}

/// YES / NO at the start of the completion, case-insensitive.
fn parse_yes_no(text: &str) -> Option<bool> {
    let word: String = text
        .trim()
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect::<String>()
        .to_ascii_uppercase();
    match word.as_str() {
        "YES" => Some(true),
        "NO" => Some(false),
        _ => None,
    }
}

impl Orchestrator {
    pub fn new(
        store: Arc<Store>,
        provider: Arc<dyn ChatProvider>,
        templates: TemplateRegistry,
        config: OrchestratorConfig,
    ) -> Result<Self, StoreError> {
        let index = RetrievalIndex::build(&store.publications()?);
        Ok(Self {
            store,
            provider,
            templates,
            config,
            labeler: RwLock::new(None),
            index: RwLock::new(Arc::new(index)),
            session_locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    /// Labeler used for rows without a program during uploads.
    pub fn set_labeler(&self, labeler: Option<Arc<dyn Labeler>>) {
        *self.labeler.write().unwrap_or_else(|p| p.into_inner()) = labeler;
    }

    pub fn refresh_index(&self) -> Result<(), StoreError> {
        let index = RetrievalIndex::build(&self.store.publications()?);
        *self.index.write().unwrap_or_else(|p| p.into_inner()) = Arc::new(index);
        Ok(())
    }

    fn index(&self) -> Arc<RetrievalIndex> {
        self.index.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    // -- sessions -------------------------------------------------------------

    /// New empty session with a random 128-bit hex id.
    pub fn create_session(&self) -> Result<String, OrchestratorError> {
        let mut bytes = [0u8; 16];
        rand::rngs::OsRng.fill_bytes(&mut bytes);
        let id = hex::encode(bytes);
        self.store.create_session(&id, &chrono::Utc::now().to_rfc3339())?;
        Ok(id)
    }

    pub fn session(&self, id: &str) -> Result<ChatSession, OrchestratorError> {
        let created_at = self.store.session_created_at(id)?;
        Ok(ChatSession {
            session_id: id.to_string(),
            created_at,
            turns: self.store.turns(id)?,
            last_result: self.store.last_result(id)?,
        })
    }

    fn session_lock(&self, id: &str) -> Arc<Mutex<()>> {
        self.session_locks
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .entry(id.to_string())
            .or_default()
            .clone()
    }

    fn with_session<T>(
        &self,
        id: &str,
        f: impl FnOnce() -> Result<T, OrchestratorError>,
    ) -> Result<T, OrchestratorError> {
        self.store.session_created_at(id)?;
        let lock = self.session_lock(id);
        let _guard = match self.config.busy_policy {
            BusyPolicy::Wait => lock.lock().unwrap_or_else(|p| p.into_inner()),
            BusyPolicy::Reject => match lock.try_lock() {
                Ok(guard) => guard,
                Err(std::sync::TryLockError::Poisoned(p)) => p.into_inner(),
                Err(std::sync::TryLockError::WouldBlock) => {
                    return Err(OrchestratorError::SessionBusy(id.to_string()))
                }
            },
        };
        f()
    }

    // -- stages -------------------------------------------------------------

    fn call(&self, stage: StageId, bindings: &Bindings, trace: &mut Vec<StageTrace>) -> Result<String, ProviderError> {
        let messages = self
            .templates
            .render(stage, bindings)
            .map_err(|e| ProviderError::InvalidRequest(e.to_string()))?;
        let request = StageRequest::new(stage, messages);
        match self.provider.complete(&request) {
            Ok(completion) => {
                trace.push(StageTrace {
                    stage,
                    text: completion.text.clone(),
                    finish_reason: completion.finish_reason,
                });
                Ok(completion.text)
            }
            Err(e) => {
                trace.push(StageTrace {
                    stage,
                    text: String::new(),
                    finish_reason: FinishReason::Error,
                });
                Err(e)
            }
        }
    }

    /// Stage A1. Sessions without turns are never relevant and make no call.
    pub fn assess_history_relevance(
        &self,
        history: &[ChatTurn],
        user_text: &str,
        trace: &mut Vec<StageTrace>,
    ) -> Result<bool, ProviderError> {
        if history.is_empty() {
            return Ok(false);
        }
        let bindings = Bindings::new()
            .with("history", history_text(history, self.config.history_window))
            .with("user_prompt", user_text);
        let text = self.call(StageId::A1, &bindings, trace)?;
        Ok(parse_yes_no(&text).unwrap_or_else(|| {
            tracing::warn!(output = %text, "UNPARSEABLE_STAGE_OUTPUT(A1); treating as NO");
            false
        }))
    }

    /// Stage A2. An empty completion keeps the original text.
    pub fn rewrite_prompt(
        &self,
        history: &[ChatTurn],
        user_text: &str,
        trace: &mut Vec<StageTrace>,
    ) -> Result<String, ProviderError> {
        let bindings = Bindings::new()
            .with("history", history_text(history, self.config.history_window))
            .with("user_prompt", user_text);
        let text = self.call(StageId::A2, &bindings, trace)?;
        let text = text.trim();
        Ok(if text.is_empty() { user_text.to_string() } else { text.to_string() })
    }

    /// Stage B. Unrecognized output falls back to GENERIC.
    pub fn classify_question(&self, text: &str, trace: &mut Vec<StageTrace>) -> Result<QuestionType, ProviderError> {
        let output = self.call(StageId::B, &Bindings::new().with("user_prompt", text), trace)?;
        Ok(output.parse().unwrap_or_else(|_| {
            tracing::warn!(output = %output, "UNPARSEABLE_STAGE_OUTPUT(B); treating as GENERIC");
            QuestionType::Generic
        }))
    }

    /// Stage C with the top retrieved publications as context.
    pub fn answer_generic(&self, text: &str, trace: &mut Vec<StageTrace>) -> Result<String, ProviderError> {
        let hits = self.index().query(text, self.config.retrieval_k);
        let context: Vec<String> = hits.iter().map(|h| format!("- {}", h.snippet)).collect();
        let bindings = Bindings::new()
            .with("user_prompt", text)
            .with("context", context.join("\n"));
        self.call(StageId::C, &bindings, trace)
    }

    /// Stage D. Returns the raw completion and the guard's verdict on it.
    pub fn generate_sql(
        &self,
        text: &str,
        trace: &mut Vec<StageTrace>,
    ) -> Result<(String, Result<SqlPlan, sql_guard::GuardError>), ProviderError> {
        let schema = self
            .store
            .schema_description()
            .map_err(|e| ProviderError::InvalidRequest(e.to_string()))?;
        let bindings = Bindings::new()
            .with("user_prompt", text)
            .with("schema", schema)
            .with("labels", labels_text());
        let raw = self.call(StageId::D, &bindings, trace)?;
        let verdict = sql_guard::validate(&raw);
        Ok((raw, verdict))
    }

    /// Stage E over the evidence text.
    pub fn formulate_response(
        &self,
        text: &str,
        evidence: &str,
        trace: &mut Vec<StageTrace>,
    ) -> Result<String, ProviderError> {
        let bindings = Bindings::new().with("user_prompt", text).with("context", evidence);
        self.call(StageId::E, &bindings, trace)
    }

    // -- workflows ------------------------------------------------------------

    /// Runs one chat turn and stores it.
    pub fn handle_turn(&self, session_id: &str, user_text: &str) -> Result<ChatTurn, OrchestratorError> {
        self.with_session(session_id, || {
            let history: Vec<ChatTurn> = self.store.turns(session_id)?;
            let mut turn = ChatTurn::new(TurnKind::Chat, user_text);
            let mut trace = Vec::new();
            let outcome = self.run_pipeline(session_id, &history, &mut turn, &mut trace);
            turn.stage_trace = trace;
            if let Err(failure) = outcome {
                match failure {
                    StageFailure::Provider(e) => {
                        tracing::warn!(session = session_id, error = %e, "provider failure during turn");
                        turn.agent_text = PROVIDER_FAILURE_MESSAGE.to_string();
                        turn.error_code = Some(e.code().to_string());
                    }
                    StageFailure::Sql { code, detail } => {
                        tracing::info!(session = session_id, code, %detail, "SQL stage failed");
                        turn.agent_text = SQL_FAILURE_MESSAGE.to_string();
                        turn.error_code = Some(code.to_string());
                    }
                }
            }
            self.store.append_turn(session_id, &turn)?;
            Ok(turn)
        })
    }

    fn run_pipeline(
        &self,
        session_id: &str,
        history: &[ChatTurn],
        turn: &mut ChatTurn,
        trace: &mut Vec<StageTrace>,
    ) -> Result<(), StageFailure> {
        let user_text = turn.user_text.clone();
        if self.assess_history_relevance(history, &user_text, trace)? {
            turn.rewritten_text = self.rewrite_prompt(history, &user_text, trace)?;
        }
        let text = turn.rewritten_text.clone();
        let question_type = self.classify_question(&text, trace)?;
        turn.question_type = Some(question_type);

        if !question_type.is_sql() {
            turn.agent_text = self.answer_generic(&text, trace)?;
            return Ok(());
        }

        let (raw, verdict) = self.generate_sql(&text, trace)?;
        turn.sql = Some(raw.trim().to_string());
        let plan = verdict.map_err(|e| StageFailure::Sql {
            code: "SQL_GENERATION_FAILED",
            detail: e.to_string(),
        })?;
        turn.sql = Some(plan.statement().to_string());
        let expected = match question_type {
            QuestionType::SqlUpdate => StatementKind::Update,
            _ => StatementKind::Select,
        };
        if plan.kind() != expected {
            return Err(StageFailure::Sql {
                code: "SQL_GENERATION_FAILED",
                detail: format!("{question_type} produced a {} statement", plan.kind()),
            });
        }

        let exec_error = |e: StoreError| StageFailure::Sql {
            code: "EXEC_ERROR",
            detail: e.to_string(),
        };
        let evidence = match plan.kind() {
            StatementKind::Select => {
                let table = self.store.execute_select(&plan).map_err(exec_error)?;
                self.store.set_last_result(session_id, &table).map_err(exec_error)?;
                table.render_plain(self.config.evidence_rows)
            }
            StatementKind::Update => {
                let n = self.store.execute_update(&plan).map_err(exec_error)?;
                let label = plan.new_prog_value().expect("update plans carry a label");
                format!("{n} publication(s) updated; challenge program set to \"{label}\".")
            }
        };
        turn.sql_result_summary = Some(evidence.clone());
        turn.agent_text = self.formulate_response(&text, &evidence, trace)?;
        Ok(())
    }

    /// Upload workflow: ingest with the configured labeler, then let stage E
    /// confirm. Row problems are reported in the summary, not raised.
    pub fn run_ingest_workflow(&self, session_id: &str, csv: &[u8]) -> Result<(ChatTurn, Option<IngestReport>), OrchestratorError> {
        self.with_session(session_id, || {
            let labeler = self.labeler.read().unwrap_or_else(|p| p.into_inner()).clone();
            let mut turn = ChatTurn::new(TurnKind::Ingest, INGEST_PROMPT);
            let (evidence, report) = match self.store.ingest_csv(csv, labeler.as_deref()) {
                Ok(report) => {
                    self.refresh_index()?;
                    (report.summary(), Some(report))
                }
                Err(e @ (StoreError::EmptyInput | StoreError::HeaderMissingRequired(_))) => {
                    turn.error_code = Some(e.code().to_string());
                    (format!("The upload was rejected: {e}"), None)
                }
                Err(e) => return Err(e.into()),
            };
            turn.sql_result_summary = Some(evidence.clone());
            let mut trace = Vec::new();
            turn.agent_text = match self.formulate_response(INGEST_PROMPT, &evidence, &mut trace) {
                Ok(text) => text,
                Err(e) => {
                    turn.error_code.get_or_insert_with(|| e.code().to_string());
                    evidence
                }
            };
            turn.stage_trace = trace;
            self.store.append_turn(session_id, &turn)?;
            Ok((turn, report))
        })
    }

    /// Export workflow: CSV bytes of the session's last result plus a
    /// summary turn.
    pub fn run_export_workflow(&self, session_id: &str) -> Result<(Vec<u8>, ChatTurn), OrchestratorError> {
        self.with_session(session_id, || {
            let table: ResultTable = self
                .store
                .last_result(session_id)?
                .ok_or(OrchestratorError::NoResultToExport)?;
            let bytes = self.store.export_csv(&table);
            let evidence = format!(
                "Exported {} row(s) and {} column(s): {}.",
                table.rows().len(),
                table.columns().len(),
                table.columns().join(", ")
            );
            let mut turn = ChatTurn::new(TurnKind::Export, EXPORT_PROMPT);
            turn.sql_result_summary = Some(evidence.clone());
            let mut trace = Vec::new();
            turn.agent_text = match self.formulate_response(EXPORT_PROMPT, &evidence, &mut trace) {
                Ok(text) => text,
                Err(e) => {
                    turn.error_code = Some(e.code().to_string());
                    evidence
                }
            };
            turn.stage_trace = trace;
            self.store.append_turn(session_id, &turn)?;
            Ok((bytes, turn))
        })
    }
}
