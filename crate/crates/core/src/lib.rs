//! Core of the Pubbie publication-reporting agent.
//!
//! The crate is split along the agent's moving parts:
//!
//! - [`store`]: embedded SQLite persistence for publications, predicted
//!   programs and chat sessions, plus CSV ingest/export.
//! - [`classifier`]: program prediction (bag-of-words Naive Bayes and an
//!   embedding-backed softmax head) and the evaluation metrics.
//! - [`llm`]: chat-completion / embedding providers (OpenAI-compatible HTTP,
//!   scripted mock, embedding cache).
//! - [`sql_guard`]: parser/validator that admits only a safe SQL subset.
//! - [`orchestrator`]: the staged chat pipeline, ingest/export workflows,
//!   retrieval index and the text-to-SQL evaluation harness.

pub mod classifier;
pub mod label;
pub mod llm;
pub mod orchestrator;
pub mod sql_guard;
pub mod store;

pub use label::{LabelSource, ProgramLabel};
