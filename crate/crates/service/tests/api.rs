use std::io::Read;
use std::path::PathBuf;
use std::sync::Arc;

use pubbie_core::llm::ScriptedMock;
use pubbie_core::orchestrator::{Orchestrator, OrchestratorConfig, TemplateRegistry};
use pubbie_core::store::Store;
use pubbie_service::api::{router, AppState, MAX_TEXT_BYTES};
use pubbie_service::error::CODES;
use serde_json::{json, Value};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

struct Server {
    base: String,
    orchestrator: Arc<Orchestrator>,
}

/// Serves the fixture store with the example-conversation script on an
/// ephemeral port.
fn start(debug: bool, max_upload_bytes: u64) -> Server {
    let store = Store::open_in_memory().unwrap();
    store.ingest_csv(&std::fs::read(fixture("publications.csv")).unwrap()[..], None).unwrap();
    let provider = Arc::new(ScriptedMock::from_file(fixture("example_conversation.mock")).unwrap());
    let orchestrator = Arc::new(
        Orchestrator::new(Arc::new(store), provider, TemplateRegistry::defaults(), OrchestratorConfig::default())
            .unwrap(),
    );
    let state = Arc::new(AppState { orchestrator: orchestrator.clone(), debug, max_upload_bytes });
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, router(state)).await.unwrap();
        });
    });
    let addr = rx.recv().unwrap();
    Server { base: format!("http://{addr}"), orchestrator }
}

/// Status and body of a response, whatever the status.
fn outcome(r: Result<ureq::Response, ureq::Error>) -> (u16, ureq::Response) {
    match r {
        Ok(resp) => (resp.status(), resp),
        Err(ureq::Error::Status(code, resp)) => (code, resp),
        Err(e) => panic!("transport error: {e}"),
    }
}

fn json_outcome(r: Result<ureq::Response, ureq::Error>) -> (u16, Value) {
    let (status, resp) = outcome(r);
    (status, resp.into_json().unwrap())
}

/// Asserts an error envelope with the given status and code.
fn assert_error(r: Result<ureq::Response, ureq::Error>, status: u16, code: &str) -> Value {
    let (s, body) = json_outcome(r);
    assert_eq!(s, status, "{body}");
    assert_eq!(body["code"], code, "{body}");
    assert!(CODES.contains(&body["code"].as_str().unwrap()));
    assert!(body["message"].as_str().is_some_and(|m| !m.is_empty()));
    assert!(body["retryable"].is_boolean());
    body
}

impl Server {
    fn session(&self) -> String {
        let (status, body) = json_outcome(ureq::post(&format!("{}/api/sessions", self.base)).call());
        assert_eq!(status, 201);
        body["session_id"].as_str().unwrap().to_string()
    }

    fn chat(&self, id: &str, text: &str) -> Result<ureq::Response, ureq::Error> {
        ureq::post(&format!("{}/api/sessions/{id}/chat", self.base)).send_json(json!({ "text": text }))
    }

    fn upload(&self, id: &str, bytes: &[u8]) -> Result<ureq::Response, ureq::Error> {
        ureq::post(&format!("{}/api/sessions/{id}/upload", self.base))
            .set("Content-Type", "text/csv")
            .send_bytes(bytes)
    }

    fn export(&self, id: &str) -> Result<ureq::Response, ureq::Error> {
        ureq::get(&format!("{}/api/sessions/{id}/export", self.base)).call()
    }
}

const HEADER: &str = "eid,title,year,authors,authors_with_affil,affiliations,author_keywords,index_keywords,source_title,doi,abstract,document_type,publisher,cited_by,prog\n";

fn two_rows() -> String {
    format!(
        "{HEADER}\
         2-s2.0-85199990001,Sea Ice Drift Forecasting,2024,Roy A.,\"Roy A., NRC, Ottawa\",NRC,sea ice,Ice,Cold Regions Science,,Forecasts of drift.,Article,Elsevier,1,Arctic and Northern\n\
         2-s2.0-85199990002,Route Planning with Learned Heuristics,2024,Lee K.,\"Lee K., NRC, Ottawa\",NRC,routing,Logistics,Transportation Research,,Learned routing.,Article,Elsevier,0,AI for Logistics\n"
    )
}

#[test]
fn session_ids_are_opaque_and_unique() {
    let s = start(false, 1 << 20);
    let a = s.session();
    let b = s.session();
    assert_ne!(a, b);
    for id in [&a, &b] {
        assert!(id.len() >= 22 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-'), "{id}");
    }
}

#[test]
fn greeting_matches_example_reply() {
    let s = start(false, 1 << 20);
    let id = s.session();
    let (status, turn) = json_outcome(s.chat(&id, "Hi!"));
    assert_eq!(status, 200);
    assert_eq!(turn["agent_text"], "Hello! How can I assist you today?");
    assert_eq!(turn["question_type"], "GENERIC");
    assert!(turn["sql"].is_null());
    assert!(turn.get("stage_trace").is_none(), "trace hidden without debug");
}

#[test]
fn example_conversation_over_http() {
    let s = start(true, 1 << 20);
    let id = s.session();
    let prompts = [
        ("Hi!", "Hello! How can I assist you today?"),
        (
            "What is the data about?",
            "The NRC publication dataset contains information about publications at the National Research Council of Canada. It includes details such as titles ...",
        ),
        (
            "Give me the challenge program of this publication.",
            "The challenge program for the publication \"A Study on the Use of Intake Flow Path Modification to Reduce Methane Slip of a Natural Gas-Diesel Dual-Fuel Engine\" is \"Materials for Clean Fuels\".",
        ),
        ("About this author, how many publications were written?", "Alysa has not written any publications."),
    ];
    for (prompt, reply) in prompts {
        let (status, turn) = json_outcome(s.chat(&id, prompt));
        assert_eq!(status, 200);
        assert_eq!(turn["agent_text"], reply);
        assert!(turn["stage_trace"].is_array(), "debug includes the trace");
    }
    let (_, turn) = json_outcome(s.chat(&id, "Hi!"));
    let stages: Vec<&str> = turn["stage_trace"].as_array().unwrap().iter().map(|t| t["stage"].as_str().unwrap()).collect();
    assert_eq!(stages, ["A1", "B", "C"]);
}

#[test]
fn unknown_session_is_reported() {
    let s = start(false, 1 << 20);
    let body = assert_error(s.chat("doesnotexistdoesnotexist00", "Hi!"), 404, "SESSION_NOT_FOUND");
    assert_eq!(body["retryable"], false);
    assert_error(s.upload("doesnotexistdoesnotexist00", two_rows().as_bytes()), 404, "SESSION_NOT_FOUND");
    assert_error(s.export("doesnotexistdoesnotexist00"), 404, "SESSION_NOT_FOUND");
}

#[test]
fn chat_input_is_validated() {
    let s = start(false, 1 << 20);
    let id = s.session();
    assert_error(s.chat(&id, &"x".repeat(10 * 1024)), 413, "TEXT_TOO_LONG");
    // At the limit the text is accepted; the script has no reply for it, so
    // the turn carries a provider notice.
    let (status, turn) = json_outcome(s.chat(&id, &"x".repeat(MAX_TEXT_BYTES)));
    assert_eq!(status, 200);
    assert_eq!(turn["error_code"], "MOCK_NO_MATCH");
    assert_error(s.chat(&id, "   \n"), 400, "EMPTY_TEXT");
    assert_error(
        ureq::post(&format!("{}/api/sessions/{id}/chat", s.base)).send_string("not json"),
        400,
        "BAD_REQUEST",
    );
    assert_error(ureq::get(&format!("{}/api/nothing", s.base)).call(), 404, "NOT_FOUND");
}

#[test]
fn upload_inserts_then_updates() {
    let s = start(false, 1 << 20);
    let id = s.session();
    let csv = two_rows();
    let (status, first) = json_outcome(s.upload(&id, csv.as_bytes()));
    assert_eq!(status, 200, "{first}");
    assert_eq!(first["kind"], "INGEST");
    assert_eq!(first["report"]["rows_read"], 2);
    assert_eq!(first["report"]["rows_inserted"], 2);
    assert_eq!(first["report"]["rows_with_ground_truth"], 2);
    assert!(first["agent_text"].as_str().unwrap().starts_with("Upload complete."));

    let (_, second) = json_outcome(s.upload(&id, csv.as_bytes()));
    assert_eq!(second["report"]["rows_inserted"], 0);
    assert_eq!(second["report"]["rows_updated"], 2);

    let (_, health) = json_outcome(ureq::get(&format!("{}/api/health", s.base)).call());
    assert_eq!(health, json!({ "status": "ok", "publications": 12 }));
}

#[test]
fn malformed_upload_is_a_turn_not_a_failure() {
    let s = start(false, 1 << 20);
    let id = s.session();
    let (status, turn) = json_outcome(s.upload(&id, b"title,year\nx,2020\n"));
    assert_eq!(status, 200);
    assert_eq!(turn["error_code"], "HEADER_MISSING_REQUIRED");
    let (_, turn) = json_outcome(s.upload(&id, b""));
    assert_eq!(turn["error_code"], "EMPTY_INPUT");
    assert_error(
        ureq::post(&format!("{}/api/sessions/{id}/upload", s.base))
            .set("Content-Type", "image/png")
            .send_bytes(b"x"),
        415,
        "UNSUPPORTED_MEDIA_TYPE",
    );
}

#[test]
fn oversize_upload_is_rejected() {
    let s = start(false, 1024);
    let id = s.session();
    let big = format!("{HEADER}{}", "x".repeat(4096));
    assert_error(s.upload(&id, big.as_bytes()), 413, "PAYLOAD_TOO_LARGE");
    // Chunked, so the limit applies while streaming rather than from the header.
    let chunked = ureq::post(&format!("{}/api/sessions/{id}/upload", s.base))
        .set("Content-Type", "text/csv")
        .send(std::io::Cursor::new(big.into_bytes()));
    assert_error(chunked, 413, "PAYLOAD_TOO_LARGE");
    assert_eq!(s.orchestrator.store().publication_count().unwrap(), 10);
}

#[test]
fn export_returns_last_result() {
    let s = start(false, 1 << 20);
    let id = s.session();
    for p in ["Hi!", "What is the data about?", "Give me the challenge program of this publication."] {
        s.chat(&id, p).unwrap();
    }
    let (status, resp) = outcome(s.export(&id));
    assert_eq!(status, 200);
    assert!(resp.header("content-type").unwrap().starts_with("text/csv"));
    let disposition = resp.header("content-disposition").unwrap().to_string();
    assert!(disposition.starts_with("attachment; filename=\"pubbie-export-") && disposition.ends_with(".csv\""));
    assert!(resp.header("x-export-summary").unwrap().contains("Exported 1 row(s)"));
    let mut bytes = Vec::new();
    resp.into_reader().read_to_end(&mut bytes).unwrap();
    assert_eq!(bytes, b"prog\nMaterials for Clean Fuels\n");

    let store = s.orchestrator.store();
    let table = store.last_result(&id).unwrap().unwrap();
    assert_eq!(bytes, store.export_csv(&table));
}

#[test]
fn export_without_result_is_a_conflict() {
    let s = start(false, 1 << 20);
    let id = s.session();
    assert_error(s.export(&id), 409, "NO_RESULT_TO_EXPORT");
    s.chat(&id, "Hi!").unwrap();
    assert_error(s.export(&id), 409, "NO_RESULT_TO_EXPORT");
}

#[test]
fn health_endpoints() {
    let s = start(false, 1 << 20);
    let (status, resp) = outcome(ureq::get(&format!("{}/health", s.base)).call());
    assert_eq!((status, resp.into_string().unwrap().as_str()), (200, "ok"));
    let (_, body) = json_outcome(ureq::get(&format!("{}/api/health", s.base)).call());
    assert_eq!(body["publications"], 10);
}
