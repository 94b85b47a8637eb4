use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    ChatProvider, EmbeddingProvider, FinishReason, Message, ProviderError, StageCompletion,
    StageRequest,
};
use crate::classifier::EMBEDDING_DIM;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenAiConfig {
    /// Base URL; `/chat/completions` and `/embeddings` are appended.
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub model: String,
    pub embed_model: String,
    pub timeout_ms: u64,
    /// Extra attempts after a transport failure. HTTP error statuses are
    /// never retried.
    pub retries: u32,
}

impl Default for OpenAiConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            model: "gpt-35-turbo".into(),
            embed_model: "text-embedding-768".into(),
            timeout_ms: 30_000,
            retries: 2,
        }
    }
}

pub struct OpenAiClient {
    config: OpenAiConfig,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: Option<usize>,
    embedding: Vec<f64>,
}

impl OpenAiClient {
    pub fn new(config: OpenAiConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build();
        Self { config, agent }
    }

    pub fn config(&self) -> &OpenAiConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{path}", self.config.endpoint.trim_end_matches('/'))
    }

    fn post(&self, path: &str, body: &serde_json::Value) -> Result<String, ProviderError> {
        let url = self.url(path);
        let key = std::env::var(&self.config.api_key_env).ok();
        let mut attempt = 0;
        loop {
            let mut request = self.agent.post(&url).set("Content-Type", "application/json");
            if let Some(key) = &key {
                request = request
                    .set("Authorization", &format!("Bearer {key}"))
                    .set("api-key", key);
            }
            match request.send_json(body) {
                Ok(response) => {
                    return response
                        .into_string()
                        .map_err(|e| ProviderError::BadResponse(e.to_string()));
                }
                Err(ureq::Error::Status(status, response)) => {
                    let body = response.into_string().unwrap_or_default();
                    return Err(ProviderError::Status {
                        status,
                        body: body.chars().take(500).collect(),
                    });
                }
                Err(ureq::Error::Transport(e)) => {
                    if attempt >= self.config.retries {
                        return Err(ProviderError::Unreachable(e.to_string()));
                    }
                    attempt += 1;
                    tracing::warn!(%url, attempt, error = %e, "provider transport error, retrying");
                    std::thread::sleep(Duration::from_millis(100 * u64::from(attempt)));
                }
            }
        }
    }
}

impl ChatProvider for OpenAiClient {
    fn complete(&self, request: &StageRequest) -> Result<StageCompletion, ProviderError> {
        request.validate()?;
        let messages: Vec<&Message> = request.messages.iter().collect();
        let body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let started = Instant::now();
        let raw = self.post("chat/completions", &body)?;
        let parsed: ChatResponse =
            serde_json::from_str(&raw).map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ProviderError::BadResponse("no choices".into()))?;
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("length") => FinishReason::Length,
            _ => FinishReason::Stop,
        };
        Ok(StageCompletion {
            text: choice.message.content.unwrap_or_default(),
            finish_reason,
            provider_latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

impl EmbeddingProvider for OpenAiClient {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::InvalidRequest("no texts to embed".into()));
        }
        let body = json!({ "model": self.config.embed_model, "input": texts });
        let raw = self.post("embeddings", &body)?;
        let parsed: EmbeddingResponse =
            serde_json::from_str(&raw).map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        if parsed.data.len() != texts.len() {
            return Err(ProviderError::BadResponse(format!(
                "{} embeddings for {} inputs",
                parsed.data.len(),
                texts.len()
            )));
        }
        let mut data = parsed.data;
        data.sort_by_key(|d| d.index.unwrap_or(usize::MAX));
        data.into_iter()
            .map(|d| {
                if d.embedding.len() != EMBEDDING_DIM {
                    return Err(ProviderError::DimensionMismatch {
                        expected: EMBEDDING_DIM,
                        found: d.embedding.len(),
                    });
                }
                Ok(d.embedding)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;

    use super::*;
    use crate::llm::{Message, StageId};

    /// Serves each canned `(status, body)` once and reports the request
    /// bodies it saw.
    fn stub(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut length = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap();
                    }
                }
                let mut request = vec![0; length];
                reader.read_exact(&mut request).unwrap();
                tx.send(String::from_utf8(request).unwrap()).unwrap();
                let mut stream = reader.into_inner();
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (format!("http://{addr}/v1"), rx)
    }

    fn client(endpoint: String) -> OpenAiClient {
        OpenAiClient::new(OpenAiConfig {
            endpoint,
            api_key_env: "PUBBIE_TEST_UNSET_KEY".into(),
            timeout_ms: 5_000,
            retries: 0,
            ..OpenAiConfig::default()
        })
    }

    fn request() -> StageRequest {
        StageRequest::new(StageId::B, vec![Message::system("classify"), Message::user("Hi!")])
    }

    #[test]
    fn chat_completion_against_stub() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"GENERIC"},"finish_reason":"stop"}]}"#;
        let (url, seen) = stub(vec![(200, body.into())]);
        let completion = client(url).complete(&request()).unwrap();
        assert_eq!(completion.text, "GENERIC");
        assert_eq!(completion.finish_reason, FinishReason::Stop);
        let sent: serde_json::Value = serde_json::from_str(&seen.recv().unwrap()).unwrap();
        assert_eq!(sent["max_tokens"], 8);
        assert_eq!(sent["messages"][0]["role"], "system");
        assert_eq!(sent["messages"][1]["content"], "Hi!");
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, seen) = stub(vec![(400, r#"{"error":"bad"}"#.into())]);
        let mut c = client(url);
        c.config.retries = 3;
        let err = c.complete(&request()).unwrap_err();
        assert!(matches!(err, ProviderError::Status { status: 400, .. }));
        assert!(!err.retryable());
        seen.recv().unwrap();
        assert!(seen.try_recv().is_err());
    }

    #[test]
    fn unreachable_endpoint() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let err = client(format!("http://127.0.0.1:{port}/v1")).complete(&request()).unwrap_err();
        assert_eq!(err.code(), "PROVIDER_UNREACHABLE");
    }

    #[test]
    fn embeddings_are_reordered_and_width_checked() {
        let v = |x: f64| serde_json::to_string(&vec![x; EMBEDDING_DIM]).unwrap();
        let body = format!(
            r#"{{"data":[{{"index":1,"embedding":{}}},{{"index":0,"embedding":{}}}]}}"#,
            v(2.0),
            v(1.0)
        );
        let narrow = format!(r#"{{"data":[{{"index":0,"embedding":{}}}]}}"#, serde_json::to_string(&vec![0.0; 512]).unwrap());
        let (url, _seen) = stub(vec![(200, body), (200, narrow)]);
        let c = client(url);
        let out = c.embed(&["a", "b"]).unwrap();
        assert_eq!(out[0][0], 1.0);
        assert_eq!(out[1][0], 2.0);
        assert_eq!(c.embed(&["a"]).unwrap_err().code(), "DIMENSION_MISMATCH");
    }
}
