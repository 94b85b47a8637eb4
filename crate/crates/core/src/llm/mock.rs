//! Scripted provider for offline runs and replay tests.
//!
//! Script files hold one entry per line:
//!
//! ```text
//! # comment
//! B | Hi! | GENERIC
//! E | Materials for Clean Fuels | The challenge program ... is "Materials for Clean Fuels".
//! ```
//!
//! Fields are trimmed. Inside a field `\|`, `\\`, `\n`, `\r`, `\t` escape a
//! pipe, backslash and control characters, and `\s` is a literal space (used
//! for leading or trailing blanks). An empty matcher matches every message.

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatProvider, ProviderError, StageCompletion, StageId, StageRequest};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub stage: StageId,
    /// Substring of the request's last user message.
    pub matcher: String,
    pub response: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    pub entries: Vec<ScriptEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub request: StageRequest,
    pub response: String,
}

fn escape(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    let last = field.chars().count().saturating_sub(1);
    for (i, c) in field.chars().enumerate() {
        match c {
            '|' => out.push_str("\\|"),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if c.is_whitespace() && (i == 0 || i == last) => {
                if c == ' ' {
                    out.push_str("\\s");
                } else {
                    out.push_str(&format!("\\u{{{:x}}}", c as u32));
                }
            }
            c => out.push(c),
        }
    }
    out
}

/// Splits on unescaped pipes and unescapes each field.
pub(crate) fn split_fields(line: &str) -> Result<Vec<String>, String> {
    let mut fields = vec![String::new()];
    let mut raw_fields = vec![String::new()];
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        match c {
            '|' => {
                fields.push(String::new());
                raw_fields.push(String::new());
            }
            '\\' => {
                let escaped = chars.next().ok_or("dangling backslash")?;
                let value = match escaped {
                    '|' => '|',
                    '\\' => '\\',
                    'n' => '\n',
                    'r' => '\r',
                    't' => '\t',
                    's' => ' ',
                    'u' => {
                        let rest: String = chars.by_ref().take_while(|c| *c != '}').collect();
                        let hex = rest.strip_prefix('{').ok_or("bad \\u escape")?;
                        u32::from_str_radix(hex, 16)
                            .ok()
                            .and_then(char::from_u32)
                            .ok_or("bad \\u escape")?
                    }
                    other => return Err(format!("unknown escape \\{other}")),
                };
                // The shadow gets a non-blank stand-in so trimming keeps it.
                fields.last_mut().expect("non-empty").push(value);
                raw_fields.last_mut().expect("non-empty").push('\u{0}');
            }
            c => {
                fields.last_mut().expect("non-empty").push(c);
                raw_fields.last_mut().expect("non-empty").push(c);
            }
        }
    }
    Ok(fields
        .into_iter()
        .zip(raw_fields)
        .map(|(value, raw)| {
            let chars: Vec<char> = value.chars().collect();
            let raw: Vec<char> = raw.chars().collect();
            let start = raw.iter().position(|c| !c.is_whitespace()).unwrap_or(raw.len());
            let end = raw.iter().rposition(|c| !c.is_whitespace()).map_or(start, |i| i + 1);
            chars[start..end.max(start)].iter().collect()
        })
        .collect())
}

impl MockScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, stage: StageId, matcher: impl Into<String>, response: impl Into<String>) -> &mut Self {
        self.entries.push(ScriptEntry {
            stage,
            matcher: matcher.into(),
            response: response.into(),
        });
        self
    }

    pub fn parse(text: &str) -> Result<Self, ProviderError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let error = |message: String| ProviderError::Parse { line: i + 1, message };
            let fields = split_fields(line).map_err(error)?;
            let [stage, matcher, response]: [String; 3] = fields
                .try_into()
                .map_err(|f: Vec<String>| error(format!("expected 3 fields, found {}", f.len())))?;
            entries.push(ScriptEntry {
                stage: stage.parse().map_err(error)?,
                matcher,
                response,
            });
        }
        Ok(Self { entries })
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{} | {} | {}\n", e.stage, escape(&e.matcher), escape(&e.response)))
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ProviderError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// First entry for `stage` whose matcher occurs in `message`.
    pub fn lookup(&self, stage: StageId, message: &str) -> Option<&ScriptEntry> {
        self.entries
            .iter()
            .find(|e| e.stage == stage && message.contains(e.matcher.as_str()))
    }
}

/// Deterministic [`ChatProvider`] answering from a [`MockScript`].
pub struct ScriptedMock {
    script: MockScript,
    log: Mutex<Vec<CallRecord>>,
}

impl ScriptedMock {
    pub fn new(script: MockScript) -> Self {
        Self {
            script,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        MockScript::load(path).map(Self::new)
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    pub fn call_log(&self) -> Vec<CallRecord> {
        self.log.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    /// The calls made so far, as a script whose matchers are the full last
    /// user messages.
    pub fn recorded_script(&self) -> MockScript {
        MockScript {
            entries: self
                .call_log()
                .into_iter()
                .map(|call| ScriptEntry {
                    stage: call.request.stage,
                    matcher: call.request.last_user_message().to_string(),
                    response: call.response,
                })
                .collect(),
        }
    }

    pub fn record_session(&self, path: impl AsRef<Path>) -> Result<(), ProviderError> {
        self.recorded_script().save(path)
    }
}

impl ChatProvider for ScriptedMock {
    fn complete(&self, request: &StageRequest) -> Result<StageCompletion, ProviderError> {
        request.validate()?;
        let message = request.last_user_message();
        let entry = self
            .script
            .lookup(request.stage, message)
            .ok_or_else(|| ProviderError::MockNoMatch {
                stage: request.stage,
                message: message.chars().take(200).collect(),
            })?;
        self.log.lock().unwrap_or_else(|p| p.into_inner()).push(CallRecord {
            request: request.clone(),
            response: entry.response.clone(),
        });
        Ok(StageCompletion::stop(entry.response.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::Message;

    fn request(stage: StageId, user: &str) -> StageRequest {
        StageRequest::new(stage, vec![Message::system("sys"), Message::user(user)])
    }

    #[test]
    fn scripted_answer_is_logged() {
        let mut script = MockScript::new();
        script.push(StageId::B, "Hi!", "GENERIC");
        let mock = ScriptedMock::new(script);
        assert_eq!(mock.complete(&request(StageId::B, "Hi!")).unwrap().text, "GENERIC");
        assert_eq!(mock.call_log().len(), 1);
        let err = mock.complete(&request(StageId::C, "Hi!")).unwrap_err();
        assert_eq!(err.code(), "MOCK_NO_MATCH");
        assert_eq!(mock.call_log().len(), 1);
    }

    #[test]
    fn first_match_wins() {
        let script = MockScript::parse("B | Alysa | SQL_QUERY\nB | | GENERIC\n").unwrap();
        let mock = ScriptedMock::new(script);
        assert_eq!(mock.complete(&request(StageId::B, "About Alysa?")).unwrap().text, "SQL_QUERY");
        assert_eq!(mock.complete(&request(StageId::B, "Hello")).unwrap().text, "GENERIC");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "# header\nB | a | b\nB | only two\n";
        match MockScript::parse(text) {
            Err(ProviderError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(MockScript::parse("Z | a | b"), Err(ProviderError::Parse { line: 1, .. })));
        assert_eq!(MockScript::parse("").unwrap(), MockScript::new());
    }

    #[test]
    fn escapes_round_trip() {
        let mut script = MockScript::new();
        script
            .push(StageId::D, "a|b", "SELECT 1 FROM pub\nWHERE x = '\\'")
            .push(StageId::E, " padded ", "\ttab")
            .push(StageId::A1, "", "");
        let text = script.to_text();
        assert_eq!(MockScript::parse(&text).unwrap(), script);
    }

    #[test]
    fn recorded_session_replays() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("session.script");
        let mut script = MockScript::new();
        script.push(StageId::B, "", "GENERIC").push(StageId::C, "", "Hello!");
        let mock = ScriptedMock::new(script);
        mock.complete(&request(StageId::B, "Hi!")).unwrap();
        mock.complete(&request(StageId::C, "Hi!")).unwrap();
        mock.record_session(&path).unwrap();

        let replay = ScriptedMock::from_file(&path).unwrap();
        assert_eq!(replay.script(), &mock.recorded_script());
        replay.complete(&request(StageId::B, "Hi!")).unwrap();
        replay.complete(&request(StageId::C, "Hi!")).unwrap();
        assert_eq!(replay.call_log(), mock.call_log());
    }
}
