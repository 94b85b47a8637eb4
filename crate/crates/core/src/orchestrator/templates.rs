//! Prompt templates, one text file per stage.
//!
//! ```text
//! # comment lines before the first section are ignored
//! [system]
//! ... {schema} ...
//! [example.input]
//! ...
//! [example.output]
//! ...
//! [user]
//! {user_prompt}
//! ```
//!
//! Slots are `{history}`, `{user_prompt}`, `{schema}`, `{context}` and
//! `{labels}`; `{{` and `}}` are literal braces. Any other `{word}` is a load
//! error so that typos do not reach the model.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use thiserror::Error;

use crate::llm::{Message, StageId};

pub const SLOTS: [&str; 5] = ["history", "user_prompt", "schema", "context", "labels"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("TEMPLATE_ERROR: {stage} template line {line}: {message}")]
    Parse { stage: StageId, line: usize, message: String },
    #[error("UNBOUND_SLOT: {stage} template needs {{{slot}}}")]
    UnboundSlot { stage: StageId, slot: String },
    #[error("TEMPLATE_ERROR: cannot read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Text(Vec<Piece>);

impl Text {
    fn parse(raw: &str) -> Result<Self, String> {
        let mut pieces = Vec::new();
        let mut literal = String::new();
        let mut rest = raw;
        while let Some(c) = rest.chars().next() {
            if rest.starts_with("{{") || rest.starts_with("}}") {
                literal.push(c);
                rest = &rest[2..];
                continue;
            }
            if c == '{' {
                let name_len = rest[1..]
                    .find(|ch: char| !(ch.is_ascii_alphanumeric() || ch == '_'))
                    .unwrap_or(rest.len() - 1);
                if name_len > 0 && rest[1 + name_len..].starts_with('}') {
                    let name = &rest[1..1 + name_len];
                    let slot = SLOTS
                        .iter()
                        .find(|s| **s == name)
                        .ok_or_else(|| format!("unknown slot {{{name}}}"))?;
                    if !literal.is_empty() {
                        pieces.push(Piece::Text(std::mem::take(&mut literal)));
                    }
                    pieces.push(Piece::Slot(slot));
                    rest = &rest[name_len + 2..];
                    continue;
                }
            }
            literal.push(c);
            rest = &rest[c.len_utf8()..];
        }
        if !literal.is_empty() {
            pieces.push(Piece::Text(literal));
        }
        Ok(Self(pieces))
    }

    fn slots(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.0.iter().filter_map(|p| match p {
            Piece::Slot(s) => Some(*s),
            Piece::Text(_) => None,
        })
    }

    fn render(&self, stage: StageId, bindings: &Bindings) -> Result<String, TemplateError> {
        let mut out = String::new();
        for piece in &self.0 {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(s) => out.push_str(bindings.get(s).ok_or_else(|| TemplateError::UnboundSlot {
                    stage,
                    slot: s.to_string(),
                })?),
            }
        }
        Ok(out)
    }
}

/// Slot values for one rendering.
#[derive(Debug, Clone, Default)]
pub struct Bindings(BTreeMap<&'static str, String>);

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics on a name outside [`SLOTS`].
    pub fn with(mut self, slot: &str, value: impl Into<String>) -> Self {
        let slot = SLOTS
            .iter()
            .find(|s| **s == slot)
            .unwrap_or_else(|| panic!("unknown slot {slot}"));
        self.0.insert(slot, value.into());
        self
    }

    fn get(&self, slot: &str) -> Option<&str> {
        self.0.get(slot).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    stage: StageId,
    system: Text,
    user: Text,
    examples: Vec<(String, String)>,
}

impl PromptTemplate {
    pub fn parse(stage: StageId, source: &str) -> Result<Self, TemplateError> {
        let mut sections: Vec<(String, usize, Vec<&str>)> = Vec::new();
        for (i, line) in source.lines().enumerate() {
            let trimmed = line.trim_end();
            if trimmed.starts_with('[') && trimmed.ends_with(']') && !trimmed.contains(' ') {
                sections.push((trimmed[1..trimmed.len() - 1].to_string(), i + 1, Vec::new()));
            } else if let Some((_, _, body)) = sections.last_mut() {
                body.push(line);
            } else if !(trimmed.is_empty() || trimmed.starts_with('#')) {
                return Err(TemplateError::Parse {
                    stage,
                    line: i + 1,
                    message: "text before the first section".into(),
                });
            }
        }

        let error = |line: usize, message: &str| TemplateError::Parse {
            stage,
            line,
            message: message.to_string(),
        };
        let mut system = None;
        let mut user = None;
        let mut examples = Vec::new();
        let mut pending_input: Option<(String, usize)> = None;
        for (name, line, body) in sections {
            let text = body.join("\n").trim_matches('\n').to_string();
            match name.as_str() {
                "system" | "user" => {
                    let parsed = Text::parse(&text).map_err(|m| error(line, &m))?;
                    let slot = if name == "system" { &mut system } else { &mut user };
                    if slot.replace(parsed).is_some() {
                        return Err(error(line, "duplicate section"));
                    }
                }
                "example.input" => {
                    if pending_input.is_some() {
                        return Err(error(line, "example input without output"));
                    }
                    pending_input = Some((text, line));
                }
                "example.output" => {
                    let (input, _) = pending_input.take().ok_or_else(|| error(line, "example output without input"))?;
                    examples.push((input, text));
                }
                other => return Err(error(line, &format!("unknown section [{other}]"))),
            }
        }
        if let Some((_, line)) = pending_input {
            return Err(error(line, "example input without output"));
        }
        Ok(Self {
            stage,
            system: system.ok_or_else(|| error(0, "missing [system] section"))?,
            user: user.ok_or_else(|| error(0, "missing [user] section"))?,
            examples,
        })
    }

    pub fn stage(&self) -> StageId {
        self.stage
    }

    /// Every slot the template uses.
    pub fn required_slots(&self) -> BTreeSet<&'static str> {
        self.system.slots().chain(self.user.slots()).collect()
    }

    pub fn examples(&self) -> &[(String, String)] {
        &self.examples
    }

    /// System message, the few-shot pairs as user/assistant turns, then the
    /// rendered user message.
    pub fn render(&self, bindings: &Bindings) -> Result<Vec<Message>, TemplateError> {
        let mut messages = vec![Message::system(self.system.render(self.stage, bindings)?)];
        for (input, output) in &self.examples {
            messages.push(Message::user(input.clone()));
            messages.push(Message::assistant(output.clone()));
        }
        messages.push(Message::user(self.user.render(self.stage, bindings)?));
        Ok(messages)
    }
}

fn file_name(stage: StageId) -> String {
    format!("{}.txt", stage.as_str().to_ascii_lowercase())
}

fn default_source(stage: StageId) -> &'static str {
    match stage {
        StageId::A1 => include_str!("../../templates/a1.txt"),
        StageId::A2 => include_str!("../../templates/a2.txt"),
        StageId::B => include_str!("../../templates/b.txt"),
        StageId::C => include_str!("../../templates/c.txt"),
        StageId::D => include_str!("../../templates/d.txt"),
        StageId::E => include_str!("../../templates/e.txt"),
    }
}

#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: HashMap<StageId, PromptTemplate>,
}

impl TemplateRegistry {
    /// The built-in templates.
    pub fn defaults() -> Self {
        let templates = StageId::ALL
            .into_iter()
            .map(|stage| {
                let t = PromptTemplate::parse(stage, default_source(stage)).expect("built-in template parses");
                (stage, t)
            })
            .collect();
        Self { templates }
    }

    /// Templates from `dir` (`a1.txt` ... `e.txt`); stages without a file
    /// keep the built-in template.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let mut registry = Self::defaults();
        for stage in StageId::ALL {
            let path = dir.as_ref().join(file_name(stage));
            if !path.exists() {
                continue;
            }
            let source = std::fs::read_to_string(&path).map_err(|e| TemplateError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            registry.templates.insert(stage, PromptTemplate::parse(stage, &source)?);
        }
        Ok(registry)
    }

    pub fn get(&self, stage: StageId) -> &PromptTemplate {
        &self.templates[&stage]
    }

    pub fn render(&self, stage: StageId, bindings: &Bindings) -> Result<Vec<Message>, TemplateError> {
        self.get(stage).render(bindings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::Role;

    #[test]
    fn defaults_parse_with_expected_slots() {
        let r = TemplateRegistry::defaults();
        let slots = |s| r.get(s).required_slots().into_iter().collect::<Vec<_>>();
        assert_eq!(slots(StageId::A1), vec!["history", "user_prompt"]);
        assert_eq!(slots(StageId::A2), vec!["history", "user_prompt"]);
        assert_eq!(slots(StageId::B), vec!["user_prompt"]);
        assert_eq!(slots(StageId::C), vec!["context", "user_prompt"]);
        assert_eq!(slots(StageId::D), vec!["labels", "schema", "user_prompt"]);
        assert_eq!(slots(StageId::E), vec!["context", "user_prompt"]);
        assert_eq!(r.get(StageId::B).examples().len(), 3);
    }

    #[test]
    fn render_orders_messages_and_fills_slots() {
        let r = TemplateRegistry::defaults();
        let messages = r
            .render(StageId::B, &Bindings::new().with("user_prompt", "Hi!"))
            .unwrap();
        assert_eq!(messages.len(), 1 + 2 * 3 + 1);
        assert_eq!(messages[0].role, Role::System);
        assert_eq!(messages[1].role, Role::User);
        assert_eq!(messages[2].role, Role::Assistant);
        assert_eq!(messages.last().unwrap().content, "Hi!");
    }

    #[test]
    fn unbound_slot_is_an_error() {
        let r = TemplateRegistry::defaults();
        let err = r.render(StageId::E, &Bindings::new().with("user_prompt", "x")).unwrap_err();
        assert_eq!(err, TemplateError::UnboundSlot { stage: StageId::E, slot: "context".into() });
    }

    #[test]
    fn braces_and_unknown_slots() {
        let t = PromptTemplate::parse(StageId::C, "[system]\n{{\"k\": {context}}} {not a slot}\n[user]\n{user_prompt}").unwrap();
        let m = t.render(&Bindings::new().with("context", "v").with("user_prompt", "q")).unwrap();
        assert_eq!(m[0].content, "{\"k\": v} {not a slot}");
        let err = PromptTemplate::parse(StageId::C, "[system]\n{contxt}\n[user]\nx").unwrap_err();
        assert!(matches!(err, TemplateError::Parse { line: 1, .. }));
        assert!(PromptTemplate::parse(StageId::C, "[system]\nx").is_err());
        assert!(PromptTemplate::parse(StageId::C, "[system]\nx\n[example.input]\nq\n[user]\ny").is_err());
    }

    #[test]
    fn directory_overrides_single_stage() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("b.txt"), "[system]\nroute\n[user]\n>> {user_prompt}").unwrap();
        let r = TemplateRegistry::load_dir(dir.path()).unwrap();
        let m = r.render(StageId::B, &Bindings::new().with("user_prompt", "Hi!")).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[1].content, ">> Hi!");
        assert_eq!(r.get(StageId::C), TemplateRegistry::defaults().get(StageId::C));
    }
}
