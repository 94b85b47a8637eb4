use super::GuardError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    /// Bare identifier or keyword, as written.
    Word(String),
    /// `"double quoted"` identifier, unescaped.
    QuotedIdent(String),
    /// `'single quoted'` string literal, unescaped.
    Str(String),
    Number(String),
    Sym(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Token {
    pub tok: Tok,
    /// Character offset into the guarded text.
    pub pos: usize,
}

impl Token {
    pub fn is_word(&self, kw: &str) -> bool {
        matches!(&self.tok, Tok::Word(w) if w.eq_ignore_ascii_case(kw))
    }

    pub fn is_sym(&self, sym: &str) -> bool {
        matches!(&self.tok, Tok::Sym(s) if *s == sym)
    }
}

const SYMBOLS: [&str; 19] = [
    "==", "!=", "<>", "<=", ">=", "||", "(", ")", ",", ".", ";", "*", "+", "-", "/", "%", "=", "<",
    ">",
];

/// Splits SQL text into tokens. Comments are skipped; anything outside the
/// supported lexical subset (blob literals, parameters, backticks, brackets)
/// is a syntax error.
pub(crate) fn tokenize(text: &str) -> Result<Vec<Token>, GuardError> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '-' && chars.get(i + 1) == Some(&'-') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            let start = i;
            i += 2;
            loop {
                if i + 1 >= chars.len() {
                    return Err(GuardError::syntax(start, "unterminated comment"));
                }
                if chars[i] == '*' && chars[i + 1] == '/' {
                    i += 2;
                    break;
                }
                i += 1;
            }
            continue;
        }
        let start = i;
        if c == '\'' || c == '"' {
            let (value, next) = quoted(&chars, i, c)?;
            let tok = if c == '\'' {
                Tok::Str(value)
            } else {
                Tok::QuotedIdent(value)
            };
            tokens.push(Token { tok, pos: start });
            i = next;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let next = number(&chars, i)?;
            tokens.push(Token {
                tok: Tok::Number(chars[i..next].iter().collect()),
                pos: start,
            });
            i = next;
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            tokens.push(Token {
                tok: Tok::Word(chars[start..i].iter().collect()),
                pos: start,
            });
            continue;
        }
        let sym = SYMBOLS.iter().find(|s| {
            s.chars()
                .enumerate()
                .all(|(k, sc)| chars.get(i + k) == Some(&sc))
        });
        match sym {
            Some(s) => {
                tokens.push(Token {
                    tok: Tok::Sym(s),
                    pos: start,
                });
                i += s.chars().count();
            }
            None => return Err(GuardError::syntax(start, format!("unexpected character {c:?}"))),
        }
    }
    Ok(tokens)
}

fn quoted(chars: &[char], start: usize, quote: char) -> Result<(String, usize), GuardError> {
    let mut value = String::new();
    let mut i = start + 1;
    loop {
        match chars.get(i) {
            None => return Err(GuardError::syntax(start, "unterminated quoted text")),
            Some(&c) if c == quote => {
                if chars.get(i + 1) == Some(&quote) {
                    value.push(quote);
                    i += 2;
                } else {
                    return Ok((value, i + 1));
                }
            }
            Some(&c) => {
                value.push(c);
                i += 1;
            }
        }
    }
}

fn number(chars: &[char], start: usize) -> Result<usize, GuardError> {
    let mut i = start;
    while i < chars.len() && chars[i].is_ascii_digit() {
        i += 1;
    }
    if chars.get(i) == Some(&'.') {
        i += 1;
        while i < chars.len() && chars[i].is_ascii_digit() {
            i += 1;
        }
    }
    if matches!(chars.get(i), Some('e' | 'E')) {
        let mut j = i + 1;
        if matches!(chars.get(j), Some('+' | '-')) {
            j += 1;
        }
        if !chars.get(j).is_some_and(|d| d.is_ascii_digit()) {
            return Err(GuardError::syntax(start, "malformed number"));
        }
        while j < chars.len() && chars[j].is_ascii_digit() {
            j += 1;
        }
        i = j;
    }
    if chars.get(i).is_some_and(|c| c.is_alphanumeric() || *c == '_') {
        return Err(GuardError::syntax(start, "malformed number"));
    }
    Ok(i)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(text: &str) -> Vec<Tok> {
        tokenize(text).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn doubled_quotes_unescape() {
        assert_eq!(kinds("'it''s'"), vec![Tok::Str("it's".into())]);
        assert_eq!(kinds("\"a\"\"b\""), vec![Tok::QuotedIdent("a\"b".into())]);
    }

    #[test]
    fn semicolon_inside_string_is_not_a_symbol() {
        let toks = kinds("SELECT 'a;b';");
        assert_eq!(toks.iter().filter(|t| **t == Tok::Sym(";")).count(), 1);
    }

    #[test]
    fn comments_are_skipped() {
        assert_eq!(kinds("a -- c\n b /* x */ c").len(), 3);
        assert!(tokenize("a /* open").is_err());
    }

    #[test]
    fn longest_symbol_wins() {
        assert_eq!(kinds("a<=b"), vec![Tok::Word("a".into()), Tok::Sym("<="), Tok::Word("b".into())]);
        assert_eq!(kinds("a<>b")[1], Tok::Sym("<>"));
    }

    #[test]
    fn rejects_parameters_and_brackets() {
        assert!(tokenize("SELECT ?").is_err());
        assert!(tokenize("SELECT [x]").is_err());
        assert!(tokenize("SELECT `x`").is_err());
        assert!(tokenize("SELECT 12abc").is_err());
    }

    #[test]
    fn positions_are_character_offsets() {
        let toks = tokenize("é 'x'").unwrap();
        assert_eq!(toks[1].pos, 2);
    }
}
