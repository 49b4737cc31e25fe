//! Recovery of JSON objects from free-form model output.
//!
//! Models wrap their answers in code fences, add prose, use Python literals
//! or single quotes. [`extract_object`] finds the first `{...}` that parses
//! either as strict JSON or under the lenient grammar below.

use serde_json::{Map, Number, Value};

const MAX_DEPTH: usize = 64;

/// Returns the first JSON object found in `raw`. Fenced blocks are searched
/// before the surrounding text.
pub fn extract_object(raw: &str) -> Option<Map<String, Value>> {
    let fenced = fenced_blocks(raw);
    fenced
        .iter()
        .map(String::as_str)
        .chain(std::iter::once(raw))
        .find_map(first_object)
}

fn fenced_blocks(raw: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut rest = raw;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        // skip an info string such as `json`
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                blocks.push(body[..close].to_string());
                rest = &body[close + 3..];
            }
            None => {
                blocks.push(body.to_string());
                break;
            }
        }
    }
    blocks
}

fn first_object(text: &str) -> Option<Map<String, Value>> {
    for (start, _) in text.match_indices('{') {
        let Some(end) = balanced_end(&text[start..]) else {
            continue;
        };
        let candidate = &text[start..start + end];
        let parsed = serde_json::from_str::<Value>(candidate)
            .ok()
            .or_else(|| Lenient::new(candidate).parse_document());
        if let Some(Value::Object(map)) = parsed {
            return Some(map);
        }
    }
    None
}

/// Byte length of the balanced `{...}` at the start of `s`, honouring both
/// quote styles.
fn balanced_end(s: &str) -> Option<usize> {
    let mut depth = 0usize;
    let mut quote: Option<char> = None;
    let mut escaped = false;
    let mut prev = ' ';
    for (i, c) in s.char_indices() {
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == q {
                quote = None;
            }
            prev = c;
            continue;
        }
        match c {
            '"' => quote = Some('"'),
            // an apostrophe inside a bare word is not a quote
            '\'' if !prev.is_alphanumeric() => quote = Some('\''),
            '{' => depth += 1,
            '}' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
        prev = c;
    }
    None
}

/// Recursive-descent parser for JSON-ish text: single-quoted strings, bare
/// keys and words, missing or trailing commas, Python literals.
struct Lenient<'a> {
    chars: Vec<char>,
    pos: usize,
    _src: std::marker::PhantomData<&'a str>,
}

impl<'a> Lenient<'a> {
    fn new(src: &'a str) -> Self {
        Lenient {
            chars: src.chars().collect(),
            pos: 0,
            _src: std::marker::PhantomData,
        }
    }

    fn parse_document(mut self) -> Option<Value> {
        let v = self.value(0)?;
        self.ws();
        (self.pos == self.chars.len()).then_some(v)
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn value(&mut self, depth: usize) -> Option<Value> {
        if depth > MAX_DEPTH {
            return None;
        }
        self.ws();
        match self.peek()? {
            '{' => self.object(depth),
            '[' => self.array(depth),
            q @ ('"' | '\'') => self.string(q).map(Value::String),
            c if c == '-' || c == '+' || c == '.' || c.is_ascii_digit() => self.number(),
            _ => {
                let word = self.bare_word();
                if word.is_empty() {
                    return None;
                }
                Some(match word.as_str() {
                    "true" | "True" => Value::Bool(true),
                    "false" | "False" => Value::Bool(false),
                    "null" | "None" => Value::Null,
                    _ => Value::String(word),
                })
            }
        }
    }

    fn object(&mut self, depth: usize) -> Option<Value> {
        self.pos += 1;
        let mut map = Map::new();
        loop {
            self.ws();
            match self.peek()? {
                '}' => {
                    self.pos += 1;
                    return Some(Value::Object(map));
                }
                ',' => {
                    self.pos += 1;
                    continue;
                }
                _ => {}
            }
            let key = match self.peek()? {
                q @ ('"' | '\'') => self.string(q)?,
                _ => self.bare_key()?,
            };
            self.ws();
            if self.peek()? != ':' {
                return None;
            }
            self.pos += 1;
            let value = self.value(depth + 1)?;
            map.insert(key, value);
        }
    }

    fn array(&mut self, depth: usize) -> Option<Value> {
        self.pos += 1;
        let mut items = Vec::new();
        loop {
            self.ws();
            match self.peek()? {
                ']' => {
                    self.pos += 1;
                    return Some(Value::Array(items));
                }
                ',' => self.pos += 1,
                _ => items.push(self.value(depth + 1)?),
            }
        }
    }

    fn string(&mut self, quote: char) -> Option<String> {
        self.pos += 1;
        let mut out = String::new();
        loop {
            let c = self.peek()?;
            self.pos += 1;
            if c == quote {
                return Some(out);
            }
            if c != '\\' {
                out.push(c);
                continue;
            }
            let e = self.peek()?;
            self.pos += 1;
            match e {
                'n' => out.push('\n'),
                't' => out.push('\t'),
                'r' => out.push('\r'),
                'b' => out.push('\u{8}'),
                'f' => out.push('\u{c}'),
                'u' => {
                    let hex: String = self.chars.get(self.pos..self.pos + 4)?.iter().collect();
                    let code = u32::from_str_radix(&hex, 16).ok()?;
                    self.pos += 4;
                    out.push(char::from_u32(code).unwrap_or('\u{fffd}'));
                }
                other => out.push(other),
            }
        }
    }

    fn number(&mut self) -> Option<Value> {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_digit() || matches!(c, '-' | '+' | '.' | 'e' | 'E'))
        {
            self.pos += 1;
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        let text = text.trim_start_matches('+');
        if let Ok(i) = text.parse::<i64>() {
            return Some(Value::Number(i.into()));
        }
        let f = text.parse::<f64>().ok()?;
        Number::from_f64(f).map(Value::Number)
    }

    fn bare_key(&mut self) -> Option<String> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_alphanumeric() || c == '_' || c == '-') {
            self.pos += 1;
        }
        (self.pos > start).then(|| self.chars[start..self.pos].iter().collect())
    }

    /// A bare value runs to the next structural character.
    fn bare_word(&mut self) -> String {
        let start = self.pos;
        while self.peek().is_some_and(|c| !matches!(c, ',' | '}' | ']' | '\n')) {
            self.pos += 1;
        }
        self.chars[start..self.pos]
            .iter()
            .collect::<String>()
            .trim()
            .to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn obj(raw: &str) -> Value {
        Value::Object(extract_object(raw).expect("object"))
    }

    #[test]
    fn strict_json_passes_through() {
        assert_eq!(
            obj(r#"{"a": 1, "b": [true, null]}"#),
            json!({"a": 1, "b": [true, null]})
        );
    }

    #[test]
    fn fences_and_prose() {
        let raw = "Sure! Here {is} my answer:\n```json\n{\"a\": \"x}\"}\n```\nHope it helps {";
        assert_eq!(obj(raw), json!({"a": "x}"}));
    }

    #[test]
    fn python_flavoured_dicts() {
        let raw = "{'human_impact': True, 'damage_type': None, 'note': 'it\\'s', level: 4,}";
        assert_eq!(
            obj(raw),
            json!({"human_impact": true, "damage_type": null, "note": "it's", "level": 4})
        );
    }

    #[test]
    fn missing_commas_and_bare_words() {
        let raw = "{\n  \"damage_type\": Exterior\n  \"damage_level\": 5\n}";
        assert_eq!(obj(raw), json!({"damage_type": "Exterior", "damage_level": 5}));
    }

    #[test]
    fn prose_braces_are_skipped() {
        assert_eq!(obj("I can't {decide} {\"a\": 2}"), json!({"a": 2}));
    }

    #[test]
    fn nothing_found() {
        assert!(extract_object("no braces here").is_none());
        assert!(extract_object("{unterminated").is_none());
        assert!(extract_object(&"{".repeat(500)).is_none());
    }

    #[test]
    fn depth_limit() {
        let deep = format!("{}{}", "{\"a\":".repeat(100), "}".repeat(100));
        assert!(Lenient::new(&deep).parse_document().is_none());
    }
}
