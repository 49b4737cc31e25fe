use serde::{Deserialize, Serialize};

use super::{ChatRequest, ChatResponse, MllmError};

/// Programmed responder used in script mode.
pub trait Script: Send + Sync {
    fn respond(&self, request: &ChatRequest) -> Result<ChatResponse, MllmError>;
}

impl<F> Script for F
where
    F: Fn(&ChatRequest) -> Result<ChatResponse, MllmError> + Send + Sync,
{
    fn respond(&self, request: &ChatRequest) -> Result<ChatResponse, MllmError> {
        self(request)
    }
}

/// Declarative script: the first rule whose substrings all occur in the
/// request's text parts wins; otherwise `default` is returned.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScriptRules {
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
    #[serde(default)]
    pub default: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptRule {
    pub contains: Vec<String>,
    pub text: String,
}

impl ScriptRules {
    /// Always answers `text`.
    pub fn constant(text: impl Into<String>) -> Self {
        ScriptRules {
            rules: Vec::new(),
            default: Some(text.into()),
        }
    }

    pub fn rule(mut self, contains: &[&str], text: impl Into<String>) -> Self {
        self.rules.push(ScriptRule {
            contains: contains.iter().map(|s| s.to_string()).collect(),
            text: text.into(),
        });
        self
    }
}

impl Script for ScriptRules {
    fn respond(&self, request: &ChatRequest) -> Result<ChatResponse, MllmError> {
        let haystack = request.text_content();
        self.rules
            .iter()
            .find(|r| r.contains.iter().all(|c| haystack.contains(c.as_str())))
            .map(|r| r.text.clone())
            .or_else(|| self.default.clone())
            .map(ChatResponse::complete)
            .ok_or_else(|| MllmError::Script("no rule matched and no default".into()))
    }
}
