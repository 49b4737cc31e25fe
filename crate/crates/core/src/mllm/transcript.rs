use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatResponse, FinishReason, MllmError};

/// One transcript line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub tag: String,
    pub request_sha256: String,
    pub response: TranscriptResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptResponse {
    pub text: String,
    pub finish_reason: FinishReason,
}

/// Appends responses to a JSONL transcript. Each tag is written at most
/// once, including tags already present in an existing file.
pub struct TranscriptRecorder {
    path: PathBuf,
    inner: Mutex<RecorderState>,
}

struct RecorderState {
    writer: BufWriter<File>,
    written: HashSet<String>,
}

impl TranscriptRecorder {
    pub fn open(path: &Path) -> Result<Self, MllmError> {
        let io_err = |source| MllmError::Transcript {
            path: path.display().to_string(),
            source,
        };
        let written = if path.exists() {
            ReplayStore::load(path)?.tags().cloned().collect()
        } else {
            HashSet::new()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err)?;
        Ok(TranscriptRecorder {
            path: path.to_path_buf(),
            inner: Mutex::new(RecorderState {
                writer: BufWriter::new(file),
                written,
            }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn record(&self, tag: &str, request_sha256: &str, response: &ChatResponse) -> Result<(), MllmError> {
        let mut state = self.inner.lock().unwrap();
        if !state.written.insert(tag.to_string()) {
            return Ok(());
        }
        let line = TranscriptLine {
            tag: tag.to_string(),
            request_sha256: request_sha256.to_string(),
            response: TranscriptResponse {
                text: response.text.clone(),
                finish_reason: response.finish_reason,
            },
        };
        let json = serde_json::to_string(&line).expect("transcript line serializes");
        let io_err = |source| MllmError::Transcript {
            path: self.path.display().to_string(),
            source,
        };
        writeln!(state.writer, "{json}").map_err(io_err)?;
        state.writer.flush().map_err(io_err)
    }
}

/// Recorded responses keyed by request tag.
#[derive(Debug, Clone, Default)]
pub struct ReplayStore {
    responses: HashMap<String, ChatResponse>,
}

impl ReplayStore {
    pub fn load(path: &Path) -> Result<Self, MllmError> {
        let content = fs::read_to_string(path).map_err(|source| MllmError::Transcript {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&content)
    }

    pub fn parse(content: &str) -> Result<Self, MllmError> {
        let mut responses = HashMap::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TranscriptLine =
                serde_json::from_str(line).map_err(|e| MllmError::Decode(format!("transcript line {}: {e}", i + 1)))?;
            responses.entry(parsed.tag).or_insert(ChatResponse {
                text: parsed.response.text,
                finish_reason: parsed.response.finish_reason,
                latency_ms: 0,
            });
        }
        Ok(ReplayStore { responses })
    }

    pub fn get(&self, tag: &str) -> Option<&ChatResponse> {
        self.responses.get(tag)
    }

    pub fn tags(&self) -> impl Iterator<Item = &String> {
        self.responses.keys()
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}
