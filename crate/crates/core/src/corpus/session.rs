use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

use super::vocab::{Vocabulary, EOS, PAD};

/// A tokenized session as read from disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextSession {
    pub context: Vec<Vec<String>>,
    pub response: Vec<String>,
}

/// Context utterances and gold response as token ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DialogueSession {
    pub context: Vec<Vec<u32>>,
    pub response: Vec<u32>,
}

#[derive(Deserialize)]
struct SessionRecord {
    context: Vec<String>,
    response: String,
}

pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    text.split_whitespace()
        .map(|t| if lowercase { t.to_lowercase() } else { t.to_string() })
        .collect()
}

/// Reads a line-delimited sessions file. Blank lines are ignored.
pub fn load_sessions(path: &Path, lowercase: bool) -> Result<Vec<TextSession>> {
    let text = std::fs::read_to_string(path)?;
    parse_sessions(&text, path, lowercase)
}

pub fn parse_sessions(text: &str, source: &Path, lowercase: bool) -> Result<Vec<TextSession>> {
    let err = |line: usize, message: String| Error::Parse {
        path: source.to_path_buf(),
        line,
        message,
    };
    let mut sessions = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record: SessionRecord =
            serde_json::from_str(raw).map_err(|e| err(line, e.to_string()))?;
        if record.context.is_empty() {
            return Err(Error::Validation(format!("line {line}: empty context")));
        }
        let context: Vec<Vec<String>> = record
            .context
            .iter()
            .map(|u| tokenize(u, lowercase))
            .collect();
        if let Some(k) = context.iter().position(Vec::is_empty) {
            return Err(Error::Validation(format!(
                "line {line}: context utterance {k} is empty"
            )));
        }
        let response = tokenize(&record.response, lowercase);
        if response.is_empty() {
            return Err(Error::Validation(format!("line {line}: empty response")));
        }
        sessions.push(TextSession { context, response });
    }
    Ok(sessions)
}

/// Truncates to `pad_len - 1` ids (keeping the head), appends `EOS`, then fills with `PAD`.
pub fn pad_utterance(ids: &[u32], pad_len: usize) -> Vec<u32> {
    assert!(pad_len >= 2, "pad_len must be at least 2");
    let keep = ids.len().min(pad_len - 1);
    let mut out = Vec::with_capacity(pad_len);
    out.extend_from_slice(&ids[..keep]);
    out.push(EOS);
    out.resize(pad_len, PAD);
    out
}

impl DialogueSession {
    pub fn encode(session: &TextSession, vocab: &Vocabulary) -> Self {
        DialogueSession {
            context: session.context.iter().map(|u| vocab.encode(u)).collect(),
            response: vocab.encode(&session.response),
        }
    }

    /// Pads every utterance and the response to `pad_len`.
    pub fn padded(&self, pad_len: usize) -> Self {
        DialogueSession {
            context: self
                .context
                .iter()
                .map(|u| pad_utterance(u, pad_len))
                .collect(),
            response: pad_utterance(&self.response, pad_len),
        }
    }
}
