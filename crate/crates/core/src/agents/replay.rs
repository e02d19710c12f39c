//! Transcript recording and byte-deterministic replay.
//!
//! A transcript is JSON lines, one [`TranscriptEntry`] per call. Replay looks requests up
//! by a SHA-256 key over the full message list and serves the recorded responses for that
//! key in file order. Requests with no recording, or more calls than were recorded, are
//! errors.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::llm::{Completion, LlmClient, LlmError, Message};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub model: String,
    pub messages: Vec<Message>,
    pub response: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// Replay lookup key for a request.
pub fn request_key(messages: &[Message]) -> String {
    let json = serde_json::to_string(messages).expect("messages serialize");
    hex::encode(Sha256::digest(json.as_bytes()))
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptEntry>, LlmError> {
    let file = File::open(path).map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line)
            .map_err(|e| LlmError::Transcript(format!("{}:{}: {e}", path.display(), i + 1)))?;
        entries.push(entry);
    }
    Ok(entries)
}

pub struct ReplayClient {
    model: String,
    responses: HashMap<String, Vec<Completion>>,
    served: Mutex<BTreeMap<String, usize>>,
}

impl ReplayClient {
    pub fn new(entries: Vec<TranscriptEntry>) -> ReplayClient {
        let model = entries.first().map(|e| e.model.clone()).unwrap_or_else(|| "replay".to_string());
        let mut responses: HashMap<String, Vec<Completion>> = HashMap::new();
        for entry in entries {
            responses.entry(request_key(&entry.messages)).or_default().push(Completion {
                text: entry.response,
                input_tokens: entry.input_tokens,
                output_tokens: entry.output_tokens,
            });
        }
        ReplayClient { model, responses, served: Mutex::new(BTreeMap::new()) }
    }

    pub fn from_path(path: &Path) -> Result<ReplayClient, LlmError> {
        Ok(ReplayClient::new(read_transcript(path)?))
    }

    /// Number of recorded calls never served.
    pub fn unserved(&self) -> usize {
        let served = self.served.lock().expect("replay lock");
        self.responses.iter().map(|(k, v)| v.len() - served.get(k).copied().unwrap_or(0)).sum()
    }
}

impl LlmClient for ReplayClient {
    fn chat(&self, messages: &[Message]) -> Result<Completion, LlmError> {
        let key = request_key(messages);
        let Some(queue) = self.responses.get(&key) else {
            let preview = messages.last().map(|m| m.content.chars().take(80).collect()).unwrap_or_default();
            return Err(LlmError::ReplayMiss { key, preview });
        };
        let mut served = self.served.lock().expect("replay lock");
        let count = served.entry(key.clone()).or_insert(0);
        let Some(completion) = queue.get(*count) else {
            return Err(LlmError::ReplayExhausted { key, served: *count });
        };
        *count += 1;
        Ok(completion.clone())
    }

    fn model_id(&self) -> &str {
        &self.model
    }

    fn cursor(&self) -> Option<serde_json::Value> {
        let served = self.served.lock().expect("replay lock");
        Some(serde_json::to_value(&*served).expect("cursor serializes"))
    }

    fn restore_cursor(&self, cursor: &serde_json::Value) -> Result<(), LlmError> {
        let restored: BTreeMap<String, usize> =
            serde_json::from_value(cursor.clone()).map_err(|e| LlmError::Transcript(format!("bad replay cursor: {e}")))?;
        *self.served.lock().expect("replay lock") = restored;
        Ok(())
    }
}

/// Wraps a client and appends every exchange to a transcript file.
pub struct RecordingClient<C> {
    inner: C,
    path: PathBuf,
    file: Mutex<File>,
}

impl<C: LlmClient> RecordingClient<C> {
    pub fn new(inner: C, path: &Path) -> Result<RecordingClient<C>, LlmError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))?;
        Ok(RecordingClient { inner, path: path.to_path_buf(), file: Mutex::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn into_inner(self) -> C {
        self.inner
    }
}

impl<C: LlmClient> LlmClient for RecordingClient<C> {
    fn chat(&self, messages: &[Message]) -> Result<Completion, LlmError> {
        let completion = self.inner.chat(messages)?;
        let entry = TranscriptEntry {
            model: self.inner.model_id().to_string(),
            messages: messages.to_vec(),
            response: completion.text.clone(),
            input_tokens: completion.input_tokens,
            output_tokens: completion.output_tokens,
        };
        let mut line = serde_json::to_string(&entry).expect("entry serializes");
        line.push('\n');
        let mut file = self.file.lock().expect("transcript lock");
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| LlmError::Transcript(format!("{}: {e}", self.path.display())))?;
        Ok(completion)
    }

    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn cursor(&self) -> Option<serde_json::Value> {
        self.inner.cursor()
    }

    fn restore_cursor(&self, cursor: &serde_json::Value) -> Result<(), LlmError> {
        self.inner.restore_cursor(cursor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(prompt: &str, response: &str) -> TranscriptEntry {
        TranscriptEntry {
            model: "m".into(),
            messages: vec![Message::user(prompt)],
            response: response.into(),
            input_tokens: 3,
            output_tokens: 2,
        }
    }

    #[test]
    fn serves_in_order_then_errors() {
        let client = ReplayClient::new(vec![entry("a", "1"), entry("b", "x"), entry("a", "2")]);
        let a = [Message::user("a")];
        assert_eq!(client.chat(&a).unwrap().text, "1");
        assert_eq!(client.chat(&a).unwrap().text, "2");
        assert!(matches!(client.chat(&a), Err(LlmError::ReplayExhausted { served: 2, .. })));
        assert!(matches!(client.chat(&[Message::user("zzz")]), Err(LlmError::ReplayMiss { .. })));
        assert_eq!(client.unserved(), 1);
    }

    #[test]
    fn cursor_restores_position() {
        let client = ReplayClient::new(vec![entry("a", "1"), entry("a", "2")]);
        let a = [Message::user("a")];
        client.chat(&a).unwrap();
        let cursor = client.cursor().unwrap();
        let fresh = ReplayClient::new(vec![entry("a", "1"), entry("a", "2")]);
        fresh.restore_cursor(&cursor).unwrap();
        assert_eq!(fresh.chat(&a).unwrap().text, "2");
    }

    #[test]
    fn recording_round_trips_through_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let source = ReplayClient::new(vec![entry("q", "answer")]);
        let recorder = RecordingClient::new(source, &path).unwrap();
        recorder.chat(&[Message::user("q")]).unwrap();
        let replay = ReplayClient::from_path(&path).unwrap();
        let c = replay.chat(&[Message::user("q")]).unwrap();
        assert_eq!((c.text.as_str(), c.input_tokens, c.output_tokens), ("answer", 3, 2));
    }
}
