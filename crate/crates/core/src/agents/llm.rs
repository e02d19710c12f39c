//! The chat-completion client contract shared by every agent.

use std::ops::AddAssign;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: ChatRole,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Message {
        Message { role: ChatRole::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Message {
        Message { role: ChatRole::Assistant, content: content.into() }
    }

    pub fn system(content: impl Into<String>) -> Message {
        Message { role: ChatRole::System, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// Token totals over one or more calls.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl Usage {
    pub fn of(completion: &Completion) -> Usage {
        Usage { calls: 1, input_tokens: completion.input_tokens, output_tokens: completion.output_tokens }
    }
}

impl AddAssign for Usage {
    fn add_assign(&mut self, rhs: Usage) {
        self.calls += rhs.calls;
        self.input_tokens += rhs.input_tokens;
        self.output_tokens += rhs.output_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned an unusable response: {0}")]
    Provider(String),
    #[error("no recorded response for request {key} (last message starts {preview:?})")]
    ReplayMiss { key: String, preview: String },
    #[error("recorded responses for request {key} are exhausted after {served} calls")]
    ReplayExhausted { key: String, served: usize },
    #[error("transcript: {0}")]
    Transcript(String),
    #[error("missing API key: environment variable {0} is not set")]
    MissingApiKey(String),
}

/// A chat-completion backend. Implementations must be shareable across threads so
/// independent dialogues can run concurrently.
pub trait LlmClient: Send + Sync {
    fn chat(&self, messages: &[Message]) -> Result<Completion, LlmError>;

    fn model_id(&self) -> &str;

    /// Serializable position of a stateful client (the replay cursor), saved with run
    /// checkpoints so a resumed run continues where the interrupted one stopped.
    fn cursor(&self) -> Option<serde_json::Value> {
        None
    }

    fn restore_cursor(&self, _cursor: &serde_json::Value) -> Result<(), LlmError> {
        Ok(())
    }
}

impl<T: LlmClient + ?Sized> LlmClient for &T {
    fn chat(&self, messages: &[Message]) -> Result<Completion, LlmError> {
        (**self).chat(messages)
    }

    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn cursor(&self) -> Option<serde_json::Value> {
        (**self).cursor()
    }

    fn restore_cursor(&self, cursor: &serde_json::Value) -> Result<(), LlmError> {
        (**self).restore_cursor(cursor)
    }
}

impl<T: LlmClient + ?Sized> LlmClient for Box<T> {
    fn chat(&self, messages: &[Message]) -> Result<Completion, LlmError> {
        (**self).chat(messages)
    }

    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn cursor(&self) -> Option<serde_json::Value> {
        (**self).cursor()
    }

    fn restore_cursor(&self, cursor: &serde_json::Value) -> Result<(), LlmError> {
        (**self).restore_cursor(cursor)
    }
}
