//! The model boundary: client contract and implementations, prompt templates, reply
//! parsing, the proposer's ranking step and the modifier's repair dialogue.

mod extract;
mod llm;
mod modifier;
pub mod prompts;
mod proposer;
mod remote;
mod replay;
mod scripted;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use extract::{block_regions, extract_block, extract_blocks, response_marker, tagged_spans, BlockRegion, ExtractError};
pub use llm::{ChatRole, Completion, LlmClient, LlmError, Message, Usage};
pub use modifier::{modifier_companion_blocks, modifier_dialogue, Attempt, CompanionOutcome, ModifyOutcome, ModifyRequest};
pub use prompts::{block_definition, render, PromptError, TemplateId};
pub use proposer::{proposer_rank, Proposal, Ranking, EXPERT_SOURCE};
pub use remote::{RemoteClient, DEFAULT_API_KEY_VAR, DEFAULT_ENDPOINT, DEFAULT_MODEL};
pub use replay::{read_transcript, request_key, RecordingClient, ReplayClient, TranscriptEntry};
pub use scripted::ScriptedClient;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("{template} reply is malformed after one reprompt: {detail}")]
    MalformedResponse { template: &'static str, detail: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// A multi-turn exchange with the model and its token totals.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub messages: Vec<Message>,
    /// Number of assistant replies.
    pub turns_used: u32,
    pub usage: Usage,
}

impl Dialogue {
    pub fn new(prompt: String) -> Dialogue {
        Dialogue { messages: vec![Message::user(prompt)], turns_used: 0, usage: Usage::default() }
    }

    /// Sends the conversation so far and appends the reply.
    pub fn step(&mut self, llm: &dyn LlmClient) -> Result<String, LlmError> {
        let completion = llm.chat(&self.messages)?;
        self.usage += Usage::of(&completion);
        self.turns_used += 1;
        self.messages.push(Message::assistant(completion.text.clone()));
        Ok(completion.text)
    }

    pub fn push_user(&mut self, text: String) {
        self.messages.push(Message::user(text));
    }
}

/// Sends `prompt`, parses the reply, and on a protocol violation reprompts once.
pub(crate) fn ask_parsed<T>(
    llm: &dyn LlmClient,
    template: TemplateId,
    prompt: String,
    requirement: &str,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<(T, Dialogue), AgentError> {
    let mut dialogue = Dialogue::new(prompt);
    let reply = dialogue.step(llm)?;
    if let Some(value) = parse(&reply) {
        return Ok((value, dialogue));
    }
    dialogue.push_user(render(TemplateId::Reprompt, &[("requirement", requirement)])?);
    let reply = dialogue.step(llm)?;
    match parse(&reply) {
        Some(value) => Ok((value, dialogue)),
        None => Err(AgentError::MalformedResponse {
            template: template.name(),
            detail: reply.chars().take(200).collect(),
        }),
    }
}
