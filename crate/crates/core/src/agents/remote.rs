//! Chat-completions client for OpenAI-compatible HTTP endpoints.

use std::time::Duration;

use serde_json::json;

use super::llm::{ChatRole, Completion, LlmClient, LlmError, Message};
use crate::http;

pub const DEFAULT_MODEL: &str = "gpt-4o";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_API_KEY_VAR: &str = "OPENAI_API_KEY";

pub struct RemoteClient {
    endpoint: String,
    model: String,
    api_key: String,
    temperature: f64,
    agent: ureq::Agent,
}

impl RemoteClient {
    /// Reads the API key from `api_key_var`.
    pub fn from_env(endpoint: &str, model: &str, api_key_var: &str) -> Result<RemoteClient, LlmError> {
        let api_key = std::env::var(api_key_var).map_err(|_| LlmError::MissingApiKey(api_key_var.to_string()))?;
        Ok(RemoteClient::new(endpoint, model, api_key))
    }

    pub fn new(endpoint: &str, model: &str, api_key: String) -> RemoteClient {
        RemoteClient {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key,
            temperature: 0.0,
            agent: http::agent(Duration::from_secs(300)),
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> RemoteClient {
        self.temperature = temperature;
        self
    }
}

fn role_name(role: ChatRole) -> &'static str {
    match role {
        ChatRole::System => "system",
        ChatRole::User => "user",
        ChatRole::Assistant => "assistant",
    }
}

impl LlmClient for RemoteClient {
    fn chat(&self, messages: &[Message]) -> Result<Completion, LlmError> {
        let body = json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": messages
                .iter()
                .map(|m| json!({"role": role_name(m.role), "content": m.content}))
                .collect::<Vec<_>>(),
        });
        let response = http::post_json(&self.agent, &self.endpoint, &self.api_key, &body).map_err(LlmError::Transport)?;
        let text = response["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| LlmError::Provider("missing choices[0].message.content".into()))?
            .to_string();
        let tokens = |field: &str| response["usage"][field].as_u64().unwrap_or(0);
        Ok(Completion { text, input_tokens: tokens("prompt_tokens"), output_tokens: tokens("completion_tokens") })
    }

    fn model_id(&self) -> &str {
        &self.model
    }
}
