//! Chat-completion adapters for hosted models. Each adapter only knows how to
//! shape its request body and where the answer text sits in the response.

use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};

use super::{LlmProvider, PromptPair, ProviderConfig, ProviderError};
use crate::error::{Error, Result};

/// Request shape of one API family.
pub trait ChatApi: Send + Sync {
    fn name(&self) -> &'static str;
    fn url(&self, config: &ProviderConfig) -> String;
    fn headers(&self, api_key: &str) -> Vec<(&'static str, String)>;
    fn body(&self, config: &ProviderConfig, prompt: &PromptPair) -> Value;
    /// The answer text, or `None` when the response has an unexpected shape.
    fn answer(&self, response: &Value) -> Option<String>;
}

pub struct OpenAiChat;
pub struct AnthropicMessages;
pub struct GeminiGenerate;

impl ChatApi for OpenAiChat {
    fn name(&self) -> &'static str {
        "openai"
    }

    fn url(&self, config: &ProviderConfig) -> String {
        config
            .endpoint
            .clone()
            .unwrap_or_else(|| "https://api.openai.com/v1/chat/completions".into())
    }

    fn headers(&self, api_key: &str) -> Vec<(&'static str, String)> {
        vec![("authorization", format!("Bearer {api_key}"))]
    }

    fn body(&self, config: &ProviderConfig, prompt: &PromptPair) -> Value {
        json!({
            "model": config.model_id,
            "temperature": config.temperature,
            "max_tokens": config.max_output_tokens,
            "messages": [
                {"role": "system", "content": prompt.system_text},
                {"role": "user", "content": prompt.user_text},
            ],
        })
    }

    fn answer(&self, response: &Value) -> Option<String> {
        response["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
    }
}

impl ChatApi for AnthropicMessages {
    fn name(&self) -> &'static str {
        "anthropic"
    }

    fn url(&self, config: &ProviderConfig) -> String {
        config
            .endpoint
            .clone()
            .unwrap_or_else(|| "https://api.anthropic.com/v1/messages".into())
    }

    fn headers(&self, api_key: &str) -> Vec<(&'static str, String)> {
        vec![
            ("x-api-key", api_key.to_string()),
            ("anthropic-version", "2023-06-01".to_string()),
        ]
    }

    fn body(&self, config: &ProviderConfig, prompt: &PromptPair) -> Value {
        json!({
            "model": config.model_id,
            "temperature": config.temperature,
            "max_tokens": config.max_output_tokens,
            "system": prompt.system_text,
            "messages": [{"role": "user", "content": prompt.user_text}],
        })
    }

    fn answer(&self, response: &Value) -> Option<String> {
        let blocks = response["content"].as_array()?;
        let text: String = blocks.iter().filter_map(|b| b["text"].as_str()).collect();
        (!blocks.is_empty()).then_some(text)
    }
}

impl ChatApi for GeminiGenerate {
    fn name(&self) -> &'static str {
        "gemini"
    }

    fn url(&self, config: &ProviderConfig) -> String {
        let base = config
            .endpoint
            .clone()
            .unwrap_or_else(|| "https://generativelanguage.googleapis.com/v1beta".into());
        format!(
            "{}/models/{}:generateContent",
            base.trim_end_matches('/'),
            config.model_id
        )
    }

    fn headers(&self, api_key: &str) -> Vec<(&'static str, String)> {
        vec![("x-goog-api-key", api_key.to_string())]
    }

    fn body(&self, config: &ProviderConfig, prompt: &PromptPair) -> Value {
        json!({
            "systemInstruction": {"parts": [{"text": prompt.system_text}]},
            "contents": [{"role": "user", "parts": [{"text": prompt.user_text}]}],
            "generationConfig": {
                "temperature": config.temperature,
                "maxOutputTokens": config.max_output_tokens,
            },
        })
    }

    fn answer(&self, response: &Value) -> Option<String> {
        let parts = response["candidates"][0]["content"]["parts"].as_array()?;
        Some(parts.iter().filter_map(|p| p["text"].as_str()).collect())
    }
}

/// A hosted model reached over HTTPS with a blocking client.
pub struct HttpProvider<A> {
    api: A,
    config: ProviderConfig,
    api_key: String,
    agent: ureq::Agent,
}

impl<A: ChatApi> HttpProvider<A> {
    pub fn new(api: A, config: ProviderConfig, api_key: String) -> Self {
        let timeout = Duration::from_secs_f64(config.request_timeout_secs.max(0.001));
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpProvider {
            api,
            config,
            api_key,
            agent,
        }
    }
}

impl<A: ChatApi> LlmProvider for HttpProvider<A> {
    fn name(&self) -> &str {
        self.api.name()
    }

    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn complete(&self, prompt: &PromptPair) -> std::result::Result<String, ProviderError> {
        let mut request = self
            .agent
            .post(self.api.url(&self.config))
            .header("content-type", "application/json");
        for (name, value) in self.api.headers(&self.api_key) {
            request = request.header(name, value);
        }
        let mut response = request
            .send_json(self.api.body(&self.config, prompt))
            .map_err(|e| ProviderError::retryable(format!("transport: {e}")))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::retryable(format!("reading body: {e}")))?;
        if status == 429 || status >= 500 {
            return Err(ProviderError::retryable(format!(
                "HTTP {status}: {}",
                snippet(&text)
            )));
        }
        if status >= 400 {
            return Err(ProviderError::fatal(format!(
                "HTTP {status}: {}",
                snippet(&text)
            )));
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| {
            ProviderError::retryable(format!("invalid JSON ({e}): {}", snippet(&text)))
        })?;
        self.api.answer(&value).ok_or_else(|| {
            ProviderError::retryable(format!("unexpected response shape: {}", snippet(&text)))
        })
    }
}

fn snippet(text: &str) -> String {
    text.chars().take(200).collect()
}

pub(crate) fn provider_for(
    name: &str,
    config: &ProviderConfig,
    api_key: String,
) -> Result<Arc<dyn LlmProvider>> {
    let config = config.clone();
    Ok(match name {
        "openai" => Arc::new(HttpProvider::new(OpenAiChat, config, api_key)),
        "anthropic" => Arc::new(HttpProvider::new(AnthropicMessages, config, api_key)),
        "gemini" => Arc::new(HttpProvider::new(GeminiGenerate, config, api_key)),
        other => return Err(Error::Config(format!("no HTTP adapter for `{other}`"))),
    })
}
