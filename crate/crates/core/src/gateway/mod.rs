//! Provider-agnostic access to chat-completion models.
//!
//! A [`Gateway`] wraps one [`LlmProvider`] with the retry policy, the
//! in-flight cap and the prompt scaffold. It implements [`ImpactPredictor`],
//! the interface the selection procedure and the pipeline predict through.

pub mod http;
pub mod limiter;
pub mod mock;
pub mod parse;
pub mod prompt;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FeatureVector, ImpactClass, LabeledExample, Thresholds};

pub use limiter::Limiter;
pub use mock::{mock_predict, MockProvider};
pub use parse::parse_prediction;
pub use prompt::{render_system_prompt, render_user_prompt, PromptPair, PromptScaffold};

const CLARIFICATION: &str = "\n\nAnswer with exactly one word: mild, moderate or severe.";

/// Failure of a single provider call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderError {
    pub message: String,
    /// Timeouts, rate limiting and server errors are worth retrying.
    pub retryable: bool,
}

impl ProviderError {
    pub fn retryable(message: impl Into<String>) -> Self {
        ProviderError {
            message: message.into(),
            retryable: true,
        }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        ProviderError {
            message: message.into(),
            retryable: false,
        }
    }
}

/// One chat-completion backend.
pub trait LlmProvider: Send + Sync {
    fn name(&self) -> &str;
    fn model_id(&self) -> &str;
    fn complete(&self, prompt: &PromptPair) -> std::result::Result<String, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    /// `mock`, `openai`, `anthropic` or `gemini`.
    pub provider_name: String,
    pub model_id: String,
    /// Row label in reports; defaults to `model_id`.
    pub label: Option<String>,
    pub endpoint: Option<String>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub request_timeout_secs: f64,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    pub max_in_flight: usize,
    pub requests_per_second: Option<f64>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            provider_name: "mock".into(),
            model_id: "mock-centroid".into(),
            label: None,
            endpoint: None,
            temperature: 0.0,
            max_output_tokens: 16,
            request_timeout_secs: 60.0,
            max_retries: 3,
            retry_backoff_ms: 500,
            max_in_flight: 4,
            requests_per_second: None,
        }
    }
}

impl ProviderConfig {
    pub fn mock() -> Self {
        Self::default()
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.model_id)
    }

    /// Environment variable holding the credential, e.g. `OPENAI_API_KEY`.
    pub fn credential_var(&self) -> String {
        format!(
            "{}_API_KEY",
            self.provider_name.to_ascii_uppercase().replace('-', "_")
        )
    }

    pub fn is_mock(&self) -> bool {
        self.provider_name == "mock"
    }
}

/// The query side of one prediction: the incident, never its label.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub incident_id: &'a str,
    pub features: &'a FeatureVector,
    pub horizon_minutes: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: ImpactClass,
    pub raw_response: String,
}

/// Anything that predicts an impact class from prompt examples and a query.
pub trait ImpactPredictor: Sync {
    fn model_id(&self) -> &str;
    fn predict(&self, examples: &[LabeledExample], query: &Query<'_>) -> Result<Prediction>;
}

/// A provider with retries, rate limiting and the prompt scaffold.
pub struct Gateway {
    provider: Arc<dyn LlmProvider>,
    config: ProviderConfig,
    limiter: Limiter,
    scaffold: PromptScaffold,
    thresholds: Thresholds,
    calls: AtomicUsize,
}

impl Gateway {
    pub fn new(provider: Arc<dyn LlmProvider>, config: ProviderConfig) -> Self {
        let limiter = Limiter::new(config.max_in_flight, config.requests_per_second);
        Gateway {
            provider,
            config,
            limiter,
            scaffold: PromptScaffold::default(),
            thresholds: Thresholds::default(),
            calls: AtomicUsize::new(0),
        }
    }

    /// Builds the provider named in `config`. Real providers read their
    /// credential from `<PROVIDER>_API_KEY`.
    pub fn from_config(config: &ProviderConfig) -> Result<Self> {
        let provider: Arc<dyn LlmProvider> = match config.provider_name.as_str() {
            "mock" => Arc::new(MockProvider::new(&config.model_id)),
            name @ ("openai" | "anthropic" | "gemini") => {
                let var = config.credential_var();
                let key = std::env::var(&var).ok().filter(|k| !k.trim().is_empty());
                let Some(key) = key else {
                    return Err(Error::MissingCredential { var });
                };
                http::provider_for(name, config, key)?
            }
            other => return Err(Error::Config(format!("unknown provider `{other}`"))),
        };
        Ok(Gateway::new(provider, config.clone()))
    }

    pub fn with_scaffold(mut self, scaffold: PromptScaffold) -> Self {
        self.scaffold = scaffold;
        self
    }

    pub fn with_thresholds(mut self, thresholds: Thresholds) -> Self {
        self.thresholds = thresholds;
        self
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn scaffold(&self) -> &PromptScaffold {
        &self.scaffold
    }

    pub fn provider(&self) -> &dyn LlmProvider {
        self.provider.as_ref()
    }

    /// Number of provider calls made, retries included.
    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.limiter.peak_in_flight()
    }

    pub fn prompt_for(
        &self,
        examples: &[LabeledExample],
        features: &FeatureVector,
        horizon_minutes: u32,
    ) -> PromptPair {
        PromptPair {
            system_text: self.scaffold.render(examples, &self.thresholds),
            user_text: render_user_prompt(features, horizon_minutes),
        }
    }

    /// One provider call, retrying transport failures with exponential backoff.
    pub fn complete(&self, prompt: &PromptPair) -> Result<String> {
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let backoff = self
                    .config
                    .retry_backoff_ms
                    .saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(backoff));
            }
            let outcome = {
                let _permit = self.limiter.acquire();
                self.calls.fetch_add(1, Ordering::SeqCst);
                self.provider.complete(prompt)
            };
            match outcome {
                Ok(text) => return Ok(text),
                Err(e) if e.retryable => {
                    log::warn!(
                        "{} attempt {} failed: {}",
                        self.provider.name(),
                        attempt + 1,
                        e.message
                    );
                    last = e.message;
                }
                Err(e) => {
                    return Err(Error::ProviderUnavailable {
                        provider: self.provider.name().to_string(),
                        attempts: attempt + 1,
                        message: e.message,
                    })
                }
            }
        }
        Err(Error::ProviderUnavailable {
            provider: self.provider.name().to_string(),
            attempts,
            message: last,
        })
    }

    /// Sends the prompt and parses the answer. An unparseable answer is asked
    /// again once with a clarification appended to the user message.
    pub fn predict_impact(&self, prompt: &PromptPair) -> Result<Prediction> {
        let raw = self.complete(prompt)?;
        if let Ok(class) = parse_prediction(&raw) {
            return Ok(Prediction {
                class,
                raw_response: raw,
            });
        }
        log::debug!("unparseable response {raw:?}, asking again");
        let retry = PromptPair {
            system_text: prompt.system_text.clone(),
            user_text: format!("{}{CLARIFICATION}", prompt.user_text),
        };
        let raw = self.complete(&retry)?;
        let class = parse_prediction(&raw)?;
        Ok(Prediction {
            class,
            raw_response: raw,
        })
    }
}

impl ImpactPredictor for Gateway {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn predict(&self, examples: &[LabeledExample], query: &Query<'_>) -> Result<Prediction> {
        self.predict_impact(&self.prompt_for(examples, query.features, query.horizon_minutes))
    }
}
