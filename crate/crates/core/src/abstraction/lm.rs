//! Chat-completion client used for region abstraction and selection.

use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LmError {
    #[error("language model request timed out")]
    Timeout,
    #[error("language model endpoint unavailable: {0}")]
    Unavailable(String),
    #[error("language model reply is malformed: {0}")]
    MalformedReply(String),
    #[error("environment variable {0} is not set")]
    MissingKey(String),
    #[error("invalid endpoint configuration: {0}")]
    Config(String),
}

fn default_timeout() -> u64 {
    30_000
}
fn default_retries() -> u32 {
    2
}
fn default_concurrency() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmEndpointConfig {
    /// e.g. `http://localhost:8000/v1`; `/chat/completions` is appended.
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token. No
    /// `Authorization` header is sent when this is absent.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// Upper bound on in-flight requests during batch abstraction.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
}

impl LmEndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        LmEndpointConfig {
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key_env: None,
            timeout_ms: default_timeout(),
            max_retries: default_retries(),
            concurrency: default_concurrency(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, LmError> {
        let cfg: LmEndpointConfig = toml::from_str(text).map_err(|e| LmError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), LmError> {
        if self.timeout_ms == 0 {
            return Err(LmError::Config("timeout_ms must be positive".into()));
        }
        if self.concurrency == 0 {
            return Err(LmError::Config("concurrency must be at least 1".into()));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(LmError::Config(format!("base_url `{}` is not an http(s) URL", self.base_url)));
        }
        Ok(())
    }
}

/// Single-turn text completion.
pub trait ChatClient: Sync {
    fn complete(&self, prompt: &str) -> Result<String, LmError>;
}

impl<F> ChatClient for F
where
    F: Fn(&str) -> Result<String, LmError> + Sync,
{
    fn complete(&self, prompt: &str) -> Result<String, LmError> {
        self(prompt)
    }
}

#[derive(Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct Request<'a> {
    model: &'a str,
    messages: [Message<'a>; 1],
    temperature: f64,
}

#[derive(Deserialize)]
struct Reply {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    content: Option<String>,
}

/// Blocking client for the common `/chat/completions` JSON shape. Requests
/// use temperature 0.
pub struct HttpChatClient {
    config: LmEndpointConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl HttpChatClient {
    pub fn new(config: LmEndpointConfig) -> Result<Self, LmError> {
        config.validate()?;
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| LmError::MissingKey(var.clone()))?),
            None => None,
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .build()
            .into();
        Ok(HttpChatClient { config, agent, api_key })
    }

    pub fn config(&self) -> &LmEndpointConfig {
        &self.config
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, prompt: &str) -> Result<String, LmError> {
        let body = Request {
            model: &self.config.model_name,
            messages: [Message {
                role: "user",
                content: prompt,
            }],
            temperature: 0.0,
        };
        let mut req = self.agent.post(self.url());
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let resp = req.send_json(&body).map_err(|e| match e {
            ureq::Error::Timeout(_) => LmError::Timeout,
            ureq::Error::StatusCode(code) => LmError::Unavailable(format!("HTTP {code}")),
            ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => LmError::Timeout,
            other => LmError::Unavailable(other.to_string()),
        })?;
        let reply: Reply = resp.into_body().read_json().map_err(|e| match e {
            ureq::Error::Timeout(_) => LmError::Timeout,
            other => LmError::MalformedReply(other.to_string()),
        })?;
        reply
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LmError::MalformedReply("no choices in reply".into()))
    }
}

/// Pulls the first JSON object out of a reply, tolerating code fences and
/// surrounding chatter.
pub fn extract_json_object(reply: &str) -> Option<serde_json::Map<String, serde_json::Value>> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    if end < start {
        return None;
    }
    match serde_json::from_str::<serde_json::Value>(&reply[start..=end]).ok()? {
        serde_json::Value::Object(map) => Some(map),
        _ => None,
    }
}
