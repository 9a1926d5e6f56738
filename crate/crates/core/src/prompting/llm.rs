//! LLM clients: an offline deterministic stub and an HTTP chat-completion
//! client, plus the retry policy used by knowledge generation.

use std::fmt;
use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::factors::elicitation_prompt;

/// Where a knowledge text came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    LiveLlm,
    Stub,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LlmError {
    /// Connection, timeout or other transport failure.
    Transport(String),
    /// HTTP 429. `retry_after` comes from the response header when present.
    RateLimited { retry_after: Option<Duration> },
    Http { status: u16, body: String },
    /// The response arrived but could not be interpreted.
    Malformed(String),
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        match self {
            LlmError::Transport(_) | LlmError::RateLimited { .. } => true,
            LlmError::Http { status, .. } => *status >= 500,
            LlmError::Malformed(_) => false,
        }
    }
}

impl fmt::Display for LlmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LlmError::Transport(m) => write!(f, "transport failure: {m}"),
            LlmError::RateLimited { .. } => write!(f, "rate limited"),
            LlmError::Http { status, body } => write!(f, "HTTP {status}: {body}"),
            LlmError::Malformed(m) => write!(f, "malformed response: {m}"),
        }
    }
}

impl std::error::Error for LlmError {}

pub trait LlmClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;
    fn provenance(&self) -> Provenance;
}

/// Deterministic offline client.
///
/// For the factor-elicitation prompt it answers with its configured factors
/// as a numbered list. For any other prompt it writes one sentence per
/// configured factor that occurs in the prompt, with filler words picked by
/// a seeded hash of the prompt.
#[derive(Clone, Debug)]
pub struct StubLlm {
    factors: Vec<String>,
    seed: u64,
}

const STUB_WORDS: [&str; 24] = [
    "classic", "modern", "light", "dark", "uplifting", "intense", "quirky", "epic", "intimate",
    "romantic", "thoughtful", "fast-paced", "acclaimed", "niche", "popular", "stylish", "gritty",
    "gentle", "ambitious", "familiar", "experimental", "polished", "nostalgic", "bold",
];

impl StubLlm {
    pub fn new(factors: Vec<String>, seed: u64) -> Self {
        Self { factors, seed }
    }

    fn rng_for(&self, prompt: &str) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(prompt.as_bytes());
        let d = h.finalize();
        ChaCha8Rng::seed_from_u64(u64::from_le_bytes(d[..8].try_into().expect("32 bytes")))
    }
}

impl LlmClient for StubLlm {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        if prompt.starts_with(elicitation_prompt("").split(" in a ").next().unwrap_or("")) {
            return Ok(self
                .factors
                .iter()
                .enumerate()
                .map(|(i, f)| format!("{}. {f}", i + 1))
                .collect::<Vec<_>>()
                .join("\n"));
        }
        let mut rng = self.rng_for(prompt);
        let sentences: Vec<String> = self
            .factors
            .iter()
            .filter(|f| prompt.contains(f.as_str()))
            .map(|f| {
                let words: Vec<&str> = (0..3)
                    .map(|_| *STUB_WORDS.choose(&mut rng).expect("non-empty"))
                    .collect();
                format!("{f}: {}.", words.join(", "))
            })
            .collect();
        Ok(sentences.join(" "))
    }

    fn provenance(&self) -> Provenance {
        Provenance::Stub
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatContent,
}

#[derive(Deserialize)]
struct ChatContent {
    content: Option<String>,
}

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "KAR_LLM_API_KEY";
pub const DEFAULT_MAX_TOKENS: u32 = 512;

/// Chat-completion client: `POST {base_url}/chat/completions` with
/// `{model, messages, temperature, max_tokens}`.
#[derive(Clone, Debug)]
pub struct HttpLlm {
    base_url: String,
    model: String,
    api_key: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    timeout: Duration,
}

impl HttpLlm {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>) -> Self {
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key,
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            timeout: Duration::from_secs(60),
        }
    }

    /// Reads the bearer token from [`API_KEY_ENV`].
    pub fn from_env(base_url: &str, model: &str) -> Self {
        Self::new(base_url, model, std::env::var(API_KEY_ENV).ok())
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }
}

impl LlmClient for HttpLlm {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let body = ChatRequest {
            model: &self.model,
            messages: vec![ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        };
        let mut req = agent.post(self.endpoint());
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 {
            let retry_after = resp
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(Duration::from_secs);
            return Err(LlmError::RateLimited { retry_after });
        }
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(LlmError::Http { status, body: text });
        }
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| LlmError::Malformed(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::Malformed("no choices[0].message.content".into()))
    }

    fn provenance(&self) -> Provenance {
        Provenance::LiveLlm
    }
}

/// Bounded retries with exponential backoff.
#[derive(Clone, Debug, PartialEq)]
pub struct RetryPolicy {
    /// Total calls made before giving up; at least 1.
    pub max_attempts: usize,
    pub initial_backoff: Duration,
    pub multiplier: f64,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            initial_backoff: Duration::from_millis(500),
            multiplier: 2.0,
            max_backoff: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_attempts: usize) -> Self {
        Self {
            max_attempts,
            initial_backoff: Duration::ZERO,
            multiplier: 1.0,
            max_backoff: Duration::ZERO,
        }
    }

    /// Wait after failed attempt `attempt` (0-based).
    pub fn backoff(&self, attempt: usize, err: &LlmError) -> Duration {
        let exp = self.initial_backoff.as_secs_f64() * self.multiplier.powi(attempt as i32);
        let base = Duration::from_secs_f64(exp.min(self.max_backoff.as_secs_f64()));
        match err {
            LlmError::RateLimited {
                retry_after: Some(hint),
            } => base.max((*hint).min(self.max_backoff)),
            _ => base,
        }
    }

    /// Calls `llm` until success, a non-retryable error, or `max_attempts`
    /// calls. Returns the final error together with the number of calls made.
    pub fn run(&self, llm: &dyn LlmClient, prompt: &str) -> Result<String, (LlmError, usize)> {
        let attempts = self.max_attempts.max(1);
        let mut last = None;
        for attempt in 0..attempts {
            match llm.complete(prompt) {
                Ok(text) => return Ok(text),
                Err(e) if !e.is_retryable() => return Err((e, attempt + 1)),
                Err(e) => {
                    if attempt + 1 < attempts {
                        let wait = self.backoff(attempt, &e);
                        log::warn!("LLM call failed ({e}); retrying in {wait:?}");
                        std::thread::sleep(wait);
                    }
                    last = Some(e);
                }
            }
        }
        Err((last.expect("at least one attempt"), attempts))
    }
}
