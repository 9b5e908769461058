//! LLM client interface with an HTTP chat-completions implementation and a
//! deterministic offline mock.

use std::cell::{Cell, RefCell};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::prompt::item_id_from_prompt;
use super::taxonomy::{Taxonomy, UNKNOWN_LABEL};
use crate::rng::derive_seed;

#[derive(Debug, Clone)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self { temperature: 0.2, max_tokens: 512 }
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned an unusable payload: {0}")]
    BadPayload(String),
    #[error("auth token environment variable {0} is not set")]
    MissingToken(String),
}

/// A synchronous text-in/text-out completion client.
pub trait LlmClient {
    fn send(&self, prompt: &str, params: &GenerationParams) -> Result<String, LlmError>;

    /// Number of `send` calls issued so far (for cache and retry accounting).
    fn calls(&self) -> usize;
}

/// Minimal token bucket limiting the request rate of real endpoints.
pub struct RateLimiter {
    capacity: f64,
    refill_per_sec: f64,
    state: RefCell<(f64, Instant)>, // (tokens, last refill)
}

impl RateLimiter {
    pub fn new(requests_per_second: f64) -> Self {
        let capacity = requests_per_second.max(1.0);
        Self {
            capacity,
            refill_per_sec: requests_per_second,
            state: RefCell::new((capacity, Instant::now())),
        }
    }

    /// Block until a request token is available.
    pub fn acquire(&self) {
        loop {
            let mut state = self.state.borrow_mut();
            let now = Instant::now();
            let elapsed = now.duration_since(state.1).as_secs_f64();
            state.0 = (state.0 + elapsed * self.refill_per_sec).min(self.capacity);
            state.1 = now;
            if state.0 >= 1.0 {
                state.0 -= 1.0;
                return;
            }
            let wait = (1.0 - state.0) / self.refill_per_sec;
            drop(state);
            std::thread::sleep(Duration::from_secs_f64(wait.min(0.25)));
        }
    }
}

/// Chat-completions style HTTP client. The auth token is read from the
/// environment variable named in the constructor at call time.
pub struct HttpChatClient {
    base_url: String,
    model: String,
    token_env: String,
    calls: Cell<usize>,
}

impl HttpChatClient {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, token_env: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            token_env: token_env.into(),
            calls: Cell::new(0),
        }
    }
}

impl LlmClient for HttpChatClient {
    fn send(&self, prompt: &str, params: &GenerationParams) -> Result<String, LlmError> {
        self.calls.set(self.calls.get() + 1);
        let token = std::env::var(&self.token_env)
            .map_err(|_| LlmError::MissingToken(self.token_env.clone()))?;
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        });
        let response = ureq::post(&url)
            .header("Authorization", &format!("Bearer {token}"))
            .send_json(body)
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let payload: serde_json::Value = response
            .into_body()
            .read_json()
            .map_err(|e| LlmError::BadPayload(e.to_string()))?;
        payload["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| LlmError::BadPayload("no choices[0].message.content".into()))
    }

    fn calls(&self) -> usize {
        self.calls.get()
    }
}

/// Deterministic offline client.
///
/// For each prompt it extracts the embedded item id, serves a canned response
/// file `<sanitized-id>.json` from the response directory when present, and
/// otherwise synthesizes a schema-valid response from a hash of the item id.
/// `malformed_period = Some(n)` makes every n-th call return garbage, which
/// exercises the retry path.
pub struct MockLlmClient {
    canned_dir: Option<PathBuf>,
    taxonomy: Taxonomy,
    malformed_period: Option<usize>,
    malformed_first: Cell<usize>,
    fail_transport_times: Cell<usize>,
    calls: Cell<usize>,
}

impl MockLlmClient {
    pub fn new(taxonomy: Taxonomy) -> Self {
        Self {
            canned_dir: None,
            taxonomy,
            malformed_period: None,
            malformed_first: Cell::new(0),
            fail_transport_times: Cell::new(0),
            calls: Cell::new(0),
        }
    }

    pub fn with_canned_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.canned_dir = Some(dir.into());
        self
    }

    /// Every `period`-th call (1-based) returns a malformed response.
    pub fn with_malformed_period(mut self, period: usize) -> Self {
        assert!(period >= 2, "period 1 would never produce a valid response");
        self.malformed_period = Some(period);
        self
    }

    /// Make the next `n` calls return malformed text.
    pub fn malform_next(&self, n: usize) {
        self.malformed_first.set(n);
    }

    /// Fail the next `n` calls with a transport error.
    pub fn fail_transport(&self, n: usize) {
        self.fail_transport_times.set(n);
    }

    pub fn sanitize_id(id: &str) -> String {
        id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
    }

    fn synthesize(&self, item_id: &str) -> String {
        let seed = derive_seed(0x5eed, "mock-llm", derive_seed(0, item_id, 0));
        let mut features = serde_json::Map::new();
        let mut picked = Vec::new();
        for (k, cat) in self.taxonomy.categories.iter().enumerate() {
            let vocab: Vec<&str> =
                self.taxonomy.full_vocab(k).into_iter().filter(|l| *l != UNKNOWN_LABEL).collect();
            let a = derive_seed(seed, &cat.name, 1) as usize % vocab.len();
            let mut labels = vec![vocab[a]];
            if derive_seed(seed, &cat.name, 2) % 3 == 0 {
                let b = derive_seed(seed, &cat.name, 3) as usize % vocab.len();
                if !labels.contains(&vocab[b]) {
                    labels.push(vocab[b]);
                }
            }
            picked.extend(labels.iter().map(|s| s.to_string()));
            features.insert(cat.name.clone(), serde_json::json!(labels));
        }
        serde_json::json!({
            "mapped_id": item_id,
            "features": features,
            "semantic_summary": format!(
                "Item {item_id} blends {} with {} appeal.",
                picked.first().cloned().unwrap_or_default(),
                picked.last().cloned().unwrap_or_default()
            ),
        })
        .to_string()
    }
}

impl LlmClient for MockLlmClient {
    fn send(&self, prompt: &str, _params: &GenerationParams) -> Result<String, LlmError> {
        let call_no = self.calls.get() + 1;
        self.calls.set(call_no);

        if self.fail_transport_times.get() > 0 {
            self.fail_transport_times.set(self.fail_transport_times.get() - 1);
            return Err(LlmError::Transport("injected failure".into()));
        }
        if self.malformed_first.get() > 0 {
            self.malformed_first.set(self.malformed_first.get() - 1);
            return Ok(format!("NOT JSON (call {call_no})"));
        }
        if let Some(period) = self.malformed_period {
            if call_no % period == 0 {
                return Ok(format!("NOT JSON (call {call_no})"));
            }
        }

        let item_id = item_id_from_prompt(prompt)
            .ok_or_else(|| LlmError::BadPayload("prompt carries no item id".into()))?;
        if let Some(dir) = &self.canned_dir {
            let path = dir.join(format!("{}.json", Self::sanitize_id(item_id)));
            if path.exists() {
                return std::fs::read_to_string(&path)
                    .map_err(|e| LlmError::Transport(e.to_string()));
            }
        }
        Ok(self.synthesize(item_id))
    }

    fn calls(&self) -> usize {
        self.calls.get()
    }
}
