//! Caption-merging client. Online responses are cached by prompt hash so
//! a corpus can be rebuilt later without the network.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{CaptionSource, CaptionText, MIXUP_WORD_LIMIT};
use crate::error::{Error, Result};

pub const DEFAULT_PROMPT: &str =
    "Generate a mix of the following two audio captions, and keep the generation under 25 words:";

/// Environment variable holding the API key for online mode.
pub const DEFAULT_KEY_ENV: &str = "AACAP_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmClientConfig {
    /// HTTP endpoint, or `"offline"` for the deterministic template join.
    pub endpoint: String,
    /// Prompt text; `{c1}` and `{c2}` are replaced by the captions, and when
    /// absent the captions are appended on their own lines.
    pub prompt_template: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// Requests per second.
    pub rate_limit: f64,
    /// Response cache (JSON). Required for replay.
    pub cache_path: Option<PathBuf>,
    /// Serve every request from the cache and fail on a miss.
    pub replay: bool,
    pub api_key_env: String,
}

impl Default for LlmClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "offline".into(),
            prompt_template: DEFAULT_PROMPT.into(),
            timeout_secs: 30.0,
            max_retries: 3,
            rate_limit: 1.0,
            cache_path: None,
            replay: false,
            api_key_env: DEFAULT_KEY_ENV.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LlmMode {
    Offline,
    Online,
    Replay,
}

impl LlmClientConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_secs > 0.0) {
            return Err(Error::Config("llm timeout must be positive".into()));
        }
        if !(self.rate_limit > 0.0) {
            return Err(Error::Config("llm rate_limit must be positive".into()));
        }
        if self.replay && self.cache_path.is_none() {
            return Err(Error::Config("replay mode needs a cache_path".into()));
        }
        Ok(())
    }

    pub fn mode(&self) -> LlmMode {
        if self.endpoint == "offline" {
            LlmMode::Offline
        } else if self.replay {
            LlmMode::Replay
        } else {
            LlmMode::Online
        }
    }
}

pub fn fill_prompt(template: &str, c1: &str, c2: &str) -> String {
    if template.contains("{c1}") && template.contains("{c2}") {
        template.replace("{c1}", c1).replace("{c2}", c2)
    } else {
        format!("{template}\n1. {c1}\n2. {c2}")
    }
}

pub fn prompt_hash(prompt: &str) -> String {
    crate::encoder::features::hex_string(&Sha256::digest(prompt.as_bytes()))
}

/// `"c1 while c2"`, cut to the word limit.
pub fn offline_merge(c1: &str, c2: &str) -> String {
    format!("{c1} while {c2}")
        .split_whitespace()
        .take(MIXUP_WORD_LIMIT)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub prompt: String,
    pub text: String,
}

/// Cached responses keyed by prompt hash, stored as pretty JSON.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseCache {
    pub entries: BTreeMap<String, CacheEntry>,
}

impl ResponseCache {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn insert(&mut self, prompt: &str, text: &str) {
        self.entries.insert(
            prompt_hash(prompt),
            CacheEntry {
                prompt: prompt.into(),
                text: text.into(),
            },
        );
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmResponse {
    /// Trimmed first line of the response.
    pub text: String,
    pub provider: String,
    pub prompt_hash: String,
}

#[derive(Serialize)]
struct Request<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct Reply {
    text: String,
}

pub struct LlmClient {
    config: LlmClientConfig,
    api_key: Option<String>,
    cache: Mutex<ResponseCache>,
    last_request: Mutex<Option<Instant>>,
    agent: Option<ureq::Agent>,
}

fn first_line(text: &str) -> String {
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("")
        .to_string()
}

impl LlmClient {
    /// Builds a client. Online mode fails here when the credential variable is unset.
    pub fn new(config: LlmClientConfig) -> Result<Self> {
        config.validate()?;
        let cache = match &config.cache_path {
            Some(p) => ResponseCache::load(p)?,
            None => ResponseCache::default(),
        };
        let (api_key, agent) = match config.mode() {
            LlmMode::Online => {
                let key = std::env::var(&config.api_key_env).map_err(|_| {
                    Error::Config(format!(
                        "online llm mode needs the {} environment variable",
                        config.api_key_env
                    ))
                })?;
                let agent = ureq::AgentBuilder::new()
                    .timeout(Duration::from_secs_f64(config.timeout_secs))
                    .build();
                (Some(key), Some(agent))
            }
            _ => (None, None),
        };
        Ok(Self {
            config,
            api_key,
            cache: Mutex::new(cache),
            last_request: Mutex::new(None),
            agent,
        })
    }

    pub fn config(&self) -> &LlmClientConfig {
        &self.config
    }

    pub fn provider(&self) -> &str {
        match self.config.mode() {
            LlmMode::Offline => "offline",
            LlmMode::Online | LlmMode::Replay => &self.config.endpoint,
        }
    }

    fn throttle(&self) {
        let interval = Duration::from_secs_f64(1.0 / self.config.rate_limit);
        let mut last = self.last_request.lock().expect("rate limiter lock");
        if let Some(t) = *last {
            let elapsed = t.elapsed();
            if elapsed < interval {
                std::thread::sleep(interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn post(&self, prompt: &str) -> Result<String> {
        let agent = self.agent.as_ref().expect("online client has an agent");
        let key = self.api_key.as_deref().unwrap_or_default();
        let mut last_err = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(200 << attempt.min(6)));
            }
            self.throttle();
            let result = agent
                .post(&self.config.endpoint)
                .set("Authorization", &format!("Bearer {key}"))
                .send_json(Request { prompt });
            match result {
                Ok(resp) => match resp.into_json::<Reply>() {
                    Ok(r) => return Ok(r.text),
                    Err(e) => last_err = format!("unreadable response: {e}"),
                },
                Err(e) => last_err = e.to_string(),
            }
            log::warn!("llm request attempt {} failed: {last_err}", attempt + 1);
        }
        Err(Error::Llm(format!(
            "endpoint failed after {} attempts: {last_err}",
            self.config.max_retries + 1
        )))
    }

    /// Merged caption text for two captions, before any word-limit check.
    pub fn complete(&self, c1: &str, c2: &str) -> Result<LlmResponse> {
        let prompt = fill_prompt(&self.config.prompt_template, c1, c2);
        let hash = prompt_hash(&prompt);
        let text = match self.config.mode() {
            LlmMode::Offline => offline_merge(c1, c2),
            LlmMode::Replay => {
                let cache = self.cache.lock().expect("cache lock");
                let entry = cache
                    .entries
                    .get(&hash)
                    .ok_or_else(|| Error::Llm(format!("no cached response for prompt {hash}")))?;
                entry.text.clone()
            }
            LlmMode::Online => {
                if let Some(hit) = self.cache.lock().expect("cache lock").entries.get(&hash) {
                    hit.text.clone()
                } else {
                    let text = self.post(&prompt)?;
                    let mut cache = self.cache.lock().expect("cache lock");
                    cache.insert(&prompt, &text);
                    if let Some(path) = &self.config.cache_path {
                        cache.save(path)?;
                    }
                    text
                }
            }
        };
        Ok(LlmResponse {
            text: first_line(&text),
            provider: self.provider().to_string(),
            prompt_hash: hash,
        })
    }
}

/// Merged caption for two source captions; over-length or empty outputs are errors.
pub fn request_caption_mixup(c1: &CaptionText, c2: &CaptionText, client: &LlmClient) -> Result<CaptionText> {
    let resp = client.complete(c1.as_str(), c2.as_str())?;
    CaptionText::new(&resp.text, CaptionSource::Mixup)
}
