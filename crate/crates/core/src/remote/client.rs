use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::{fmt_f64, CsvTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApiFlavor {
    /// `POST {base}/v1/completions`, logprobs under `top_logprobs[0]`.
    Completions,
    /// `POST {base}/v1/chat/completions` with a single user message.
    Chat,
}

fn default_timeout() -> f64 {
    30.0
}
fn default_retries() -> u32 {
    3
}
fn default_top_k() -> usize {
    20
}
fn default_in_flight() -> usize {
    4
}
fn default_flavor() -> ApiFlavor {
    ApiFlavor::Completions
}
fn default_backoff_ms() -> u64 {
    250
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_flavor")]
    pub api: ApiFlavor,
    /// First retry delay; doubles on every further attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    /// Placed between rendered symbols of a token prompt.
    #[serde(default)]
    pub token_separator: String,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            auth_env: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            top_k: default_top_k(),
            max_in_flight: default_in_flight(),
            api: default_flavor(),
            backoff_ms: default_backoff_ms(),
            token_separator: String::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_k < 2 {
            return Err(Error::Config("top_k must be at least 2".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::Config("timeout_secs must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be positive".into()));
        }
        if self.base_url.is_empty() || self.model.is_empty() {
            return Err(Error::Config("base_url and model are required".into()));
        }
        Ok(())
    }

    fn url(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        match self.api {
            ApiFlavor::Completions => format!("{base}/v1/completions"),
            ApiFlavor::Chat => format!("{base}/v1/chat/completions"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

impl TokenLogprob {
    pub fn prob(&self) -> f64 {
        self.logprob.exp()
    }
}

/// One outbound request as stored in the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub prompt_sha256: String,
    pub latency_ms: u64,
    pub retries: u32,
    pub ok: bool,
}

/// Counting semaphore for the in-flight limit.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn enter(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().expect("gate lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate lock");
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate lock") += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug)]
pub struct RemoteClient {
    config: EndpointConfig,
    http: reqwest::blocking::Client,
    token: Option<String>,
    gate: Gate,
    records: Mutex<Vec<RequestRecord>>,
}

enum Attempt {
    Done(Vec<TokenLogprob>),
    Retry(String),
    Fail(Error),
}

impl RemoteClient {
    pub fn new(config: EndpointConfig) -> Result<Self> {
        config.validate()?;
        let token = match &config.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| Error::AuthMissing(var.clone()))?),
            None => None,
        };
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let gate = Gate {
            free: Mutex::new(config.max_in_flight),
            cv: Condvar::new(),
        };
        Ok(Self {
            config,
            http,
            token,
            gate,
            records: Mutex::new(Vec::new()),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// Requests made so far, in completion order.
    pub fn records(&self) -> Vec<RequestRecord> {
        self.records.lock().expect("records lock").clone()
    }

    fn body(&self, prompt: &str) -> Value {
        let c = &self.config;
        match c.api {
            ApiFlavor::Completions => json!({
                "model": c.model,
                "prompt": prompt,
                "max_tokens": 1,
                "temperature": 0,
                "logprobs": c.top_k,
            }),
            ApiFlavor::Chat => json!({
                "model": c.model,
                "messages": [{"role": "user", "content": prompt}],
                "max_tokens": 1,
                "temperature": 0,
                "logprobs": true,
                "top_logprobs": c.top_k,
            }),
        }
    }

    /// Top-K alternatives for the first generated token, most likely first.
    pub fn next_token_logprobs(&self, prompt: &str) -> Result<Vec<TokenLogprob>> {
        let _slot = self.gate.enter();
        let body = self.body(prompt);
        let started = Instant::now();
        let mut retries = 0;
        let outcome = loop {
            match self.attempt(&body) {
                Attempt::Done(list) => break Ok(list),
                Attempt::Fail(e) => break Err(e),
                Attempt::Retry(why) if retries >= self.config.max_retries => {
                    break Err(Error::Transport(format!(
                        "{why} (gave up after {} attempts)",
                        retries + 1
                    )))
                }
                Attempt::Retry(_) => {
                    let delay = self.config.backoff_ms.saturating_mul(1 << retries.min(16));
                    std::thread::sleep(Duration::from_millis(delay));
                    retries += 1;
                }
            }
        };
        self.records.lock().expect("records lock").push(RequestRecord {
            prompt_sha256: hex::encode(Sha256::digest(prompt.as_bytes())),
            latency_ms: started.elapsed().as_millis() as u64,
            retries,
            ok: outcome.is_ok(),
        });
        outcome
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let mut req = self
            .http
            .post(self.config.url())
            .header("content-type", "application/json")
            .body(body.to_string());
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Attempt::Retry(format!("HTTP {status}"));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Attempt::Fail(Error::Transport(format!("HTTP {status}: {text}")));
        }
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        match serde_json::from_str::<Value>(&text) {
            Ok(v) => match parse_logprobs(&v, self.config.api) {
                Ok(list) => Attempt::Done(list),
                Err(e) => Attempt::Fail(e),
            },
            Err(e) => Attempt::Fail(Error::IncompatibleServer(format!("response is not JSON: {e}"))),
        }
    }
}

fn missing(path: &str) -> Error {
    Error::IncompatibleServer(format!("response has no {path}"))
}

fn parse_logprobs(v: &Value, api: ApiFlavor) -> Result<Vec<TokenLogprob>> {
    let mut list = match api {
        ApiFlavor::Completions => {
            let path = "choices[0].logprobs.top_logprobs[0]";
            let top = v
                .pointer("/choices/0/logprobs/top_logprobs/0")
                .and_then(Value::as_object)
                .ok_or_else(|| missing(path))?;
            top.iter()
                .map(|(tok, lp)| {
                    Ok(TokenLogprob {
                        token: tok.clone(),
                        logprob: lp.as_f64().ok_or_else(|| missing(path))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
        ApiFlavor::Chat => {
            let path = "choices[0].logprobs.content[0].top_logprobs";
            let top = v
                .pointer("/choices/0/logprobs/content/0/top_logprobs")
                .and_then(Value::as_array)
                .ok_or_else(|| missing(path))?;
            top.iter()
                .map(|e| {
                    Ok(TokenLogprob {
                        token: e
                            .get("token")
                            .and_then(Value::as_str)
                            .ok_or_else(|| missing(path))?
                            .to_string(),
                        logprob: e
                            .get("logprob")
                            .and_then(Value::as_f64)
                            .ok_or_else(|| missing(path))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    if list.is_empty() {
        return Err(Error::IncompatibleServer("empty logprob list".into()));
    }
    if let Some(bad) = list.iter().find(|t| !(t.logprob <= 0.0)) {
        return Err(Error::IncompatibleServer(format!(
            "log probability {} for {:?} is not <= 0",
            bad.logprob, bad.token
        )));
    }
    list.sort_by(|a, b| b.logprob.total_cmp(&a.logprob).then_with(|| a.token.cmp(&b.token)));
    Ok(list)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPairRow {
    /// Greedy token under `α`.
    pub sigma: String,
    pub p_alpha: f64,
    pub p_beta: f64,
    /// `σ` was missing from `β`'s top-K, so `p_beta` is a lower bound.
    pub truncated: bool,
    /// The greedy tokens under `α` and `β` differ.
    pub sensitive: bool,
}

fn last_word(s: &str) -> Option<&str> {
    s.split_whitespace().next_back()
}

/// For each `(α, β)` pair, the probability of `α`'s greedy token under both
/// prompts. Rows come back in input order.
pub fn prompt_pair_sensitivity(
    client: &RemoteClient,
    pairs: &[(String, String)],
) -> Result<Vec<PromptPairRow>> {
    for (i, (a, b)) in pairs.iter().enumerate() {
        if last_word(a) != last_word(b) {
            return Err(Error::invalid(format!(
                "pair {i} does not end in the same token: {:?} vs {:?}",
                last_word(a),
                last_word(b)
            )));
        }
    }
    pairs
        .par_iter()
        .map(|(a, b)| {
            let la = client.next_token_logprobs(a)?;
            let lb = client.next_token_logprobs(b)?;
            let top = &la[0];
            let hit = lb.iter().find(|t| t.token == top.token);
            Ok(PromptPairRow {
                sigma: top.token.clone(),
                p_alpha: top.prob(),
                p_beta: hit.map_or(0.0, TokenLogprob::prob),
                truncated: hit.is_none(),
                sensitive: lb[0].token != top.token,
            })
        })
        .collect()
}


impl CsvTable for [PromptPairRow] {
    fn header(&self) -> Vec<&'static str> {
        vec!["pair", "sigma", "p_alpha", "p_beta", "truncated", "sensitive"]
    }

    fn records(&self) -> Vec<Vec<String>> {
        self.iter()
            .enumerate()
            .map(|(i, r)| {
                vec![
                    i.to_string(),
                    r.sigma.clone(),
                    fmt_f64(r.p_alpha),
                    fmt_f64(r.p_beta),
                    r.truncated.to_string(),
                    r.sensitive.to_string(),
                ]
            })
            .collect()
    }
}
