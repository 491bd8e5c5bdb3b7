//! Language-model backends.
//!
//! Everything upstream talks to a [`Backend`]: a completion call returning
//! per-token log-probabilities (with top alternatives, so group confidences
//! can be normalized), plus forced scoring of a given continuation. Two
//! implementations: a deterministic scripted mock for tests and fixtures,
//! and an HTTP client speaking the de-facto JSON completion protocol.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("http status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("completion response missing token logprobs")]
    MissingLogprobs,
    #[error("bad scenario: {0}")]
    BadScenario(String),
    #[error("no scripted rule matches prompt {0:?} and the script has no fallback")]
    NoMatch(String),
    #[error("no forced logprobs scripted for continuation {0:?}")]
    MissingForced(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One generated token with its log-probability and the log-probabilities
/// of the top alternatives at the same position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub top_logprobs: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub tokens: Vec<TokenLogprob>,
    /// Transport retries it took to obtain this completion (0 for mocks).
    #[serde(default)]
    pub retries: u32,
}

pub trait Backend: Send + Sync {
    /// Generate a completion for `prompt`, truncating at the first stop
    /// sequence if one occurs.
    fn complete(&self, prompt: &str, stop: &[String]) -> Result<Completion, BackendError>;

    /// Log-probabilities the model assigns to `continuation` appended to
    /// `prompt`, one entry per continuation token.
    fn token_logprobs(&self, prompt: &str, continuation: &str)
        -> Result<Vec<f64>, BackendError>;
}

// ---------------------------------------------------------------------------
// Scripted mock backend
// ---------------------------------------------------------------------------

/// On-disk scenario format: rules mapping prompt patterns to completions
/// with explicit per-token probabilities in (0, 1].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub fallback: Option<ScriptCompletion>,
    pub rules: Vec<ScriptRule>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptRule {
    /// Pattern matched against the whole prompt; `*` matches any run of
    /// characters, everything else is literal.
    pub pattern: String,
    #[serde(flatten)]
    pub completion: ScriptCompletion,
    /// Probabilities for forced continuations, keyed by continuation text.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub forced: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptCompletion {
    pub tokens: Vec<ScriptToken>,
}

/// `t` is the token text, `p` its probability, `top` the probabilities of
/// alternative tokens at the same position.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptToken {
    pub t: String,
    pub p: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub top: BTreeMap<String, f64>,
}

impl ScriptToken {
    pub fn new(t: impl Into<String>, p: f64) -> Self {
        ScriptToken { t: t.into(), p, top: BTreeMap::new() }
    }

    pub fn with_top(mut self, alternatives: &[(&str, f64)]) -> Self {
        for (t, p) in alternatives {
            self.top.insert(t.to_string(), *p);
        }
        self
    }
}

fn check_prob(p: f64, what: &str) -> Result<(), BackendError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(BackendError::BadScenario(format!(
            "{what} probability {p} outside (0, 1]"
        )));
    }
    Ok(())
}

fn completion_from_script(sc: &ScriptCompletion) -> Result<Completion, BackendError> {
    let mut tokens = Vec::with_capacity(sc.tokens.len());
    let mut text = String::new();
    for st in &sc.tokens {
        check_prob(st.p, "token")?;
        let mut top: BTreeMap<String, f64> = BTreeMap::new();
        for (alt, p) in &st.top {
            check_prob(*p, "alternative")?;
            top.insert(alt.clone(), p.ln());
        }
        // The sampled token is always part of the alternatives.
        top.insert(st.t.clone(), st.p.ln());
        text.push_str(&st.t);
        tokens.push(TokenLogprob { token: st.t.clone(), logprob: st.p.ln(), top_logprobs: top });
    }
    Ok(Completion { text, tokens, retries: 0 })
}

/// `*`-wildcard glob over bytes; the pattern must cover the whole text.
fn glob_match(pattern: &str, text: &str) -> bool {
    let p = pattern.as_bytes();
    let t = text.as_bytes();
    let (mut pi, mut ti) = (0usize, 0usize);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && (p[pi] == t[ti]) {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == b'*' {
            star = Some((pi, ti));
            pi += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    while pi < p.len() && p[pi] == b'*' {
        pi += 1;
    }
    pi == p.len()
}

/// Deterministic backend driven by a [`Script`]. When several patterns
/// match a prompt, the longest pattern wins; ties go to the earlier rule.
#[derive(Debug)]
pub struct MockBackend {
    script: Script,
    /// Wildcard-free rules resolved by exact lookup.
    exact: HashMap<String, usize>,
    /// Remaining rule indices sorted by pattern length, longest first.
    globs: Vec<usize>,
}

impl MockBackend {
    pub fn new(script: Script) -> Result<Self, BackendError> {
        if let Some(fb) = &script.fallback {
            completion_from_script(fb)?;
        }
        let mut exact = HashMap::new();
        let mut globs = Vec::new();
        for (i, rule) in script.rules.iter().enumerate() {
            completion_from_script(&rule.completion)?;
            if rule.pattern.contains('*') {
                globs.push(i);
            } else {
                // First rule wins among identical exact patterns.
                exact.entry(rule.pattern.clone()).or_insert(i);
            }
        }
        globs.sort_by_key(|&i| std::cmp::Reverse(script.rules[i].pattern.len()));
        Ok(MockBackend { script, exact, globs })
    }

    pub fn from_reader(reader: impl Read) -> Result<Self, BackendError> {
        let script: Script = serde_json::from_reader(reader)
            .map_err(|e| BackendError::BadScenario(e.to_string()))?;
        Self::new(script)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    fn find_rule(&self, prompt: &str) -> Option<&ScriptRule> {
        let exact_hit = self.exact.get(prompt).copied();
        let exact_len = exact_hit.map_or(0, |i| self.script.rules[i].pattern.len());
        for &i in &self.globs {
            let rule = &self.script.rules[i];
            if rule.pattern.len() <= exact_len {
                break;
            }
            if glob_match(&rule.pattern, prompt) {
                // A longer glob beats the exact hit; an equal-length one
                // does not (globs are sorted, so the first match is the
                // longest glob candidate).
                if rule.pattern.len() > exact_len || exact_hit.is_none() {
                    return Some(rule);
                }
                break;
            }
        }
        exact_hit.map(|i| &self.script.rules[i])
    }

    fn apply_stop(completion: &mut Completion, stop: &[String]) {
        let cut = stop
            .iter()
            .filter(|s| !s.is_empty())
            .filter_map(|s| completion.text.find(s.as_str()))
            .min();
        let Some(cut) = cut else { return };
        completion.text.truncate(cut);
        let mut consumed = 0usize;
        completion.tokens.retain(|t| {
            let keep = consumed < cut;
            consumed += t.token.len();
            keep
        });
    }
}

impl Backend for MockBackend {
    fn complete(&self, prompt: &str, stop: &[String]) -> Result<Completion, BackendError> {
        let sc = match self.find_rule(prompt) {
            Some(rule) => &rule.completion,
            None => self
                .script
                .fallback
                .as_ref()
                .ok_or_else(|| BackendError::NoMatch(prompt.to_string()))?,
        };
        let mut completion = completion_from_script(sc)?;
        Self::apply_stop(&mut completion, stop);
        Ok(completion)
    }

    fn token_logprobs(&self, prompt: &str, continuation: &str)
        -> Result<Vec<f64>, BackendError> {
        let rule = self
            .find_rule(prompt)
            .ok_or_else(|| BackendError::NoMatch(prompt.to_string()))?;
        if let Some(probs) = rule.forced.get(continuation) {
            for p in probs {
                check_prob(*p, "forced")?;
            }
            return Ok(probs.iter().map(|p| p.ln()).collect());
        }
        // Fall back to the scripted completion when the continuation is a
        // prefix of it on token boundaries.
        let mut acc = String::new();
        let mut lps = Vec::new();
        for st in &rule.completion.tokens {
            acc.push_str(&st.t);
            lps.push(st.p.ln());
            if acc == continuation {
                return Ok(lps);
            }
            if !continuation.starts_with(&acc) {
                break;
            }
        }
        Err(BackendError::MissingForced(continuation.to_string()))
    }
}

// ---------------------------------------------------------------------------
// HTTP backend
// ---------------------------------------------------------------------------

/// Sampling parameters sent with every completion request. Greedy decoding
/// by default.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenParams {
    pub max_tokens: u32,
    pub temperature: f64,
    /// Number of top alternatives requested per token position.
    pub logprobs: u32,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams { max_tokens: 256, temperature: 0.0, logprobs: 10 }
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
    logprobs: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    stop: Option<&'a [String]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    echo: Option<bool>,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    #[serde(default)]
    text: String,
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Deserialize)]
struct ChoiceLogprobs {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
    #[serde(default)]
    top_logprobs: Option<Vec<Option<BTreeMap<String, f64>>>>,
    #[serde(default)]
    text_offset: Option<Vec<usize>>,
}

/// Client for a JSON completion endpoint that reports per-token
/// log-probabilities. Transient failures (connect errors, 429, 5xx) are
/// retried with exponential backoff, three attempts in total.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    auth_token: Option<String>,
    pub params: GenParams,
    max_attempts: u32,
    base_backoff: Duration,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, auth_token: Option<String>) -> Self {
        HttpBackend {
            client: reqwest::blocking::Client::new(),
            endpoint: endpoint.into(),
            model: model.into(),
            auth_token,
            params: GenParams::default(),
            max_attempts: 3,
            base_backoff: Duration::from_millis(100),
        }
    }

    pub fn with_params(mut self, params: GenParams) -> Self {
        self.params = params;
        self
    }

    /// Shrink the retry backoff; only test servers want this.
    pub fn with_backoff(mut self, base: Duration) -> Self {
        self.base_backoff = base;
        self
    }

    fn post(&self, request: &CompletionRequest<'_>) -> Result<(CompletionResponse, u32), BackendError> {
        let mut retries = 0u32;
        loop {
            let mut builder = self.client.post(&self.endpoint).json(request);
            if let Some(token) = &self.auth_token {
                builder = builder.header("Authorization", format!("Bearer {token}"));
            }
            let outcome = builder.send();
            let retryable = match &outcome {
                Ok(resp) => {
                    let code = resp.status().as_u16();
                    code == 429 || code >= 500
                }
                Err(_) => true,
            };
            match outcome {
                Ok(resp) if resp.status().is_success() => {
                    let parsed = resp
                        .json::<CompletionResponse>()
                        .map_err(|e| BackendError::Transport(format!("bad response body: {e}")))?;
                    return Ok((parsed, retries));
                }
                Ok(_) if retryable && retries + 1 < self.max_attempts => {}
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    let body = resp.text().unwrap_or_default();
                    let excerpt: String = body.chars().take(200).collect();
                    return Err(BackendError::Http { status, body: excerpt });
                }
                Err(e) if retries + 1 < self.max_attempts => {
                    let _ = e;
                }
                Err(e) => return Err(BackendError::Transport(e.to_string())),
            }
            std::thread::sleep(self.base_backoff * 2u32.pow(retries));
            retries += 1;
        }
    }
}

impl Backend for HttpBackend {
    fn complete(&self, prompt: &str, stop: &[String]) -> Result<Completion, BackendError> {
        let request = CompletionRequest {
            model: &self.model,
            prompt,
            max_tokens: self.params.max_tokens,
            temperature: self.params.temperature,
            logprobs: self.params.logprobs,
            stop: if stop.is_empty() { None } else { Some(stop) },
            echo: None,
        };
        let (response, retries) = self.post(&request)?;
        let choice = response
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Transport("response has no choices".into()))?;
        let lp = choice.logprobs.ok_or(BackendError::MissingLogprobs)?;
        if lp.tokens.len() != lp.token_logprobs.len() {
            return Err(BackendError::Transport(
                "tokens and token_logprobs lengths differ".into(),
            ));
        }
        let mut tokens = Vec::with_capacity(lp.tokens.len());
        for (i, (token, logprob)) in lp.tokens.iter().zip(lp.token_logprobs.iter()).enumerate() {
            let logprob = logprob.ok_or(BackendError::MissingLogprobs)?;
            let top = lp
                .top_logprobs
                .as_ref()
                .and_then(|tops| tops.get(i).cloned().flatten())
                .unwrap_or_default();
            tokens.push(TokenLogprob { token: token.clone(), logprob, top_logprobs: top });
        }
        Ok(Completion { text: choice.text, tokens, retries })
    }

    fn token_logprobs(&self, prompt: &str, continuation: &str)
        -> Result<Vec<f64>, BackendError> {
        // Echo scoring: the server returns logprobs for the whole echoed
        // input; the continuation's tokens are those whose text offset
        // falls at or beyond the end of the original prompt.
        let full = format!("{prompt}{continuation}");
        let request = CompletionRequest {
            model: &self.model,
            prompt: &full,
            max_tokens: 0,
            temperature: self.params.temperature,
            logprobs: self.params.logprobs,
            stop: None,
            echo: Some(true),
        };
        let (response, _) = self.post(&request)?;
        let choice = response
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Transport("response has no choices".into()))?;
        let lp = choice.logprobs.ok_or(BackendError::MissingLogprobs)?;
        let offsets = lp.text_offset.ok_or_else(|| {
            BackendError::Transport("echo scoring requires text_offset in logprobs".into())
        })?;
        let mut out = Vec::new();
        for (i, offset) in offsets.iter().enumerate() {
            if *offset >= prompt.len() {
                let logprob = lp
                    .token_logprobs
                    .get(i)
                    .copied()
                    .flatten()
                    .ok_or(BackendError::MissingLogprobs)?;
                out.push(logprob);
            }
        }
        if out.is_empty() {
            return Err(BackendError::Transport(
                "no tokens aligned with the forced continuation".into(),
            ));
        }
        Ok(out)
    }
}
