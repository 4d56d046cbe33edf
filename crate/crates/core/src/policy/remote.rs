//! HTTP adapter for model-backed policies.
//!
//! Speaks a small JSON chat protocol: POST a [`ChatRequest`], get back a
//! [`ChatResponse`] with the generated text and, when requested, per-position
//! top-token log-probabilities. Index distributions are recovered from the
//! first two reply tokens: the first request reads the distribution over the
//! leading index digit, then one follow-up per live first digit (with that
//! digit prefilled as partial assistant output) reads the continuation row —
//! second digit versus the [`END_TOKEN`] reply terminator. The rows feed
//! [`compose_digits`]. Servers that return no log-probabilities make
//! [`Policy::index_distribution`] report `Unsupported`, which callers treat
//! as "fall back to sampling".

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::dataset::{Action, ArgValue, ToolChoice, NO_OP};
use crate::seed::SeedCtx;

use super::{
    compose_digits, Candidate, CandidateSet, DecisionContext, DigitModel, IndexDistribution,
    Policy, PolicyError,
};

/// Token key under which a server reports "the reply ends here" probability
/// in `top_logprobs`.
pub const END_TOKEN: &str = "<end>";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: "user".into(), content: content.into() }
    }

    /// Partial assistant output the server must treat as already generated.
    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: "assistant".into(), content: content.into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_logprobs: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatResponse {
    /// Generated text (empty for pure logprob probes).
    #[serde(default)]
    pub text: String,
    /// Per generated position: token → natural-log probability.
    #[serde(default)]
    pub top_logprobs: Option<Vec<BTreeMap<String, f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    /// Name of the environment variable holding the endpoint URL.
    pub endpoint_env: String,
    /// Name of the environment variable holding the bearer token (optional).
    pub api_key_env: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Top-k size requested for logprob probes.
    pub top_logprobs: usize,
    /// Extra attempts after the first, on transport errors and 5xx only.
    pub max_retries: usize,
    /// Base backoff between retries; doubles per attempt. Zero disables.
    pub backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint_env: "EGB_REMOTE_ENDPOINT".into(),
            api_key_env: "EGB_REMOTE_API_KEY".into(),
            model: "default".into(),
            temperature: 1.0,
            max_tokens: 512,
            top_logprobs: 20,
            max_retries: 3,
            backoff_ms: 50,
            timeout_secs: 30,
        }
    }
}

pub struct RemotePolicy {
    endpoint: String,
    api_key: Option<String>,
    config: RemoteConfig,
    client: reqwest::blocking::Client,
}

impl RemotePolicy {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, config: RemoteConfig) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .expect("http client");
        RemotePolicy { endpoint: endpoint.into(), api_key, config, client }
    }

    /// Build from the environment variables named in `config`.
    pub fn from_env(config: RemoteConfig) -> Result<Self, PolicyError> {
        let endpoint = std::env::var(&config.endpoint_env).map_err(|_| {
            PolicyError::Config(format!("environment variable {} is not set", config.endpoint_env))
        })?;
        let api_key = std::env::var(&config.api_key_env).ok();
        Ok(RemotePolicy::new(endpoint, api_key, config))
    }

    fn post(&self, req: &ChatRequest) -> Result<ChatResponse, PolicyError> {
        let mut last_err = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 && self.config.backoff_ms > 0 {
                let shift = (attempt - 1).min(4) as u32;
                std::thread::sleep(Duration::from_millis(self.config.backoff_ms << shift));
            }
            let mut builder = self.client.post(&self.endpoint).json(req);
            if let Some(key) = &self.api_key {
                builder = builder.bearer_auth(key);
            }
            match builder.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp.json::<ChatResponse>().map_err(|e| {
                            PolicyError::Remote(format!("malformed response body: {e}"))
                        });
                    }
                    if status.is_server_error() {
                        last_err = format!("server error {status}");
                        continue;
                    }
                    return Err(PolicyError::Remote(format!("request rejected: {status}")));
                }
                Err(e) => {
                    last_err = format!("transport error: {e}");
                    continue;
                }
            }
        }
        Err(PolicyError::Remote(format!(
            "{last_err} (after {} attempts)",
            self.config.max_retries + 1
        )))
    }

    fn logprob_request(&self, prompt: &str, prefill: Option<&str>) -> ChatRequest {
        let mut messages = vec![ChatMessage::user(prompt)];
        if let Some(p) = prefill {
            messages.push(ChatMessage::assistant(p));
        }
        ChatRequest {
            model: self.config.model.clone(),
            messages,
            temperature: 0.0,
            max_tokens: 1,
            seed: None,
            logprobs: Some(true),
            top_logprobs: Some(self.config.top_logprobs),
        }
    }
}

fn digit_of(token: &str) -> Option<usize> {
    let mut chars = token.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => c.to_digit(10).map(|d| d as usize),
        _ => None,
    }
}

/// Interpret a model reply as an action. Anything that fails to parse, or
/// names a tool outside the candidate list, becomes an `INVALID` vote: it
/// still counts toward the uncertainty estimate but is never executed.
fn parse_action(text: &str, candidates: &CandidateSet) -> Action {
    let invalid = Action { tool: ToolChoice::Invalid, args: BTreeMap::new() };
    let json_span = match (text.find('{'), text.rfind('}')) {
        (Some(s), Some(e)) if s < e => &text[s..=e],
        _ => {
            if text.trim().eq_ignore_ascii_case(NO_OP) {
                return Action::noop();
            }
            return invalid;
        }
    };

    #[derive(Deserialize)]
    struct WireCall {
        tool: String,
        #[serde(default)]
        args: BTreeMap<String, ArgValue>,
    }

    let Ok(call) = serde_json::from_str::<WireCall>(json_span) else {
        return invalid;
    };
    if call.tool.eq_ignore_ascii_case(NO_OP) {
        return Action::noop();
    }
    let choice = ToolChoice::Tool(call.tool);
    if !candidates.contains(&choice) {
        return invalid;
    }
    Action { tool: choice, args: call.args }
}

impl Policy for RemotePolicy {
    fn sample_actions(
        &self,
        ctx: &DecisionContext<'_>,
        m: usize,
        seed: u64,
    ) -> Result<Vec<Action>, PolicyError> {
        let prompt = ctx.render_prompt();
        let base = SeedCtx::new(seed).with_str("remote-sample");
        (0..m)
            .map(|i| {
                let req = ChatRequest {
                    model: self.config.model.clone(),
                    messages: vec![ChatMessage::user(prompt.clone())],
                    temperature: self.config.temperature,
                    max_tokens: self.config.max_tokens,
                    seed: Some(base.with_u64(i as u64).seed()),
                    logprobs: None,
                    top_logprobs: None,
                };
                let resp = self.post(&req)?;
                Ok(parse_action(&resp.text, ctx.candidates))
            })
            .collect()
    }

    fn index_distribution(&self, ctx: &DecisionContext<'_>) -> Result<IndexDistribution, PolicyError> {
        let prompt = format!(
            "{}Reply with only the index of the chosen candidate, written in decimal digits.\n",
            ctx.render_prompt()
        );

        let first = self.post(&self.logprob_request(&prompt, None))?;
        let Some(first_row) = first.top_logprobs.as_ref().and_then(|rows| rows.first()) else {
            return Err(PolicyError::Unsupported);
        };

        let mut model = DigitModel {
            p1: [0.0; 10],
            p2_given_d1: [[0.0; 10]; 10],
            p_end_given_d1: [1.0; 10],
        };
        for (token, logp) in first_row {
            if let Some(d) = digit_of(token) {
                model.p1[d] = logp.exp().clamp(0.0, 1.0);
            }
        }
        // Mass on non-digit first tokens is simply absent from p1 and ends up
        // in `dropped_mass` after composition. Guard against top-k rounding
        // pushing the sum past one.
        let p1_sum: f64 = model.p1.iter().sum();
        if p1_sum > 1.0 {
            for p in &mut model.p1 {
                *p /= p1_sum;
            }
        }

        for d1 in 0..10 {
            if model.p1[d1] <= 0.0 {
                continue;
            }
            let resp = self.post(&self.logprob_request(&prompt, Some(&d1.to_string())))?;
            let Some(row) = resp.top_logprobs.as_ref().and_then(|rows| rows.first()) else {
                return Err(PolicyError::Unsupported);
            };
            let mut digits = [0.0f64; 10];
            let mut end = 0.0f64;
            for (token, logp) in row {
                let p = logp.exp().clamp(0.0, 1.0);
                if let Some(d) = digit_of(token) {
                    digits[d] = p;
                } else if token == END_TOKEN {
                    end = p;
                }
            }
            let total = end + digits.iter().sum::<f64>();
            if total <= 0.0 {
                // Nothing usable after this first digit: drop the branch and
                // let the lost mass surface in `dropped_mass`.
                model.p1[d1] = 0.0;
                continue;
            }
            model.p2_given_d1[d1] = digits.map(|q| q / total);
            model.p_end_given_d1[d1] = end / total;
        }

        compose_digits(&model, ctx.candidates.len())
    }

    fn generate_params(
        &self,
        ctx: &DecisionContext<'_>,
        candidate: &Candidate,
    ) -> Result<Action, PolicyError> {
        if matches!(candidate, Candidate::NoOp) {
            return Ok(Action::noop());
        }
        let prompt = format!(
            "{}The tool for this substep has already been chosen: {}. \
             Reply with the complete call as JSON {{\"tool\": \"{}\", \"args\": {{...}}}}.\n",
            ctx.render_prompt(),
            candidate.name(),
            candidate.name()
        );
        let req = ChatRequest {
            model: self.config.model.clone(),
            messages: vec![ChatMessage::user(prompt)],
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
            seed: None,
            logprobs: None,
            top_logprobs: None,
        };
        let resp = self.post(&req)?;
        let parsed = parse_action(&resp.text, ctx.candidates);
        let args = if parsed.tool == candidate.choice() { parsed.args } else { BTreeMap::new() };
        Ok(Action { tool: candidate.choice(), args })
    }
}
