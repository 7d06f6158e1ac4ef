//! Chat-completion client: POST `{base_url}/chat/completions`, read the
//! first choice's message content.

use std::thread;
use std::time::Duration;

use serde_json::{json, Value};
use tracing::warn;

use super::{AgentError, PromptText, MEMBER_INDEX};

pub(super) struct Request<'a> {
    pub base_url: &'a str,
    pub model_name: &'a str,
    pub credential_ref: Option<&'a str>,
    pub temperature: f64,
    pub max_retries: u32,
    pub retry_base: Duration,
}

enum Failure {
    Retryable(String),
    Fatal(AgentError),
}

fn endpoint(base_url: &str) -> String {
    let base = base_url.trim_end_matches('/');
    if base.ends_with("/chat/completions") {
        base.to_string()
    } else {
        format!("{base}/chat/completions")
    }
}

fn attempt(http: &ureq::Agent, url: &str, token: Option<&str>, body: &Value) -> Result<String, Failure> {
    let mut req = http.post(url).header("Content-Type", "application/json");
    if let Some(token) = token {
        req = req.header("Authorization", &format!("Bearer {token}"));
    }
    match req.send_json(body) {
        Ok(mut resp) => {
            let reply: Value = resp
                .body_mut()
                .read_json()
                .map_err(|e| Failure::Fatal(AgentError::BadResponse(e.to_string())))?;
            reply
                .pointer("/choices/0/message/content")
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| {
                    Failure::Fatal(AgentError::BadResponse(
                        "missing choices[0].message.content".into(),
                    ))
                })
        }
        Err(ureq::Error::StatusCode(status)) if status == 429 || status >= 500 => {
            Err(Failure::Retryable(format!("HTTP {status}")))
        }
        Err(ureq::Error::StatusCode(status)) => Err(Failure::Fatal(AgentError::Http { status })),
        Err(other) => Err(Failure::Retryable(other.to_string())),
    }
}

/// Returns the reply text and the zero-based index of the successful attempt.
pub(super) fn complete(
    http: &ureq::Agent,
    req: &Request<'_>,
    prompt: &PromptText,
) -> Result<(String, u32), AgentError> {
    let token = match req.credential_ref {
        Some(var) => Some(std::env::var(var).map_err(|_| AgentError::CredentialMissing(var.to_string()))?),
        None => None,
    };
    let mut body = json!({
        "model": req.model_name,
        "messages": [{"role": "user", "content": prompt.text}],
        "temperature": req.temperature,
    });
    if let Some(seed) = prompt.binding(MEMBER_INDEX).and_then(|m| m.parse::<u64>().ok()) {
        body["seed"] = json!(seed);
    }
    let url = endpoint(req.base_url);
    let mut last = String::new();
    for n in 0..=req.max_retries {
        if n > 0 {
            thread::sleep(req.retry_base * 2u32.saturating_pow(n - 1));
        }
        match attempt(http, &url, token.as_deref(), &body) {
            Ok(text) => return Ok((text, n)),
            Err(Failure::Fatal(e)) => return Err(e),
            Err(Failure::Retryable(msg)) => {
                warn!(attempt = n, %url, "chat completion failed: {msg}");
                last = msg;
            }
        }
    }
    Err(AgentError::Transport {
        attempts: req.max_retries + 1,
        message: last,
    })
}
