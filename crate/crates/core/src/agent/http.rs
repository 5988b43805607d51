use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{parse_action, AgentEndpointConfig, AgentFailure, ChatMessage};
use crate::game::Action;

const CLARIFICATION: &str =
    "Your reply could not be read. Answer with exactly one word: cooperate or defect.";

/// Default cap on concurrent chat requests across the process.
pub const DEFAULT_INFLIGHT_CAP: usize = 4;

struct Limiter {
    state: Mutex<(usize, usize)>,
    freed: Condvar,
}

static LIMITER: Limiter = Limiter {
    state: Mutex::new((0, DEFAULT_INFLIGHT_CAP)),
    freed: Condvar::new(),
};

struct Permit;

impl Permit {
    fn acquire() -> Permit {
        let mut s = LIMITER.state.lock().unwrap_or_else(|e| e.into_inner());
        while s.0 >= s.1 {
            s = LIMITER.freed.wait(s).unwrap_or_else(|e| e.into_inner());
        }
        s.0 += 1;
        Permit
    }
}

impl Drop for Permit {
    fn drop(&mut self) {
        let mut s = LIMITER.state.lock().unwrap_or_else(|e| e.into_inner());
        s.0 -= 1;
        LIMITER.freed.notify_one();
    }
}

/// Sets the process-wide limit on in-flight chat requests (minimum 1).
pub fn set_inflight_cap(cap: usize) {
    let mut s = LIMITER.state.lock().unwrap_or_else(|e| e.into_inner());
    s.1 = cap.max(1);
    LIMITER.freed.notify_all();
}

#[derive(Clone, Debug, PartialEq)]
pub struct MoveReply {
    pub action: Action,
    /// Text of the reply that parsed.
    pub raw: String,
    /// Every raw reply received, including unparseable ones.
    pub attempts: Vec<String>,
    pub retries: u32,
    pub latency: Duration,
}

fn post_chat(
    agent: &ureq::Agent,
    cfg: &AgentEndpointConfig,
    messages: &[ChatMessage],
) -> Result<String, AgentFailure> {
    let body = json!({
        "model": cfg.model_name.clone().unwrap_or_default(),
        "messages": messages,
        "temperature": cfg.temperature,
    });
    let mut request = agent.post(&cfg.address);
    if let Some(var) = &cfg.credentials {
        let key = std::env::var(var).map_err(|_| {
            AgentFailure::new(format!("credential environment variable {var} is not set"))
        })?;
        request = request.header("Authorization", &format!("Bearer {key}"));
    }
    let _permit = Permit::acquire();
    let mut response = request
        .send_json(&body)
        .map_err(|e| AgentFailure::new(format!("request to {} failed: {}", cfg.address, scrub(e))))?;
    let value: Value = response
        .body_mut()
        .read_json()
        .map_err(|e| AgentFailure::new(format!("bad response body: {}", scrub(e))))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| AgentFailure::new("response has no choices[0].message.content"))
}

// ureq errors never carry request headers, but keep only the first line.
fn scrub(e: ureq::Error) -> String {
    e.to_string().lines().next().unwrap_or_default().to_string()
}

/// Sends the messages and parses the reply, retrying unparseable or failed
/// attempts up to `max_retries` times. Each attempt is bounded by the
/// configured timeout.
pub fn request_move(
    cfg: &AgentEndpointConfig,
    messages: &[ChatMessage],
) -> Result<MoveReply, AgentFailure> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(cfg.timeout()))
        .build()
        .into();
    let start = Instant::now();
    let mut conversation = messages.to_vec();
    let mut attempts = Vec::new();
    let mut last_error = None;
    for attempt in 0..=cfg.max_retries {
        match post_chat(&agent, cfg, &conversation) {
            Ok(raw) => match parse_action(&raw) {
                Ok(action) => {
                    attempts.push(raw.clone());
                    return Ok(MoveReply {
                        action,
                        raw,
                        attempts,
                        retries: attempt,
                        latency: start.elapsed(),
                    });
                }
                Err(e) => {
                    conversation.push(ChatMessage::assistant(raw.clone()));
                    conversation.push(ChatMessage::user(CLARIFICATION));
                    attempts.push(raw);
                    last_error = Some(e.to_string());
                }
            },
            Err(f) => last_error = Some(f.reason),
        }
    }
    let excerpt: String = attempts
        .last()
        .map(|r| r.chars().take(80).collect())
        .unwrap_or_default();
    Err(AgentFailure::new(format!(
        "gave up after {} attempts: {}{}",
        cfg.max_retries + 1,
        last_error.unwrap_or_default(),
        if excerpt.is_empty() {
            String::new()
        } else {
            format!(" (last reply: {excerpt:?})")
        }
    )))
}
