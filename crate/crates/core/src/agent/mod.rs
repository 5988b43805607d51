//! Adapters that let external decision-makers play: OpenAI-compatible chat
//! endpoints and local subprocesses speaking a JSON line protocol.

mod http;
mod parse;
mod prompt;
mod subprocess;

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{Action, Horizon, MoveContext, Player};
use crate::rng::GameRng;

pub use http::{request_move, set_inflight_cap, MoveReply};
pub use parse::{parse_action, ParseError};
pub use prompt::{
    render_prompt, ChatMessage, HistoryRendering, PromptTemplate, TemplateError, TEMPLATE_NAMES,
};
pub use subprocess::{subprocess_step, MoveRequest, SubprocessAgent};

/// An external player broke protocol, timed out or was unreachable.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{reason}")]
pub struct AgentFailure {
    pub reason: String,
}

impl AgentFailure {
    pub fn new(reason: impl Into<String>) -> Self {
        AgentFailure {
            reason: reason.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    ChatHttp,
    Subprocess,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_retries() -> u32 {
    2
}

fn default_temperature() -> f64 {
    1.0
}

fn default_template() -> String {
    "default".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentEndpointConfig {
    pub kind: AgentKind,
    /// URL for chat endpoints, command line for subprocesses.
    pub address: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credentials: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_template")]
    pub template: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid agent endpoint: {0}")]
pub struct EndpointConfigError(pub String);

impl AgentEndpointConfig {
    pub fn chat(address: impl Into<String>, model_name: impl Into<String>) -> Self {
        AgentEndpointConfig {
            kind: AgentKind::ChatHttp,
            address: address.into(),
            model_name: Some(model_name.into()),
            credentials: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_retries(),
            temperature: default_temperature(),
            template: default_template(),
        }
    }

    pub fn subprocess(command: impl Into<String>) -> Self {
        AgentEndpointConfig {
            kind: AgentKind::Subprocess,
            address: command.into(),
            model_name: None,
            credentials: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_retries(),
            temperature: default_temperature(),
            template: default_template(),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn validate(&self) -> Result<(), EndpointConfigError> {
        let err = |m: &str| Err(EndpointConfigError(m.to_string()));
        if self.address.trim().is_empty() {
            return err("address is empty");
        }
        if self.timeout_ms == 0 {
            return err("timeout must be positive");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return err("temperature must be >= 0");
        }
        if let Some(var) = &self.credentials {
            let ok = !var.is_empty()
                && var
                    .chars()
                    .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
                && !var.starts_with(|c: char| c.is_ascii_digit());
            if !ok {
                return err("credentials must name an environment variable (e.g. OPENAI_API_KEY)");
            }
        }
        if self.kind == AgentKind::ChatHttp && self.model_name.is_none() {
            return err("chat endpoints need model_name");
        }
        if self.kind == AgentKind::Subprocess && shlex::split(&self.address).is_none_or(|v| v.is_empty()) {
            return err("subprocess command line does not parse");
        }
        PromptTemplate::named(&self.template).map_err(|e| EndpointConfigError(e.to_string()))?;
        Ok(())
    }
}

/// One played round of an external agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub round: u32,
    pub messages: Vec<ChatMessage>,
    /// Raw reply of every attempt, in order.
    pub raw_responses: Vec<String>,
    pub parsed_action: Option<Action>,
    pub latency_ms: u64,
    pub retries: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentTranscript {
    pub agent: String,
    pub entries: Vec<TranscriptEntry>,
}

/// Player backed by an [`AgentEndpointConfig`]. Each round is a stateless
/// call carrying the full history.
pub struct AgentPlayer {
    cfg: AgentEndpointConfig,
    template: PromptTemplate,
    process: Option<SubprocessAgent>,
    transcript: AgentTranscript,
}

impl AgentPlayer {
    pub fn new(cfg: AgentEndpointConfig) -> Self {
        let template = PromptTemplate::named(&cfg.template).unwrap_or_default();
        let agent = cfg
            .model_name
            .clone()
            .unwrap_or_else(|| cfg.address.clone());
        AgentPlayer {
            cfg,
            template,
            process: None,
            transcript: AgentTranscript {
                agent,
                entries: Vec::new(),
            },
        }
    }

    fn horizon_view(ctx: &MoveContext<'_>) -> Horizon {
        match ctx.known_rounds {
            Some(n) => Horizon::fixed(n),
            // length undisclosed; only `disclosed_rounds` is consulted
            None => Horizon::Fixed {
                rounds: 1,
                known_to_players: false,
            },
        }
    }
}

impl Player for AgentPlayer {
    fn choose(&mut self, ctx: &MoveContext<'_>, _rng: &mut GameRng) -> Result<Action, AgentFailure> {
        match self.cfg.kind {
            AgentKind::ChatHttp => {
                let messages = render_prompt(
                    &self.template,
                    ctx.payoffs,
                    &Self::horizon_view(ctx),
                    ctx.history,
                )
                .map_err(|e| AgentFailure::new(e.to_string()))?;
                let result = request_move(&self.cfg, &messages);
                let entry = match &result {
                    Ok(reply) => TranscriptEntry {
                        round: ctx.round,
                        messages,
                        raw_responses: reply.attempts.clone(),
                        parsed_action: Some(reply.action),
                        latency_ms: reply.latency.as_millis() as u64,
                        retries: reply.retries,
                        error: None,
                    },
                    Err(f) => TranscriptEntry {
                        round: ctx.round,
                        messages,
                        raw_responses: Vec::new(),
                        parsed_action: None,
                        latency_ms: 0,
                        retries: self.cfg.max_retries,
                        error: Some(f.reason.clone()),
                    },
                };
                self.transcript.entries.push(entry);
                result.map(|r| r.action)
            }
            AgentKind::Subprocess => {
                if self.process.is_none() {
                    self.process = Some(SubprocessAgent::spawn(&self.cfg)?);
                }
                let process = self.process.as_mut().expect("spawned above");
                let request = MoveRequest::new(ctx);
                let result = process.step(&request);
                let entry = TranscriptEntry {
                    round: ctx.round,
                    messages: vec![ChatMessage::user(
                        serde_json::to_string(&request).expect("request serializes"),
                    )],
                    raw_responses: process.last_raw().to_vec(),
                    parsed_action: result.as_ref().ok().copied(),
                    latency_ms: process.last_latency().as_millis() as u64,
                    retries: process.last_retries(),
                    error: result.as_ref().err().map(|f| f.reason.clone()),
                };
                self.transcript.entries.push(entry);
                result
            }
        }
    }

    fn metadata(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        if self.cfg.kind == AgentKind::ChatHttp {
            m.insert("prompt_template".into(), self.template.name.clone());
        }
        m
    }

    fn take_transcript(&mut self) -> Option<AgentTranscript> {
        let agent = self.transcript.agent.clone();
        Some(std::mem::replace(
            &mut self.transcript,
            AgentTranscript {
                agent,
                entries: Vec::new(),
            },
        ))
    }
}

/// Runs one request against an endpoint on a fixed three-round history.
/// Returns the reply and the rendered messages.
pub fn agent_check(cfg: &AgentEndpointConfig) -> Result<(MoveReply, Vec<ChatMessage>), AgentFailure> {
    use crate::game::PayoffMatrix;
    use crate::strategy::History;
    cfg.validate().map_err(|e| AgentFailure::new(e.to_string()))?;
    let history = History::from_pairs([(Action::C, Action::C), (Action::C, Action::D), (Action::D, Action::C)]);
    let matrix = PayoffMatrix::axelrod();
    let horizon = Horizon::fixed(10);
    match cfg.kind {
        AgentKind::ChatHttp => {
            let template = PromptTemplate::named(&cfg.template).map_err(|e| AgentFailure::new(e.to_string()))?;
            let messages = render_prompt(&template, &matrix, &horizon, &history)
                .map_err(|e| AgentFailure::new(e.to_string()))?;
            request_move(cfg, &messages).map(|r| (r, messages))
        }
        AgentKind::Subprocess => {
            let mut agent = SubprocessAgent::spawn(cfg)?;
            let ctx = MoveContext {
                round: 4,
                history: &history,
                payoffs: &matrix,
                known_rounds: Some(10),
            };
            let request = MoveRequest::new(&ctx);
            let start = std::time::Instant::now();
            let action = agent.step(&request)?;
            Ok((
                MoveReply {
                    action,
                    raw: agent.last_raw().last().cloned().unwrap_or_default(),
                    attempts: agent.last_raw().to_vec(),
                    retries: agent.last_retries(),
                    latency: start.elapsed(),
                },
                vec![ChatMessage::user(serde_json::to_string(&request).expect("serializes"))],
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_validation() {
        let mut cfg = AgentEndpointConfig::chat("http://localhost:1/v1/chat/completions", "m");
        assert!(cfg.validate().is_ok());
        cfg.credentials = Some("sk-abc123".into());
        assert!(cfg.validate().is_err());
        cfg.credentials = Some("OPENAI_API_KEY".into());
        assert!(cfg.validate().is_ok());
        cfg.timeout_ms = 0;
        assert!(cfg.validate().is_err());
        cfg.timeout_ms = 10;
        cfg.template = "nope".into();
        assert!(cfg.validate().is_err());
        let sub = AgentEndpointConfig::subprocess("python3 'unterminated");
        assert!(sub.validate().is_err());
    }

    #[test]
    fn config_json_defaults() {
        let cfg: AgentEndpointConfig =
            serde_json::from_str(r#"{"kind":"subprocess","address":"python3 agent.py"}"#).unwrap();
        assert_eq!(cfg.max_retries, 2);
        assert_eq!(cfg.temperature, 1.0);
        assert_eq!(cfg.template, "default");
    }
}
