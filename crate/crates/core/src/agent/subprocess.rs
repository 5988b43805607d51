use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{AgentEndpointConfig, AgentFailure};
use crate::game::{Action, MoveContext, PayoffMatrix};

/// Engine-to-agent line: `{"type":"move_request", ...}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoveRequest {
    #[serde(rename = "type")]
    pub kind: String,
    pub round: u32,
    /// `(own, opponent)` pairs from the agent's perspective.
    pub history: Vec<[Action; 2]>,
    pub payoffs: PayoffMatrix,
    pub horizon: Option<Value>,
}

impl MoveRequest {
    pub fn new(ctx: &MoveContext<'_>) -> Self {
        MoveRequest {
            kind: "move_request".into(),
            round: ctx.round,
            history: ctx.history.iter().map(|(a, b)| [a, b]).collect(),
            payoffs: *ctx.payoffs,
            horizon: ctx
                .known_rounds
                .map(|n| serde_json::json!({"kind": "fixed", "rounds": n})),
        }
    }
}

fn parse_reply(line: &str) -> Result<Action, String> {
    let v: Value = serde_json::from_str(line.trim()).map_err(|e| format!("not JSON: {e}"))?;
    if v.get("type").and_then(Value::as_str) != Some("move") {
        return Err("missing \"type\":\"move\"".into());
    }
    v.get("action")
        .and_then(Value::as_str)
        .ok_or_else(|| "missing action".to_string())?
        .parse()
}

struct Running {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Drop for Running {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A player process speaking newline-delimited JSON on stdin/stdout.
///
/// The process is restarted after any protocol violation; each request is
/// retried up to `max_retries` times before an [`AgentFailure`].
pub struct SubprocessAgent {
    argv: Vec<String>,
    timeout: Duration,
    max_retries: u32,
    running: Option<Running>,
    last_raw: Vec<String>,
    last_retries: u32,
    last_latency: Duration,
}

impl SubprocessAgent {
    pub fn spawn(cfg: &AgentEndpointConfig) -> Result<Self, AgentFailure> {
        let argv = shlex::split(&cfg.address)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| AgentFailure::new("subprocess command line does not parse"))?;
        let mut agent = SubprocessAgent {
            argv,
            timeout: cfg.timeout(),
            max_retries: cfg.max_retries,
            running: None,
            last_raw: Vec::new(),
            last_retries: 0,
            last_latency: Duration::ZERO,
        };
        agent.start()?;
        Ok(agent)
    }

    fn start(&mut self) -> Result<(), AgentFailure> {
        let mut child = Command::new(&self.argv[0])
            .args(&self.argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| AgentFailure::new(format!("cannot start {}: {e}", self.argv[0])))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        self.running = Some(Running {
            child,
            stdin,
            lines: rx,
        });
        Ok(())
    }

    fn exchange(&mut self, line: &str) -> Result<String, String> {
        if self.running.is_none() {
            self.start().map_err(|f| f.reason)?;
        }
        let running = self.running.as_mut().expect("started");
        writeln!(running.stdin, "{line}")
            .and_then(|_| running.stdin.flush())
            .map_err(|e| format!("write failed: {e}"))?;
        match running.lines.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => Ok(reply),
            Ok(Err(e)) => Err(format!("read failed: {e}")),
            Err(RecvTimeoutError::Timeout) => Err(format!("no reply within {:?}", self.timeout)),
            Err(RecvTimeoutError::Disconnected) => Err("process closed its output".into()),
        }
    }

    /// Sends one move request and reads one move.
    pub fn step(&mut self, request: &MoveRequest) -> Result<Action, AgentFailure> {
        let line = serde_json::to_string(request).expect("request serializes");
        let start = Instant::now();
        self.last_raw.clear();
        let mut last_error = String::new();
        for attempt in 0..=self.max_retries {
            self.last_retries = attempt;
            let outcome = self.exchange(&line).and_then(|reply| {
                self.last_raw.push(reply.clone());
                parse_reply(&reply)
            });
            match outcome {
                Ok(action) => {
                    self.last_latency = start.elapsed();
                    return Ok(action);
                }
                Err(e) => {
                    last_error = e;
                    // restart on the next attempt
                    self.running = None;
                }
            }
        }
        self.last_latency = start.elapsed();
        let last_reply = match self.last_raw.last() {
            Some(raw) => format!(" (last reply: {:?})", raw.chars().take(200).collect::<String>()),
            None => String::new(),
        };
        Err(AgentFailure::new(format!(
            "subprocess {} failed after {} attempts: {last_error}{last_reply}",
            self.argv[0],
            self.max_retries + 1
        )))
    }

    pub fn last_raw(&self) -> &[String] {
        &self.last_raw
    }

    pub fn last_retries(&self) -> u32 {
        self.last_retries
    }

    pub fn last_latency(&self) -> Duration {
        self.last_latency
    }
}

/// One protocol step against a running agent.
pub fn subprocess_step(agent: &mut SubprocessAgent, ctx: &MoveContext<'_>) -> Result<Action, AgentFailure> {
    agent.step(&MoveRequest::new(ctx))
}
