//! Session state machine, event log and crash recovery.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use ipdlab::game::{
    should_continue, Action, Horizon, MatchRecord, MoveContext, PayoffMatrix, Player, RoundOutcome, META_CAP_HIT,
    META_SWITCH_ROUND,
};
use ipdlab::rng::{GameRng, HORIZON_STREAM, PLAYER_B_STREAM};
use ipdlab::experiments::validate_spec;
use ipdlab::strategy::{default_catalog, History, StrategySpec};
use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::broadcast;

/// Player id of the human side in finalized records.
pub const HUMAN_ID: &str = "human";
pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(30 * 60);
const LOG_VERSION: u32 = 1;

fn default_matrix() -> PayoffMatrix {
    PayoffMatrix::axelrod()
}

fn default_horizon() -> Horizon {
    Horizon::fixed(50)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub opponent: StrategySpec,
    #[serde(default = "default_matrix")]
    pub matrix: PayoffMatrix,
    #[serde(default = "default_horizon")]
    pub horizon: Horizon,
    #[serde(default)]
    pub reveal_opponent: bool,
    #[serde(default)]
    pub participant_label: String,
    /// Drawn at random when absent; always recorded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl SessionConfig {
    pub fn new(opponent: StrategySpec) -> Self {
        SessionConfig {
            opponent,
            matrix: default_matrix(),
            horizon: default_horizon(),
            reveal_opponent: false,
            participant_label: String::new(),
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        self.horizon
            .validate()
            .map_err(|e| ServiceError::Config(e.to_string()))?;
        validate_spec(&self.opponent).map_err(|e| ServiceError::Config(e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    AwaitingHuman,
    Finished,
    Aborted,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServiceError {
    #[error("{0}")]
    Config(String),
    #[error("session {0} not found")]
    SessionNotFound(String),
    #[error("expected a move for round {expected}, got round {got}")]
    WrongRound { expected: u32, got: u32 },
    #[error("session is already over")]
    SessionFinished,
    #[error("session is still in progress")]
    SessionStillActive,
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Config(_) => "config_error",
            ServiceError::SessionNotFound(_) => "session_not_found",
            ServiceError::WrongRound { .. } => "wrong_round",
            ServiceError::SessionFinished => "session_finished",
            ServiceError::SessionStillActive => "session_still_active",
            ServiceError::Internal(_) => "internal",
        }
    }
}

/// One resolved round as shown to the participant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewRound {
    pub round: u32,
    pub you: Action,
    pub opponent: Action,
    pub your_payoff: f64,
    pub opponent_payoff: f64,
}

/// Client-facing snapshot. Built only from resolved rounds, so it cannot
/// carry the opponent's committed move for the pending round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub state: SessionState,
    /// Round awaiting a move, or the last round played once over.
    pub round: u32,
    pub rounds_played: u32,
    pub history: Vec<ViewRound>,
    pub your_score: f64,
    pub opponent_score: f64,
    pub payoffs: PayoffMatrix,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon_note: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub opponent: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
    pub created_at: u64,
    pub updated_at: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoveResponse {
    pub outcome: RoundOutcome,
    pub view: SessionView,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogEvent {
    Created {
        v: u32,
        id: String,
        config: SessionConfig,
        seed: u64,
        at: u64,
    },
    Move {
        round: u32,
        human: Action,
        opponent: Action,
        outcome: RoundOutcome,
        at: u64,
    },
    Aborted {
        reason: String,
        at: u64,
    },
}

pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

fn system_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    })
}

struct Runtime {
    id: String,
    config: SessionConfig,
    opponent_id: String,
    opponent: Box<dyn Player>,
    opponent_history: History,
    opponent_rng: GameRng,
    horizon_rng: GameRng,
    record: MatchRecord,
    state: SessionState,
    /// Opponent move for the pending round, drawn before the human moves.
    committed: Option<Action>,
    abort_reason: Option<String>,
    created_at: u64,
    updated_at: u64,
    log: Option<File>,
}

impl Runtime {
    fn new(id: String, config: SessionConfig, seed: u64, at: u64) -> Result<Self, ServiceError> {
        config.validate()?;
        let opponent = default_catalog()
            .make_player(&config.opponent)
            .map_err(|e| ServiceError::Config(e.to_string()))?;
        let opponent_id = config.opponent.display_id();
        let mut record = MatchRecord::new(HUMAN_ID, opponent_id.clone(), config.matrix, config.horizon, seed);
        for (k, v) in opponent.metadata() {
            if k == META_SWITCH_ROUND {
                record.metadata.insert(k.clone(), v.clone());
            }
            record.metadata.insert(format!("b.{k}"), v);
        }
        record.metadata.insert("session_id".into(), id.clone());
        if !config.participant_label.is_empty() {
            record
                .metadata
                .insert("participant_label".into(), config.participant_label.clone());
        }
        Ok(Runtime {
            id,
            opponent_id,
            opponent,
            opponent_history: History::default(),
            opponent_rng: GameRng::new(seed, PLAYER_B_STREAM),
            horizon_rng: GameRng::new(seed, HORIZON_STREAM),
            record,
            state: SessionState::AwaitingHuman,
            committed: None,
            abort_reason: None,
            created_at: at,
            updated_at: at,
            log: None,
            config,
        })
    }

    fn completed(&self) -> u32 {
        self.record.rounds.len() as u32
    }

    /// Advances the horizon and commits the opponent's next move, or ends
    /// the session.
    fn advance(&mut self, at: u64) -> Result<(), ServiceError> {
        let completed = self.completed();
        if !should_continue(&self.config.horizon, completed, &mut self.horizon_rng) {
            if let Horizon::Indefinite { max_rounds, .. } = self.config.horizon {
                if completed >= max_rounds {
                    self.record.metadata.insert(META_CAP_HIT.into(), "true".into());
                }
            }
            self.state = SessionState::Finished;
            return Ok(());
        }
        let ctx = MoveContext {
            round: completed + 1,
            history: &self.opponent_history,
            payoffs: &self.config.matrix,
            known_rounds: self.config.horizon.disclosed_rounds(),
        };
        match self.opponent.choose(&ctx, &mut self.opponent_rng) {
            Ok(action) => {
                self.committed = Some(action);
                Ok(())
            }
            Err(failure) => {
                warn!("session {}: opponent failed: {}", self.id, failure.reason);
                let reason = format!("agent_failure:{}", self.opponent_id);
                self.abort(reason, at)
            }
        }
    }

    fn abort(&mut self, reason: String, at: u64) -> Result<(), ServiceError> {
        self.state = SessionState::Aborted;
        self.committed = None;
        self.record.metadata.insert("aborted".into(), reason.clone());
        self.abort_reason = Some(reason.clone());
        self.updated_at = at;
        self.append(&LogEvent::Aborted { reason, at })
    }

    fn resolve(&mut self, human: Action, at: u64) -> Result<RoundOutcome, ServiceError> {
        let opponent = self.committed.take().ok_or(ServiceError::SessionFinished)?;
        let outcome = self.record.push_round(human, opponent).clone();
        self.opponent_history.push(opponent, human);
        self.updated_at = at;
        self.append(&LogEvent::Move {
            round: outcome.round_index,
            human,
            opponent,
            outcome: outcome.clone(),
            at,
        })?;
        self.advance(at)?;
        Ok(outcome)
    }

    fn append(&mut self, event: &LogEvent) -> Result<(), ServiceError> {
        if let Some(file) = &mut self.log {
            let mut line = serde_json::to_string(event).map_err(|e| ServiceError::Internal(e.to_string()))?;
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.sync_data())
                .map_err(|e| ServiceError::Internal(format!("event log write failed: {e}")))?;
        }
        Ok(())
    }

    fn view(&self) -> SessionView {
        let mut you = 0.0;
        let mut opp = 0.0;
        let history = self
            .record
            .rounds
            .iter()
            .map(|r| {
                you += r.payoff_a.value();
                opp += r.payoff_b.value();
                ViewRound {
                    round: r.round_index,
                    you: r.action_a,
                    opponent: r.action_b,
                    your_payoff: r.payoff_a.value(),
                    opponent_payoff: r.payoff_b.value(),
                }
            })
            .collect();
        let completed = self.completed();
        SessionView {
            id: self.id.clone(),
            state: self.state,
            round: if self.state == SessionState::AwaitingHuman {
                completed + 1
            } else {
                completed
            },
            rounds_played: completed,
            history,
            your_score: you,
            opponent_score: opp,
            payoffs: self.config.matrix,
            horizon_note: self
                .config
                .horizon
                .disclosed_rounds()
                .map(|n| format!("The game lasts {n} rounds.")),
            opponent: self.config.reveal_opponent.then(|| self.opponent_id.clone()),
            abort_reason: self.abort_reason.clone(),
            created_at: self.created_at,
            updated_at: self.updated_at,
        }
    }
}

struct Cell {
    runtime: Mutex<Runtime>,
    snapshot: RwLock<Arc<SessionView>>,
    updates: broadcast::Sender<Arc<SessionView>>,
}

impl Cell {
    fn new(runtime: Runtime) -> Arc<Self> {
        let view = Arc::new(runtime.view());
        let (updates, _) = broadcast::channel(64);
        Arc::new(Cell {
            runtime: Mutex::new(runtime),
            snapshot: RwLock::new(view),
            updates,
        })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Runtime> {
        self.runtime.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn publish(&self, rt: &Runtime) -> Arc<SessionView> {
        let view = Arc::new(rt.view());
        *self.snapshot.write().unwrap_or_else(|e| e.into_inner()) = view.clone();
        let _ = self.updates.send(view.clone());
        view
    }

    fn snapshot(&self) -> Arc<SessionView> {
        self.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

/// All live sessions, optionally backed by a directory of event logs.
pub struct SessionStore {
    dir: Option<PathBuf>,
    sessions: RwLock<HashMap<String, Arc<Cell>>>,
    idle_timeout: Duration,
    clock: Clock,
}

impl SessionStore {
    /// Store without persistence.
    pub fn in_memory() -> Self {
        SessionStore {
            dir: None,
            sessions: RwLock::new(HashMap::new()),
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
            clock: system_clock(),
        }
    }

    /// Opens `dir`, replaying every session log found there.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        Self::open_with(dir, DEFAULT_IDLE_TIMEOUT, system_clock())
    }

    pub fn open_with(dir: impl Into<PathBuf>, idle_timeout: Duration, clock: Clock) -> Result<Self, ServiceError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| ServiceError::Internal(format!("{}: {e}", dir.display())))?;
        let store = SessionStore {
            dir: Some(dir.clone()),
            sessions: RwLock::new(HashMap::new()),
            idle_timeout,
            clock,
        };
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| ServiceError::Internal(e.to_string()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            match replay(&path) {
                Ok(mut rt) => {
                    rt.log = Some(open_log(&path)?);
                    let id = rt.id.clone();
                    store.write_sessions().insert(id, Cell::new(rt));
                }
                Err(e) => warn!("skipping session log {}: {e}", path.display()),
            }
        }
        Ok(store)
    }

    pub fn with_idle_timeout(mut self, timeout: Duration) -> Self {
        self.idle_timeout = timeout;
        self
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    fn now(&self) -> u64 {
        (self.clock)()
    }

    fn write_sessions(&self) -> std::sync::RwLockWriteGuard<'_, HashMap<String, Arc<Cell>>> {
        self.sessions.write().unwrap_or_else(|e| e.into_inner())
    }

    fn cell(&self, id: &str) -> Result<Arc<Cell>, ServiceError> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::SessionNotFound(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.sessions.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn create(&self, mut config: SessionConfig) -> Result<SessionView, ServiceError> {
        config.validate()?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let seed = config.seed.unwrap_or_else(|| uuid::Uuid::new_v4().as_u64_pair().0);
        config.seed = Some(seed);
        let at = self.now();
        let mut rt = Runtime::new(id.clone(), config.clone(), seed, at)?;
        if let Some(dir) = &self.dir {
            rt.log = Some(open_log(&dir.join(format!("{id}.jsonl")))?);
        }
        rt.append(&LogEvent::Created {
            v: LOG_VERSION,
            id: id.clone(),
            config,
            seed,
            at,
        })?;
        rt.advance(at)?;
        let cell = Cell::new(rt);
        let view = cell.snapshot();
        self.write_sessions().insert(id, cell);
        Ok((*view).clone())
    }

    /// Aborts the session if it has been idle too long. Returns whether it did.
    fn expire(&self, cell: &Cell, rt: &mut Runtime) -> Result<bool, ServiceError> {
        let now = self.now();
        if rt.state == SessionState::AwaitingHuman
            && now.saturating_sub(rt.updated_at) >= self.idle_timeout.as_millis() as u64
        {
            rt.abort("idle_timeout".into(), now)?;
            cell.publish(rt);
            return Ok(true);
        }
        Ok(false)
    }

    pub fn submit_move(&self, id: &str, round: u32, action: Action) -> Result<MoveResponse, ServiceError> {
        let cell = self.cell(id)?;
        let mut rt = cell.lock();
        let completed = rt.completed();
        if round >= 1 && round <= completed {
            // duplicate of a resolved round: replay the stored outcome
            let outcome = rt.record.rounds[round as usize - 1].clone();
            return Ok(MoveResponse {
                outcome,
                view: rt.view(),
            });
        }
        self.expire(&cell, &mut rt)?;
        if rt.state != SessionState::AwaitingHuman {
            return Err(ServiceError::SessionFinished);
        }
        if round != completed + 1 {
            return Err(ServiceError::WrongRound {
                expected: completed + 1,
                got: round,
            });
        }
        let now = self.now();
        let outcome = rt.resolve(action, now)?;
        let view = cell.publish(&rt);
        Ok(MoveResponse {
            outcome,
            view: (*view).clone(),
        })
    }

    pub fn view(&self, id: &str) -> Result<SessionView, ServiceError> {
        let cell = self.cell(id)?;
        {
            let snap = cell.snapshot();
            if snap.state != SessionState::AwaitingHuman {
                return Ok((*snap).clone());
            }
        }
        let mut rt = cell.lock();
        self.expire(&cell, &mut rt)?;
        Ok((*cell.snapshot()).clone())
    }

    pub fn abort(&self, id: &str, reason: &str) -> Result<SessionView, ServiceError> {
        let cell = self.cell(id)?;
        let mut rt = cell.lock();
        if rt.state != SessionState::AwaitingHuman {
            return Err(ServiceError::SessionFinished);
        }
        let now = self.now();
        rt.abort(reason.to_string(), now)?;
        Ok((*cell.publish(&rt)).clone())
    }

    pub fn finalize(&self, id: &str) -> Result<MatchRecord, ServiceError> {
        let cell = self.cell(id)?;
        let mut rt = cell.lock();
        self.expire(&cell, &mut rt)?;
        match rt.state {
            SessionState::AwaitingHuman => Err(ServiceError::SessionStillActive),
            _ => Ok(rt.record.clone()),
        }
    }

    /// Aborts every idle session; returns how many were aborted.
    pub fn sweep_idle(&self) -> usize {
        let cells: Vec<Arc<Cell>> = self
            .sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .values()
            .cloned()
            .collect();
        cells
            .iter()
            .filter(|cell| {
                let mut rt = cell.lock();
                self.expire(cell, &mut rt).unwrap_or(false)
            })
            .count()
    }

    /// Receiver of view updates for the SSE stream.
    pub fn subscribe(&self, id: &str) -> Result<(SessionView, broadcast::Receiver<Arc<SessionView>>), ServiceError> {
        let cell = self.cell(id)?;
        let rx = cell.updates.subscribe();
        Ok(((*cell.snapshot()).clone(), rx))
    }

    #[doc(hidden)]
    /// Test hook: the opponent's committed move for the pending round.
    pub fn committed_move(&self, id: &str) -> Result<Option<Action>, ServiceError> {
        Ok(self.cell(id)?.lock().committed)
    }
}

fn open_log(path: &Path) -> Result<File, ServiceError> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| ServiceError::Internal(format!("{}: {e}", path.display())))
}

/// Rebuilds a session by re-running its opponent against the logged human
/// moves. A torn final line (crash mid-write) is ignored.
fn replay(path: &Path) -> Result<Runtime, String> {
    let file = File::open(path).map_err(|e| e.to_string())?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let mut events = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LogEvent>(line) {
            Ok(e) => events.push(e),
            Err(e) if i + 1 == lines.len() => warn!("{}: ignoring torn last line: {e}", path.display()),
            Err(e) => return Err(format!("line {}: {e}", i + 1)),
        }
    }
    let mut iter = events.into_iter();
    let Some(LogEvent::Created {
        v,
        id,
        config,
        seed,
        at,
    }) = iter.next()
    else {
        return Err("log does not start with a created event".into());
    };
    if v != LOG_VERSION {
        return Err(format!("log version {v}, expected {LOG_VERSION}"));
    }
    let mut rt = Runtime::new(id, config, seed, at).map_err(|e| e.to_string())?;
    rt.advance(at).map_err(|e| e.to_string())?;
    for event in iter {
        match event {
            LogEvent::Move {
                round,
                human,
                opponent,
                at,
                ..
            } => {
                if rt.committed != Some(opponent) || round != rt.completed() + 1 {
                    return Err(format!("replay diverged at round {round}"));
                }
                rt.resolve(human, at).map_err(|e| e.to_string())?;
            }
            LogEvent::Aborted { reason, at } => {
                rt.abort(reason, at).map_err(|e| e.to_string())?;
            }
            LogEvent::Created { .. } => return Err("duplicate created event".into()),
        }
    }
    Ok(rt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tft_session(store: &SessionStore) -> SessionView {
        let mut cfg = SessionConfig::new(StrategySpec::named("tit_for_tat"));
        cfg.seed = Some(5);
        store.create(cfg).unwrap()
    }

    #[test]
    fn first_round_against_tft() {
        let store = SessionStore::in_memory();
        let v = tft_session(&store);
        assert_eq!(v.round, 1);
        assert_eq!(v.horizon_note.as_deref(), Some("The game lasts 50 rounds."));
        assert!(v.opponent.is_none());
        let r = store.submit_move(&v.id, 1, Action::D).unwrap();
        assert_eq!((r.outcome.action_a, r.outcome.action_b), (Action::D, Action::C));
        assert_eq!((r.outcome.payoff_a.value(), r.outcome.payoff_b.value()), (5.0, 0.0));
        assert_eq!(store.committed_move(&v.id).unwrap(), Some(Action::D));
    }

    #[test]
    fn sequencing_and_idempotence() {
        let store = SessionStore::in_memory();
        let v = tft_session(&store);
        let first = store.submit_move(&v.id, 1, Action::C).unwrap();
        let again = store.submit_move(&v.id, 1, Action::D).unwrap();
        assert_eq!(first.outcome, again.outcome);
        assert_eq!(again.view.rounds_played, 1);
        assert_eq!(
            store.submit_move(&v.id, 3, Action::C).unwrap_err(),
            ServiceError::WrongRound { expected: 2, got: 3 }
        );
        assert_eq!(store.finalize(&v.id).unwrap_err(), ServiceError::SessionStillActive);
        assert!(matches!(store.view("nope"), Err(ServiceError::SessionNotFound(_))));
    }

    #[test]
    fn idle_sessions_abort() {
        let now = Arc::new(std::sync::atomic::AtomicU64::new(0));
        let t = now.clone();
        let store = SessionStore::in_memory().with_clock(Arc::new(move || t.load(std::sync::atomic::Ordering::SeqCst)));
        let v = tft_session(&store);
        store.submit_move(&v.id, 1, Action::C).unwrap();
        now.store(DEFAULT_IDLE_TIMEOUT.as_millis() as u64 + 1, std::sync::atomic::Ordering::SeqCst);
        assert_eq!(store.submit_move(&v.id, 2, Action::C).unwrap_err(), ServiceError::SessionFinished);
        let rec = store.finalize(&v.id).unwrap();
        assert_eq!(rec.rounds.len(), 1);
        assert_eq!(rec.metadata.get("aborted").map(String::as_str), Some("idle_timeout"));
    }

    #[test]
    fn invalid_opponent_is_config_error() {
        let store = SessionStore::in_memory();
        let err = store
            .create(SessionConfig::new(StrategySpec::named("no_such_strategy")))
            .unwrap_err();
        assert_eq!(err.code(), "config_error");
    }
}
