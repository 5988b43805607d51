//! Actions, payoffs, horizons and the match loop.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign, Sub};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::agent::{AgentFailure, AgentTranscript};
use crate::rng::{GameRng, HORIZON_STREAM, PLAYER_A_STREAM, PLAYER_B_STREAM};
use crate::strategy::History;

/// Current MatchRecord schema version.
pub const RECORD_SCHEMA_VERSION: u32 = 1;

/// Default cap on indefinite-horizon match length.
pub const DEFAULT_MAX_ROUNDS: u32 = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    /// Cooperate.
    C,
    /// Defect.
    D,
}

impl Action {
    pub fn is_cooperate(self) -> bool {
        self == Action::C
    }

    pub fn as_char(self) -> char {
        match self {
            Action::C => 'C',
            Action::D => 'D',
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Action::C => Action::D,
            Action::D => Action::C,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "C" => Ok(Action::C),
            "D" => Ok(Action::D),
            other => Err(format!("invalid action {other:?}, expected \"C\" or \"D\"")),
        }
    }
}

impl Serialize for Action {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(match self {
            Action::C => "C",
            Action::D => "D",
        })
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A payoff amount.
///
/// Integer-valued scores serialize as JSON integers, everything else as a
/// decimal number. Sums of integer payoffs are exact.
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd)]
pub struct Score(pub f64);

impl Score {
    pub const ZERO: Score = Score(0.0);

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Add for Score {
    type Output = Score;
    fn add(self, rhs: Score) -> Score {
        Score(self.0 + rhs.0)
    }
}

impl AddAssign for Score {
    fn add_assign(&mut self, rhs: Score) {
        self.0 += rhs.0;
    }
}

impl Sub for Score {
    type Output = Score;
    fn sub(self, rhs: Score) -> Score {
        Score(self.0 - rhs.0)
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.fract() == 0.0 && self.0.abs() < 9.0e15 {
            write!(f, "{}", self.0 as i64)
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.fract() == 0.0 && self.0.abs() < 9.0e15 {
            s.serialize_i64(self.0 as i64)
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        f64::deserialize(d).map(Score)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PayoffError {
    #[error("payoff values must be finite")]
    NonFinite,
    #[error("ordering violation: {0}")]
    OrderingViolation(String),
}

/// One-shot payoffs: temptation `H`, reward `R`, punishment `P`, sucker `L`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPayoffs")]
pub struct PayoffMatrix {
    #[serde(rename = "H")]
    h: Score,
    #[serde(rename = "R")]
    r: Score,
    #[serde(rename = "P")]
    p: Score,
    #[serde(rename = "L")]
    l: Score,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPayoffs {
    #[serde(rename = "H")]
    h: f64,
    #[serde(rename = "R")]
    r: f64,
    #[serde(rename = "P")]
    p: f64,
    #[serde(rename = "L")]
    l: f64,
}

impl TryFrom<RawPayoffs> for PayoffMatrix {
    type Error = PayoffError;
    fn try_from(raw: RawPayoffs) -> Result<Self, Self::Error> {
        validate_payoffs(raw.h, raw.r, raw.p, raw.l)
    }
}

/// Builds a payoff matrix, enforcing `H > R > P > L` and `H + L < 2R`.
pub fn validate_payoffs(h: f64, r: f64, p: f64, l: f64) -> Result<PayoffMatrix, PayoffError> {
    if ![h, r, p, l].iter().all(|x| x.is_finite()) {
        return Err(PayoffError::NonFinite);
    }
    let ordering = [
        (h > r, format!("H > R fails: {h} <= {r}")),
        (r > p, format!("R > P fails: {r} <= {p}")),
        (p > l, format!("P > L fails: {p} <= {l}")),
        (h + l < 2.0 * r, format!("H + L < 2R fails: {} >= {}", h + l, 2.0 * r)),
    ];
    if let Some((_, msg)) = ordering.into_iter().find(|(ok, _)| !ok) {
        return Err(PayoffError::OrderingViolation(msg));
    }
    Ok(PayoffMatrix {
        h: Score(h),
        r: Score(r),
        p: Score(p),
        l: Score(l),
    })
}

impl PayoffMatrix {
    /// The classical tournament values H=5, R=3, P=1, L=0.
    pub fn axelrod() -> Self {
        validate_payoffs(5.0, 3.0, 1.0, 0.0).expect("classical payoffs are valid")
    }

    pub fn temptation(&self) -> Score {
        self.h
    }

    pub fn reward(&self) -> Score {
        self.r
    }

    pub fn punishment(&self) -> Score {
        self.p
    }

    pub fn sucker(&self) -> Score {
        self.l
    }

    /// Payoffs for `(me, opp)`, ordered the same way.
    pub fn payoff(&self, me: Action, opp: Action) -> (Score, Score) {
        match (me, opp) {
            (Action::C, Action::C) => (self.r, self.r),
            (Action::D, Action::C) => (self.h, self.l),
            (Action::C, Action::D) => (self.l, self.h),
            (Action::D, Action::D) => (self.p, self.p),
        }
    }
}

impl Default for PayoffMatrix {
    fn default() -> Self {
        Self::axelrod()
    }
}

pub fn payoff(matrix: &PayoffMatrix, me: Action, opp: Action) -> (Score, Score) {
    matrix.payoff(me, opp)
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid horizon: {0}")]
pub struct HorizonError(pub String);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Horizon {
    Fixed {
        rounds: u32,
        #[serde(default = "default_known")]
        known_to_players: bool,
    },
    Indefinite {
        stop_probability: f64,
        #[serde(default = "default_max_rounds")]
        max_rounds: u32,
    },
}

fn default_known() -> bool {
    true
}

fn default_max_rounds() -> u32 {
    DEFAULT_MAX_ROUNDS
}

impl Horizon {
    pub fn fixed(rounds: u32) -> Self {
        Horizon::Fixed {
            rounds,
            known_to_players: true,
        }
    }

    pub fn indefinite(stop_probability: f64) -> Self {
        Horizon::Indefinite {
            stop_probability,
            max_rounds: DEFAULT_MAX_ROUNDS,
        }
    }

    pub fn validate(&self) -> Result<(), HorizonError> {
        match *self {
            Horizon::Fixed { rounds: 0, .. } => {
                Err(HorizonError("fixed horizon needs at least one round".into()))
            }
            Horizon::Indefinite {
                stop_probability,
                max_rounds,
            } => {
                if !(stop_probability > 0.0 && stop_probability < 1.0) {
                    Err(HorizonError(format!(
                        "stop probability {stop_probability} not in (0, 1)"
                    )))
                } else if max_rounds == 0 {
                    Err(HorizonError("max_rounds must be at least 1".into()))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Round count disclosed to players, if any.
    pub fn disclosed_rounds(&self) -> Option<u32> {
        match *self {
            Horizon::Fixed {
                rounds,
                known_to_players: true,
            } => Some(rounds),
            _ => None,
        }
    }

    pub fn max_rounds(&self) -> u32 {
        match *self {
            Horizon::Fixed { rounds, .. } => rounds,
            Horizon::Indefinite { max_rounds, .. } => max_rounds,
        }
    }
}

/// Decides whether another round is played after `completed_rounds`.
///
/// Indefinite horizons draw from the horizon stream once per completed round;
/// the first round is always played and the safety cap is never exceeded.
pub fn should_continue(horizon: &Horizon, completed_rounds: u32, rng: &mut GameRng) -> bool {
    match *horizon {
        Horizon::Fixed { rounds, .. } => completed_rounds < rounds,
        Horizon::Indefinite {
            stop_probability,
            max_rounds,
        } => {
            if completed_rounds == 0 {
                return true;
            }
            if completed_rounds >= max_rounds {
                return false;
            }
            rng.uniform() >= stop_probability
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundOutcome {
    pub round_index: u32,
    pub action_a: Action,
    pub action_b: Action,
    pub payoff_a: Score,
    pub payoff_b: Score,
}

/// Full transcript of one game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchRecord {
    pub v: u32,
    pub player_a_id: String,
    pub player_b_id: String,
    pub payoffs: PayoffMatrix,
    pub horizon: Horizon,
    pub seed: u64,
    pub rounds: Vec<RoundOutcome>,
    pub total_a: Score,
    pub total_b: Score,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordError {
    #[error("round indices are not contiguous at position {0}")]
    NonContiguousRounds(usize),
    #[error("payoffs of round {0} do not match the payoff matrix")]
    PayoffMismatch(u32),
    #[error("totals do not equal the sum of round payoffs")]
    TotalsMismatch,
    #[error("round count {found} violates horizon (expected {expected})")]
    LengthMismatch { found: usize, expected: String },
}

impl MatchRecord {
    pub fn new(
        player_a_id: impl Into<String>,
        player_b_id: impl Into<String>,
        payoffs: PayoffMatrix,
        horizon: Horizon,
        seed: u64,
    ) -> Self {
        MatchRecord {
            v: RECORD_SCHEMA_VERSION,
            player_a_id: player_a_id.into(),
            player_b_id: player_b_id.into(),
            payoffs,
            horizon,
            seed,
            rounds: Vec::new(),
            total_a: Score::ZERO,
            total_b: Score::ZERO,
            metadata: BTreeMap::new(),
        }
    }

    /// Appends the next round, computing payoffs from the matrix.
    pub fn push_round(&mut self, action_a: Action, action_b: Action) -> &RoundOutcome {
        let (payoff_a, payoff_b) = self.payoffs.payoff(action_a, action_b);
        self.total_a += payoff_a;
        self.total_b += payoff_b;
        let round_index = self.rounds.len() as u32 + 1;
        self.rounds.push(RoundOutcome {
            round_index,
            action_a,
            action_b,
            payoff_a,
            payoff_b,
        });
        self.rounds.last().expect("just pushed")
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn is_aborted(&self) -> bool {
        self.metadata.contains_key("aborted")
    }

    /// The other participant's id, or `None` if `player_id` did not play.
    pub fn opponent_of(&self, player_id: &str) -> Option<&str> {
        if self.player_a_id == player_id {
            Some(&self.player_b_id)
        } else if self.player_b_id == player_id {
            Some(&self.player_a_id)
        } else {
            None
        }
    }

    /// History from one side's perspective: `(own, opponent)` pairs.
    pub fn history_for(&self, side: Side) -> History {
        History::from_pairs(self.rounds.iter().map(|r| match side {
            Side::A => (r.action_a, r.action_b),
            Side::B => (r.action_b, r.action_a),
        }))
    }

    /// Checks the structural invariants of a finished record.
    pub fn check_invariants(&self) -> Result<(), RecordError> {
        let mut ta = Score::ZERO;
        let mut tb = Score::ZERO;
        for (i, r) in self.rounds.iter().enumerate() {
            if r.round_index as usize != i + 1 {
                return Err(RecordError::NonContiguousRounds(i));
            }
            let (pa, pb) = self.payoffs.payoff(r.action_a, r.action_b);
            if pa != r.payoff_a || pb != r.payoff_b {
                return Err(RecordError::PayoffMismatch(r.round_index));
            }
            ta += pa;
            tb += pb;
        }
        if ta != self.total_a || tb != self.total_b {
            return Err(RecordError::TotalsMismatch);
        }
        if self.is_aborted() {
            return Ok(());
        }
        match self.horizon {
            Horizon::Fixed { rounds, .. } if self.rounds.len() != rounds as usize => {
                Err(RecordError::LengthMismatch {
                    found: self.rounds.len(),
                    expected: format!("exactly {rounds}"),
                })
            }
            Horizon::Indefinite { max_rounds, .. }
                if self.rounds.is_empty() || self.rounds.len() > max_rounds as usize =>
            {
                Err(RecordError::LengthMismatch {
                    found: self.rounds.len(),
                    expected: format!("1..={max_rounds}"),
                })
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    A,
    B,
}

/// What a player sees when asked for a move.
#[derive(Debug, Clone, Copy)]
pub struct MoveContext<'a> {
    /// 1-based index of the round being decided.
    pub round: u32,
    /// Prior rounds from this player's perspective.
    pub history: &'a History,
    pub payoffs: &'a PayoffMatrix,
    /// Total rounds, only when the horizon is disclosed to players.
    pub known_rounds: Option<u32>,
}

/// Anything that can pick a move in a match.
pub trait Player: Send {
    fn choose(&mut self, ctx: &MoveContext<'_>, rng: &mut GameRng) -> Result<Action, AgentFailure>;

    /// Entries merged into the MatchRecord metadata (e.g. `switch_round`).
    fn metadata(&self) -> BTreeMap<String, String> {
        BTreeMap::new()
    }

    /// Per-round interaction log for external agents.
    fn take_transcript(&mut self) -> Option<AgentTranscript> {
        None
    }
}

impl<P: Player + ?Sized> Player for Box<P> {
    fn choose(&mut self, ctx: &MoveContext<'_>, rng: &mut GameRng) -> Result<Action, AgentFailure> {
        (**self).choose(ctx, rng)
    }

    fn metadata(&self) -> BTreeMap<String, String> {
        (**self).metadata()
    }

    fn take_transcript(&mut self) -> Option<AgentTranscript> {
        (**self).take_transcript()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatchError {
    #[error("agent {player_id} failed in round {round}: {failure}")]
    AgentFailure {
        player_id: String,
        round: u32,
        failure: AgentFailure,
        /// Rounds played before the failure, marked aborted.
        partial: Box<MatchRecord>,
    },
    #[error(transparent)]
    Horizon(#[from] HorizonError),
}

/// Metadata key set when the indefinite safety cap ends a match.
pub const META_CAP_HIT: &str = "max_rounds_hit";
/// Metadata key carrying the switch round of a composite player.
pub const META_SWITCH_ROUND: &str = "switch_round";

/// Plays one match between `a` and `b`.
///
/// Both moves of a round are collected before either is revealed. Each
/// player draws from its own stream; the horizon has a separate one.
pub fn play_match(
    a: (&str, &mut dyn Player),
    b: (&str, &mut dyn Player),
    matrix: &PayoffMatrix,
    horizon: &Horizon,
    seed: u64,
) -> Result<MatchRecord, MatchError> {
    horizon.validate()?;
    let (a_id, pa) = a;
    let (b_id, pb) = b;
    let mut record = MatchRecord::new(a_id, b_id, *matrix, *horizon, seed);
    let mut horizon_rng = GameRng::new(seed, HORIZON_STREAM);
    let mut rng_a = GameRng::new(seed, PLAYER_A_STREAM);
    let mut rng_b = GameRng::new(seed, PLAYER_B_STREAM);
    let mut hist_a = History::default();
    let mut hist_b = History::default();
    let known_rounds = horizon.disclosed_rounds();

    for (side, meta) in [("a", pa.metadata()), ("b", pb.metadata())] {
        for (k, v) in meta {
            if k == META_SWITCH_ROUND {
                record.metadata.insert(k.clone(), v.clone());
            }
            record.metadata.insert(format!("{side}.{k}"), v);
        }
    }

    let mut completed = 0u32;
    while should_continue(horizon, completed, &mut horizon_rng) {
        let round = completed + 1;
        let ctx_a = MoveContext {
            round,
            history: &hist_a,
            payoffs: matrix,
            known_rounds,
        };
        let ctx_b = MoveContext {
            round,
            history: &hist_b,
            payoffs: matrix,
            known_rounds,
        };
        let move_a = pa.choose(&ctx_a, &mut rng_a);
        let move_b = pb.choose(&ctx_b, &mut rng_b);
        let (move_a, move_b) = match (move_a, move_b) {
            (Ok(x), Ok(y)) => (x, y),
            (Err(failure), _) => return Err(abort(record, a_id, round, failure)),
            (_, Err(failure)) => return Err(abort(record, b_id, round, failure)),
        };
        record.push_round(move_a, move_b);
        hist_a.push(move_a, move_b);
        hist_b.push(move_b, move_a);
        completed = round;
    }
    if let Horizon::Indefinite { max_rounds, .. } = horizon {
        if completed >= *max_rounds {
            record.metadata.insert(META_CAP_HIT.into(), "true".into());
        }
    }
    Ok(record)
}

fn abort(mut record: MatchRecord, player_id: &str, round: u32, failure: AgentFailure) -> MatchError {
    record
        .metadata
        .insert("aborted".into(), format!("agent_failure:{player_id}"));
    MatchError::AgentFailure {
        player_id: player_id.to_string(),
        round,
        failure,
        partial: Box::new(record),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CumulativePoint {
    pub round: u32,
    pub cum_a: Score,
    pub cum_b: Score,
    pub cum_diff: Score,
}

/// Prefix sums of both players' payoffs.
pub fn cumulative_series(record: &MatchRecord) -> Vec<CumulativePoint> {
    let mut a = Score::ZERO;
    let mut b = Score::ZERO;
    record
        .rounds
        .iter()
        .map(|r| {
            a += r.payoff_a;
            b += r.payoff_b;
            CumulativePoint {
                round: r.round_index,
                cum_a: a,
                cum_b: b,
                cum_diff: a - b,
            }
        })
        .collect()
}
