//! Strategies as maps from history to a cooperation probability, the
//! strategy catalog and the single-switch composite.

mod builtin;
mod catalog;
mod historical;
mod switch;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::agent::AgentFailure;
use crate::game::{Action, MoveContext, Player};
use crate::rng::GameRng;

pub use builtin::{
    AlwaysCooperate, AlwaysDefect, GenerousTitForTat, Grim, RandomStrategy, SuspiciousTitForTat,
    TitForTat, TwoStepCopy, WinStayLoseShift,
};
pub use catalog::{default_catalog, Catalog, CatalogEntry, EntryKind, ParamSpec, StrategyFactory};
pub use historical::{FirstByFeld, FirstByGrofman, FirstByJoss, FirstByShubik, FirstByTullock};
pub use switch::{compose_switch, SwitchPlayer};

/// Prior rounds from one player's perspective, as `(own, opponent)` pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct History {
    turns: Vec<(Action, Action)>,
}

impl History {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Action, Action)>) -> Self {
        History {
            turns: pairs.into_iter().collect(),
        }
    }

    pub fn push(&mut self, own: Action, opp: Action) {
        self.turns.push((own, opp));
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn last(&self) -> Option<(Action, Action)> {
        self.turns.last().copied()
    }

    pub fn turns(&self) -> &[(Action, Action)] {
        &self.turns
    }

    pub fn iter(&self) -> impl Iterator<Item = (Action, Action)> + '_ {
        self.turns.iter().copied()
    }

    pub fn opponent_actions(&self) -> impl Iterator<Item = Action> + '_ {
        self.turns.iter().map(|t| t.1)
    }

    /// The same rounds seen from the other side.
    pub fn flipped(&self) -> History {
        History::from_pairs(self.turns.iter().map(|&(a, b)| (b, a)))
    }

    pub fn prefix(&self, n: usize) -> History {
        History::from_pairs(self.turns[..n.min(self.turns.len())].iter().copied())
    }
}

/// A strategy maps the history of a game to the probability of cooperating
/// in the next round.
pub trait Strategy: Send {
    fn cooperation_probability(&mut self, history: &History) -> f64;
}

impl<S: Strategy + ?Sized> Strategy for Box<S> {
    fn cooperation_probability(&mut self, history: &History) -> f64 {
        (**self).cooperation_probability(history)
    }
}

/// Draws an action: C iff `u < p`. Degenerate probabilities use no randomness.
pub fn sample_action(p: f64, rng: &mut GameRng) -> Action {
    if p >= 1.0 {
        Action::C
    } else if p <= 0.0 {
        Action::D
    } else if rng.uniform() < p {
        Action::C
    } else {
        Action::D
    }
}

/// Adapts a [`Strategy`] into a [`Player`].
pub struct StrategyPlayer<S> {
    strategy: S,
}

impl<S: Strategy> StrategyPlayer<S> {
    pub fn new(strategy: S) -> Self {
        StrategyPlayer { strategy }
    }
}

impl<S: Strategy> Player for StrategyPlayer<S> {
    fn choose(&mut self, ctx: &MoveContext<'_>, rng: &mut GameRng) -> Result<Action, AgentFailure> {
        let p = self.strategy.cooperation_probability(ctx.history);
        Ok(sample_action(p, rng))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StrategyError {
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("invalid params for {name}: {reason}")]
    InvalidParams { name: String, reason: String },
    #[error("strategy {0:?} is already registered")]
    DuplicateName(String),
    #[error("{0} is an external agent and has no cooperation probability")]
    NotProbabilistic(String),
}

impl StrategyError {
    pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Self {
        StrategyError::InvalidParams {
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}

/// Declarative description of a player.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub params: Map<String, Value>,
}

impl StrategySpec {
    pub fn named(name: impl Into<String>) -> Self {
        StrategySpec {
            name: name.into(),
            params: Map::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub fn random(p_coop: f64) -> Self {
        Self::named("random").with_param("p_coop", p_coop)
    }

    pub fn generous(p: f64) -> Self {
        Self::named("generous_tit_for_tat").with_param("p", p)
    }

    pub fn is_switch(&self) -> bool {
        self.name == "switch"
    }

    /// Stable, human-readable identifier derived from the spec.
    pub fn display_id(&self) -> String {
        if self.params.is_empty() {
            return self.name.clone();
        }
        if self.is_switch() {
            let sub = |key: &str| {
                self.params
                    .get(key)
                    .and_then(|v| serde_json::from_value::<StrategySpec>(v.clone()).ok())
                    .map(|s| s.display_id())
                    .unwrap_or_else(|| "?".into())
            };
            let k = self
                .params
                .get("switch_round")
                .map(|v| v.to_string())
                .unwrap_or_else(|| "?".into());
            return format!("switch({}->{}@{})", sub("a"), sub("b"), k);
        }
        if self.name == "external_agent" {
            let endpoint = self.params.get("endpoint");
            let label = endpoint
                .and_then(|e| e.get("model_name").and_then(Value::as_str))
                .or_else(|| endpoint.and_then(|e| e.get("address").and_then(Value::as_str)))
                .unwrap_or("?");
            return format!("agent:{label}");
        }
        let mut keys: Vec<&String> = self.params.keys().collect();
        keys.sort();
        let inner: Vec<String> = keys
            .into_iter()
            .map(|k| format!("{k}={}", self.params[k]))
            .collect();
        format!("{}({})", self.name, inner.join(","))
    }

    /// Switch round of a switch spec, if any.
    pub fn switch_round(&self) -> Option<u32> {
        if !self.is_switch() {
            return None;
        }
        self.params
            .get("switch_round")
            .and_then(Value::as_u64)
            .map(|k| k as u32)
    }
}

/// Builds a probabilistic strategy from the default catalog.
pub fn make_strategy(spec: &StrategySpec) -> Result<Box<dyn Strategy>, StrategyError> {
    default_catalog().make_strategy(spec)
}

/// Builds any player (strategy, switch composite, external agent) from the
/// default catalog.
pub fn make_player(spec: &StrategySpec) -> Result<Box<dyn Player>, StrategyError> {
    default_catalog().make_player(spec)
}

/// `(name, param schema, description)` for every catalog entry, by name.
pub fn list_strategies() -> Vec<&'static CatalogEntry> {
    default_catalog().entries().collect()
}
