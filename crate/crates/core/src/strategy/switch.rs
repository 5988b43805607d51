use std::collections::BTreeMap;

use serde_json::Value;

use crate::agent::AgentFailure;
use crate::game::{Action, MoveContext, Player, META_SWITCH_ROUND};
use crate::rng::GameRng;

use super::{History, Strategy, StrategyError, StrategySpec};

/// Builds the spec of a player that follows `a` before round `switch_round`
/// and `b` from then on.
pub fn compose_switch(
    a: &StrategySpec,
    b: &StrategySpec,
    switch_round: u32,
) -> Result<StrategySpec, StrategyError> {
    check_switch_parts(a, b, switch_round)?;
    Ok(StrategySpec::named("switch")
        .with_param("a", serde_json::to_value(a).expect("spec serializes"))
        .with_param("b", serde_json::to_value(b).expect("spec serializes"))
        .with_param("switch_round", Value::from(switch_round)))
}

pub(crate) fn check_switch_parts(
    a: &StrategySpec,
    b: &StrategySpec,
    switch_round: u32,
) -> Result<(), StrategyError> {
    if switch_round < 2 {
        return Err(StrategyError::invalid(
            "switch",
            format!("switch_round must be >= 2, got {switch_round}"),
        ));
    }
    if a.is_switch() || b.is_switch() {
        return Err(StrategyError::invalid("switch", "nested switch"));
    }
    Ok(())
}

/// Composite player. The post-switch player sees the full history, so a
/// stateful `b` is brought up to date by replaying everything before `k`.
pub struct SwitchPlayer {
    before: Box<dyn Player>,
    after: Box<dyn Player>,
    switch_round: u32,
}

impl SwitchPlayer {
    pub fn new(before: Box<dyn Player>, after: Box<dyn Player>, switch_round: u32) -> Self {
        SwitchPlayer {
            before,
            after,
            switch_round,
        }
    }
}

impl Player for SwitchPlayer {
    fn choose(&mut self, ctx: &MoveContext<'_>, rng: &mut GameRng) -> Result<Action, AgentFailure> {
        if ctx.round < self.switch_round {
            self.before.choose(ctx, rng)
        } else {
            self.after.choose(ctx, rng)
        }
    }

    fn metadata(&self) -> BTreeMap<String, String> {
        let mut meta = BTreeMap::new();
        for (k, v) in self.before.metadata() {
            meta.insert(format!("pre.{k}"), v);
        }
        for (k, v) in self.after.metadata() {
            meta.insert(format!("post.{k}"), v);
        }
        meta.insert(META_SWITCH_ROUND.into(), self.switch_round.to_string());
        meta
    }

    fn take_transcript(&mut self) -> Option<crate::agent::AgentTranscript> {
        match (self.before.take_transcript(), self.after.take_transcript()) {
            (Some(mut x), Some(y)) => {
                x.entries.extend(y.entries);
                Some(x)
            }
            (x, y) => x.or(y),
        }
    }
}

/// Probabilistic form of the composite, for `cooperation_probability`.
pub(crate) struct SwitchStrategy {
    pub(crate) before: Box<dyn Strategy>,
    pub(crate) after: Box<dyn Strategy>,
    pub(crate) switch_round: u32,
}

impl Strategy for SwitchStrategy {
    fn cooperation_probability(&mut self, history: &History) -> f64 {
        if history.len() + 1 < self.switch_round as usize {
            self.before.cooperation_probability(history)
        } else {
            self.after.cooperation_probability(history)
        }
    }
}
