//! Round-robin tournaments, switch batteries, persistence and plot data.

mod persist;
mod plot;
mod switch;
mod tournament;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{Horizon, MatchRecord, PayoffMatrix};
use crate::strategy::{default_catalog, StrategyError, StrategySpec};

pub use persist::{load, load_records, persist, PersistError, RunResult, SUMMARY_SCHEMA_VERSION};
pub use plot::{emit_plot_data, plot_csv, PlotError, PlotKind};
pub use switch::{
    canonical_conditions, run_switch_battery, ConditionResult, SkippedCondition, SwitchCondition,
    SwitchExperimentConfig, SwitchExperimentResult,
};
pub use tournament::{
    assign_player_ids, compute_ranking, match_seed, run_round_robin, RankingEntry, TournamentConfig,
    TournamentResult,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
}

/// A match that ended in an agent failure. Excluded from metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchFailure {
    pub player_a_id: String,
    pub player_b_id: String,
    pub seed_index: u32,
    pub seed: u64,
    pub failed_player: String,
    pub round: u32,
    pub reason: String,
    pub partial: MatchRecord,
}

fn default_matrix() -> PayoffMatrix {
    PayoffMatrix::axelrod()
}

fn default_horizon() -> Horizon {
    Horizon::fixed(50)
}

fn default_parallelism() -> usize {
    1
}

/// Catalog validation plus the experiment-level rule that generous
/// tit-for-tat must state `p` explicitly.
pub fn validate_spec(spec: &StrategySpec) -> Result<(), ExperimentError> {
    default_catalog().validate(spec)?;
    require_explicit_params(spec)
}

fn require_explicit_params(spec: &StrategySpec) -> Result<(), ExperimentError> {
    if spec.name == "generous_tit_for_tat" && !spec.params.contains_key("p") {
        return Err(ExperimentError::Config(
            "generous_tit_for_tat needs an explicit \"p\" in experiment configs".into(),
        ));
    }
    if spec.is_switch() {
        for key in ["a", "b"] {
            if let Some(sub) = spec
                .params
                .get(key)
                .and_then(|v| serde_json::from_value::<StrategySpec>(v.clone()).ok())
            {
                require_explicit_params(&sub)?;
            }
        }
    }
    Ok(())
}

fn build_pool(threads: usize) -> Result<rayon::ThreadPool, ExperimentError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| ExperimentError::Config(format!("thread pool: {e}")))
}
