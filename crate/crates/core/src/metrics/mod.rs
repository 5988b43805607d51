//! Behavioral, morality and adaptation metrics computed from MatchRecords.
//!
//! Every rate is pooled over rounds and carries its support so undefined
//! ratios stay visible instead of collapsing to zero.

mod events;
mod morality;
mod report;
mod series;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use events::{extract_events, good_partner, scan_game, BehaviorEvents};
pub use morality::{
    cooperation_matrix, eigenjesus, eigenmoses, power_iteration, CooperationMatrix, EigenPair,
    EigenRatings, EIGEN_MAX_ITER, EIGEN_TOLERANCE,
};
pub use report::{compute_report, EigenMeta, MetricReport, PlayerMetrics};
pub use series::{
    adaptation_report, cooperation_rate_series, win_series, AdaptationReport, CurvePoint, WinPoint,
    DEFAULT_EPSILON, DEFAULT_WINDOW,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("player {0:?} does not appear in the records")]
    UnknownPlayer(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("record is missing switch_round metadata")]
    MissingSwitchMetadata,
    #[error("records disagree on switch round ({0} vs {1})")]
    InconsistentSwitchRound(u32, u32),
    #[error("insufficient rounds: {0}")]
    InsufficientRounds(String),
    #[error("records do not share one fixed horizon")]
    MixedHorizons,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// A count ratio; `value` is `None` when the denominator is zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub numerator: u64,
    pub denominator: u64,
}

impl Ratio {
    pub fn new(numerator: u64, denominator: u64) -> Self {
        Ratio {
            numerator,
            denominator,
        }
    }

    pub fn value(&self) -> Option<f64> {
        (self.denominator > 0).then(|| self.numerator as f64 / self.denominator as f64)
    }

    pub fn percent(&self) -> Option<f64> {
        self.value().map(|v| 100.0 * v)
    }
}

/// Per-player rating vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorProfile {
    pub cooperation_rate: Ratio,
    pub niceness: Ratio,
    pub forgiveness: Ratio,
    pub retaliation: Ratio,
    pub generosity: Ratio,
    pub good_partner: Ratio,
}

/// Ratings from event counts. Forgiveness and retaliation are taken over
/// opponent defections that the player could answer, so they sum to one
/// whenever defined. Generosity is the rate of cooperating right after a
/// mutual defection.
pub fn behavior_profile(events: &BehaviorEvents) -> BehaviorProfile {
    BehaviorProfile {
        cooperation_rate: Ratio::new(events.own_cooperations, events.own_moves),
        niceness: Ratio::new(events.first_moves_cooperative, events.games),
        forgiveness: Ratio::new(events.forgiven_defections, events.answerable_opponent_defections),
        retaliation: Ratio::new(events.retaliations, events.answerable_opponent_defections),
        generosity: Ratio::new(
            events.mutual_defections_followed_by_own_c,
            events.mutual_defections,
        ),
        good_partner: Ratio::new(events.good_partner_games, events.games),
    }
}
