//! Per-round series: cooperation rate, adaptation around a switch, wins.

use serde::{Deserialize, Serialize};

use crate::game::{Action, Horizon, MatchRecord, Side, META_SWITCH_ROUND};

use super::events::{sides_of, turns_for};
use super::MetricsError;

pub const DEFAULT_WINDOW: u32 = 5;
pub const DEFAULT_EPSILON: f64 = 0.1;

fn side_of(record: &MatchRecord, player_id: &str) -> Result<Side, MetricsError> {
    sides_of(record, player_id)
        .first()
        .copied()
        .ok_or_else(|| MetricsError::UnknownPlayer(player_id.to_string()))
}

fn trailing_mean(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        let n = (i + 1).min(window);
        out.push(sum / n as f64);
    }
    out
}

/// Trailing-window cooperation rate of `player_id` by round. Early rounds
/// average over the available prefix.
pub fn cooperation_rate_series(
    record: &MatchRecord,
    player_id: &str,
    window: u32,
) -> Result<Vec<(u32, f64)>, MetricsError> {
    if window == 0 {
        return Err(MetricsError::InvalidParameter("window must be >= 1".into()));
    }
    let side = side_of(record, player_id)?;
    let indicator: Vec<f64> = turns_for(record, side)
        .iter()
        .map(|t| if t.0 == Action::C { 1.0 } else { 0.0 })
        .collect();
    Ok(trailing_mean(&indicator, window as usize)
        .into_iter()
        .enumerate()
        .map(|(i, r)| (i as u32 + 1, r))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Round minus the switch round.
    pub offset: i64,
    pub value: f64,
}

/// Adaptation statistics of one player around a known switch round,
/// averaged over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationReport {
    pub switch_round: u32,
    pub window: u32,
    pub epsilon: f64,
    pub records: usize,
    /// Cooperation rate over rounds `[k - window, k - 1]`.
    pub pre_rate: f64,
    /// Cooperation rate over all rounds from `k` on.
    pub post_rate: f64,
    /// Mean number of cooperations from round `k` on, per record.
    pub post_cooperations: f64,
    /// Mean own payoff per round from `k` on.
    pub post_payoff: f64,
    /// Cooperation rate over the final `window` rounds.
    pub baseline_rate: f64,
    /// Rounds counted from the switch round (inclusive) until the windowed
    /// rate settles within `epsilon` of the baseline for `window` rounds.
    pub adaptation_speed: Option<u32>,
    pub recovery_curve: Vec<CurvePoint>,
    /// Recovery curve divided by `pre_rate`; empty when `pre_rate` is 0.
    pub normalized_recovery_curve: Vec<CurvePoint>,
    /// Windowed own payoff minus its pre-switch mean.
    pub payoff_delta_curve: Vec<CurvePoint>,
}

struct Track {
    coop: Vec<f64>,
    payoff: Vec<f64>,
}

fn mean_over(tracks: &[Track], pick: impl Fn(&Track) -> &[f64], from: usize, to: usize) -> f64 {
    // rounds are 1-based and inclusive
    let mut sum = 0.0;
    let mut n = 0usize;
    for t in tracks {
        let xs = pick(t);
        for r in from..=to.min(xs.len()) {
            sum += xs[r - 1];
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Seed-averaged adaptation report for `player_id`.
///
/// All records must carry the same `switch_round` metadata `k` and have at
/// least `k + window - 1` rounds, with `k > window`.
pub fn adaptation_report(
    records: &[MatchRecord],
    player_id: &str,
    window: u32,
    epsilon: f64,
) -> Result<AdaptationReport, MetricsError> {
    if window == 0 {
        return Err(MetricsError::InvalidParameter("window must be >= 1".into()));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(MetricsError::InvalidParameter(format!("epsilon {epsilon} not in (0, 1)")));
    }
    if records.is_empty() {
        return Err(MetricsError::InsufficientData("no records".into()));
    }
    let mut k: Option<u32> = None;
    let mut tracks = Vec::with_capacity(records.len());
    for r in records {
        let this_k: u32 = r
            .metadata
            .get(META_SWITCH_ROUND)
            .and_then(|s| s.parse().ok())
            .ok_or(MetricsError::MissingSwitchMetadata)?;
        match k {
            Some(prev) if prev != this_k => {
                return Err(MetricsError::InconsistentSwitchRound(prev, this_k))
            }
            _ => k = Some(this_k),
        }
        let side = side_of(r, player_id)?;
        let turns = turns_for(r, side);
        let payoff = r
            .rounds
            .iter()
            .map(|x| match side {
                Side::A => x.payoff_a.value(),
                Side::B => x.payoff_b.value(),
            })
            .collect();
        tracks.push(Track {
            coop: turns
                .iter()
                .map(|t| if t.0 == Action::C { 1.0 } else { 0.0 })
                .collect(),
            payoff,
        });
    }
    let k = k.expect("records non-empty") as usize;
    let w = window as usize;
    let end = tracks.iter().map(|t| t.coop.len()).min().unwrap_or(0);
    if k <= w || k + w - 1 > end {
        return Err(MetricsError::InsufficientRounds(format!(
            "switch round {k} needs {w} rounds on each side within {end} rounds"
        )));
    }

    let pre_rate = mean_over(&tracks, |t| &t.coop, k - w, k - 1);
    let pre_payoff = mean_over(&tracks, |t| &t.payoff, k - w, k - 1);
    let post_rate = mean_over(&tracks, |t| &t.coop, k, usize::MAX);
    let post_payoff = mean_over(&tracks, |t| &t.payoff, k, usize::MAX);
    let post_cooperations = tracks
        .iter()
        .map(|t| t.coop[k - 1..].iter().sum::<f64>())
        .sum::<f64>()
        / tracks.len() as f64;
    let baseline_rate = tracks
        .iter()
        .map(|t| t.coop[t.coop.len() - w..].iter().sum::<f64>())
        .sum::<f64>()
        / (tracks.len() * w) as f64;

    // seed-averaged trailing-window series, rounds 1..=end
    let average = |pick: &dyn Fn(&Track) -> &[f64]| -> Vec<f64> {
        let per: Vec<Vec<f64>> = tracks.iter().map(|t| trailing_mean(pick(t), w)).collect();
        (0..end)
            .map(|i| per.iter().map(|s| s[i]).sum::<f64>() / per.len() as f64)
            .collect()
    };
    let coop_series = average(&|t: &Track| &t.coop);
    let payoff_series = average(&|t: &Track| &t.payoff);

    let adaptation_speed = (1..)
        .take_while(|t| k + t + w - 2 <= end)
        .find(|t| {
            (k + t - 1..=k + t + w - 2).all(|round| (coop_series[round - 1] - baseline_rate).abs() <= epsilon)
        })
        .map(|t| t as u32);

    let offsets = (k - w)..=end;
    let curve = |series: &[f64], f: &dyn Fn(f64) -> f64| -> Vec<CurvePoint> {
        offsets
            .clone()
            .map(|round| CurvePoint {
                offset: round as i64 - k as i64,
                value: f(series[round - 1]),
            })
            .collect()
    };
    let recovery_curve = curve(&coop_series, &|x| x);
    let normalized_recovery_curve = if pre_rate > 0.0 {
        curve(&coop_series, &|x| x / pre_rate)
    } else {
        Vec::new()
    };
    let payoff_delta_curve = curve(&payoff_series, &|x| x - pre_payoff);

    Ok(AdaptationReport {
        switch_round: k as u32,
        window,
        epsilon,
        records: records.len(),
        pre_rate,
        post_rate,
        post_cooperations,
        post_payoff,
        baseline_rate,
        adaptation_speed,
        recovery_curve,
        normalized_recovery_curve,
        payoff_delta_curve,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WinPoint {
    pub round: u32,
    pub cum_wins: f64,
    pub cum_diff: f64,
}

/// Cumulative round wins (strictly higher payoff) and score differential of
/// `player_id`, averaged over the records.
pub fn win_series(records: &[MatchRecord], player_id: &str) -> Result<Vec<WinPoint>, MetricsError> {
    let Some(first) = records.first() else {
        return Err(MetricsError::InsufficientData("no records".into()));
    };
    let rounds = match first.horizon {
        Horizon::Fixed { rounds, .. } => rounds as usize,
        Horizon::Indefinite { .. } => return Err(MetricsError::MixedHorizons),
    };
    if records.iter().any(|r| r.horizon != first.horizon) {
        return Err(MetricsError::MixedHorizons);
    }
    let mut wins = vec![0.0; rounds];
    let mut diff = vec![0.0; rounds];
    for r in records {
        let side = side_of(r, player_id)?;
        let (mut cw, mut cd) = (0.0, 0.0);
        for (i, round) in r.rounds.iter().enumerate().take(rounds) {
            let (own, opp) = match side {
                Side::A => (round.payoff_a.value(), round.payoff_b.value()),
                Side::B => (round.payoff_b.value(), round.payoff_a.value()),
            };
            if own > opp {
                cw += 1.0;
            }
            cd += own - opp;
            wins[i] += cw;
            diff[i] += cd;
        }
    }
    let n = records.len() as f64;
    Ok((0..rounds)
        .map(|i| WinPoint {
            round: i as u32 + 1,
            cum_wins: wins[i] / n,
            cum_diff: diff[i] / n,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{Horizon, PayoffMatrix};

    fn record(a: &[Action], b: &[Action]) -> MatchRecord {
        let mut r = MatchRecord::new("a", "b", PayoffMatrix::axelrod(), Horizon::fixed(a.len() as u32), 0);
        for (&x, &y) in a.iter().zip(b) {
            r.push_round(x, y);
        }
        r
    }

    #[test]
    fn alternating_window_two() {
        use Action::{C, D};
        let r = record(&[C, D, C, D, C, D], &[C; 6]);
        let s = cooperation_rate_series(&r, "a", 2).unwrap();
        assert_eq!(s[0], (1, 1.0));
        assert!(s[1..].iter().all(|&(_, x)| x == 0.5));
        assert!(cooperation_rate_series(&r, "zz", 2).is_err());
        assert!(cooperation_rate_series(&r, "a", 0).is_err());
    }

    #[test]
    fn missing_switch_metadata() {
        let r = record(&[Action::C; 10], &[Action::C; 10]);
        assert_eq!(
            adaptation_report(&[r], "a", 2, 0.1).unwrap_err(),
            MetricsError::MissingSwitchMetadata
        );
    }

    #[test]
    fn switch_too_late() {
        let mut r = record(&[Action::C; 10], &[Action::C; 10]);
        r.metadata.insert(META_SWITCH_ROUND.into(), "9".into());
        assert!(matches!(
            adaptation_report(&[r], "a", 3, 0.1),
            Err(MetricsError::InsufficientRounds(_))
        ));
    }

    #[test]
    fn mixed_horizons_rejected() {
        let a = record(&[Action::C; 3], &[Action::C; 3]);
        let b = record(&[Action::C; 4], &[Action::C; 4]);
        assert_eq!(win_series(&[a, b], "a").unwrap_err(), MetricsError::MixedHorizons);
    }
}
