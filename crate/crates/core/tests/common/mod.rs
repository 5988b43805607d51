//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use ipdlab::game::{Action, Horizon, MatchRecord, PayoffMatrix};
use ipdlab::metrics::BehaviorEvents;
use nalgebra::DMatrix;

/// Builds a record from explicit actions.
pub fn record(a_id: &str, b_id: &str, turns: &[(Action, Action)]) -> MatchRecord {
    let mut r = MatchRecord::new(a_id, b_id, PayoffMatrix::axelrod(), Horizon::fixed(turns.len() as u32), 0);
    for &(x, y) in turns {
        r.push_round(x, y);
    }
    r
}

/// Straightforward per-index event counting, written without reference to
/// the library scanner.
pub fn naive_events(own: &[Action], opp: &[Action]) -> BehaviorEvents {
    use Action::{C, D};
    let n = own.len();
    let count = |f: &dyn Fn(usize) -> bool, range: std::ops::Range<usize>| range.filter(|&t| f(t)).count() as u64;
    let last = n.saturating_sub(1);
    let own_c = count(&|t| own[t] == C, 0..n);
    let opp_c = count(&|t| opp[t] == C, 0..n);
    BehaviorEvents {
        games: 1,
        first_moves_cooperative: u64::from(n > 0 && own[0] == C),
        opponent_defections: count(&|t| opp[t] == D, 0..n),
        answerable_opponent_defections: count(&|t| opp[t] == D, 0..last),
        forgiven_defections: count(&|t| opp[t] == D && own[t + 1] == C, 0..last),
        retaliations: count(&|t| opp[t] == D && own[t + 1] == D, 0..last),
        own_moves: n as u64,
        own_cooperations: own_c,
        mutual_defections: count(&|t| own[t] == D && opp[t] == D, 0..last),
        mutual_defections_followed_by_own_c: count(&|t| own[t] == D && opp[t] == D && own[t + 1] == C, 0..last),
        uncalled_defections: u64::from(n > 0 && own[0] == D)
            + count(&|t| own[t] == D && opp[t - 1] == C, 1..n),
        good_partner_games: u64::from(own_c >= opp_c),
    }
}

/// Dominant eigenpair from a dense solver: eigenvalues via the Schur form,
/// eigenvector as the null space of `A - lambda I` via SVD. Returns `None`
/// if the dominant eigenvalue is complex or not unique in magnitude.
pub fn oracle_dominant(m: &[Vec<f64>]) -> Option<(f64, Vec<f64>)> {
    let n = m.len();
    let a = DMatrix::from_fn(n, n, |i, j| m[i][j]);
    let eig = a.clone().complex_eigenvalues();
    let mut vals: Vec<_> = eig.iter().copied().collect();
    vals.sort_by(|x, y| y.norm().total_cmp(&x.norm()));
    let top = vals[0];
    if top.im.abs() > 1e-9 {
        return None;
    }
    if vals.len() > 1 && (vals[1].norm() - top.norm()).abs() < 1e-9 && (vals[1].re - top.re).abs() > 1e-9 {
        return None;
    }
    let lambda = top.re;
    let shifted = a - DMatrix::identity(n, n) * lambda;
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("non-empty");
    let mut v: Vec<f64> = v_t.row(idx).iter().copied().collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    let big = v.iter().copied().max_by(|x, y| x.abs().total_cmp(&y.abs())).unwrap_or(0.0);
    if big < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    Some((lambda, v))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Command line for the tit-for-tat subprocess fixture.
pub fn tft_agent_command() -> String {
    format!("python3 {}", fixture("tft_agent.py").display())
}
