//! Directed cooperation matrices and their principal-eigenvector ratings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::game::{Action, MatchRecord};

use super::MetricsError;

pub const EIGEN_TOLERANCE: f64 = 1e-10;
pub const EIGEN_MAX_ITER: usize = 10_000;

/// Entry `(i, j)`: fraction of player i's moves that were C against j.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CooperationMatrix {
    pub players: Vec<String>,
    pub entries: Vec<Vec<Option<f64>>>,
    /// Number of moves behind each entry.
    pub support: Vec<Vec<u64>>,
}

/// Builds the matrix from all records, pooling rounds over seeds. Players
/// are sorted by id.
pub fn cooperation_matrix(records: &[MatchRecord]) -> Result<CooperationMatrix, MetricsError> {
    let mut ids: Vec<&str> = records
        .iter()
        .flat_map(|r| [r.player_a_id.as_str(), r.player_b_id.as_str()])
        .collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(MetricsError::InsufficientData(format!(
            "cooperation matrix needs at least 2 players, found {}",
            ids.len()
        )));
    }
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let m = ids.len();
    let mut coop = vec![vec![0u64; m]; m];
    let mut moves = vec![vec![0u64; m]; m];
    for r in records {
        let a = index[r.player_a_id.as_str()];
        let b = index[r.player_b_id.as_str()];
        for round in &r.rounds {
            moves[a][b] += 1;
            moves[b][a] += 1;
            coop[a][b] += u64::from(round.action_a == Action::C);
            coop[b][a] += u64::from(round.action_b == Action::C);
        }
    }
    let entries = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| (moves[i][j] > 0).then(|| coop[i][j] as f64 / moves[i][j] as f64))
                .collect()
        })
        .collect();
    Ok(CooperationMatrix {
        players: ids.into_iter().map(str::to_string).collect(),
        entries,
        support: moves,
    })
}

impl CooperationMatrix {
    /// Dense matrix used for ratings: missing off-diagonal entries take the
    /// row mean of observed ones; an unobserved diagonal is zero.
    pub fn imputed(&self) -> Vec<Vec<f64>> {
        let m = self.players.len();
        (0..m)
            .map(|i| {
                let observed: Vec<f64> = (0..m)
                    .filter(|&j| j != i)
                    .filter_map(|j| self.entries[i][j])
                    .collect();
                let mean = if observed.is_empty() {
                    0.0
                } else {
                    observed.iter().sum::<f64>() / observed.len() as f64
                };
                (0..m)
                    .map(|j| match self.entries[i][j] {
                        Some(v) => v,
                        None if i == j => 0.0,
                        None => mean,
                    })
                    .collect()
            })
            .collect()
    }

    /// Imputed matrix rescaled to `2 * rate - 1`; an unobserved diagonal is zero.
    pub fn rescaled(&self) -> Vec<Vec<f64>> {
        let dense = self.imputed();
        dense
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                row.into_iter()
                    .enumerate()
                    .map(|(j, v)| {
                        if i == j && self.entries[i][j].is_none() {
                            0.0
                        } else {
                            2.0 * v - 1.0
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn missing_pairs(&self) -> Vec<(String, String)> {
        let m = self.players.len();
        let mut out = Vec::new();
        for i in 0..m {
            for j in 0..m {
                if i != j && self.entries[i][j].is_none() {
                    out.push((self.players[i].clone(), self.players[j].clone()));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub vector: Vec<f64>,
    pub eigenvalue: f64,
    pub iterations: usize,
    pub residual: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// Makes the largest-magnitude component positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Dominant eigenpair by power iteration from the uniform unit vector.
///
/// Each iterate is sign-normalized so a negative dominant eigenvalue still
/// converges. Stops when successive iterates differ by at most `tolerance`
/// in L2 norm. If an iterate is mapped to zero it is returned with
/// eigenvalue 0 (it lies in the kernel).
pub fn power_iteration(
    matrix: &[Vec<f64>],
    tolerance: f64,
    max_iter: usize,
) -> Result<EigenPair, MetricsError> {
    let m = matrix.len();
    if m == 0 || matrix.iter().any(|row| row.len() != m) {
        return Err(MetricsError::InvalidParameter("matrix must be square and non-empty".into()));
    }
    if matrix.iter().flatten().any(|x| !x.is_finite()) {
        return Err(MetricsError::InvalidParameter("matrix has non-finite entries".into()));
    }
    let mut v = vec![1.0 / (m as f64).sqrt(); m];
    let mut residual = f64::INFINITY;
    for iteration in 1..=max_iter {
        let mut next = mat_vec(matrix, &v);
        let n = norm(&next);
        if n == 0.0 {
            return Ok(EigenPair {
                vector: v,
                eigenvalue: 0.0,
                iterations: iteration,
                residual: 0.0,
            });
        }
        next.iter_mut().for_each(|x| *x /= n);
        fix_sign(&mut next);
        residual = next.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        v = next;
        if residual <= tolerance {
            let mv = mat_vec(matrix, &v);
            let eigenvalue = mv.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
            return Ok(EigenPair {
                vector: v,
                eigenvalue,
                iterations: iteration,
                residual,
            });
        }
    }
    Err(MetricsError::NoConvergence {
        iterations: max_iter,
        residual,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenRatings {
    pub players: Vec<String>,
    pub ratings: Vec<f64>,
    pub eigenvalue: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl EigenRatings {
    pub fn rating(&self, player: &str) -> Option<f64> {
        self.players
            .iter()
            .position(|p| p == player)
            .map(|i| self.ratings[i])
    }
}

fn ratings(cm: &CooperationMatrix, dense: &[Vec<f64>]) -> Result<EigenRatings, MetricsError> {
    let pair = power_iteration(dense, EIGEN_TOLERANCE, EIGEN_MAX_ITER)?;
    Ok(EigenRatings {
        players: cm.players.clone(),
        ratings: pair.vector,
        eigenvalue: pair.eigenvalue,
        iterations: pair.iterations,
        residual: pair.residual,
    })
}

/// Principal eigenvector of the (imputed) cooperation-rate matrix.
pub fn eigenjesus(cm: &CooperationMatrix) -> Result<EigenRatings, MetricsError> {
    ratings(cm, &cm.imputed())
}

/// Principal eigenvector of the matrix rescaled so cooperation is +1 and
/// defection is -1.
pub fn eigenmoses(cm: &CooperationMatrix) -> Result<EigenRatings, MetricsError> {
    ratings(cm, &cm.rescaled())
}
