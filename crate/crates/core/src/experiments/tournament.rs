use std::collections::{BTreeMap, HashSet};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{agent_check, AgentEndpointConfig, AgentTranscript};
use crate::game::{play_match, Horizon, MatchError, MatchRecord, PayoffMatrix, Score};
use crate::metrics::{compute_report, MetricReport};
use crate::rng::derive_seed;
use crate::strategy::{default_catalog, StrategySpec};

use super::{
    build_pool, default_horizon, default_matrix, default_parallelism, validate_spec,
    ExperimentError, MatchFailure,
};

fn default_seeds() -> u32 {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TournamentConfig {
    pub players: Vec<StrategySpec>,
    #[serde(default = "default_matrix")]
    pub matrix: PayoffMatrix,
    #[serde(default = "default_horizon")]
    pub horizon: Horizon,
    #[serde(default = "default_seeds")]
    pub seeds_per_pairing: u32,
    #[serde(default)]
    pub include_self_play: bool,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

impl TournamentConfig {
    pub fn new(players: Vec<StrategySpec>) -> Self {
        TournamentConfig {
            players,
            matrix: default_matrix(),
            horizon: default_horizon(),
            seeds_per_pairing: default_seeds(),
            include_self_play: false,
            base_seed: 0,
            parallelism: default_parallelism(),
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.players.len() < 2 {
            return Err(ExperimentError::Config("a tournament needs at least 2 players".into()));
        }
        if self.seeds_per_pairing == 0 {
            return Err(ExperimentError::Config("seeds_per_pairing must be >= 1".into()));
        }
        self.horizon
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        for p in &self.players {
            validate_spec(p)?;
        }
        Ok(())
    }

    /// Unordered pairings `(i, j)` with `i < j`, plus `(i, i)` with self-play.
    pub fn pairings(&self) -> Vec<(usize, usize)> {
        let n = self.players.len();
        let mut out = Vec::new();
        for i in 0..n {
            let start = if self.include_self_play { i } else { i + 1 };
            for j in start..n {
                out.push((i, j));
            }
        }
        out
    }
}

/// Player ids from specs; repeated specs get `#2`, `#3`, ... suffixes.
pub fn assign_player_ids(players: &[StrategySpec]) -> Vec<String> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    players
        .iter()
        .map(|p| {
            let base = p.display_id();
            let count = seen.entry(base.clone()).or_insert(0);
            *count += 1;
            if *count == 1 {
                base
            } else {
                format!("{base}#{count}")
            }
        })
        .collect()
}

/// Seed of one match, keyed by the pairing's player ids so that removing a
/// player leaves every other pairing unchanged.
pub fn match_seed(base_seed: u64, a_id: &str, b_id: &str, seed_index: u32) -> u64 {
    derive_seed(base_seed, &["match", a_id, b_id, &seed_index.to_string()])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingEntry {
    pub rank: usize,
    pub player: String,
    pub matches: u64,
    pub rounds: u64,
    pub total_score: Score,
    pub mean_score_per_round: f64,
    pub wins: u64,
    pub ties: u64,
    pub losses: u64,
}

/// Ranking by mean score per round, then wins, then name. Self-play
/// records count both sides for the player.
pub fn compute_ranking(records: &[MatchRecord], player_ids: &[String]) -> Vec<RankingEntry> {
    let mut rows: Vec<RankingEntry> = player_ids
        .iter()
        .map(|id| {
            let mut e = RankingEntry {
                rank: 0,
                player: id.clone(),
                matches: 0,
                rounds: 0,
                total_score: Score::ZERO,
                mean_score_per_round: 0.0,
                wins: 0,
                ties: 0,
                losses: 0,
            };
            for r in records.iter().filter(|r| !r.is_aborted()) {
                let sides = [
                    (r.player_a_id == *id, r.total_a, r.total_b),
                    (r.player_b_id == *id, r.total_b, r.total_a),
                ];
                for (plays, own, opp) in sides {
                    if !plays {
                        continue;
                    }
                    e.matches += 1;
                    e.rounds += r.rounds.len() as u64;
                    e.total_score += own;
                    match own.value().partial_cmp(&opp.value()) {
                        Some(std::cmp::Ordering::Greater) => e.wins += 1,
                        Some(std::cmp::Ordering::Less) => e.losses += 1,
                        _ => e.ties += 1,
                    }
                }
            }
            if e.rounds > 0 {
                e.mean_score_per_round = e.total_score.value() / e.rounds as f64;
            }
            e
        })
        .collect();
    rows.sort_by(|x, y| {
        y.mean_score_per_round
            .total_cmp(&x.mean_score_per_round)
            .then(y.wins.cmp(&x.wins))
            .then(x.player.cmp(&y.player))
    });
    for (i, row) in rows.iter_mut().enumerate() {
        row.rank = i + 1;
    }
    rows
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TournamentResult {
    pub config: TournamentConfig,
    pub player_ids: Vec<String>,
    /// Completed matches, ordered by (pairing, seed index).
    pub records: Vec<MatchRecord>,
    pub ranking: Vec<RankingEntry>,
    pub metrics: MetricReport,
    pub failures: Vec<MatchFailure>,
    /// Agent transcripts keyed by `"{a}__{b}__{seed_index}__{side}"`.
    #[serde(skip)]
    pub transcripts: BTreeMap<String, AgentTranscript>,
}

pub(crate) struct Job<'a> {
    pub a: (&'a StrategySpec, &'a str),
    pub b: (&'a StrategySpec, &'a str),
    pub seed_index: u32,
    pub seed: u64,
    pub extra_metadata: &'a [(String, String)],
}

pub(crate) struct JobOutcome {
    pub result: Result<MatchRecord, MatchFailure>,
    pub transcripts: Vec<(String, AgentTranscript)>,
}

pub(crate) fn run_job(job: &Job<'_>, matrix: &PayoffMatrix, horizon: &Horizon) -> JobOutcome {
    let catalog = default_catalog();
    let (mut pa, mut pb) = match (catalog.make_player(job.a.0), catalog.make_player(job.b.0)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => {
            // specs are validated up front; reaching this is a bug
            panic!("validated spec failed to build: {e}")
        }
    };
    let outcome = play_match((job.a.1, &mut *pa), (job.b.1, &mut *pb), matrix, horizon, job.seed);
    let mut transcripts = Vec::new();
    for (side, p) in [("a", &mut pa), ("b", &mut pb)] {
        if let Some(t) = p.take_transcript() {
            let key = format!("{}__{}__{}__{}", job.a.1, job.b.1, job.seed_index, side);
            transcripts.push((key, t));
        }
    }
    let result = match outcome {
        Ok(mut record) => {
            for (k, v) in job.extra_metadata {
                record.metadata.insert(k.clone(), v.clone());
            }
            Ok(record)
        }
        Err(MatchError::AgentFailure {
            player_id,
            round,
            failure,
            partial,
        }) => {
            let mut partial = *partial;
            for (k, v) in job.extra_metadata {
                partial.metadata.insert(k.clone(), v.clone());
            }
            Err(MatchFailure {
                player_a_id: job.a.1.to_string(),
                player_b_id: job.b.1.to_string(),
                seed_index: job.seed_index,
                seed: job.seed,
                failed_player: player_id,
                round,
                reason: failure.reason,
                partial,
            })
        }
        Err(MatchError::Horizon(e)) => panic!("validated horizon rejected: {e}"),
    };
    JobOutcome {
        result,
        transcripts,
    }
}

fn endpoints_in(spec: &StrategySpec, out: &mut Vec<AgentEndpointConfig>) {
    if spec.name == "external_agent" {
        if let Some(cfg) = spec
            .params
            .get("endpoint")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
        {
            out.push(cfg);
        }
    } else if spec.is_switch() {
        for key in ["a", "b"] {
            if let Some(sub) = spec
                .params
                .get(key)
                .and_then(|v| serde_json::from_value::<StrategySpec>(v.clone()).ok())
            {
                endpoints_in(&sub, out);
            }
        }
    }
}

/// One request per external endpoint before any match runs. Failures only
/// warn; the affected matches will be recorded as failures.
pub(crate) fn preflight(specs: &[&StrategySpec]) {
    let mut endpoints = Vec::new();
    for s in specs {
        endpoints_in(s, &mut endpoints);
    }
    for cfg in endpoints {
        if let Err(f) = agent_check(&cfg) {
            warn!("agent preflight failed for {}: {}", cfg.address, f.reason);
        }
    }
}

/// Plays every pairing for `seeds_per_pairing` seeds.
pub fn run_round_robin(cfg: &TournamentConfig) -> Result<TournamentResult, ExperimentError> {
    cfg.validate()?;
    let ids = assign_player_ids(&cfg.players);
    preflight(&cfg.players.iter().collect::<Vec<_>>());

    let mut jobs = Vec::new();
    for (i, j) in cfg.pairings() {
        for s in 0..cfg.seeds_per_pairing {
            jobs.push(Job {
                a: (&cfg.players[i], &ids[i]),
                b: (&cfg.players[j], &ids[j]),
                seed_index: s,
                seed: match_seed(cfg.base_seed, &ids[i], &ids[j], s),
                extra_metadata: &[],
            });
        }
    }
    let distinct: HashSet<u64> = jobs.iter().map(|j| j.seed).collect();
    if distinct.len() != jobs.len() {
        return Err(ExperimentError::Config(
            "match seed collision; choose a different base_seed".into(),
        ));
    }

    let pool = build_pool(cfg.parallelism)?;
    let outcomes: Vec<JobOutcome> =
        pool.install(|| jobs.par_iter().map(|j| run_job(j, &cfg.matrix, &cfg.horizon)).collect());

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut transcripts = BTreeMap::new();
    for o in outcomes {
        match o.result {
            Ok(r) => records.push(r),
            Err(f) => failures.push(f),
        }
        transcripts.extend(o.transcripts);
    }
    let ranking = compute_ranking(&records, &ids);
    let metrics = compute_report(&records);
    Ok(TournamentResult {
        config: cfg.clone(),
        player_ids: ids,
        records,
        ranking,
        metrics,
        failures,
        transcripts,
    })
}
