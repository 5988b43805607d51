use std::collections::{BTreeMap, HashSet};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::AgentTranscript;
use crate::game::{Horizon, MatchRecord, PayoffMatrix};
use crate::metrics::{adaptation_report, AdaptationReport, DEFAULT_EPSILON, DEFAULT_WINDOW};
use crate::rng::derive_seed;
use crate::strategy::{default_catalog, StrategyError, StrategySpec};

use super::tournament::{preflight, run_job, Job};
use super::{build_pool, default_matrix, default_parallelism, validate_spec, ExperimentError, MatchFailure};

/// Metadata key naming the condition a battery record belongs to.
pub const META_CONDITION: &str = "condition";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchCondition {
    pub label: String,
    pub pre: StrategySpec,
    pub post: StrategySpec,
    /// Defaults to the middle of the match.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch_round: Option<u32>,
}

impl SwitchCondition {
    pub fn new(label: &str, pre: &str, post: &str) -> Self {
        SwitchCondition {
            label: label.into(),
            pre: StrategySpec::named(pre),
            post: StrategySpec::named(post),
            switch_round: None,
        }
    }

    /// The composite opponent spec for a battery of `rounds` rounds.
    pub fn opponent_spec(&self, rounds: u32) -> StrategySpec {
        StrategySpec::named("switch")
            .with_param("a", serde_json::to_value(&self.pre).expect("spec serializes"))
            .with_param("b", serde_json::to_value(&self.post).expect("spec serializes"))
            .with_param("switch_round", self.effective_round(rounds))
    }

    pub fn effective_round(&self, rounds: u32) -> u32 {
        self.switch_round.unwrap_or(rounds / 2 + 1)
    }
}

/// The four standard opponent conditions.
pub fn canonical_conditions() -> Vec<SwitchCondition> {
    vec![
        SwitchCondition::new("coop_to_defect", "always_cooperate", "always_defect"),
        SwitchCondition::new("defect_to_coop", "always_defect", "always_cooperate"),
        SwitchCondition::new("coop_to_competitive", "always_cooperate", "tit_for_tat"),
        SwitchCondition::new("defect_to_competitive", "always_defect", "tit_for_tat"),
    ]
}

fn default_rounds() -> u32 {
    50
}

fn default_seeds() -> u32 {
    20
}

fn default_window() -> u32 {
    DEFAULT_WINDOW
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchExperimentConfig {
    pub subject: StrategySpec,
    #[serde(default = "canonical_conditions")]
    pub conditions: Vec<SwitchCondition>,
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    #[serde(default = "default_seeds")]
    pub seeds: u32,
    #[serde(default = "default_window")]
    pub window: u32,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_matrix")]
    pub matrix: PayoffMatrix,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

impl SwitchExperimentConfig {
    pub fn new(subject: StrategySpec) -> Self {
        SwitchExperimentConfig {
            subject,
            conditions: canonical_conditions(),
            rounds: default_rounds(),
            seeds: default_seeds(),
            window: default_window(),
            epsilon: default_epsilon(),
            matrix: default_matrix(),
            base_seed: 0,
            parallelism: default_parallelism(),
        }
    }

    pub fn horizon(&self) -> Horizon {
        Horizon::fixed(self.rounds)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.seeds == 0 {
            return bad("seeds must be >= 1".into());
        }
        if self.window == 0 {
            return bad("window must be >= 1".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon {} not in (0, 1)", self.epsilon));
        }
        if self.conditions.is_empty() {
            return bad("no conditions".into());
        }
        self.horizon()
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        validate_spec(&self.subject)?;
        let mut labels = HashSet::new();
        for c in &self.conditions {
            if !labels.insert(c.label.as_str()) {
                return bad(format!("duplicate condition label {:?}", c.label));
            }
            let k = c.effective_round(self.rounds);
            if k <= self.window || k + self.window > self.rounds + 1 {
                return bad(format!(
                    "condition {:?}: switch round {k} leaves fewer than {} rounds on a side",
                    c.label, self.window
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub label: String,
    pub opponent_id: String,
    pub switch_round: u32,
    pub report: Option<AdaptationReport>,
    pub report_error: Option<String>,
    pub failures: Vec<MatchFailure>,
    /// Completed records, ordered by seed index.
    #[serde(skip)]
    pub records: Vec<MatchRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedCondition {
    pub label: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchExperimentResult {
    pub config: SwitchExperimentConfig,
    pub subject_id: String,
    pub conditions: Vec<ConditionResult>,
    pub skipped: Vec<SkippedCondition>,
    #[serde(skip)]
    pub transcripts: BTreeMap<String, AgentTranscript>,
}

impl SwitchExperimentResult {
    pub fn condition(&self, label: &str) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| c.label == label)
    }

    pub fn records(&self) -> impl Iterator<Item = &MatchRecord> {
        self.conditions.iter().flat_map(|c| c.records.iter())
    }
}

/// Absent catalog entries skip the condition; anything else is an error.
fn check_condition(cond: &SwitchCondition, rounds: u32) -> Result<Option<String>, ExperimentError> {
    for part in [&cond.pre, &cond.post] {
        if !default_catalog().contains(&part.name) {
            return Ok(Some(format!("strategy {:?} is not in the catalog", part.name)));
        }
    }
    match validate_spec(&cond.opponent_spec(rounds)) {
        Ok(()) => Ok(None),
        Err(ExperimentError::Strategy(StrategyError::UnknownStrategy(name))) => {
            Ok(Some(format!("strategy {name:?} is not in the catalog")))
        }
        Err(e) => Err(e),
    }
}

/// Plays the subject (as player A) against each condition's switch
/// composite for `seeds` seeds and summarizes its adaptation.
pub fn run_switch_battery(cfg: &SwitchExperimentConfig) -> Result<SwitchExperimentResult, ExperimentError> {
    cfg.validate()?;
    let subject_id = cfg.subject.display_id();
    let mut active = Vec::new();
    let mut skipped = Vec::new();
    for cond in &cfg.conditions {
        match check_condition(cond, cfg.rounds)? {
            Some(reason) => {
                warn!("skipping condition {}: {reason}", cond.label);
                skipped.push(SkippedCondition {
                    label: cond.label.clone(),
                    reason,
                });
            }
            None => active.push(cond),
        }
    }

    let opponents: Vec<(StrategySpec, String, Vec<(String, String)>)> = active
        .iter()
        .map(|c| {
            let spec = c.opponent_spec(cfg.rounds);
            let id = spec.display_id();
            (spec, id, vec![(META_CONDITION.to_string(), c.label.clone())])
        })
        .collect();
    let mut specs: Vec<&StrategySpec> = vec![&cfg.subject];
    specs.extend(opponents.iter().map(|o| &o.0));
    preflight(&specs);

    let mut jobs = Vec::new();
    for (ci, (spec, id, meta)) in opponents.iter().enumerate() {
        for s in 0..cfg.seeds {
            jobs.push((
                ci,
                Job {
                    a: (&cfg.subject, &subject_id),
                    b: (spec, id),
                    seed_index: s,
                    seed: derive_seed(cfg.base_seed, &["switch", &active[ci].label, &s.to_string()]),
                    extra_metadata: meta,
                },
            ));
        }
    }
    let horizon = cfg.horizon();
    let pool = build_pool(cfg.parallelism)?;
    let outcomes: Vec<_> = pool.install(|| {
        jobs.par_iter()
            .map(|(ci, j)| (*ci, run_job(j, &cfg.matrix, &horizon)))
            .collect()
    });

    let mut conditions: Vec<ConditionResult> = active
        .iter()
        .zip(&opponents)
        .map(|(c, o)| ConditionResult {
            label: c.label.clone(),
            opponent_id: o.1.clone(),
            switch_round: c.effective_round(cfg.rounds),
            report: None,
            report_error: None,
            failures: Vec::new(),
            records: Vec::new(),
        })
        .collect();
    let mut transcripts = BTreeMap::new();
    for (ci, o) in outcomes {
        match o.result {
            Ok(r) => conditions[ci].records.push(r),
            Err(f) => conditions[ci].failures.push(f),
        }
        transcripts.extend(o.transcripts);
    }
    for c in &mut conditions {
        summarize(c, &subject_id, cfg.window, cfg.epsilon);
    }
    Ok(SwitchExperimentResult {
        config: cfg.clone(),
        subject_id,
        conditions,
        skipped,
        transcripts,
    })
}

pub(crate) fn summarize(c: &mut ConditionResult, subject_id: &str, window: u32, epsilon: f64) {
    match adaptation_report(&c.records, subject_id, window, epsilon) {
        Ok(r) => {
            c.report = Some(r);
            c.report_error = None;
        }
        Err(e) => {
            c.report = None;
            c.report_error = Some(e.to_string());
        }
    }
}
