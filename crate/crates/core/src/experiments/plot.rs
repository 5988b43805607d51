//! Tidy CSV exports for external plotting.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::game::{Action, MatchRecord, Side};
use crate::metrics::{win_series, MetricsError};

use super::persist::RunResult;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    /// `opponent,round,cum_wins,cum_diff`
    WinSeries,
    /// `opponent,round,coop_rate` (seed-averaged, per round)
    CoopSeries,
    /// `condition,offset,coop_rate,normalized_rate`
    Recovery,
    /// `condition,measure,offset,value`
    Overlay,
    /// `rank,player,mean_score_per_round,total_score,wins,ties,losses`
    Rankings,
}

impl PlotKind {
    pub const ALL: [PlotKind; 5] = [
        PlotKind::WinSeries,
        PlotKind::CoopSeries,
        PlotKind::Recovery,
        PlotKind::Overlay,
        PlotKind::Rankings,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::WinSeries => "win_series",
            PlotKind::CoopSeries => "coop_series",
            PlotKind::Recovery => "recovery",
            PlotKind::Overlay => "overlay",
            PlotKind::Rankings => "rankings",
        }
    }
}

impl FromStr for PlotKind {
    type Err = PlotError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| PlotError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("unknown plot kind {0:?}")]
    UnknownKind(String),
    #[error("run has no data for {0}")]
    MissingSeries(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Writes the CSV for `kind` to `path`.
pub fn emit_plot_data(
    run: &RunResult,
    kind: PlotKind,
    subject: Option<&str>,
    path: &Path,
) -> Result<(), PlotError> {
    let csv = plot_csv(run, kind, subject)?;
    std::fs::write(path, csv)?;
    Ok(())
}

struct Table(csv::Writer<Vec<u8>>);

impl Table {
    fn new(header: &[&str]) -> Self {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).expect("in-memory write");
        Table(w)
    }

    fn row(&mut self, fields: &[String]) {
        self.0.write_record(fields).expect("in-memory write");
    }

    fn finish(self) -> String {
        String::from_utf8(self.0.into_inner().expect("flush")).expect("utf8")
    }
}

fn default_subject(run: &RunResult) -> Option<String> {
    match run {
        RunResult::Tournament(t) => t.player_ids.first().cloned(),
        RunResult::Switch(s) => Some(s.subject_id.clone()),
    }
}

/// Records involving `subject`, grouped by opponent label. Switch runs are
/// labeled by condition.
fn by_opponent<'a>(run: &'a RunResult, subject: &str) -> BTreeMap<String, Vec<&'a MatchRecord>> {
    let mut groups: BTreeMap<String, Vec<&MatchRecord>> = BTreeMap::new();
    match run {
        RunResult::Tournament(t) => {
            for r in &t.records {
                if let Some(opp) = r.opponent_of(subject) {
                    groups.entry(opp.to_string()).or_default().push(r);
                }
            }
        }
        RunResult::Switch(s) => {
            for c in &s.conditions {
                let rs: Vec<&MatchRecord> = c.records.iter().filter(|r| r.player_a_id == subject).collect();
                if !rs.is_empty() {
                    groups.insert(c.label.clone(), rs);
                }
            }
        }
    }
    groups
}

fn per_round_coop(records: &[&MatchRecord], subject: &str) -> Vec<f64> {
    let end = records.iter().map(|r| r.rounds.len()).min().unwrap_or(0);
    (0..end)
        .map(|i| {
            let c = records
                .iter()
                .filter(|r| {
                    let side = if r.player_a_id == subject { Side::A } else { Side::B };
                    let round = &r.rounds[i];
                    let own = match side {
                        Side::A => round.action_a,
                        Side::B => round.action_b,
                    };
                    own == Action::C
                })
                .count();
            c as f64 / records.len() as f64
        })
        .collect()
}

/// Renders the CSV for `kind`. `subject` defaults to the first player of a
/// tournament or the subject of a switch battery.
pub fn plot_csv(run: &RunResult, kind: PlotKind, subject: Option<&str>) -> Result<String, PlotError> {
    let missing = || PlotError::MissingSeries(kind.name().to_string());
    let subject = subject.map(str::to_string).or_else(|| default_subject(run)).ok_or_else(missing)?;
    match kind {
        PlotKind::WinSeries | PlotKind::CoopSeries => {
            let groups = by_opponent(run, &subject);
            if groups.is_empty() {
                return Err(missing());
            }
            let mut t = if kind == PlotKind::WinSeries {
                Table::new(&["opponent", "round", "cum_wins", "cum_diff"])
            } else {
                Table::new(&["opponent", "round", "coop_rate"])
            };
            for (opp, records) in groups {
                if kind == PlotKind::WinSeries {
                    let owned: Vec<MatchRecord> = records.into_iter().cloned().collect();
                    for p in win_series(&owned, &subject)? {
                        t.row(&[opp.clone(), p.round.to_string(), p.cum_wins.to_string(), p.cum_diff.to_string()]);
                    }
                } else {
                    for (i, rate) in per_round_coop(&records, &subject).into_iter().enumerate() {
                        t.row(&[opp.clone(), (i + 1).to_string(), rate.to_string()]);
                    }
                }
            }
            Ok(t.finish())
        }
        PlotKind::Recovery | PlotKind::Overlay => {
            let RunResult::Switch(s) = run else {
                return Err(missing());
            };
            let reports: Vec<_> = s
                .conditions
                .iter()
                .filter_map(|c| c.report.as_ref().map(|r| (&c.label, r)))
                .collect();
            if reports.is_empty() {
                return Err(missing());
            }
            if kind == PlotKind::Recovery {
                let mut t = Table::new(&["condition", "offset", "coop_rate", "normalized_rate"]);
                for (label, r) in reports {
                    for (i, p) in r.recovery_curve.iter().enumerate() {
                        let norm = r
                            .normalized_recovery_curve
                            .get(i)
                            .map(|n| n.value.to_string())
                            .unwrap_or_default();
                        t.row(&[label.clone(), p.offset.to_string(), p.value.to_string(), norm]);
                    }
                }
                Ok(t.finish())
            } else {
                let mut t = Table::new(&["condition", "measure", "offset", "value"]);
                for (label, r) in reports {
                    for p in &r.recovery_curve {
                        let pct = 100.0 * (p.value - r.pre_rate);
                        t.row(&[label.clone(), "coop_rate_change_pct".into(), p.offset.to_string(), pct.to_string()]);
                    }
                    for p in &r.payoff_delta_curve {
                        t.row(&[label.clone(), "payoff_change".into(), p.offset.to_string(), p.value.to_string()]);
                    }
                }
                Ok(t.finish())
            }
        }
        PlotKind::Rankings => {
            let RunResult::Tournament(tr) = run else {
                return Err(missing());
            };
            let mut t = Table::new(&[
                "rank",
                "player",
                "mean_score_per_round",
                "total_score",
                "wins",
                "ties",
                "losses",
            ]);
            for e in &tr.ranking {
                t.row(&[
                    e.rank.to_string(),
                    e.player.clone(),
                    e.mean_score_per_round.to_string(),
                    e.total_score.value().to_string(),
                    e.wins.to_string(),
                    e.ties.to_string(),
                    e.losses.to_string(),
                ]);
            }
            Ok(t.finish())
        }
    }
}
