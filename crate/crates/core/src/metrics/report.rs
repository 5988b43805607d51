use serde::{Deserialize, Serialize};

use crate::game::MatchRecord;

use super::morality::{cooperation_matrix, eigenjesus, eigenmoses, CooperationMatrix, EigenRatings};
use super::{behavior_profile, extract_events, BehaviorEvents, BehaviorProfile, Ratio};
use super::{EIGEN_MAX_ITER, EIGEN_TOLERANCE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayerMetrics {
    pub player: String,
    pub events: BehaviorEvents,
    pub profile: BehaviorProfile,
    pub eigenjesus: Option<f64>,
    pub eigenmoses: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenMeta {
    pub tolerance: f64,
    pub max_iter: usize,
    pub eigenvalue: Option<f64>,
    pub iterations: Option<usize>,
    pub residual: Option<f64>,
    pub error: Option<String>,
}

impl EigenMeta {
    fn from_result(result: &Result<EigenRatings, super::MetricsError>) -> Self {
        let base = EigenMeta {
            tolerance: EIGEN_TOLERANCE,
            max_iter: EIGEN_MAX_ITER,
            eigenvalue: None,
            iterations: None,
            residual: None,
            error: None,
        };
        match result {
            Ok(r) => EigenMeta {
                eigenvalue: Some(r.eigenvalue),
                iterations: Some(r.iterations),
                residual: Some(r.residual),
                ..base
            },
            Err(e) => EigenMeta {
                error: Some(e.to_string()),
                ..base
            },
        }
    }
}

/// Behavior profiles and morality ratings for every player in a record set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub players: Vec<PlayerMetrics>,
    pub cooperation_matrix: Option<CooperationMatrix>,
    pub eigenjesus: EigenMeta,
    pub eigenmoses: EigenMeta,
}

/// Recomputes every metric from the records alone. Aborted records are
/// skipped.
pub fn compute_report(records: &[MatchRecord]) -> MetricReport {
    let records: Vec<MatchRecord> = records.iter().filter(|r| !r.is_aborted()).cloned().collect();
    let mut ids: Vec<&str> = records
        .iter()
        .flat_map(|r| [r.player_a_id.as_str(), r.player_b_id.as_str()])
        .collect();
    ids.sort_unstable();
    ids.dedup();

    let cm = cooperation_matrix(&records);
    let (jesus, moses) = match &cm {
        Ok(cm) => (eigenjesus(cm), eigenmoses(cm)),
        Err(e) => (Err(e.clone()), Err(e.clone())),
    };

    let players = ids
        .iter()
        .map(|&id| {
            let mine: Vec<MatchRecord> = records
                .iter()
                .filter(|r| r.player_a_id == id || r.player_b_id == id)
                .cloned()
                .collect();
            let events = extract_events(&mine, id).expect("filtered to records with the player");
            PlayerMetrics {
                player: id.to_string(),
                events,
                profile: behavior_profile(&events),
                eigenjesus: jesus.as_ref().ok().and_then(|r| r.rating(id)),
                eigenmoses: moses.as_ref().ok().and_then(|r| r.rating(id)),
            }
        })
        .collect();

    MetricReport {
        players,
        cooperation_matrix: cm.ok(),
        eigenjesus: EigenMeta::from_result(&jesus),
        eigenmoses: EigenMeta::from_result(&moses),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_pct(r: &Ratio) -> String {
    r.percent().map(|x| format!("{x:.1}")).unwrap_or_default()
}

impl MetricReport {
    pub fn player(&self, id: &str) -> Option<&PlayerMetrics> {
        self.players.iter().find(|p| p.player == id)
    }

    /// Long-form CSV: `player,metric,value,support`. Undefined values are empty.
    pub fn to_long_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["player", "metric", "value", "support"]).expect("in-memory write");
        for p in &self.players {
            let pr = &p.profile;
            let rows: [(&str, &Ratio); 6] = [
                ("cooperation_rate", &pr.cooperation_rate),
                ("niceness", &pr.niceness),
                ("forgiveness", &pr.forgiveness),
                ("retaliation", &pr.retaliation),
                ("generosity", &pr.generosity),
                ("good_partner", &pr.good_partner),
            ];
            for (name, ratio) in rows {
                w.write_record([
                    p.player.as_str(),
                    name,
                    &fmt_opt(ratio.value()),
                    &ratio.denominator.to_string(),
                ])
                .expect("in-memory write");
            }
            let n = self.players.len().to_string();
            w.write_record([p.player.as_str(), "eigenjesus", &fmt_opt(p.eigenjesus), &n])
                .expect("in-memory write");
            w.write_record([p.player.as_str(), "eigenmoses", &fmt_opt(p.eigenmoses), &n])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    /// One row per strategy with percentage columns.
    pub fn to_table_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "strategy",
            "coop_rate",
            "good_partner",
            "forgiveness",
            "retaliation",
            "generosity",
            "niceness",
            "eigenjesus",
            "eigenmoses",
        ])
        .expect("in-memory write");
        for p in &self.players {
            let pr = &p.profile;
            w.write_record([
                p.player.clone(),
                fmt_pct(&pr.cooperation_rate),
                fmt_pct(&pr.good_partner),
                fmt_pct(&pr.forgiveness),
                fmt_pct(&pr.retaliation),
                fmt_pct(&pr.generosity),
                fmt_pct(&pr.niceness),
                p.eigenjesus.map(|x| format!("{x:.6}")).unwrap_or_default(),
                p.eigenmoses.map(|x| format!("{x:.6}")).unwrap_or_default(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}
