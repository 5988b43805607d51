mod common;

use ipdlab::agent::AgentEndpointConfig;
use ipdlab::experiments::{
    compute_ranking, load, persist, plot_csv, run_round_robin, run_switch_battery, PersistError, PlotError,
    PlotKind, RunResult, SwitchCondition, SwitchExperimentConfig, TournamentConfig,
};
use ipdlab::game::{Horizon, Score};
use ipdlab::strategy::StrategySpec;

fn pool() -> Vec<StrategySpec> {
    vec![
        StrategySpec::named("tit_for_tat"),
        StrategySpec::named("always_defect"),
        StrategySpec::random(0.5),
        StrategySpec::named("grim"),
    ]
}

#[test]
fn ranking_recomputes_and_scores_are_conserved() {
    let mut cfg = TournamentConfig::new(pool());
    cfg.include_self_play = true;
    cfg.seeds_per_pairing = 3;
    cfg.parallelism = 3;
    let res = run_round_robin(&cfg).unwrap();
    assert_eq!(res.records.len(), 10 * 3);
    assert_eq!(compute_ranking(&res.records, &res.player_ids), res.ranking);
    let ranked: f64 = res.ranking.iter().map(|e| e.total_score.value()).sum();
    let recorded: f64 = res.records.iter().map(|r| (r.total_a + r.total_b).value()).sum();
    assert_eq!(ranked, recorded);
    for w in res.ranking.windows(2) {
        assert!(w[0].mean_score_per_round >= w[1].mean_score_per_round);
    }
}

#[test]
fn removing_a_player_keeps_other_pairings() {
    let mut cfg = TournamentConfig::new(pool());
    cfg.seeds_per_pairing = 2;
    let full = run_round_robin(&cfg).unwrap();
    cfg.players.remove(1);
    let reduced = run_round_robin(&cfg).unwrap();
    for r in &reduced.records {
        assert!(full.records.contains(r), "{} vs {}", r.player_a_id, r.player_b_id);
    }
}

#[test]
fn duplicate_players_get_distinct_ids() {
    let cfg = TournamentConfig::new(vec![StrategySpec::named("tit_for_tat"), StrategySpec::named("tit_for_tat")]);
    let res = run_round_robin(&cfg).unwrap();
    assert_eq!(res.player_ids, vec!["tit_for_tat", "tit_for_tat#2"]);
    assert_eq!(res.records[0].player_b_id, "tit_for_tat#2");
}

#[test]
fn agent_failures_are_recorded_not_scored() {
    let mut bad = AgentEndpointConfig::subprocess("python3 -c \"import sys; sys.exit(1)\"");
    bad.max_retries = 0;
    let mut players = pool();
    players.push(StrategySpec::named("external_agent").with_param("endpoint", serde_json::to_value(&bad).unwrap()));
    let mut cfg = TournamentConfig::new(players);
    cfg.seeds_per_pairing = 2;
    let res = run_round_robin(&cfg).unwrap();
    assert_eq!(res.failures.len(), 4 * 2);
    assert_eq!(res.records.len(), 6 * 2);
    assert!(res.failures.iter().all(|f| f.failed_player.starts_with("agent:")));
    assert!(res.metrics.players.iter().all(|p| !p.player.starts_with("agent:")));
    assert!(!res.transcripts.is_empty());

    let dir = tempfile::tempdir().unwrap();
    let run = RunResult::Tournament(res);
    persist(&run, dir.path()).unwrap();
    assert!(dir.path().join("transcripts").is_dir());
    assert_eq!(load(dir.path()).unwrap(), run);
}

#[test]
fn tft_subprocess_plays_in_a_tournament() {
    let cfg = AgentEndpointConfig::subprocess(common::tft_agent_command());
    let agent = StrategySpec::named("external_agent").with_param("endpoint", serde_json::to_value(&cfg).unwrap());
    let mut tc = TournamentConfig::new(vec![agent, StrategySpec::named("always_defect")]);
    tc.seeds_per_pairing = 2;
    let res = run_round_robin(&tc).unwrap();
    assert!(res.failures.is_empty());
    assert!(res.records.iter().all(|r| r.total_a == Score(49.0) && r.total_b == Score(54.0)));
}

#[test]
fn battery_skips_absent_strategies() {
    let mut cfg = SwitchExperimentConfig::new(StrategySpec::named("tit_for_tat"));
    cfg.seeds = 2;
    cfg.conditions.push(SwitchCondition::new("coop_to_downing", "always_cooperate", "first_by_downing"));
    cfg.conditions.push(SwitchCondition::new("coop_to_joss", "always_cooperate", "first_by_joss"));
    let res = run_switch_battery(&cfg).unwrap();
    assert_eq!(res.conditions.len(), 5);
    assert_eq!(res.skipped.len(), 1);
    assert_eq!(res.skipped[0].label, "coop_to_downing");
    assert!(res.conditions.iter().all(|c| c.report.is_some()));
}

#[test]
fn battery_rejects_bad_params() {
    let mut cfg = SwitchExperimentConfig::new(StrategySpec::named("tit_for_tat"));
    cfg.conditions = vec![SwitchCondition {
        label: "x".into(),
        pre: StrategySpec::random(1.5),
        post: StrategySpec::named("always_defect"),
        switch_round: None,
    }];
    assert!(run_switch_battery(&cfg).is_err());
}

#[test]
fn defect_to_coop_recovery() {
    let mut cfg = SwitchExperimentConfig::new(StrategySpec::named("tit_for_tat"));
    cfg.window = 1;
    cfg.epsilon = 0.01;
    cfg.seeds = 3;
    let res = run_switch_battery(&cfg).unwrap();
    let r = res.condition("defect_to_coop").unwrap().report.clone().unwrap();
    // TFT mirrors with one round of lag
    assert_eq!(r.pre_rate, 0.0);
    assert_eq!(r.adaptation_speed, Some(2));
    assert_eq!(r.post_cooperations, 24.0);
    assert!(r.normalized_recovery_curve.is_empty());
}

#[test]
fn config_json_round_trip_and_strictness() {
    let cfg: TournamentConfig = serde_json::from_str(
        r#"{"players":[{"name":"tit_for_tat"},{"name":"random","params":{"p_coop":0.5}}],"seeds_per_pairing":3}"#,
    )
    .unwrap();
    assert_eq!(cfg.horizon, Horizon::fixed(50));
    assert_eq!(cfg.seeds_per_pairing, 3);
    let back: TournamentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);
    assert!(serde_json::from_str::<TournamentConfig>(r#"{"players":[],"seed":1}"#).is_err());
}

#[test]
fn newer_schema_is_rejected() {
    let mut cfg = TournamentConfig::new(pool());
    cfg.seeds_per_pairing = 1;
    let dir = tempfile::tempdir().unwrap();
    persist(&RunResult::Tournament(run_round_robin(&cfg).unwrap()), dir.path()).unwrap();
    let path = dir.path().join("summary.json");
    let text = std::fs::read_to_string(&path).unwrap().replacen("\"v\": 1", "\"v\": 2", 1);
    std::fs::write(&path, text).unwrap();
    match load(dir.path()) {
        Err(e @ PersistError::SchemaVersionMismatch { found: 2, expected: 1, .. }) => {
            let msg = e.to_string();
            assert!(msg.contains("v2") && msg.contains("v1"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn missing_directory_is_io_error() {
    assert!(matches!(load(std::path::Path::new("/nonexistent/run")), Err(PersistError::Io { .. })));
}

#[test]
fn plot_exports() {
    let mut cfg = TournamentConfig::new(pool());
    cfg.seeds_per_pairing = 2;
    let t = RunResult::Tournament(run_round_robin(&cfg).unwrap());
    let wins = plot_csv(&t, PlotKind::WinSeries, Some("tit_for_tat")).unwrap();
    assert!(wins.starts_with("opponent,round,cum_wins,cum_diff\n"));
    assert_eq!(wins.lines().count(), 1 + 3 * 50);
    let last_vs_alld = wins.lines().rfind(|l| l.starts_with("always_defect,")).unwrap();
    assert_eq!(last_vs_alld, "always_defect,50,0,-5");
    let ranks = plot_csv(&t, PlotKind::Rankings, None).unwrap();
    assert_eq!(ranks.lines().count(), 5);
    assert!(matches!(plot_csv(&t, PlotKind::Recovery, None), Err(PlotError::MissingSeries(_))));

    let mut sw = SwitchExperimentConfig::new(StrategySpec::named("tit_for_tat"));
    sw.seeds = 2;
    let s = RunResult::Switch(run_switch_battery(&sw).unwrap());
    let rec = plot_csv(&s, PlotKind::Recovery, None).unwrap();
    assert!(rec.starts_with("condition,offset,coop_rate,normalized_rate\n"));
    let overlay = plot_csv(&s, PlotKind::Overlay, None).unwrap();
    assert!(overlay.contains("coop_rate_change_pct") && overlay.contains("payoff_change"));
    let coop = plot_csv(&s, PlotKind::CoopSeries, None).unwrap();
    assert!(coop.contains("coop_to_defect,27,0"));
    assert!(matches!(plot_csv(&s, PlotKind::Rankings, None), Err(PlotError::MissingSeries(_))));
    assert!("nope".parse::<PlotKind>().is_err());
}
