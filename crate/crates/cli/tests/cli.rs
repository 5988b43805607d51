use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use ipdlab::metrics::MetricReport;
use serde_json::{json, Value};

fn ipdlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ipdlab")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_json(dir: &Path, name: &str, value: Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, value.to_string()).unwrap();
    path
}

fn tft_agent() -> String {
    format!(
        "python3 {}/../core/tests/fixtures/tft_agent.py",
        env!("CARGO_MANIFEST_DIR")
    )
}

fn demo_tournament(dir: &Path) -> PathBuf {
    write_json(
        dir,
        "tournament.json",
        json!({"players": [{"name": "always_cooperate"}, {"name": "always_defect"}, {"name": "tit_for_tat"}]}),
    )
}

#[test]
fn tournament_writes_run_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = demo_tournament(tmp.path());
    let run1 = tmp.path().join("run1");
    let run2 = tmp.path().join("run2");
    let out = ipdlab(&["tournament", "--config", cfg.to_str().unwrap(), "--out", run1.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let records = std::fs::read_to_string(run1.join("records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 60);
    let table = stdout(&out);
    assert!(table.lines().next().unwrap().contains("player"));
    assert_eq!(table.lines().count(), 4);

    let out = ipdlab(&["tournament", "--config", cfg.to_str().unwrap(), "--out", run2.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        std::fs::read(run1.join("summary.json")).unwrap(),
        std::fs::read(run2.join("summary.json")).unwrap()
    );

    let out = ipdlab(&["tournament", "--config", cfg.to_str().unwrap(), "--out", run1.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--force"));
    let out = ipdlab(&[
        "tournament",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        run1.to_str().unwrap(),
        "--force",
        "--parallelism",
        "2",
    ]);
    assert_eq!(code(&out), 0);
}

#[test]
fn overrides_use_dotted_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = demo_tournament(tmp.path());
    let run = tmp.path().join("run");
    let out = ipdlab(&[
        "tournament",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--set",
        "horizon.rounds=10",
        "--set",
        "seeds_per_pairing=2",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let records = std::fs::read_to_string(run.join("records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 6);
    let first: Value = serde_json::from_str(records.lines().next().unwrap()).unwrap();
    assert_eq!(first["rounds"].as_array().unwrap().len(), 10);

    for bad in ["bogus=1", "horizon.nope.x=1", "horizon.rounds_typo=3"] {
        let out = ipdlab(&[
            "tournament",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            tmp.path().join("x").to_str().unwrap(),
            "--set",
            bad,
        ]);
        assert_eq!(code(&out), 2, "{bad}: {}", stderr(&out));
    }
}

#[test]
fn bad_payoff_ordering_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_json(
        tmp.path(),
        "bad.json",
        json!({"players": [{"name": "grim"}, {"name": "tit_for_tat"}],
               "matrix": {"H": 3, "R": 5, "P": 1, "L": 0}}),
    );
    let out = ipdlab(&["tournament", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("r").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("ordering violation") && err.contains('>'), "{err}");
    assert!(!tmp.path().join("r").exists());
}

#[test]
fn switch_battery_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_json(tmp.path(), "tft.json", json!({"subject": {"name": "tit_for_tat"}, "seeds": 2}));
    let out = ipdlab(&["switch", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("a").to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = stdout(&out);
    assert!(table.contains("Adaptation Speed") && table.contains("Coop. Rate (%)") && table.contains("Payoff"));
    // subject line, header, four conditions
    assert_eq!(table.lines().count(), 6, "{table}");

    let cfg = write_json(tmp.path(), "alld.json", json!({"subject": {"name": "always_defect"}, "seeds": 2}));
    let out = ipdlab(&["switch", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("b").to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let table = stdout(&out);
    let row = table.lines().find(|l| l.starts_with("coop_to_defect")).unwrap();
    assert_eq!(row.split_whitespace().nth(1), Some("1"), "{row}");
}

#[test]
fn switch_skips_missing_strategies() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_json(
        tmp.path(),
        "skip.json",
        json!({"subject": {"name": "tit_for_tat"}, "seeds": 1, "conditions": [
            {"label": "coop_to_defect", "pre": {"name": "always_cooperate"}, "post": {"name": "always_defect"}},
            {"label": "coop_to_downing", "pre": {"name": "always_cooperate"}, "post": {"name": "first_by_downing"}}
        ]}),
    );
    let out = ipdlab(&["switch", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("s").to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("coop_to_downing"));
    assert!(!stdout(&out).contains("coop_to_downing"));
}

#[test]
fn metrics_recompute_from_records() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = demo_tournament(tmp.path());
    let run = tmp.path().join("run");
    assert_eq!(code(&ipdlab(&["tournament", "--config", cfg.to_str().unwrap(), "--out", run.to_str().unwrap()])), 0);

    let out = ipdlab(&["metrics", run.join("records.jsonl").to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = stdout(&out);
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let tft: Vec<&str> = csv.lines().find(|l| l.starts_with("tit_for_tat,")).unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    assert_eq!(tft[col("forgiveness")], "0.0");
    assert_eq!(tft[col("retaliation")], "100.0");

    let summary: Value = serde_json::from_str(&std::fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    let embedded: MetricReport = serde_json::from_value(summary["metrics"].clone()).unwrap();
    assert_eq!(csv, embedded.to_table_csv());

    let csv_path = tmp.path().join("m.csv");
    assert_eq!(code(&ipdlab(&["metrics", run.to_str().unwrap(), "--out", csv_path.to_str().unwrap()])), 0);
    assert_eq!(std::fs::read_to_string(&csv_path).unwrap(), csv);
    assert_eq!(code(&ipdlab(&["metrics", run.to_str().unwrap(), "--out", csv_path.to_str().unwrap()])), 2);

    let empty = tmp.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(code(&ipdlab(&["metrics", empty.to_str().unwrap()])), 4);
    assert_eq!(code(&ipdlab(&["metrics", tmp.path().join("missing.jsonl").to_str().unwrap()])), 4);
}

#[test]
fn agent_failures_exit_3_with_results_written() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_json(
        tmp.path(),
        "agents.json",
        json!({"players": [
            {"name": "tit_for_tat"},
            {"name": "external_agent", "params": {"endpoint": {
                "kind": "subprocess", "address": "python3 -c \"import sys; sys.exit(1)\"", "max_retries": 0}}}
        ], "seeds_per_pairing": 2}),
    );
    let run = tmp.path().join("run");
    let out = ipdlab(&["tournament", "--config", cfg.to_str().unwrap(), "--out", run.to_str().unwrap()]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(run.join("summary.json").is_file());
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["failures"].as_array().unwrap().len(), 2);
}

#[test]
fn agent_check_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = write_json(tmp.path(), "ok.json", json!({"kind": "subprocess", "address": tft_agent()}));
    let out = ipdlab(&["agent-check", "--config", ok.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("action: C"));
    assert!(stdout(&out).contains("latency_ms:"));

    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    drop(listener);
    let down = write_json(
        tmp.path(),
        "down.json",
        json!({"kind": "chat_http", "address": addr, "model_name": "m", "max_retries": 0, "timeout_ms": 1000}),
    );
    assert_eq!(code(&ipdlab(&["agent-check", "--config", down.to_str().unwrap()])), 5);

    let garbage = write_json(
        tmp.path(),
        "garbage.json",
        json!({"kind": "subprocess", "address": "python3 -c \"print('zzz-garbage', flush=True)\"", "max_retries": 0}),
    );
    let out = ipdlab(&["agent-check", "--config", garbage.to_str().unwrap()]);
    assert_eq!(code(&out), 5);
    assert!(stderr(&out).contains("zzz-garbage"), "{}", stderr(&out));
}

#[test]
fn plot_exports_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = demo_tournament(tmp.path());
    let run = tmp.path().join("run");
    assert_eq!(code(&ipdlab(&["tournament", "--config", cfg.to_str().unwrap(), "--out", run.to_str().unwrap()])), 0);
    let out = ipdlab(&["plot", run.to_str().unwrap(), "--kind", "rankings"]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).lines().count(), 4);
    let out = ipdlab(&["plot", run.to_str().unwrap(), "--kind", "win_series", "--subject", "tit_for_tat"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).starts_with("opponent,round,cum_wins,cum_diff"));
    assert_eq!(code(&ipdlab(&["plot", run.to_str().unwrap(), "--kind", "nope"])), 2);
    assert_eq!(code(&ipdlab(&["plot", run.to_str().unwrap(), "--kind", "recovery"])), 2);
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start_server(state: &Path) -> (Server, String) {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let child = Command::new(env!("CARGO_BIN_EXE_ipdlab"))
        .args(["serve", "--bind", &addr, "--state-dir", state.to_str().unwrap()])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let server = Server(child);
    let deadline = Instant::now() + Duration::from_secs(10);
    while TcpStream::connect(&addr).is_err() {
        assert!(Instant::now() < deadline, "server did not start");
        std::thread::sleep(Duration::from_millis(50));
    }
    (server, addr)
}

fn http(addr: &str, method: &str, path: &str, body: Option<&Value>) -> (u16, String) {
    let mut stream = TcpStream::connect(addr).unwrap();
    let body = body.map(Value::to_string).unwrap_or_default();
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut resp = String::new();
    stream.read_to_string(&mut resp).unwrap();
    let status = resp[9..12].parse().unwrap();
    let body = resp.split_once("\r\n\r\n").map(|(_, b)| b.to_string()).unwrap_or_default();
    (status, body)
}

#[test]
fn serve_health_index_and_restart() {
    let tmp = tempfile::tempdir().unwrap();
    let state = tmp.path().join("state");
    let (server, addr) = start_server(&state);
    assert_eq!(http(&addr, "GET", "/healthz", None).0, 200);
    let (status, index) = http(&addr, "GET", "/", None);
    assert_eq!(status, 200);
    assert!(index.contains("<html"));

    let (status, body) = http(&addr, "POST", "/sessions", Some(&json!({"opponent": {"name": "tit_for_tat"}})));
    assert_eq!(status, 201, "{body}");
    let id = serde_json::from_str::<Value>(&body).unwrap()["id"].as_str().unwrap().to_string();
    let (status, _) = http(&addr, "POST", &format!("/sessions/{id}/moves"), Some(&json!({"round": 1, "action": "D"})));
    assert_eq!(status, 200);
    drop(server);

    let (_server, addr) = start_server(&state);
    let (status, body) = http(&addr, "GET", &format!("/sessions/{id}"), None);
    assert_eq!(status, 200);
    let view: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(view["round"], 2);
    let (status, body) = http(&addr, "POST", &format!("/sessions/{id}/moves"), Some(&json!({"round": 2, "action": "C"})));
    assert_eq!(status, 200);
    let resp: Value = serde_json::from_str(&body).unwrap();
    // tit-for-tat answers the round-1 defection
    assert_eq!(resp["outcome"]["action_b"], "D");
}
