mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use ipdlab::agent::{
    agent_check, parse_action, render_prompt, request_move, AgentEndpointConfig, ChatMessage, ParseError,
    PromptTemplate,
};
use ipdlab::game::{play_match, Action, Horizon, PayoffMatrix};
use ipdlab::strategy::{make_player, History, StrategySpec};
use serde_json::{json, Value};

struct Captured {
    headers: Vec<String>,
    body: Value,
}

/// Minimal HTTP/1.1 server answering each request with the next scripted
/// chat reply. `None` means: read the request, then never answer.
fn stub_server(replies: Vec<Option<String>>) -> (String, mpsc::Receiver<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut held = Vec::new();
        for reply in replies {
            let Ok((stream, _)) = listener.accept() else { return };
            let captured = read_request(&stream);
            let _ = tx.send(captured);
            match reply {
                Some(content) => respond(stream, &content),
                None => held.push(stream),
            }
        }
        thread::sleep(Duration::from_secs(5));
    });
    (addr, rx)
}

fn read_request(stream: &TcpStream) -> Captured {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut headers = Vec::new();
    let mut length = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let line = line.trim_end().to_string();
        if line.is_empty() {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            length = v.trim().parse().unwrap();
        }
        headers.push(line);
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    Captured {
        headers,
        body: serde_json::from_slice(&body).unwrap(),
    }
}

fn respond(mut stream: TcpStream, content: &str) {
    let body = json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string();
    write!(
        stream,
        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        body.len(),
        body
    )
    .unwrap();
}

fn chat_cfg(addr: &str) -> AgentEndpointConfig {
    let mut cfg = AgentEndpointConfig::chat(addr, "stub-model");
    cfg.timeout_ms = 2_000;
    cfg
}

fn sample_messages() -> Vec<ChatMessage> {
    let h = History::from_pairs([(Action::C, Action::D)]);
    render_prompt(&PromptTemplate::default(), &PayoffMatrix::axelrod(), &Horizon::fixed(10), &h).unwrap()
}

#[test]
fn forwards_messages_and_parses_reply() {
    let (addr, rx) = stub_server(vec![Some("I will defect.".into())]);
    let messages = sample_messages();
    let reply = request_move(&chat_cfg(&addr), &messages).unwrap();
    assert_eq!(reply.action, Action::D);
    assert_eq!(reply.retries, 0);
    let req = rx.recv().unwrap();
    assert_eq!(req.body["model"], "stub-model");
    assert_eq!(req.body["messages"], serde_json::to_value(&messages).unwrap());
    assert!(!req.headers.iter().any(|h| h.to_ascii_lowercase().starts_with("authorization")));
}

#[test]
fn retries_with_clarification() {
    let (addr, rx) = stub_server(vec![Some("hmm, tough call".into()), Some("cooperate".into())]);
    let messages = sample_messages();
    let reply = request_move(&chat_cfg(&addr), &messages).unwrap();
    assert_eq!(reply.action, Action::C);
    assert_eq!(reply.retries, 1);
    assert_eq!(reply.attempts, vec!["hmm, tough call".to_string(), "cooperate".to_string()]);
    let _first = rx.recv().unwrap();
    let second = rx.recv().unwrap();
    let sent = second.body["messages"].as_array().unwrap();
    assert_eq!(sent.len(), messages.len() + 2);
    assert_eq!(sent[messages.len()]["role"], "assistant");
    assert_eq!(sent[messages.len()]["content"], "hmm, tough call");
    assert_eq!(sent[messages.len() + 1]["role"], "user");
}

#[test]
fn gives_up_after_max_retries() {
    let (addr, _rx) = stub_server(vec![Some("no".into()), Some("maybe".into()), Some("pass".into())]);
    let err = request_move(&chat_cfg(&addr), &sample_messages()).unwrap_err();
    assert!(err.reason.contains("3 attempts"), "{}", err.reason);
}

#[test]
fn unresponsive_endpoint_times_out() {
    let (addr, _rx) = stub_server(vec![None]);
    let mut cfg = chat_cfg(&addr);
    cfg.timeout_ms = 300;
    cfg.max_retries = 0;
    let start = Instant::now();
    assert!(request_move(&cfg, &sample_messages()).is_err());
    assert!(start.elapsed() < Duration::from_secs(3));
}

#[test]
fn unreachable_endpoint_fails() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("http://{}/v1", listener.local_addr().unwrap());
    drop(listener);
    let mut cfg = chat_cfg(&addr);
    cfg.max_retries = 0;
    assert!(request_move(&cfg, &sample_messages()).is_err());
}

#[test]
fn secret_never_reaches_transcripts_or_records() {
    let secret = "sk-test-DO-NOT-LEAK-42";
    std::env::set_var("IPDLAB_TEST_KEY", secret);
    let (addr, rx) = stub_server(vec![Some("cooperate".into()); 3]);
    let mut cfg = chat_cfg(&addr);
    cfg.credentials = Some("IPDLAB_TEST_KEY".into());
    let spec = StrategySpec::named("external_agent").with_param("endpoint", serde_json::to_value(&cfg).unwrap());
    let mut agent = make_player(&spec).unwrap();
    let mut tft = make_player(&StrategySpec::named("tit_for_tat")).unwrap();
    let record = play_match(
        ("agent", &mut *agent),
        ("tft", &mut *tft),
        &PayoffMatrix::axelrod(),
        &Horizon::fixed(3),
        9,
    )
    .unwrap();
    assert_eq!(record.total_a.value(), 9.0);
    let auth = rx.recv().unwrap().headers;
    assert!(auth.iter().any(|h| h == &format!("authorization: Bearer {secret}") || h == &format!("Authorization: Bearer {secret}")));
    let transcript = agent.take_transcript().unwrap();
    assert_eq!(transcript.entries.len(), 3);
    let dumped = format!(
        "{}{}{}",
        serde_json::to_string(&transcript).unwrap(),
        serde_json::to_string(&record).unwrap(),
        serde_json::to_string(&spec).unwrap()
    );
    assert!(!dumped.contains(secret));
    assert_eq!(record.metadata.get("a.prompt_template").map(String::as_str), Some("default"));
}

#[test]
fn missing_credential_is_an_agent_failure() {
    let mut cfg = chat_cfg("http://127.0.0.1:9/v1");
    cfg.credentials = Some("IPDLAB_SURELY_UNSET_VAR".into());
    cfg.max_retries = 0;
    let err = request_move(&cfg, &sample_messages()).unwrap_err();
    assert!(err.reason.contains("IPDLAB_SURELY_UNSET_VAR"));
}

#[test]
fn credentials_must_name_a_variable() {
    let mut cfg = chat_cfg("http://127.0.0.1:9/v1");
    cfg.credentials = Some("sk-abc123".into());
    assert!(cfg.validate().is_err());
}

#[test]
fn agent_check_against_stub() {
    let (addr, _rx) = stub_server(vec![Some(r#"{"action": "C"}"#.into())]);
    let (reply, messages) = agent_check(&chat_cfg(&addr)).unwrap();
    assert_eq!(reply.action, Action::C);
    assert!(messages.len() >= 2);
}

#[test]
fn subprocess_agent_check() {
    let cfg = AgentEndpointConfig::subprocess(common::tft_agent_command());
    let (reply, _) = agent_check(&cfg).unwrap();
    // synthetic history ends with the opponent cooperating
    assert_eq!(reply.action, Action::C);
}

#[test]
fn broken_subprocess_fails_the_match() {
    let mut cfg = AgentEndpointConfig::subprocess("python3 -c \"print('not json', flush=True)\"");
    cfg.max_retries = 1;
    let spec = StrategySpec::named("external_agent").with_param("endpoint", serde_json::to_value(&cfg).unwrap());
    let mut agent = make_player(&spec).unwrap();
    let mut tft = make_player(&StrategySpec::named("tit_for_tat")).unwrap();
    let err = play_match(
        ("agent", &mut *agent),
        ("tft", &mut *tft),
        &PayoffMatrix::axelrod(),
        &Horizon::fixed(5),
        0,
    )
    .unwrap_err();
    match err {
        ipdlab::game::MatchError::AgentFailure { player_id, round, partial, .. } => {
            assert_eq!(player_id, "agent");
            assert_eq!(round, 1);
            assert!(partial.rounds.is_empty());
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn parse_corpus() {
    use Action::{C, D};
    let ok: [(&str, Action); 40] = [
        ("cooperate", C),
        ("defect", D),
        ("Cooperate", C),
        ("DEFECT", D),
        ("C", C),
        ("d", D),
        ("I choose to cooperate.", C),
        ("I will defect this round.", D),
        ("My answer: cooperate", C),
        ("Answer: D", D),
        ("cooperate!", C),
        ("**defect**", D),
        ("`cooperate`", C),
        ("\"defect\"", D),
        ("(cooperate)", C),
        ("I considered defect, but I will cooperate", C),
        ("I considered cooperate, but I will defect", D),
        ("cooperate\n\nfinal answer: defect", D),
        ("defect\ncooperate", C),
        ("Round 4: cooperate", C),
        ("I'll cooperate again.", C),
        ("Let's defect.", D),
        ("action=defect", D),
        ("choice:cooperate", C),
        ("They defected, so I defect.", D),
        ("Cooperation has paid off; cooperate.", C),
        ("C.", C),
        ("D!", D),
        ("   cooperate   ", C),
        ("\tdefect\n", D),
        (r#"{"action": "cooperate"}"#, C),
        (r#"{"action": "D"}"#, D),
        (r#"{"action":"defect","reason":"they defected"}"#, D),
        (r#"Sure: {"action": "C"}"#, C),
        (r#"I would defect. {"action": "cooperate"}"#, C),
        (r#"{"reason": "I cooperate", "action": "defect"}"#, D),
        ("The answer is C", C),
        ("Plan A is to defect", D),
        ("cooperate cooperate defect", D),
        ("defect, then cooperate", C),
    ];
    for (text, want) in ok {
        assert_eq!(parse_action(text), Ok(want), "{text:?}");
    }
    let bad = [
        "",
        "   ",
        "I'm not sure.",
        "cooperation",
        "defection",
        "cooperating",
        "defected",
        "uncooperative",
        "ABCDEF",
        r#"{"action": "maybe"}"#,
    ];
    for text in bad {
        assert_eq!(parse_action(text), Err(ParseError::UnparseableResponse), "{text:?}");
    }
}
