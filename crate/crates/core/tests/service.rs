//! Wire protocol, stdio golden transcript and TCP front end.

mod common;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::Duration;

use proptest::prelude::*;
use serde_json::{json, Value};

use triage::corpus::{profile_presets, Catalog};
use triage::service::{serve_stream, Envelope, ErrorCode, Server, Service, ServiceConfig};
use triage::tabular::TabularRecord;

use common::{manifest_dir, read, stub_engine, trained};

fn stub_service() -> Service {
    Service::new(stub_engine(), ServiceConfig { deterministic: true, ..ServiceConfig::default() })
}

fn start(id: &str) -> Envelope {
    Envelope::SessionStart { session_id: id.into(), profile: Value::Null, identity: BTreeMap::new() }
}

fn say(id: &str, text: &str) -> Envelope {
    Envelope::UserMessage { session_id: id.into(), text: text.into() }
}

fn kind(env: &Envelope) -> String {
    serde_json::to_value(env).unwrap()["type"].as_str().unwrap().to_owned()
}

fn run_stdio(input: &str) -> String {
    let mut child = Command::new(env!("CARGO_BIN_EXE_triage"))
        .args(["serve", "--stdio", "--deterministic", "--models"])
        .arg(&trained().models)
        .env_remove("TRIAGE_CONFIG_DIR")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn golden_transcript() {
    let dir = manifest_dir().join("tests/golden");
    let input = read(&dir.join("session.in.jsonl"));
    let actual = run_stdio(&input);
    let expected_path = dir.join("session.out.jsonl");
    if common::blessing() {
        std::fs::write(&expected_path, &actual).unwrap();
    }
    assert_eq!(actual, read(&expected_path), "rerun with TRIAGE_BLESS=1 after intended changes");

    let out: Vec<Envelope> = actual.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let s1: Vec<String> = out.iter().filter(|e| e.session_id() == Some("s1")).map(kind).collect();
    assert_eq!(s1[0], "bot_message");
    assert!(matches!(&out[0], Envelope::BotMessage { template, .. } if template == "greeting"));
    assert!(out.iter().any(|e| matches!(e, Envelope::BotMessage { template, session_id, .. }
        if template == "ask_context" && session_id == "s1")));
    for id in ["s1", "s2"] {
        let routed = out.iter().filter(|e| e.session_id() == Some(id) && kind(e) == "routing_decision").count();
        assert_eq!(routed, 1, "{id}");
        let last = out.iter().rev().find(|e| e.session_id() == Some(id) && kind(e) != "error");
        assert!(matches!(last, Some(Envelope::SessionEnd { reason: Some(r), .. }) if r == "completed"));
    }
    // s2 never gives usable context and ends with a person
    let s2 = out.iter().find_map(|e| match e {
        Envelope::RoutingDecision { session_id, auto_routed, rule_id, .. } if session_id == "s2" => {
            Some((*auto_routed, rule_id.clone()))
        }
        _ => None,
    });
    assert_eq!(s2, Some((false, Some("context_exhausted".into()))));
    assert!(out.iter().any(|e| matches!(e, Envelope::Error { code: ErrorCode::BadEnvelope, session_id: None, .. })));
    // a message after completion belongs to no session
    assert!(matches!(out.last(), Some(Envelope::Error { code: ErrorCode::UnknownSession, .. })));
}

#[test]
fn stdio_replay_is_stable() {
    let input = read(&manifest_dir().join("tests/golden/session.in.jsonl"));
    assert_eq!(run_stdio(&input), run_stdio(&input));
}

#[test]
fn vague_opening_asks_for_context() {
    let service = stub_service();
    let mut conn = service.connection();
    conn.handle(start("a"));
    let out = conn.handle(say("a", "oi"));
    assert_eq!(out.len(), 1);
    assert!(matches!(&out[0], Envelope::BotMessage { template, .. } if template == "ask_context"));
    assert_eq!(conn.open_sessions(), 1);
}

#[test]
fn session_errors() {
    let service = stub_service();
    let mut conn = service.connection();
    let code = |out: Vec<Envelope>| match out.as_slice() {
        [Envelope::Error { code, .. }] => Some(*code),
        _ => None,
    };
    assert_eq!(code(conn.handle(say("x", "hello there friend"))), Some(ErrorCode::UnknownSession));
    conn.handle(start("x"));
    assert_eq!(code(conn.handle(start("x"))), Some(ErrorCode::DuplicateSession));
    assert_eq!(code(conn.handle_line(b"{\"type\":\"bot_message\"}")), Some(ErrorCode::BadEnvelope));
    assert_eq!(code(conn.handle_line(&[0xff, 0xfe])), Some(ErrorCode::BadEnvelope));
    assert!(conn.handle_line(b"   ").is_empty());
    let closed = conn.handle(Envelope::SessionEnd { session_id: "x".into(), reason: None });
    assert!(matches!(&closed[..], [Envelope::SessionEnd { reason: Some(r), .. }] if r == "closed"));
    assert_eq!(conn.open_sessions(), 0);

    let small = Service::new(stub_engine(), ServiceConfig { max_sessions: 1, ..ServiceConfig::default() });
    let mut conn = small.connection();
    conn.handle(start("a"));
    assert_eq!(code(conn.handle(start("b"))), Some(ErrorCode::SessionLimit));
}

#[test]
fn oversized_lines_are_rejected_and_the_stream_continues() {
    let service = Service::new(stub_engine(), ServiceConfig { max_line_bytes: 64, ..ServiceConfig::default() });
    let mut input = "x".repeat(500);
    input.push('\n');
    input.push_str(&start("s").to_line());
    input.push('\n');
    let mut out = Vec::new();
    serve_stream(&service, input.as_bytes(), &mut out, &Default::default()).unwrap();
    let lines: Vec<Envelope> =
        String::from_utf8(out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(matches!(&lines[0], Envelope::Error { code: ErrorCode::LineTooLong, .. }));
    assert!(matches!(&lines[1], Envelope::BotMessage { template, .. } if template == "greeting"));
}

#[test]
fn protocol_schema_covers_the_wire_format() {
    let schema: Value = serde_json::from_str(&read(&manifest_dir().join("config/protocol.schema.json"))).unwrap();
    let defs = schema["$defs"].as_object().unwrap();
    let samples = [
        start("s"),
        say("s", "oi"),
        Envelope::BotMessage { session_id: "s".into(), at: 1, template: "greeting".into(), text: "oi".into() },
        Envelope::RoutingDecision {
            session_id: "s".into(),
            at: 2,
            department: "tenants".into(),
            department_name: "Inquilinos".into(),
            predicted_department: "tenants".into(),
            auto_routed: true,
            max_score: 0.9,
            threshold: Some(0.5),
            top_reasons: Vec::new(),
            rule_id: Some("r".into()),
        },
        Envelope::Error { session_id: None, code: ErrorCode::EngineError, message: "m".into() },
        Envelope::SessionEnd { session_id: "s".into(), reason: Some("completed".into()) },
    ];
    for env in &samples {
        let v = serde_json::to_value(env).unwrap();
        let t = v["type"].as_str().unwrap();
        let def = &defs[t];
        assert_eq!(def["properties"]["type"]["const"], t);
        for field in def["required"].as_array().unwrap() {
            assert!(v.get(field.as_str().unwrap()).is_some(), "{t} lacks {field}");
        }
        for key in v.as_object().unwrap().keys() {
            assert!(def["properties"].get(key).is_some(), "{t}.{key} not in schema");
        }
    }
    let codes: Vec<Value> =
        ["bad_envelope", "line_too_long", "unknown_session", "duplicate_session", "session_limit", "engine_error"]
            .iter()
            .map(|c| {
                let code: ErrorCode = serde_json::from_value(json!(c)).unwrap();
                serde_json::to_value(code).unwrap()
            })
            .collect();
    assert_eq!(defs["error"]["properties"]["code"]["enum"].as_array().unwrap(), &codes);
}

#[test]
fn profile_presets_are_valid_session_profiles() {
    let on_disk: Value = serde_json::from_str(&read(&manifest_dir().join("config/profiles.json"))).unwrap();
    assert_eq!(on_disk, serde_json::to_value(profile_presets()).unwrap());
    let schema = Catalog::builtin().schema();
    let service = stub_service();
    let mut conn = service.connection();
    for (i, preset) in profile_presets().iter().enumerate() {
        let record = TabularRecord::from_json(&preset.profile).unwrap();
        schema.validate(&record, i).unwrap();
        let line = json!({"type": "session_start", "session_id": preset.id, "profile": preset.profile}).to_string();
        let out = conn.handle_line(line.as_bytes());
        assert!(matches!(&out[..], [Envelope::BotMessage { .. }]), "{}", preset.id);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn arbitrary_lines_never_break_the_connection(lines in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..80), 1..20)) {
        let service = stub_service();
        let mut conn = service.connection();
        for line in &lines {
            for env in conn.handle_line(line) {
                let text = env.to_line();
                prop_assert!(!text.contains('\n'));
                prop_assert_eq!(serde_json::from_str::<Envelope>(&text).unwrap(), env);
            }
        }
        // still usable afterwards
        let out = conn.handle(start("after-fuzz"));
        prop_assert!(matches!(&out[..], [Envelope::BotMessage { .. }]), "{:?}", out);
    }

    #[test]
    fn every_message_is_answered_and_routed_once(
        messages in prop::collection::vec(
            prop::sample::select(vec!["oi", "ok", "ajuda aqui", "meu boleto veio errado", "não consigo agendar a visita", "Ana"]),
            1..12,
        ),
    ) {
        let service = stub_service();
        let mut conn = service.connection();
        let mut routed = 0;
        let mut ended = false;
        conn.handle(start("p"));
        for text in messages {
            let out = conn.handle(say("p", text));
            if ended {
                prop_assert!(matches!(&out[..], [Envelope::Error { code: ErrorCode::UnknownSession, .. }]), "{:?}", out);
                continue;
            }
            prop_assert!(!out.is_empty());
            prop_assert!(out.iter().all(|e| e.session_id() == Some("p")));
            routed += out.iter().filter(|e| matches!(e, Envelope::RoutingDecision { .. })).count();
            ended = matches!(out.last(), Some(Envelope::SessionEnd { .. }));
            let ats: Vec<u64> = out.iter().filter_map(|e| match e {
                Envelope::BotMessage { at, .. } | Envelope::RoutingDecision { at, .. } => Some(*at),
                _ => None,
            }).collect();
            prop_assert!(ats.windows(2).all(|w| w[0] == w[1]));
        }
        prop_assert!(routed <= 1);
        prop_assert_eq!(routed == 1, ended);
    }
}

fn client(address: std::net::SocketAddr) -> (TcpStream, BufReader<TcpStream>) {
    let stream = TcpStream::connect(address).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    let reader = BufReader::new(stream.try_clone().unwrap());
    (stream, reader)
}

fn exchange(
    stream: &mut TcpStream,
    reader: &mut BufReader<TcpStream>,
    env: &Envelope,
    replies: usize,
) -> Vec<Envelope> {
    writeln!(stream, "{}", env.to_line()).unwrap();
    (0..replies)
        .map(|_| {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            serde_json::from_str(&line).unwrap()
        })
        .collect()
}

#[test]
fn concurrent_tcp_sessions() {
    let server = Server::bind(Arc::new(stub_service()), "127.0.0.1:0").unwrap();
    let address = server.address();
    let handles: Vec<_> = (0..8)
        .map(|i| {
            std::thread::spawn(move || {
                let (mut s, mut r) = client(address);
                // the same id on every connection: sessions are per connection
                let id = "shared";
                exchange(&mut s, &mut r, &start(id), 1);
                let out = exchange(&mut s, &mut r, &say(id, &format!("preciso de ajuda com o boleto {i}")), 1);
                assert!(matches!(&out[0], Envelope::BotMessage { template, .. } if template == "ask_customer_name"));
                let out = exchange(&mut s, &mut r, &say(id, "Ana"), 3);
                assert!(matches!(&out[1], Envelope::RoutingDecision { department, .. } if department == "tenants"));
                assert!(matches!(&out[2], Envelope::SessionEnd { .. }));
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    server.shutdown();
}

#[test]
fn shutdown_closes_idle_connections() {
    let server = Server::bind(Arc::new(stub_service()), "127.0.0.1:0").unwrap();
    let (mut s, mut r) = client(server.address());
    exchange(&mut s, &mut r, &start("idle"), 1);
    let started = std::time::Instant::now();
    server.shutdown();
    assert!(started.elapsed() < Duration::from_secs(5));
    let mut rest = String::new();
    assert_eq!(r.read_line(&mut rest).unwrap(), 0);
}
