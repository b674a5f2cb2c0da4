//! Line-delimited JSON chat service.
//!
//! Each line is one envelope tagged by `type`. Clients send
//! `session_start`, `user_message` and `session_end`; the service answers
//! with `bot_message`, `routing_decision`, `error` and `session_end`.
//! Unknown fields are ignored. A malformed line yields an `error`
//! envelope and the connection keeps going.
//!
//! ```text
//! > {"type":"session_start","session_id":"s1","profile":{"last_auto_msg_type":"boleto_disponivel"}}
//! < {"type":"bot_message","session_id":"s1","at":0,"template":"greeting","text":"Olá! ..."}
//! > {"type":"user_message","session_id":"s1","text":"oi"}
//! < {"type":"bot_message","session_id":"s1","at":1,"template":"ask_context","text":"..."}
//! ```

use std::collections::{BTreeMap, HashMap};
use std::io::{self, BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dialog::{Action, DialogMemory, Engine, Event, InboundEvent};
use crate::pipeline::ROUTING_DIRECTIVE;
use crate::routing::ReasonScore;

pub const DEFAULT_BIND: &str = "127.0.0.1:7878";
pub const BIND_ENV: &str = "TRIAGE_BIND";
pub const MODEL_DIR_ENV: &str = "TRIAGE_MODEL_DIR";
pub const CONFIG_DIR_ENV: &str = "TRIAGE_CONFIG_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Not valid UTF-8 JSON, or not an inbound envelope.
    BadEnvelope,
    LineTooLong,
    UnknownSession,
    DuplicateSession,
    SessionLimit,
    /// The dialog engine rejected the event; the session is unchanged.
    EngineError,
}

/// One line of the wire protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Envelope {
    SessionStart {
        session_id: String,
        #[serde(default)]
        profile: Value,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        identity: BTreeMap<String, Value>,
    },
    UserMessage {
        session_id: String,
        text: String,
    },
    BotMessage {
        session_id: String,
        at: u64,
        template: String,
        text: String,
    },
    RoutingDecision {
        session_id: String,
        at: u64,
        department: String,
        department_name: String,
        predicted_department: String,
        auto_routed: bool,
        max_score: f64,
        /// Absent when the policy routes everything.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        threshold: Option<f64>,
        top_reasons: Vec<ReasonScore>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rule_id: Option<String>,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        session_id: Option<String>,
        code: ErrorCode,
        message: String,
    },
    SessionEnd {
        session_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
}

impl Envelope {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("envelopes serialize")
    }

    pub fn session_id(&self) -> Option<&str> {
        match self {
            Envelope::SessionStart { session_id, .. }
            | Envelope::UserMessage { session_id, .. }
            | Envelope::BotMessage { session_id, .. }
            | Envelope::RoutingDecision { session_id, .. }
            | Envelope::SessionEnd { session_id, .. } => Some(session_id),
            Envelope::Error { session_id, .. } => session_id.as_deref(),
        }
    }

    fn error(session_id: Option<&str>, code: ErrorCode, message: impl Into<String>) -> Self {
        Envelope::Error { session_id: session_id.map(str::to_owned), code, message: message.into() }
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Converts a `routing_decision` directive payload into its envelope.
fn routing_envelope(session_id: &str, at: u64, payload: &Value) -> Option<Envelope> {
    let s = |k: &str| payload.get(k).and_then(Value::as_str).map(str::to_owned);
    let top_reasons = payload
        .get("top_reasons")
        .and_then(|v| serde_json::from_value::<Vec<ReasonScore>>(v.clone()).ok())?
        .into_iter()
        .map(|r| ReasonScore { reason: r.reason, probability: round6(r.probability) })
        .collect();
    Some(Envelope::RoutingDecision {
        session_id: session_id.to_owned(),
        at,
        department: s("department")?,
        department_name: s("department_name").unwrap_or_default(),
        predicted_department: s("predicted_department").unwrap_or_default(),
        auto_routed: payload.get("auto_routed")?.as_bool()?,
        max_score: round6(payload.get("max_score")?.as_f64()?),
        threshold: payload.get("threshold").and_then(Value::as_f64).filter(|t| t.is_finite()).map(round6),
        top_reasons,
        rule_id: s("rule_id"),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServiceConfig {
    /// Pins template variants (engine seed 0) and uses per-session logical
    /// timestamps instead of the wall clock.
    pub deterministic: bool,
    pub seed: u64,
    pub max_line_bytes: usize,
    pub max_sessions: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { deterministic: false, seed: 0, max_line_bytes: 64 * 1024, max_sessions: 1024 }
    }
}

/// A dialog engine plus wire settings; share one across connections.
#[derive(Clone, Debug)]
pub struct Service {
    engine: Engine,
    config: ServiceConfig,
}

impl Service {
    pub fn new(engine: Engine, config: ServiceConfig) -> Self {
        let engine = if config.deterministic { engine.with_seed(0) } else { engine.with_seed(config.seed) };
        Service { engine, config }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn connection(&self) -> Connection<'_> {
        Connection { service: self, sessions: HashMap::new() }
    }
}

struct Session {
    memory: DialogMemory,
    clock: u64,
}

/// Sessions opened on one connection. Lines are handled in order.
pub struct Connection<'a> {
    service: &'a Service,
    sessions: HashMap<String, Session>,
}

fn wall_clock_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

impl Connection<'_> {
    pub fn open_sessions(&self) -> usize {
        self.sessions.len()
    }

    /// Handles one raw line (without the newline). Blank lines are
    /// ignored.
    pub fn handle_line(&mut self, line: &[u8]) -> Vec<Envelope> {
        let Ok(text) = std::str::from_utf8(line) else {
            return vec![Envelope::error(None, ErrorCode::BadEnvelope, "line is not valid UTF-8")];
        };
        if text.trim().is_empty() {
            return Vec::new();
        }
        match serde_json::from_str::<Envelope>(text) {
            Ok(env) => self.handle(env),
            Err(e) => vec![Envelope::error(None, ErrorCode::BadEnvelope, e.to_string())],
        }
    }

    pub fn handle(&mut self, envelope: Envelope) -> Vec<Envelope> {
        match envelope {
            Envelope::SessionStart { session_id, profile, identity } => self.start(session_id, profile, identity),
            Envelope::UserMessage { session_id, text } => {
                self.dispatch(&session_id, InboundEvent::UserMessage { text })
            }
            Envelope::SessionEnd { session_id, .. } => match self.sessions.remove(&session_id) {
                Some(_) => vec![Envelope::SessionEnd { session_id, reason: Some("closed".into()) }],
                None => vec![Envelope::error(Some(&session_id), ErrorCode::UnknownSession, "no such session")],
            },
            other => {
                let kind = serde_json::to_value(&other).ok().and_then(|v| v["type"].as_str().map(str::to_owned));
                vec![Envelope::error(
                    other.session_id(),
                    ErrorCode::BadEnvelope,
                    format!("{} is not an inbound envelope", kind.unwrap_or_default()),
                )]
            }
        }
    }

    fn start(&mut self, session_id: String, profile: Value, identity: BTreeMap<String, Value>) -> Vec<Envelope> {
        if session_id.is_empty() {
            return vec![Envelope::error(None, ErrorCode::BadEnvelope, "session_id is empty")];
        }
        if self.sessions.contains_key(&session_id) {
            return vec![Envelope::error(Some(&session_id), ErrorCode::DuplicateSession, "session already open")];
        }
        if self.sessions.len() >= self.service.config.max_sessions {
            return vec![Envelope::error(Some(&session_id), ErrorCode::SessionLimit, "too many open sessions")];
        }
        let memory = self.service.engine.new_session(&session_id);
        self.sessions.insert(session_id.clone(), Session { memory, clock: 0 });
        let out = self.dispatch(&session_id, InboundEvent::SessionStart { profile, identity });
        if out.iter().any(|e| matches!(e, Envelope::Error { .. })) {
            self.sessions.remove(&session_id);
        }
        out
    }

    fn dispatch(&mut self, session_id: &str, inbound: InboundEvent) -> Vec<Envelope> {
        let engine = &self.service.engine;
        let deterministic = self.service.config.deterministic;
        let Some(session) = self.sessions.get_mut(session_id) else {
            return vec![Envelope::error(Some(session_id), ErrorCode::UnknownSession, "no such session")];
        };
        let at = if deterministic { session.clock } else { wall_clock_ms().max(session.clock) };
        let event = Event { at, inbound };
        let step = match engine.process(&session.memory, &event) {
            Ok(step) => step,
            Err(e) => return vec![Envelope::error(Some(session_id), ErrorCode::EngineError, e.to_string())],
        };
        session.memory = step.memory;
        session.clock = at + 1;
        let mut out = Vec::with_capacity(step.actions.len() + 1);
        for action in step.actions {
            match action {
                Action::Message { template, text } => {
                    out.push(Envelope::BotMessage { session_id: session_id.to_owned(), at, template, text })
                }
                Action::Directive { kind, payload } if kind == ROUTING_DIRECTIVE => {
                    match routing_envelope(session_id, at, &payload) {
                        Some(env) => out.push(env),
                        None => log::error!("session {session_id}: malformed routing payload {payload}"),
                    }
                }
                Action::Directive { kind, .. } => log::debug!("session {session_id}: directive {kind} not forwarded"),
            }
        }
        if engine.is_finished(&session.memory) {
            self.sessions.remove(session_id);
            out.push(Envelope::SessionEnd { session_id: session_id.to_owned(), reason: Some("completed".into()) });
        }
        out
    }
}

enum Line {
    Complete(Vec<u8>),
    TooLong,
}

/// Splits a byte stream into newline-terminated lines of bounded length.
/// Survives read timeouts: partial input is kept between calls.
struct LineReader {
    buf: Vec<u8>,
    max: usize,
    discarding: bool,
}

impl LineReader {
    fn new(max: usize) -> Self {
        LineReader { buf: Vec::new(), max, discarding: false }
    }

    fn finish(&mut self) -> Line {
        let line = if self.discarding { Line::TooLong } else { Line::Complete(std::mem::take(&mut self.buf)) };
        self.buf.clear();
        self.discarding = false;
        line
    }

    fn next_line(&mut self, reader: &mut impl BufRead) -> io::Result<Option<Line>> {
        loop {
            let avail = match reader.fill_buf() {
                Ok(b) => b,
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e) => return Err(e),
            };
            if avail.is_empty() {
                return Ok((!self.buf.is_empty() || self.discarding).then(|| self.finish()));
            }
            let newline = avail.iter().position(|&b| b == b'\n');
            let chunk = &avail[..newline.unwrap_or(avail.len())];
            if !self.discarding {
                if self.buf.len() + chunk.len() > self.max {
                    self.discarding = true;
                    self.buf.clear();
                } else {
                    self.buf.extend_from_slice(chunk);
                }
            }
            let used = newline.map_or(avail.len(), |p| p + 1);
            reader.consume(used);
            if newline.is_some() {
                if self.buf.last() == Some(&b'\r') {
                    self.buf.pop();
                }
                return Ok(Some(self.finish()));
            }
        }
    }
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut)
}

/// Serves one connection until end of input, or until `shutdown` is set
/// and the line in progress has been answered.
pub fn serve_stream<R: BufRead, W: Write>(
    service: &Service,
    mut reader: R,
    mut writer: W,
    shutdown: &AtomicBool,
) -> io::Result<()> {
    let mut conn = service.connection();
    let mut lines = LineReader::new(service.config.max_line_bytes);
    while !shutdown.load(Ordering::SeqCst) {
        let line = match lines.next_line(&mut reader) {
            Ok(Some(line)) => line,
            Ok(None) => break,
            Err(e) if is_timeout(&e) => continue,
            Err(e) => return Err(e),
        };
        let out = match line {
            Line::Complete(bytes) => conn.handle_line(&bytes),
            Line::TooLong => vec![Envelope::error(
                None,
                ErrorCode::LineTooLong,
                format!("line exceeds {} bytes", service.config.max_line_bytes),
            )],
        };
        for env in out {
            writeln!(writer, "{}", env.to_line())?;
        }
        writer.flush()?;
    }
    Ok(())
}

/// Serves stdin/stdout until end of input.
pub fn serve_stdio(service: &Service) -> io::Result<()> {
    let stdin = io::stdin();
    let stdout = io::stdout();
    serve_stream(service, stdin.lock(), stdout.lock(), &AtomicBool::new(false))
}

/// TCP front end: one thread per connection, sessions scoped to their
/// connection.
pub struct Server {
    address: SocketAddr,
    shutdown: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

const POLL: Duration = Duration::from_millis(50);

impl Server {
    pub fn bind(service: Arc<Service>, bind: &str) -> io::Result<Server> {
        let listener = TcpListener::bind(bind)?;
        listener.set_nonblocking(true)?;
        let address = listener.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let flag = shutdown.clone();
        let acceptor = thread::spawn(move || accept_loop(&listener, &service, &flag));
        Ok(Server { address, shutdown, acceptor: Some(acceptor) })
    }

    pub fn address(&self) -> SocketAddr {
        self.address
    }

    /// A flag that stops the server when set, e.g. from a signal handler.
    pub fn shutdown_flag(&self) -> Arc<AtomicBool> {
        self.shutdown.clone()
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) {
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }

    /// Stops accepting, lets every connection finish the line it is
    /// processing, and joins all threads.
    pub fn shutdown(self) {
        self.shutdown.store(true, Ordering::SeqCst);
        self.wait();
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

fn accept_loop(listener: &TcpListener, service: &Arc<Service>, shutdown: &Arc<AtomicBool>) {
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let service = service.clone();
                let flag = shutdown.clone();
                workers.retain(|w| !w.is_finished());
                workers.push(thread::spawn(move || {
                    if let Err(e) = handle_client(stream, &service, &flag) {
                        log::warn!("{peer}: {e}");
                    }
                }));
            }
            Err(e) if is_timeout(&e) => thread::sleep(POLL),
            Err(e) => {
                log::error!("accept failed: {e}");
                thread::sleep(POLL);
            }
        }
    }
    for w in workers {
        let _ = w.join();
    }
}

fn handle_client(stream: TcpStream, service: &Service, shutdown: &AtomicBool) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(POLL))?;
    let reader = BufReader::new(stream.try_clone()?);
    serve_stream(service, reader, stream, shutdown)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_wire_format() {
        let e: Envelope =
            serde_json::from_str(r#"{"type":"user_message","session_id":"a","text":"oi","extra":1}"#).unwrap();
        assert_eq!(e, Envelope::UserMessage { session_id: "a".into(), text: "oi".into() });
        assert_eq!(e.to_line(), r#"{"type":"user_message","session_id":"a","text":"oi"}"#);
        let err = Envelope::error(None, ErrorCode::BadEnvelope, "x");
        assert_eq!(err.to_line(), r#"{"type":"error","code":"bad_envelope","message":"x"}"#);
    }

    #[test]
    fn line_reader_bounds_and_resumes() {
        let mut r = LineReader::new(4);
        let mut input: &[u8] = b"ab\r\ntoolong\ncd";
        let mut got = Vec::new();
        while let Some(l) = r.next_line(&mut input).unwrap() {
            got.push(match l {
                Line::Complete(b) => String::from_utf8(b).unwrap(),
                Line::TooLong => "<long>".into(),
            });
        }
        assert_eq!(got, ["ab", "<long>", "cd"]);
    }

    #[test]
    fn routing_payload_conversion() {
        let payload = serde_json::json!({
            "department": "human_triage", "department_name": "Triagem", "predicted_department": "owners",
            "auto_routed": false, "max_score": 0.123456789, "threshold": f64::NEG_INFINITY,
            "top_reasons": [{"reason": "a", "probability": 0.5}],
        });
        let Some(Envelope::RoutingDecision { max_score, threshold, .. }) = routing_envelope("s", 3, &payload) else {
            panic!()
        };
        assert_eq!(max_score, 0.123457);
        assert_eq!(threshold, None);
        assert!(routing_envelope("s", 3, &serde_json::json!({})).is_none());
    }
}
