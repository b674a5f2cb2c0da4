//! Text representations for the reason model.
//!
//! `bow` vectorizes in process; `file` looks vectors up by ticket id in a
//! precomputed table; `remote` asks an embedding service over TCP with
//! one JSON object per line: `{"id": …, "text": …}` → `{"vector": […]}`
//! (or `{"error": …}`).

use std::io::{BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::embedding::EmbeddingTable;
use super::ReasonError;
use crate::features::FeatureVector;
use crate::text::BowEncoder;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Bow,
    File,
    Remote,
}

impl std::str::FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bow" => Ok(ProviderKind::Bow),
            "file" => Ok(ProviderKind::File),
            "remote" => Ok(ProviderKind::Remote),
            other => Err(format!("unknown provider {other:?} (expected bow, file or remote)")),
        }
    }
}

/// Serializable description of a provider, stored with a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderSpec {
    Bow { encoder: BowEncoder },
    File { path: Option<PathBuf>, dimension: usize },
    Remote { config: RemoteConfig },
}

impl ProviderSpec {
    /// Rebuilds the runtime provider. File tables are read from disk.
    pub fn instantiate(&self) -> Result<Arc<dyn EmbeddingProvider>, ReasonError> {
        Ok(match self {
            ProviderSpec::Bow { encoder } => Arc::new(BowProvider { encoder: encoder.clone() }),
            ProviderSpec::File { path: Some(path), dimension } => {
                let p = FileProvider::open(path.clone())?;
                if p.dimension() != *dimension {
                    return Err(ReasonError::DimensionMismatch { expected: *dimension, found: p.dimension() });
                }
                Arc::new(p)
            }
            ProviderSpec::File { path: None, .. } => {
                return Err(ReasonError::ProviderUnavailable("embedding table was in memory only".into()))
            }
            ProviderSpec::Remote { config } => Arc::new(RemoteProvider::new(config.clone())),
        })
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn spec(&self) -> ProviderSpec;
    fn kind(&self) -> ProviderKind;
    fn dimension(&self) -> usize;
    /// Representation of one message. `id` identifies the ticket for
    /// providers that look vectors up.
    fn embed(&self, id: Option<&str>, text: &str) -> Result<FeatureVector, ReasonError>;
}

/// In-process bag-of-words; truncation is part of the encoder.
#[derive(Clone, Debug)]
pub struct BowProvider {
    pub encoder: BowEncoder,
}

impl EmbeddingProvider for BowProvider {
    fn spec(&self) -> ProviderSpec {
        ProviderSpec::Bow { encoder: self.encoder.clone() }
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::Bow
    }

    fn dimension(&self) -> usize {
        self.encoder.dimension()
    }

    fn embed(&self, _id: Option<&str>, text: &str) -> Result<FeatureVector, ReasonError> {
        Ok(self.encoder.encode(text))
    }
}

#[derive(Clone, Debug)]
pub struct FileProvider {
    pub table: Arc<EmbeddingTable>,
    /// Where the table came from, if it was read from disk.
    pub path: Option<PathBuf>,
}

impl FileProvider {
    pub fn open(path: PathBuf) -> Result<Self, ReasonError> {
        let table = EmbeddingTable::load(&path)?;
        Ok(FileProvider { table: Arc::new(table), path: Some(path) })
    }

    pub fn in_memory(table: EmbeddingTable) -> Self {
        FileProvider { table: Arc::new(table), path: None }
    }
}

fn dense(v: &[f32]) -> FeatureVector {
    FeatureVector::from_dense(&v.iter().map(|&x| f64::from(x)).collect::<Vec<_>>())
}

impl EmbeddingProvider for FileProvider {
    fn spec(&self) -> ProviderSpec {
        ProviderSpec::File { path: self.path.clone(), dimension: self.table.dimension() }
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::File
    }

    fn dimension(&self) -> usize {
        self.table.dimension()
    }

    fn embed(&self, id: Option<&str>, _text: &str) -> Result<FeatureVector, ReasonError> {
        let id = id.ok_or_else(|| ReasonError::MissingEmbedding("<no id>".into()))?;
        self.table.get(id).map(dense).ok_or_else(|| ReasonError::MissingEmbedding(id.to_owned()))
    }
}

/// Keeps the first `limit` whitespace-separated words.
pub fn truncate_words(text: &str, limit: usize) -> String {
    text.split_whitespace().take(limit).collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub address: String,
    pub timeout_ms: u64,
    pub dimension: usize,
    /// Words forwarded to the service.
    pub truncation: usize,
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<&'a str>,
    text: &'a str,
}

#[derive(Deserialize)]
struct RemoteResponse {
    #[serde(default)]
    vector: Option<Vec<f64>>,
    #[serde(default)]
    error: Option<String>,
}

/// Client for an embedding service. Each call opens its own connection,
/// so concurrent requests never share state; every request is bounded by
/// `timeout_ms` end to end.
#[derive(Clone, Debug)]
pub struct RemoteProvider {
    pub config: RemoteConfig,
}

impl RemoteProvider {
    pub fn new(config: RemoteConfig) -> Self {
        RemoteProvider { config }
    }

    fn request(&self, id: Option<&str>, text: &str) -> Result<Vec<f64>, ReasonError> {
        let timeout = Duration::from_millis(self.config.timeout_ms);
        let deadline = Instant::now() + timeout;
        let left = || deadline.checked_duration_since(Instant::now()).filter(|d| !d.is_zero());
        let timed_out = || ReasonError::RemoteTimeout(self.config.timeout_ms);
        let io = |e: std::io::Error| match e.kind() {
            std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut => timed_out(),
            _ => ReasonError::Remote(e.to_string()),
        };
        let addr: SocketAddr = self
            .config
            .address
            .to_socket_addrs()
            .map_err(|e| ReasonError::Remote(e.to_string()))?
            .next()
            .ok_or_else(|| ReasonError::Remote(format!("cannot resolve {}", self.config.address)))?;
        let stream = TcpStream::connect_timeout(&addr, timeout).map_err(io)?;
        stream.set_nodelay(true).ok();
        let mut line =
            serde_json::to_string(&RemoteRequest { id, text: &truncate_words(text, self.config.truncation) })
                .expect("request serializes");
        line.push('\n');
        stream.set_write_timeout(Some(left().ok_or_else(timed_out)?)).map_err(io)?;
        (&stream).write_all(line.as_bytes()).map_err(io)?;
        let mut reader = BufReader::new(&stream);
        let mut reply = String::new();
        loop {
            stream.set_read_timeout(Some(left().ok_or_else(timed_out)?)).map_err(io)?;
            let before = reply.len();
            reader.read_line(&mut reply).map_err(io)?;
            if reply.ends_with('\n') {
                break;
            }
            if reply.len() == before {
                return Err(ReasonError::Remote("connection closed before a reply".into()));
            }
        }
        let resp: RemoteResponse =
            serde_json::from_str(reply.trim_end()).map_err(|e| ReasonError::Remote(format!("bad reply: {e}")))?;
        if let Some(e) = resp.error {
            return Err(ReasonError::Remote(e));
        }
        resp.vector.ok_or_else(|| ReasonError::Remote("reply has no vector".into()))
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn spec(&self) -> ProviderSpec {
        ProviderSpec::Remote { config: self.config.clone() }
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::Remote
    }

    fn dimension(&self) -> usize {
        self.config.dimension
    }

    fn embed(&self, id: Option<&str>, text: &str) -> Result<FeatureVector, ReasonError> {
        let v = self.request(id, text)?;
        if v.len() != self.config.dimension {
            return Err(ReasonError::DimensionMismatch { expected: self.config.dimension, found: v.len() });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ReasonError::Remote("non-finite value in vector".into()));
        }
        Ok(FeatureVector::from_dense(&v))
    }
}

/// A small embedding service that answers the remote protocol from any
/// provider. Used for tests, demos, and to front a precomputed table.
pub struct EmbeddingServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl EmbeddingServer {
    pub fn spawn(bind: &str, provider: Arc<dyn EmbeddingProvider>) -> std::io::Result<Self> {
        let listener = TcpListener::bind(bind)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let thread = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(conn) = conn else { continue };
                let provider = Arc::clone(&provider);
                std::thread::spawn(move || answer(conn, provider.as_ref()));
            }
        });
        Ok(EmbeddingServer { addr, stop, thread: Some(thread) })
    }

    pub fn address(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_thread();
    }

    fn stop_thread(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for EmbeddingServer {
    fn drop(&mut self) {
        self.stop_thread();
    }
}

#[derive(Deserialize)]
struct IncomingRequest {
    #[serde(default)]
    id: Option<String>,
    text: String,
}

fn answer(conn: TcpStream, provider: &dyn EmbeddingProvider) {
    let mut reader = BufReader::new(&conn);
    let mut line = String::new();
    while matches!(reader.read_line(&mut line), Ok(n) if n > 0) {
        let reply = match serde_json::from_str::<IncomingRequest>(line.trim_end()) {
            Ok(req) => match provider.embed(req.id.as_deref(), &req.text) {
                Ok(v) => serde_json::json!({ "vector": v.to_dense() }),
                Err(e) => serde_json::json!({ "error": e.to_string() }),
            },
            Err(e) => serde_json::json!({ "error": format!("bad request: {e}") }),
        };
        let mut out = reply.to_string();
        out.push('\n');
        if (&conn).write_all(out.as_bytes()).is_err() {
            break;
        }
        line.clear();
    }
    let _ = conn.shutdown(Shutdown::Both);
}
