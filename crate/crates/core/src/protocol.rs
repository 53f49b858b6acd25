//! Worker wire protocol.
//!
//! Newline-delimited UTF-8 JSON over a worker's stdin/stdout, or over a
//! local TCP stream with identical framing. The worker speaks first with a
//! handshake line; afterwards every line the engine writes is one request
//! and every line the worker writes is one response. Several requests may
//! be in flight and responses may come back in any order; they are matched
//! by `request_id`.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, Generator, ImageHandle, Proximity};
use crate::catalog::Catalog;
use crate::metric::{MetricRegistry, MetricSpec};
use crate::mock::MockBackend;

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("cannot launch worker `{command}`: {source}")]
    Launch {
        command: String,
        #[source]
        source: io::Error,
    },
    #[error("cannot connect to `{addr}`: {source}")]
    Connect {
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error("worker speaks protocol version {got}, engine requires {expected}")]
    VersionMismatch { expected: u32, got: u32 },
    #[error("worker advertises metric `{key}` as {worker}, engine registry says {engine}")]
    OrientationMismatch {
        key: String,
        engine: String,
        worker: String,
    },
    #[error("worker lacks capability `{0}`")]
    MissingCapability(String),
    #[error("no handshake from worker within {0:?}")]
    HandshakeTimeout(Duration),
    #[error("malformed handshake: {0}")]
    MalformedHandshake(String),
    #[error("invalid backend spec `{0}`: expected mock, worker:CMD or tcp:ADDR")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Generate,
    Proximity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub op: String,
    pub protocol_version: u32,
    pub capabilities: Vec<Capability>,
    pub metrics: Vec<MetricSpec>,
    /// Worker provenance (model id, generation parameters, adapters).
    /// Recorded, never interpreted.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl Handshake {
    pub fn new(capabilities: Vec<Capability>, metrics: Vec<MetricSpec>) -> Self {
        Self {
            op: "handshake".into(),
            protocol_version: PROTOCOL_VERSION,
            capabilities,
            metrics,
            metadata: BTreeMap::new(),
        }
    }

    pub fn mock() -> Self {
        let mut h = Self::new(
            vec![Capability::Generate, Capability::Proximity],
            MockBackend::metrics(),
        );
        h.metadata
            .insert("worker".into(), serde_json::Value::String("arena-mock".into()));
        h
    }

    pub fn advertises(&self, key: &str) -> bool {
        self.metrics.iter().any(|m| m.key == key)
    }

    /// Refuses version mismatches, missing capabilities and any metric
    /// whose orientation disagrees with the engine registry.
    pub fn check(&self, registry: &MetricRegistry) -> Result<(), ProtocolError> {
        if self.op != "handshake" {
            return Err(ProtocolError::MalformedHandshake(format!("op is `{}`", self.op)));
        }
        if self.protocol_version != PROTOCOL_VERSION {
            return Err(ProtocolError::VersionMismatch {
                expected: PROTOCOL_VERSION,
                got: self.protocol_version,
            });
        }
        for cap in [Capability::Generate, Capability::Proximity] {
            if !self.capabilities.contains(&cap) {
                return Err(ProtocolError::MissingCapability(
                    serde_json::to_value(cap).unwrap().as_str().unwrap().to_string(),
                ));
            }
        }
        for m in &self.metrics {
            if let Ok(known) = registry.resolve(&m.key) {
                if known.orientation != m.orientation {
                    return Err(ProtocolError::OrientationMismatch {
                        key: m.key.clone(),
                        engine: known.orientation.to_string(),
                        worker: m.orientation.to_string(),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Request {
    Generate {
        request_id: String,
        prompt: String,
        k: u32,
        seed: u64,
    },
    Proximity {
        request_id: String,
        image: ImageHandle,
        reference: String,
        metric: String,
    },
}

impl Request {
    pub fn request_id(&self) -> &str {
        match self {
            Request::Generate { request_id, .. } | Request::Proximity { request_id, .. } => request_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ResponseBody {
    Images { images: Vec<ImageHandle> },
    Score { score: f64 },
    Error { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub request_id: String,
    #[serde(flatten)]
    pub body: ResponseBody,
}

impl Response {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("response serializes");
        s.push('\n');
        s
    }
}

/// Worker-side request handling.
pub trait RequestHandler {
    fn handshake(&self) -> Handshake;
    fn handle(&self, request: &Request) -> ResponseBody;
}

/// Serves a mock backend over the wire protocol.
pub struct MockWorker {
    backend: MockBackend,
}

impl MockWorker {
    pub fn new(backend: MockBackend) -> Self {
        Self { backend }
    }
}

impl RequestHandler for MockWorker {
    fn handshake(&self) -> Handshake {
        Handshake::mock()
    }

    fn handle(&self, request: &Request) -> ResponseBody {
        let result = match request {
            Request::Generate { prompt, k, seed, .. } => self
                .backend
                .generate(prompt, *k, *seed)
                .map(|images| ResponseBody::Images { images }),
            Request::Proximity {
                image,
                reference,
                metric,
                ..
            } => self
                .backend
                .proximity(image, reference, metric)
                .map(|score| ResponseBody::Score { score }),
        };
        result.unwrap_or_else(|e| ResponseBody::Error {
            error: match e {
                BackendError::Worker { message, .. } => message,
                other => other.to_string(),
            },
        })
    }
}

/// Worker loop: handshake line, then one response per request line, in
/// request order. Returns at end of input.
pub fn serve(handler: &impl RequestHandler, input: impl BufRead, mut output: impl Write) -> io::Result<()> {
    let mut hs = serde_json::to_string(&handler.handshake()).expect("handshake serializes");
    hs.push('\n');
    output.write_all(hs.as_bytes())?;
    output.flush()?;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<Request>(&line) {
            Ok(req) => Response {
                request_id: req.request_id().to_string(),
                body: handler.handle(&req),
            },
            Err(e) => Response {
                request_id: serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("request_id")?.as_str().map(str::to_string))
                    .unwrap_or_default(),
                body: ResponseBody::Error {
                    error: format!("malformed request: {e}"),
                },
            },
        };
        output.write_all(response.to_line().as_bytes())?;
        output.flush()?;
    }
    Ok(())
}

/// Where a backend lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    /// In-process synthetic backend.
    Mock,
    /// Subprocess command, run through `sh -c`.
    Worker(String),
    /// Local TCP address.
    Tcp(String),
}

impl std::str::FromStr for BackendSpec {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "mock" {
            Ok(BackendSpec::Mock)
        } else if let Some(cmd) = s.strip_prefix("worker:").filter(|c| !c.trim().is_empty()) {
            Ok(BackendSpec::Worker(cmd.to_string()))
        } else if let Some(addr) = s.strip_prefix("tcp:").filter(|a| !a.trim().is_empty()) {
            Ok(BackendSpec::Tcp(addr.to_string()))
        } else {
            Err(ProtocolError::InvalidSpec(s.to_string()))
        }
    }
}

impl std::fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendSpec::Mock => f.write_str("mock"),
            BackendSpec::Worker(cmd) => write!(f, "worker:{cmd}"),
            BackendSpec::Tcp(addr) => write!(f, "tcp:{addr}"),
        }
    }
}

type Pending = HashMap<String, mpsc::Sender<Result<ResponseBody, BackendError>>>;

struct Shared {
    writer: Mutex<Option<Box<dyn Write + Send>>>,
    pending: Mutex<Pending>,
    broken: Mutex<Option<BackendError>>,
    next_id: AtomicU64,
}

impl Shared {
    fn fail_all(&self, err: BackendError) {
        *self.broken.lock().unwrap() = Some(err.clone());
        for (_, tx) in self.pending.lock().unwrap().drain() {
            let _ = tx.send(Err(err.clone()));
        }
    }
}

/// Client side of one worker connection. Shareable across threads; the
/// correlation table is internally synchronized.
pub struct WorkerSession {
    shared: Arc<Shared>,
    handshake: Handshake,
    child: Mutex<Option<Child>>,
    tcp: Option<TcpStream>,
}

impl WorkerSession {
    /// Spawns `command` and completes the handshake.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self, ProtocolError> {
        let launch = |source| ProtocolError::Launch {
            command: command.to_string(),
            source,
        };
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(launch)?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        match Self::start(Box::new(stdin), Box::new(stdout), timeout) {
            Ok(mut session) => {
                session.child = Mutex::new(Some(child));
                Ok(session)
            }
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(e)
            }
        }
    }

    pub fn connect_tcp(addr: &str, timeout: Duration) -> Result<Self, ProtocolError> {
        let err = |source| ProtocolError::Connect {
            addr: addr.to_string(),
            source,
        };
        let stream = TcpStream::connect(addr).map_err(err)?;
        let reader = stream.try_clone().map_err(err)?;
        let control = stream.try_clone().map_err(err)?;
        let mut session = Self::start(Box::new(stream), Box::new(reader), timeout)?;
        session.tcp = Some(control);
        Ok(session)
    }

    /// Runs the session over arbitrary byte streams.
    pub fn start(
        writer: Box<dyn Write + Send>,
        reader: Box<dyn io::Read + Send>,
        timeout: Duration,
    ) -> Result<Self, ProtocolError> {
        let shared = Arc::new(Shared {
            writer: Mutex::new(Some(writer)),
            pending: Mutex::new(HashMap::new()),
            broken: Mutex::new(None),
            next_id: AtomicU64::new(1),
        });
        let (hs_tx, hs_rx) = mpsc::channel();
        let reader_shared = Arc::clone(&shared);
        std::thread::Builder::new()
            .name("arena-worker-reader".into())
            .spawn(move || read_loop(BufReader::new(reader), reader_shared, hs_tx))
            .expect("spawn reader thread");
        let handshake = match hs_rx.recv_timeout(timeout) {
            Ok(Ok(h)) => h,
            Ok(Err(msg)) => return Err(ProtocolError::MalformedHandshake(msg)),
            Err(mpsc::RecvTimeoutError::Timeout) => return Err(ProtocolError::HandshakeTimeout(timeout)),
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                return Err(ProtocolError::MalformedHandshake(
                    "worker closed its output before the handshake".into(),
                ))
            }
        };
        Ok(Self {
            shared,
            handshake,
            child: Mutex::new(None),
            tcp: None,
        })
    }

    pub fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    fn call(&self, build: impl FnOnce(String) -> Request) -> Result<(String, ResponseBody), BackendError> {
        if let Some(e) = self.shared.broken.lock().unwrap().clone() {
            return Err(e);
        }
        let id = format!("r{}", self.shared.next_id.fetch_add(1, Ordering::Relaxed));
        let request = build(id.clone());
        let (tx, rx) = mpsc::channel();
        self.shared.pending.lock().unwrap().insert(id.clone(), tx);
        let mut line = serde_json::to_string(&request).expect("request serializes");
        line.push('\n');
        let written = {
            let mut guard = self.shared.writer.lock().unwrap();
            match guard.as_mut() {
                Some(w) => w.write_all(line.as_bytes()).and_then(|_| w.flush()),
                None => Err(io::Error::new(io::ErrorKind::BrokenPipe, "session closed")),
            }
        };
        if let Err(e) = written {
            self.shared.pending.lock().unwrap().remove(&id);
            return Err(BackendError::Transport(format!("writing request `{id}`: {e}")));
        }
        match rx.recv() {
            Ok(Ok(ResponseBody::Error { error })) => Err(BackendError::Worker {
                request_id: id,
                message: error,
            }),
            Ok(Ok(body)) => Ok((id, body)),
            Ok(Err(e)) => Err(e),
            Err(_) => Err(BackendError::Transport(format!(
                "worker connection closed while `{id}` was outstanding"
            ))),
        }
    }
}

fn read_loop(mut reader: impl BufRead, shared: Arc<Shared>, handshake: mpsc::Sender<Result<Handshake, String>>) {
    let mut line = String::new();
    match reader.read_line(&mut line) {
        Ok(0) | Err(_) => {
            drop(handshake);
            shared.fail_all(BackendError::Transport("worker closed before handshake".into()));
            return;
        }
        Ok(_) => {
            let parsed = serde_json::from_str::<Handshake>(line.trim_end()).map_err(|e| e.to_string());
            let ok = parsed.is_ok();
            let _ = handshake.send(parsed);
            if !ok {
                shared.fail_all(BackendError::Protocol("malformed handshake".into()));
                return;
            }
        }
    }
    loop {
        line.clear();
        match reader.read_line(&mut line) {
            Ok(0) => {
                shared.fail_all(BackendError::Transport("worker closed its output".into()));
                return;
            }
            Err(e) => {
                shared.fail_all(BackendError::Transport(format!("reading worker output: {e}")));
                return;
            }
            Ok(_) => {}
        }
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<Response>(line.trim_end()) {
            Ok(r) => r,
            Err(e) => {
                shared.fail_all(BackendError::Protocol(format!("unparseable response line: {e}")));
                return;
            }
        };
        let waiter = shared.pending.lock().unwrap().remove(&response.request_id);
        match waiter {
            Some(tx) => {
                let _ = tx.send(Ok(response.body));
            }
            None => {
                shared.fail_all(BackendError::Protocol(format!(
                    "response for unknown request_id `{}`",
                    response.request_id
                )));
                return;
            }
        }
    }
}

impl Generator for WorkerSession {
    fn generate(&self, prompt: &str, k: u32, seed: u64) -> Result<Vec<ImageHandle>, BackendError> {
        let (id, body) = self.call(|request_id| Request::Generate {
            request_id,
            prompt: prompt.to_string(),
            k,
            seed,
        })?;
        match body {
            ResponseBody::Images { images } if images.len() == k as usize => Ok(images),
            ResponseBody::Images { images } => Err(BackendError::Protocol(format!(
                "request `{id}` asked for {k} images, worker returned {}",
                images.len()
            ))),
            other => Err(BackendError::Protocol(format!(
                "request `{id}` expected images, got {other:?}"
            ))),
        }
    }
}

impl Proximity for WorkerSession {
    fn proximity(&self, image: &str, reference: &str, metric: &str) -> Result<f64, BackendError> {
        let (id, body) = self.call(|request_id| Request::Proximity {
            request_id,
            image: image.to_string(),
            reference: reference.to_string(),
            metric: metric.to_string(),
        })?;
        match body {
            ResponseBody::Score { score } => Ok(score),
            other => Err(BackendError::Protocol(format!(
                "request `{id}` expected a score, got {other:?}"
            ))),
        }
    }
}

impl std::fmt::Debug for WorkerSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkerSession")
            .field("handshake", &self.handshake)
            .finish_non_exhaustive()
    }
}

impl Drop for WorkerSession {
    fn drop(&mut self) {
        // Closing our end lets the worker see end of input.
        self.shared.writer.lock().unwrap().take();
        if let Some(tcp) = self.tcp.take() {
            let _ = tcp.shutdown(std::net::Shutdown::Both);
        }
        if let Some(mut child) = self.child.lock().unwrap().take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// An established backend with its advertised capabilities.
pub struct Connection {
    pub handshake: Handshake,
    pub backend: Arc<dyn Backend>,
}

/// Connects to `spec` and validates its handshake against `registry`.
/// `mock_jitter` only applies to the built-in mock.
pub fn connect(
    spec: &BackendSpec,
    catalog: &Catalog,
    registry: &MetricRegistry,
    timeout: Duration,
    mock_jitter: f64,
) -> Result<Connection, ProtocolError> {
    let (handshake, backend): (Handshake, Arc<dyn Backend>) = match spec {
        BackendSpec::Mock => (
            Handshake::mock(),
            Arc::new(MockBackend::with_jitter(catalog, mock_jitter)),
        ),
        BackendSpec::Worker(cmd) => {
            let s = WorkerSession::spawn(cmd, timeout)?;
            (s.handshake().clone(), Arc::new(s))
        }
        BackendSpec::Tcp(addr) => {
            let s = WorkerSession::connect_tcp(addr, timeout)?;
            (s.handshake().clone(), Arc::new(s))
        }
    };
    handshake.check(registry)?;
    Ok(Connection { handshake, backend })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::ArtworkRecord;
    use crate::metric::{Orientation, ValidRange};
    use std::io::Cursor;

    fn catalog() -> Catalog {
        Catalog::new(vec![ArtworkRecord {
            id: "a".into(),
            title: "Harbor Dawn".into(),
            artist: "Ines Alder".into(),
            reference_image: "mock://a".into(),
            motifs: vec![],
        }])
        .unwrap()
    }

    #[test]
    fn mock_connection_advertises_everything() {
        let c = connect(
            &BackendSpec::Mock,
            &catalog(),
            &MetricRegistry::builtin(),
            DEFAULT_HANDSHAKE_TIMEOUT,
            0.0,
        )
        .unwrap();
        assert_eq!(
            c.handshake.capabilities,
            vec![Capability::Generate, Capability::Proximity]
        );
        for k in ["semantics", "aesthetics", "fidelity"] {
            assert!(c.handshake.advertises(k));
        }
    }

    #[test]
    fn version_mismatch_refused() {
        let mut h = Handshake::mock();
        h.protocol_version = 999;
        assert!(matches!(
            h.check(&MetricRegistry::builtin()),
            Err(ProtocolError::VersionMismatch { got: 999, .. })
        ));
    }

    #[test]
    fn orientation_mismatch_refused() {
        let mut h = Handshake::mock();
        h.metrics = vec![MetricSpec::new(
            "aesthetics",
            Orientation::HigherIsCloser,
            ValidRange::new(0.0, 1.0),
        )];
        let err = h.check(&MetricRegistry::builtin()).unwrap_err();
        assert!(err.to_string().contains("aesthetics"), "{err}");
    }

    #[test]
    fn backend_spec_parsing() {
        assert_eq!("mock".parse::<BackendSpec>().unwrap(), BackendSpec::Mock);
        assert_eq!(
            "worker:python w.py".parse::<BackendSpec>().unwrap(),
            BackendSpec::Worker("python w.py".into())
        );
        assert_eq!(
            "tcp:127.0.0.1:9000".parse::<BackendSpec>().unwrap(),
            BackendSpec::Tcp("127.0.0.1:9000".into())
        );
        assert!("gpu".parse::<BackendSpec>().is_err());
        assert!("worker:".parse::<BackendSpec>().is_err());
    }

    #[test]
    fn request_wire_shape() {
        let r = Request::Generate {
            request_id: "g1".into(),
            prompt: "p".into(),
            k: 2,
            seed: 5,
        };
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"op":"generate","request_id":"g1","prompt":"p","k":2,"seed":5}"#
        );
        let resp: Response = serde_json::from_str(r#"{"request_id":"x","score":0.5}"#).unwrap();
        assert_eq!(resp.body, ResponseBody::Score { score: 0.5 });
        let resp: Response = serde_json::from_str(r#"{"request_id":"x","error":"boom"}"#).unwrap();
        assert_eq!(resp.body, ResponseBody::Error { error: "boom".into() });
    }

    #[test]
    fn serve_then_session_over_pipes() {
        // Run the serve loop on one pipe pair and a session on the other end.
        let (engine_r, worker_w) = os_pipe();
        let (worker_r, engine_w) = os_pipe();
        let cat = catalog();
        let worker = MockWorker::new(MockBackend::new(&cat));
        let t = std::thread::spawn(move || serve(&worker, BufReader::new(worker_r), worker_w));
        let session = WorkerSession::start(Box::new(engine_w), Box::new(engine_r), Duration::from_secs(5)).unwrap();
        let imgs = session.generate("Harbor Dawn", 2, 9).unwrap();
        assert_eq!(imgs.len(), 2);
        assert_eq!(session.proximity(&imgs[0], "a", "semantics").unwrap(), 1.0);
        let err = session.proximity(&imgs[0], "nope", "semantics").unwrap_err();
        assert!(matches!(err, BackendError::Worker { .. }), "{err}");
        drop(session);
        t.join().unwrap().unwrap();
    }

    #[test]
    fn unknown_request_id_is_protocol_error() {
        let worker_output = format!(
            "{}\n{}\n",
            serde_json::to_string(&Handshake::mock()).unwrap(),
            r#"{"request_id":"ghost","score":0.1}"#
        );
        let session = WorkerSession::start(
            Box::new(io::sink()),
            Box::new(Cursor::new(worker_output.into_bytes())),
            Duration::from_secs(5),
        )
        .unwrap();
        // Give the reader a moment to consume the stray line.
        std::thread::sleep(Duration::from_millis(50));
        let err = session.proximity("mock:", "a", "semantics").unwrap_err();
        assert!(matches!(err, BackendError::Protocol(_)), "{err}");
    }

    #[test]
    fn handshake_timeout() {
        let (r, _w) = os_pipe();
        let err = WorkerSession::start(Box::new(io::sink()), Box::new(r), Duration::from_millis(50)).unwrap_err();
        assert!(matches!(err, ProtocolError::HandshakeTimeout(_)));
    }

    fn os_pipe() -> (impl io::Read + Send + 'static, impl Write + Send + 'static) {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let client = TcpStream::connect(addr).unwrap();
        let (server, _) = listener.accept().unwrap();
        (server, client)
    }
}
