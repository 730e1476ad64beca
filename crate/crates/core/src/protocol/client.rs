//! Client side: connections, remote scorers and selectors, and transcript
//! replay.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{
    to_frame, DetokenizeParams, DetokenizeResult, EndpointRole, HandshakeParams, HandshakeResult, NextDistributionParams,
    NextDistributionResult, Request, Response, ScorePrefixParams, ScorePrefixResult, SelectParams, SelectResult,
    TokenizeParams, TokenizeResult, PROTOCOL_VERSION,
};
use crate::error::{Error, Result};
use crate::rerank::Selector;
use crate::scoring::{Concurrency, ModelInput, ScoredDistribution, ScoredEntry, Scorer};
use crate::tokenization::{BoundaryConvention, SubwordTokenizer, Token, TokenId};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Where a remote endpoint lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// Child process speaking the protocol on stdin/stdout.
    Command(Vec<String>),
    /// `host:port` of a stream socket.
    Tcp(String),
}

impl Endpoint {
    /// `tcp://host:port`, or a whitespace-separated command line.
    pub fn parse(spec: &str) -> Result<Self> {
        if let Some(addr) = spec.strip_prefix("tcp://") {
            return Ok(Endpoint::Tcp(addr.to_string()));
        }
        let argv: Vec<String> = spec.split_whitespace().map(str::to_string).collect();
        if argv.is_empty() {
            return Err(Error::Config("empty endpoint".into()));
        }
        Ok(Endpoint::Command(argv))
    }

    fn describe(&self) -> String {
        match self {
            Endpoint::Command(argv) => argv.join(" "),
            Endpoint::Tcp(addr) => format!("tcp://{addr}"),
        }
    }
}

struct Wire {
    writer: Box<dyn Write + Send>,
    lines: Receiver<io::Result<String>>,
    next_id: u64,
    transcript: Option<Vec<String>>,
}

/// One lockstep connection: a single request in flight at a time.
pub struct Connection {
    name: String,
    timeout: Duration,
    wire: Mutex<Wire>,
    child: Mutex<Option<Child>>,
}

fn spawn_reader(reader: impl Read + Send + 'static) -> Receiver<io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let mut reader = BufReader::new(reader);
        loop {
            let mut line = String::new();
            match reader.read_line(&mut line) {
                Ok(0) => {
                    let _ = tx.send(Err(io::Error::new(io::ErrorKind::UnexpectedEof, "endpoint closed the connection")));
                    return;
                }
                Ok(_) => {
                    while line.ends_with('\n') || line.ends_with('\r') {
                        line.pop();
                    }
                    if tx.send(Ok(line)).is_err() {
                        return;
                    }
                }
                Err(e) => {
                    let _ = tx.send(Err(e));
                    return;
                }
            }
        }
    });
    rx
}

impl Connection {
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self> {
        let name = endpoint.describe();
        match endpoint {
            Endpoint::Command(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| Error::unavailable(&name, e))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                let conn = Self::from_streams(&name, stdout, stdin, timeout);
                *conn.child.lock().expect("child lock") = Some(child);
                Ok(conn)
            }
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr).map_err(|e| Error::unavailable(&name, e))?;
                // Lockstep request/response; Nagle's algorithm would add a delay per call.
                stream.set_nodelay(true).map_err(|e| Error::unavailable(&name, e))?;
                let reader = stream.try_clone().map_err(|e| Error::unavailable(&name, e))?;
                Ok(Self::from_streams(&name, reader, stream, timeout))
            }
        }
    }

    pub fn from_streams(
        name: &str,
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        timeout: Duration,
    ) -> Self {
        Connection {
            name: name.to_string(),
            timeout,
            wire: Mutex::new(Wire { writer: Box::new(writer), lines: spawn_reader(reader), next_id: 1, transcript: None }),
            child: Mutex::new(None),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Start recording every exchanged frame.
    pub fn record(&self) {
        self.wire.lock().expect("wire lock").transcript = Some(Vec::new());
    }

    /// Recorded frames as a transcript (`> request` / `< response` lines).
    pub fn take_transcript(&self) -> String {
        let lines = self.wire.lock().expect("wire lock").transcript.take().unwrap_or_default();
        lines.iter().map(|l| format!("{l}\n")).collect()
    }

    fn send_line(&self, wire: &mut Wire, line: &str) -> Result<()> {
        let frame = format!("{line}\n");
        let sent = wire.writer.write_all(frame.as_bytes()).and_then(|_| wire.writer.flush());
        sent.map_err(|e| Error::unavailable(&self.name, e))?;
        if let Some(t) = wire.transcript.as_mut() {
            t.push(format!("> {line}"));
        }
        Ok(())
    }

    fn recv_line(&self, wire: &mut Wire, method: &str, deadline: Instant) -> Result<String> {
        let remaining = deadline.saturating_duration_since(Instant::now());
        match wire.lines.recv_timeout(remaining) {
            Ok(Ok(line)) => {
                if let Some(t) = wire.transcript.as_mut() {
                    t.push(format!("< {line}"));
                }
                Ok(line)
            }
            Ok(Err(e)) => Err(Error::unavailable(&self.name, e)),
            Err(RecvTimeoutError::Timeout) => {
                Err(Error::Timeout { method: method.to_string(), secs: self.timeout.as_secs_f64() })
            }
            Err(RecvTimeoutError::Disconnected) => Err(Error::unavailable(&self.name, "connection closed")),
        }
    }

    /// Send one request and wait for its response.
    pub fn call<P: Serialize, R: DeserializeOwned>(&self, method: &str, params: &P) -> Result<R> {
        let mut wire = self.wire.lock().expect("wire lock");
        let id = wire.next_id;
        wire.next_id += 1;
        let request = Request {
            id,
            method: method.to_string(),
            params: serde_json::to_value(params).expect("protocol params serialize"),
        };
        self.send_line(&mut wire, &to_frame(&request))?;
        let deadline = Instant::now() + self.timeout;
        loop {
            let frame = self.recv_line(&mut wire, method, deadline)?;
            let response: Response = serde_json::from_str(&frame)
                .map_err(|e| Error::MalformedResponse { reason: format!("not a response: {e}"), frame: frame.clone() })?;
            if response.id < id {
                // Late answer to a request that already timed out.
                continue;
            }
            if response.id > id {
                return Err(Error::MalformedResponse { reason: format!("expected id {id}, got {}", response.id), frame });
            }
            if let Some(err) = response.error {
                return Err(Error::Remote { code: err.code, message: err.message });
            }
            let result = response
                .result
                .ok_or_else(|| Error::MalformedResponse { reason: "neither result nor error".into(), frame: frame.clone() })?;
            return serde_json::from_value(result)
                .map_err(|e| Error::MalformedResponse { reason: format!("unexpected result for {method}: {e}"), frame });
        }
    }

    /// Send a raw frame and return the next raw frame, without id handling.
    pub fn exchange_raw(&self, frame: &str) -> Result<String> {
        let mut wire = self.wire.lock().expect("wire lock");
        self.send_line(&mut wire, frame)?;
        let deadline = Instant::now() + self.timeout;
        self.recv_line(&mut wire, "raw", deadline)
    }

    pub fn handshake(&self) -> Result<HandshakeResult> {
        self.call("handshake", &HandshakeParams { protocol_version: PROTOCOL_VERSION })
            .map_err(|e| Error::HandshakeFailure(format!("{}: {e}", self.name)))
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.get_mut().ok().and_then(Option::take) {
            // Closing stdin lets a well-behaved server exit on its own.
            if let Ok(wire) = self.wire.get_mut() {
                wire.writer = Box::new(io::sink());
            }
            let deadline = Instant::now() + Duration::from_secs(2);
            while Instant::now() < deadline {
                if let Ok(Some(_)) = child.try_wait() {
                    return;
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn payload(input: &ModelInput) -> Result<String> {
    String::from_utf8(input.payload.clone()).map_err(|_| Error::Config("remote payloads must be UTF-8".into()))
}

fn ids(tokens: &[Token]) -> Vec<u32> {
    tokens.iter().map(|t| t.id.0).collect()
}

/// Tokenizer that forwards to the remote endpoint, memoizing answers.
pub struct RemoteTokenizer {
    conn: Arc<Connection>,
    boundary: BoundaryConvention,
    vocab_size: usize,
    tokenize_cache: Mutex<HashMap<String, Vec<Token>>>,
    detokenize_cache: Mutex<HashMap<Vec<u32>, String>>,
}

impl RemoteTokenizer {
    fn check_tokens(&self, tokens: &[Token], frame: impl Fn() -> String) -> Result<()> {
        for t in tokens {
            if t.id.0 as usize >= self.vocab_size || t.text.is_empty() {
                return Err(Error::MalformedResponse { reason: format!("invalid token {t:?}"), frame: frame() });
            }
        }
        Ok(())
    }
}

impl SubwordTokenizer for RemoteTokenizer {
    fn boundary(&self) -> &BoundaryConvention {
        &self.boundary
    }

    fn tokenize(&self, text: &str) -> Result<Vec<Token>> {
        if let Some(hit) = self.tokenize_cache.lock().expect("cache lock").get(text) {
            return Ok(hit.clone());
        }
        let r: TokenizeResult = self.conn.call("tokenize", &TokenizeParams { text: text.to_string() })?;
        let tokens: Vec<Token> = r.tokens.iter().map(|t| Token::new(t.id, t.text.clone())).collect();
        self.check_tokens(&tokens, || format!("{r:?}"))?;
        self.tokenize_cache.lock().expect("cache lock").insert(text.to_string(), tokens.clone());
        Ok(tokens)
    }

    fn detokenize(&self, tokens: &[Token]) -> Result<String> {
        let key = ids(tokens);
        if let Some(hit) = self.detokenize_cache.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let r: DetokenizeResult = self.conn.call("detokenize", &DetokenizeParams { ids: key.clone() })?;
        self.detokenize_cache.lock().expect("cache lock").insert(key, r.text.clone());
        Ok(r.text)
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }
}

/// A scorer whose queries travel over the protocol.
pub struct RemoteScorer {
    identity: String,
    conn: Arc<Connection>,
    tokenizer: RemoteTokenizer,
}

impl RemoteScorer {
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self> {
        Self::from_connection(Connection::connect(endpoint, timeout)?)
    }

    /// Handshake over an established connection.
    pub fn from_connection(conn: Connection) -> Result<Self> {
        let hs = conn.handshake()?;
        let fail = |m: &str| Error::HandshakeFailure(format!("{}: {m}", conn.name()));
        if hs.role != EndpointRole::Scorer {
            return Err(fail("endpoint is not a scorer"));
        }
        let boundary = hs.boundary.ok_or_else(|| fail("missing boundary convention"))?;
        if boundary.convention != "prefix" || boundary.marker.is_empty() {
            return Err(fail(&format!("unsupported boundary convention {:?}", boundary.convention)));
        }
        let eos = hs.eos.ok_or_else(|| fail("missing eos token"))?;
        let vocab_size = hs.vocab_size.ok_or_else(|| fail("missing vocab_size"))?;
        if eos.id as usize >= vocab_size {
            return Err(fail("eos id outside the vocabulary"));
        }
        let conn = Arc::new(conn);
        Ok(RemoteScorer {
            identity: hs.identity,
            tokenizer: RemoteTokenizer {
                conn: conn.clone(),
                boundary: BoundaryConvention { marker: boundary.marker, eos_id: TokenId(eos.id), eos_text: eos.text },
                vocab_size,
                tokenize_cache: Mutex::new(HashMap::new()),
                detokenize_cache: Mutex::new(HashMap::new()),
            },
            conn,
        })
    }

    pub fn connection(&self) -> &Connection {
        &self.conn
    }
}

fn check_logprob(x: f64, allow_neg_inf: bool) -> std::result::Result<(), String> {
    if x.is_nan() || x > 0.0 || (x == f64::NEG_INFINITY && !allow_neg_inf) {
        Err(format!("log-probability {x} out of range"))
    } else {
        Ok(())
    }
}

impl Scorer for RemoteScorer {
    fn identity(&self) -> &str {
        &self.identity
    }

    fn tokenizer(&self) -> &dyn SubwordTokenizer {
        &self.tokenizer
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Exclusive
    }

    fn next_distribution(&self, input: &ModelInput, prefix: &[Token], k: usize) -> Result<ScoredDistribution> {
        let params = NextDistributionParams { payload: payload(input)?, ids: ids(prefix), k };
        let r: NextDistributionResult = self.conn.call("next_distribution", &params)?;
        let malformed = |reason: String| Error::MalformedResponse { reason, frame: format!("{r:?}") };
        if r.entries.len() > k {
            return Err(malformed(format!("{} entries for k = {k}", r.entries.len())));
        }
        let mut entries = Vec::with_capacity(r.entries.len());
        for e in &r.entries {
            check_logprob(e.logprob.0, false).map_err(malformed)?;
            if e.id as usize >= self.tokenizer.vocab_size {
                return Err(malformed(format!("token id {} outside the vocabulary", e.id)));
            }
            entries.push(ScoredEntry { token: Token::new(e.id, e.text.clone()), logprob: e.logprob.0 });
        }
        let dist = ScoredDistribution { entries, truncated_to: k };
        if !dist.is_canonically_sorted() {
            return Err(malformed("entries not sorted by logprob desc, id asc".into()));
        }
        Ok(dist)
    }

    fn score_prefix(&self, input: &ModelInput, tokens: &[Token]) -> Result<Vec<f64>> {
        let params = ScorePrefixParams { payload: payload(input)?, ids: ids(tokens) };
        let r: ScorePrefixResult = self.conn.call("score_prefix", &params)?;
        let malformed = |reason: String| Error::MalformedResponse { reason, frame: format!("{r:?}") };
        if r.logprobs.len() != tokens.len() {
            return Err(malformed(format!("{} scores for {} tokens", r.logprobs.len(), tokens.len())));
        }
        for lp in &r.logprobs {
            check_logprob(lp.0, true).map_err(malformed)?;
        }
        Ok(r.logprobs.iter().map(|lp| lp.0).collect())
    }
}

/// A best-of-N selector behind the protocol.
pub struct RemoteSelector {
    identity: String,
    conn: Connection,
}

impl RemoteSelector {
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self> {
        Self::from_connection(Connection::connect(endpoint, timeout).map_err(|e| Error::SelectorUnavailable(e.to_string()))?)
    }

    pub fn from_connection(conn: Connection) -> Result<Self> {
        let hs = conn.handshake().map_err(|e| Error::SelectorUnavailable(e.to_string()))?;
        if hs.role != EndpointRole::Selector {
            return Err(Error::SelectorUnavailable(format!("{}: endpoint is not a selector", conn.name())));
        }
        Ok(RemoteSelector { identity: hs.identity, conn })
    }

    pub fn connection(&self) -> &Connection {
        &self.conn
    }
}

impl Selector for RemoteSelector {
    fn identity(&self) -> &str {
        &self.identity
    }

    fn score(&self, input: &ModelInput, surfaces: &[String]) -> Result<Vec<f64>> {
        let params = SelectParams { payload: payload(input)?, surfaces: surfaces.to_vec() };
        let r: SelectResult = self.conn.call("select", &params)?;
        if r.scores.len() != surfaces.len() {
            return Err(Error::MalformedResponse {
                reason: format!("{} scores for {} surfaces", r.scores.len(), surfaces.len()),
                frame: format!("{r:?}"),
            });
        }
        Ok(r.scores)
    }
}

/// A transcript exchange whose response differed from the recording.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mismatch {
    pub index: usize,
    pub request: String,
    pub expected: String,
    pub actual: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayReport {
    pub exchanges: usize,
    pub mismatches: Vec<Mismatch>,
}

impl ReplayReport {
    pub fn is_clean(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Replay a recorded transcript against `conn`, comparing every response
/// byte for byte. Lines are `> request` or `< response`; blank lines and
/// `#` comments are ignored.
pub fn replay_transcript(transcript: &str, conn: &Connection) -> Result<ReplayReport> {
    let mut report = ReplayReport::default();
    let mut pending: Option<String> = None;
    for (n, line) in transcript.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(req) = line.strip_prefix("> ") {
            if pending.is_some() {
                return Err(Error::Config(format!("transcript line {}: request without recorded response", n + 1)));
            }
            pending = Some(req.to_string());
        } else if let Some(expected) = line.strip_prefix("< ") {
            let request = pending
                .take()
                .ok_or_else(|| Error::Config(format!("transcript line {}: response without request", n + 1)))?;
            let actual = conn.exchange_raw(&request)?;
            if actual != expected {
                report.mismatches.push(Mismatch { index: report.exchanges, request, expected: expected.to_string(), actual });
            }
            report.exchanges += 1;
        } else {
            return Err(Error::Config(format!("transcript line {}: expected '> ' or '< ' prefix", n + 1)));
        }
    }
    if pending.is_some() {
        return Err(Error::Config("transcript ends with an unanswered request".into()));
    }
    Ok(report)
}
