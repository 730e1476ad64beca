//! Line-delimited JSON protocol that lets an external process act as a
//! scorer or selector.
//!
//! Every frame is one compact JSON object with sorted keys, terminated by
//! `\n`. Requests are `{"id":N,"method":M,"params":{...}}`; responses echo
//! the id and carry either `result` or `error: {code, message}`. Requests
//! are answered in order, one at a time.
//!
//! Log-probabilities are JSON numbers, except `-inf`, which is the string
//! `"-inf"`.

mod client;
mod server;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use client::{replay_transcript, Connection, Endpoint, RemoteScorer, RemoteSelector, ReplayReport, DEFAULT_TIMEOUT};
pub use server::{serve, serve_tcp, Service};

pub const PROTOCOL_VERSION: u32 = 1;

/// JSON-RPC style error codes.
pub mod codes {
    pub const PARSE_ERROR: i64 = -32700;
    pub const INVALID_REQUEST: i64 = -32600;
    pub const METHOD_NOT_FOUND: i64 = -32601;
    pub const INVALID_PARAMS: i64 = -32602;
    pub const MODEL_ERROR: i64 = -32000;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub method: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteError {
    pub code: i64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RemoteError>,
}

/// Serialize any message in canonical wire form: compact, keys sorted.
pub fn to_frame<T: Serialize>(msg: &T) -> String {
    // Going through `Value` sorts object keys.
    let value = serde_json::to_value(msg).expect("protocol messages serialize");
    serde_json::to_string(&value).expect("JSON values serialize")
}

/// A natural-log probability on the wire.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogProb(pub f64);

impl Serialize for LogProb {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let x = self.0;
        if x.is_finite() {
            s.serialize_f64(x)
        } else if x == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else if x == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_str("nan")
        }
    }
}

impl<'de> Deserialize<'de> for LogProb {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(LogProb(x)),
            Raw::Text(t) => match t.as_str() {
                "-inf" => Ok(LogProb(f64::NEG_INFINITY)),
                "inf" => Ok(LogProb(f64::INFINITY)),
                "nan" => Ok(LogProb(f64::NAN)),
                other => Err(de::Error::custom(format!("not a log-probability: {other:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireToken {
    pub id: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointRole {
    Scorer,
    Selector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryInfo {
    /// Only `"prefix"` is understood: word-initial tokens start with `marker`.
    pub convention: String,
    pub marker: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandshakeParams {
    pub protocol_version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandshakeResult {
    pub protocol_version: u32,
    pub identity: String,
    pub role: EndpointRole,
    /// Present for scorers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundaryInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eos: Option<WireToken>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizeParams {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizeResult {
    pub tokens: Vec<WireToken>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetokenizeParams {
    pub ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetokenizeResult {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePrefixParams {
    pub payload: String,
    pub ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePrefixResult {
    pub logprobs: Vec<LogProb>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextDistributionParams {
    pub payload: String,
    pub ids: Vec<u32>,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireEntry {
    pub id: u32,
    pub text: String,
    pub logprob: LogProb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextDistributionResult {
    pub entries: Vec<WireEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectParams {
    pub payload: String,
    pub surfaces: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectResult {
    pub scores: Vec<f64>,
}
