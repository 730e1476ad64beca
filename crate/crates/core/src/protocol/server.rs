//! Serving a local scorer or selector over the protocol.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use super::{
    codes, to_frame, BoundaryInfo, DetokenizeParams, DetokenizeResult, EndpointRole, HandshakeParams, HandshakeResult,
    LogProb, NextDistributionParams, NextDistributionResult, RemoteError, Request, Response, ScorePrefixParams,
    ScorePrefixResult, SelectParams, SelectResult, TokenizeParams, TokenizeResult, WireEntry, WireToken,
    PROTOCOL_VERSION,
};
use crate::error::{Error, Result};
use crate::rerank::Selector;
use crate::scoring::{ModelInput, Role, Scorer};
use crate::tokenization::Token;

/// What an endpoint exposes.
#[derive(Clone, Copy)]
pub enum Service<'a> {
    Scorer(&'a dyn Scorer),
    Selector(&'a dyn Selector),
}

struct Handler<'a> {
    service: Service<'a>,
    vocab: Vec<Token>,
}

type Reply = std::result::Result<Value, RemoteError>;

fn params<P: DeserializeOwned>(value: Value) -> std::result::Result<P, RemoteError> {
    serde_json::from_value(value)
        .map_err(|e| RemoteError { code: codes::INVALID_PARAMS, message: format!("invalid params: {e}") })
}

fn ok<T: Serialize>(result: T) -> Reply {
    Ok(serde_json::to_value(result).expect("protocol results serialize"))
}

fn model_error(e: Error) -> RemoteError {
    RemoteError { code: codes::MODEL_ERROR, message: e.to_string() }
}

impl<'a> Handler<'a> {
    fn new(service: Service<'a>) -> Result<Self> {
        let vocab = match service {
            Service::Scorer(s) => s.tokenizer().vocabulary()?,
            Service::Selector(_) => Vec::new(),
        };
        Ok(Handler { service, vocab })
    }

    fn tokens(&self, ids: &[u32]) -> std::result::Result<Vec<Token>, RemoteError> {
        ids.iter()
            .map(|&id| {
                self.vocab.get(id as usize).cloned().ok_or(RemoteError {
                    code: codes::INVALID_PARAMS,
                    message: format!("token id {id} is not in the vocabulary"),
                })
            })
            .collect()
    }

    fn handle(&self, method: &str, raw: Value) -> Reply {
        if method == "handshake" {
            let p: HandshakeParams = params(raw)?;
            if p.protocol_version != PROTOCOL_VERSION {
                return Err(RemoteError {
                    code: codes::INVALID_PARAMS,
                    message: format!("unsupported protocol version {}", p.protocol_version),
                });
            }
            return ok(self.handshake());
        }
        match (self.service, method) {
            (Service::Scorer(s), "tokenize") => {
                let p: TokenizeParams = params(raw)?;
                let tokens = s.tokenizer().tokenize(&p.text).map_err(model_error)?;
                ok(TokenizeResult { tokens: tokens.into_iter().map(|t| WireToken { id: t.id.0, text: t.text }).collect() })
            }
            (Service::Scorer(s), "detokenize") => {
                let p: DetokenizeParams = params(raw)?;
                let text = s.tokenizer().detokenize(&self.tokens(&p.ids)?).map_err(model_error)?;
                ok(DetokenizeResult { text })
            }
            (Service::Scorer(s), "score_prefix") => {
                let p: ScorePrefixParams = params(raw)?;
                let input = ModelInput::new(p.payload, Role::Generator);
                let lp = s.score_prefix(&input, &self.tokens(&p.ids)?).map_err(model_error)?;
                ok(ScorePrefixResult { logprobs: lp.into_iter().map(LogProb).collect() })
            }
            (Service::Scorer(s), "next_distribution") => {
                let p: NextDistributionParams = params(raw)?;
                if p.k == 0 {
                    return Err(RemoteError { code: codes::INVALID_PARAMS, message: "k must be at least 1".into() });
                }
                let input = ModelInput::new(p.payload, Role::Generator);
                let dist = s.next_distribution(&input, &self.tokens(&p.ids)?, p.k).map_err(model_error)?;
                ok(NextDistributionResult {
                    entries: dist
                        .entries
                        .into_iter()
                        .map(|e| WireEntry { id: e.token.id.0, text: e.token.text, logprob: LogProb(e.logprob) })
                        .collect(),
                })
            }
            (Service::Selector(sel), "select") => {
                let p: SelectParams = params(raw)?;
                let input = ModelInput::new(p.payload, Role::Ranker);
                let scores = sel.score(&input, &p.surfaces).map_err(model_error)?;
                ok(SelectResult { scores })
            }
            _ => Err(RemoteError { code: codes::METHOD_NOT_FOUND, message: format!("unknown method {method:?}") }),
        }
    }

    fn handshake(&self) -> HandshakeResult {
        match self.service {
            Service::Scorer(s) => {
                let b = s.tokenizer().boundary();
                HandshakeResult {
                    protocol_version: PROTOCOL_VERSION,
                    identity: s.identity().to_string(),
                    role: EndpointRole::Scorer,
                    boundary: Some(BoundaryInfo { convention: "prefix".into(), marker: b.marker.clone() }),
                    eos: Some(WireToken { id: b.eos_id.0, text: b.eos_text.clone() }),
                    vocab_size: Some(s.tokenizer().vocab_size()),
                }
            }
            Service::Selector(sel) => HandshakeResult {
                protocol_version: PROTOCOL_VERSION,
                identity: sel.identity().to_string(),
                role: EndpointRole::Selector,
                boundary: None,
                eos: None,
                vocab_size: None,
            },
        }
    }

    fn respond(&self, line: &str) -> Response {
        let value: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                return Response {
                    id: 0,
                    result: None,
                    error: Some(RemoteError { code: codes::PARSE_ERROR, message: format!("parse error: {e}") }),
                }
            }
        };
        let id = value.get("id").and_then(Value::as_u64).unwrap_or(0);
        let request: Request = match serde_json::from_value(value) {
            Ok(r) => r,
            Err(e) => {
                return Response {
                    id,
                    result: None,
                    error: Some(RemoteError { code: codes::INVALID_REQUEST, message: format!("invalid request: {e}") }),
                }
            }
        };
        match self.handle(&request.method, request.params) {
            Ok(result) => Response { id, result: Some(result), error: None },
            Err(error) => Response { id, result: None, error: Some(error) },
        }
    }
}

/// Answer requests from `reader` on `writer` until end of input.
pub fn serve(service: Service<'_>, reader: impl BufRead, mut writer: impl Write) -> Result<()> {
    let handler = Handler::new(service)?;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = handler.respond(&line);
        let mut frame = to_frame(&response);
        frame.push('\n');
        writer.write_all(frame.as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}

/// Accept connections on `listener`, each served on its own thread. Returns
/// after `max_connections` connections have closed, or never when `None`.
pub fn serve_tcp(service: Service<'_>, listener: TcpListener, max_connections: Option<usize>) -> Result<()> {
    std::thread::scope(|scope| -> Result<()> {
        let mut accepted = 0;
        for stream in listener.incoming() {
            let stream = stream?;
            stream.set_nodelay(true)?;
            let reader = BufReader::new(stream.try_clone()?);
            scope.spawn(move || {
                // A failed connection only ends that connection.
                let _ = serve(service, reader, stream);
            });
            accepted += 1;
            if max_connections.is_some_and(|m| accepted >= m) {
                break;
            }
        }
        Ok(())
    })
}
