//! Beam search with online word-level re-ranking.
//!
//! At each step every live beam asks the generator for its `topk` best
//! extensions. Those `beams * topk` candidates receive a merged score; every
//! other extension is out of the running (discarded, or explicitly scored
//! `-inf` under [`Masking::NegInfinity`]). Candidates are ranked by
//! `(score desc, token id asc, beam index asc)`. Eos candidates ranked within
//! the top `beams` move to the completed pool; the best `beams` non-eos
//! candidates become the next live set. Search stops once the pool holds
//! `beams` hypotheses or the live beams reach `max_len` tokens.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::merge::{check_alpha, merge_candidate, MergeBreakdown, RankerSession, WordGate};
use crate::rerank::{rerank_nbest, NBestEntry};
use crate::scoring::{mean, CallCounts, Concurrency, CountingScorer, ModelInput, Scorer};
use crate::tokenization::Token;

pub const DEFAULT_MAX_LEN: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Online,
    Offline,
    GeneratorOnly,
}

/// How extensions outside the generator's top-k are removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Masking {
    /// Never materialize them.
    #[default]
    Discard,
    /// Request the full distribution and score the rest `-inf`.
    NegInfinity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub alpha: f64,
    pub topk: usize,
    pub beams: usize,
    pub max_len: usize,
    pub mode: Mode,
    #[serde(default)]
    pub masking: Masking,
    #[serde(default)]
    pub trace: bool,
    /// Score the candidates of one step concurrently when both scorers allow it.
    #[serde(default)]
    pub parallel: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            alpha: 0.5,
            topk: 5,
            beams: 5,
            max_len: DEFAULT_MAX_LEN,
            mode: Mode::Online,
            masking: Masking::Discard,
            trace: false,
            parallel: false,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self, generator_vocab: usize) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.topk == 0 || self.topk > generator_vocab {
            return Err(Error::Config(format!("topk {} must be in 1..={generator_vocab}", self.topk)));
        }
        if self.beams == 0 {
            return Err(Error::Config("beams must be at least 1".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        Ok(())
    }
}

/// One beam candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub surface: String,
    pub gen_tokens: Vec<Token>,
    pub gen_logprobs: Vec<f64>,
    /// Present whenever a ranker took part in scoring.
    pub merged: Option<MergeBreakdown>,
    pub score: f64,
    pub finished: bool,
}

impl Hypothesis {
    fn root() -> Self {
        Hypothesis {
            surface: String::new(),
            gen_tokens: Vec::new(),
            gen_logprobs: Vec::new(),
            merged: None,
            score: 0.0,
            finished: false,
        }
    }

    pub fn token_ids(&self) -> Vec<u32> {
        self.gen_tokens.iter().map(|t| t.id.0).collect()
    }

    pub fn gen_score(&self) -> f64 {
        mean(&self.gen_logprobs)
    }

    pub fn to_entry(&self, origin: &str) -> NBestEntry {
        let ranker_score = self.merged.as_ref().and_then(|b| b.full_r);
        NBestEntry {
            surface: self.surface.clone(),
            gen_score: self.merged.as_ref().and_then(|b| b.full_g).unwrap_or_else(|| self.gen_score()),
            ranker_score,
            merged: self.score,
            selector_score: None,
            origin: origin.to_string(),
        }
    }
}

/// Model evaluations made during one decode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeCalls {
    pub generator: CallCounts,
    pub ranker: CallCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceBeam {
    pub surface: String,
    pub tokens: Vec<String>,
    pub score: f64,
}

/// Structured decode trace, one record per event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Step {
        step: usize,
        live: Vec<TraceBeam>,
    },
    Merge {
        step: usize,
        beam: usize,
        token: String,
        surface: String,
        score: f64,
        masked: bool,
        breakdown: Option<MergeBreakdown>,
    },
    Select {
        step: usize,
        completed: Vec<TraceBeam>,
        live: Vec<TraceBeam>,
    },
}

#[derive(Debug, Clone)]
pub struct DecodeOutput {
    /// Completed hypotheses sorted by score, or the best live beams when
    /// nothing completed (see `completed`).
    pub hypotheses: Vec<Hypothesis>,
    /// False when `max_len` was hit with an empty completed pool.
    pub completed: bool,
    pub steps: usize,
    pub stop: StopReason,
    /// Live beams expanded at each step.
    pub live_per_step: Vec<usize>,
    /// Candidates admitted to scoring at each step.
    pub scored_per_step: Vec<usize>,
    pub calls: DecodeCalls,
    pub trace: Vec<TraceEvent>,
}

impl DecodeOutput {
    pub fn nbest(&self, origin: &str) -> Vec<NBestEntry> {
        self.hypotheses.iter().map(|h| h.to_entry(origin)).collect()
    }

    pub fn best(&self) -> Option<&Hypothesis> {
        self.hypotheses.first()
    }

    /// The flagged failure for callers that need a hard error.
    pub fn require_completed(self) -> Result<Self> {
        if self.completed {
            Ok(self)
        } else {
            Err(Error::Config(format!("no completed hypothesis within {} steps", self.steps)))
        }
    }
}

/// How each candidate's finished/unfinished status is decided.
#[derive(Clone, Copy)]
pub(crate) enum GateRule<'a> {
    Ranker,
    Always,
    GeneratorLookahead(&'a dyn Scorer, &'a ModelInput),
}

pub(crate) enum Scoring<'a> {
    GeneratorOnly,
    Merged { session: RankerSession<'a>, gate: GateRule<'a>, alpha: f64 },
}

struct Candidate {
    beam: usize,
    token: Token,
    logprob: f64,
    masked: bool,
}

fn trace_beam(h: &Hypothesis) -> TraceBeam {
    TraceBeam { surface: h.surface.clone(), tokens: h.gen_tokens.iter().map(|t| t.text.clone()).collect(), score: h.score }
}

fn extend(parent: &Hypothesis, token: &Token, logprob: f64) -> (Vec<Token>, Vec<f64>) {
    let mut tokens = parent.gen_tokens.clone();
    tokens.push(token.clone());
    let mut logprobs = parent.gen_logprobs.clone();
    logprobs.push(logprob);
    (tokens, logprobs)
}

fn score_candidate(
    generator: &dyn Scorer,
    scoring: &Scoring<'_>,
    parent: &Hypothesis,
    cand: &Candidate,
) -> Result<Hypothesis> {
    let tok = generator.tokenizer();
    let (tokens, logprobs) = extend(parent, &cand.token, cand.logprob);
    let finished = tok.boundary().is_eos(&cand.token);
    let surface = tok.detokenize(&tokens)?;
    if cand.masked {
        return Ok(Hypothesis {
            surface,
            gen_tokens: tokens,
            gen_logprobs: logprobs,
            merged: None,
            score: f64::NEG_INFINITY,
            finished,
        });
    }
    let (score, merged) = match scoring {
        Scoring::GeneratorOnly => (mean(&logprobs), None),
        Scoring::Merged { session, gate, alpha } => {
            let gate = match gate {
                GateRule::Ranker => WordGate::RankerPrediction,
                GateRule::Always => WordGate::Always,
                GateRule::GeneratorLookahead(g, input) if !finished => {
                    WordGate::Decided(crate::oracle::lookahead_word_end(*g, input, &tokens)?)
                }
                GateRule::GeneratorLookahead(..) => WordGate::Always,
            };
            let b = merge_candidate(tok, &tokens, &logprobs, session, *alpha, gate)?;
            (b.merged, Some(b))
        }
    };
    Ok(Hypothesis { surface, gen_tokens: tokens, gen_logprobs: logprobs, merged, score, finished })
}

/// The beam loop shared by every decoding mode.
pub(crate) fn run_beam(
    generator: &dyn Scorer,
    gen_input: &ModelInput,
    scoring: &Scoring<'_>,
    cfg: &EnsembleConfig,
    ranker_concurrency: Concurrency,
) -> Result<(Vec<Hypothesis>, bool, BeamStats)> {
    let vocab = generator.tokenizer().vocab_size();
    cfg.validate(vocab)?;
    let parallel = cfg.parallel
        && generator.concurrency() == Concurrency::Shared
        && ranker_concurrency == Concurrency::Shared;

    let mut live = vec![Hypothesis::root()];
    let mut pool: Vec<Hypothesis> = Vec::new();
    let mut stats = BeamStats::default();

    while !live.is_empty() && pool.len() < cfg.beams && live[0].gen_tokens.len() < cfg.max_len {
        let step = stats.steps;
        stats.steps += 1;
        stats.live_per_step.push(live.len());
        if cfg.trace {
            stats.trace.push(TraceEvent::Step { step, live: live.iter().map(trace_beam).collect() });
        }

        let request_k = match cfg.masking {
            Masking::Discard => cfg.topk,
            Masking::NegInfinity => vocab,
        };
        let mut candidates = Vec::with_capacity(live.len() * cfg.topk);
        for (beam, hyp) in live.iter().enumerate() {
            let dist = generator.next_distribution(gen_input, &hyp.gen_tokens, request_k)?;
            for (rank, e) in dist.entries.into_iter().enumerate() {
                candidates.push(Candidate { beam, token: e.token, logprob: e.logprob, masked: rank >= cfg.topk });
            }
        }
        stats.scored_per_step.push(candidates.iter().filter(|c| !c.masked).count());

        let scored: Vec<Hypothesis> = if parallel {
            candidates
                .par_iter()
                .map(|c| score_candidate(generator, scoring, &live[c.beam], c))
                .collect::<Result<_>>()?
        } else {
            candidates.iter().map(|c| score_candidate(generator, scoring, &live[c.beam], c)).collect::<Result<_>>()?
        };

        if cfg.trace {
            for (c, h) in candidates.iter().zip(&scored) {
                stats.trace.push(TraceEvent::Merge {
                    step,
                    beam: c.beam,
                    token: c.token.text.clone(),
                    surface: h.surface.clone(),
                    score: h.score,
                    masked: c.masked,
                    breakdown: h.merged.clone(),
                });
            }
        }

        let mut order: Vec<usize> = (0..scored.len()).filter(|&i| scored[i].score > f64::NEG_INFINITY).collect();
        order.sort_by(|&a, &b| {
            scored[b]
                .score
                .total_cmp(&scored[a].score)
                .then(candidates[a].token.id.cmp(&candidates[b].token.id))
                .then(candidates[a].beam.cmp(&candidates[b].beam))
        });

        let mut scored: Vec<Option<Hypothesis>> = scored.into_iter().map(Some).collect();
        let mut next_live = Vec::with_capacity(cfg.beams);
        let mut newly_completed = Vec::new();
        for (rank, &i) in order.iter().enumerate() {
            let finished = scored[i].as_ref().map(|h| h.finished).unwrap_or(false);
            if finished {
                if rank < cfg.beams {
                    newly_completed.push(scored[i].take().expect("candidate taken once"));
                }
            } else if next_live.len() < cfg.beams {
                next_live.push(scored[i].take().expect("candidate taken once"));
            }
            if rank + 1 >= cfg.beams && next_live.len() == cfg.beams {
                break;
            }
        }
        if cfg.trace {
            stats.trace.push(TraceEvent::Select {
                step,
                completed: newly_completed.iter().map(trace_beam).collect(),
                live: next_live.iter().map(trace_beam).collect(),
            });
        }
        pool.extend(newly_completed);
        live = next_live;
    }

    stats.stop = if pool.len() >= cfg.beams {
        StopReason::PoolFull
    } else if live.is_empty() {
        StopReason::Exhausted
    } else {
        StopReason::MaxLen
    };
    if pool.is_empty() {
        live.retain(|h| !h.gen_tokens.is_empty());
        return Ok((live, false, stats));
    }
    // Stable: equal scores keep the order in which they completed.
    pool.sort_by(|a, b| b.score.total_cmp(&a.score));
    pool.truncate(cfg.beams);
    Ok((pool, true, stats))
}

/// Why the beam loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The completed pool reached `beams`.
    #[default]
    PoolFull,
    /// The live beams reached `max_len`.
    MaxLen,
    /// No live beam had a finite-scored extension left.
    Exhausted,
}

#[derive(Debug, Default)]
pub(crate) struct BeamStats {
    pub steps: usize,
    pub stop: StopReason,
    pub live_per_step: Vec<usize>,
    pub scored_per_step: Vec<usize>,
    pub trace: Vec<TraceEvent>,
}

pub(crate) fn finish(
    (hypotheses, completed, stats): (Vec<Hypothesis>, bool, BeamStats),
    calls: DecodeCalls,
) -> DecodeOutput {
    DecodeOutput {
        hypotheses,
        completed,
        steps: stats.steps,
        stop: stats.stop,
        live_per_step: stats.live_per_step,
        scored_per_step: stats.scored_per_step,
        calls,
        trace: stats.trace,
    }
}

/// Decode with a gating rule other than the ranker's prediction. Used by the
/// reference baselines.
pub(crate) fn decode_with_gate(
    generator: &dyn Scorer,
    ranker: &dyn Scorer,
    inputs: (&ModelInput, &ModelInput),
    cfg: &EnsembleConfig,
    gate: GateKind,
) -> Result<DecodeOutput> {
    let g = CountingScorer::new(generator);
    let r = CountingScorer::new(ranker);
    let rule = match gate {
        GateKind::Ranker => GateRule::Ranker,
        GateKind::Always => GateRule::Always,
        GateKind::GeneratorLookahead => GateRule::GeneratorLookahead(&g, inputs.0),
    };
    let scoring = Scoring::Merged { session: RankerSession::new(&r, inputs.1), gate: rule, alpha: cfg.alpha };
    let result = run_beam(&g, inputs.0, &scoring, cfg, ranker.concurrency())?;
    Ok(finish(result, DecodeCalls { generator: g.counts(), ranker: r.counts() }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum GateKind {
    Ranker,
    Always,
    GeneratorLookahead,
}

/// Beam search with the ranker merged in at word boundaries.
pub fn decode_online(
    generator: &dyn Scorer,
    ranker: &dyn Scorer,
    inputs: (&ModelInput, &ModelInput),
    cfg: &EnsembleConfig,
) -> Result<DecodeOutput> {
    if cfg.mode != Mode::Online {
        return Err(Error::Config(format!("decode_online called with mode {:?}", cfg.mode)));
    }
    decode_with_gate(generator, ranker, inputs, cfg, GateKind::Ranker)
}

/// Length-normalized beam search over the generator alone.
pub fn decode_generator_only(generator: &dyn Scorer, input: &ModelInput, cfg: &EnsembleConfig) -> Result<DecodeOutput> {
    let g = CountingScorer::new(generator);
    let result = run_beam(&g, input, &Scoring::GeneratorOnly, cfg, Concurrency::Shared)?;
    Ok(finish(result, DecodeCalls { generator: g.counts(), ranker: CallCounts::default() }))
}

/// Result of [`decode`] in any mode.
#[derive(Debug, Clone)]
pub struct ModeOutput {
    pub entries: Vec<NBestEntry>,
    pub decode: DecodeOutput,
}

/// Dispatch on `cfg.mode`. Offline mode decodes an N-best list with the
/// generator (`beams` wide) and re-ranks it with the ranker.
pub fn decode(
    generator: &dyn Scorer,
    ranker: Option<&dyn Scorer>,
    inputs: (&ModelInput, &ModelInput),
    cfg: &EnsembleConfig,
) -> Result<ModeOutput> {
    let need_ranker = || ranker.ok_or_else(|| Error::Config(format!("mode {:?} requires a ranker", cfg.mode)));
    match cfg.mode {
        Mode::GeneratorOnly => {
            let out = decode_generator_only(generator, inputs.0, cfg)?;
            Ok(ModeOutput { entries: out.nbest(generator.identity()), decode: out })
        }
        Mode::Online => {
            let out = decode_online(generator, need_ranker()?, inputs, cfg)?;
            Ok(ModeOutput { entries: out.nbest(generator.identity()), decode: out })
        }
        Mode::Offline => {
            let ranker = need_ranker()?;
            let mut out = decode_generator_only(generator, inputs.0, cfg)?;
            let counted = CountingScorer::new(ranker);
            let entries = rerank_nbest(&out.nbest(generator.identity()), &counted, inputs.1, cfg.alpha)?;
            out.calls.ranker = counted.counts();
            Ok(ModeOutput { entries, decode: out })
        }
    }
}
