//! Merged generator/ranker scoring of one beam candidate.
//!
//! The ranker only contributes to completed words. Whether the candidate's
//! last word is complete is decided by the ranker's own next-token argmax
//! over its tokenization of the candidate: a word-initial token (or eos)
//! means the word is done.
//!
//! * Finished: `alpha * mean(G) + (1 - alpha) * mean(R)` over the full
//!   generator (`n`) and ranker (`m`) token sequences.
//! * Unfinished: split both views before the last word (`j` generator
//!   tokens, `k` ranker tokens), blend the previous-word averages, and
//!   re-normalize with the generator's last-word log-probability:
//!   `(prev_gr * j + last_g) / n`. With `j == 0` the prev term is absent.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::{mean, total, ModelInput, Scorer};
use crate::tokenization::{last_word_start, SubwordTokenizer, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Finished,
    Unfinished,
}

/// Every intermediate value of one merged-score computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeBreakdown {
    pub branch: Branch,
    pub alpha: f64,
    /// Generator token count.
    pub n: usize,
    /// Ranker token count.
    pub m: usize,
    /// Generator tokens before the last word.
    pub j: usize,
    /// Ranker tokens before the last word.
    pub k: usize,
    pub full_g: Option<f64>,
    pub full_r: Option<f64>,
    pub prev_g: Option<f64>,
    pub prev_r: Option<f64>,
    pub prev_gr: Option<f64>,
    pub last_g: Option<f64>,
    pub merged: f64,
    /// Text of the ranker's predicted next token, when it was consulted.
    pub ranker_next: Option<String>,
}

/// `alpha * g + (1 - alpha) * r`, omitting a term whose weight is zero so the
/// endpoints reproduce one model's score exactly (and never form `0 * -inf`).
pub fn weighted(alpha: f64, g: f64, r: f64) -> f64 {
    if alpha == 1.0 {
        g
    } else if alpha == 0.0 {
        r
    } else {
        alpha * g + (1.0 - alpha) * r
    }
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::AlphaOutOfRange(alpha))
    }
}

/// How the finished/unfinished decision is made for non-eos candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WordGate {
    /// Ranker's next-token argmax (the default).
    RankerPrediction,
    /// Treat every candidate as finished (token-level fusion).
    Always,
    /// Decision made elsewhere, e.g. by a generator look-ahead.
    Decided(bool),
}

/// True iff the ranker's most likely next token starts a new word or is eos.
pub fn is_word_finished(ranker: &dyn Scorer, input: &ModelInput, ranker_tokens: &[Token]) -> Result<bool> {
    let next = ranker.next_distribution(input, ranker_tokens, 1)?;
    Ok(next.argmax().map(|e| ranker.tokenizer().starts_new_word(&e.token)).unwrap_or(false))
}

/// Ranker state for one decode: per-token scores of completed-word prefixes,
/// keyed by their surface string.
///
/// Completed-word prefixes retokenize identically inside any longer text,
/// so cached scores equal from-scratch scores.
pub struct RankerSession<'a> {
    ranker: &'a dyn Scorer,
    input: &'a ModelInput,
    cache: Mutex<HashMap<String, Vec<f64>>>,
}

/// Ranker view of a candidate.
#[derive(Debug, Clone)]
pub struct RankerView {
    pub tokens: Vec<Token>,
    pub logprobs: Vec<f64>,
    /// Tokens before the last word (`k`).
    pub previous_len: usize,
    pub next: Option<Token>,
}

impl<'a> RankerSession<'a> {
    pub fn new(ranker: &'a dyn Scorer, input: &'a ModelInput) -> Self {
        RankerSession { ranker, input, cache: Mutex::new(HashMap::new()) }
    }

    pub fn ranker(&self) -> &'a dyn Scorer {
        self.ranker
    }

    pub fn cached_prefixes(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    /// Tokenize `surface` with the ranker (appending eos when `with_eos`),
    /// score it with a single ranker evaluation, and cache the completed-word part.
    pub fn evaluate(&self, surface: &str, with_eos: bool) -> Result<RankerView> {
        let tok = self.ranker.tokenizer();
        let mut tokens = tok.tokenize(surface)?;
        let back = tok.detokenize(&tokens)?;
        if back != surface {
            return Err(Error::TokenizationDisagreement { generator: surface.to_string(), ranker: back });
        }
        let k = last_word_start(&tokens, tok.boundary());
        let prev_surface = tok.detokenize(&tokens[..k])?;
        if with_eos {
            tokens.push(tok.eos());
        }

        let cached = self.cache.lock().expect("cache lock").get(&prev_surface).cloned();
        let (logprobs, next) = match cached {
            Some(prev) if prev.len() == k => {
                let adv = self.ranker.advance(self.input, &tokens[..k], &tokens[k..], 1)?;
                let mut all = prev;
                all.extend(adv.logprobs);
                (all, adv.next)
            }
            _ => {
                let adv = self.ranker.advance(self.input, &[], &tokens, 1)?;
                self.cache.lock().expect("cache lock").insert(prev_surface, adv.logprobs[..k].to_vec());
                (adv.logprobs, adv.next)
            }
        };
        let next = next.argmax().map(|e| e.token.clone());
        Ok(RankerView { tokens, logprobs, previous_len: k, next })
    }
}

/// Merged score of a candidate given as generator tokens with their
/// log-probabilities. A trailing generator eos forces the finished branch.
pub fn merge_candidate(
    generator_tokenizer: &dyn SubwordTokenizer,
    gen_tokens: &[Token],
    gen_logprobs: &[f64],
    session: &RankerSession<'_>,
    alpha: f64,
    gate: WordGate,
) -> Result<MergeBreakdown> {
    check_alpha(alpha)?;
    debug_assert_eq!(gen_tokens.len(), gen_logprobs.len());
    let g_boundary = generator_tokenizer.boundary();
    let ends_in_eos = gen_tokens.last().map(|t| g_boundary.is_eos(t)).unwrap_or(false);
    let surface = generator_tokenizer.detokenize(gen_tokens)?;
    let view = session.evaluate(&surface, ends_in_eos)?;
    let ranker_tok = session.ranker().tokenizer();
    let ranker_next = view.next.as_ref().map(|t| t.text.clone());

    let finished = ends_in_eos
        || match gate {
            WordGate::RankerPrediction => view.next.as_ref().map(|t| ranker_tok.starts_new_word(t)).unwrap_or(false),
            WordGate::Always => true,
            WordGate::Decided(done) => done,
        };

    let n = gen_tokens.len();
    let m = view.tokens.len();
    if finished {
        let full_g = mean(gen_logprobs);
        let full_r = mean(&view.logprobs);
        return Ok(MergeBreakdown {
            branch: Branch::Finished,
            alpha,
            n,
            m,
            j: last_word_start(gen_tokens, g_boundary),
            k: view.previous_len,
            full_g: Some(full_g),
            full_r: Some(full_r),
            prev_g: None,
            prev_r: None,
            prev_gr: None,
            last_g: None,
            merged: weighted(alpha, full_g, full_r),
            ranker_next,
        });
    }

    let j = last_word_start(gen_tokens, g_boundary);
    let k = view.previous_len;
    let gen_prev = generator_tokenizer.detokenize(&gen_tokens[..j])?;
    let ranker_prev = ranker_tok.detokenize(&view.tokens[..k])?;
    if gen_prev != ranker_prev || (j == 0) != (k == 0) {
        return Err(Error::TokenizationDisagreement { generator: gen_prev, ranker: ranker_prev });
    }
    let last = &gen_logprobs[j..];
    let last_g = total(last);

    if j == 0 {
        return Ok(MergeBreakdown {
            branch: Branch::Unfinished,
            alpha,
            n,
            m,
            j,
            k,
            full_g: None,
            full_r: None,
            prev_g: None,
            prev_r: None,
            prev_gr: None,
            last_g: Some(last_g),
            merged: total(gen_logprobs) / n as f64,
            ranker_next,
        });
    }

    let prev_sum_g = total(&gen_logprobs[..j]);
    let prev_g = prev_sum_g / j as f64;
    let prev_r = mean(&view.logprobs[..k]);
    let prev_gr = weighted(alpha, prev_g, prev_r);
    // prev_gr * j, accumulated so that alpha = 1 reproduces the generator's
    // running sum bit for bit; the last word is then added token by token.
    let scaled_prev = weighted(alpha, prev_sum_g, prev_r * j as f64);
    let numerator = last.iter().fold(scaled_prev, |acc, &x| acc + x);
    Ok(MergeBreakdown {
        branch: Branch::Unfinished,
        alpha,
        n,
        m,
        j,
        k,
        full_g: None,
        full_r: None,
        prev_g: Some(prev_g),
        prev_r: Some(prev_r),
        prev_gr: Some(prev_gr),
        last_g: Some(last_g),
        merged: numerator / n as f64,
        ranker_next,
    })
}

/// Merged score of `generator_tokens` (which may end in eos), scoring both
/// views from scratch.
pub fn merge_score_tokens(
    generator_tokens: &[Token],
    generator: &dyn Scorer,
    ranker: &dyn Scorer,
    inputs: (&ModelInput, &ModelInput),
    alpha: f64,
) -> Result<MergeBreakdown> {
    check_alpha(alpha)?;
    let gen_logprobs = generator.score_prefix(inputs.0, generator_tokens)?;
    let session = RankerSession::new(ranker, inputs.1);
    merge_candidate(generator.tokenizer(), generator_tokens, &gen_logprobs, &session, alpha, WordGate::RankerPrediction)
}

/// Merged score of a candidate surface string under the generator's own
/// tokenization of it.
pub fn merge_score(
    candidate_surface: &str,
    generator: &dyn Scorer,
    ranker: &dyn Scorer,
    inputs: (&ModelInput, &ModelInput),
    alpha: f64,
) -> Result<MergeBreakdown> {
    check_alpha(alpha)?;
    let tokens = generator.tokenizer().tokenize(candidate_surface)?;
    if tokens.is_empty() {
        return Err(Error::Config("candidate surface must contain at least one token".into()));
    }
    merge_score_tokens(&tokens, generator, ranker, inputs, alpha)
}
