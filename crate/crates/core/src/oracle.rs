//! Reference implementations for verification: exhaustive enumeration of the
//! finished-branch objective, token-level fusion, and look-ahead word-end
//! detection.
//!
//! [`enumerate_best`] only uses [`Scorer::score_prefix`] and the tokenizers;
//! it shares no code with the merge or search modules.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scoring::{ModelInput, Scorer};
use crate::search::{decode_with_gate, DecodeOutput, EnsembleConfig, GateKind};
use crate::tokenization::{SubwordTokenizer, Token};

/// Largest search space [`enumerate_best`] accepts.
pub const MAX_SEARCH_SPACE: f64 = 1e7;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleBest {
    pub surface: String,
    pub tokens: Vec<Token>,
    pub merged: f64,
    pub gen_score: f64,
    pub ranker_score: f64,
    /// Terminated sequences with a finite score.
    pub scored: usize,
    /// All terminated sequences visited.
    pub enumerated: usize,
}

fn avg(xs: &[f64]) -> f64 {
    let mut sum = 0.0;
    for &x in xs {
        sum += x;
    }
    sum / xs.len() as f64
}

fn blend(alpha: f64, g: f64, r: f64) -> f64 {
    if alpha == 1.0 {
        g
    } else if alpha == 0.0 {
        r
    } else {
        alpha * g + (1.0 - alpha) * r
    }
}

/// Every generator token sequence of at most `max_len` tokens that ends in
/// eos, with eos appearing nowhere else. Sequences are in lexicographic id
/// order.
fn terminated_sequences(vocab: &[Token], eos: &Token, max_len: usize) -> Vec<Vec<Token>> {
    let body: Vec<&Token> = vocab.iter().filter(|t| t.id != eos.id).collect();
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<Token>> = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for prefix in frontier {
            let mut done = prefix.clone();
            done.push(eos.clone());
            out.push(done);
            for t in &body {
                let mut p = prefix.clone();
                p.push((*t).clone());
                next.push(p);
            }
        }
        frontier = next;
    }
    out.sort_by(|a, b| a.iter().map(|t| t.id).cmp(b.iter().map(|t| t.id)));
    out
}

/// Argmax of `alpha * mean(G) + (1 - alpha) * mean(R)` over every
/// terminated generator sequence of at most `max_len` tokens. The ranker
/// scores its own tokenization of each surface followed by eos. Ties go to
/// the lexicographically smallest generator id sequence.
pub fn enumerate_best(
    generator: &dyn Scorer,
    ranker: &dyn Scorer,
    inputs: (&ModelInput, &ModelInput),
    alpha: f64,
    max_len: usize,
) -> Result<Option<OracleBest>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    let g_tok = generator.tokenizer();
    let v = g_tok.vocab_size() as f64;
    let size = v.powi(max_len as i32);
    if size > MAX_SEARCH_SPACE {
        return Err(Error::SearchSpaceTooLarge { size, limit: MAX_SEARCH_SPACE });
    }
    let vocab = g_tok.vocabulary()?;
    let sequences = terminated_sequences(&vocab, &g_tok.eos(), max_len);
    let enumerated = sequences.len();

    let scored: Vec<Option<(usize, f64, f64, f64, String)>> = sequences
        .par_iter()
        .enumerate()
        .map(|(i, seq)| -> Result<Option<(usize, f64, f64, f64, String)>> {
            let g = avg(&generator.score_prefix(inputs.0, seq)?);
            if !g.is_finite() {
                return Ok(None);
            }
            let surface = g_tok.detokenize(seq)?;
            let r_tok = ranker.tokenizer();
            let mut r_seq = r_tok.tokenize(&surface)?;
            r_seq.push(r_tok.eos());
            let r = avg(&ranker.score_prefix(inputs.1, &r_seq)?);
            let merged = blend(alpha, g, r);
            Ok(merged.is_finite().then_some((i, merged, g, r, surface)))
        })
        .collect::<Result<_>>()?;

    let finite: Vec<_> = scored.into_iter().flatten().collect();
    let count = finite.len();
    let best = finite.into_iter().reduce(|a, b| if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a });
    Ok(best.map(|(i, merged, gen_score, ranker_score, surface)| OracleBest {
        surface,
        tokens: sequences[i].clone(),
        merged,
        gen_score,
        ranker_score,
        scored: count,
        enumerated,
    }))
}

/// Generator-only counterpart of [`enumerate_best`]: argmax of the
/// length-normalized generator score.
pub fn enumerate_generator_best(generator: &dyn Scorer, input: &ModelInput, max_len: usize) -> Result<Option<OracleBest>> {
    enumerate_best(generator, &NullRanker(generator), (input, input), 1.0, max_len)
}

/// Scores every ranker query as zero; only valid at `alpha == 1`.
struct NullRanker<'a>(&'a dyn Scorer);

impl Scorer for NullRanker<'_> {
    fn identity(&self) -> &str {
        "null"
    }

    fn tokenizer(&self) -> &dyn SubwordTokenizer {
        self.0.tokenizer()
    }

    fn next_distribution(
        &self,
        input: &ModelInput,
        prefix: &[Token],
        k: usize,
    ) -> Result<crate::scoring::ScoredDistribution> {
        self.0.next_distribution(input, prefix, k)
    }

    fn score_prefix(&self, _input: &ModelInput, tokens: &[Token]) -> Result<Vec<f64>> {
        Ok(vec![0.0; tokens.len()])
    }
}

/// True iff the generator's most likely next token after `prefix` starts a
/// new word or is eos. Costs one extra generator evaluation.
pub fn lookahead_word_end(generator: &dyn Scorer, input: &ModelInput, prefix: &[Token]) -> Result<bool> {
    let next = generator.next_distribution(input, prefix, 1)?;
    Ok(next.argmax().map(|e| generator.tokenizer().starts_new_word(&e.token)).unwrap_or(false))
}

/// Token-level fusion: every candidate takes the finished branch, so the
/// ranker scores partial words under whatever tokenization it gives them.
pub fn naive_token_fusion(
    generator: &dyn Scorer,
    ranker: &dyn Scorer,
    inputs: (&ModelInput, &ModelInput),
    cfg: &EnsembleConfig,
) -> Result<DecodeOutput> {
    decode_with_gate(generator, ranker, inputs, cfg, GateKind::Always)
}

/// Online decoding with word ends detected by a generator look-ahead
/// instead of the ranker.
pub fn decode_lookahead(
    generator: &dyn Scorer,
    ranker: &dyn Scorer,
    inputs: (&ModelInput, &ModelInput),
    cfg: &EnsembleConfig,
) -> Result<DecodeOutput> {
    decode_with_gate(generator, ranker, inputs, cfg, GateKind::GeneratorLookahead)
}
