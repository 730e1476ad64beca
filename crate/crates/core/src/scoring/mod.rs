//! The model abstraction shared by generator and ranker.
//!
//! All scores are natural-log probabilities in `f64`.

mod ngram;
mod table;

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

pub use ngram::NgramModel;
pub use table::{TableModel, TableModelBuilder, TokenRef};

use crate::error::Result;
use crate::tokenization::{SubwordTokenizer, Token};

/// Which ensemble slot a model input is addressed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Generator,
    Ranker,
}

/// The conditioning input of one decode, e.g. a source sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelInput {
    pub payload: Vec<u8>,
    pub role: Role,
}

impl ModelInput {
    pub fn new(payload: impl Into<Vec<u8>>, role: Role) -> Self {
        ModelInput { payload: payload.into(), role }
    }

    pub fn generator(payload: impl Into<Vec<u8>>) -> Self {
        Self::new(payload, Role::Generator)
    }

    pub fn ranker(payload: impl Into<Vec<u8>>) -> Self {
        Self::new(payload, Role::Ranker)
    }

    /// Payload as text, used as the context key of built-in models.
    pub fn key(&self) -> std::borrow::Cow<'_, str> {
        String::from_utf8_lossy(&self.payload)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntry {
    pub token: Token,
    pub logprob: f64,
}

/// Top-k next-token log-probabilities, sorted by logprob descending with ties
/// broken by ascending token id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDistribution {
    pub entries: Vec<ScoredEntry>,
    pub truncated_to: usize,
}

impl ScoredDistribution {
    /// Sort `entries` into canonical order and keep the best `k`.
    pub fn top_k(mut entries: Vec<ScoredEntry>, k: usize) -> Self {
        entries.sort_by(|a, b| b.logprob.total_cmp(&a.logprob).then(a.token.id.cmp(&b.token.id)));
        entries.truncate(k);
        ScoredDistribution { entries, truncated_to: k }
    }

    pub fn argmax(&self) -> Option<&ScoredEntry> {
        self.entries.first()
    }

    pub fn is_canonically_sorted(&self) -> bool {
        self.entries.windows(2).all(|w| {
            w[0].logprob > w[1].logprob || (w[0].logprob == w[1].logprob && w[0].token.id < w[1].token.id)
        })
    }
}

/// Result of [`Scorer::advance`]: per-token scores of an extension and the
/// distribution that follows it.
#[derive(Debug, Clone, PartialEq)]
pub struct Advance {
    pub logprobs: Vec<f64>,
    pub next: ScoredDistribution,
}

/// Whether a scorer tolerates concurrent queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Concurrency {
    Shared,
    Exclusive,
}

/// A sequence model that scores its own tokenization of text.
pub trait Scorer: Send + Sync {
    fn identity(&self) -> &str;

    fn tokenizer(&self) -> &dyn SubwordTokenizer;

    fn concurrency(&self) -> Concurrency {
        Concurrency::Shared
    }

    /// Top-`k` continuations of `prefix`. Zero-probability tokens are omitted.
    fn next_distribution(&self, input: &ModelInput, prefix: &[Token], k: usize) -> Result<ScoredDistribution>;

    /// `log P(token_i | token_<i, input)` for every position.
    fn score_prefix(&self, input: &ModelInput, tokens: &[Token]) -> Result<Vec<f64>>;

    /// Score `extension` after `prefix` and predict what follows, as one
    /// model evaluation.
    fn advance(&self, input: &ModelInput, prefix: &[Token], extension: &[Token], k: usize) -> Result<Advance> {
        let mut full = prefix.to_vec();
        full.extend_from_slice(extension);
        let all = self.score_prefix(input, &full)?;
        let next = self.next_distribution(input, &full, k)?;
        Ok(Advance { logprobs: all[prefix.len()..].to_vec(), next })
    }
}

/// Left-to-right sum; every score in the crate is accumulated in this order.
pub fn total(logprobs: &[f64]) -> f64 {
    logprobs.iter().fold(0.0, |acc, &x| acc + x)
}

/// Length-normalized score, 0 for an empty sequence.
pub fn mean(logprobs: &[f64]) -> f64 {
    if logprobs.is_empty() {
        0.0
    } else {
        total(logprobs) / logprobs.len() as f64
    }
}

/// Build a canonical top-k distribution from a full probability vector.
pub(crate) fn distribution_from_probs(vocab: &[Token], probs: &[f64], k: usize) -> ScoredDistribution {
    let entries = vocab
        .iter()
        .zip(probs)
        .filter(|(_, &p)| p > 0.0)
        .map(|(t, &p)| ScoredEntry { token: t.clone(), logprob: p.ln() })
        .collect();
    ScoredDistribution::top_k(entries, k)
}

/// Call counts observed by a [`CountingScorer`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    pub next_distribution: u64,
    pub score_prefix: u64,
    pub advance: u64,
}

impl CallCounts {
    pub fn total(&self) -> u64 {
        self.next_distribution + self.score_prefix + self.advance
    }
}

/// Wraps a scorer and counts model evaluations by entry point.
pub struct CountingScorer<'a> {
    inner: &'a dyn Scorer,
    next_distribution: AtomicU64,
    score_prefix: AtomicU64,
    advance: AtomicU64,
}

impl<'a> CountingScorer<'a> {
    pub fn new(inner: &'a dyn Scorer) -> Self {
        CountingScorer {
            inner,
            next_distribution: AtomicU64::new(0),
            score_prefix: AtomicU64::new(0),
            advance: AtomicU64::new(0),
        }
    }

    pub fn counts(&self) -> CallCounts {
        CallCounts {
            next_distribution: self.next_distribution.load(Ordering::Relaxed),
            score_prefix: self.score_prefix.load(Ordering::Relaxed),
            advance: self.advance.load(Ordering::Relaxed),
        }
    }
}

impl Scorer for CountingScorer<'_> {
    fn identity(&self) -> &str {
        self.inner.identity()
    }

    fn tokenizer(&self) -> &dyn SubwordTokenizer {
        self.inner.tokenizer()
    }

    fn concurrency(&self) -> Concurrency {
        self.inner.concurrency()
    }

    fn next_distribution(&self, input: &ModelInput, prefix: &[Token], k: usize) -> Result<ScoredDistribution> {
        self.next_distribution.fetch_add(1, Ordering::Relaxed);
        self.inner.next_distribution(input, prefix, k)
    }

    fn score_prefix(&self, input: &ModelInput, tokens: &[Token]) -> Result<Vec<f64>> {
        self.score_prefix.fetch_add(1, Ordering::Relaxed);
        self.inner.score_prefix(input, tokens)
    }

    fn advance(&self, input: &ModelInput, prefix: &[Token], extension: &[Token], k: usize) -> Result<Advance> {
        self.advance.fetch_add(1, Ordering::Relaxed);
        self.inner.advance(input, prefix, extension, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenization::Tokenizer;

    fn abc() -> Tokenizer {
        Tokenizer::new(["<eos>", "a", "b", "c"], "_").unwrap()
    }

    #[test]
    fn table_lookup_top1() {
        let model = TableModel::builder("t", abc())
            .row("*", &["a"], &[("b", 0.7), ("c", 0.3)])
            .build()
            .unwrap();
        let input = ModelInput::generator("x");
        let a = model.tokenizer().tokenize("a").unwrap();
        let dist = model.next_distribution(&input, &a, 1).unwrap();
        assert_eq!(dist.entries.len(), 1);
        assert_eq!(dist.entries[0].token.text, "b");
        assert_eq!(dist.entries[0].logprob, 0.7f64.ln());
    }

    #[test]
    fn uniform_ties_break_by_id() {
        let model = TableModel::builder("u", abc()).build().unwrap();
        let dist = model.next_distribution(&ModelInput::generator(""), &[], 2).unwrap();
        let ids: Vec<u32> = dist.entries.iter().map(|e| e.token.id.0).collect();
        assert_eq!(ids, [0, 1]);
        for e in &dist.entries {
            assert_eq!(e.logprob, -(4f64).ln());
        }
    }

    #[test]
    fn full_distribution_normalizes() {
        let model = TableModel::builder("t", abc())
            .row("*", &["a"], &[("b", 0.7)])
            .build()
            .unwrap();
        let a = model.tokenizer().tokenize("a").unwrap();
        let dist = model.next_distribution(&ModelInput::generator(""), &a, 4).unwrap();
        let mass: f64 = dist.entries.iter().map(|e| e.logprob.exp()).sum();
        assert!((mass - 1.0).abs() < 1e-9);
        assert!(dist.is_canonically_sorted());
    }

    #[test]
    fn chain_rule_scores() {
        let tok = abc();
        let model = TableModel::builder("chain", tok.clone())
            .row("*", &[], &[("a", 0.5), ("b", 0.5)])
            .row("*", &["a"], &[("b", 0.5), ("c", 0.5)])
            .row("*", &["a", "b"], &[("c", 0.25), ("a", 0.75)])
            .build()
            .unwrap();
        let seq = tok.lookup(&["a", "b", "c"]);
        let lp = model.score_prefix(&ModelInput::generator(""), &seq).unwrap();
        assert_eq!(lp, vec![0.5f64.ln(), 0.5f64.ln(), 0.25f64.ln()]);
        assert!((total(&lp) - 0.0625f64.ln()).abs() < 1e-12);
        assert!(model.score_prefix(&ModelInput::generator(""), &[]).unwrap().is_empty());
        assert_eq!(total(&[]), 0.0);
    }

    #[test]
    fn counting_wrapper() {
        let model = TableModel::builder("u", abc()).build().unwrap();
        let counted = CountingScorer::new(&model);
        let input = ModelInput::generator("");
        counted.next_distribution(&input, &[], 1).unwrap();
        counted.advance(&input, &[], &abc().lookup(&["a"]), 1).unwrap();
        counted.score_prefix(&input, &[]).unwrap();
        assert_eq!(counted.counts(), CallCounts { next_distribution: 1, score_prefix: 1, advance: 1 });
        assert_eq!(counted.counts().total(), 3);
    }

    #[test]
    fn default_advance_matches_parts() {
        let tok = abc();
        let model = TableModel::builder("t", tok.clone())
            .row("*", &["a"], &[("b", 0.6), ("c", 0.1)])
            .build()
            .unwrap();
        let input = ModelInput::generator("");
        let prefix = tok.lookup(&["a"]);
        let ext = tok.lookup(&["b", "c"]);
        let adv = model.advance(&input, &prefix, &ext, 2).unwrap();
        let mut full = prefix.clone();
        full.extend(ext);
        assert_eq!(adv.logprobs, model.score_prefix(&input, &full).unwrap()[1..].to_vec());
        assert_eq!(adv.next, model.next_distribution(&input, &full, 2).unwrap());
    }
}
