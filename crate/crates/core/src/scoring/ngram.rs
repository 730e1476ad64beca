//! Witten-Bell interpolated n-gram model over a tokenizer's subword units.
//!
//! Corpus lines are `sentence` or `key<TAB>sentence`. Sentences carrying a key
//! train a keyed model whose lowest order interpolates with the unkeyed model
//! instead of the uniform distribution, so a payload equal to the key shifts
//! the model toward that key's sentences.

use std::collections::HashMap;
use std::path::Path;

use super::{distribution_from_probs, Advance, ModelInput, ScoredDistribution, Scorer};
use crate::error::{Error, Result};
use crate::tokenization::{SubwordTokenizer, Token, Tokenizer};

const BOS: u32 = u32::MAX;

#[derive(Debug, Default, Clone)]
struct ContextStats {
    total: u64,
    followers: HashMap<u32, u64>,
}

#[derive(Debug, Default, Clone)]
struct Counts {
    contexts: HashMap<Vec<u32>, ContextStats>,
}

impl Counts {
    fn add_sentence(&mut self, ids: &[u32], order: usize) {
        let mut padded = vec![BOS; order - 1];
        padded.extend_from_slice(ids);
        for i in (order - 1)..padded.len() {
            let w = padded[i];
            for len in 0..order {
                let ctx = padded[i - len..i].to_vec();
                let stats = self.contexts.entry(ctx).or_default();
                stats.total += 1;
                *stats.followers.entry(w).or_default() += 1;
            }
        }
    }

    /// Interpolate from order 0 upward, starting from `base`.
    fn interpolate(&self, padded_history: &[u32], order: usize, base: Vec<f64>) -> Vec<f64> {
        let mut probs = base;
        for len in 0..order {
            let ctx = &padded_history[padded_history.len() - len..];
            let Some(stats) = self.contexts.get(ctx) else { continue };
            let types = stats.followers.len() as f64;
            let denom = stats.total as f64 + types;
            for (w, p) in probs.iter_mut().enumerate() {
                let c = stats.followers.get(&(w as u32)).copied().unwrap_or(0) as f64;
                *p = (c + types * *p) / denom;
            }
        }
        probs
    }
}

#[derive(Debug, Clone)]
pub struct NgramModel {
    identity: String,
    tokenizer: Tokenizer,
    order: usize,
    global: Counts,
    keyed: HashMap<String, Counts>,
}

impl NgramModel {
    pub fn train(identity: impl Into<String>, tokenizer: Tokenizer, corpus: &str, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidModel("n-gram order must be at least 1".into()));
        }
        let eos = tokenizer.eos().id.0;
        let mut global = Counts::default();
        let mut keyed: HashMap<String, Counts> = HashMap::new();
        for line in corpus.lines() {
            let (key, sentence) = match line.split_once('\t') {
                Some((k, s)) => (Some(k), s),
                None => (None, line),
            };
            if sentence.trim().is_empty() {
                continue;
            }
            let mut ids: Vec<u32> = tokenizer.tokenize(sentence)?.iter().map(|t| t.id.0).collect();
            ids.push(eos);
            global.add_sentence(&ids, order);
            if let Some(k) = key {
                keyed.entry(k.to_string()).or_default().add_sentence(&ids, order);
            }
        }
        Ok(NgramModel { identity: identity.into(), tokenizer, order, global, keyed })
    }

    pub fn from_files(
        identity: impl Into<String>,
        vocab: impl AsRef<Path>,
        corpus: impl AsRef<Path>,
        order: usize,
    ) -> Result<Self> {
        let tokenizer = Tokenizer::from_file(vocab)?;
        let corpus_path = corpus.as_ref();
        let text = std::fs::read_to_string(corpus_path).map_err(|e| Error::file(corpus_path, e))?;
        Self::train(identity, tokenizer, &text, order)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Full next-token probability vector.
    pub fn probabilities(&self, key: &str, history: &[u32]) -> Vec<f64> {
        let v = self.tokenizer.vocab_size();
        let mut padded = vec![BOS; self.order - 1];
        padded.extend_from_slice(history);
        let global = self.global.interpolate(&padded, self.order, vec![1.0 / v as f64; v]);
        match self.keyed.get(key) {
            Some(counts) => counts.interpolate(&padded, self.order, global),
            None => global,
        }
    }

    fn ids(&self, tokens: &[Token]) -> Result<Vec<u32>> {
        tokens
            .iter()
            .map(|t| match self.tokenizer.token(t.id) {
                Some(k) if k.text == t.text => Ok(t.id.0),
                _ => Err(Error::ForeignToken(t.id.0)),
            })
            .collect()
    }
}

impl Scorer for NgramModel {
    fn identity(&self) -> &str {
        &self.identity
    }

    fn tokenizer(&self) -> &dyn SubwordTokenizer {
        &self.tokenizer
    }

    fn next_distribution(&self, input: &ModelInput, prefix: &[Token], k: usize) -> Result<ScoredDistribution> {
        let ids = self.ids(prefix)?;
        let probs = self.probabilities(&input.key(), &ids);
        Ok(distribution_from_probs(self.tokenizer.tokens(), &probs, k))
    }

    fn score_prefix(&self, input: &ModelInput, tokens: &[Token]) -> Result<Vec<f64>> {
        let ids = self.ids(tokens)?;
        let key = input.key();
        Ok((0..ids.len()).map(|i| self.probabilities(&key, &ids[..i])[ids[i] as usize].ln()).collect())
    }

    fn advance(&self, input: &ModelInput, prefix: &[Token], extension: &[Token], k: usize) -> Result<Advance> {
        let mut ids = self.ids(prefix)?;
        let ext = self.ids(extension)?;
        let key = input.key();
        let mut logprobs = Vec::with_capacity(ext.len());
        for w in ext {
            logprobs.push(self.probabilities(&key, &ids)[w as usize].ln());
            ids.push(w);
        }
        let next = distribution_from_probs(self.tokenizer.tokens(), &self.probabilities(&key, &ids), k);
        Ok(Advance { logprobs, next })
    }
}
