//! Explicit conditional probability tables.
//!
//! A row maps `(context key, prefix)` to a next-token distribution. Unlisted
//! tokens share the row's leftover mass uniformly. Lookup backs off to the
//! longest listed suffix of the history, preferring rows for the exact
//! context key over the `*` wildcard, and finally to the uniform distribution.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{distribution_from_probs, Advance, ModelInput, ScoredDistribution, Scorer};
use crate::error::{Error, Result};
use crate::tokenization::{SubwordTokenizer, Token, TokenId, Tokenizer};

const WILDCARD: &str = "*";
const MASS_TOLERANCE: f64 = 1e-9;

/// A token named by id or by text in a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TokenRef {
    Id(u32),
    Text(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RowSpec {
    #[serde(default = "wildcard")]
    context: String,
    #[serde(default)]
    prefix: Vec<TokenRef>,
    #[serde(default)]
    probs: Vec<(TokenRef, f64)>,
}

fn wildcard() -> String {
    WILDCARD.to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TableFile {
    identity: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vocab: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<String>>,
    #[serde(default, rename = "row")]
    rows: Vec<RowSpec>,
}

#[derive(Debug, Clone)]
pub struct TableModel {
    identity: String,
    tokenizer: Tokenizer,
    rows: HashMap<(String, Vec<TokenId>), Vec<f64>>,
    specs: Vec<RowSpec>,
    max_prefix: usize,
    uniform: Vec<f64>,
}

pub struct TableModelBuilder {
    identity: String,
    tokenizer: Tokenizer,
    rows: Vec<RowSpec>,
}

impl TableModelBuilder {
    /// Add a row; tokens are named by text.
    pub fn row(mut self, context: &str, prefix: &[&str], probs: &[(&str, f64)]) -> Self {
        self.rows.push(RowSpec {
            context: context.to_string(),
            prefix: prefix.iter().map(|t| TokenRef::Text(t.to_string())).collect(),
            probs: probs.iter().map(|(t, p)| (TokenRef::Text(t.to_string()), *p)).collect(),
        });
        self
    }

    /// Add a row with tokens named by id.
    pub fn row_ids(mut self, context: &str, prefix: &[u32], probs: &[(u32, f64)]) -> Self {
        self.rows.push(RowSpec {
            context: context.to_string(),
            prefix: prefix.iter().map(|&t| TokenRef::Id(t)).collect(),
            probs: probs.iter().map(|&(t, p)| (TokenRef::Id(t), p)).collect(),
        });
        self
    }

    pub fn build(self) -> Result<TableModel> {
        TableModel::from_specs(self.identity, self.tokenizer, self.rows)
    }
}

impl TableModel {
    pub fn builder(identity: impl Into<String>, tokenizer: Tokenizer) -> TableModelBuilder {
        TableModelBuilder { identity: identity.into(), tokenizer, rows: Vec::new() }
    }

    fn from_specs(identity: String, tokenizer: Tokenizer, specs: Vec<RowSpec>) -> Result<Self> {
        let v = tokenizer.vocab_size();
        let resolve = |r: &TokenRef| -> Result<TokenId> {
            match r {
                TokenRef::Id(id) if (*id as usize) < v => Ok(TokenId(*id)),
                TokenRef::Id(id) => Err(Error::InvalidModel(format!("token id {id} outside vocabulary of {v}"))),
                TokenRef::Text(t) => tokenizer
                    .id_of(t)
                    .ok_or_else(|| Error::InvalidModel(format!("unknown token {t:?}"))),
            }
        };

        let mut rows = HashMap::new();
        let mut max_prefix = 0;
        for spec in &specs {
            let prefix = spec.prefix.iter().map(resolve).collect::<Result<Vec<_>>>()?;
            let mut probs = vec![f64::NAN; v];
            let mut listed = 0.0;
            for (r, p) in &spec.probs {
                let id = resolve(r)?;
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::InvalidModel(format!("probability {p} outside [0, 1]")));
                }
                if !probs[id.0 as usize].is_nan() {
                    return Err(Error::InvalidModel(format!("token {} listed twice in one row", id.0)));
                }
                probs[id.0 as usize] = *p;
                listed += p;
            }
            let unlisted = probs.iter().filter(|p| p.is_nan()).count();
            let leftover = 1.0 - listed;
            if leftover < -MASS_TOLERANCE {
                return Err(Error::InvalidModel(format!("row sums to {listed} > 1")));
            }
            if unlisted == 0 && leftover.abs() > MASS_TOLERANCE {
                return Err(Error::InvalidModel(format!("row lists every token but sums to {listed}")));
            }
            let share = if unlisted > 0 { leftover.max(0.0) / unlisted as f64 } else { 0.0 };
            for p in probs.iter_mut().filter(|p| p.is_nan()) {
                *p = share;
            }
            max_prefix = max_prefix.max(prefix.len());
            if rows.insert((spec.context.clone(), prefix), probs).is_some() {
                return Err(Error::InvalidModel(format!(
                    "duplicate row for context {:?} and prefix {:?}",
                    spec.context, spec.prefix
                )));
            }
        }
        let uniform = vec![1.0 / v as f64; v];
        Ok(TableModel { identity, tokenizer, rows, specs, max_prefix, uniform })
    }

    /// Load a TOML table-model file. A `vocab` path is resolved relative to the file.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let file: TableFile =
            toml::from_str(&body).map_err(|e| Error::InvalidModel(format!("{}: {e}", path.display())))?;
        let tokenizer = match (&file.vocab, &file.tokens) {
            (Some(v), None) => {
                let base = path.parent().unwrap_or_else(|| Path::new("."));
                Tokenizer::from_file(base.join(v))?
            }
            (None, Some(tokens)) => Tokenizer::new(tokens.clone(), crate::tokenization::DEFAULT_MARKER)?,
            _ => {
                return Err(Error::InvalidModel(format!(
                    "{}: exactly one of `vocab` or `tokens` is required",
                    path.display()
                )))
            }
        };
        Self::from_specs(file.identity, tokenizer, file.rows)
    }

    /// Serialize as a self-contained model file (vocabulary inlined).
    pub fn to_toml_string(&self) -> String {
        let file = TableFile {
            identity: self.identity.clone(),
            vocab: None,
            tokens: Some(self.tokenizer.tokens().iter().map(|t| t.text.clone()).collect()),
            rows: self.specs.clone(),
        };
        toml::to_string(&file).expect("table model serializes")
    }

    /// Serialize as a model file that points at a separate vocabulary file.
    pub fn to_toml_string_with_vocab(&self, vocab_path: &str) -> String {
        let file = TableFile {
            identity: self.identity.clone(),
            vocab: Some(vocab_path.to_string()),
            tokens: None,
            rows: self.specs.clone(),
        };
        toml::to_string(&file).expect("table model serializes")
    }

    pub fn tokenizer_spec(&self) -> &Tokenizer {
        &self.tokenizer
    }

    /// Full next-token probability vector for a history under a context key.
    pub fn probabilities(&self, key: &str, history: &[TokenId]) -> &[f64] {
        let longest = history.len().min(self.max_prefix);
        for len in (0..=longest).rev() {
            let suffix = history[history.len() - len..].to_vec();
            for ctx in [key, WILDCARD] {
                if let Some(row) = self.rows.get(&(ctx.to_string(), suffix.clone())) {
                    return row;
                }
            }
        }
        &self.uniform
    }

    fn ids(tokens: &[Token]) -> Vec<TokenId> {
        tokens.iter().map(|t| t.id).collect()
    }

    fn check(&self, tokens: &[Token]) -> Result<()> {
        for t in tokens {
            if self.tokenizer.token(t.id).map(|k| k.text != t.text).unwrap_or(true) {
                return Err(Error::ForeignToken(t.id.0));
            }
        }
        Ok(())
    }
}

impl Scorer for TableModel {
    fn identity(&self) -> &str {
        &self.identity
    }

    fn tokenizer(&self) -> &dyn SubwordTokenizer {
        &self.tokenizer
    }

    fn next_distribution(&self, input: &ModelInput, prefix: &[Token], k: usize) -> Result<ScoredDistribution> {
        self.check(prefix)?;
        let probs = self.probabilities(&input.key(), &Self::ids(prefix));
        Ok(distribution_from_probs(self.tokenizer.tokens(), probs, k))
    }

    fn score_prefix(&self, input: &ModelInput, tokens: &[Token]) -> Result<Vec<f64>> {
        self.check(tokens)?;
        let key = input.key();
        let ids = Self::ids(tokens);
        Ok((0..ids.len()).map(|i| self.probabilities(&key, &ids[..i])[ids[i].0 as usize].ln()).collect())
    }

    fn advance(&self, input: &ModelInput, prefix: &[Token], extension: &[Token], k: usize) -> Result<Advance> {
        self.check(prefix)?;
        self.check(extension)?;
        let key = input.key();
        let mut ids = Self::ids(prefix);
        let mut logprobs = Vec::with_capacity(extension.len());
        for t in extension {
            logprobs.push(self.probabilities(&key, &ids)[t.id.0 as usize].ln());
            ids.push(t.id);
        }
        let next = distribution_from_probs(self.tokenizer.tokens(), self.probabilities(&key, &ids), k);
        Ok(Advance { logprobs, next })
    }
}
