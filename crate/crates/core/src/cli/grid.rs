//! Grid search over the mixing weight on fixed N-best lists.

use serde::{Deserialize, Serialize};

use super::metrics::{exact_match, token_f1};
use crate::error::{Error, Result};
use crate::fixtures::DevItem;
use crate::rerank::{apply_alpha, rerank_nbest, NBestEntry};
use crate::scoring::{mean, ModelInput, Scorer};
use crate::search::{decode_generator_only, EnsembleConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Metric {
    ExactMatch,
    TokenF1,
    AvgMerged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub alpha: f64,
    pub exact_match: f64,
    pub token_f1: f64,
    pub avg_merged: f64,
}

impl GridRow {
    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::ExactMatch => self.exact_match,
            Metric::TokenF1 => self.token_f1,
            Metric::AvgMerged => self.avg_merged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub metric: Metric,
    pub rows: Vec<GridRow>,
    /// Lowest alpha among those with the best metric value.
    pub best_alpha: f64,
}

/// `0.0, 0.1, ..., 1.0`, each computed as `i / 10` so the values are exact
/// decimal literals.
pub fn default_alphas() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// N-best lists from generator-only decoding (`cfg.beams` wide), each
/// scored once by the ranker.
pub fn scored_nbest(
    generator: &dyn Scorer,
    ranker: &dyn Scorer,
    dev: &[DevItem],
    cfg: &EnsembleConfig,
) -> Result<Vec<Vec<NBestEntry>>> {
    dev.iter()
        .map(|item| {
            let out = decode_generator_only(generator, &ModelInput::generator(item.payload.as_str()), cfg)?;
            rerank_nbest(&out.nbest(generator.identity()), ranker, &ModelInput::ranker(item.payload.as_str()), 1.0)
        })
        .collect()
}

/// Evaluate offline re-ranking of fixed N-best lists at every alpha.
pub fn grid_search(lists: &[Vec<NBestEntry>], dev: &[DevItem], alphas: &[f64], metric: Metric) -> Result<GridReport> {
    if lists.len() != dev.len() {
        return Err(Error::Config(format!("{} n-best lists for {} dev items", lists.len(), dev.len())));
    }
    if alphas.is_empty() {
        return Err(Error::Config("empty alpha grid".into()));
    }
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let mut em = Vec::with_capacity(dev.len());
        let mut f1 = Vec::with_capacity(dev.len());
        let mut merged = Vec::with_capacity(dev.len());
        for (list, item) in lists.iter().zip(dev) {
            let ranked = apply_alpha(list, alpha)?;
            let (hyp, score) = ranked.first().map(|e| (e.surface.as_str(), e.merged)).unwrap_or(("", f64::NEG_INFINITY));
            em.push(exact_match(hyp, &item.reference));
            f1.push(token_f1(hyp, &item.reference));
            merged.push(score);
        }
        rows.push(GridRow { alpha, exact_match: mean(&em), token_f1: mean(&f1), avg_merged: mean(&merged) });
    }
    let mut best = 0;
    for (i, row) in rows.iter().enumerate() {
        let (v, b) = (row.metric(metric), rows[best].metric(metric));
        if v > b || (v == b && row.alpha < rows[best].alpha) {
            best = i;
        }
    }
    let best_alpha = rows[best].alpha;
    Ok(GridReport { metric, rows, best_alpha })
}
