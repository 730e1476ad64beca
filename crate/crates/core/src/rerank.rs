//! Re-ranking of completed N-best lists: single-ranker re-ranking, joint
//! re-ranking of several generators' lists, and best-of-N selection.

use std::collections::HashMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::merge::{check_alpha, weighted};
use crate::scoring::{mean, Concurrency, ModelInput, Scorer};

/// One completed hypothesis with its scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBestEntry {
    pub surface: String,
    /// Length-normalized generator log-probability.
    pub gen_score: f64,
    /// Length-normalized ranker log-probability; `None` until re-ranked or
    /// when the ranker failed on this entry.
    pub ranker_score: Option<f64>,
    pub merged: f64,
    pub selector_score: Option<f64>,
    /// Identity of the generator that produced the entry.
    pub origin: String,
}

impl NBestEntry {
    pub fn from_generator(surface: impl Into<String>, gen_score: f64, origin: impl Into<String>) -> Self {
        NBestEntry {
            surface: surface.into(),
            gen_score,
            ranker_score: None,
            merged: gen_score,
            selector_score: None,
            origin: origin.into(),
        }
    }
}

/// Length-normalized score of `surface` under `scorer`'s own tokenization,
/// terminated with eos.
pub fn sentence_score(scorer: &dyn Scorer, input: &ModelInput, surface: &str) -> Result<f64> {
    let tok = scorer.tokenizer();
    let mut tokens = tok.tokenize(surface)?;
    tokens.push(tok.eos());
    Ok(mean(&scorer.score_prefix(input, &tokens)?))
}

fn map_entries<T: Send>(
    entries: &[NBestEntry],
    concurrency: Concurrency,
    f: impl Fn(&NBestEntry) -> T + Send + Sync,
) -> Vec<T> {
    match concurrency {
        Concurrency::Shared => entries.par_iter().map(f).collect(),
        Concurrency::Exclusive => entries.iter().map(f).collect(),
    }
}

fn sort_by_merged(entries: &mut [NBestEntry]) {
    entries.sort_by(|a, b| b.merged.total_cmp(&a.merged));
}

/// Score every entry with `ranker`, merge with `alpha`, and sort by merged
/// score (stable). An entry the ranker fails on keeps `ranker_score = None`
/// and sinks to the bottom with a merged score of `-inf`.
pub fn rerank_nbest(entries: &[NBestEntry], ranker: &dyn Scorer, input: &ModelInput, alpha: f64) -> Result<Vec<NBestEntry>> {
    check_alpha(alpha)?;
    let scores = map_entries(entries, ranker.concurrency(), |e| sentence_score(ranker, input, &e.surface));
    let scored: Vec<NBestEntry> = entries
        .iter()
        .zip(scores)
        .map(|(e, s)| NBestEntry { ranker_score: s.ok(), ..e.clone() })
        .collect();
    apply_alpha(&scored, alpha)
}

/// Recompute merged scores of already ranker-scored entries for a new
/// `alpha` and sort (stable). Entries without a ranker score sink.
pub fn apply_alpha(entries: &[NBestEntry], alpha: f64) -> Result<Vec<NBestEntry>> {
    check_alpha(alpha)?;
    let mut out: Vec<NBestEntry> = entries
        .iter()
        .map(|e| NBestEntry {
            merged: e.ranker_score.map(|r| weighted(alpha, e.gen_score, r)).unwrap_or(f64::NEG_INFINITY),
            ..e.clone()
        })
        .collect();
    sort_by_merged(&mut out);
    Ok(out)
}

/// Concatenate the lists of several generators, score every entry under each
/// model that did not produce it, and merge `alpha * own + (1 - alpha) *
/// mean(others)`. Duplicate surfaces keep their best-scored instance.
///
/// `inputs[i]` is the input for `models[i]`.
pub fn joint_rerank(
    lists: &[Vec<NBestEntry>],
    models: &[&dyn Scorer],
    inputs: &[ModelInput],
    alpha: f64,
) -> Result<Vec<NBestEntry>> {
    check_alpha(alpha)?;
    if lists.len() < 2 {
        return Err(Error::Config("joint re-ranking needs at least two lists".into()));
    }
    if models.len() != inputs.len() || models.len() < 2 {
        return Err(Error::Config("joint re-ranking needs one input per model and at least two models".into()));
    }
    let all: Vec<NBestEntry> = lists.iter().flatten().cloned().collect();
    let concurrency = if models.iter().all(|m| m.concurrency() == Concurrency::Shared) {
        Concurrency::Shared
    } else {
        Concurrency::Exclusive
    };
    let scored = map_entries(&all, concurrency, |e| -> Result<Option<f64>> {
        let mut others = Vec::new();
        for (m, input) in models.iter().zip(inputs) {
            if m.identity() != e.origin {
                others.push(sentence_score(*m, input, &e.surface)?);
            }
        }
        Ok(if others.is_empty() { None } else { Some(mean(&others)) })
    });

    let mut out: Vec<NBestEntry> = Vec::with_capacity(all.len());
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (mut e, s) in all.into_iter().zip(scored) {
        match s {
            Ok(Some(r)) => {
                e.ranker_score = Some(r);
                e.merged = weighted(alpha, e.gen_score, r);
            }
            Ok(None) => {
                e.ranker_score = None;
                e.merged = e.gen_score;
            }
            Err(_) => {
                e.ranker_score = None;
                e.merged = f64::NEG_INFINITY;
            }
        }
        match seen.get(&e.surface) {
            Some(&i) if out[i].merged >= e.merged => {}
            Some(&i) => out[i] = e,
            None => {
                seen.insert(e.surface.clone(), out.len());
                out.push(e);
            }
        }
    }
    sort_by_merged(&mut out);
    Ok(out)
}

/// External best-of-N scorer.
pub trait Selector: Send + Sync {
    fn identity(&self) -> &str;

    /// One score per surface, higher is better.
    fn score(&self, input: &ModelInput, surfaces: &[String]) -> Result<Vec<f64>>;
}

/// Rewards hypotheses that contain a given word.
#[derive(Debug, Clone)]
pub struct MarkerWordSelector {
    pub word: String,
}

impl MarkerWordSelector {
    pub fn new(word: impl Into<String>) -> Self {
        MarkerWordSelector { word: word.into() }
    }
}

impl Selector for MarkerWordSelector {
    fn identity(&self) -> &str {
        "marker-word"
    }

    fn score(&self, _input: &ModelInput, surfaces: &[String]) -> Result<Vec<f64>> {
        Ok(surfaces
            .iter()
            .map(|s| if s.split_whitespace().any(|w| w == self.word) { 1.0 } else { 0.0 })
            .collect())
    }
}

/// Uses a scorer's length-normalized sentence log-probability as the
/// selection score.
pub struct ScorerSelector<'a> {
    pub scorer: &'a dyn Scorer,
}

impl Selector for ScorerSelector<'_> {
    fn identity(&self) -> &str {
        self.scorer.identity()
    }

    fn score(&self, input: &ModelInput, surfaces: &[String]) -> Result<Vec<f64>> {
        surfaces.iter().map(|s| sentence_score(self.scorer, input, s)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub best: NBestEntry,
    /// Input entries with `selector_score` filled in, in input order.
    pub entries: Vec<NBestEntry>,
    /// Set when the selector failed and the merged-score argmax was used.
    pub fallback: Option<String>,
}

fn argmax_by(entries: &[NBestEntry], key: impl Fn(&NBestEntry) -> f64) -> usize {
    let mut best = 0;
    for (i, e) in entries.iter().enumerate().skip(1) {
        if key(e) > key(&entries[best]) {
            best = i;
        }
    }
    best
}

/// Pick the entry with the highest selector score; ties go to the earlier
/// entry. A failing selector falls back to the merged-score argmax.
pub fn select_best(entries: &[NBestEntry], selector: &dyn Selector, input: &ModelInput) -> Result<Selection> {
    if entries.is_empty() {
        return Err(Error::Config("select_best needs at least one entry".into()));
    }
    let surfaces: Vec<String> = entries.iter().map(|e| e.surface.clone()).collect();
    let scores = selector.score(input, &surfaces).and_then(|s| {
        if s.len() == entries.len() {
            Ok(s)
        } else {
            Err(Error::SelectorUnavailable(format!("{} returned {} scores for {} entries", selector.identity(), s.len(), entries.len())))
        }
    });
    match scores {
        Ok(scores) => {
            let annotated: Vec<NBestEntry> = entries
                .iter()
                .zip(scores)
                .map(|(e, s)| NBestEntry { selector_score: Some(s), ..e.clone() })
                .collect();
            let best = annotated[argmax_by(&annotated, |e| e.selector_score.unwrap_or(f64::NEG_INFINITY))].clone();
            Ok(Selection { best, entries: annotated, fallback: None })
        }
        Err(e) => {
            let best = entries[argmax_by(entries, |e| e.merged)].clone();
            Ok(Selection { best, entries: entries.to_vec(), fallback: Some(e.to_string()) })
        }
    }
}

/// One line of an N-best file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NBestRecord {
    input_id: String,
    rank: usize,
    surface: String,
    gen_score: f64,
    ranker_score: Option<f64>,
    merged: f64,
    selector_score: Option<f64>,
    origin: String,
}

/// N-best lists grouped by input.
pub type NBestLists = Vec<(String, Vec<NBestEntry>)>;

/// Write N-best lists as tab-separated records with a header. Floats use the
/// shortest round-trip representation, so reading back is bit-exact.
pub fn write_nbest<W: Write>(writer: W, lists: &[(String, Vec<NBestEntry>)]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(writer);
    for (input_id, entries) in lists {
        for (rank, e) in entries.iter().enumerate() {
            w.serialize(NBestRecord {
                input_id: input_id.clone(),
                rank: rank + 1,
                surface: e.surface.clone(),
                gen_score: e.gen_score,
                ranker_score: e.ranker_score,
                merged: e.merged,
                selector_score: e.selector_score,
                origin: e.origin.clone(),
            })
            .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_nbest<R: Read>(reader: R) -> Result<NBestLists> {
    let mut r = csv::ReaderBuilder::new().delimiter(b'\t').from_reader(reader);
    let mut lists: NBestLists = Vec::new();
    for record in r.deserialize::<NBestRecord>() {
        let rec = record.map_err(csv_error)?;
        let entry = NBestEntry {
            surface: rec.surface,
            gen_score: rec.gen_score,
            ranker_score: rec.ranker_score,
            merged: rec.merged,
            selector_score: rec.selector_score,
            origin: rec.origin,
        };
        match lists.last_mut() {
            Some((id, entries)) if *id == rec.input_id => entries.push(entry),
            _ => lists.push((rec.input_id, vec![entry])),
        }
    }
    Ok(lists)
}

fn csv_error(e: csv::Error) -> Error {
    Error::Config(format!("n-best file: {e}"))
}
