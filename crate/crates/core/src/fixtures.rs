//! Deterministic toy models used by the examples, tests and CLI fixtures.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rerank::rerank_nbest;
use crate::scoring::{ModelInput, TableModel};
use crate::search::{decode_generator_only, EnsembleConfig, Mode};
use crate::tokenization::{SubwordTokenizer, Tokenizer, EOS_TEXT};

/// The sentence whose two tokenizations differ inside its last word.
pub const AWESOME: &str = "Decoding is awesome";
const AWESOME_ALPHABET: &str = "Decodingsawm";

pub fn awesome_generator_vocab() -> Tokenizer {
    Tokenizer::with_fallbacks(AWESOME_ALPHABET, ["Dec", "od", "ing", "_is", "_awe", "some", "_good"])
        .expect("static vocabulary is valid")
}

pub fn awesome_ranker_vocab() -> Tokenizer {
    Tokenizer::with_fallbacks(AWESOME_ALPHABET, ["Dec", "od", "ing", "_is", "_awes", "ome", "_good"])
        .expect("static vocabulary is valid")
}

/// A table model that puts probability `p` on each token of its own
/// tokenization of `sentence`, then on eos. `branch` adds alternatives at
/// the position where the prefix detokenizes to `branch.0`.
fn sentence_model(
    identity: &str,
    tok: Tokenizer,
    sentence: &str,
    p: f64,
    branch: Option<(&str, &[(&str, f64)])>,
) -> Result<TableModel> {
    let tokens = tok.tokenize(sentence)?;
    let texts: Vec<&str> = tokens.iter().map(|t| t.text.as_str()).collect();
    let mut b = TableModel::builder(identity, tok.clone());
    let mut branched = false;
    for i in 0..=texts.len() {
        let next = texts.get(i).copied().unwrap_or(EOS_TEXT);
        let prefix = &texts[..i];
        match branch {
            Some((at, alts)) if tok.detokenize(&tokens[..i])? == at && i > 0 => {
                branched = true;
                b = b.row("*", prefix, alts);
                for (alt, _) in alts.iter().filter(|(a, _)| *a != next) {
                    let mut longer = prefix.to_vec();
                    longer.push(alt);
                    b = b.row("*", &longer, &[(EOS_TEXT, p)]);
                }
            }
            _ => b = b.row("*", prefix, &[(next, p)]),
        }
    }
    if let Some((at, _)) = branch {
        if !branched {
            return Err(Error::InvalidModel(format!("no prefix of {sentence:?} detokenizes to {at:?}")));
        }
    }
    b.build()
}

/// Generator and ranker that each give probability `p` to every token of
/// [`AWESOME`] (and the final eos) under their own tokenization.
pub fn awesome_pair(p: f64) -> (TableModel, TableModel) {
    let g = sentence_model("awesome-generator", awesome_generator_vocab(), AWESOME, p, None);
    let r = sentence_model("awesome-ranker", awesome_ranker_vocab(), AWESOME, p, None);
    (g.expect("fixture builds"), r.expect("fixture builds"))
}

/// The distractor in [`adversarial_pair`].
pub const DISTRACTOR: &str = "Decoding is good";

/// A pair where both models prefer [`AWESOME`] but the ranker cannot score
/// the partial word "awe": token-level fusion prunes it in favor of
/// [`DISTRACTOR`], word-level merging does not.
pub fn adversarial_pair() -> (TableModel, TableModel) {
    let g_alts: &[(&str, f64)] = &[("_awe", 0.5), ("_good", 0.45)];
    let r_alts: &[(&str, f64)] = &[("_awes", 0.6), ("_good", 0.3)];
    let g = sentence_model("adversarial-generator", awesome_generator_vocab(), AWESOME, 0.9, Some(("Decoding is", g_alts)));
    let r = sentence_model("adversarial-ranker", awesome_ranker_vocab(), AWESOME, 0.9, Some(("Decoding is", r_alts)));
    (g.expect("fixture builds"), r.expect("fixture builds"))
}

/// A random generator/ranker pair with decoding parameters.
#[derive(Debug, Clone)]
pub struct ToyInstance {
    pub seed: u64,
    pub generator: TableModel,
    pub ranker: TableModel,
    pub alpha: f64,
    pub topk: usize,
    pub beams: usize,
    pub max_len: usize,
}

impl ToyInstance {
    pub fn config(&self) -> EnsembleConfig {
        EnsembleConfig {
            alpha: self.alpha,
            topk: self.topk,
            beams: self.beams,
            max_len: self.max_len,
            mode: Mode::Online,
            ..Default::default()
        }
    }
}

/// Random vocabularies over a one- or two-letter alphabet. The ranker always
/// has five tokens and covers the alphabet; the generator has `3..=5`.
fn toy_vocabs(rng: &mut ChaCha8Rng) -> (Tokenizer, Tokenizer) {
    let (alphabet, ranker_extra, pool): (&str, &[&str], &[&str]) = if rng.random_bool(0.5) {
        ("a", &["aa", "_aa"], &["a", "_a", "aa", "_aa", "aaa"])
    } else {
        ("ab", &[], &["a", "b", "_a", "_b", "ab", "_ab", "ba"])
    };
    let ranker = Tokenizer::with_fallbacks(alphabet, ranker_extra.iter().copied()).expect("valid toy vocabulary");
    let size = rng.random_range(2..=4);
    let mut pool = pool.to_vec();
    pool.shuffle(rng);
    let mut chosen: Vec<&str> = pool[..size].to_vec();
    chosen.sort();
    let texts = std::iter::once(EOS_TEXT).chain(chosen);
    let generator = Tokenizer::new(texts, "_").expect("valid toy vocabulary");
    (generator, ranker)
}

fn random_row(rng: &mut ChaCha8Rng, v: usize, eos_boost: f64) -> Vec<(u32, f64)> {
    let mut w: Vec<f64> = (0..v).map(|_| rng.random_range(0.05..1.0)).collect();
    w[0] *= eos_boost;
    let sum: f64 = w.iter().sum();
    let mut row: Vec<(u32, f64)> = w.iter().enumerate().map(|(i, x)| (i as u32, x / sum)).collect();
    // Put any rounding residue on the largest entry so the row sums to 1.
    let residue = 1.0 - row.iter().map(|(_, p)| p).sum::<f64>();
    let top = (0..v).max_by(|&a, &b| row[a].1.total_cmp(&row[b].1)).unwrap_or(0);
    row[top].1 += residue;
    row
}

/// A dense bigram-style table model: rows for the empty prefix and for every
/// single token, reached by suffix backoff.
fn dense_model(identity: &str, tok: Tokenizer, rng: &mut ChaCha8Rng, eos_boost: f64, context: &str) -> TableModel {
    let v = tok.vocab_size();
    let mut b = TableModel::builder(identity, tok);
    b = b.row_ids(context, &[], &random_row(rng, v, eos_boost));
    for t in 0..v as u32 {
        b = b.row_ids(context, &[t], &random_row(rng, v, eos_boost));
    }
    b.build().expect("random rows are valid")
}

/// A sparse random generator (one or two continuations per prefix) and a
/// dense ranker, sized so that a beam of `V_G * topk` never has to prune:
/// every step admits at most `beams` candidates and at most `beams`
/// sequences terminate.
pub fn sparse_instance(seed: u64) -> ToyInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let (g_tok, r_tok) = toy_vocabs(&mut rng);
        let v = g_tok.vocab_size();
        let topk = rng.random_range(2..=v);
        let beams = v * topk;
        let max_len = rng.random_range(3..=6);
        let mut rows: Vec<(Vec<u32>, Vec<(u32, f64)>)> = Vec::new();
        let mut per_step = vec![0usize; max_len];
        let mut terminated = 0;
        let mut frontier: Vec<Vec<u32>> = vec![Vec::new()];
        for depth in 0..max_len {
            let mut next = Vec::new();
            for prefix in frontier {
                let branching = if rng.random_bool(0.4) { 2 } else { 1 };
                let mut ids: Vec<u32> = (0..v as u32).collect();
                ids.shuffle(&mut rng);
                ids.truncate(branching);
                ids.sort();
                let probs: Vec<(u32, f64)> = if branching == 1 {
                    vec![(ids[0], 1.0)]
                } else {
                    let u = rng.random_range(0.2..0.8);
                    vec![(ids[0], u), (ids[1], 1.0 - u)]
                };
                per_step[depth] += branching;
                for &(id, _) in &probs {
                    if id == 0 {
                        terminated += 1;
                    } else {
                        let mut p = prefix.clone();
                        p.push(id);
                        next.push(p);
                    }
                }
                rows.push((prefix, probs));
            }
            frontier = next;
        }
        if terminated == 0 || terminated > beams || per_step.iter().any(|&c| c > beams) {
            continue;
        }
        let mut b = TableModel::builder("toy-generator", g_tok);
        for (prefix, probs) in &rows {
            b = b.row_ids("*", prefix, probs);
        }
        let generator = b.build().expect("sparse rows are valid");
        let ranker = dense_model("toy-ranker", r_tok, &mut rng, 1.0, "*");
        let alpha = rng.random_range(0.1..0.9);
        return ToyInstance { seed, generator, ranker, alpha, topk, beams, max_len };
    }
}

/// Dense random generator and ranker. With pruning, beam search is not
/// guaranteed to find the global optimum on these.
pub fn dense_instance(seed: u64) -> ToyInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (g_tok, r_tok) = toy_vocabs(&mut rng);
    let v = g_tok.vocab_size();
    let topk = rng.random_range(2..=v);
    let generator = dense_model("toy-generator", g_tok, &mut rng, 2.0, "*");
    let ranker = dense_model("toy-ranker", r_tok, &mut rng, 1.0, "*");
    let alpha = rng.random_range(0.1..0.9);
    ToyInstance { seed, generator, ranker, alpha, topk, beams: v * topk, max_len: 6 }
}

/// One development item: a payload and its reference output.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DevItem {
    pub payload: String,
    pub reference: String,
}

/// Payload-conditioned models plus a development set whose references are
/// the offline re-ranking argmax at `alpha_star`.
#[derive(Debug, Clone)]
pub struct GridFixture {
    pub generator: TableModel,
    pub ranker: TableModel,
    pub dev: Vec<DevItem>,
    pub alpha_star: f64,
    pub nbest: usize,
}

pub fn grid_fixture(seed: u64, items: usize, alpha_star: f64, nbest: usize) -> Result<GridFixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g_tok = Tokenizer::with_fallbacks("ab", ["ab", "_ab"])?;
    let r_tok = Tokenizer::with_fallbacks("ab", ["ba", "_ba"])?;
    let payloads: Vec<String> = (0..items).map(|i| format!("s{i}")).collect();
    let mut g = TableModel::builder("grid-generator", g_tok.clone());
    let mut r = TableModel::builder("grid-ranker", r_tok.clone());
    for p in &payloads {
        g = g.row_ids(p, &[], &random_row(&mut rng, g_tok.vocab_size(), 0.2));
        for t in 0..g_tok.vocab_size() as u32 {
            g = g.row_ids(p, &[t], &random_row(&mut rng, g_tok.vocab_size(), 1.5));
        }
        r = r.row_ids(p, &[], &random_row(&mut rng, r_tok.vocab_size(), 0.2));
        for t in 0..r_tok.vocab_size() as u32 {
            r = r.row_ids(p, &[t], &random_row(&mut rng, r_tok.vocab_size(), 1.5));
        }
    }
    let generator = g.build()?;
    let ranker = r.build()?;
    let cfg = EnsembleConfig { beams: nbest, topk: nbest.min(g_tok.vocab_size()), max_len: 8, mode: Mode::GeneratorOnly, ..Default::default() };
    let mut dev = Vec::with_capacity(items);
    for p in payloads {
        let out = decode_generator_only(&generator, &ModelInput::generator(p.as_str()), &cfg)?;
        let ranked = rerank_nbest(&out.nbest("grid-generator"), &ranker, &ModelInput::ranker(p.as_str()), alpha_star)?;
        let reference = ranked.first().map(|e| e.surface.clone()).unwrap_or_default();
        dev.push(DevItem { payload: p, reference });
    }
    Ok(GridFixture { generator, ranker, dev, alpha_star, nbest })
}

/// Write the [`AWESOME`] fixture files (vocabularies, table models, a
/// config and an input file) into `dir`.
pub fn write_awesome_fixture(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let (g, r) = adversarial_pair();
    let write = |name: &str, body: String| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::file(&path, e))
    };
    write("generator.vocab", g.tokenizer_spec().to_vocab_text())?;
    write("ranker.vocab", r.tokenizer_spec().to_vocab_text())?;
    write("generator.toml", g.to_toml_string_with_vocab("generator.vocab"))?;
    write("ranker.toml", r.to_toml_string_with_vocab("ranker.vocab"))?;
    write("inputs.txt", "a payload\nanother payload\n".to_string())?;
    write(
        "config.toml",
        "mode = \"online\"\nalpha = 0.5\ntopk = 5\nbeams = 5\nnbest = 5\n\n\
         [generator]\nkind = \"table\"\npath = \"generator.toml\"\n\n\
         [ranker]\nkind = \"table\"\npath = \"ranker.toml\"\n"
            .to_string(),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::Scorer;

    #[test]
    fn awesome_tokenizations() {
        let g = awesome_generator_vocab().tokenize(AWESOME).unwrap();
        let r = awesome_ranker_vocab().tokenize(AWESOME).unwrap();
        let texts = |t: &[crate::tokenization::Token]| t.iter().map(|x| x.text.clone()).collect::<Vec<_>>();
        assert_eq!(texts(&g), ["Dec", "od", "ing", "_is", "_awe", "some"]);
        assert_eq!(texts(&r), ["Dec", "od", "ing", "_is", "_awes", "ome"]);
    }

    #[test]
    fn awesome_models_score_p_per_token() {
        let (g, r) = awesome_pair(0.5);
        let input = ModelInput::generator("");
        let mut seq = g.tokenizer().tokenize(AWESOME).unwrap();
        seq.push(g.tokenizer().eos());
        assert!(g.score_prefix(&input, &seq).unwrap().iter().all(|&x| x == 0.5f64.ln()));
        let mut seq = r.tokenizer().tokenize(AWESOME).unwrap();
        seq.push(r.tokenizer().eos());
        assert!(r.score_prefix(&input, &seq).unwrap().iter().all(|&x| x == 0.5f64.ln()));
    }

    #[test]
    fn sparse_instances_are_deterministic_and_small() {
        for seed in 0..20 {
            let a = sparse_instance(seed);
            let b = sparse_instance(seed);
            assert_eq!(a.generator.to_toml_string(), b.generator.to_toml_string());
            assert!(a.generator.tokenizer().vocab_size() <= 5);
            assert_eq!(a.ranker.tokenizer().vocab_size(), 5);
            assert!(a.max_len <= 6);
            assert_eq!(a.beams, a.generator.tokenizer().vocab_size() * a.topk);
        }
    }

    #[test]
    fn fixture_files_load() {
        let dir = tempfile::tempdir().unwrap();
        write_awesome_fixture(dir.path()).unwrap();
        let g = TableModel::from_file(dir.path().join("generator.toml")).unwrap();
        let (expected, _) = adversarial_pair();
        let input = ModelInput::generator("");
        let seq = g.tokenizer().tokenize(AWESOME).unwrap();
        assert_eq!(g.score_prefix(&input, &seq).unwrap(), expected.score_prefix(&input, &seq).unwrap());
    }
}
