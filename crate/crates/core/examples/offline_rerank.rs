//! Generator N-best list re-ranked by the ranker at several weights.

use wordfuse::fixtures::adversarial_pair;
use wordfuse::rerank::apply_alpha;
use wordfuse::{decode_generator_only, rerank_nbest, EnsembleConfig, ModelInput, Scorer};

fn main() -> wordfuse::Result<()> {
    let (generator, ranker) = adversarial_pair();
    let (g_in, r_in) = (ModelInput::generator(""), ModelInput::ranker(""));
    let cfg = EnsembleConfig { beams: 6, ..Default::default() };
    let nbest = decode_generator_only(&generator, &g_in, &cfg)?.nbest(generator.identity());
    let scored = rerank_nbest(&nbest, &ranker, &r_in, 1.0)?;
    for alpha in [1.0, 0.5, 0.0] {
        let ranked = apply_alpha(&scored, alpha)?;
        println!("alpha {alpha:.1}:");
        for e in &ranked {
            println!("  {:<22} g {:>8.4}  r {:>8.4}  merged {:>8.4}", e.surface, e.gen_score, e.ranker_score.unwrap_or(f64::NAN), e.merged);
        }
    }
    Ok(())
}
