//! Online decoding of the adversarial pair, next to the generator alone and
//! to token-level fusion.

use wordfuse::fixtures::adversarial_pair;
use wordfuse::oracle::naive_token_fusion;
use wordfuse::{decode_generator_only, decode_online, EnsembleConfig, ModelInput};

fn main() -> wordfuse::Result<()> {
    let (generator, ranker) = adversarial_pair();
    let inputs = (&ModelInput::generator("a payload"), &ModelInput::ranker("a payload"));
    let cfg = EnsembleConfig { topk: 2, beams: 1, ..Default::default() };

    let online = decode_online(&generator, &ranker, inputs, &cfg)?;
    let naive = naive_token_fusion(&generator, &ranker, inputs, &cfg)?;
    let alone = decode_generator_only(&generator, inputs.0, &cfg)?;
    for (name, out) in [("online", &online), ("token-level", &naive), ("generator", &alone)] {
        let best = out.best().expect("a hypothesis");
        println!("{name:>11}: {:<22} score {:.4}  steps {}", best.surface, best.score, out.steps);
    }
    if let Some(b) = &online.best().unwrap().merged {
        println!("breakdown: {b:?}");
    }
    Ok(())
}
