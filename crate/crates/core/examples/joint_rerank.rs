//! Two generators pool their N-best lists; each entry is scored by the model
//! that did not produce it.

use wordfuse::fixtures::adversarial_pair;
use wordfuse::{decode_generator_only, joint_rerank, EnsembleConfig, ModelInput, Scorer};

fn main() -> wordfuse::Result<()> {
    let (a, b) = adversarial_pair();
    let inputs = [ModelInput::generator(""), ModelInput::generator("")];
    let cfg = EnsembleConfig { beams: 4, ..Default::default() };
    let lists = vec![
        decode_generator_only(&a, &inputs[0], &cfg)?.nbest(a.identity()),
        decode_generator_only(&b, &inputs[1], &cfg)?.nbest(b.identity()),
    ];
    let models: [&dyn Scorer; 2] = [&a, &b];
    for e in joint_rerank(&lists, &models, &inputs, 0.5)? {
        println!("{:<22} from {:<22} own {:>8.4}  others {:>8.4}  merged {:>8.4}", e.surface, e.origin, e.gen_score, e.ranker_score.unwrap_or(f64::NAN), e.merged);
    }
    Ok(())
}
