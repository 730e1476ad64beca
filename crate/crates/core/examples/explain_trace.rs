//! Step-by-step trace of every merged score computed during one decode.

use wordfuse::cli::render_trace;
use wordfuse::fixtures::adversarial_pair;
use wordfuse::{decode_online, EnsembleConfig, ModelInput};

fn main() -> wordfuse::Result<()> {
    let (generator, ranker) = adversarial_pair();
    let inputs = (&ModelInput::generator(""), &ModelInput::ranker(""));
    let cfg = EnsembleConfig { topk: 2, beams: 1, trace: true, ..Default::default() };
    let out = decode_online(&generator, &ranker, inputs, &cfg)?;
    print!("{}", render_trace(&out.trace));
    Ok(())
}
