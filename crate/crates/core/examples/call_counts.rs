//! Model evaluations per decode: word-level merging against generator
//! look-ahead, over a range of beam widths.

use wordfuse::fixtures::dense_instance;
use wordfuse::oracle::decode_lookahead;
use wordfuse::{decode_online, EnsembleConfig, ModelInput};

fn main() -> wordfuse::Result<()> {
    let inst = dense_instance(3);
    let inputs = (&ModelInput::generator(""), &ModelInput::ranker(""));
    println!("beams  steps  live  gen(online)  ranker(online)  gen(look-ahead)");
    for beams in [1, 2, 4, 8] {
        let cfg = EnsembleConfig { beams, topk: 3, max_len: 6, ..inst.config() };
        let online = decode_online(&inst.generator, &inst.ranker, inputs, &cfg)?;
        let ahead = decode_lookahead(&inst.generator, &inst.ranker, inputs, &cfg)?;
        let live: usize = online.live_per_step.iter().sum();
        println!(
            "{beams:>5}  {:>5}  {live:>4}  {:>11}  {:>14}  {:>15}",
            online.steps,
            online.calls.generator.total(),
            online.calls.ranker.total(),
            ahead.calls.generator.total()
        );
    }
    Ok(())
}
