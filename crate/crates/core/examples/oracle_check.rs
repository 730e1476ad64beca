//! Beam search against exhaustive enumeration on random sparse instances,
//! where the beam is wide enough never to prune.

use wordfuse::fixtures::sparse_instance;
use wordfuse::oracle::enumerate_best;
use wordfuse::{decode_online, ModelInput};

fn main() -> wordfuse::Result<()> {
    let count: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let inputs = (&ModelInput::generator(""), &ModelInput::ranker(""));
    let mut agree = 0;
    for seed in 0..count {
        let inst = sparse_instance(seed);
        let beam = decode_online(&inst.generator, &inst.ranker, inputs, &inst.config())?;
        let oracle = enumerate_best(&inst.generator, &inst.ranker, inputs, inst.alpha, inst.max_len)?;
        let (b, o) = (beam.best().map(|h| h.score), oracle.as_ref().map(|o| o.merged));
        let same = match (b, o) {
            (Some(b), Some(o)) => (b - o).abs() <= 1e-9,
            (None, None) => true,
            _ => false,
        };
        agree += same as u32;
        println!("seed {seed:>3}: beam {b:?} oracle {o:?} {}", if same { "ok" } else { "DIFF" });
    }
    println!("{agree}/{count} agree");
    Ok(())
}
