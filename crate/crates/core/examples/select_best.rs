//! Best-of-N selection with an external scorer, and the fallback taken when
//! that scorer fails.

use wordfuse::fixtures::adversarial_pair;
use wordfuse::rerank::MarkerWordSelector;
use wordfuse::{decode_generator_only, select_best, EnsembleConfig, Error, ModelInput, Scorer, Selector};

struct Broken;

impl Selector for Broken {
    fn identity(&self) -> &str {
        "broken"
    }

    fn score(&self, _: &ModelInput, _: &[String]) -> wordfuse::Result<Vec<f64>> {
        Err(Error::SelectorUnavailable("offline".into()))
    }
}

fn main() -> wordfuse::Result<()> {
    let (generator, _) = adversarial_pair();
    let input = ModelInput::generator("");
    let entries = decode_generator_only(&generator, &input, &EnsembleConfig { beams: 4, ..Default::default() })?.nbest(generator.identity());
    let word = std::env::args().nth(1).unwrap_or_else(|| "good".into());
    let picked = select_best(&entries, &MarkerWordSelector::new(word.clone()), &input)?;
    println!("marker {word:?}: {}", picked.best.surface);
    let fallback = select_best(&entries, &Broken, &input)?;
    println!("broken selector: {} ({})", fallback.best.surface, fallback.fallback.unwrap_or_default());
    Ok(())
}
