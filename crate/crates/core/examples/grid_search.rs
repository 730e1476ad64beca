//! Tune the interpolation weight on a synthetic development set whose
//! references were produced at a known weight.

use wordfuse::cli::grid::{default_alphas, grid_search, scored_nbest, Metric};
use wordfuse::fixtures::grid_fixture;
use wordfuse::{EnsembleConfig, Mode};

fn main() -> wordfuse::Result<()> {
    let fixture = grid_fixture(7, 60, 0.8, 8)?;
    let cfg = EnsembleConfig { mode: Mode::GeneratorOnly, topk: 7, beams: fixture.nbest, max_len: 8, ..Default::default() };
    let lists = scored_nbest(&fixture.generator, &fixture.ranker, &fixture.dev, &cfg)?;
    let report = grid_search(&lists, &fixture.dev, &default_alphas(), Metric::ExactMatch)?;
    for row in &report.rows {
        println!("alpha {:.1}  exact {:.3}  f1 {:.3}", row.alpha, row.exact_match, row.token_f1);
    }
    println!("best alpha {:.1} (references made at {:.1})", report.best_alpha, fixture.alpha_star);
    Ok(())
}
