//! Two vocabularies split the same sentence differently; word boundaries are
//! the only positions where both views agree.

use wordfuse::fixtures::{awesome_generator_vocab, awesome_ranker_vocab, AWESOME};
use wordfuse::SubwordTokenizer;

fn main() -> wordfuse::Result<()> {
    let text = std::env::args().nth(1).unwrap_or_else(|| AWESOME.to_string());
    for (name, tok) in [("generator", awesome_generator_vocab()), ("ranker", awesome_ranker_vocab())] {
        let tokens = tok.tokenize(&text)?;
        let pieces: Vec<&str> = tokens.iter().map(|t| t.text.as_str()).collect();
        println!("{name}: {}", pieces.join(" | "));
        for i in 1..=tokens.len() {
            let at_word_end = i == tokens.len() || tok.starts_new_word(&tokens[i]);
            println!("  {:<24}{}", format!("{:?}", tok.detokenize(&tokens[..i])?), if at_word_end { " word end" } else { "" });
        }
    }
    Ok(())
}
