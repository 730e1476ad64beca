//! Online ensembling of a generator and a ranker that tokenize text
//! differently.
//!
//! The ranker's scores are merged into beam search only over completed
//! words, so neither model ever scores a partial word under a tokenization
//! it would not produce itself.

pub mod cli;
pub mod error;
pub mod fixtures;
pub mod merge;
pub mod oracle;
pub mod protocol;
pub mod rerank;
pub mod scoring;
pub mod search;
pub mod tokenization;

pub use error::{Error, Result};
pub use merge::{merge_score, merge_score_tokens, Branch, MergeBreakdown};
pub use rerank::{joint_rerank, rerank_nbest, select_best, NBestEntry, Selector};
pub use scoring::{ModelInput, Role, Scorer};
pub use search::{decode, decode_generator_only, decode_online, DecodeOutput, EnsembleConfig, Mode};
pub use tokenization::{SubwordTokenizer, Token, Tokenizer};
