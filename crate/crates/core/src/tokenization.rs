//! Vocabularies, greedy longest-match segmentation, and word-boundary semantics.
//!
//! Word-initial tokens carry a prefix marker (canonically `_`). The first word
//! of a sentence is unmarked, so `"Decoding is awesome"` segments as
//! `Dec od ing _is _awe some` under a suitable vocabulary. No token may span
//! whitespace, which makes the tokenization of a completed-word prefix a prefix
//! of the tokenization of any longer text.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Canonical boundary marker used by vocabulary files.
pub const DEFAULT_MARKER: &str = "_";
/// Text of the reserved end-of-sequence token (line 0 of a vocabulary file).
pub const EOS_TEXT: &str = "<eos>";

/// Index of a token in its vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A subword unit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub id: TokenId,
    pub text: String,
}

impl Token {
    pub fn new(id: u32, text: impl Into<String>) -> Self {
        Token { id: TokenId(id), text: text.into() }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// How a tokenizer marks the start of a word.
///
/// Conventions other than a prefix marker (metaspace, byte-level `Ġ`, suffix
/// markers) are mapped onto a prefix marker by whoever owns the tokenizer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryConvention {
    pub marker: String,
    pub eos_id: TokenId,
    pub eos_text: String,
}

impl BoundaryConvention {
    pub fn starts_new_word(&self, token: &Token) -> bool {
        token.id == self.eos_id || token.text.starts_with(&self.marker)
    }

    pub fn is_eos(&self, token: &Token) -> bool {
        token.id == self.eos_id
    }

    pub fn eos(&self) -> Token {
        Token { id: self.eos_id, text: self.eos_text.clone() }
    }
}

/// A token sequence split into its completed words and its trailing word.
#[derive(Debug, Clone, PartialEq)]
pub struct WordSplit {
    pub previous_tokens: Vec<Token>,
    pub last_word_tokens: Vec<Token>,
    /// `previous_tokens.len()`.
    pub previous_len: usize,
}

/// The operations the engine needs from any tokenizer, local or remote.
pub trait SubwordTokenizer: Send + Sync {
    fn boundary(&self) -> &BoundaryConvention;

    fn tokenize(&self, text: &str) -> Result<Vec<Token>>;

    fn detokenize(&self, tokens: &[Token]) -> Result<String>;

    fn vocab_size(&self) -> usize;

    /// Every token in id order, when the tokenizer can list them.
    fn vocabulary(&self) -> Result<Vec<Token>> {
        Err(Error::Config("this tokenizer cannot list its vocabulary".into()))
    }

    fn starts_new_word(&self, token: &Token) -> bool {
        self.boundary().starts_new_word(token)
    }

    fn eos(&self) -> Token {
        self.boundary().eos()
    }
}

/// Split `tokens` at the start of the last word.
///
/// The last word begins at the final token that starts a new word, or at the
/// first token when none does (a sentence-initial partial word).
pub fn split_candidate(tokens: &[Token], boundary: &BoundaryConvention) -> WordSplit {
    let start = tokens.iter().rposition(|t| boundary.starts_new_word(t)).unwrap_or(0);
    WordSplit {
        previous_tokens: tokens[..start].to_vec(),
        last_word_tokens: tokens[start..].to_vec(),
        previous_len: start,
    }
}

/// Index of the first token of the last word; the `j` / `k` of a split.
pub fn last_word_start(tokens: &[Token], boundary: &BoundaryConvention) -> usize {
    tokens.iter().rposition(|t| boundary.starts_new_word(t)).unwrap_or(0)
}

/// NFC-normalize and collapse whitespace runs to single spaces.
pub fn normalize_text(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// A fixed vocabulary segmented by greedy longest match.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab: Vec<Token>,
    index: HashMap<String, TokenId>,
    max_chars: usize,
    boundary: BoundaryConvention,
}

impl Tokenizer {
    /// Build from token texts in id order; the first entry must be `<eos>`.
    pub fn new<I, S>(texts: I, marker: &str) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        if marker.is_empty() || marker.chars().any(char::is_whitespace) {
            return Err(Error::InvalidVocabulary(format!("unusable boundary marker {marker:?}")));
        }
        let texts: Vec<String> = texts.into_iter().map(Into::into).collect();
        match texts.first() {
            Some(first) if first == EOS_TEXT => {}
            Some(first) => {
                return Err(Error::InvalidVocabulary(format!(
                    "first entry must be {EOS_TEXT}, found {first:?}"
                )))
            }
            None => return Err(Error::InvalidVocabulary("empty vocabulary".into())),
        }

        let mut index = HashMap::with_capacity(texts.len());
        let mut vocab = Vec::with_capacity(texts.len());
        let mut max_chars = 1;
        for (i, text) in texts.into_iter().enumerate() {
            if i > 0 {
                validate_token_text(&text, marker)?;
            }
            let id = TokenId(i as u32);
            if index.insert(text.clone(), id).is_some() {
                return Err(Error::InvalidVocabulary(format!("duplicate token {text:?}")));
            }
            if i > 0 {
                max_chars = max_chars.max(text.chars().count());
            }
            vocab.push(Token { id, text });
        }

        let boundary = BoundaryConvention {
            marker: marker.to_string(),
            eos_id: TokenId(0),
            eos_text: EOS_TEXT.to_string(),
        };
        Ok(Tokenizer { vocab, index, max_chars, boundary })
    }

    /// Vocabulary with plain and word-initial single-character tokens for every
    /// character of `alphabet`, followed by `extra` tokens.
    pub fn with_fallbacks<'a>(alphabet: &str, extra: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut texts = vec![EOS_TEXT.to_string()];
        let mut seen: HashSet<String> = HashSet::new();
        let mut push = |t: String, texts: &mut Vec<String>| {
            if seen.insert(t.clone()) {
                texts.push(t);
            }
        };
        for c in alphabet.chars() {
            push(c.to_string(), &mut texts);
            push(format!("{DEFAULT_MARKER}{c}"), &mut texts);
        }
        for t in extra {
            push(t.to_string(), &mut texts);
        }
        Tokenizer::new(texts, DEFAULT_MARKER)
    }

    /// Read a vocabulary file: one token per line, line index = token id.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_vocab_text(&body)
    }

    pub fn from_vocab_text(body: &str) -> Result<Self> {
        Tokenizer::new(body.lines().map(|l| l.trim_end_matches('\r')), DEFAULT_MARKER)
    }

    /// Serialize in the vocabulary file format.
    pub fn to_vocab_text(&self) -> String {
        let mut out = String::new();
        for t in &self.vocab {
            out.push_str(&t.text);
            out.push('\n');
        }
        out
    }

    pub fn tokens(&self) -> &[Token] {
        &self.vocab
    }

    pub fn token(&self, id: TokenId) -> Option<&Token> {
        self.vocab.get(id.0 as usize)
    }

    pub fn id_of(&self, text: &str) -> Option<TokenId> {
        self.index.get(text).copied()
    }

    /// Look up tokens by text; panics on unknown text. Intended for fixtures.
    pub fn lookup(&self, texts: &[&str]) -> Vec<Token> {
        texts
            .iter()
            .map(|t| {
                let id = self.id_of(t).unwrap_or_else(|| panic!("token {t:?} not in vocabulary"));
                self.vocab[id.0 as usize].clone()
            })
            .collect()
    }

    fn segment_word(&self, piece: &str, base_offset: usize, out: &mut Vec<Token>) -> Result<()> {
        let bounds: Vec<usize> = piece.char_indices().map(|(i, _)| i).chain([piece.len()]).collect();
        let n_chars = bounds.len() - 1;
        let mut pos = 0;
        while pos < n_chars {
            let longest = self.max_chars.min(n_chars - pos);
            let hit = (1..=longest).rev().find_map(|len| {
                let sub = &piece[bounds[pos]..bounds[pos + len]];
                self.index.get(sub).map(|&id| (id, len))
            });
            match hit {
                Some((id, len)) => {
                    out.push(self.vocab[id.0 as usize].clone());
                    pos += len;
                }
                None => {
                    let mut offset = bounds[pos];
                    let mut ch = piece[offset..].chars().next().unwrap_or(' ');
                    // Report the word character, not the marker we prepended.
                    if piece[offset..].starts_with(&self.boundary.marker) {
                        offset += self.boundary.marker.len();
                        ch = piece[offset..].chars().next().unwrap_or(ch);
                    }
                    return Err(Error::UncoverableCharacter { ch, offset: base_offset + offset });
                }
            }
        }
        Ok(())
    }

    /// Check every pair of vocabulary words (up to `limit` tokens) and each
    /// sample string for round-trip and word-boundary violations.
    pub fn validate(&self, samples: &[String], limit: usize) -> ValidationReport {
        let mut report = ValidationReport::default();
        let words: Vec<String> = self
            .vocab
            .iter()
            .skip(1)
            .take(limit)
            .map(|t| t.text.strip_prefix(&self.boundary.marker).unwrap_or(&t.text).to_string())
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        let mut words = words;
        words.sort();
        let mut texts: Vec<String> = Vec::new();
        for a in &words {
            for b in &words {
                texts.push(format!("{a} {b}"));
            }
        }
        for text in texts {
            report.checked += 1;
            self.check_one(&text, &mut report, false);
        }
        for text in samples {
            report.checked += 1;
            self.check_one(text, &mut report, true);
        }
        report
    }

    fn check_one(&self, text: &str, report: &mut ValidationReport, sample: bool) {
        let normalized = normalize_text(text);
        let tokens = match self.tokenize(&normalized) {
            Ok(t) => t,
            Err(e) => {
                let list = if sample { &mut report.uncoverable_samples } else { &mut report.uncoverable };
                list.push(format!("{normalized:?}: {e}"));
                return;
            }
        };
        match self.detokenize(&tokens) {
            Ok(back) if back == normalized => {}
            Ok(back) => report.round_trip.push(format!("{normalized:?} -> {back:?}")),
            Err(e) => report.round_trip.push(format!("{normalized:?}: {e}")),
        }
        let expected: Vec<&str> = normalized.split(' ').filter(|w| !w.is_empty()).collect();
        let mut regrouped: Vec<String> = Vec::new();
        for (i, t) in tokens.iter().enumerate() {
            let body = t.text.strip_prefix(&self.boundary.marker).unwrap_or(&t.text);
            if i == 0 || self.boundary.starts_new_word(t) {
                regrouped.push(body.to_string());
            } else if let Some(last) = regrouped.last_mut() {
                last.push_str(body);
            }
        }
        if regrouped != expected {
            report.cross_boundary.push(format!("{normalized:?} regroups as {regrouped:?}"));
        }
    }
}

fn validate_token_text(text: &str, marker: &str) -> Result<()> {
    if text.is_empty() {
        return Err(Error::InvalidVocabulary("empty token".into()));
    }
    if text.chars().any(char::is_whitespace) {
        return Err(Error::InvalidVocabulary(format!("token {text:?} spans whitespace")));
    }
    if text == EOS_TEXT {
        return Err(Error::InvalidVocabulary(format!("{EOS_TEXT} must only appear on line 0")));
    }
    let body = text.strip_prefix(marker).unwrap_or(text);
    if body.is_empty() {
        return Err(Error::InvalidVocabulary(format!("bare marker token {text:?}")));
    }
    if body.contains(marker) {
        return Err(Error::InvalidVocabulary(format!(
            "token {text:?} contains the boundary marker after its first character"
        )));
    }
    Ok(())
}

impl SubwordTokenizer for Tokenizer {
    fn boundary(&self) -> &BoundaryConvention {
        &self.boundary
    }

    fn tokenize(&self, text: &str) -> Result<Vec<Token>> {
        let normalized: String = text.nfc().collect();
        let marker = self.boundary.marker.as_str();
        let mut out = Vec::new();
        let mut first = true;
        let mut search_from = 0;
        for word in normalized.split_whitespace() {
            let offset = search_from + normalized[search_from..].find(word).unwrap_or(0);
            search_from = offset + word.len();
            if let Some(at) = word.find(marker) {
                let ch = word[at..].chars().next().unwrap_or('_');
                return Err(Error::UncoverableCharacter { ch, offset: offset + at });
            }
            if first {
                self.segment_word(word, offset, &mut out)?;
                first = false;
            } else {
                let piece = format!("{marker}{word}");
                self.segment_word(&piece, offset.saturating_sub(marker.len()), &mut out)?;
            }
        }
        Ok(out)
    }

    fn detokenize(&self, tokens: &[Token]) -> Result<String> {
        let mut out = String::new();
        for (i, t) in tokens.iter().enumerate() {
            match self.vocab.get(t.id.0 as usize) {
                Some(known) if known.text == t.text => {}
                _ => return Err(Error::ForeignToken(t.id.0)),
            }
            if t.id == self.boundary.eos_id {
                if i + 1 != tokens.len() {
                    return Err(Error::EosNotFinal(i));
                }
                break;
            }
            match t.text.strip_prefix(&self.boundary.marker) {
                Some(body) => {
                    out.push(' ');
                    out.push_str(body);
                }
                None => out.push_str(&t.text),
            }
        }
        // A leading marker on the first token does not produce a leading space.
        if out.starts_with(' ') {
            out.remove(0);
        }
        Ok(out)
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn vocabulary(&self) -> Result<Vec<Token>> {
        Ok(self.vocab.clone())
    }
}

/// Result of [`Tokenizer::validate`].
#[derive(Debug, Default, Clone, Serialize)]
pub struct ValidationReport {
    pub checked: usize,
    pub round_trip: Vec<String>,
    pub cross_boundary: Vec<String>,
    /// Vocabulary word pairs the vocabulary cannot spell; informational.
    pub uncoverable: Vec<String>,
    /// Caller-supplied samples the vocabulary cannot spell.
    pub uncoverable_samples: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.round_trip.is_empty() && self.cross_boundary.is_empty() && self.uncoverable_samples.is_empty()
    }
}
