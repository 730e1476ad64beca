//! Surface-level metrics against reference strings.

use std::collections::HashMap;

/// 1.0 when the whitespace-normalized strings are equal.
pub fn exact_match(hypothesis: &str, reference: &str) -> f64 {
    if hypothesis.split_whitespace().eq(reference.split_whitespace()) {
        1.0
    } else {
        0.0
    }
}

/// F1 over the multisets of whitespace-separated words.
pub fn token_f1(hypothesis: &str, reference: &str) -> f64 {
    let h: Vec<&str> = hypothesis.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    if h.is_empty() && r.is_empty() {
        return 1.0;
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for w in &r {
        *counts.entry(w).or_default() += 1;
    }
    let mut overlap = 0;
    for w in &h {
        if let Some(c) = counts.get_mut(w) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / h.len() as f64;
    let recall = overlap as f64 / r.len() as f64;
    2.0 * precision * recall / (precision + recall)
}
