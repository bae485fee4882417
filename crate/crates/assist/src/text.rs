//! Word-level text helpers shared by retrieval and novelty scoring.

use std::collections::BTreeSet;

/// Case-folded alphanumeric runs, in order of appearance.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

pub fn word_set(text: &str) -> BTreeSet<String> {
    tokens(text).into_iter().collect()
}

/// |A ∩ B| / |A ∪ B| over word sets; 0 when both are empty.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn jaccard_text(a: &str, b: &str) -> f64 {
    jaccard(&word_set(a), &word_set(b))
}

/// ceil(chars / 4).
pub fn token_estimate(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}
