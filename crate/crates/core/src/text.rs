//! Tokenization, analysis and answer-string normalization.
//!
//! Three different views of text are used across the funnel:
//!
//! * **tokens** (`tokenize`): maximal runs of non-whitespace characters. Used
//!   for every size measurement (cluster budget, passage windows) so counts
//!   stay comparable across granularities.
//! * **terms** (`analyze`): lowercased alphanumeric runs. Used by BM25 and the
//!   builtin lexical scorer.
//! * **normalized strings** (`normalize_for_recall`, `normalize_for_em`): used
//!   for answer matching.

use std::collections::HashSet;

/// Whitespace tokenizer: every maximal run of non-whitespace characters is one token.
pub fn tokenize(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

pub fn token_count(text: &str) -> usize {
    tokenize(text).count()
}

/// Pluggable term analyzer for the sparse index and lexical scorers.
pub trait Analyzer: Send + Sync {
    /// Stable name recorded in index manifests.
    fn name(&self) -> &str;
    fn analyze(&self, text: &str) -> Vec<String>;
}

/// Lowercase, split on anything that is not alphanumeric. No stemming, no stopwords.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimpleAnalyzer;

impl SimpleAnalyzer {
    pub const NAME: &'static str = "simple-lowercase-alnum";
}

impl Analyzer for SimpleAnalyzer {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn analyze(&self, text: &str) -> Vec<String> {
        analyze(text)
    }
}

pub fn analyze(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn term_set(text: &str) -> HashSet<String> {
    analyze(text).into_iter().collect()
}

/// Lowercase and collapse whitespace runs to single spaces. Used for answer recall
/// substring matching.
pub fn normalize_for_recall(text: &str) -> String {
    let lower = text.to_lowercase();
    let mut out = String::with_capacity(lower.len());
    for tok in lower.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}

/// True when `answer` (normalized) occurs inside `text` (normalized). Empty answers never match.
pub fn contains_answer(normalized_text: &str, answer: &str) -> bool {
    let a = normalize_for_recall(answer);
    !a.is_empty() && normalized_text.contains(&a)
}

/// Open-domain QA exact-match normalization: lowercase, strip punctuation, drop the
/// articles a/an/the, collapse whitespace.
pub fn normalize_for_em(text: &str) -> String {
    let lower = text.to_lowercase();
    let stripped: String = lower
        .chars()
        .map(|c| if c.is_ascii_punctuation() || is_unicode_punct(c) { ' ' } else { c })
        .collect();
    stripped
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn is_unicode_punct(c: char) -> bool {
    matches!(
        c,
        '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' | '\u{2013}' | '\u{2014}' | '\u{2026}'
    )
}

/// 64-bit FNV-1a. Used to derive stable per-(query, unit) seeds.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
