use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::text::{self, analyze, term_set};

use super::attention::{softmax, synthetic_attention, AttentionTensor};
use super::remote::RemoteScorer;

/// A (query, candidate) scoring input.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub id: &'a str,
    pub text: &'a str,
}

/// Cross-encoder style scorer: one relevance score per candidate, in candidate order.
pub trait RelevanceScorer: Send + Sync {
    fn score(&self, query: &str, candidates: &[Candidate<'_>]) -> Result<Vec<f64>>;
}

/// Source of first-decoder-token cross-attention tensors, one per candidate, in order.
pub trait AttentionSource: Send + Sync {
    fn attention(&self, query: &str, candidates: &[Candidate<'_>]) -> Result<Vec<AttentionTensor>>;
}

impl<T: RelevanceScorer + ?Sized> RelevanceScorer for Box<T> {
    fn score(&self, query: &str, candidates: &[Candidate<'_>]) -> Result<Vec<f64>> {
        (**self).score(query, candidates)
    }
}

impl<T: AttentionSource + ?Sized> AttentionSource for Box<T> {
    fn attention(&self, query: &str, candidates: &[Candidate<'_>]) -> Result<Vec<AttentionTensor>> {
        (**self).attention(query, candidates)
    }
}

/// Fraction of distinct query terms present in `text`; 0 for a query with no terms.
pub fn builtin_lexical_score(query: &str, text: &str) -> f64 {
    let q: HashMap<String, usize> = term_set(query).into_iter().zip(0..).collect();
    if q.is_empty() {
        return 0.0;
    }
    let mut found = vec![false; q.len()];
    let mut remaining = q.len();
    for raw in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        let slot = if raw.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit()) {
            q.get(raw)
        } else {
            q.get(raw.to_lowercase().as_str())
        };
        if let Some(&i) = slot {
            if !found[i] {
                found[i] = true;
                remaining -= 1;
                if remaining == 0 {
                    break;
                }
            }
        }
    }
    (q.len() - remaining) as f64 / q.len() as f64
}

/// Offline stand-in for a cross-encoder. `max_tokens` mimics a model's input window: only
/// the first `max_tokens` whitespace tokens of a candidate are read.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalScorer {
    pub max_tokens: Option<usize>,
}

impl LexicalScorer {
    pub fn truncated(max_tokens: usize) -> Self {
        LexicalScorer {
            max_tokens: Some(max_tokens),
        }
    }
}

impl RelevanceScorer for LexicalScorer {
    fn score(&self, query: &str, candidates: &[Candidate<'_>]) -> Result<Vec<f64>> {
        Ok(candidates
            .iter()
            .map(|c| match self.max_tokens {
                None => builtin_lexical_score(query, c.text),
                Some(n) => {
                    let head = text::tokenize(c.text).take(n).collect::<Vec<_>>().join(" ");
                    builtin_lexical_score(query, &head)
                }
            })
            .collect())
    }
}

/// Builtin attention source: every token of `query ⊕ passage` gets a logit (query tokens
/// and passage tokens sharing a term with the query get `match_logit`, the rest 0), and
/// the logits are softmax-normalized jointly over all candidates of the request, the way
/// a fusion decoder normalizes over the concatenated encoder outputs.
#[derive(Debug, Clone, Copy)]
pub struct LexicalAttention {
    pub match_logit: f64,
}

impl Default for LexicalAttention {
    fn default() -> Self {
        LexicalAttention { match_logit: 4.0 }
    }
}

impl AttentionSource for LexicalAttention {
    fn attention(&self, query: &str, candidates: &[Candidate<'_>]) -> Result<Vec<AttentionTensor>> {
        let q_terms: HashSet<String> = term_set(query);
        let q_len = text::token_count(query);
        let mut logits: Vec<Vec<f64>> = Vec::with_capacity(candidates.len());
        for c in candidates {
            let mut row = vec![self.match_logit; q_len];
            row.extend(text::tokenize(c.text).map(|tok| {
                if analyze(tok).iter().any(|t| q_terms.contains(t)) {
                    self.match_logit
                } else {
                    0.0
                }
            }));
            if row.len() == q_len {
                return Err(Error::InvalidArgument(format!("candidate `{}` has no tokens", c.id)));
            }
            logits.push(row);
        }
        let flat: Vec<f64> = logits.iter().flatten().copied().collect();
        let normalized = softmax(&flat);
        let mut offset = 0;
        logits
            .iter()
            .map(|row| {
                let scores = normalized[offset..offset + row.len()].to_vec();
                offset += row.len();
                let mask = (0..row.len()).map(|k| k < q_len).collect();
                AttentionTensor::new(1, 1, row.len(), scores, mask)
            })
            .collect()
    }
}

/// Seeded pseudo-random attention, for fixtures and plumbing tests. The tensor for a
/// (query, candidate id) pair depends only on the seed, query and id.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticAttention {
    pub seed: u64,
    pub layers: usize,
    pub heads: usize,
}

impl SyntheticAttention {
    pub fn new(seed: u64) -> Self {
        SyntheticAttention {
            seed,
            layers: 4,
            heads: 4,
        }
    }

    pub fn pair_seed(&self, query: &str, id: &str) -> u64 {
        mix_seed(self.seed, query, id)
    }
}

impl AttentionSource for SyntheticAttention {
    fn attention(&self, query: &str, candidates: &[Candidate<'_>]) -> Result<Vec<AttentionTensor>> {
        let q_len = text::token_count(query);
        candidates
            .iter()
            .map(|c| {
                let lt = q_len + text::token_count(c.text).max(1);
                synthetic_attention(self.pair_seed(query, c.id), self.layers, self.heads, lt, q_len)
            })
            .collect()
    }
}

/// Seeded pseudo-random relevance in `[0, 1)`.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticScorer {
    pub seed: u64,
}

impl RelevanceScorer for SyntheticScorer {
    fn score(&self, query: &str, candidates: &[Candidate<'_>]) -> Result<Vec<f64>> {
        Ok(candidates
            .iter()
            .map(|c| (mix_seed(self.seed, query, c.id) >> 11) as f64 / (1u64 << 53) as f64)
            .collect())
    }
}

fn mix_seed(seed: u64, query: &str, id: &str) -> u64 {
    let mut z = seed ^ text::fnv1a(query.as_bytes()).rotate_left(17) ^ text::fnv1a(id.as_bytes());
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScorerKind {
    BuiltinLexical,
    Remote,
    Synthetic,
}

/// Where scores come from. Parsed from `builtin`, `synthetic:<seed>` or an `http(s)://` URL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScorerHandle {
    pub kind: ScorerKind,
    pub endpoint: Option<String>,
    pub seed: u64,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub timeout: Duration,
}

impl ScorerHandle {
    pub const DEFAULT_BATCH_SIZE: usize = 32;
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

    pub fn builtin() -> Self {
        ScorerHandle {
            kind: ScorerKind::BuiltinLexical,
            endpoint: None,
            seed: 0,
            batch_size: Self::DEFAULT_BATCH_SIZE,
            max_in_flight: 4,
            timeout: Self::DEFAULT_TIMEOUT,
        }
    }

    pub fn synthetic(seed: u64) -> Self {
        ScorerHandle {
            kind: ScorerKind::Synthetic,
            seed,
            ..Self::builtin()
        }
    }

    pub fn remote(endpoint: impl Into<String>) -> Self {
        ScorerHandle {
            kind: ScorerKind::Remote,
            endpoint: Some(endpoint.into()),
            ..Self::builtin()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_in_flight == 0 {
            return Err(Error::InvalidArgument("batch_size and max_in_flight must be >= 1".into()));
        }
        if self.kind == ScorerKind::Remote && self.endpoint.is_none() {
            return Err(Error::InvalidArgument("remote scorer requires an endpoint".into()));
        }
        Ok(())
    }

    pub fn relevance_scorer(&self) -> Result<Box<dyn RelevanceScorer>> {
        self.validate()?;
        Ok(match self.kind {
            ScorerKind::BuiltinLexical => Box::new(LexicalScorer::default()),
            ScorerKind::Synthetic => Box::new(SyntheticScorer { seed: self.seed }),
            ScorerKind::Remote => Box::new(RemoteScorer::from_handle(self)?),
        })
    }

    pub fn attention_source(&self) -> Result<Box<dyn AttentionSource>> {
        self.validate()?;
        Ok(match self.kind {
            ScorerKind::BuiltinLexical => Box::new(LexicalAttention::default()),
            ScorerKind::Synthetic => Box::new(SyntheticAttention::new(self.seed)),
            ScorerKind::Remote => Box::new(RemoteScorer::from_handle(self)?),
        })
    }
}

impl fmt::Display for ScorerHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ScorerKind::BuiltinLexical => f.write_str("builtin"),
            ScorerKind::Synthetic => write!(f, "synthetic:{}", self.seed),
            ScorerKind::Remote => f.write_str(self.endpoint.as_deref().unwrap_or("")),
        }
    }
}

impl FromStr for ScorerHandle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "builtin" {
            Ok(Self::builtin())
        } else if let Some(seed) = s.strip_prefix("synthetic:") {
            let seed = seed
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad synthetic seed in `{s}`")))?;
            Ok(Self::synthetic(seed))
        } else if s.starts_with("http://") || s.starts_with("https://") {
            Ok(Self::remote(s.trim_end_matches('/')))
        } else {
            Err(Error::InvalidArgument(format!(
                "scorer must be `builtin`, `synthetic:<seed>` or a URL, got `{s}`"
            )))
        }
    }
}
