//! Pre-ranking with a cross-encoder style scorer and post-ranking by aggregated decoder
//! cross-attention.

pub mod attention;
pub mod protocol;
pub mod remote;
pub mod scorer;

use std::collections::{HashMap, HashSet};

use crate::chunker::{Granularity, RetrievalUnit};
use crate::error::{Error, Result};
use crate::sparse::{rank_scored, ScoredHit};

pub use attention::{
    aggregate_attention, select_representative_tokens, synthetic_attention, AggregationScheme,
    AttentionTensor, RepresentativeTokens, Scheme,
};
pub use remote::{RemoteScorer, RetryPolicy};
pub use scorer::{
    builtin_lexical_score, AttentionSource, Candidate, LexicalAttention, LexicalScorer,
    RelevanceScorer, ScorerHandle, ScorerKind, SyntheticAttention, SyntheticScorer,
};

/// Output of a ranking stage: the kept hits plus every score that was computed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ranked {
    pub hits: Vec<ScoredHit>,
    /// All candidates with their scores, in candidate order.
    pub scores: Vec<(String, f64)>,
}

fn check_unique(units: &[RetrievalUnit]) -> Result<()> {
    let mut seen = HashSet::with_capacity(units.len());
    for u in units {
        if !seen.insert(u.unit_id.as_str()) {
            return Err(Error::DuplicateId(u.unit_id.clone()));
        }
    }
    Ok(())
}

/// Score units of any granularity with `scorer` and keep the `top` best
/// (score descending, unit id ascending).
pub fn rerank(
    scorer: &dyn RelevanceScorer,
    query: &str,
    units: &[RetrievalUnit],
    top: usize,
) -> Result<Ranked> {
    if top == 0 {
        return Err(Error::InvalidArgument("top must be >= 1".into()));
    }
    check_unique(units)?;
    if units.is_empty() {
        return Ok(Ranked::default());
    }
    let candidates: Vec<Candidate<'_>> = units
        .iter()
        .map(|u| Candidate {
            id: &u.unit_id,
            text: &u.text,
        })
        .collect();
    let raw = scorer.score(query, &candidates)?;
    if raw.len() != units.len() {
        return Err(Error::Protocol(format!(
            "scorer returned {} scores for {} candidates",
            raw.len(),
            units.len()
        )));
    }
    if let Some(i) = raw.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score for `{}`", units[i].unit_id)));
    }
    let scores: Vec<(String, f64)> = units.iter().map(|u| u.unit_id.clone()).zip(raw).collect();
    Ok(Ranked {
        hits: rank_scored(scores.clone(), top),
        scores,
    })
}

/// Pre-rank document-level units, keeping the `top_n` best.
pub fn pre_rank(
    scorer: &dyn RelevanceScorer,
    query: &str,
    units: &[RetrievalUnit],
    top_n: usize,
) -> Result<Ranked> {
    if let Some(u) = units.iter().find(|u| u.granularity != Granularity::Document) {
        return Err(Error::InvalidArgument(format!(
            "pre-ranking expects document units, `{}` is a {}",
            u.unit_id, u.granularity
        )));
    }
    rerank(scorer, query, units, top_n)
}

/// Post-rank passages by aggregated attention, keeping the `top_h` best. Every passage
/// needs a tensor in `tensors`.
pub fn post_rank(
    passages: &[RetrievalUnit],
    tensors: &HashMap<String, AttentionTensor>,
    scheme: &AggregationScheme,
    top_h: usize,
) -> Result<Ranked> {
    if top_h == 0 {
        return Err(Error::InvalidArgument("top_h must be >= 1".into()));
    }
    check_unique(passages)?;
    let mut scores = Vec::with_capacity(passages.len());
    for p in passages {
        if p.granularity != Granularity::Passage {
            return Err(Error::InvalidArgument(format!(
                "post-ranking expects passage units, `{}` is a {}",
                p.unit_id, p.granularity
            )));
        }
        let t = tensors
            .get(&p.unit_id)
            .ok_or_else(|| Error::MissingTensor(p.unit_id.clone()))?;
        scores.push((p.unit_id.clone(), aggregate_attention(t, scheme)?));
    }
    Ok(Ranked {
        hits: rank_scored(scores.clone(), top_h),
        scores,
    })
}

/// Fetch tensors for `passages` from `source` and post-rank them.
pub fn post_rank_with(
    source: &dyn AttentionSource,
    query: &str,
    passages: &[RetrievalUnit],
    scheme: &AggregationScheme,
    top_h: usize,
) -> Result<Ranked> {
    if passages.is_empty() {
        return Ok(Ranked::default());
    }
    let candidates: Vec<Candidate<'_>> = passages
        .iter()
        .map(|p| Candidate {
            id: &p.unit_id,
            text: &p.text,
        })
        .collect();
    let tensors = source.attention(query, &candidates)?;
    if tensors.len() != passages.len() {
        return Err(Error::Protocol(format!(
            "attention source returned {} tensors for {} passages",
            tensors.len(),
            passages.len()
        )));
    }
    let map: HashMap<String, AttentionTensor> = passages
        .iter()
        .map(|p| p.unit_id.clone())
        .zip(tensors)
        .collect();
    post_rank(passages, &map, scheme, top_h)
}
