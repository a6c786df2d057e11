//! Decoder cross-attention tensors and their aggregation into a post-ranking score.
//!
//! A tensor holds, for one (query ⊕ passage) input, the normalized cross-attention of the
//! first decoder token over every input token, for every layer and head. The default
//! score averages, over all layers and heads, the `lr` highest-attention passage tokens
//! ("representative tokens") of each (layer, head).

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor {
    layers: usize,
    heads: usize,
    tokens: usize,
    /// Row-major `[layer][head][token]`.
    scores: Vec<f64>,
    query_token_mask: Vec<bool>,
    token_ids: Option<Vec<String>>,
}

impl AttentionTensor {
    pub fn new(
        layers: usize,
        heads: usize,
        tokens: usize,
        scores: Vec<f64>,
        query_token_mask: Vec<bool>,
    ) -> Result<Self> {
        if layers == 0 || heads == 0 || tokens == 0 {
            return Err(Error::InvalidTensor(format!(
                "dimensions must be >= 1, got {layers}x{heads}x{tokens}"
            )));
        }
        if scores.len() != layers * heads * tokens {
            return Err(Error::InvalidTensor(format!(
                "expected {} scores, got {}",
                layers * heads * tokens,
                scores.len()
            )));
        }
        if let Some(pos) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidTensor(format!("non-finite score at flat index {pos}")));
        }
        if query_token_mask.len() != tokens {
            return Err(Error::InvalidTensor(format!(
                "mask length {} != token count {tokens}",
                query_token_mask.len()
            )));
        }
        if query_token_mask.iter().all(|&q| q) {
            return Err(Error::InvalidTensor("every token is a query token".into()));
        }
        Ok(AttentionTensor {
            layers,
            heads,
            tokens,
            scores,
            query_token_mask,
            token_ids: None,
        })
    }

    /// Build from a nested `[layer][head][token]` array.
    pub fn from_nested(nested: &[Vec<Vec<f64>>], query_token_mask: Vec<bool>) -> Result<Self> {
        let layers = nested.len();
        let heads = nested.first().map_or(0, Vec::len);
        let tokens = nested.first().and_then(|l| l.first()).map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(layers * heads * tokens);
        for (i, layer) in nested.iter().enumerate() {
            if layer.len() != heads {
                return Err(Error::InvalidTensor(format!("layer {i} has {} heads", layer.len())));
            }
            for (j, row) in layer.iter().enumerate() {
                if row.len() != tokens {
                    return Err(Error::InvalidTensor(format!(
                        "layer {i} head {j} has {} tokens",
                        row.len()
                    )));
                }
                flat.extend_from_slice(row);
            }
        }
        Self::new(layers, heads, tokens, flat, query_token_mask)
    }

    pub fn with_token_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.tokens {
            return Err(Error::InvalidTensor("token id count differs from token count".into()));
        }
        self.token_ids = Some(ids);
        Ok(self)
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn query_token_mask(&self) -> &[bool] {
        &self.query_token_mask
    }

    pub fn token_ids(&self) -> Option<&[String]> {
        self.token_ids.as_deref()
    }

    pub fn get(&self, layer: usize, head: usize, token: usize) -> f64 {
        self.scores[(layer * self.heads + head) * self.tokens + token]
    }

    /// Scores of one (layer, head) over all tokens.
    pub fn row(&self, layer: usize, head: usize) -> &[f64] {
        let start = (layer * self.heads + head) * self.tokens;
        &self.scores[start..start + self.tokens]
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.layers)
            .map(|i| (0..self.heads).map(|j| self.row(i, j).to_vec()).collect())
            .collect()
    }

    /// Apply `f(layer, head, token, score)` to every entry. The mask is kept.
    pub fn map(&self, f: impl Fn(usize, usize, usize, f64) -> f64) -> Result<Self> {
        let mut scores = Vec::with_capacity(self.scores.len());
        for i in 0..self.layers {
            for j in 0..self.heads {
                for k in 0..self.tokens {
                    scores.push(f(i, j, k, self.get(i, j, k)));
                }
            }
        }
        Self::new(self.layers, self.heads, self.tokens, scores, self.query_token_mask.clone())
    }

    /// Token indices that take part in aggregation.
    pub fn eligible_tokens(&self, include_query_tokens: bool) -> Vec<usize> {
        (0..self.tokens)
            .filter(|&k| include_query_tokens || !self.query_token_mask[k])
            .collect()
    }
}

/// The five attention aggregation schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// (i) Mean over layers, heads and representative tokens.
    MeanRep,
    /// (ii) Max over layers, mean over heads and eligible tokens.
    MaxLayer,
    /// (iii) Max over heads, mean over layers and eligible tokens.
    MaxHead,
    /// (iv) Max over eligible tokens, mean over layers and heads.
    MaxToken,
    /// (v) As (i), restricted to the last six layers.
    #[serde(rename = "mean-rep-last6")]
    MeanRepLast6,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::MeanRep,
        Scheme::MaxLayer,
        Scheme::MaxHead,
        Scheme::MaxToken,
        Scheme::MeanRepLast6,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::MeanRep => "mean-rep",
            Scheme::MaxLayer => "max-layer",
            Scheme::MaxHead => "max-head",
            Scheme::MaxToken => "max-token",
            Scheme::MeanRepLast6 => "mean-rep-last6",
        }
    }

    pub fn uses_rep_tokens(self) -> bool {
        matches!(self, Scheme::MeanRep | Scheme::MeanRepLast6)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mean-rep" | "i" => Scheme::MeanRep,
            "max-layer" | "ii" => Scheme::MaxLayer,
            "max-head" | "iii" => Scheme::MaxHead,
            "max-token" | "iv" => Scheme::MaxToken,
            "mean-rep-last6" | "v" => Scheme::MeanRepLast6,
            other => return Err(Error::InvalidArgument(format!("unknown scheme `{other}`"))),
        })
    }
}

/// Layers used by (v).
pub const LAST_LAYERS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationScheme {
    pub scheme: Scheme,
    pub rep_tokens: usize,
    pub include_query_tokens: bool,
}

impl Default for AggregationScheme {
    fn default() -> Self {
        AggregationScheme {
            scheme: Scheme::MeanRep,
            rep_tokens: 4,
            include_query_tokens: false,
        }
    }
}

impl AggregationScheme {
    pub fn new(scheme: Scheme, rep_tokens: usize) -> Self {
        AggregationScheme {
            scheme,
            rep_tokens,
            include_query_tokens: false,
        }
    }

    pub fn with_query_tokens(mut self, include: bool) -> Self {
        self.include_query_tokens = include;
        self
    }
}

/// Representative token indices for every (layer, head), highest score first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepresentativeTokens {
    heads: usize,
    indices: Vec<Vec<usize>>,
}

impl RepresentativeTokens {
    pub fn get(&self, layer: usize, head: usize) -> &[usize] {
        &self.indices[layer * self.heads + head]
    }
}

/// For every (layer, head), pick the `lr` eligible tokens with the highest scores, breaking
/// ties by smaller token index. When fewer than `lr` tokens are eligible all are taken.
pub fn select_representative_tokens(
    tensor: &AttentionTensor,
    lr: usize,
    include_query_tokens: bool,
) -> Result<RepresentativeTokens> {
    if lr == 0 {
        return Err(Error::InvalidArgument("rep_tokens must be >= 1".into()));
    }
    let eligible = tensor.eligible_tokens(include_query_tokens);
    if eligible.is_empty() {
        return Err(Error::NoEligibleTokens);
    }
    let mut indices = Vec::with_capacity(tensor.layers * tensor.heads);
    for i in 0..tensor.layers {
        for j in 0..tensor.heads {
            let row = tensor.row(i, j);
            let mut order = eligible.clone();
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            order.truncate(lr);
            indices.push(order);
        }
    }
    Ok(RepresentativeTokens {
        heads: tensor.heads,
        indices,
    })
}

/// Reduce a tensor to a single post-ranking score under `scheme`.
pub fn aggregate_attention(tensor: &AttentionTensor, scheme: &AggregationScheme) -> Result<f64> {
    let eligible = tensor.eligible_tokens(scheme.include_query_tokens);
    if eligible.is_empty() {
        return Err(Error::NoEligibleTokens);
    }
    let (ln, lh) = (tensor.layers, tensor.heads);
    let score = match scheme.scheme {
        Scheme::MeanRep => mean_rep(tensor, scheme, 0)?,
        Scheme::MeanRepLast6 => mean_rep(tensor, scheme, ln.saturating_sub(LAST_LAYERS))?,
        Scheme::MaxLayer => {
            let mut sum = 0.0;
            for j in 0..lh {
                for &k in &eligible {
                    sum += (0..ln).map(|i| tensor.get(i, j, k)).fold(f64::NEG_INFINITY, f64::max);
                }
            }
            sum / (lh * eligible.len()) as f64
        }
        Scheme::MaxHead => {
            let mut sum = 0.0;
            for i in 0..ln {
                for &k in &eligible {
                    sum += (0..lh).map(|j| tensor.get(i, j, k)).fold(f64::NEG_INFINITY, f64::max);
                }
            }
            sum / (ln * eligible.len()) as f64
        }
        Scheme::MaxToken => {
            let mut sum = 0.0;
            for i in 0..ln {
                for j in 0..lh {
                    let row = tensor.row(i, j);
                    sum += eligible.iter().map(|&k| row[k]).fold(f64::NEG_INFINITY, f64::max);
                }
            }
            sum / (ln * lh) as f64
        }
    };
    Ok(score)
}

fn mean_rep(tensor: &AttentionTensor, scheme: &AggregationScheme, first_layer: usize) -> Result<f64> {
    let reps = select_representative_tokens(tensor, scheme.rep_tokens, scheme.include_query_tokens)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in first_layer..tensor.layers {
        for j in 0..tensor.heads {
            let row = tensor.row(i, j);
            for &k in reps.get(i, j) {
                sum += row[k];
                count += 1;
            }
        }
    }
    Ok(sum / count as f64)
}

/// Deterministic pseudo-random tensor: every (layer, head) row is a softmax over uniform
/// logits in `[0, 4)`, and the first `query_len` tokens are marked as query tokens.
pub fn synthetic_attention(
    seed: u64,
    layers: usize,
    heads: usize,
    tokens: usize,
    query_len: usize,
) -> Result<AttentionTensor> {
    if query_len >= tokens {
        return Err(Error::InvalidArgument(format!(
            "query_len {query_len} must be < tokens {tokens}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = Vec::with_capacity(layers * heads * tokens);
    for _ in 0..layers * heads {
        let logits: Vec<f64> = (0..tokens).map(|_| rng.random_range(0.0..4.0)).collect();
        scores.extend(softmax(&logits));
    }
    let mask = (0..tokens).map(|k| k < query_len).collect();
    AttentionTensor::new(layers, heads, tokens, scores, mask)
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}
