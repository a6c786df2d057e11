//! JSON bodies of the scoring wire protocol.
//!
//! ```text
//! POST /score      {"query", "candidates": [{"id", "text"}]} -> {"scores": [{"id", "score"}]}
//! POST /attention  {"query", "candidates": [{"id", "text"}]} -> {"tensors": [{"id", "layers",
//!                  "heads", "tokens", "query_token_mask", "scores": [layer][head][token]}]}
//! GET  /health     -> {"status": "ok", "model"}
//! ```
//!
//! Responses must echo candidate ids exactly and in request order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::attention::AttentionTensor;
use super::scorer::Candidate;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireCandidate {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub query: String,
    pub candidates: Vec<WireCandidate>,
}

impl ScoreRequest {
    pub fn new(query: &str, candidates: &[Candidate<'_>]) -> Self {
        ScoreRequest {
            query: query.to_string(),
            candidates: candidates
                .iter()
                .map(|c| WireCandidate {
                    id: c.id.to_string(),
                    text: c.text.to_string(),
                })
                .collect(),
        }
    }

    pub fn ids(&self) -> Vec<String> {
        self.candidates.iter().map(|c| c.id.clone()).collect()
    }
}

/// `/attention` takes the same request body as `/score`.
pub type AttentionRequest = ScoreRequest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireScore {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<WireScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireTensor {
    pub id: String,
    pub layers: usize,
    pub heads: usize,
    pub tokens: usize,
    pub query_token_mask: Vec<bool>,
    pub scores: Vec<Vec<Vec<f64>>>,
}

impl WireTensor {
    pub fn from_tensor(id: impl Into<String>, t: &AttentionTensor) -> Self {
        WireTensor {
            id: id.into(),
            layers: t.layers(),
            heads: t.heads(),
            tokens: t.tokens(),
            query_token_mask: t.query_token_mask().to_vec(),
            scores: t.to_nested(),
        }
    }

    pub fn to_tensor(&self) -> Result<AttentionTensor> {
        let t = AttentionTensor::from_nested(&self.scores, self.query_token_mask.clone())
            .map_err(|e| Error::Protocol(format!("tensor `{}`: {e}", self.id)))?;
        if (t.layers(), t.heads(), t.tokens()) != (self.layers, self.heads, self.tokens) {
            return Err(Error::Protocol(format!(
                "tensor `{}` declares {}x{}x{} but carries {}x{}x{}",
                self.id,
                self.layers,
                self.heads,
                self.tokens,
                t.layers(),
                t.heads(),
                t.tokens()
            )));
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionResponse {
    pub tensors: Vec<WireTensor>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model: String,
}

fn check_ids<'a>(expected: &[String], got: impl ExactSizeIterator<Item = &'a str>) -> Result<()> {
    if got.len() != expected.len() {
        return Err(Error::Protocol(format!(
            "expected {} results, got {}",
            expected.len(),
            got.len()
        )));
    }
    for (i, (want, have)) in expected.iter().zip(got).enumerate() {
        if want != have {
            return Err(Error::Protocol(format!("result {i}: expected id `{want}`, got `{have}`")));
        }
    }
    Ok(())
}

/// Check id echo and finiteness, returning scores in request order.
pub fn validate_score_response(request: &ScoreRequest, response: &ScoreResponse) -> Result<Vec<f64>> {
    check_ids(&request.ids(), response.scores.iter().map(|s| s.id.as_str()))?;
    response
        .scores
        .iter()
        .map(|s| {
            if s.score.is_finite() {
                Ok(s.score)
            } else {
                Err(Error::Protocol(format!("non-finite score for `{}`", s.id)))
            }
        })
        .collect()
}

pub fn validate_attention_response(
    request: &AttentionRequest,
    response: &AttentionResponse,
) -> Result<Vec<AttentionTensor>> {
    check_ids(&request.ids(), response.tensors.iter().map(|t| t.id.as_str()))?;
    response.tensors.iter().map(WireTensor::to_tensor).collect()
}
