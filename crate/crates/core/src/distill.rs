//! Local-to-global distillation labels.
//!
//! Passage post-ranking scores are lifted to document level as a mix of the max and mean
//! passage score, documents are annotated positive (answer hit, or top-K aggregated
//! score) or negative, and positive/negative pairs are exported for training the
//! pre-ranker with a pairwise BPR objective. Training itself happens elsewhere; this module
//! fixes the data contract and provides a reference loss.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::write_jsonl;
use crate::error::{Error, Result};
use crate::text;

pub const DEFAULT_MIX_ALPHA: f64 = 0.75;
pub const DEFAULT_TOP_K_AGG: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedDocScore {
    pub doc_id: String,
    pub s_max: f64,
    pub s_mean: f64,
    pub mix_alpha: f64,
    pub s_agg: f64,
}

/// `s_agg(d) = α · max_{p∈d} s(p) + (1 − α) · mean_{p∈d} s(p)` for every document that owns at
/// least one scored passage. Output is ordered by doc id.
pub fn aggregate_local_to_global(
    passage_scores: &[(String, f64)],
    lineage: &HashMap<String, String>,
    mix_alpha: f64,
) -> Result<Vec<AggregatedDocScore>> {
    if !(0.0..=1.0).contains(&mix_alpha) {
        return Err(Error::InvalidArgument(format!("mix_alpha must be in [0, 1], got {mix_alpha}")));
    }
    let mut per_doc: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (pid, s) in passage_scores {
        let doc = lineage.get(pid).ok_or_else(|| Error::UnknownId(pid.clone()))?;
        per_doc.entry(doc.as_str()).or_default().push(*s);
    }
    Ok(per_doc
        .into_iter()
        .map(|(doc, scores)| {
            let s_max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s_mean = scores.iter().sum::<f64>() / scores.len() as f64;
            AggregatedDocScore {
                doc_id: doc.to_string(),
                s_max,
                s_mean,
                mix_alpha,
                s_agg: mix_alpha * s_max + (1.0 - mix_alpha) * s_mean,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositiveSource {
    Hit,
    TopAggregated,
    Both,
}

#[derive(Debug, Clone, Copy)]
pub struct DocCandidate<'a> {
    pub doc_id: &'a str,
    pub text: &'a str,
    pub s_agg: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Annotation {
    /// Positive documents in candidate order.
    pub positives: Vec<(String, PositiveSource)>,
    /// Negative documents in candidate order.
    pub negatives: Vec<String>,
}

/// `D+ = hits ∪ top-K by s_agg`, `D− = D_m \ D+`. A hit is a candidate whose text contains
/// any answer under recall normalization. Top-K ties break by doc id.
pub fn annotate(candidates: &[DocCandidate<'_>], answers: &[String], top_k_agg: usize) -> Result<Annotation> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("annotation needs at least one candidate".into()));
    }
    let mut by_agg: Vec<&DocCandidate<'_>> = candidates.iter().collect();
    by_agg.sort_by(|a, b| b.s_agg.total_cmp(&a.s_agg).then_with(|| a.doc_id.cmp(b.doc_id)));
    let top: HashSet<&str> = by_agg.iter().take(top_k_agg).map(|c| c.doc_id).collect();

    let mut ann = Annotation::default();
    for c in candidates {
        let normalized = text::normalize_for_recall(c.text);
        let hit = answers.iter().any(|a| text::contains_answer(&normalized, a));
        let in_top = top.contains(c.doc_id);
        let source = match (hit, in_top) {
            (true, true) => Some(PositiveSource::Both),
            (true, false) => Some(PositiveSource::Hit),
            (false, true) => Some(PositiveSource::TopAggregated),
            (false, false) => None,
        };
        match source {
            Some(s) => ann.positives.push((c.doc_id.to_string(), s)),
            None => ann.negatives.push(c.doc_id.to_string()),
        }
    }
    Ok(ann)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairMode {
    AllPairs,
    /// Each positive is paired with its `n` highest-s_agg negatives.
    Capped(usize),
}

impl Default for PairMode {
    fn default() -> Self {
        PairMode::Capped(4)
    }
}

impl fmt::Display for PairMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PairMode::AllPairs => f.write_str("all"),
            PairMode::Capped(n) => write!(f, "capped:{n}"),
        }
    }
}

impl FromStr for PairMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(PairMode::AllPairs);
        }
        s.strip_prefix("capped:")
            .and_then(|n| n.parse().ok())
            .map(PairMode::Capped)
            .ok_or_else(|| Error::InvalidArgument(format!("pair mode must be `all` or `capped:<n>`, got `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillPair {
    pub query_id: String,
    #[serde(rename = "pos")]
    pub positive_doc: String,
    #[serde(rename = "neg")]
    pub negative_doc: String,
    pub s_pre_pos: f64,
    pub s_pre_neg: f64,
    pub s_agg_pos: f64,
    pub s_agg_neg: f64,
    #[serde(rename = "pos_source")]
    pub positive_source: PositiveSource,
}

/// Build (positive, negative) pairs ordered by positive id then negative id.
pub fn export_pairs(
    query_id: &str,
    annotation: &Annotation,
    s_pre: &HashMap<String, f64>,
    s_agg: &HashMap<String, f64>,
    mode: PairMode,
) -> Result<Vec<DistillPair>> {
    let lookup = |m: &HashMap<String, f64>, id: &str| m.get(id).copied().ok_or_else(|| Error::UnknownId(id.to_string()));

    let mut negatives: Vec<(&str, f64)> = annotation
        .negatives
        .iter()
        .map(|n| Ok((n.as_str(), lookup(s_agg, n)?)))
        .collect::<Result<_>>()?;
    negatives.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let take = match mode {
        PairMode::AllPairs => negatives.len(),
        PairMode::Capped(n) => n.min(negatives.len()),
    };

    let mut pairs = Vec::new();
    for (pos, source) in &annotation.positives {
        let (pre_pos, agg_pos) = (lookup(s_pre, pos)?, lookup(s_agg, pos)?);
        for &(neg, agg_neg) in &negatives[..take] {
            pairs.push(DistillPair {
                query_id: query_id.to_string(),
                positive_doc: pos.clone(),
                negative_doc: neg.to_string(),
                s_pre_pos: pre_pos,
                s_pre_neg: lookup(s_pre, neg)?,
                s_agg_pos: agg_pos,
                s_agg_neg: agg_neg,
                positive_source: *source,
            });
        }
    }
    pairs.sort_by(|a, b| {
        a.positive_doc
            .cmp(&b.positive_doc)
            .then_with(|| a.negative_doc.cmp(&b.negative_doc))
    });
    Ok(pairs)
}

/// `−ln σ(x)`, stable for large |x|.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Summed BPR loss `Σ −ln σ(s_pre_pos − s_pre_neg)` over all pairs.
pub fn bpr_loss(pairs: &[DistillPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("bpr_loss needs at least one pair".into()));
    }
    pairs.iter().try_fold(0.0, |acc, p| {
        if !(p.s_pre_pos.is_finite() && p.s_pre_neg.is_finite()) {
            return Err(Error::NonFinite(format!(
                "pair ({}, {}) of query `{}`",
                p.positive_doc, p.negative_doc, p.query_id
            )));
        }
        Ok(acc + neg_log_sigmoid(p.s_pre_pos - p.s_pre_neg))
    })
}

/// Mean BPR loss per pair.
pub fn bpr_loss_mean(pairs: &[DistillPair]) -> Result<f64> {
    Ok(bpr_loss(pairs)? / pairs.len() as f64)
}

/// Everything needed to label one query.
#[derive(Debug, Clone)]
pub struct QueryEvidence<'a> {
    pub query_id: &'a str,
    pub answers: &'a [String],
    /// Pre-ranked documents `D_m` with their pre-ranking scores.
    pub pre_scores: &'a [(String, f64)],
    /// Post-ranking scores of passages from `D_m`.
    pub passage_scores: &'a [(String, f64)],
    pub lineage: &'a HashMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillSettings {
    pub mix_alpha: f64,
    pub top_k_agg: usize,
    pub mode: PairMode,
}

impl Default for DistillSettings {
    fn default() -> Self {
        DistillSettings {
            mix_alpha: DEFAULT_MIX_ALPHA,
            top_k_agg: DEFAULT_TOP_K_AGG,
            mode: PairMode::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryLabels {
    pub annotation: Annotation,
    pub pairs: Vec<DistillPair>,
    /// Candidates dropped because none of their passages were scored.
    pub unscored: Vec<String>,
}

/// Aggregate, annotate and export pairs for one query.
pub fn label_query<'a>(
    ev: &QueryEvidence<'_>,
    doc_text: impl Fn(&str) -> Option<&'a str>,
    settings: &DistillSettings,
) -> Result<QueryLabels> {
    let agg = aggregate_local_to_global(ev.passage_scores, ev.lineage, settings.mix_alpha)?;
    let s_agg: HashMap<String, f64> = agg.into_iter().map(|a| (a.doc_id, a.s_agg)).collect();
    let s_pre: HashMap<String, f64> = ev.pre_scores.iter().cloned().collect();

    let mut unscored = Vec::new();
    let mut candidates = Vec::new();
    for (doc, _) in ev.pre_scores {
        let Some(&s) = s_agg.get(doc) else {
            unscored.push(doc.clone());
            continue;
        };
        let text = doc_text(doc).ok_or_else(|| Error::UnknownId(doc.clone()))?;
        candidates.push(DocCandidate {
            doc_id: doc,
            text,
            s_agg: s,
        });
    }
    if candidates.is_empty() {
        return Ok(QueryLabels {
            unscored,
            ..Default::default()
        });
    }
    let annotation = annotate(&candidates, ev.answers, settings.top_k_agg)?;
    let pairs = export_pairs(ev.query_id, &annotation, &s_pre, &s_agg, settings.mode)?;
    Ok(QueryLabels {
        annotation,
        pairs,
        unscored,
    })
}

pub fn write_pairs(pairs: &[DistillPair], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(pairs, path.as_ref())
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<DistillPair>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(path, n + 1, e.to_string()))?);
    }
    Ok(out)
}
