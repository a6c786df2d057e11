//! Paired rerank experiments over shared candidates.
//!
//! * `coarse-vs-fine`: the candidate documents are reranked by a window-limited scorer once
//!   as whole documents and once as passages.
//! * `high-vs-low`: the same documents are reranked by an answer-aware oracle ("high") and
//!   by the window-limited lexical scorer ("low").
//!
//! Each arm yields a run file and an AR degradation curve over rank cutoffs.

use std::fmt;
use std::str::FromStr;

use crate::chunker::{Granularity, RetrievalUnit};
use crate::error::{Error, Result};
use crate::eval::{degradation_curve, CorpusResolver, CurvePoint, QaItem, RunFile};
use crate::rank::{self, builtin_lexical_score, Candidate, LexicalScorer, RelevanceScorer};
use crate::text;

use super::config::FunnelConfig;
use super::funnel::{push_hits, FunnelResources};

pub const RERANK_STAGE: &str = "rerank";
pub const DEFAULT_PERCENTS: [f64; 10] = [10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContrastMode {
    CoarseVsFine,
    HighVsLow,
}

impl fmt::Display for ContrastMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContrastMode::CoarseVsFine => "coarse-vs-fine",
            ContrastMode::HighVsLow => "high-vs-low",
        })
    }
}

impl FromStr for ContrastMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coarse-vs-fine" => Ok(ContrastMode::CoarseVsFine),
            "high-vs-low" => Ok(ContrastMode::HighVsLow),
            other => Err(Error::InvalidArgument(format!("unknown contrast mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastSettings {
    /// Clusters retrieved per query; their members form the shared candidate pool.
    pub candidate_clusters: usize,
    /// Input window of the low-capacity scorer, in tokens.
    pub window_tokens: usize,
    pub percents: Vec<f64>,
}

impl Default for ContrastSettings {
    fn default() -> Self {
        ContrastSettings {
            candidate_clusters: 10,
            window_tokens: 512,
            percents: DEFAULT_PERCENTS.to_vec(),
        }
    }
}

/// Scores 1 + lexical overlap for candidates containing a gold answer, lexical overlap otherwise.
#[derive(Debug, Clone)]
pub struct AnswerOracle {
    pub answers: Vec<String>,
}

impl RelevanceScorer for AnswerOracle {
    fn score(&self, query: &str, candidates: &[Candidate<'_>]) -> Result<Vec<f64>> {
        Ok(candidates
            .iter()
            .map(|c| {
                let norm = text::normalize_for_recall(c.text);
                let hit = self.answers.iter().any(|a| text::contains_answer(&norm, a));
                builtin_lexical_score(query, c.text) + if hit { 1.0 } else { 0.0 }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastArm {
    pub label: String,
    pub granularity: Granularity,
    pub run: RunFile,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastReport {
    pub mode: ContrastMode,
    pub arms: [ContrastArm; 2],
}

impl ContrastReport {
    /// Plain-text table: one row per cutoff with each arm's AR and relative drop.
    pub fn table(&self) -> String {
        let [a, b] = &self.arms;
        let mut out = format!(
            "{:>7}  {:>10} {:>8}  {:>10} {:>8}\n",
            "cutoff",
            format!("{}-AR", a.label),
            "drop",
            format!("{}-AR", b.label),
            "drop"
        );
        for (pa, pb) in a.curve.iter().zip(&b.curve) {
            out.push_str(&format!(
                "{:>6}%  {:>10.4} {:>7.2}%  {:>10.4} {:>7.2}%\n",
                pa.percent,
                pa.answer_recall,
                pa.drop * 100.0,
                pb.answer_recall,
                pb.drop * 100.0
            ));
        }
        out
    }
}

/// Shared candidate documents for one question: members of the top BM25 clusters.
fn candidate_documents(resources: &FunnelResources, question: &str, clusters: usize) -> Result<Vec<RetrievalUnit>> {
    let hits = resources.index.search(question, clusters)?;
    let ids: Vec<String> = hits.into_iter().map(|h| h.unit_id).collect();
    resources.store.expand_clusters(&ids)
}

/// Rerank every query's shared candidates at `granularity` with the scorer built by
/// `scorer_for`, recording the full ranking under stage `rerank`.
pub fn rerank_arm<S: RelevanceScorer>(
    qa: &[QaItem],
    resources: &FunnelResources,
    config: &FunnelConfig,
    settings: &ContrastSettings,
    granularity: Granularity,
    scorer_for: impl Fn(&QaItem) -> S,
) -> Result<RunFile> {
    let mut run = RunFile::default();
    for item in qa {
        let docs = candidate_documents(resources, &item.question, settings.candidate_clusters)?;
        let units = match granularity {
            Granularity::Document => docs,
            Granularity::Passage => {
                let ids: Vec<String> = docs.iter().map(|d| d.unit_id.clone()).collect();
                resources.store.expand_documents(&ids, config.passage_size)?
            }
            Granularity::Cluster => {
                return Err(Error::InvalidArgument("contrast arms rerank documents or passages".into()))
            }
        };
        if units.is_empty() {
            continue;
        }
        let ranked = rank::rerank(&scorer_for(item), &item.question, &units, units.len())?;
        push_hits(&mut run, &item.query_id, granularity, RERANK_STAGE, &ranked.hits);
    }
    Ok(run)
}

fn arm(
    label: &str,
    granularity: Granularity,
    run: RunFile,
    qa: &[QaItem],
    resources: &FunnelResources,
    config: &FunnelConfig,
    settings: &ContrastSettings,
) -> Result<ContrastArm> {
    let resolver = CorpusResolver::new(&resources.store.corpus, &resources.store.clusters, config.passage_size);
    let curve = degradation_curve(&run, RERANK_STAGE, qa, &settings.percents, &resolver)?;
    Ok(ContrastArm {
        label: label.to_string(),
        granularity,
        run,
        curve,
    })
}

/// Run both arms of `mode` and their degradation curves.
pub fn contrast_mode(
    qa: &[QaItem],
    resources: &FunnelResources,
    config: &FunnelConfig,
    mode: ContrastMode,
    settings: &ContrastSettings,
) -> Result<ContrastReport> {
    if settings.candidate_clusters == 0 || settings.window_tokens == 0 {
        return Err(Error::InvalidArgument("candidate_clusters and window_tokens must be >= 1".into()));
    }
    let low = LexicalScorer::truncated(settings.window_tokens);
    let run = |g, s: &dyn Fn(&QaItem) -> Box<dyn RelevanceScorer>| rerank_arm(qa, resources, config, settings, g, s);
    let arms = match mode {
        ContrastMode::CoarseVsFine => {
            let coarse = run(Granularity::Document, &|_| Box::new(low))?;
            let fine = run(Granularity::Passage, &|_| Box::new(low))?;
            [
                arm("coarse", Granularity::Document, coarse, qa, resources, config, settings)?,
                arm("fine", Granularity::Passage, fine, qa, resources, config, settings)?,
            ]
        }
        ContrastMode::HighVsLow => {
            let high = run(Granularity::Document, &|q| {
                Box::new(AnswerOracle {
                    answers: q.answers.clone(),
                })
            })?;
            let low_run = run(Granularity::Document, &|_| Box::new(low))?;
            [
                arm("high", Granularity::Document, high, qa, resources, config, settings)?,
                arm("low", Granularity::Document, low_run, qa, resources, config, settings)?,
            ]
        }
    };
    Ok(ContrastReport { mode, arms })
}
