//! Three-stage funnel: sparse cluster retrieval, document pre-ranking, passage post-ranking.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::time::Instant;

use rayon::prelude::*;

use crate::chunker::{cluster_unit, document_unit, segment_cluster, segment_document, Granularity, RetrievalUnit};
use crate::corpus::{build_graph, cluster_documents, Cluster, Corpus};
use crate::error::{Error, Result};
use crate::eval::{QaItem, RunFile, RunRecord, StageTiming};
use crate::rank::{self, AggregationScheme, AttentionSource, LexicalAttention, LexicalScorer, RelevanceScorer};
use crate::sparse::{build_index, rank_scored, Bm25Params, ScoredHit, SparseIndex};

use super::config::{FunnelConfig, StageDepth};

/// Run-file stage holding every post-ranked passage score, not just the top `H`.
pub const ALL_PASSAGE_SCORES: &str = "post-rank-scores";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Retrieval,
    PreRank,
    PostRank,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Retrieval => "retrieval",
            Stage::PreRank => "pre-rank",
            Stage::PostRank => "post-rank",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageResult {
    pub stage: Stage,
    pub granularity: Granularity,
    pub candidates_in: usize,
    pub hits: Vec<ScoredHit>,
    /// Every score the stage computed, in candidate order.
    pub scores: Vec<(String, f64)>,
    /// Parent unit of each candidate (document for a passage, cluster for a document).
    pub parents: HashMap<String, String>,
    pub seconds: f64,
}

impl StageResult {
    pub fn candidates_out(&self) -> usize {
        self.hits.len()
    }

    pub fn timing(&self) -> StageTiming {
        StageTiming {
            stage: self.stage.as_str().to_string(),
            seconds: self.seconds,
            candidates_in: self.candidates_in,
            candidates_out: self.hits.len(),
        }
    }

    pub fn hit_ids(&self) -> Vec<String> {
        self.hits.iter().map(|h| h.unit_id.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunnelTrace {
    pub query_id: String,
    pub stages: Vec<StageResult>,
}

impl FunnelTrace {
    pub fn stage(&self, stage: Stage) -> Option<&StageResult> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    /// The oracle passages `P_f`: the post-ranking top `H`, empty below full depth.
    pub fn final_passages(&self) -> &[ScoredHit] {
        self.stage(Stage::PostRank).map_or(&[], |s| &s.hits)
    }

    /// Ancestors of a unit, nearest first, following the recorded parents.
    pub fn lineage(&self, unit_id: &str) -> Vec<&str> {
        let mut out = Vec::new();
        let mut cur = unit_id;
        for s in self.stages.iter().rev() {
            if let Some(p) = s.parents.get(cur) {
                out.push(p.as_str());
                cur = p;
            }
        }
        out
    }

    pub fn timings(&self) -> Vec<StageTiming> {
        self.stages.iter().map(StageResult::timing).collect()
    }

    /// Run-file rendering: one timing line per stage, the kept hits per stage, and every
    /// post-ranked passage under [`ALL_PASSAGE_SCORES`].
    pub fn to_run(&self) -> RunFile {
        let mut run = RunFile::default();
        for s in &self.stages {
            run.timings.push((self.query_id.clone(), s.timing()));
        }
        for s in &self.stages {
            push_hits(&mut run, &self.query_id, s.granularity, s.stage.as_str(), &s.hits);
            if s.stage == Stage::PostRank {
                let all = rank_scored(s.scores.clone(), s.scores.len());
                push_hits(&mut run, &self.query_id, s.granularity, ALL_PASSAGE_SCORES, &all);
            }
        }
        run
    }
}

pub(crate) fn push_hits(run: &mut RunFile, query_id: &str, granularity: Granularity, stage: &str, hits: &[ScoredHit]) {
    run.records.extend(hits.iter().map(|h| RunRecord {
        query_id: query_id.to_string(),
        unit_id: h.unit_id.clone(),
        granularity,
        rank: h.rank,
        score: h.score,
        stage: stage.to_string(),
    }));
}

/// Corpus plus clusters, with lookups for segmenting retrieved units.
#[derive(Debug, Clone)]
pub struct DocumentStore {
    pub corpus: Corpus,
    pub clusters: Vec<Cluster>,
    by_id: HashMap<String, usize>,
}

impl DocumentStore {
    pub fn new(corpus: Corpus, clusters: Vec<Cluster>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(clusters.len());
        for (i, c) in clusters.iter().enumerate() {
            if by_id.insert(c.cluster_id.clone(), i).is_some() {
                return Err(Error::DuplicateId(c.cluster_id.clone()));
            }
            if let Some(m) = c.member_doc_ids.iter().find(|m| corpus.get(m).is_none()) {
                return Err(Error::UnknownId(m.clone()));
            }
        }
        Ok(DocumentStore { corpus, clusters, by_id })
    }

    pub fn cluster(&self, cluster_id: &str) -> Option<&Cluster> {
        self.by_id.get(cluster_id).map(|&i| &self.clusters[i])
    }

    /// One coarse unit per cluster, for indexing.
    pub fn cluster_units(&self) -> Result<Vec<RetrievalUnit>> {
        self.clusters.iter().map(|c| cluster_unit(c, &self.corpus)).collect()
    }

    /// Document units of the given clusters, in cluster order then member order.
    pub fn expand_clusters(&self, cluster_ids: &[String]) -> Result<Vec<RetrievalUnit>> {
        let mut out = Vec::new();
        for id in cluster_ids {
            let c = self.cluster(id).ok_or_else(|| Error::UnknownId(id.clone()))?;
            out.extend(segment_cluster(c, &self.corpus)?);
        }
        Ok(out)
    }

    /// Passage units of the given documents, in document order then window order.
    pub fn expand_documents(&self, doc_ids: &[String], passage_size: usize) -> Result<Vec<RetrievalUnit>> {
        let mut out = Vec::new();
        for id in doc_ids {
            let d = self.corpus.get(id).ok_or_else(|| Error::UnknownId(id.clone()))?;
            out.extend(segment_document(&document_unit(d), passage_size)?);
        }
        Ok(out)
    }
}

/// Everything a funnel query reads. Immutable once built and shared across query threads.
#[derive(Debug, Clone)]
pub struct FunnelResources {
    pub store: DocumentStore,
    pub index: SparseIndex,
}

impl FunnelResources {
    /// Pair a store with an index built over its clusters.
    pub fn new(store: DocumentStore, index: SparseIndex) -> Result<Self> {
        if let Some(id) = index.unit_ids().iter().find(|id| store.cluster(id).is_none()) {
            return Err(Error::UnknownId(format!("index unit `{id}` is not a known cluster")));
        }
        Ok(FunnelResources { store, index })
    }

    /// Cluster the corpus under `max_cluster_size` and index the clusters.
    pub fn build(corpus: Corpus, max_cluster_size: usize, params: Bm25Params) -> Result<Self> {
        let graph = build_graph(&corpus);
        let clusters = cluster_documents(&corpus, &graph, max_cluster_size)?;
        let store = DocumentStore::new(corpus, clusters)?;
        let index = build_index(&store.cluster_units()?, params)?;
        Ok(FunnelResources { store, index })
    }
}

/// Scorers for the two neural stages.
pub struct FunnelScorers {
    pub pre: Box<dyn RelevanceScorer>,
    pub post: Box<dyn AttentionSource>,
}

impl FunnelScorers {
    pub fn builtin() -> Self {
        FunnelScorers {
            pre: Box::new(LexicalScorer::default()),
            post: Box::new(LexicalAttention::default()),
        }
    }

    pub fn from_config(config: &FunnelConfig) -> Result<Self> {
        Ok(FunnelScorers {
            pre: config.pre_rank_handle().relevance_scorer()?,
            post: config.post_rank_handle().attention_source()?,
        })
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let v = f()?;
    Ok((v, start.elapsed().as_secs_f64()))
}

/// Stage 1: BM25 over the index, keeping `top_k` units.
pub fn retrieve_stage(index: &SparseIndex, question: &str, top_k: usize, granularity: Granularity) -> Result<StageResult> {
    let (hits, seconds) = timed(|| index.search(question, top_k)).map_err(|e| e.in_stage("retrieval"))?;
    Ok(StageResult {
        stage: Stage::Retrieval,
        granularity,
        candidates_in: index.doc_count(),
        scores: hits.iter().map(|h| (h.unit_id.clone(), h.score)).collect(),
        hits,
        parents: HashMap::new(),
        seconds,
    })
}

/// Stage 2: segment retrieved clusters into documents and keep the `top_n` best by `scorer`.
pub fn pre_rank_stage(
    store: &DocumentStore,
    question: &str,
    cluster_ids: &[String],
    scorer: &dyn RelevanceScorer,
    top_n: usize,
) -> Result<StageResult> {
    let run = || {
        let docs = store.expand_clusters(cluster_ids)?;
        let ranked = rank::pre_rank(scorer, question, &docs, top_n)?;
        Ok((docs, ranked))
    };
    let ((docs, ranked), seconds) = timed(run).map_err(|e| e.in_stage("pre-rank"))?;
    Ok(StageResult {
        stage: Stage::PreRank,
        granularity: Granularity::Document,
        candidates_in: docs.len(),
        hits: ranked.hits,
        scores: ranked.scores,
        parents: parents_of(&docs),
        seconds,
    })
}

/// Stage 3: segment documents into passages and keep the `top_h` best by aggregated attention.
pub fn post_rank_stage(
    store: &DocumentStore,
    question: &str,
    doc_ids: &[String],
    passage_size: usize,
    source: &dyn AttentionSource,
    scheme: &AggregationScheme,
    top_h: usize,
) -> Result<StageResult> {
    let run = || {
        let passages = store.expand_documents(doc_ids, passage_size)?;
        let ranked = rank::post_rank_with(source, question, &passages, scheme, top_h)?;
        Ok((passages, ranked))
    };
    let ((passages, ranked), seconds) = timed(run).map_err(|e| e.in_stage("post-rank"))?;
    Ok(StageResult {
        stage: Stage::PostRank,
        granularity: Granularity::Passage,
        candidates_in: passages.len(),
        hits: ranked.hits,
        scores: ranked.scores,
        parents: parents_of(&passages),
        seconds,
    })
}

fn parents_of(units: &[RetrievalUnit]) -> HashMap<String, String> {
    units
        .iter()
        .filter_map(|u| Some((u.unit_id.clone(), u.parent_id.clone()?)))
        .collect()
}

/// Run one question through the funnel down to `config.stage_depth`.
pub fn run_funnel(
    query_id: &str,
    question: &str,
    config: &FunnelConfig,
    resources: &FunnelResources,
    scorers: &FunnelScorers,
) -> Result<FunnelTrace> {
    let mut stages = Vec::with_capacity(3);
    let retrieved = retrieve_stage(&resources.index, question, config.top_clusters, Granularity::Cluster)?;
    let clusters = retrieved.hit_ids();
    stages.push(retrieved);
    if config.stage_depth >= StageDepth::TwoStage {
        let pre = pre_rank_stage(&resources.store, question, &clusters, scorers.pre.as_ref(), config.top_docs)?;
        let docs = pre.hit_ids();
        stages.push(pre);
        if config.stage_depth == StageDepth::Full {
            stages.push(post_rank_stage(
                &resources.store,
                question,
                &docs,
                config.passage_size,
                scorers.post.as_ref(),
                &config.aggregation(),
                config.top_passages,
            )?);
        }
    }
    Ok(FunnelTrace {
        query_id: query_id.to_string(),
        stages,
    })
}

#[derive(Debug)]
pub struct QueryFailure {
    pub query_id: String,
    pub error: Error,
}

#[derive(Debug, Default)]
pub struct BatchOutcome {
    /// Successful traces, ordered by query id.
    pub traces: Vec<FunnelTrace>,
    pub failures: Vec<QueryFailure>,
}

impl BatchOutcome {
    /// Combined run file of all successful traces.
    pub fn run(&self) -> RunFile {
        let mut run = RunFile::default();
        for t in &self.traces {
            let r = t.to_run();
            run.timings.extend(r.timings);
            run.records.extend(r.records);
        }
        run
    }

    pub fn timings(&self) -> Vec<Vec<StageTiming>> {
        self.traces.iter().map(FunnelTrace::timings).collect()
    }
}

/// Run `per_query` over every QA item with up to `parallelism` queries in flight. Failures
/// are collected and do not stop the batch; results are merged by query id.
pub fn run_batch_with(
    qa: &[QaItem],
    parallelism: usize,
    per_query: impl Fn(&QaItem) -> Result<FunnelTrace> + Sync,
) -> Result<BatchOutcome> {
    let mut seen = HashSet::new();
    if let Some(dup) = qa.iter().find(|q| !seen.insert(q.query_id.as_str())) {
        return Err(Error::DuplicateId(dup.query_id.clone()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<(String, Result<FunnelTrace>)> =
        pool.install(|| qa.par_iter().map(|q| (q.query_id.clone(), per_query(q))).collect());

    let mut outcome = BatchOutcome::default();
    for (query_id, r) in results {
        match r {
            Ok(t) => outcome.traces.push(t),
            Err(error) => {
                log::warn!("query `{query_id}` failed: {error}");
                outcome.failures.push(QueryFailure { query_id, error });
            }
        }
    }
    outcome.traces.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    outcome.failures.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    Ok(outcome)
}

pub fn run_batch(
    qa: &[QaItem],
    config: &FunnelConfig,
    resources: &FunnelResources,
    scorers: &FunnelScorers,
) -> Result<BatchOutcome> {
    run_batch_with(qa, config.parallelism, |q| {
        run_funnel(&q.query_id, &q.question, config, resources, scorers)
    })
}

/// Flat baseline: passages indexed directly.
#[derive(Debug, Clone)]
pub struct FlatResources {
    pub index: SparseIndex,
    pub passages: HashMap<String, RetrievalUnit>,
}

impl FlatResources {
    pub fn build(corpus: &Corpus, passage_size: usize, params: Bm25Params) -> Result<Self> {
        let mut units = Vec::new();
        for d in corpus.documents() {
            units.extend(segment_document(&document_unit(d), passage_size)?);
        }
        let index = build_index(&units, params)?;
        Ok(FlatResources {
            index,
            passages: units.into_iter().map(|u| (u.unit_id.clone(), u)).collect(),
        })
    }
}

/// Flat baseline for one question: BM25 over all passages keeping `top_clusters` of them,
/// then, given a scorer, a rerank to `top_passages`.
pub fn run_flat(
    query_id: &str,
    question: &str,
    config: &FunnelConfig,
    flat: &FlatResources,
    scorer: Option<&dyn RelevanceScorer>,
) -> Result<FunnelTrace> {
    let retrieved = retrieve_stage(&flat.index, question, config.top_clusters, Granularity::Passage)?;
    let mut stages = vec![];
    if let Some(scorer) = scorer {
        let ids = retrieved.hit_ids();
        let run = || {
            let units: Vec<RetrievalUnit> = ids.iter().map(|id| flat.passages[id].clone()).collect();
            rank::rerank(scorer, question, &units, config.top_passages)
        };
        let (ranked, seconds) = timed(run).map_err(|e| e.in_stage("pre-rank"))?;
        stages.push(retrieved);
        stages.push(StageResult {
            stage: Stage::PreRank,
            granularity: Granularity::Passage,
            candidates_in: ids.len(),
            hits: ranked.hits,
            scores: ranked.scores,
            parents: HashMap::new(),
            seconds,
        });
    } else {
        stages.push(retrieved);
    }
    Ok(FunnelTrace {
        query_id: query_id.to_string(),
        stages,
    })
}
