//! Run files, QA sets and retrieval metrics.
//!
//! # Run file format
//!
//! UTF-8 TSV. An optional header block of timing lines comes first, then one record per
//! ranked unit:
//!
//! ```text
//! #timing<TAB>query_id<TAB>stage<TAB>seconds<TAB>candidates_in<TAB>candidates_out
//! query_id<TAB>unit_id<TAB>granularity<TAB>rank<TAB>score<TAB>stage
//! ```
//!
//! Within each (query, stage), ranks run 1, 2, 3, ... and scores never increase. Floats are
//! written in shortest round-trip form, so reading a written file reproduces it exactly.

use std::borrow::Cow;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chunker::{parse_passage_id, Granularity};
use crate::corpus::{write_jsonl, Cluster, Corpus};
use crate::error::{Error, Result};
use crate::text;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub query_id: String,
    pub question: String,
    pub answers: Vec<String>,
}

/// Read QA JSONL. With `max_answer_tokens`, answers longer than that many tokens are
/// discarded, and items left without answers are skipped.
pub fn read_qa(path: impl AsRef<Path>, max_answer_tokens: Option<usize>) -> Result<Vec<QaItem>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    let mut ids = HashSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut item: QaItem =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, n + 1, e.to_string()))?;
        if !ids.insert(item.query_id.clone()) {
            return Err(Error::DuplicateId(item.query_id));
        }
        if let Some(max) = max_answer_tokens {
            item.answers.retain(|a| text::token_count(a) <= max);
            if item.answers.is_empty() {
                log::warn!("skipping `{}`: no answer within {max} tokens", item.query_id);
                continue;
            }
        }
        if item.answers.is_empty() {
            return Err(Error::parse(path, n + 1, format!("`{}` has no answers", item.query_id)));
        }
        items.push(item);
    }
    Ok(items)
}

pub fn write_qa(items: &[QaItem], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(items, path.as_ref())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub query_id: String,
    pub unit_id: String,
    pub granularity: Granularity,
    pub rank: usize,
    pub score: f64,
    pub stage: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
    pub candidates_in: usize,
    pub candidates_out: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunFile {
    pub timings: Vec<(String, StageTiming)>,
    pub records: Vec<RunRecord>,
}

impl RunFile {
    /// Check field hygiene and the rank/score ordering invariant.
    pub fn validate(&self) -> Result<()> {
        let fields = |r: &RunRecord| [r.query_id.clone(), r.unit_id.clone(), r.stage.clone()];
        for r in &self.records {
            for f in fields(r) {
                check_field(&f)?;
            }
            if !r.score.is_finite() {
                return Err(Error::NonFinite(format!("{} / {}", r.query_id, r.unit_id)));
            }
        }
        for (q, t) in &self.timings {
            check_field(q)?;
            check_field(&t.stage)?;
        }
        let mut last: HashMap<(&str, &str), (usize, f64)> = HashMap::new();
        for r in &self.records {
            let key = (r.query_id.as_str(), r.stage.as_str());
            let expected = last.get(&key).map_or(1, |(rank, _)| rank + 1);
            if r.rank != expected {
                return Err(Error::InvalidArgument(format!(
                    "query `{}` stage `{}`: rank {} where {expected} expected",
                    r.query_id, r.stage, r.rank
                )));
            }
            if let Some(&(_, prev)) = last.get(&key) {
                if r.score > prev {
                    return Err(Error::InvalidArgument(format!(
                        "query `{}` stage `{}`: score increases at rank {}",
                        r.query_id, r.stage, r.rank
                    )));
                }
            }
            last.insert(key, (r.rank, r.score));
        }
        Ok(())
    }

    /// Stage labels in first-appearance order (timings first, then records).
    pub fn stages(&self) -> Vec<String> {
        let mut seen = Vec::new();
        let names = self
            .timings
            .iter()
            .map(|(_, t)| &t.stage)
            .chain(self.records.iter().map(|r| &r.stage));
        for s in names {
            if !seen.contains(s) {
                seen.push(s.clone());
            }
        }
        seen
    }

    /// Query ids in first-appearance order.
    pub fn query_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.timings
            .iter()
            .map(|(q, _)| q)
            .chain(self.records.iter().map(|r| &r.query_id))
            .filter(|q| seen.insert(q.as_str()))
            .cloned()
            .collect()
    }

    /// Ranked records of one stage, grouped by query.
    pub fn ranked(&self, stage: &str) -> HashMap<&str, Vec<&RunRecord>> {
        let mut out: HashMap<&str, Vec<&RunRecord>> = HashMap::new();
        for r in self.records.iter().filter(|r| r.stage == stage) {
            out.entry(r.query_id.as_str()).or_default().push(r);
        }
        out
    }

    /// Per-query stage timings, in first-appearance order of queries.
    pub fn stage_timings(&self) -> Vec<Vec<StageTiming>> {
        let mut order: Vec<&str> = Vec::new();
        let mut by_query: HashMap<&str, Vec<StageTiming>> = HashMap::new();
        for (q, t) in &self.timings {
            if !by_query.contains_key(q.as_str()) {
                order.push(q);
            }
            by_query.entry(q).or_default().push(t.clone());
        }
        order.into_iter().map(|q| by_query.remove(q).unwrap_or_default()).collect()
    }

    /// Append another run's content (e.g. a later stage for the same queries).
    pub fn extend(&mut self, other: RunFile) {
        self.timings.extend(other.timings);
        self.records.extend(other.records);
    }

    pub fn render(&self) -> Result<String> {
        self.validate()?;
        let mut out = String::new();
        for (q, t) in &self.timings {
            out.push_str(&format!(
                "#timing\t{q}\t{}\t{}\t{}\t{}\n",
                t.stage, t.seconds, t.candidates_in, t.candidates_out
            ));
        }
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                r.query_id, r.unit_id, r.granularity, r.rank, r.score, r.stage
            ));
        }
        Ok(out)
    }

    pub fn parse(body: &str, origin: &Path) -> Result<Self> {
        let mut run = RunFile::default();
        for (n, line) in body.lines().enumerate() {
            let bad = |m: String| Error::parse(origin, n + 1, m);
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols[0] == "#timing" {
                if cols.len() != 6 {
                    return Err(bad(format!("timing line has {} columns, expected 6", cols.len())));
                }
                run.timings.push((
                    cols[1].to_string(),
                    StageTiming {
                        stage: cols[2].to_string(),
                        seconds: cols[3].parse().map_err(|e| bad(format!("seconds: {e}")))?,
                        candidates_in: cols[4].parse().map_err(|e| bad(format!("candidates_in: {e}")))?,
                        candidates_out: cols[5].parse().map_err(|e| bad(format!("candidates_out: {e}")))?,
                    },
                ));
            } else if line.starts_with('#') {
                continue;
            } else {
                if cols.len() != 6 {
                    return Err(bad(format!("record has {} columns, expected 6", cols.len())));
                }
                run.records.push(RunRecord {
                    query_id: cols[0].to_string(),
                    unit_id: cols[1].to_string(),
                    granularity: cols[2].parse().map_err(|e: Error| bad(e.to_string()))?,
                    rank: cols[3].parse().map_err(|e| bad(format!("rank: {e}")))?,
                    score: cols[4].parse().map_err(|e| bad(format!("score: {e}")))?,
                    stage: cols[5].to_string(),
                });
            }
        }
        run.validate().map_err(|e| Error::parse(origin, 0, e.to_string()))?;
        Ok(run)
    }
}

fn check_field(f: &str) -> Result<()> {
    if f.is_empty() || f.contains(['\t', '\n', '\r']) {
        return Err(Error::InvalidArgument(format!("run file field {f:?} is empty or contains tab/newline")));
    }
    Ok(())
}

pub fn write_run(run: &RunFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, run.render()?).map_err(|e| Error::io(path, e))
}

pub fn read_run(path: impl AsRef<Path>) -> Result<RunFile> {
    let path = path.as_ref();
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunFile::parse(&body, path)
}

/// Resolves a (granularity, unit id) to its text and title.
pub trait UnitResolver {
    fn text(&self, granularity: Granularity, unit_id: &str) -> Option<Cow<'_, str>>;
    fn title(&self, granularity: Granularity, unit_id: &str) -> Option<&str>;
}

/// Resolves units against a corpus and its clusters. Passage ids `doc#k` are re-derived
/// from the document with the given passage size.
pub struct CorpusResolver<'a> {
    corpus: &'a Corpus,
    clusters: HashMap<&'a str, &'a Cluster>,
    passage_size: usize,
}

impl<'a> CorpusResolver<'a> {
    pub fn new(corpus: &'a Corpus, clusters: &'a [Cluster], passage_size: usize) -> Self {
        CorpusResolver {
            corpus,
            clusters: clusters.iter().map(|c| (c.cluster_id.as_str(), c)).collect(),
            passage_size: passage_size.max(1),
        }
    }
}

impl UnitResolver for CorpusResolver<'_> {
    fn text(&self, granularity: Granularity, unit_id: &str) -> Option<Cow<'_, str>> {
        match granularity {
            Granularity::Document => self.corpus.get(unit_id).map(|d| Cow::Borrowed(d.text.as_str())),
            Granularity::Cluster => {
                let c = self.clusters.get(unit_id)?;
                let texts: Option<Vec<&str>> = c
                    .member_doc_ids
                    .iter()
                    .map(|id| self.corpus.get(id).map(|d| d.text.as_str()))
                    .collect();
                Some(Cow::Owned(texts?.join("\n\n")))
            }
            Granularity::Passage => {
                let (doc, k) = parse_passage_id(unit_id)?;
                let d = self.corpus.get(doc)?;
                let window: Vec<&str> = text::tokenize(&d.text)
                    .skip(k * self.passage_size)
                    .take(self.passage_size)
                    .collect();
                (!window.is_empty()).then(|| Cow::Owned(window.join(" ")))
            }
        }
    }

    fn title(&self, granularity: Granularity, unit_id: &str) -> Option<&str> {
        let doc = match granularity {
            Granularity::Document => unit_id,
            Granularity::Passage => parse_passage_id(unit_id)?.0,
            Granularity::Cluster => self.clusters.get(unit_id)?.member_doc_ids.first()?.as_str(),
        };
        self.corpus.get(doc).map(|d| d.title.as_str())
    }
}

/// In-memory resolver over explicit units, keyed by (granularity, id).
#[derive(Debug, Clone, Default)]
pub struct UnitTable {
    units: HashMap<(Granularity, String), (String, String)>,
}

impl UnitTable {
    pub fn insert(&mut self, granularity: Granularity, unit_id: &str, title: &str, text: &str) {
        self.units
            .insert((granularity, unit_id.to_string()), (title.to_string(), text.to_string()));
    }
}

impl UnitResolver for UnitTable {
    fn text(&self, granularity: Granularity, unit_id: &str) -> Option<Cow<'_, str>> {
        self.units
            .get(&(granularity, unit_id.to_string()))
            .map(|(_, t)| Cow::Borrowed(t.as_str()))
    }

    fn title(&self, granularity: Granularity, unit_id: &str) -> Option<&str> {
        self.units.get(&(granularity, unit_id.to_string())).map(|(t, _)| t.as_str())
    }
}

fn qa_index<'q>(run: &RunFile, qa: &'q [QaItem]) -> Result<HashMap<&'q str, &'q QaItem>> {
    let idx: HashMap<&str, &QaItem> = qa.iter().map(|q| (q.query_id.as_str(), q)).collect();
    for q in run.query_ids() {
        if !idx.contains_key(q.as_str()) {
            return Err(Error::UnknownId(q));
        }
    }
    Ok(idx)
}

fn record_hits(r: &RunRecord, answers: &[String], resolver: &dyn UnitResolver) -> Result<bool> {
    let t = resolver
        .text(r.granularity, &r.unit_id)
        .ok_or_else(|| Error::UnknownId(format!("{} {}", r.granularity, r.unit_id)))?;
    let normalized = text::normalize_for_recall(&t);
    Ok(answers.iter().any(|a| text::contains_answer(&normalized, a)))
}

/// Rank (1-based) of the first answer-bearing unit per query, `None` when there is none.
fn first_hit_ranks(
    run: &RunFile,
    stage: &str,
    qa: &[QaItem],
    resolver: &dyn UnitResolver,
) -> Result<Vec<(Option<usize>, usize)>> {
    let _ = qa_index(run, qa)?;
    let ranked = run.ranked(stage);
    qa.iter()
        .map(|item| {
            let list = ranked.get(item.query_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            for (i, r) in list.iter().enumerate() {
                if record_hits(r, &item.answers, resolver)? {
                    return Ok((Some(i + 1), list.len()));
                }
            }
            Ok((None, list.len()))
        })
        .collect()
}

/// Fraction of QA items whose top-`k` units at `stage` contain an answer string
/// (lowercase, whitespace-collapsed substring match). Queries with no results count as misses.
pub fn answer_recall(
    run: &RunFile,
    stage: &str,
    qa: &[QaItem],
    k: usize,
    resolver: &dyn UnitResolver,
) -> Result<f64> {
    if qa.is_empty() {
        return Ok(0.0);
    }
    let firsts = first_hit_ranks(run, stage, qa, resolver)?;
    let hits = firsts.iter().filter(|(f, _)| f.is_some_and(|r| r <= k)).count();
    Ok(hits as f64 / qa.len() as f64)
}

/// Normalized exact match against any gold answer. An empty prediction never matches.
pub fn exact_match(prediction: &str, answers: &[String]) -> bool {
    let p = text::normalize_for_em(prediction);
    !p.is_empty() && answers.iter().any(|a| text::normalize_for_em(a) == p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyReport {
    /// Mean base-2 entropy of the title distribution over each query's top-k units.
    pub mean_bits: f64,
    pub queries: usize,
    /// Queries without any retrieved unit at the stage.
    pub skipped: usize,
}

/// Contextual integrity: Shannon entropy (bits) of source titles among the top-`k` units,
/// averaged over queries.
pub fn contextual_entropy(
    run: &RunFile,
    stage: &str,
    k: usize,
    resolver: &dyn UnitResolver,
) -> Result<EntropyReport> {
    let ranked = run.ranked(stage);
    let mut total = 0.0;
    let mut queries = 0;
    let mut skipped = 0;
    for q in run.query_ids() {
        let list = ranked.get(q.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        let top = &list[..list.len().min(k)];
        if top.is_empty() {
            skipped += 1;
            continue;
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for r in top {
            let title = resolver
                .title(r.granularity, &r.unit_id)
                .ok_or_else(|| Error::UnknownId(r.unit_id.clone()))?;
            *counts.entry(title).or_default() += 1;
        }
        total += shannon_bits(counts.values().copied());
        queries += 1;
    }
    if skipped > 0 {
        log::warn!("entropy: skipped {skipped} queries with no retrieved units");
    }
    Ok(EntropyReport {
        mean_bits: if queries == 0 { 0.0 } else { total / queries as f64 },
        queries,
        skipped,
    })
}

/// Entropy in bits of the empirical distribution given by `counts`.
pub fn shannon_bits(counts: impl IntoIterator<Item = usize>) -> f64 {
    let counts: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let h: f64 = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.log2()
        })
        .sum();
    // A single title gives exactly zero rather than -0.0.
    h.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub percent: f64,
    pub answer_recall: f64,
    /// Relative AR loss against the 100% cutoff, as a fraction.
    pub drop: f64,
}

/// Answer recall when every query's list is cut at `ceil(percent% · len)` (at least 1),
/// together with the relative drop against the full list.
pub fn degradation_curve(
    run: &RunFile,
    stage: &str,
    qa: &[QaItem],
    percents: &[f64],
    resolver: &dyn UnitResolver,
) -> Result<Vec<CurvePoint>> {
    if let Some(p) = percents.iter().find(|p| !(**p > 0.0 && **p <= 100.0)) {
        return Err(Error::InvalidArgument(format!("percent {p} not in (0, 100]")));
    }
    let firsts = first_hit_ranks(run, stage, qa, resolver)?;
    let ar_at = |percent: f64| -> f64 {
        if firsts.is_empty() {
            return 0.0;
        }
        let hits = firsts
            .iter()
            .filter(|(first, len)| {
                let cutoff = ((percent * *len as f64) / 100.0).ceil().max(1.0) as usize;
                first.is_some_and(|r| r <= cutoff)
            })
            .count();
        hits as f64 / firsts.len() as f64
    };
    let full = ar_at(100.0);
    Ok(percents
        .iter()
        .map(|&p| {
            let ar = ar_at(p);
            CurvePoint {
                percent: p,
                answer_recall: ar,
                drop: if full > 0.0 { (full - ar) / full } else { 0.0 },
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    /// Mean seconds per query for each stage, in pipeline order.
    pub stages: Vec<(String, f64)>,
    pub queries: usize,
}

impl TimingReport {
    pub fn total(&self) -> f64 {
        self.stages.iter().map(|(_, s)| s).sum()
    }
}

impl fmt::Display for TimingReport {
    /// `total (a+b+c)` with two decimals, e.g. `2.97 (0.00+2.20+0.77)`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.stages.iter().map(|(_, s)| format!("{s:.2}")).collect();
        write!(f, "{:.2} ({})", self.total(), parts.join("+"))
    }
}

/// Mean per-stage wall-clock seconds per query. A stage a query never reached counts as
/// zero time for that query.
pub fn timing_report(per_query: &[Vec<StageTiming>]) -> TimingReport {
    let mut order: Vec<String> = Vec::new();
    let mut sums: HashMap<String, f64> = HashMap::new();
    for timings in per_query {
        for t in timings {
            if !sums.contains_key(&t.stage) {
                order.push(t.stage.clone());
            }
            *sums.entry(t.stage.clone()).or_default() += t.seconds;
        }
    }
    let n = per_query.len().max(1) as f64;
    TimingReport {
        stages: order.into_iter().map(|s| (s.clone(), sums[&s] / n)).collect(),
        queries: per_query.len(),
    }
}
