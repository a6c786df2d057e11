//! BM25 inverted index over retrieval units, the first (coarse) stage of the funnel.
//!
//! Scoring:
//!
//! ```text
//! score(q, u) = Σ_{t ∈ q} idf(t) · tf(t,u)·(k1 + 1) / (tf(t,u) + k1·(1 − b + b·|u| / avgdl))
//! idf(t)      = ln(1 + (N − df(t) + 0.5) / (df(t) + 0.5))
//! ```
//!
//! Query terms are summed per occurrence, `|u|` is the unit's analyzed term count, and
//! only units with a strictly positive score are returned.
//!
//! # On-disk layout
//!
//! An index directory holds `manifest.json` plus one postings file:
//!
//! * `postings.bin` (default). All integers are unsigned LEB128 varints.
//!   ```text
//!   magic    8 bytes  "FRIDX001"
//!   units    varint count, then per unit: varint id_len, id bytes (UTF-8), varint length
//!   terms    varint count, then per term in ascending byte order:
//!            varint term_len, term bytes, varint df,
//!            df × (varint ordinal delta from previous ordinal (first from 0), varint tf)
//!   ```
//! * `postings.json`, a human-readable debug form with the same content.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use integer_encoding::{VarIntReader, VarIntWriter};
use serde::{Deserialize, Serialize};

use crate::chunker::RetrievalUnit;
use crate::error::{Error, Result};
use crate::text::{Analyzer, SimpleAnalyzer};

pub const INDEX_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"FRIDX001";
const MANIFEST: &str = "manifest.json";
const POSTINGS_BIN: &str = "postings.bin";
const POSTINGS_JSON: &str = "postings.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.5, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1.is_finite() && self.k1 >= 0.0) {
            return Err(Error::InvalidArgument(format!("k1 must be >= 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidArgument(format!("b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub ordinal: u32,
    pub tf: u32,
}

/// A ranked search result. Ranks are 1-based and consecutive within a list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHit {
    pub unit_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Sort `(id, score)` pairs by score descending then id ascending, keep the first `top`,
/// and assign ranks from 1.
pub fn rank_scored(mut scored: Vec<(String, f64)>, top: usize) -> Vec<ScoredHit> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(top);
    scored
        .into_iter()
        .enumerate()
        .map(|(i, (unit_id, score))| ScoredHit {
            unit_id,
            score,
            rank: i + 1,
        })
        .collect()
}

#[derive(Clone)]
pub struct SparseIndex {
    params: Bm25Params,
    analyzer: Arc<dyn Analyzer>,
    unit_ids: Vec<String>,
    unit_lengths: Vec<u32>,
    avg_length: f64,
    postings: BTreeMap<String, Vec<Posting>>,
    id_index: HashMap<String, u32>,
}

impl fmt::Debug for SparseIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SparseIndex")
            .field("params", &self.params)
            .field("analyzer", &self.analyzer.name())
            .field("doc_count", &self.unit_ids.len())
            .field("vocabulary", &self.postings.len())
            .field("avg_length", &self.avg_length)
            .finish()
    }
}

/// Build with the default analyzer.
pub fn build_index(units: &[RetrievalUnit], params: Bm25Params) -> Result<SparseIndex> {
    build_index_with(units, params, Arc::new(SimpleAnalyzer))
}

pub fn build_index_with(
    units: &[RetrievalUnit],
    params: Bm25Params,
    analyzer: Arc<dyn Analyzer>,
) -> Result<SparseIndex> {
    params.validate()?;
    let mut id_index = HashMap::with_capacity(units.len());
    let mut unit_ids = Vec::with_capacity(units.len());
    let mut unit_lengths = Vec::with_capacity(units.len());
    let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();

    for (ord, unit) in units.iter().enumerate() {
        let ord = u32::try_from(ord).map_err(|_| Error::InvalidArgument("too many units".into()))?;
        if id_index.insert(unit.unit_id.clone(), ord).is_some() {
            return Err(Error::DuplicateId(unit.unit_id.clone()));
        }
        let terms = analyzer.analyze(&unit.text);
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for t in &terms {
            *tf.entry(t.clone()).or_default() += 1;
        }
        for (term, count) in tf {
            postings.entry(term).or_default().push(Posting { ordinal: ord, tf: count });
        }
        unit_ids.push(unit.unit_id.clone());
        unit_lengths.push(terms.len() as u32);
    }
    Ok(SparseIndex::assemble(params, analyzer, unit_ids, unit_lengths, postings, id_index))
}

impl SparseIndex {
    fn assemble(
        params: Bm25Params,
        analyzer: Arc<dyn Analyzer>,
        unit_ids: Vec<String>,
        unit_lengths: Vec<u32>,
        postings: BTreeMap<String, Vec<Posting>>,
        id_index: HashMap<String, u32>,
    ) -> Self {
        let avg_length = if unit_lengths.is_empty() {
            0.0
        } else {
            unit_lengths.iter().map(|&l| f64::from(l)).sum::<f64>() / unit_lengths.len() as f64
        };
        SparseIndex {
            params,
            analyzer,
            unit_ids,
            unit_lengths,
            avg_length,
            postings,
            id_index,
        }
    }

    pub fn doc_count(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn analyzer_name(&self) -> &str {
        self.analyzer.name()
    }

    pub fn avg_length(&self) -> f64 {
        self.avg_length
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn unit_id(&self, ordinal: u32) -> &str {
        &self.unit_ids[ordinal as usize]
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn unit_length(&self, unit_id: &str) -> Option<u32> {
        self.id_index.get(unit_id).map(|&o| self.unit_lengths[o as usize])
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.postings(term).len() as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Top-`top_k` units for `query`. Unknown terms contribute nothing.
    pub fn search(&self, query: &str, top_k: usize) -> Result<Vec<ScoredHit>> {
        if top_k == 0 {
            return Err(Error::InvalidArgument("top_k must be >= 1".into()));
        }
        let Bm25Params { k1, b } = self.params;
        let mut acc = vec![0.0f64; self.doc_count()];
        let mut touched: Vec<u32> = Vec::new();
        for term in self.analyzer.analyze(query) {
            let plist = self.postings(&term);
            if plist.is_empty() {
                continue;
            }
            let idf = self.idf(&term);
            for p in plist {
                let tf = f64::from(p.tf);
                let len = f64::from(self.unit_lengths[p.ordinal as usize]);
                let norm = if self.avg_length > 0.0 { len / self.avg_length } else { 1.0 };
                let slot = &mut acc[p.ordinal as usize];
                if *slot == 0.0 {
                    touched.push(p.ordinal);
                }
                *slot += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm));
            }
        }
        touched.sort_unstable();
        touched.dedup();
        let scored = touched
            .into_iter()
            .filter(|&o| acc[o as usize] > 0.0)
            .map(|o| (self.unit_ids[o as usize].clone(), acc[o as usize]))
            .collect();
        Ok(rank_scored(scored, top_k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PostingsFormat {
    Binary,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub format_version: u32,
    pub k1: f64,
    pub b: f64,
    pub analyzer: String,
    pub doc_count: usize,
    pub postings: PostingsFormat,
}

#[derive(Serialize, Deserialize)]
struct JsonUnit {
    id: String,
    length: u32,
}

#[derive(Serialize, Deserialize)]
struct JsonPostings {
    units: Vec<JsonUnit>,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

/// Write `index` into directory `dir` (created if missing).
pub fn save_index(index: &SparseIndex, dir: impl AsRef<Path>, format: PostingsFormat) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = IndexManifest {
        format_version: INDEX_FORMAT_VERSION,
        k1: index.params.k1,
        b: index.params.b,
        analyzer: index.analyzer.name().to_string(),
        doc_count: index.doc_count(),
        postings: format,
    };
    let mpath = dir.join(MANIFEST);
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&mpath, body + "\n").map_err(|e| Error::io(&mpath, e))?;

    match format {
        PostingsFormat::Binary => {
            let path = dir.join(POSTINGS_BIN);
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = BufWriter::new(file);
            write_binary(index, &mut w)
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(&path, e))
        }
        PostingsFormat::Json => {
            let path = dir.join(POSTINGS_JSON);
            let doc = JsonPostings {
                units: index
                    .unit_ids
                    .iter()
                    .zip(&index.unit_lengths)
                    .map(|(id, &length)| JsonUnit { id: id.clone(), length })
                    .collect(),
                postings: index
                    .postings
                    .iter()
                    .map(|(t, ps)| (t.clone(), ps.iter().map(|p| (p.ordinal, p.tf)).collect()))
                    .collect(),
            };
            let body = serde_json::to_string(&doc).expect("postings serialize");
            fs::write(&path, body).map_err(|e| Error::io(&path, e))
        }
    }
}

fn write_binary(index: &SparseIndex, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_varint(index.unit_ids.len() as u64)?;
    for (id, &len) in index.unit_ids.iter().zip(&index.unit_lengths) {
        write_bytes(w, id.as_bytes())?;
        w.write_varint(u64::from(len))?;
    }
    w.write_varint(index.postings.len() as u64)?;
    for (term, plist) in &index.postings {
        write_bytes(w, term.as_bytes())?;
        w.write_varint(plist.len() as u64)?;
        let mut prev = 0u32;
        for p in plist {
            w.write_varint(u64::from(p.ordinal - prev))?;
            w.write_varint(u64::from(p.tf))?;
            prev = p.ordinal;
        }
    }
    Ok(())
}

fn write_bytes(w: &mut impl Write, bytes: &[u8]) -> std::io::Result<()> {
    w.write_varint(bytes.len() as u64)?;
    w.write_all(bytes)
}

/// Load an index directory written by [`save_index`].
pub fn load_index(dir: impl AsRef<Path>) -> Result<SparseIndex> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST);
    let raw = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: IndexManifest =
        serde_json::from_str(&raw).map_err(|e| Error::parse(&mpath, e.line(), e.to_string()))?;
    if manifest.format_version != INDEX_FORMAT_VERSION {
        return Err(Error::parse(
            &mpath,
            0,
            format!("unsupported index format version {}", manifest.format_version),
        ));
    }
    let analyzer: Arc<dyn Analyzer> = match manifest.analyzer.as_str() {
        SimpleAnalyzer::NAME => Arc::new(SimpleAnalyzer),
        other => return Err(Error::parse(&mpath, 0, format!("unknown analyzer `{other}`"))),
    };
    let params = Bm25Params {
        k1: manifest.k1,
        b: manifest.b,
    };
    params.validate()?;

    let (unit_ids, unit_lengths, postings) = match manifest.postings {
        PostingsFormat::Binary => {
            let path = dir.join(POSTINGS_BIN);
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            read_binary(&mut BufReader::new(file)).map_err(|e| Error::parse(&path, 0, e.to_string()))?
        }
        PostingsFormat::Json => {
            let path = dir.join(POSTINGS_JSON);
            let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let doc: JsonPostings =
                serde_json::from_str(&raw).map_err(|e| Error::parse(&path, e.line(), e.to_string()))?;
            let (ids, lens) = doc.units.into_iter().map(|u| (u.id, u.length)).unzip();
            let postings = doc
                .postings
                .into_iter()
                .map(|(t, ps)| (t, ps.into_iter().map(|(ordinal, tf)| Posting { ordinal, tf }).collect()))
                .collect();
            (ids, lens, postings)
        }
    };
    if unit_ids.len() != manifest.doc_count {
        return Err(Error::parse(
            &mpath,
            0,
            format!("manifest doc_count {} but postings hold {} units", manifest.doc_count, unit_ids.len()),
        ));
    }
    let mut id_index = HashMap::with_capacity(unit_ids.len());
    for (i, id) in unit_ids.iter().enumerate() {
        if id_index.insert(id.clone(), i as u32).is_some() {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    for (term, plist) in &postings {
        let sorted = plist.windows(2).all(|w| w[0].ordinal < w[1].ordinal);
        let in_range = plist.iter().all(|p| (p.ordinal as usize) < unit_ids.len());
        if !sorted || !in_range {
            return Err(Error::parse(dir, 0, format!("corrupt posting list for `{term}`")));
        }
    }
    Ok(SparseIndex::assemble(params, analyzer, unit_ids, unit_lengths, postings, id_index))
}

type Decoded = (Vec<String>, Vec<u32>, BTreeMap<String, Vec<Posting>>);

fn read_binary(r: &mut impl Read) -> std::io::Result<Decoded> {
    use std::io::{Error as IoError, ErrorKind};
    let invalid = |m: &str| IoError::new(ErrorKind::InvalidData, m.to_string());

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(invalid("bad magic"));
    }
    let n_units: u64 = r.read_varint()?;
    let mut ids = Vec::new();
    let mut lens = Vec::new();
    for _ in 0..n_units {
        ids.push(read_string(r)?);
        let len: u64 = r.read_varint()?;
        lens.push(u32::try_from(len).map_err(|_| invalid("unit length overflow"))?);
    }
    let n_terms: u64 = r.read_varint()?;
    let mut postings = BTreeMap::new();
    for _ in 0..n_terms {
        let term = read_string(r)?;
        let df: u64 = r.read_varint()?;
        let mut plist = Vec::new();
        let mut ord = 0u64;
        for _ in 0..df {
            let delta: u64 = r.read_varint()?;
            let tf: u64 = r.read_varint()?;
            ord += delta;
            plist.push(Posting {
                ordinal: u32::try_from(ord).map_err(|_| invalid("ordinal overflow"))?,
                tf: u32::try_from(tf).map_err(|_| invalid("tf overflow"))?,
            });
        }
        postings.insert(term, plist);
    }
    Ok((ids, lens, postings))
}

fn read_string(r: &mut impl Read) -> std::io::Result<String> {
    let len: u64 = r.read_varint()?;
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunker::Granularity;

    pub(crate) fn unit(id: &str, text: &str) -> RetrievalUnit {
        RetrievalUnit {
            unit_id: id.into(),
            granularity: Granularity::Cluster,
            parent_id: None,
            doc_id: id.into(),
            title: String::new(),
            text: text.into(),
            token_count: crate::text::token_count(text),
        }
    }

    #[test]
    fn shared_term_posting_list() {
        let units = [unit("a", "apple x"), unit("b", "apple y"), unit("c", "Apple z")];
        let idx = build_index(&units, Bm25Params::default()).unwrap();
        assert_eq!(idx.postings("apple").len(), 3);
        assert_eq!(idx.doc_count(), 3);
    }

    #[test]
    fn empty_index_returns_nothing() {
        let idx = build_index(&[], Bm25Params::default()).unwrap();
        assert_eq!(idx.doc_count(), 0);
        assert!(idx.search("anything", 10).unwrap().is_empty());
    }

    #[test]
    fn no_overlap_is_empty() {
        let idx = build_index(&[unit("a", "red blue")], Bm25Params::default()).unwrap();
        assert!(idx.search("green", 5).unwrap().is_empty());
    }

    #[test]
    fn single_doc_match() {
        let idx = build_index(&[unit("only", "zebra")], Bm25Params::default()).unwrap();
        let hits = idx.search("zebra", 5).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].unit_id, "only");
        assert_eq!(hits[0].rank, 1);
        assert!(hits[0].score > 0.0);
    }

    #[test]
    fn duplicate_unit_rejected() {
        let err = build_index(&[unit("a", "x"), unit("a", "y")], Bm25Params::default()).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(_)));
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(build_index(&[], Bm25Params { k1: -1.0, b: 0.5 }).is_err());
        assert!(build_index(&[], Bm25Params { k1: 1.0, b: 1.5 }).is_err());
        let idx = build_index(&[], Bm25Params::default()).unwrap();
        assert!(idx.search("x", 0).is_err());
    }

    #[test]
    fn ties_break_by_unit_id() {
        let units = [unit("b", "cat"), unit("a", "cat"), unit("c", "cat")];
        let idx = build_index(&units, Bm25Params::default()).unwrap();
        let hits = idx.search("cat", 2).unwrap();
        assert_eq!(hits.iter().map(|h| h.unit_id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
    }

    #[test]
    fn more_occurrences_score_higher_at_equal_length() {
        let units = [unit("one", "cat dog dog"), unit("two", "cat cat dog"), unit("x", "eel eel eel")];
        let idx = build_index(&units, Bm25Params::default()).unwrap();
        let hits = idx.search("cat", 3).unwrap();
        assert_eq!(hits[0].unit_id, "two");
        assert!(hits[0].score > hits[1].score);
    }

    #[test]
    fn save_load_both_formats() {
        let units = [unit("a", "alpha beta beta"), unit("b", "beta gamma"), unit("c", "")];
        let idx = build_index(&units, Bm25Params { k1: 1.2, b: 0.6 }).unwrap();
        for fmt in [PostingsFormat::Binary, PostingsFormat::Json] {
            let dir = tempfile::tempdir().unwrap();
            save_index(&idx, dir.path(), fmt).unwrap();
            let back = load_index(dir.path()).unwrap();
            assert_eq!(back.unit_ids(), idx.unit_ids());
            assert_eq!(back.params(), idx.params());
            assert_eq!(back.postings, idx.postings);
            assert_eq!(back.unit_lengths, idx.unit_lengths);
            assert_eq!(back.search("beta", 3).unwrap(), idx.search("beta", 3).unwrap());
        }
    }

    #[test]
    fn corrupt_binary_rejected() {
        let idx = build_index(&[unit("a", "x")], Bm25Params::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_index(&idx, dir.path(), PostingsFormat::Binary).unwrap();
        fs::write(dir.path().join(POSTINGS_BIN), b"NOTMAGIC").unwrap();
        assert!(load_index(dir.path()).is_err());
    }
}
