//! Document ingest, the hyperlink graph, and hyperlink-driven document clustering.
//!
//! The clustering pass condenses the document set into coarse retrieval units of at
//! most `max_cluster_size` tokens. Documents are visited from the most "clustered"
//! (highest local clustering coefficient) to the least; each visited document grows its
//! cluster by greedily absorbing the clusters of its hyperlink neighbours, closest first,
//! while the token budget allows.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text;

/// One line of the corpus JSONL file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
    #[serde(default)]
    pub links: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub text: String,
    /// Hyperlink targets, restricted to ids present in the corpus.
    pub out_links: Vec<String>,
    pub token_count: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub documents: usize,
    /// Validated links kept on documents.
    pub links: usize,
    pub dropped_links: usize,
}

/// A validated document collection. Immutable once built.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
    stats: IngestStats,
}

impl Corpus {
    /// Validate raw records: ids must be unique, links to unknown ids are dropped.
    pub fn from_records(records: Vec<DocumentRecord>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if by_id.insert(r.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        let mut stats = IngestStats {
            documents: records.len(),
            ..Default::default()
        };
        let docs: Vec<Document> = records
            .into_iter()
            .map(|r| {
                let (kept, dropped): (Vec<String>, Vec<String>) =
                    r.links.into_iter().partition(|l| by_id.contains_key(l));
                stats.links += kept.len();
                stats.dropped_links += dropped.len();
                Document {
                    token_count: text::token_count(&r.text),
                    doc_id: r.id,
                    title: r.title,
                    text: r.text,
                    out_links: kept,
                }
            })
            .collect();
        if stats.dropped_links > 0 {
            log::warn!("dropped {} dangling links", stats.dropped_links);
        }
        Ok(Corpus { docs, by_id, stats })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.by_id.get(doc_id).map(|&i| &self.docs[i])
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn stats(&self) -> IngestStats {
        self.stats
    }
}

/// Read a corpus JSONL file (`{"id", "title", "text", "links"}` per line). Blank lines are skipped.
pub fn ingest_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DocumentRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, n + 1, e.to_string()))?;
        records.push(rec);
    }
    Corpus::from_records(records)
}

pub fn write_corpus(records: &[DocumentRecord], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(records, path.as_ref())
}

/// Undirected hyperlink graph with per-node local clustering coefficients.
///
/// Nodes are held in lexicographic id order so every derived quantity is independent of
/// the corpus file order.
#[derive(Debug, Clone, Default)]
pub struct HyperlinkGraph {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    /// Sorted, duplicate-free neighbour lists.
    adjacency: Vec<Vec<usize>>,
    lcc: Vec<f64>,
}

impl HyperlinkGraph {
    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn degree(&self, id: &str) -> Option<usize> {
        self.index.get(id).map(|&i| self.adjacency[i].len())
    }

    pub fn lcc(&self, id: &str) -> Option<f64> {
        self.index.get(id).map(|&i| self.lcc[i])
    }

    pub fn neighbors<'a>(&'a self, id: &str) -> impl Iterator<Item = &'a str> + 'a {
        self.index
            .get(id)
            .into_iter()
            .flat_map(move |&i| self.adjacency[i].iter().map(move |&j| self.ids[j].as_str()))
    }

    pub fn is_adjacent(&self, a: &str, b: &str) -> bool {
        match (self.index.get(a), self.index.get(b)) {
            (Some(&i), Some(&j)) => self.adjacency[i].binary_search(&j).is_ok(),
            _ => false,
        }
    }

    /// Node ids in lexicographic order.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// Build the symmetrized hyperlink graph (self-links ignored) and compute
/// `lcc(d) = 2 T(d) / (deg(d) (deg(d) - 1))`, with `T(d)` the number of edges among the
/// neighbours of `d`, and `lcc(d) = 0` when `deg(d) < 2`.
pub fn build_graph(corpus: &Corpus) -> HyperlinkGraph {
    let mut ids: Vec<String> = corpus.documents().iter().map(|d| d.doc_id.clone()).collect();
    ids.sort();
    let index: HashMap<String, usize> =
        ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();

    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); ids.len()];
    for doc in corpus.documents() {
        let a = index[&doc.doc_id];
        for target in &doc.out_links {
            let Some(&b) = index.get(target) else { continue };
            if a != b {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
    }
    for list in &mut adjacency {
        list.sort_unstable();
        list.dedup();
    }

    let lcc = (0..ids.len())
        .into_par_iter()
        .map(|v| local_clustering(&adjacency, v))
        .collect();

    HyperlinkGraph {
        ids,
        index,
        adjacency,
        lcc,
    }
}

fn local_clustering(adjacency: &[Vec<usize>], v: usize) -> f64 {
    let nbrs = &adjacency[v];
    let deg = nbrs.len();
    if deg < 2 {
        return 0.0;
    }
    // Each neighbour-neighbour edge is seen from both endpoints.
    let twice_triangles: usize = nbrs
        .iter()
        .map(|&u| sorted_intersection_len(&adjacency[u], nbrs))
        .sum();
    twice_triangles as f64 / (deg * (deg - 1)) as f64
}

fn sorted_intersection_len(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// A coarse retrieval unit: an ordered list of related documents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub cluster_id: String,
    /// Members in merge order.
    #[serde(rename = "doc_ids")]
    pub member_doc_ids: Vec<String>,
    pub token_count: usize,
}

struct WorkCluster {
    members: Vec<usize>,
    tokens: usize,
}

/// Cluster documents by their hyperlinks under a token budget of `max_cluster_size`.
///
/// Visit order is descending local clustering coefficient, then descending degree, then
/// ascending doc id. When a document is visited its current cluster is taken out of the
/// working set and becomes `c_new`; the clusters holding its neighbours are ranked by
/// closeness `|adj(d) ∩ c| / |c|` (then larger overlap, smaller token count, smaller key)
/// and merged in that order whenever `|c_new| + |c| <= S` in tokens.
///
/// Output clusters are ordered by the visit rank of their first member and named
/// `c000000`, `c000001`, ...
pub fn cluster_documents(
    corpus: &Corpus,
    graph: &HyperlinkGraph,
    max_cluster_size: usize,
) -> Result<Vec<Cluster>> {
    if max_cluster_size == 0 {
        return Err(Error::InvalidArgument("max_cluster_size must be >= 1".into()));
    }
    let n = graph.node_count();
    if n != corpus.len() {
        return Err(Error::InvalidArgument(format!(
            "graph has {n} nodes but corpus has {} documents",
            corpus.len()
        )));
    }
    let tokens: Vec<usize> = graph
        .ids
        .iter()
        .map(|id| {
            corpus
                .get(id)
                .map(|d| d.token_count)
                .ok_or_else(|| Error::UnknownId(id.clone()))
        })
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        graph.lcc[b]
            .total_cmp(&graph.lcc[a])
            .then_with(|| graph.adjacency[b].len().cmp(&graph.adjacency[a].len()))
            .then_with(|| graph.ids[a].cmp(&graph.ids[b]))
    });

    // Slot i initially holds the singleton {doc i}.
    let mut slots: Vec<Option<WorkCluster>> = (0..n)
        .map(|i| {
            Some(WorkCluster {
                members: vec![i],
                tokens: tokens[i],
            })
        })
        .collect();
    let mut slot_of: Vec<usize> = (0..n).collect();

    for &d in &order {
        let home = slot_of[d];
        let mut c_new = slots[home].take().expect("every document belongs to a live cluster");

        let mut overlap: HashMap<usize, usize> = HashMap::new();
        for &nb in &graph.adjacency[d] {
            let s = slot_of[nb];
            if s != home {
                *overlap.entry(s).or_default() += 1;
            }
        }
        let mut related: Vec<(usize, usize)> = overlap.into_iter().collect();
        related.sort_by(|&(sa, oa), &(sb, ob)| {
            let ca = slots[sa].as_ref().expect("related cluster is live");
            let cb = slots[sb].as_ref().expect("related cluster is live");
            // oa/|ca| vs ob/|cb| without floating point.
            (ob * ca.members.len())
                .cmp(&(oa * cb.members.len()))
                .then_with(|| ob.cmp(&oa))
                .then_with(|| ca.tokens.cmp(&cb.tokens))
                .then_with(|| graph.ids[ca.members[0]].cmp(&graph.ids[cb.members[0]]))
        });

        for (s, _) in related {
            let fits = {
                let c = slots[s].as_ref().expect("related cluster is live");
                c_new.tokens + c.tokens <= max_cluster_size
            };
            if fits {
                let c = slots[s].take().expect("related cluster is live");
                for &m in &c.members {
                    slot_of[m] = home;
                }
                c_new.members.extend(c.members);
                c_new.tokens += c.tokens;
            }
        }
        slots[home] = Some(c_new);
    }

    let mut rank = vec![0usize; n];
    for (r, &d) in order.iter().enumerate() {
        rank[d] = r;
    }
    let mut live: Vec<WorkCluster> = slots.into_iter().flatten().collect();
    live.sort_by_key(|c| rank[c.members[0]]);

    Ok(live
        .into_iter()
        .enumerate()
        .map(|(i, c)| Cluster {
            cluster_id: format!("c{i:06}"),
            member_doc_ids: c.members.iter().map(|&m| graph.ids[m].clone()).collect(),
            token_count: c.tokens,
        })
        .collect())
}

/// Write clusters as JSONL, one `{"cluster_id", "doc_ids", "token_count"}` object per line.
pub fn write_clusters(clusters: &[Cluster], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(clusters, path.as_ref())
}

/// Read a cluster JSONL file, rejecting duplicate cluster ids, empty clusters and documents
/// assigned to more than one cluster.
pub fn read_clusters(path: impl AsRef<Path>) -> Result<Vec<Cluster>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut clusters = Vec::new();
    let mut cluster_ids = HashSet::new();
    let mut doc_ids = HashSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let c: Cluster =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, n + 1, e.to_string()))?;
        if !cluster_ids.insert(c.cluster_id.clone()) {
            return Err(Error::DuplicateId(c.cluster_id));
        }
        if c.member_doc_ids.is_empty() {
            return Err(Error::parse(path, n + 1, format!("cluster `{}` is empty", c.cluster_id)));
        }
        for d in &c.member_doc_ids {
            if !doc_ids.insert(d.clone()) {
                return Err(Error::parse(
                    path,
                    n + 1,
                    format!("document `{d}` appears in more than one cluster"),
                ));
            }
        }
        clusters.push(c);
    }
    Ok(clusters)
}

pub(crate) fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
