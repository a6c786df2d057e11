//! Later chunking: clusters are segmented into documents right before pre-ranking, and
//! documents into fixed-size passages right before post-ranking.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Cluster, Corpus, Document};
use crate::error::{Error, Result};
use crate::text;

pub const DEFAULT_PASSAGE_SIZE: usize = 100;

/// Granularity of a retrieval unit. Ordered fine to coarse, so
/// `Cluster > Document > Passage`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Passage,
    Document,
    Cluster,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Passage => "passage",
            Granularity::Document => "document",
            Granularity::Cluster => "cluster",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "passage" => Ok(Granularity::Passage),
            "document" => Ok(Granularity::Document),
            "cluster" => Ok(Granularity::Cluster),
            other => Err(Error::InvalidArgument(format!("unknown granularity `{other}`"))),
        }
    }
}

/// A candidate text span at one of the three granularities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalUnit {
    pub unit_id: String,
    pub granularity: Granularity,
    /// The unit this one was segmented from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
    /// Source document. Cluster units use their own cluster id here.
    pub doc_id: String,
    pub title: String,
    pub text: String,
    pub token_count: usize,
}

/// Materialize a cluster as a single coarse unit. Member texts are joined with blank
/// lines so the token sequence is the concatenation of the members' token sequences.
pub fn cluster_unit(cluster: &Cluster, corpus: &Corpus) -> Result<RetrievalUnit> {
    let members = cluster_members(cluster, corpus)?;
    let text = members.iter().map(|d| d.text.as_str()).collect::<Vec<_>>().join("\n\n");
    Ok(RetrievalUnit {
        unit_id: cluster.cluster_id.clone(),
        granularity: Granularity::Cluster,
        parent_id: None,
        doc_id: cluster.cluster_id.clone(),
        title: members[0].title.clone(),
        token_count: members.iter().map(|d| d.token_count).sum(),
        text,
    })
}

/// Standalone document unit with no parent (flat baselines, root documents).
pub fn document_unit(doc: &Document) -> RetrievalUnit {
    RetrievalUnit {
        unit_id: doc.doc_id.clone(),
        granularity: Granularity::Document,
        parent_id: None,
        doc_id: doc.doc_id.clone(),
        title: doc.title.clone(),
        text: doc.text.clone(),
        token_count: doc.token_count,
    }
}

/// One document-level unit per cluster member, in member order, parented to the cluster.
pub fn segment_cluster(cluster: &Cluster, corpus: &Corpus) -> Result<Vec<RetrievalUnit>> {
    Ok(cluster_members(cluster, corpus)?
        .into_iter()
        .map(|doc| RetrievalUnit {
            parent_id: Some(cluster.cluster_id.clone()),
            ..document_unit(doc)
        })
        .collect())
}

fn cluster_members<'c>(cluster: &Cluster, corpus: &'c Corpus) -> Result<Vec<&'c Document>> {
    if cluster.member_doc_ids.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "cluster `{}` has no members",
            cluster.cluster_id
        )));
    }
    cluster
        .member_doc_ids
        .iter()
        .map(|id| corpus.get(id).ok_or_else(|| Error::UnknownId(id.clone())))
        .collect()
}

/// Split a document unit into disjoint consecutive windows of `passage_size` tokens.
/// Passage `k` of document `d` gets id `d#k`. The final window may be shorter; an empty
/// document yields no passages.
pub fn segment_document(doc_unit: &RetrievalUnit, passage_size: usize) -> Result<Vec<RetrievalUnit>> {
    if passage_size == 0 {
        return Err(Error::InvalidArgument("passage_size must be >= 1".into()));
    }
    if doc_unit.granularity != Granularity::Document {
        return Err(Error::InvalidArgument(format!(
            "`{}` is a {} unit, expected document",
            doc_unit.unit_id, doc_unit.granularity
        )));
    }
    let tokens: Vec<&str> = text::tokenize(&doc_unit.text).collect();
    Ok(tokens
        .chunks(passage_size)
        .enumerate()
        .map(|(k, window)| RetrievalUnit {
            unit_id: passage_id(&doc_unit.doc_id, k),
            granularity: Granularity::Passage,
            parent_id: Some(doc_unit.unit_id.clone()),
            doc_id: doc_unit.doc_id.clone(),
            title: doc_unit.title.clone(),
            text: window.join(" "),
            token_count: window.len(),
        })
        .collect())
}

pub fn passage_id(doc_id: &str, index: usize) -> String {
    format!("{doc_id}#{index}")
}

/// Split a passage id back into `(doc_id, index)`. Document ids may themselves contain `#`;
/// only the last one separates the window index.
pub fn parse_passage_id(unit_id: &str) -> Option<(&str, usize)> {
    let (doc, k) = unit_id.rsplit_once('#')?;
    Some((doc, k.parse().ok()?))
}
