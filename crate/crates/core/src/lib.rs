//! Coarse-to-fine retrieval: link-graph document clustering, BM25 over clusters,
//! cross-encoder style document pre-ranking, passage post-ranking by aggregated decoder
//! cross-attention, distillation-pair export and retrieval evaluation.
//!
//! ```no_run
//! use funnelrag::corpus::ingest_corpus;
//! use funnelrag::pipeline::{run_funnel, FunnelConfig, FunnelResources, FunnelScorers};
//!
//! # fn main() -> funnelrag::Result<()> {
//! let config = FunnelConfig::default();
//! let corpus = ingest_corpus("corpus.jsonl")?;
//! let resources = FunnelResources::build(corpus, config.max_cluster_size, config.bm25())?;
//! let trace = run_funnel("q1", "who wrote the iliad", &config, &resources, &FunnelScorers::builtin())?;
//! for p in trace.final_passages() {
//!     println!("{} {:.4}", p.unit_id, p.score);
//! }
//! # Ok(())
//! # }
//! ```

pub mod chunker;
pub mod corpus;
pub mod distill;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod rank;
pub mod sparse;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
