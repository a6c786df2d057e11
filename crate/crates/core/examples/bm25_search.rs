//! BM25 over retrieval units, with a save/load round trip of the on-disk index.

use funnelrag::chunker::{Granularity, RetrievalUnit};
use funnelrag::sparse::{build_index, load_index, save_index, Bm25Params, PostingsFormat};

fn unit(id: &str, text: &str) -> RetrievalUnit {
    RetrievalUnit {
        unit_id: id.into(),
        granularity: Granularity::Document,
        parent_id: None,
        doc_id: id.into(),
        title: id.into(),
        text: text.into(),
        token_count: funnelrag::text::token_count(text),
    }
}

fn main() -> funnelrag::Result<()> {
    let units = vec![
        unit("d1", "The quick brown fox jumps over the lazy dog"),
        unit("d2", "A fox is a small omnivorous mammal"),
        unit("d3", "Dogs and foxes both belong to the family Canidae"),
        unit("d4", "Granite is an igneous rock"),
    ];
    let index = build_index(&units, Bm25Params::default())?;
    println!("{} units, avg length {:.2}", index.doc_count(), index.avg_length());
    for term in ["fox", "dog", "rock"] {
        println!("  idf({term}) = {:.4}, df = {}", index.idf(term), index.postings(term).len());
    }

    for hit in index.search("brown fox", 3)? {
        println!("{} {} {:.4}", hit.rank, hit.unit_id, hit.score);
    }

    let dir = std::env::temp_dir().join("funnelrag-bm25-example");
    save_index(&index, &dir, PostingsFormat::Binary)?;
    let loaded = load_index(&dir)?;
    assert_eq!(loaded.search("brown fox", 3)?, index.search("brown fox", 3)?);
    println!("reloaded from {}", dir.display());
    Ok(())
}
