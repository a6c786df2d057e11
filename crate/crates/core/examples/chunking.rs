//! Cluster -> document -> passage segmentation and the lineage between levels.

use funnelrag::chunker::{cluster_unit, segment_cluster, segment_document};
use funnelrag::corpus::{Cluster, Corpus, DocumentRecord};

fn main() -> funnelrag::Result<()> {
    let text = |n: usize, w: &str| (0..n).map(|i| format!("{w}{i}")).collect::<Vec<_>>().join(" ");
    let corpus = Corpus::from_records(vec![
        DocumentRecord {
            id: "alpha".into(),
            title: "Alpha".into(),
            text: text(23, "a"),
            links: vec!["beta".into()],
        },
        DocumentRecord {
            id: "beta".into(),
            title: "Beta".into(),
            text: text(9, "b"),
            links: vec![],
        },
    ])?;
    let cluster = Cluster {
        cluster_id: "c000000".into(),
        member_doc_ids: vec!["alpha".into(), "beta".into()],
        token_count: 32,
    };

    let coarse = cluster_unit(&cluster, &corpus)?;
    println!("{} [{}] {} tokens", coarse.unit_id, coarse.granularity, coarse.token_count);
    for doc in segment_cluster(&cluster, &corpus)? {
        println!("  {} [{}] parent {:?}", doc.unit_id, doc.granularity, doc.parent_id);
        let passages = segment_document(&doc, 10)?;
        for p in &passages {
            println!("    {} {:>2} tokens parent {:?}", p.unit_id, p.token_count, p.parent_id);
        }
        let rejoined: Vec<&str> = passages.iter().map(|p| p.text.as_str()).collect();
        assert_eq!(rejoined.join(" "), doc.text);
    }
    Ok(())
}
