//! Link-graph clustering of a small hand-made corpus under a token budget.

use funnelrag::corpus::{build_graph, cluster_documents, Corpus, DocumentRecord};

fn doc(id: &str, text: &str, links: &[&str]) -> DocumentRecord {
    DocumentRecord {
        id: id.into(),
        title: id.replace('_', " "),
        text: text.into(),
        links: links.iter().map(|s| s.to_string()).collect(),
    }
}

fn main() -> funnelrag::Result<()> {
    let corpus = Corpus::from_records(vec![
        doc("Homer", "ancient greek poet credited with the iliad", &["Iliad", "Odyssey"]),
        doc("Iliad", "epic poem about the trojan war", &["Homer", "Troy", "Odyssey"]),
        doc("Odyssey", "epic poem following odysseus home", &["Homer", "Iliad"]),
        doc("Troy", "ancient city in anatolia", &["Iliad", "Missing_Page"]),
        doc("Basalt", "fine grained volcanic rock", &["Lava"]),
        doc("Lava", "molten rock expelled by a volcano", &["Basalt"]),
    ])?;
    let stats = corpus.stats();
    println!("{} docs, {} links, {} dangling dropped", stats.documents, stats.links, stats.dropped_links);

    let graph = build_graph(&corpus);
    for id in graph.ids() {
        println!("  {id:<8} degree {} lcc {:.3}", graph.degree(id).unwrap(), graph.lcc(id).unwrap());
    }

    for budget in [12, 40] {
        println!("S = {budget}");
        for c in cluster_documents(&corpus, &graph, budget)? {
            println!("  {} {:>3} tokens {:?}", c.cluster_id, c.token_count, c.member_doc_ids);
        }
    }
    Ok(())
}
