//! Full funnel over a generated corpus with planted answers, using the builtin scorers.
//!
//! cargo run --release --example funnel_synthetic -- [seed]

use std::time::Instant;

use funnelrag::corpus::Corpus;
use funnelrag::eval::{answer_recall, timing_report, CorpusResolver};
use funnelrag::pipeline::{run_batch, FunnelConfig, FunnelResources, FunnelScorers};
use funnelrag::synth::{generate, SynthConfig};

fn main() -> funnelrag::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let set = generate(&SynthConfig::funnel(seed))?;
    let config = FunnelConfig::default();

    let start = Instant::now();
    let corpus = Corpus::from_records(set.records)?;
    let resources = FunnelResources::build(corpus, config.max_cluster_size, config.bm25())?;
    println!(
        "{} documents -> {} clusters in {:.2}s",
        resources.store.corpus.len(),
        resources.store.clusters.len(),
        start.elapsed().as_secs_f64()
    );

    let outcome = run_batch(&set.qa, &config, &resources, &FunnelScorers::builtin())?;
    let run = outcome.run();
    let resolver = CorpusResolver::new(&resources.store.corpus, &resources.store.clusters, config.passage_size);
    for k in [1, 2, 4] {
        println!("AR@{k} {:.3}", answer_recall(&run, "post-rank", &set.qa, k, &resolver)?);
    }
    let t = &outcome.traces[0];
    let counts: Vec<String> = t
        .stages
        .iter()
        .map(|s| format!("{} {} -> {}", s.stage, s.candidates_in, s.candidates_out()))
        .collect();
    println!("{}: {}", t.query_id, counts.join(", "));
    println!("time per query: {}", timing_report(&outcome.timings()));
    println!("total {:.2}s", start.elapsed().as_secs_f64());
    Ok(())
}
