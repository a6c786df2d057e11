//! Turn a funnel trace into distillation pairs for the pre-ranker and score them with BPR.

use std::collections::HashMap;

use funnelrag::corpus::Corpus;
use funnelrag::distill::{bpr_loss, bpr_loss_mean, label_query, DistillSettings, PairMode, QueryEvidence};
use funnelrag::pipeline::{run_funnel, FunnelConfig, FunnelResources, FunnelScorers, Stage};
use funnelrag::synth::{generate, SynthConfig};

fn main() -> funnelrag::Result<()> {
    let set = generate(&SynthConfig {
        documents: 300,
        queries: 3,
        ..SynthConfig::funnel(11)
    })?;
    let config = FunnelConfig::default();
    let resources = FunnelResources::build(Corpus::from_records(set.records)?, config.max_cluster_size, config.bm25())?;
    let scorers = FunnelScorers::builtin();
    let settings = DistillSettings {
        mode: PairMode::Capped(2),
        ..DistillSettings::default()
    };

    let mut pairs = Vec::new();
    for item in &set.qa {
        let trace = run_funnel(&item.query_id, &item.question, &config, &resources, &scorers)?;
        let pre = trace.stage(Stage::PreRank).expect("full depth");
        let post = trace.stage(Stage::PostRank).expect("full depth");
        let pre_scores: Vec<(String, f64)> = pre.hits.iter().map(|h| (h.unit_id.clone(), h.score)).collect();
        let lineage: HashMap<String, String> = post.parents.clone();
        let ev = QueryEvidence {
            query_id: &item.query_id,
            answers: &item.answers,
            pre_scores: &pre_scores,
            passage_scores: &post.scores,
            lineage: &lineage,
        };
        let labels = label_query(&ev, |d| resources.store.corpus.get(d).map(|d| d.text.as_str()), &settings)?;
        println!(
            "{}: {} positives {:?}, {} negatives, {} pairs",
            item.query_id,
            labels.annotation.positives.len(),
            labels.annotation.positives,
            labels.annotation.negatives.len(),
            labels.pairs.len()
        );
        pairs.extend(labels.pairs);
    }
    println!("BPR sum {:.4}, mean {:.4}", bpr_loss(&pairs)?, bpr_loss_mean(&pairs)?);
    println!("{}", serde_json::to_string(&pairs[0]).expect("pairs serialize"));
    Ok(())
}
