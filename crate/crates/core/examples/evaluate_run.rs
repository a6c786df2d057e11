//! Answer recall, contextual entropy, degradation curve and timing report for a run file.

use std::path::Path;

use funnelrag::chunker::Granularity;
use funnelrag::eval::{
    answer_recall, contextual_entropy, degradation_curve, exact_match, timing_report, QaItem, RunFile, UnitTable,
};

const RUN: &str = "\
#timing\tq1\tretrieval\t0.002\t500\t3
#timing\tq1\tpost-rank\t0.75\t3\t3
#timing\tq2\tretrieval\t0.001\t500\t3
#timing\tq2\tpost-rank\t0.79\t3\t3
q1\tmars#0\tpassage\t1\t0.9\tpost-rank
q1\tmars#1\tpassage\t2\t0.5\tpost-rank
q1\tvenus#0\tpassage\t3\t0.25\tpost-rank
q2\tvenus#0\tpassage\t1\t0.8\tpost-rank
q2\tmars#0\tpassage\t2\t0.7\tpost-rank
q2\tvenus#1\tpassage\t3\t0.1\tpost-rank
";

fn main() -> funnelrag::Result<()> {
    let run = RunFile::parse(RUN, Path::new("inline.tsv"))?;
    let mut units = UnitTable::default();
    units.insert(Granularity::Passage, "mars#0", "Mars", "Mars has two moons, Phobos and Deimos.");
    units.insert(Granularity::Passage, "mars#1", "Mars", "Its surface is red with iron oxide.");
    units.insert(Granularity::Passage, "venus#0", "Venus", "Venus has no moons.");
    units.insert(Granularity::Passage, "venus#1", "Venus", "A day on Venus lasts 243 Earth days.");
    let qa = vec![
        QaItem {
            query_id: "q1".into(),
            question: "what colour is mars".into(),
            answers: vec!["red".into()],
        },
        QaItem {
            query_id: "q2".into(),
            question: "how long is a day on venus".into(),
            answers: vec!["243 Earth days".into()],
        },
    ];

    for k in 1..=3 {
        println!("AR@{k} {:.2}", answer_recall(&run, "post-rank", &qa, k, &units)?);
    }
    let h = contextual_entropy(&run, "post-rank", 3, &units)?;
    println!("entropy@3 {:.4} bits ({} queries)", h.mean_bits, h.queries);
    for p in degradation_curve(&run, "post-rank", &qa, &[34.0, 67.0, 100.0], &units)? {
        println!("cutoff {:>3}%: AR {:.2}, drop {:.0}%", p.percent, p.answer_recall, p.drop * 100.0);
    }
    println!("EM(\"the red\") = {}", exact_match("the red", &qa[0].answers));
    println!("time per query: {}", timing_report(&run.stage_timings()));
    Ok(())
}
