mod common;

use std::collections::{HashMap, HashSet};

use funnelrag::chunker::{document_unit, segment_document, Granularity, RetrievalUnit};
use funnelrag::corpus::{build_graph, cluster_documents, write_clusters, Corpus, DocumentRecord};
use funnelrag::distill::{aggregate_local_to_global, annotate, bpr_loss, neg_log_sigmoid, DistillPair, DocCandidate, PositiveSource};
use funnelrag::eval::{answer_recall, contextual_entropy, exact_match, QaItem, RunFile, RunRecord, StageTiming, UnitTable};
use funnelrag::pipeline::{run_batch, FunnelConfig, FunnelResources, FunnelScorers, Stage, StageDepth};
use funnelrag::rank::{aggregate_attention, AggregationScheme, AttentionTensor, Scheme};
use funnelrag::sparse::{build_index, Bm25Params};
use funnelrag::synth::{generate, SynthConfig};
use funnelrag::text;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use common::*;

fn cluster_bytes(records: Vec<DocumentRecord>, s: usize) -> Vec<u8> {
    let corpus = Corpus::from_records(records).unwrap();
    let clusters = cluster_documents(&corpus, &build_graph(&corpus), s).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    write_clusters(&clusters, &path).unwrap();
    std::fs::read(path).unwrap()
}

fn arb_tensor() -> impl Strategy<Value = (Nested, Vec<bool>)> {
    (1usize..=8, 1usize..=8, 2usize..=64, any::<u64>()).prop_map(|(ln, lh, lt, seed)| {
        let mut r = rng(seed);
        let nested = random_nested(&mut r, ln, lh, lt);
        let q = r.random_range(0..lt);
        let mut mask: Vec<bool> = (0..lt).map(|k| k < q).collect();
        mask.shuffle(&mut r);
        (nested, mask)
    })
}

fn scheme_strategy() -> impl Strategy<Value = Scheme> {
    prop::sample::select(Scheme::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clusters_partition_within_budget(seed in any::<u64>(), n in 1usize..40, p in 0.0f64..0.5, s in 1usize..400) {
        let records = random_graph(seed, n, p);
        let corpus = Corpus::from_records(records.clone()).unwrap();
        let clusters = cluster_documents(&corpus, &build_graph(&corpus), s).unwrap();
        let mut seen = HashSet::new();
        for c in &clusters {
            prop_assert!(!c.member_doc_ids.is_empty());
            let tokens: usize = c.member_doc_ids.iter().map(|d| corpus.get(d).unwrap().token_count).sum();
            prop_assert_eq!(tokens, c.token_count);
            if c.member_doc_ids.len() > 1 {
                prop_assert!(c.token_count <= s);
            }
            for d in &c.member_doc_ids {
                prop_assert!(seen.insert(d.clone()));
            }
        }
        prop_assert_eq!(seen.len(), n);
    }

    #[test]
    fn clusters_ignore_input_order(seed in any::<u64>(), n in 1usize..30, s in 1usize..400) {
        let records = random_graph(seed, n, 0.2);
        let mut shuffled = records.clone();
        shuffled.shuffle(&mut rng(seed ^ 0x5eed));
        let a = cluster_bytes(records, s);
        prop_assert_eq!(&a, &cluster_bytes(shuffled, s));
    }

    #[test]
    fn passages_round_trip(body in "[a-z ]{0,30}( |\t|\n|  )[a-z.,]{0,400}", size in 1usize..60) {
        let corpus = Corpus::from_records(vec![DocumentRecord {
            id: "d".into(),
            title: "T".into(),
            text: body.clone(),
            links: vec![],
        }]).unwrap();
        let unit = document_unit(corpus.get("d").unwrap());
        let passages = segment_document(&unit, size).unwrap();
        let tokens: Vec<&str> = body.split_whitespace().collect();
        let joined: Vec<&str> = passages.iter().map(|p| p.text.as_str()).collect();
        prop_assert_eq!(joined.join(" "), tokens.join(" "));
        let mut start = 0;
        for (k, p) in passages.iter().enumerate() {
            let n = p.text.split_whitespace().count();
            prop_assert_eq!(p.token_count, n);
            prop_assert!(n == size || (k + 1 == passages.len() && n <= size && n > 0));
            let window: Vec<&str> = p.text.split_whitespace().collect();
            prop_assert_eq!(&tokens[start..start + n], window.as_slice());
            prop_assert_eq!(p.parent_id.as_deref(), Some("d"));
            start += n;
        }
        prop_assert_eq!(start, tokens.len());
    }

    #[test]
    fn bm25_extra_occurrence_raises_score(seed in any::<u64>()) {
        let mut r = rng(seed);
        let vocab = ["alpha", "beta", "gamma", "delta", "eps"];
        let mut texts: Vec<Vec<&str>> = (0..6)
            .map(|_| (0..r.random_range(3..12)).map(|_| vocab[r.random_range(0..vocab.len())]).collect())
            .collect();
        texts[0].push("target");
        texts[0].push("filler");
        let units = |texts: &Vec<Vec<&str>>| -> Vec<RetrievalUnit> {
            texts.iter().enumerate().map(|(i, t)| RetrievalUnit {
                unit_id: format!("u{i}"),
                granularity: Granularity::Cluster,
                parent_id: None,
                doc_id: format!("u{i}"),
                title: String::new(),
                text: t.join(" "),
                token_count: t.len(),
            }).collect()
        };
        let score = |texts: &Vec<Vec<&str>>| {
            let index = build_index(&units(texts), Bm25Params::default()).unwrap();
            index.search("target", 10).unwrap().into_iter().find(|h| h.unit_id == "u0").unwrap().score
        };
        let before = score(&texts);
        let last = texts[0].len() - 1;
        texts[0][last] = "target";
        prop_assert!(score(&texts) > before);
    }

    #[test]
    fn saturated_rep_tokens_give_plain_mean((nested, mask) in arb_tensor()) {
        let lt = mask.len();
        let t = AttentionTensor::from_nested(&nested, mask.clone()).unwrap();
        let got = aggregate_attention(&t, &AggregationScheme::new(Scheme::MeanRep, lt)).unwrap();
        let eligible: Vec<usize> = (0..lt).filter(|&k| !mask[k]).collect();
        let mut sum = 0.0;
        let mut n = 0.0;
        for layer in &nested {
            for row in layer {
                for &k in &eligible {
                    sum += row[k];
                    n += 1.0;
                }
            }
        }
        prop_assert!((got - sum / n).abs() <= 1e-12);
    }

    #[test]
    fn masked_positions_do_not_matter((nested, mask) in arb_tensor(), scheme in scheme_strategy(), lr in 1usize..8, seed in any::<u64>()) {
        let t = AttentionTensor::from_nested(&nested, mask.clone()).unwrap();
        let mut r = rng(seed);
        let noise: Vec<f64> = (0..t.scores().len()).map(|_| r.random_range(-5.0..5.0)).collect();
        let lt = mask.len();
        let perturbed = t
            .map(|i, j, k, v| if mask[k] { v + noise[(i * t.heads() + j) * lt + k] } else { v })
            .unwrap();
        let s = AggregationScheme::new(scheme, lr);
        prop_assert_eq!(aggregate_attention(&t, &s).unwrap(), aggregate_attention(&perturbed, &s).unwrap());
    }

    #[test]
    fn uniform_shift_moves_every_scheme((nested, mask) in arb_tensor(), scheme in scheme_strategy(), lr in 1usize..8, c in -3.0f64..3.0) {
        let t = AttentionTensor::from_nested(&nested, mask).unwrap();
        let shifted = t.map(|_, _, _, v| v + c).unwrap();
        let s = AggregationScheme::new(scheme, lr);
        let a = aggregate_attention(&t, &s).unwrap();
        let b = aggregate_attention(&shifted, &s).unwrap();
        prop_assert!((b - (a + c)).abs() <= 1e-9);
    }

    #[test]
    fn annotation_partitions_candidates(seed in any::<u64>(), n in 1usize..20, k in 0usize..6) {
        let mut r = rng(seed);
        let texts: Vec<String> = (0..n).map(|_| if r.random_bool(0.3) { "has Gold here".into() } else { "plain".into() }).collect();
        let ids: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
        let cands: Vec<DocCandidate> = (0..n).map(|i| DocCandidate {
            doc_id: &ids[i],
            text: &texts[i],
            s_agg: r.random_range(0..4) as f64,
        }).collect();
        let ann = annotate(&cands, &["gold".to_string()], k).unwrap();
        let pos: HashSet<&str> = ann.positives.iter().map(|(d, _)| d.as_str()).collect();
        let neg: HashSet<&str> = ann.negatives.iter().map(String::as_str).collect();
        prop_assert!(pos.is_disjoint(&neg));
        prop_assert_eq!(pos.len() + neg.len(), n);
        let hits = texts.iter().filter(|t| t.contains("Gold")).count();
        prop_assert!(pos.len() >= hits.max(k.min(n)));
        prop_assert!(pos.len() <= hits + k);
    }

    #[test]
    fn mixing_is_monotone_and_shift_equivariant(scores in prop::collection::vec(-5.0f64..5.0, 1..12), docs in 1usize..4, a in 0.0f64..=1.0, b in 0.0f64..=1.0, c in -2.0f64..2.0) {
        let passages: Vec<(String, f64)> = scores.iter().enumerate().map(|(i, s)| (format!("p{i}"), *s)).collect();
        let lineage: HashMap<String, String> = (0..scores.len()).map(|i| (format!("p{i}"), format!("d{}", i % docs))).collect();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let x = aggregate_local_to_global(&passages, &lineage, lo).unwrap();
        let y = aggregate_local_to_global(&passages, &lineage, hi).unwrap();
        let shifted: Vec<(String, f64)> = passages.iter().map(|(p, s)| (p.clone(), s + c)).collect();
        let z = aggregate_local_to_global(&shifted, &lineage, lo).unwrap();
        for ((dx, dy), dz) in x.iter().zip(&y).zip(&z) {
            prop_assert!(dx.s_mean <= dx.s_agg + 1e-12 && dx.s_agg <= dx.s_max + 1e-12);
            prop_assert!(dx.s_agg <= dy.s_agg + 1e-12);
            prop_assert!((dz.s_agg - (dx.s_agg + c)).abs() <= 1e-9);
        }
    }

    #[test]
    fn bpr_decreases_with_margin(m in -20.0f64..20.0, d in 0.01f64..5.0) {
        let pair = |m: f64| DistillPair {
            query_id: "q".into(), positive_doc: "p".into(), negative_doc: "n".into(),
            s_pre_pos: m, s_pre_neg: 0.0, s_agg_pos: 0.0, s_agg_neg: 0.0,
            positive_source: PositiveSource::Hit,
        };
        let a = bpr_loss(&[pair(m)]).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!(bpr_loss(&[pair(m + d)]).unwrap() < a);
        prop_assert!((neg_log_sigmoid(m) - (1.0 + (-m).exp()).ln()).abs() <= 1e-9 * (1.0 + m.abs()));
    }

    #[test]
    fn recall_grows_with_k_and_entropy_is_bounded(seed in any::<u64>(), queries in 1usize..8, k in 1usize..6) {
        let mut r = rng(seed);
        let mut table = UnitTable::default();
        let mut run = RunFile::default();
        let mut qa = Vec::new();
        for q in 0..queries {
            let qid = format!("q{q}");
            for rank in 1..=r.random_range(0..7usize) {
                let id = format!("u{}", r.random_range(0..10));
                let text = if r.random_bool(0.3) { format!("x answer{q} y") } else { "nothing".to_string() };
                let uid = format!("{qid}-{rank}-{id}");
                table.insert(Granularity::Passage, &uid, &format!("title{}", r.random_range(0..3)), &text);
                run.records.push(RunRecord {
                    query_id: qid.clone(), unit_id: uid, granularity: Granularity::Passage,
                    rank, score: -(rank as f64), stage: "s".into(),
                });
            }
            qa.push(QaItem { query_id: qid, question: "?".into(), answers: vec![format!("ANSWER{q}")] });
        }
        let a = answer_recall(&run, "s", &qa, k, &table).unwrap();
        let b = answer_recall(&run, "s", &qa, k + 1, &table).unwrap();
        prop_assert!((0.0..=1.0).contains(&a) && a <= b);
        let e = contextual_entropy(&run, "s", k, &table).unwrap();
        prop_assert!(e.mean_bits >= 0.0 && e.mean_bits <= (k as f64).log2() + 1e-12);
    }

    #[test]
    fn exact_match_is_symmetric(words in prop::collection::vec("[A-Za-z]{1,6}", 1..5), punct in "[.,!? ]{0,3}") {
        let a = words.join(" ");
        let b = format!("The {}{punct}", words.join("  ").to_uppercase());
        let em_ab = exact_match(&a, std::slice::from_ref(&b));
        let em_ba = exact_match(&b, std::slice::from_ref(&a));
        prop_assert_eq!(em_ab, em_ba);
        prop_assert_eq!(em_ab, text::normalize_for_em(&a) == text::normalize_for_em(&b));
    }

    #[test]
    fn run_files_render_and_parse_back(seed in any::<u64>(), queries in 0usize..5) {
        let mut r = rng(seed);
        let mut run = RunFile::default();
        let stages = ["retrieval", "pre-rank", "post-rank"];
        for q in 0..queries {
            let qid = format!("q{q}");
            for (si, stage) in stages.iter().enumerate() {
                let n = r.random_range(0..5usize);
                run.timings.push((qid.clone(), StageTiming {
                    stage: stage.to_string(),
                    seconds: r.random_range(0.0..3.0),
                    candidates_in: n + r.random_range(0..100usize),
                    candidates_out: n,
                }));
                let mut scores: Vec<f64> = (0..n).map(|_| r.random_range(-1e3..1e3) / 7.0).collect();
                scores.sort_by(|a, b| b.total_cmp(a));
                for (i, s) in scores.into_iter().enumerate() {
                    run.records.push(RunRecord {
                        query_id: qid.clone(),
                        unit_id: format!("d{}#{}", r.random_range(0..50), i),
                        granularity: [Granularity::Cluster, Granularity::Document, Granularity::Passage][si],
                        rank: i + 1,
                        score: s,
                        stage: stage.to_string(),
                    });
                }
            }
        }
        let body = run.render().unwrap();
        let back = RunFile::parse(&body, std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(&back, &run);
        prop_assert_eq!(back.render().unwrap(), body);
    }

    #[test]
    fn configs_round_trip(top in 1usize..200, docs in 1usize..50, h in 1usize..10, alpha in 0.0f64..=1.0, depth in 0usize..3, scheme in scheme_strategy(), seed in any::<u64>(), q in any::<bool>()) {
        let c = FunnelConfig {
            top_clusters: top,
            top_docs: docs,
            top_passages: h,
            mix_alpha: alpha,
            stage_depth: [StageDepth::RetrievalOnly, StageDepth::TwoStage, StageDepth::Full][depth],
            scheme,
            include_query_tokens: q,
            post_rank_scorer: format!("synthetic:{seed}").parse().unwrap(),
            ..FunnelConfig::default()
        };
        let back = FunnelConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        prop_assert_eq!(back, c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn funnel_narrows_and_keeps_lineage(seed in any::<u64>(), k in 1usize..20, n in 1usize..10, h in 1usize..6) {
        let cfg = SynthConfig { documents: 120, queries: 5, topic_size: 8, ..SynthConfig::funnel(seed) };
        let set = generate(&cfg).unwrap();
        let config = FunnelConfig { top_clusters: k, top_docs: n, top_passages: h, max_cluster_size: 1000, ..FunnelConfig::default() };
        let corpus = Corpus::from_records(set.records).unwrap();
        let resources = FunnelResources::build(corpus, config.max_cluster_size, config.bm25()).unwrap();
        let outcome = run_batch(&set.qa, &config, &resources, &FunnelScorers::builtin()).unwrap();
        prop_assert!(outcome.failures.is_empty());
        for t in &outcome.traces {
            let limits = [k, n, h];
            for (s, limit) in t.stages.iter().zip(limits) {
                prop_assert!(s.candidates_out() <= s.candidates_in);
                prop_assert!(s.candidates_out() <= limit);
            }
            let clusters: HashSet<String> = t.stage(Stage::Retrieval).unwrap().hit_ids().into_iter().collect();
            let docs: HashSet<String> = t.stage(Stage::PreRank).unwrap().hit_ids().into_iter().collect();
            for p in t.final_passages() {
                let chain = t.lineage(&p.unit_id);
                prop_assert_eq!(chain.len(), 2);
                prop_assert!(docs.contains(chain[0]));
                prop_assert!(clusters.contains(chain[1]));
            }
        }
    }
}
