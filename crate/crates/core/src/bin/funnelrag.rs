use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use funnelrag::chunker::{parse_passage_id, Granularity, RetrievalUnit};
use funnelrag::corpus::{build_graph, cluster_documents, ingest_corpus, read_clusters, write_clusters, write_corpus};
use funnelrag::distill::{label_query, write_pairs, DistillSettings, PairMode, QueryEvidence};
use funnelrag::eval::{
    answer_recall, contextual_entropy, degradation_curve, exact_match, read_qa, read_run, timing_report,
    write_qa, write_run, CorpusResolver, QaItem, RunFile,
};
use funnelrag::pipeline::contrast::ContrastSettings;
use funnelrag::pipeline::{
    contrast_mode, post_rank_stage, pre_rank_stage, retrieve_stage, run_batch, run_batch_with, run_flat,
    BatchOutcome, ContrastMode, DocumentStore, FlatResources, FunnelConfig, FunnelResources, FunnelScorers,
    FunnelTrace, StageDepth, ALL_PASSAGE_SCORES,
};
use funnelrag::rank::{Scheme, ScorerHandle};
use funnelrag::sparse::{build_index, load_index, save_index, PostingsFormat};
use funnelrag::synth::{generate, SynthConfig};

/// Coarse-to-fine retrieval toolkit.
///
/// Exit codes: 0 success, 2 some queries failed, 1 fatal error.
#[derive(Parser)]
#[command(name = "funnelrag", version)]
struct Cli {
    /// TOML config file; FUNNELRAG_* environment variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Bundled preset used when no config file is given.
    #[arg(long, global = true, default_value = "nq")]
    preset: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster a corpus by its hyperlink graph.
    Cluster {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        max_size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a BM25 index over retrieval units.
    Index(IndexArgs),
    /// Sparse retrieval for every query.
    Retrieve {
        #[arg(long)]
        index: PathBuf,
        /// QA JSONL with the questions.
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        top_k: Option<usize>,
        /// Granularity of the indexed units.
        #[arg(long, default_value = "cluster")]
        granularity: Granularity,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-rank the documents of retrieved clusters.
    PreRank {
        /// `builtin`, `synthetic:<seed>` or a scorer URL.
        #[arg(long)]
        scorer: Option<ScorerHandle>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        clusters: PathBuf,
        #[arg(long)]
        top_n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Post-rank the passages of pre-ranked documents by aggregated attention.
    PostRank {
        #[arg(long)]
        scorer: Option<ScorerHandle>,
        #[arg(long)]
        scheme: Option<Scheme>,
        #[arg(long)]
        rep_tokens: Option<usize>,
        /// Let query tokens take part in aggregation.
        #[arg(long)]
        include_query_tokens: bool,
        #[arg(long)]
        top_h: Option<usize>,
        #[arg(long)]
        passage_size: Option<usize>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// End-to-end funnel runs.
    Pipeline {
        #[command(subcommand)]
        command: PipelineCommand,
    },
    /// Export distillation pairs from pre-rank and post-rank runs.
    DistillExport {
        #[arg(long)]
        post_run: PathBuf,
        #[arg(long)]
        pre_run: PathBuf,
        #[arg(long)]
        qa: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = 1)]
        topk: usize,
        /// `all` or `capped:<n>`.
        #[arg(long, default_value = "capped:4")]
        pairs: PairMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a run file.
    Eval(EvalArgs),
    /// Benchmarks.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
    /// Generate a synthetic corpus with planted answers.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        documents: usize,
        #[arg(long, default_value_t = 50)]
        queries: usize,
        /// Long documents with mid-document answers.
        #[arg(long)]
        long: bool,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct IndexArgs {
    /// Retrieval-unit JSONL.
    #[arg(long, conflicts_with_all = ["corpus", "clusters"])]
    units: Option<PathBuf>,
    /// Corpus JSONL; with `--clusters`, indexes one unit per cluster.
    #[arg(long, requires = "clusters")]
    corpus: Option<PathBuf>,
    #[arg(long)]
    clusters: Option<PathBuf>,
    /// Postings layout.
    #[arg(long, default_value = "binary", value_parser = ["binary", "json"])]
    format: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum PipelineCommand {
    /// Run every QA question through the funnel.
    Run {
        #[arg(long)]
        corpus: PathBuf,
        /// Precomputed clusters; built from the corpus when omitted.
        #[arg(long)]
        clusters: Option<PathBuf>,
        /// Precomputed cluster index; built when omitted.
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        qa: PathBuf,
        #[arg(long)]
        depth: Option<StageDepth>,
        /// Flat baseline over directly indexed passages.
        #[arg(long)]
        flat: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Paired coarse/fine or high/low rerank curves.
    Contrast {
        #[arg(long, default_value = "coarse-vs-fine")]
        mode: ContrastMode,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        clusters: Option<PathBuf>,
        #[arg(long)]
        qa: PathBuf,
        #[arg(long, default_value_t = 10)]
        candidate_clusters: usize,
        #[arg(long, default_value_t = 512)]
        window_tokens: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qa: Option<PathBuf>,
    #[arg(long, value_parser = ["ar", "em", "entropy", "curve", "timing"])]
    metric: String,
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// Stage to evaluate; defaults to the deepest funnel stage present.
    #[arg(long)]
    stage: Option<String>,
    /// Comma-separated cutoffs in percent.
    #[arg(long, value_delimiter = ',', default_value = "10,20,30,40,50,60,70,80,90,100")]
    percents: Vec<f64>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    clusters: Option<PathBuf>,
    #[arg(long)]
    passage_size: Option<usize>,
    /// JSONL of {"query_id", "prediction"} for `em`.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Drop gold answers longer than this many tokens.
    #[arg(long)]
    max_answer_tokens: Option<usize>,
}

/// Outcome of a command: how many queries failed.
type Failures = usize;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("FUNNELRAG_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage errors are fatal (1); code 2 is reserved for partial query failures.
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("{n} queries failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<FunnelConfig> {
    let config = match &cli.config {
        Some(path) => FunnelConfig::load(path)?,
        None => {
            let mut c = FunnelConfig::preset(&cli.preset)?;
            c.apply_env(std::env::vars())?;
            c
        }
    };
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<Failures> {
    let mut config = load_config(&cli)?;
    match cli.command {
        Command::Cluster { corpus, max_size, out } => {
            let corpus = ingest_corpus(&corpus)?;
            let graph = build_graph(&corpus);
            let clusters = cluster_documents(&corpus, &graph, max_size.unwrap_or(config.max_cluster_size))?;
            write_clusters(&clusters, &out)?;
            let stats = corpus.stats();
            println!(
                "{} documents, {} links ({} dropped) -> {} clusters",
                stats.documents,
                stats.links,
                stats.dropped_links,
                clusters.len()
            );
            Ok(0)
        }
        Command::Index(args) => {
            let units = match (&args.units, &args.corpus, &args.clusters) {
                (Some(path), _, _) => read_units(path)?,
                (None, Some(corpus), Some(clusters)) => {
                    DocumentStore::new(ingest_corpus(corpus)?, read_clusters(clusters)?)?.cluster_units()?
                }
                _ => bail!("pass --units, or --corpus with --clusters"),
            };
            let index = build_index(&units, config.bm25())?;
            let format = if args.format == "json" { PostingsFormat::Json } else { PostingsFormat::Binary };
            save_index(&index, &args.out, format)?;
            println!("indexed {} units, {} terms", index.doc_count(), index.vocabulary().count());
            Ok(0)
        }
        Command::Retrieve {
            index,
            queries,
            top_k,
            granularity,
            out,
        } => {
            let index = load_index(&index)?;
            let qa = read_qa(&queries, None)?;
            let top_k = top_k.unwrap_or(config.top_clusters);
            let outcome = run_batch_with(&qa, config.parallelism, |q| {
                single_stage(q, retrieve_stage(&index, &q.question, top_k, granularity))
            })?;
            finish(RunFile::default(), outcome, &out)
        }
        Command::PreRank {
            scorer,
            input,
            queries,
            corpus,
            clusters,
            top_n,
            out,
        } => {
            let base = read_run(&input)?;
            let store = DocumentStore::new(ingest_corpus(&corpus)?, read_clusters(&clusters)?)?;
            let qa = queries_in_run(&base, &queries)?;
            let scorer = tuned(&config, scorer.unwrap_or(config.pre_rank_scorer.clone())).relevance_scorer()?;
            let top_n = top_n.unwrap_or(config.top_docs);
            let inputs = base.ranked("retrieval");
            let outcome = run_batch_with(&qa, config.parallelism, |q| {
                let ids = ids_of(inputs.get(q.query_id.as_str()));
                single_stage(q, pre_rank_stage(&store, &q.question, &ids, scorer.as_ref(), top_n))
            })?;
            finish(base, outcome, &out)
        }
        Command::PostRank {
            scorer,
            scheme,
            rep_tokens,
            include_query_tokens,
            top_h,
            passage_size,
            input,
            queries,
            corpus,
            out,
        } => {
            if let Some(s) = scheme {
                config.scheme = s;
            }
            if let Some(n) = rep_tokens {
                config.rep_tokens = n;
            }
            config.include_query_tokens |= include_query_tokens;
            let base = read_run(&input)?;
            let store = DocumentStore::new(ingest_corpus(&corpus)?, vec![])?;
            let qa = queries_in_run(&base, &queries)?;
            let source = tuned(&config, scorer.unwrap_or(config.post_rank_scorer.clone())).attention_source()?;
            let top_h = top_h.unwrap_or(config.top_passages);
            let passage_size = passage_size.unwrap_or(config.passage_size);
            let scheme = config.aggregation();
            let inputs = base.ranked("pre-rank");
            let outcome = run_batch_with(&qa, config.parallelism, |q| {
                let ids = ids_of(inputs.get(q.query_id.as_str()));
                single_stage(
                    q,
                    post_rank_stage(&store, &q.question, &ids, passage_size, source.as_ref(), &scheme, top_h),
                )
            })?;
            finish(base, outcome, &out)
        }
        Command::Pipeline {
            command:
                PipelineCommand::Run {
                    corpus,
                    clusters,
                    index,
                    qa,
                    depth,
                    flat,
                    out,
                },
        } => {
            if let Some(d) = depth {
                config.stage_depth = d;
            }
            let corpus = ingest_corpus(&corpus)?;
            let qa = read_qa(&qa, None)?;
            let outcome = if flat {
                let flat = FlatResources::build(&corpus, config.passage_size, config.bm25())?;
                let scorer = (config.stage_depth >= StageDepth::TwoStage)
                    .then(|| config.pre_rank_handle().relevance_scorer())
                    .transpose()?;
                run_batch_with(&qa, config.parallelism, |q| {
                    run_flat(&q.query_id, &q.question, &config, &flat, scorer.as_deref())
                })?
            } else {
                let resources = match clusters {
                    None => FunnelResources::build(corpus, config.max_cluster_size, config.bm25())?,
                    Some(path) => {
                        let store = DocumentStore::new(corpus, read_clusters(&path)?)?;
                        let index = match index {
                            Some(dir) => load_index(&dir)?,
                            None => build_index(&store.cluster_units()?, config.bm25())?,
                        };
                        FunnelResources::new(store, index)?
                    }
                };
                let scorers = FunnelScorers::from_config(&config)?;
                run_batch(&qa, &config, &resources, &scorers)?
            };
            println!("time per query: {}", timing_report(&outcome.timings()));
            finish(RunFile::default(), outcome, &out)
        }
        Command::DistillExport {
            post_run,
            pre_run,
            qa,
            corpus,
            alpha,
            topk,
            pairs,
            out,
        } => {
            let post = read_run(&post_run)?;
            let pre = read_run(&pre_run)?;
            let qa = read_qa(&qa, None)?;
            let corpus = ingest_corpus(&corpus)?;
            let settings = DistillSettings {
                mix_alpha: alpha.unwrap_or(config.mix_alpha),
                top_k_agg: topk,
                mode: pairs,
            };
            let passage_stage = if post.stages().iter().any(|s| s == ALL_PASSAGE_SCORES) {
                ALL_PASSAGE_SCORES
            } else {
                "post-rank"
            };
            let pre_ranked = pre.ranked("pre-rank");
            let post_ranked = post.ranked(passage_stage);
            let mut all = Vec::new();
            let mut failed = 0;
            for item in &qa {
                let pre_scores = scores_of(pre_ranked.get(item.query_id.as_str()));
                let passage_scores = scores_of(post_ranked.get(item.query_id.as_str()));
                let lineage: HashMap<String, String> = passage_scores
                    .iter()
                    .filter_map(|(p, _)| Some((p.clone(), parse_passage_id(p)?.0.to_string())))
                    .collect();
                let ev = QueryEvidence {
                    query_id: &item.query_id,
                    answers: &item.answers,
                    pre_scores: &pre_scores,
                    passage_scores: &passage_scores,
                    lineage: &lineage,
                };
                match label_query(&ev, |d| corpus.get(d).map(|d| d.text.as_str()), &settings) {
                    Ok(labels) => all.extend(labels.pairs),
                    Err(e) => {
                        eprintln!("query `{}`: {e}", item.query_id);
                        failed += 1;
                    }
                }
            }
            write_pairs(&all, &out)?;
            println!("{} pairs from {} queries", all.len(), qa.len() - failed);
            Ok(failed)
        }
        Command::Eval(args) => eval(args, &config),
        Command::Bench {
            command:
                BenchCommand::Contrast {
                    mode,
                    corpus,
                    clusters,
                    qa,
                    candidate_clusters,
                    window_tokens,
                    out_dir,
                },
        } => {
            let corpus = ingest_corpus(&corpus)?;
            let qa = read_qa(&qa, None)?;
            let resources = match clusters {
                None => FunnelResources::build(corpus, config.max_cluster_size, config.bm25())?,
                Some(path) => {
                    let store = DocumentStore::new(corpus, read_clusters(&path)?)?;
                    let index = build_index(&store.cluster_units()?, config.bm25())?;
                    FunnelResources::new(store, index)?
                }
            };
            let settings = ContrastSettings {
                candidate_clusters,
                window_tokens,
                ..ContrastSettings::default()
            };
            let report = contrast_mode(&qa, &resources, &config, mode, &settings)?;
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            for arm in &report.arms {
                write_run(&arm.run, out_dir.join(format!("{}.tsv", arm.label)))?;
            }
            print!("{}", report.table());
            Ok(0)
        }
        Command::Synth {
            seed,
            documents,
            queries,
            long,
            out_dir,
        } => {
            let base = if long { SynthConfig::contrast(seed) } else { SynthConfig::funnel(seed) };
            let set = generate(&SynthConfig {
                documents,
                queries,
                ..base
            })?;
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            write_corpus(&set.records, out_dir.join("corpus.jsonl"))?;
            write_qa(&set.qa, out_dir.join("qa.jsonl"))?;
            println!("{} documents, {} queries", set.records.len(), set.qa.len());
            Ok(0)
        }
    }
}

fn eval(args: EvalArgs, config: &FunnelConfig) -> anyhow::Result<Failures> {
    let run = read_run(&args.run)?;
    if args.metric == "timing" {
        println!("{}", timing_report(&run.stage_timings()));
        return Ok(0);
    }
    let qa_path = args.qa.as_ref().context("--qa is required for this metric")?;
    let qa = read_qa(qa_path, args.max_answer_tokens)?;
    if args.metric == "em" {
        let path = args.predictions.as_ref().context("--predictions is required for em")?;
        let predictions = read_predictions(path)?;
        let hits = qa
            .iter()
            .filter(|q| predictions.get(&q.query_id).is_some_and(|p| exact_match(p, &q.answers)))
            .count();
        println!("EM {:.4}", hits as f64 / qa.len().max(1) as f64);
        return Ok(0);
    }
    let stage = match args.stage {
        Some(s) => s,
        None => ["post-rank", "pre-rank", "retrieval"]
            .into_iter()
            .find(|s| run.stages().iter().any(|x| x == s))
            .map(str::to_string)
            .or_else(|| run.stages().into_iter().next())
            .context("run file has no stages")?,
    };
    let corpus = ingest_corpus(args.corpus.as_ref().context("--corpus is required for this metric")?)?;
    let clusters = match &args.clusters {
        Some(p) => read_clusters(p)?,
        None => vec![],
    };
    let resolver = CorpusResolver::new(&corpus, &clusters, args.passage_size.unwrap_or(config.passage_size));
    match args.metric.as_str() {
        "ar" => {
            let ar = answer_recall(&run, &stage, &qa, args.k, &resolver)?;
            println!("AR@{} {:.4}", args.k, ar);
        }
        "entropy" => {
            let r = contextual_entropy(&run, &stage, args.k, &resolver)?;
            println!("entropy@{} {:.4} bits over {} queries ({} skipped)", args.k, r.mean_bits, r.queries, r.skipped);
        }
        "curve" => {
            for p in degradation_curve(&run, &stage, &qa, &args.percents, &resolver)? {
                println!("{:>6}% AR {:.4} drop {:.2}%", p.percent, p.answer_recall, p.drop * 100.0);
            }
        }
        other => bail!("unknown metric `{other}`"),
    }
    Ok(0)
}

fn tuned(config: &FunnelConfig, handle: ScorerHandle) -> ScorerHandle {
    let probe = FunnelConfig {
        pre_rank_scorer: handle,
        ..config.clone()
    };
    probe.pre_rank_handle()
}

fn single_stage(q: &QaItem, stage: funnelrag::Result<funnelrag::pipeline::StageResult>) -> funnelrag::Result<FunnelTrace> {
    Ok(FunnelTrace {
        query_id: q.query_id.clone(),
        stages: vec![stage?],
    })
}

fn ids_of(records: Option<&Vec<&funnelrag::eval::RunRecord>>) -> Vec<String> {
    records.map_or_else(Vec::new, |rs| rs.iter().map(|r| r.unit_id.clone()).collect())
}

fn scores_of(records: Option<&Vec<&funnelrag::eval::RunRecord>>) -> Vec<(String, f64)> {
    records.map_or_else(Vec::new, |rs| rs.iter().map(|r| (r.unit_id.clone(), r.score)).collect())
}

/// QA items for the queries present in `run`, in QA order.
fn queries_in_run(run: &RunFile, path: &Path) -> anyhow::Result<Vec<QaItem>> {
    let wanted = run.query_ids();
    let qa = read_qa(path, None)?;
    for q in &wanted {
        if !qa.iter().any(|item| &item.query_id == q) {
            bail!("query `{q}` in the run file is missing from {}", path.display());
        }
    }
    Ok(qa.into_iter().filter(|item| wanted.contains(&item.query_id)).collect())
}

fn finish(mut base: RunFile, outcome: BatchOutcome, out: &Path) -> anyhow::Result<Failures> {
    for f in &outcome.failures {
        eprintln!("query `{}` failed: {}", f.query_id, f.error);
    }
    base.extend(outcome.run());
    write_run(&base, out)?;
    Ok(outcome.failures.len())
}

fn read_units(path: &Path) -> anyhow::Result<Vec<RetrievalUnit>> {
    let body = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    body.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), n + 1)))
        .collect()
}

#[derive(Deserialize)]
struct Prediction {
    query_id: String,
    prediction: String,
}

fn read_predictions(path: &Path) -> anyhow::Result<HashMap<String, String>> {
    let body = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    body.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let p: Prediction = serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), n + 1))?;
            Ok((p.query_id, p.prediction))
        })
        .collect()
}
