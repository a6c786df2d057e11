//! Drives the `funnelrag` binary end to end over a small generated corpus.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use funnelrag::corpus::{build_graph, cluster_documents, ingest_corpus, read_clusters, write_clusters, write_corpus, DocumentRecord};
use funnelrag::distill::{read_pairs, write_pairs};
use funnelrag::eval::{read_qa, read_run, write_qa, RunFile};
use funnelrag::pipeline::DocumentStore;
use funnelrag::sparse::{load_index, save_index, PostingsFormat};
use funnelrag::synth::{generate, SynthConfig};

pub const BIN: &str = env!("CARGO_BIN_EXE_funnelrag");

pub fn funnelrag(args: &[&str]) -> Output {
    funnelrag_env(args, &[])
}

pub fn funnelrag_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args);
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("FUNNELRAG_")) {
        cmd.env_remove(k);
    }
    cmd.envs(env.iter().copied());
    cmd.output().expect("binary runs")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// `a.bc (d.ef+g.hi+j.kl)` with any number of stage terms.
pub fn is_timing_line(s: &str) -> bool {
    let two_dp = |x: &str| {
        let mut parts = x.split('.');
        matches!(
            (parts.next(), parts.next(), parts.next()),
            (Some(i), Some(f), None) if !i.is_empty() && i.bytes().all(|b| b.is_ascii_digit())
                && f.len() == 2 && f.bytes().all(|b| b.is_ascii_digit())
        )
    };
    let Some((total, rest)) = s.trim().split_once(" (") else {
        return false;
    };
    let Some(inner) = rest.strip_suffix(')') else {
        return false;
    };
    two_dp(total) && inner.split('+').all(two_dp)
}

fn check(ok: bool, what: &str) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what.to_string())
    }
}

fn ok_run(args: &[&str]) -> Result<Output, String> {
    let o = funnelrag(args);
    if code(&o) != 0 {
        return Err(format!("{args:?} exited {}: {}", code(&o), stderr(&o)));
    }
    Ok(o)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn same_bytes_after_rerender(path: &Path) -> Result<RunFile, String> {
    let run = read_run(path).map_err(|e| e.to_string())?;
    let body = fs::read_to_string(path).map_err(|e| e.to_string())?;
    check(run.render().map_err(|e| e.to_string())? == body, &format!("{} does not re-render identically", path.display()))?;
    Ok(run)
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
}

impl Fixture {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn p(&self, name: &str) -> String {
        s(&self.path(name)).to_string()
    }
}

/// Runs every subcommand in sequence, checking that each output file reads back and
/// re-serializes byte for byte, and that the staged commands agree with `pipeline run`.
pub fn full_round_trip() -> Result<Fixture, String> {
    let fx = Fixture {
        dir: tempfile::tempdir().map_err(|e| e.to_string())?,
    };
    let cfg = SynthConfig {
        documents: 150,
        queries: 6,
        ..SynthConfig::funnel(11)
    };
    let data = fx.p("data");
    ok_run(&["synth", "--seed", "11", "--documents", "150", "--queries", "6", "--out-dir", &data])?;
    let set = generate(&cfg).map_err(|e| e.to_string())?;
    let corpus_path = fx.path("data/corpus.jsonl");
    let qa_path = fx.path("data/qa.jsonl");
    let corpus = ingest_corpus(&corpus_path).map_err(|e| e.to_string())?;
    let records: Vec<DocumentRecord> = corpus
        .documents()
        .iter()
        .map(|d| DocumentRecord {
            id: d.doc_id.clone(),
            title: d.title.clone(),
            text: d.text.clone(),
            links: d.out_links.clone(),
        })
        .collect();
    write_corpus(&records, fx.path("corpus2.jsonl")).map_err(|e| e.to_string())?;
    check(fs::read(&corpus_path).ok() == fs::read(fx.path("corpus2.jsonl")).ok(), "corpus does not round-trip")?;
    check(corpus.stats().dropped_links == 0 && corpus.len() == set.records.len(), "corpus content")?;
    let qa = read_qa(&qa_path, None).map_err(|e| e.to_string())?;
    check(qa == set.qa, "qa content")?;
    write_qa(&qa, fx.path("qa2.jsonl")).map_err(|e| e.to_string())?;
    check(fs::read(&qa_path).ok() == fs::read(fx.path("qa2.jsonl")).ok(), "qa does not round-trip")?;

    let (corpus_s, qa_s) = (s(&corpus_path).to_string(), s(&qa_path).to_string());
    let clusters = fx.p("clusters.jsonl");
    ok_run(&["cluster", "--corpus", &corpus_s, "--max-size", "4000", "--out", &clusters])?;
    let read = read_clusters(&clusters).map_err(|e| e.to_string())?;
    let direct = cluster_documents(&corpus, &build_graph(&corpus), 4000).map_err(|e| e.to_string())?;
    check(read == direct, "cluster file differs from in-process clustering")?;
    write_clusters(&read, fx.path("clusters2.jsonl")).map_err(|e| e.to_string())?;
    check(fs::read(&clusters).ok() == fs::read(fx.path("clusters2.jsonl")).ok(), "clusters do not round-trip")?;

    let (idx, idx_json) = (fx.p("idx"), fx.p("idx-json"));
    ok_run(&["index", "--corpus", &corpus_s, "--clusters", &clusters, "--out", &idx])?;
    ok_run(&["index", "--corpus", &corpus_s, "--clusters", &clusters, "--format", "json", "--out", &idx_json])?;
    let a = load_index(&idx).map_err(|e| e.to_string())?;
    let b = load_index(&idx_json).map_err(|e| e.to_string())?;
    check(a.unit_ids() == b.unit_ids() && a.vocabulary().eq(b.vocabulary()), "binary and json indexes disagree")?;
    for t in a.vocabulary() {
        check(a.postings(t) == b.postings(t), "postings differ between layouts")?;
    }
    save_index(&a, fx.path("idx2"), PostingsFormat::Binary).map_err(|e| e.to_string())?;
    for f in ["manifest.json", "postings.bin"] {
        check(
            fs::read(fx.path("idx").join(f)).ok() == fs::read(fx.path("idx2").join(f)).ok(),
            &format!("index {f} does not round-trip"),
        )?;
    }

    let store = DocumentStore::new(corpus.clone(), read.clone()).map_err(|e| e.to_string())?;
    let units = store.cluster_units().map_err(|e| e.to_string())?;
    let lines: Vec<String> = units.iter().map(|u| serde_json::to_string(u).unwrap()).collect();
    fs::write(fx.path("units.jsonl"), lines.join("\n") + "\n").map_err(|e| e.to_string())?;
    ok_run(&["index", "--units", &fx.p("units.jsonl"), "--out", &fx.p("idx-units")])?;
    let c = load_index(fx.path("idx-units")).map_err(|e| e.to_string())?;
    check(c.unit_ids() == a.unit_ids(), "unit-file index differs")?;

    let (r1, r2, r3) = (fx.p("r1.tsv"), fx.p("r2.tsv"), fx.p("r3.tsv"));
    ok_run(&["retrieve", "--index", &idx, "--queries", &qa_s, "--out", &r1])?;
    let run1 = same_bytes_after_rerender(Path::new(&r1))?;
    check(run1.stages() == ["retrieval"] && run1.query_ids().len() == qa.len(), "retrieve output")?;
    ok_run(&["pre-rank", "--in", &r1, "--queries", &qa_s, "--corpus", &corpus_s, "--clusters", &clusters, "--out", &r2])?;
    let run2 = same_bytes_after_rerender(Path::new(&r2))?;
    check(run2.stages() == ["retrieval", "pre-rank"], "pre-rank output stages")?;
    ok_run(&["post-rank", "--in", &r2, "--queries", &qa_s, "--corpus", &corpus_s, "--out", &r3])?;
    let run3 = same_bytes_after_rerender(Path::new(&r3))?;

    let piped = fx.p("pipeline.tsv");
    let o = ok_run(&["pipeline", "run", "--corpus", &corpus_s, "--clusters", &clusters, "--index", &idx, "--qa", &qa_s, "--out", &piped])?;
    let line = stdout(&o);
    let timing = line.lines().find_map(|l| l.strip_prefix("time per query: ")).unwrap_or("");
    check(is_timing_line(timing), &format!("timing line `{timing}`"))?;
    let whole = same_bytes_after_rerender(Path::new(&piped))?;
    let mut staged = run3.records.clone();
    staged.sort_by(|x, y| (&x.query_id, &x.stage, x.rank).cmp(&(&y.query_id, &y.stage, y.rank)));
    let mut direct = whole.records.clone();
    direct.sort_by(|x, y| (&x.query_id, &x.stage, x.rank).cmp(&(&y.query_id, &y.stage, y.rank)));
    check(staged == direct, "staged commands disagree with pipeline run")?;

    let pairs = fx.p("pairs.jsonl");
    ok_run(&["distill-export", "--post-run", &piped, "--pre-run", &piped, "--qa", &qa_s, "--corpus", &corpus_s, "--out", &pairs])?;
    let read_back = read_pairs(&pairs).map_err(|e| e.to_string())?;
    check(!read_back.is_empty(), "no distill pairs")?;
    write_pairs(&read_back, fx.path("pairs2.jsonl")).map_err(|e| e.to_string())?;
    check(fs::read(&pairs).ok() == fs::read(fx.path("pairs2.jsonl")).ok(), "pairs do not round-trip")?;

    let ar = stdout(&ok_run(&["eval", "--run", &piped, "--qa", &qa_s, "--corpus", &corpus_s, "--metric", "ar", "--k", "4"])?);
    check(ar.trim() == "AR@4 1.0000", &format!("eval ar printed `{ar}`"))?;
    let ent = stdout(&ok_run(&["eval", "--run", &piped, "--corpus", &corpus_s, "--qa", &qa_s, "--metric", "entropy"])?);
    check(ent.starts_with("entropy@4 "), &format!("eval entropy printed `{ent}`"))?;
    let curve = stdout(&ok_run(&["eval", "--run", &piped, "--qa", &qa_s, "--corpus", &corpus_s, "--metric", "curve", "--stage", "retrieval", "--clusters", &clusters])?);
    check(curve.lines().count() == 10 && curve.lines().last().unwrap_or("").ends_with("drop 0.00%"), &format!("eval curve printed `{curve}`"))?;
    let t = stdout(&ok_run(&["eval", "--run", &piped, "--metric", "timing"])?);
    check(is_timing_line(&t), &format!("eval timing printed `{t}`"))?;
    let preds: Vec<String> = qa
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let p = if i % 2 == 0 { format!("The {}.", q.answers[0]) } else { "wrong".into() };
            serde_json::json!({"query_id": q.query_id, "prediction": p}).to_string()
        })
        .collect();
    fs::write(fx.path("preds.jsonl"), preds.join("\n")).map_err(|e| e.to_string())?;
    let em = stdout(&ok_run(&["eval", "--run", &piped, "--qa", &qa_s, "--metric", "em", "--predictions", &fx.p("preds.jsonl")])?);
    check(em.trim() == "EM 0.5000", &format!("eval em printed `{em}`"))?;

    let bench = fx.p("bench");
    let table = stdout(&ok_run(&["bench", "contrast", "--corpus", &corpus_s, "--clusters", &clusters, "--qa", &qa_s, "--out-dir", &bench])?);
    check(table.starts_with(" cutoff"), &format!("bench table `{table}`"))?;
    for arm in ["coarse", "fine"] {
        same_bytes_after_rerender(&fx.path("bench").join(format!("{arm}.tsv")))?;
    }
    Ok(fx)
}

/// Documented exit codes: 0 success, 2 partial query failures, 1 fatal.
pub fn exit_codes(fx: &Fixture) -> Result<(), String> {
    let missing = funnelrag(&["cluster", "--corpus", &fx.p("nope.jsonl"), "--out", &fx.p("x.jsonl")]);
    check(code(&missing) == 1 && stderr(&missing).starts_with("error:"), "missing input should exit 1")?;
    let usage = funnelrag(&["retrieve", "--bogus"]);
    check(code(&usage) == 1, "usage error should exit 1")?;
    check(code(&funnelrag(&["--help"])) == 0, "--help should exit 0")?;

    let listener = std::net::TcpListener::bind("127.0.0.1:0").map_err(|e| e.to_string())?;
    let dead = format!("http://{}", listener.local_addr().map_err(|e| e.to_string())?);
    drop(listener);
    let out = fx.p("partial.tsv");
    let o = funnelrag_env(
        &["post-rank", "--scorer", &dead, "--in", &fx.p("r2.tsv"), "--queries", &fx.p("data/qa.jsonl"), "--corpus", &fx.p("data/corpus.jsonl"), "--out", &out],
        &[("FUNNELRAG_SCORER_TIMEOUT_SECS", "2")],
    );
    check(code(&o) == 2, &format!("unreachable scorer should exit 2, got {}", code(&o)))?;
    check(stderr(&o).contains("queries failed"), "partial failure message")?;
    let kept = read_run(&out).map_err(|e| e.to_string())?;
    check(kept.stages() == ["retrieval", "pre-rank"], "partial run keeps earlier stages")?;

    let bad_env = funnelrag_env(&["retrieve", "--index", &fx.p("idx"), "--queries", &fx.p("data/qa.jsonl"), "--out", &out], &[("FUNNELRAG_TOP_CLUSTERS", "many")]);
    check(code(&bad_env) == 1, "bad env override should exit 1")?;
    Ok(())
}
