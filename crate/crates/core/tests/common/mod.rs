//! Brute-force reference implementations and fixture builders shared by the integration
//! tests and the acceptance runner. The oracles never call into the library's scoring code.

#![allow(dead_code)]

pub mod cli;

use std::collections::{BTreeMap, HashMap};

use funnelrag::chunker::{Granularity, RetrievalUnit};
use funnelrag::corpus::DocumentRecord;
use funnelrag::rank::Scheme;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn words(n: usize) -> String {
    vec!["w"; n].join(" ")
}

pub fn doc(id: &str, tokens: usize, links: &[&str]) -> DocumentRecord {
    DocumentRecord {
        id: id.to_string(),
        title: format!("Title {id}"),
        text: words(tokens),
        links: links.iter().map(|s| s.to_string()).collect(),
    }
}

/// Random directed link lists over `n` nodes with edge probability `p` and random sizes.
pub fn random_graph(seed: u64, n: usize, p: f64) -> Vec<DocumentRecord> {
    let mut r = rng(seed);
    let ids: Vec<String> = (0..n).map(|i| format!("n{i:02}")).collect();
    (0..n)
        .map(|i| {
            let links = (0..n)
                .filter(|&j| j != i && r.random_bool(p))
                .map(|j| ids[j].clone())
                .collect();
            DocumentRecord {
                id: ids[i].clone(),
                title: format!("T{i}"),
                text: words(r.random_range(1..=120)),
                links,
            }
        })
        .collect()
}

/// Local clustering coefficients from a dense adjacency matrix and an exhaustive
/// scan over neighbour pairs.
pub fn lcc_oracle(records: &[DocumentRecord]) -> BTreeMap<String, f64> {
    let n = records.len();
    let pos: HashMap<&str, usize> = records.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    let mut adj = vec![vec![false; n]; n];
    for (i, r) in records.iter().enumerate() {
        for l in &r.links {
            if let Some(&j) = pos.get(l.as_str()) {
                if i != j {
                    adj[i][j] = true;
                    adj[j][i] = true;
                }
            }
        }
    }
    (0..n)
        .map(|v| {
            let nb: Vec<usize> = (0..n).filter(|&u| adj[v][u]).collect();
            let deg = nb.len();
            let value = if deg < 2 {
                0.0
            } else {
                let mut t = 0;
                for a in 0..deg {
                    for b in a + 1..deg {
                        if adj[nb[a]][nb[b]] {
                            t += 1;
                        }
                    }
                }
                2.0 * t as f64 / (deg * (deg - 1)) as f64
            };
            (records[v].id.clone(), value)
        })
        .collect()
}

/// Lowercased maximal alphanumeric runs, scanned character by character.
pub fn oracle_terms(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// BM25 score of every unit for `query`, evaluated term by term from raw counts.
pub fn bm25_oracle(units: &[(String, String)], query: &str, k1: f64, b: f64) -> Vec<(String, f64)> {
    let docs: Vec<Vec<String>> = units.iter().map(|(_, t)| oracle_terms(t)).collect();
    let n = docs.len() as f64;
    let avg = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    units
        .iter()
        .zip(&docs)
        .map(|((id, _), d)| {
            let mut s = 0.0;
            for q in oracle_terms(query) {
                let df = docs.iter().filter(|x| x.contains(&q)).count() as f64;
                let tf = d.iter().filter(|t| **t == q).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                let norm = if avg > 0.0 { d.len() as f64 / avg } else { 0.0 };
                s += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm));
            }
            (id.clone(), s)
        })
        .collect()
}

/// Positive scores ordered by score descending, then id ascending.
pub fn oracle_ranking(mut scored: Vec<(String, f64)>, top: usize) -> Vec<(String, f64)> {
    scored.retain(|(_, s)| *s > 0.0);
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(top);
    scored
}

pub type Nested = Vec<Vec<Vec<f64>>>;

pub fn random_nested(r: &mut ChaCha8Rng, ln: usize, lh: usize, lt: usize) -> Nested {
    (0..ln)
        .map(|_| (0..lh).map(|_| (0..lt).map(|_| r.random_range(0.0..1.0)).collect()).collect())
        .collect()
}

/// Top `lr` eligible tokens of one row by score, smaller index first on ties.
pub fn rep_oracle(row: &[f64], eligible: &[bool], lr: usize) -> Vec<usize> {
    let mut picked = Vec::new();
    let mut taken = vec![false; row.len()];
    for _ in 0..lr {
        let mut best: Option<usize> = None;
        for k in 0..row.len() {
            if !eligible[k] || taken[k] {
                continue;
            }
            if best.is_none_or(|b| row[k] > row[b]) {
                best = Some(k);
            }
        }
        match best {
            Some(k) => {
                taken[k] = true;
                picked.push(k);
            }
            None => break,
        }
    }
    picked
}

/// Nested-loop evaluation of the five aggregation schemes.
pub fn aggregate_oracle(t: &Nested, mask: &[bool], scheme: Scheme, lr: usize, include_query: bool) -> f64 {
    let ln = t.len();
    let lh = t[0].len();
    let lt = t[0][0].len();
    let eligible: Vec<bool> = (0..lt).map(|k| include_query || !mask[k]).collect();
    let mean_rep = |from: usize| {
        let (mut sum, mut n) = (0.0, 0.0);
        for layer in &t[from..] {
            for row in layer {
                for k in rep_oracle(row, &eligible, lr) {
                    sum += row[k];
                    n += 1.0;
                }
            }
        }
        sum / n
    };
    let mut sum = 0.0;
    let mut n = 0.0;
    match scheme {
        Scheme::MeanRep => return mean_rep(0),
        Scheme::MeanRepLast6 => return mean_rep(ln.saturating_sub(6)),
        Scheme::MaxLayer => {
            for j in 0..lh {
                for k in (0..lt).filter(|&k| eligible[k]) {
                    let mut m = f64::NEG_INFINITY;
                    for layer in t {
                        m = m.max(layer[j][k]);
                    }
                    sum += m;
                    n += 1.0;
                }
            }
        }
        Scheme::MaxHead => {
            for layer in t {
                for k in (0..lt).filter(|&k| eligible[k]) {
                    let mut m = f64::NEG_INFINITY;
                    for row in layer {
                        m = m.max(row[k]);
                    }
                    sum += m;
                    n += 1.0;
                }
            }
        }
        Scheme::MaxToken => {
            for layer in t {
                for row in layer {
                    let mut m = f64::NEG_INFINITY;
                    for k in (0..lt).filter(|&k| eligible[k]) {
                        m = m.max(row[k]);
                    }
                    sum += m;
                    n += 1.0;
                }
            }
        }
    }
    sum / n
}

/// Answer recall by direct substring scan: `ranked[q]` lists the texts of query `q`'s
/// units in rank order.
pub fn recall_oracle(ranked: &[Vec<String>], answers: &[Vec<String>], k: usize) -> f64 {
    let squash = |s: &str| s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ");
    let hits = ranked
        .iter()
        .zip(answers)
        .filter(|(texts, golds)| {
            texts
                .iter()
                .take(k)
                .any(|t| golds.iter().any(|g| squash(t).contains(&squash(g))))
        })
        .count();
    hits as f64 / ranked.len() as f64
}

/// Relative closeness used for the 1e-9 comparisons.
pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

pub struct HandTrace {
    pub name: &'static str,
    pub records: Vec<DocumentRecord>,
    pub max_size: usize,
    /// Expected clusters in output order: members in merge order, token count.
    pub expected: Vec<(Vec<String>, usize)>,
}

fn trace(name: &'static str, records: Vec<DocumentRecord>, max_size: usize, expected: &[(&[&str], usize)]) -> HandTrace {
    HandTrace {
        name,
        records,
        max_size,
        expected: expected
            .iter()
            .map(|(m, t)| (m.iter().map(|s| s.to_string()).collect(), *t))
            .collect(),
    }
}

/// Small clustering instances traced by hand.
pub fn hand_traces() -> Vec<HandTrace> {
    vec![
        trace("linked pair merges", vec![doc("A", 50, &["B"]), doc("B", 50, &["A"])], 4000, &[(&["A", "B"], 100)]),
        trace(
            "linked pair over budget",
            vec![doc("A", 3000, &["B"]), doc("B", 3000, &["A"])],
            4000,
            &[(&["A"], 3000), (&["B"], 3000)],
        ),
        // lcc: A = B = 1, C = 1/3, D = 0. A absorbs B then C (closeness ties, B first by id),
        // then C's visit pulls in D.
        trace(
            "triangle with tail",
            vec![doc("A", 10, &["B", "C"]), doc("B", 10, &["C"]), doc("C", 10, &["D"]), doc("D", 10, &[])],
            100,
            &[(&["A", "B", "C", "D"], 40)],
        ),
        // A takes B (20); C would exceed 25. At C, {A,B} (2/2) ties {D} (1/1) on closeness and
        // wins on overlap but does not fit; D does.
        trace(
            "budget with overlap tie-break",
            vec![doc("A", 10, &["B", "C"]), doc("B", 10, &["C"]), doc("C", 10, &["D"]), doc("D", 5, &[])],
            25,
            &[(&["A", "B"], 20), (&["C", "D"], 15)],
        ),
        // Triangle A,B,E forms first from B. X links A and C: C (1/1) outranks {B,A,E} (1/3).
        trace(
            "closeness prefers small cluster",
            vec![
                doc("A", 10, &["B", "E"]),
                doc("B", 10, &["E"]),
                doc("C", 10, &[]),
                doc("E", 10, &[]),
                doc("X", 10, &["A", "C"]),
            ],
            30,
            &[(&["B", "A", "E"], 30), (&["X", "C"], 20)],
        ),
    ]
}

/// Random units over a random vocabulary with mixed case and punctuation.
pub fn random_units(seed: u64) -> Vec<(String, String)> {
    let mut r = rng(seed);
    let vocab: Vec<String> = (0..r.random_range(5..=200)).map(|i| format!("t{i}")).collect();
    let seps = [" ", " ", " ", ", ", ". ", "-", "  "];
    (0..r.random_range(1..=50))
        .map(|u| {
            let len = r.random_range(0..40);
            let mut text = String::new();
            for _ in 0..len {
                let w = &vocab[r.random_range(0..vocab.len())];
                if r.random_bool(0.2) {
                    text.push_str(&w.to_uppercase());
                } else {
                    text.push_str(w);
                }
                text.push_str(seps[r.random_range(0..seps.len())]);
            }
            (format!("u{u:03}"), text)
        })
        .collect()
}

/// Queries drawn from the units' own first tokens.
pub fn random_queries(units: &[(String, String)], seed: u64, n: usize) -> Vec<String> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            (0..r.random_range(1..5))
                .map(|_| {
                    units[r.random_range(0..units.len())]
                        .1
                        .split_whitespace()
                        .next()
                        .unwrap_or("zz")
                        .to_string()
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

pub fn as_units(units: &[(String, String)]) -> Vec<RetrievalUnit> {
    units
        .iter()
        .map(|(id, text)| RetrievalUnit {
            unit_id: id.clone(),
            granularity: Granularity::Cluster,
            parent_id: None,
            doc_id: id.clone(),
            title: id.clone(),
            text: text.clone(),
            token_count: text.split_whitespace().count(),
        })
        .collect()
}
