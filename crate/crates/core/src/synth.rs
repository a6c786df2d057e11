//! Seeded synthetic corpora with planted answers, for tests, examples and benchmarks.
//!
//! Documents are random pseudo-words (letters only) grouped into linked topics. Each query
//! gets a gold document holding a planted span `q{i}k0 .. q{i}k3 is <answer>` that sits
//! inside a single passage window. The question is `which q{i}k0 .. q{i}k3 <w1> <w2>` with
//! two random vocabulary words as distractors, so many clusters match but the gold
//! cluster, document and passage match best.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chunker::DEFAULT_PASSAGE_SIZE;
use crate::corpus::DocumentRecord;
use crate::error::{Error, Result};
use crate::eval::QaItem;

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const KEY_TERMS: usize = 4;

/// Where the planted span goes inside the gold document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// A random passage window.
    Anywhere,
    /// The window holding the document's middle token.
    Middle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub documents: usize,
    pub queries: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Documents per linked topic.
    pub topic_size: usize,
    pub links_per_doc: usize,
    pub vocabulary: usize,
    pub passage_size: usize,
    pub placement: Placement,
}

impl SynthConfig {
    /// 2,000 short documents and 50 queries with answers anywhere.
    pub fn funnel(seed: u64) -> Self {
        SynthConfig {
            seed,
            documents: 2000,
            queries: 50,
            min_tokens: 150,
            max_tokens: 300,
            topic_size: 20,
            links_per_doc: 3,
            vocabulary: 2000,
            passage_size: DEFAULT_PASSAGE_SIZE,
            placement: Placement::Anywhere,
        }
    }

    /// Long documents with the answer mid-document, past a 512-token window.
    pub fn contrast(seed: u64) -> Self {
        SynthConfig {
            documents: 300,
            queries: 30,
            min_tokens: 1000,
            max_tokens: 1400,
            topic_size: 6,
            links_per_doc: 2,
            placement: Placement::Middle,
            ..Self::funnel(seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plant {
    pub query_id: String,
    pub doc_id: String,
    /// Passage window index holding the span.
    pub passage: usize,
    /// Token offset of the span inside the document.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSet {
    pub records: Vec<DocumentRecord>,
    pub qa: Vec<QaItem>,
    pub plants: Vec<Plant>,
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.random_range(2..=3);
    let mut w = String::with_capacity(syllables * 2);
    for _ in 0..syllables {
        w.push(CONSONANTS[rng.random_range(0..CONSONANTS.len())] as char);
        w.push(VOWELS[rng.random_range(0..VOWELS.len())] as char);
    }
    w
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

pub fn generate(cfg: &SynthConfig) -> Result<PlantedSet> {
    let span_len = KEY_TERMS + 2;
    if cfg.documents == 0 || cfg.queries > cfg.documents {
        return Err(Error::InvalidArgument("need 1 <= queries <= documents".into()));
    }
    if cfg.min_tokens < span_len || cfg.min_tokens > cfg.max_tokens || cfg.passage_size < span_len {
        return Err(Error::InvalidArgument(format!(
            "document and passage sizes must be >= {span_len} tokens with min <= max"
        )));
    }
    if cfg.topic_size == 0 || cfg.vocabulary == 0 {
        return Err(Error::InvalidArgument("topic_size and vocabulary must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut vocab: Vec<String> = Vec::with_capacity(cfg.vocabulary);
    let mut seen = std::collections::HashSet::new();
    // Three-syllable words give 343,000 combinations, so this terminates quickly.
    while vocab.len() < cfg.vocabulary {
        let w = pseudo_word(&mut rng);
        if seen.insert(w.clone()) {
            vocab.push(w);
        }
    }

    let ids: Vec<String> = (0..cfg.documents).map(|i| format!("doc{i:05}")).collect();
    let mut bodies: Vec<Vec<String>> = (0..cfg.documents)
        .map(|_| {
            let n = rng.random_range(cfg.min_tokens..=cfg.max_tokens);
            (0..n).map(|_| vocab[rng.random_range(0..vocab.len())].clone()).collect()
        })
        .collect();

    let mut records: Vec<DocumentRecord> = Vec::with_capacity(cfg.documents);
    for i in 0..cfg.documents {
        let topic = i / cfg.topic_size;
        let lo = topic * cfg.topic_size;
        let hi = (lo + cfg.topic_size).min(cfg.documents);
        let mut links = Vec::new();
        if hi - lo > 1 {
            for _ in 0..cfg.links_per_doc {
                let j = rng.random_range(lo..hi);
                if j != i && !links.contains(&ids[j]) {
                    links.push(ids[j].clone());
                }
            }
        }
        if rng.random_bool(0.05) {
            links.push(ids[rng.random_range(0..cfg.documents)].clone());
        }
        records.push(DocumentRecord {
            id: ids[i].clone(),
            title: format!("{} {}", capitalize(&vocab[i % vocab.len()]), i),
            text: String::new(),
            links,
        });
    }

    let mut order: Vec<usize> = (0..cfg.documents).collect();
    order.shuffle(&mut rng);
    let mut qa = Vec::with_capacity(cfg.queries);
    let mut plants = Vec::with_capacity(cfg.queries);
    for (q, &d) in order.iter().take(cfg.queries).enumerate() {
        let query_id = format!("q{q:03}");
        let keys: Vec<String> = (0..KEY_TERMS).map(|k| format!("q{q}k{k}")).collect();
        let answer = format!("{}{q:03}", capitalize(&vocab[rng.random_range(0..vocab.len())]));

        let body = &mut bodies[d];
        let n = body.len();
        let p = cfg.passage_size;
        let window = match cfg.placement {
            Placement::Middle => (n / 2) / p,
            Placement::Anywhere => {
                // Windows with room for the whole span; the first one always qualifies.
                let fitting: Vec<usize> = (0..n.div_ceil(p))
                    .filter(|k| (n - k * p).min(p) >= span_len)
                    .collect();
                fitting[rng.random_range(0..fitting.len())]
            }
        };
        let start = window * p;
        let room = (n - start).min(p);
        let window = if room < span_len { window - 1 } else { window };
        let start = window * p;
        let room = (n - start).min(p);
        let offset = match cfg.placement {
            Placement::Middle => start + (room - span_len) / 2,
            Placement::Anywhere => start + rng.random_range(0..=room - span_len),
        };
        let span = keys.iter().cloned().chain(["is".to_string(), answer.clone()]);
        for (slot, tok) in body[offset..offset + span_len].iter_mut().zip(span) {
            *slot = tok;
        }

        qa.push(QaItem {
            query_id: query_id.clone(),
            question: format!(
                "which {} {} {}",
                keys.join(" "),
                vocab[rng.random_range(0..vocab.len())],
                vocab[rng.random_range(0..vocab.len())]
            ),
            answers: vec![answer],
        });
        plants.push(Plant {
            query_id,
            doc_id: ids[d].clone(),
            passage: window,
            offset,
        });
    }

    for (r, body) in records.iter_mut().zip(bodies) {
        r.text = body.join(" ");
    }
    Ok(PlantedSet { records, qa, plants })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text;

    #[test]
    fn deterministic_and_planted_once() {
        let cfg = SynthConfig {
            documents: 100,
            queries: 10,
            ..SynthConfig::funnel(3)
        };
        let a = generate(&cfg).unwrap();
        assert_eq!(a, generate(&cfg).unwrap());
        for (item, plant) in a.qa.iter().zip(&a.plants) {
            let holders: Vec<&str> = a
                .records
                .iter()
                .filter(|r| text::contains_answer(&text::normalize_for_recall(&r.text), &item.answers[0]))
                .map(|r| r.id.as_str())
                .collect();
            assert_eq!(holders, [plant.doc_id.as_str()]);
            let start = plant.passage * cfg.passage_size;
            assert!(plant.offset >= start && plant.offset + 6 <= start + cfg.passage_size);
        }
    }

    #[test]
    fn middle_placement_is_past_the_window() {
        let set = generate(&SynthConfig::contrast(1)).unwrap();
        assert!(set.plants.iter().all(|p| p.offset > 512));
    }
}
