//! Synthetic corpora for desk-scale experiments.
//!
//! Each document mixes a handful of private pseudo-words with words from a
//! topic pool and a common pool. Labeled train queries cover a fraction of
//! the documents; dev queries are shuffled bags of distinct document words.

use std::collections::BTreeSet;

use genret_core::corpus::{RawCorpus, Split};
use genret_core::seed;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_docs: usize,
    pub doc_words: usize,
    pub private_words: usize,
    /// Syllables per private word.
    pub syllables: usize,
    pub num_topics: usize,
    pub topic_words: usize,
    pub common_words: usize,
    /// Probability that a filler position takes a private word.
    pub private_rate: f64,
    /// Fraction of documents with labeled train queries.
    pub labeled_fraction: f64,
    pub labeled_per_doc: usize,
    pub dev_queries: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_docs: 1000,
            doc_words: 24,
            private_words: 6,
            syllables: 3,
            num_topics: 20,
            topic_words: 30,
            common_words: 40,
            private_rate: 0.8,
            labeled_fraction: 0.1,
            labeled_per_doc: 2,
            dev_queries: 200,
            seed: 0,
        }
    }
}

fn pseudo_word(rng: &mut seed::Rng, syllables: usize) -> String {
    let mut w = String::with_capacity(2 * syllables);
    for _ in 0..syllables {
        w.push(*CONSONANTS.choose(rng).unwrap() as char);
        w.push(*VOWELS.choose(rng).unwrap() as char);
    }
    w
}

fn fresh_words(rng: &mut seed::Rng, n: usize, syllables: usize, taken: &mut BTreeSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = pseudo_word(rng, syllables);
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// A bag of 4-6 distinct words of `text`, shuffled.
pub fn paraphrase(text: &str, rng: &mut seed::Rng) -> String {
    let mut distinct: Vec<&str> = text.split_whitespace().collect::<BTreeSet<_>>().into_iter().collect();
    distinct.shuffle(rng);
    let n = rng.random_range(4..=6usize).min(distinct.len());
    distinct.truncate(n);
    distinct.join(" ")
}

pub fn synth_corpus(cfg: &SynthConfig) -> RawCorpus {
    let mut rng = seed::rng(seed::derive(cfg.seed, "synth"));
    let mut taken = BTreeSet::new();
    // Pools use shorter words than private vocabularies, so they never collide
    // unless syllables == 2.
    let common = fresh_words(&mut rng, cfg.common_words, 2, &mut taken);
    let topics: Vec<Vec<String>> = (0..cfg.num_topics.max(1)).map(|_| fresh_words(&mut rng, cfg.topic_words, 2, &mut taken)).collect();

    let mut docs = Vec::with_capacity(cfg.num_docs);
    for i in 0..cfg.num_docs {
        let private = fresh_words(&mut rng, cfg.private_words.max(1), cfg.syllables.max(1), &mut taken);
        let topic = &topics[rng.random_range(0..topics.len())];
        let mut words: Vec<&str> = private.iter().map(String::as_str).collect();
        while words.len() < cfg.doc_words {
            let w = if rng.random_bool(cfg.private_rate) {
                private.choose(&mut rng).unwrap()
            } else if rng.random_bool(0.6) || common.is_empty() {
                topic.choose(&mut rng).unwrap()
            } else {
                common.choose(&mut rng).unwrap()
            };
            words.push(w);
        }
        words.shuffle(&mut rng);
        docs.push((i.to_string(), words.join(" ")));
    }

    let mut queries = Vec::new();
    let mut qrels = Vec::new();
    let mut order: Vec<usize> = (0..cfg.num_docs).collect();
    order.shuffle(&mut rng);
    let labeled = ((cfg.num_docs as f64) * cfg.labeled_fraction).round() as usize;
    let mut labeled_docs: Vec<usize> = order[..labeled.min(cfg.num_docs)].to_vec();
    labeled_docs.sort_unstable();
    for &d in &labeled_docs {
        for j in 0..cfg.labeled_per_doc {
            let qid = format!("t{d}_{j}");
            queries.push((qid.clone(), paraphrase(&docs[d].1, &mut rng), Split::Train));
            qrels.push((qid, docs[d].0.clone()));
        }
    }
    for j in 0..cfg.dev_queries {
        if cfg.num_docs == 0 {
            break;
        }
        let d = rng.random_range(0..cfg.num_docs);
        let qid = format!("v{j}");
        queries.push((qid.clone(), paraphrase(&docs[d].1, &mut rng), Split::Dev));
        qrels.push((qid, docs[d].0.clone()));
    }
    RawCorpus { docs, queries, qrels }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let cfg = SynthConfig { num_docs: 50, dev_queries: 10, ..SynthConfig::default() };
        let a = synth_corpus(&cfg);
        assert_eq!(a, synth_corpus(&cfg));
        assert_eq!(a.docs.len(), 50);
        assert!(a.docs.iter().all(|(_, t)| t.split_whitespace().count() == 24));
        assert_eq!(a.queries.iter().filter(|q| q.2 == Split::Train).count(), 10);
        assert_eq!(a.queries.iter().filter(|q| q.2 == Split::Dev).count(), 10);
    }

    #[test]
    fn paraphrase_words_come_from_doc() {
        let raw = synth_corpus(&SynthConfig { num_docs: 5, ..SynthConfig::default() });
        let mut rng = seed::rng(3);
        for (_, text) in &raw.docs {
            let p = paraphrase(text, &mut rng);
            let n = p.split_whitespace().count();
            assert!((4..=6).contains(&n));
            assert!(p.split_whitespace().all(|w| text.split_whitespace().any(|t| t == w)));
        }
    }
}
