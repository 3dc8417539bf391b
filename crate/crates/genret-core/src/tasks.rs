//! Training examples, synthetic queries and mixture sampling.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::hash::Hasher;

use fnv::FnvHasher;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{daq_chunks, firstp, Corpus, Document};
use crate::docid::DocIdScheme;
use crate::error::{Error, Result};
use crate::model::{target_tokens, Seq2Seq};
use crate::seed::{self, Rng};
use crate::tokenizer::Tokenizer;

pub const INDEXING_TAG: &str = "indexing:";
pub const QUERY_TAG: &str = "generation:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    FirstP,
    DaQ,
    #[serde(rename = "labeled")]
    LabeledQuery,
    D2Q,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::FirstP => "firstp",
            TaskKind::DaQ => "daq",
            TaskKind::LabeledQuery => "labeled",
            TaskKind::D2Q => "d2q",
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            TaskKind::FirstP | TaskKind::DaQ => INDEXING_TAG,
            TaskKind::LabeledQuery | TaskKind::D2Q => QUERY_TAG,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub input_tokens: Vec<u32>,
    /// Identifier tokens in scheme space.
    pub target_tokens: Vec<u32>,
    pub task: TaskKind,
    pub doc_id: String,
}

impl TrainingExample {
    pub fn to_seq2seq(&self, scheme: &DocIdScheme) -> Seq2Seq {
        Seq2Seq { input: self.input_tokens.clone(), target: target_tokens(scheme.kind(), &self.target_tokens) }
    }
}

/// Tokenizes `tag text`, cut to `max_len` tokens.
pub fn encode_tagged(tokenizer: &Tokenizer, tag: &str, text: &str, max_len: usize) -> Vec<u32> {
    let mut ids = tokenizer.encode(&format!("{tag} {text}"));
    ids.truncate(max_len);
    ids
}

/// Model input for a retrieval query.
pub fn encode_query(tokenizer: &Tokenizer, text: &str, max_len: usize) -> Vec<u32> {
    encode_tagged(tokenizer, QUERY_TAG, &crate::corpus::normalize(text), max_len)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexingParams {
    /// Leading tokens kept for FirstP.
    pub firstp_len: usize,
    pub daq_chunks: usize,
    pub daq_len: usize,
    pub max_input_len: usize,
    pub seed: u64,
}

impl Default for IndexingParams {
    fn default() -> Self {
        IndexingParams { firstp_len: 64, daq_chunks: 10, daq_len: 64, max_input_len: 128, seed: 0 }
    }
}

fn target_for<'s>(scheme: &'s DocIdScheme, doc_id: &str) -> Result<&'s [u32]> {
    scheme.encode(doc_id).ok_or_else(|| Error::UnknownDocument(doc_id.to_string()))
}

pub fn make_indexing_examples(
    corpus: &Corpus,
    scheme: &DocIdScheme,
    mode: TaskKind,
    params: &IndexingParams,
) -> Result<Vec<TrainingExample>> {
    let tok = &corpus.tokenizer;
    let mut out = Vec::new();
    for doc in corpus.documents.values() {
        let target = target_for(scheme, &doc.doc_id)?;
        let spans = match mode {
            TaskKind::FirstP => alloc::vec![firstp(doc, params.firstp_len, tok)],
            TaskKind::DaQ => {
                daq_chunks(doc, params.daq_chunks, params.daq_len, seed::derive(params.seed, &doc.doc_id), tok)
            }
            other => return Err(Error::InvalidArgument(format!("{} is not an indexing task", other.as_str()))),
        };
        for s in spans {
            out.push(TrainingExample {
                input_tokens: encode_tagged(tok, INDEXING_TAG, &s, params.max_input_len),
                target_tokens: target.to_vec(),
                task: mode,
                doc_id: doc.doc_id.clone(),
            });
        }
    }
    Ok(out)
}

/// One example per (train query, relevant doc) pair.
pub fn make_labeled_examples(corpus: &Corpus, scheme: &DocIdScheme, max_input_len: usize) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::new();
    for (q, d) in corpus.train_qrels.iter() {
        let query = &corpus.train_queries[q];
        out.push(TrainingExample {
            input_tokens: encode_tagged(&corpus.tokenizer, QUERY_TAG, &query.text, max_input_len),
            target_tokens: target_for(scheme, d)?.to_vec(),
            task: TaskKind::LabeledQuery,
            doc_id: d.to_string(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryGenConfig {
    pub num_queries: usize,
    pub top_k: usize,
    pub temperature: f64,
    /// Queries with fewer words are dropped; 0 keeps everything.
    pub min_words: usize,
    pub seed: u64,
}

impl Default for QueryGenConfig {
    fn default() -> Self {
        QueryGenConfig { num_queries: 40, top_k: 10, temperature: 1.0, min_words: 0, seed: 0 }
    }
}

impl QueryGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_queries == 0 || self.top_k == 0 || !(self.temperature > 0.0) {
            return Err(Error::InvalidConfig("num_queries, top_k and temperature must be positive".into()));
        }
        Ok(())
    }
}

/// A document-to-query generator. Implementations must be deterministic
/// given the rng state.
pub trait QueryGenerator {
    fn name(&self) -> &str;
    fn generate(&self, doc: &Document, top_k: usize, temperature: f64, rng: &mut Rng) -> core::result::Result<String, String>;
}

/// Extracts a 3-8 word window from the document, sometimes dropping one
/// word. Candidate windows are shortlisted (`top_k`) and sampled with a
/// softmax over a lexical-density score.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExtractiveGenerator;

impl QueryGenerator for ExtractiveGenerator {
    fn name(&self) -> &str {
        "builtin-extractive"
    }

    fn generate(&self, doc: &Document, top_k: usize, temperature: f64, rng: &mut Rng) -> core::result::Result<String, String> {
        let words: Vec<&str> = doc.text.split_whitespace().collect();
        if words.is_empty() {
            return Err(format!("document {} is empty", doc.doc_id));
        }
        if words.len() == 1 {
            return Ok(words[0].to_string());
        }
        let mut cands: Vec<(usize, usize, f64)> = (0..top_k.max(1))
            .map(|_| {
                let len = rng.random_range(3..=8usize).min(words.len());
                let start = rng.random_range(0..=words.len() - len);
                let w = &words[start..start + len];
                let mut distinct: Vec<&str> = w.to_vec();
                distinct.sort_unstable();
                distinct.dedup();
                let score = distinct.len() as f64 / len as f64 + w.iter().map(|s| s.len() as f64).sum::<f64>() / (8.0 * len as f64);
                (start, len, score)
            })
            .collect();
        cands.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        let max = cands[0].2;
        let weights: Vec<f64> = cands.iter().map(|c| num_traits::Float::exp((c.2 - max) / temperature)).collect();
        let pick = WeightedIndex::new(&weights).map_err(|e| format!("{e}"))?.sample(rng);
        let (start, len, _) = cands[pick];
        let mut q: Vec<&str> = words[start..start + len].to_vec();
        if q.len() > 3 && rng.random_bool(0.5) {
            q.remove(rng.random_range(0..q.len()));
        }
        Ok(q.join(" "))
    }
}

/// One extractive query with the default shortlist and temperature.
pub fn builtin_extractive_generator(doc: &Document, rng: &mut Rng) -> String {
    ExtractiveGenerator.generate(doc, 10, 1.0, rng).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticQuerySet {
    pub generator: String,
    pub config: Option<QueryGenConfig>,
    pub queries: BTreeMap<String, Vec<String>>,
    /// Docs skipped because the generator failed, or other notes.
    pub warnings: Vec<String>,
}

impl SyntheticQuerySet {
    /// Builds a set from external `(doc_id, query)` pairs; every doc id must
    /// exist in the corpus.
    pub fn from_pairs<I>(corpus: &Corpus, source: &str, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut queries: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (d, q) in pairs {
            if corpus.doc(&d).is_none() {
                return Err(Error::UnknownDocument(d));
            }
            queries.entry(d).or_default().push(crate::corpus::normalize(&q));
        }
        Ok(SyntheticQuerySet { generator: source.to_string(), config: None, queries, warnings: Vec::new() })
    }

    pub fn total(&self) -> usize {
        self.queries.values().map(Vec::len).sum()
    }

    /// Keeps the first `n` queries of each document.
    pub fn truncated(&self, n: usize) -> Self {
        let mut s = self.clone();
        s.queries.values_mut().for_each(|v| v.truncate(n));
        s
    }
}

pub fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Runs `generator` `num_queries` times per document with a per-document
/// seed, then applies the `min_words` filter.
pub fn generate_queries(corpus: &Corpus, generator: &dyn QueryGenerator, cfg: &QueryGenConfig) -> Result<SyntheticQuerySet> {
    cfg.validate()?;
    let mut queries = BTreeMap::new();
    let mut warnings = Vec::new();
    'docs: for doc in corpus.documents.values() {
        let mut rng = seed::rng(seed::derive(cfg.seed, &doc.doc_id));
        let mut qs = Vec::with_capacity(cfg.num_queries);
        for _ in 0..cfg.num_queries {
            match generator.generate(doc, cfg.top_k, cfg.temperature, &mut rng) {
                Ok(q) => {
                    let q = crate::corpus::normalize(&q);
                    if cfg.min_words == 0 || word_count(&q) >= cfg.min_words {
                        qs.push(q);
                    }
                }
                Err(e) => {
                    warnings.push(format!("skipped {}: {e}", doc.doc_id));
                    continue 'docs;
                }
            }
        }
        queries.insert(doc.doc_id.clone(), qs);
    }
    Ok(SyntheticQuerySet { generator: generator.name().to_string(), config: Some(*cfg), queries, warnings })
}

pub fn make_d2q_examples(
    qset: &SyntheticQuerySet,
    scheme: &DocIdScheme,
    tokenizer: &Tokenizer,
    max_input_len: usize,
) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::with_capacity(qset.total());
    for (d, qs) in &qset.queries {
        let target = target_for(scheme, d)?;
        for q in qs {
            out.push(TrainingExample {
                input_tokens: encode_tagged(tokenizer, QUERY_TAG, q, max_input_len),
                target_tokens: target.to_vec(),
                task: TaskKind::D2Q,
                doc_id: d.clone(),
            });
        }
    }
    Ok(out)
}

/// Stable 64-bit hex digest of a query string, as used in score files.
pub fn query_hash(text: &str) -> String {
    let mut h = FnvHasher::default();
    h.write(text.as_bytes());
    format!("{:016x}", h.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureEntry {
    pub task: TaskKind,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub entries: Vec<MixtureEntry>,
}

impl MixtureSpec {
    /// Equal rates across `tasks`.
    pub fn equal(tasks: &[TaskKind]) -> Self {
        MixtureSpec { entries: tasks.iter().map(|&task| MixtureEntry { task, rate: 1.0 }).collect() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.iter().any(|e| !(e.rate >= 0.0) || !e.rate.is_finite()) {
            return Err(Error::InvalidConfig("mixture rates must be finite and nonnegative".into()));
        }
        if !self.entries.iter().any(|e| e.rate > 0.0) {
            return Err(Error::EmptyMixture);
        }
        Ok(())
    }
}

/// Endless seeded draws: pick a source by rate, then an example uniformly.
pub struct MixtureSampler<'a> {
    sources: Vec<&'a [TrainingExample]>,
    dist: WeightedIndex<f64>,
    rng: Rng,
}

/// Pairs each spec entry with the examples of its task. Entries whose source
/// is empty drop out; if nothing remains, `EmptyMixture`.
pub fn sample_mixture<'a>(
    spec: &MixtureSpec,
    sources: &'a BTreeMap<TaskKind, Vec<TrainingExample>>,
    seed: u64,
) -> Result<MixtureSampler<'a>> {
    spec.validate()?;
    let mut picked = Vec::new();
    let mut weights = Vec::new();
    for e in &spec.entries {
        if let Some(src) = sources.get(&e.task).filter(|s| !s.is_empty()) {
            if e.rate > 0.0 {
                picked.push(src.as_slice());
                weights.push(e.rate);
            }
        }
    }
    if picked.is_empty() {
        return Err(Error::EmptyMixture);
    }
    let dist = WeightedIndex::new(&weights).map_err(|_| Error::EmptyMixture)?;
    Ok(MixtureSampler { sources: picked, dist, rng: seed::rng(seed) })
}

impl<'a> MixtureSampler<'a> {
    pub fn next_batch(&mut self, n: usize) -> Vec<&'a TrainingExample> {
        (0..n).map(|_| self.draw()).collect()
    }

    fn draw(&mut self) -> &'a TrainingExample {
        let s = self.sources[self.dist.sample(&mut self.rng)];
        &s[self.rng.random_range(0..s.len())]
    }
}

impl<'a> Iterator for MixtureSampler<'a> {
    type Item = &'a TrainingExample;

    fn next(&mut self) -> Option<Self::Item> {
        Some(self.draw())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ManifestSource, RawCorpus, Split};
    use crate::docid::{assign_naive_ids, build_trie};
    use alloc::vec;

    fn corpus() -> Corpus {
        let docs = vec![
            ("d1".to_string(), "the quick brown fox jumps over the lazy dog near the river bank".to_string()),
            ("d2".to_string(), "capital france paris".to_string()),
            ("d3".to_string(), "solo".to_string()),
        ];
        let queries = vec![
            ("q1".to_string(), "fox".to_string(), Split::Train),
            ("q2".to_string(), "paris".to_string(), Split::Dev),
        ];
        let qrels = vec![("q1".to_string(), "d1".to_string()), ("q1".to_string(), "d2".to_string()), ("q2".to_string(), "d2".to_string())];
        Corpus::build(RawCorpus { docs, queries, qrels }, 300, ManifestSource::default()).unwrap()
    }

    #[test]
    fn daq_gives_ten_per_doc() {
        let c = corpus();
        let s = assign_naive_ids(&c).unwrap();
        let ex = make_indexing_examples(&c, &s, TaskKind::DaQ, &IndexingParams::default()).unwrap();
        assert_eq!(ex.len(), 30);
        let trie = build_trie(&s).unwrap();
        for e in &ex {
            assert_eq!(trie.lookup(&e.target_tokens), Some(e.doc_id.as_str()));
            assert_eq!(&e.input_tokens[..3], &c.tokenizer.encode(INDEXING_TAG)[..3]);
        }
    }

    #[test]
    fn labeled_one_per_pair() {
        let c = corpus();
        let s = assign_naive_ids(&c).unwrap();
        let ex = make_labeled_examples(&c, &s, 128).unwrap();
        assert_eq!(ex.len(), c.train_qrels.len());
        assert_eq!(ex.len(), 2);
    }

    #[test]
    fn extractive_queries_come_from_doc() {
        let c = corpus();
        let mut rng = seed::rng(1);
        let d1 = c.doc("d1").unwrap();
        for _ in 0..50 {
            let q = builtin_extractive_generator(d1, &mut rng);
            let n = word_count(&q);
            assert!((2..=8).contains(&n), "{q}");
            assert!(q.split_whitespace().all(|w| d1.text.split_whitespace().any(|x| x == w)));
        }
        assert_eq!(builtin_extractive_generator(c.doc("d3").unwrap(), &mut rng), "solo");
    }

    #[test]
    fn min_words_filter() {
        let c = corpus();
        let cfg = QueryGenConfig { min_words: 4, num_queries: 20, ..Default::default() };
        let qs = generate_queries(&c, &ExtractiveGenerator, &cfg).unwrap();
        assert!(qs.queries["d2"].is_empty(), "a three-word doc never yields four words");
        assert!(qs.queries.values().flatten().all(|q| word_count(q) >= 4));
        assert_eq!(qs, generate_queries(&c, &ExtractiveGenerator, &cfg).unwrap());
    }

    #[test]
    fn mixture_rejects_empty() {
        let sources = BTreeMap::new();
        assert!(sample_mixture(&MixtureSpec::equal(&[TaskKind::D2Q]), &sources, 0).is_err());
        let spec = MixtureSpec { entries: vec![MixtureEntry { task: TaskKind::D2Q, rate: 0.0 }] };
        assert_eq!(spec.validate(), Err(Error::EmptyMixture));
    }
}
