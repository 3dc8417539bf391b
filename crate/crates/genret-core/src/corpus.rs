//! Documents, queries, relevance judgments and corpus subsetting.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::tokenizer::Tokenizer;

/// Lowercases and collapses runs of whitespace.
pub fn normalize(text: &str) -> String {
    let lower = text.to_lowercase();
    let mut out = String::with_capacity(lower.len());
    for w in lower.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(w);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub token_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub text: String,
    pub split: Split,
}

/// Set of (query_id, doc_id) relevance pairs. Repeated pairs collapse.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qrels {
    entries: BTreeSet<(String, String)>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>) {
        self.entries.insert((query_id.into(), doc_id.into()));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(q, d)| (q.as_str(), d.as_str()))
    }

    pub fn contains(&self, query_id: &str, doc_id: &str) -> bool {
        self.entries.contains(&(query_id.to_string(), doc_id.to_string()))
    }

    /// Relevant doc ids for `query_id`, in doc id order.
    pub fn relevant(&self, query_id: &str) -> Vec<&str> {
        self.entries
            .range((query_id.to_string(), String::new())..)
            .take_while(|(q, _)| q == query_id)
            .map(|(_, d)| d.as_str())
            .collect()
    }

    pub fn query_ids(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|(q, _)| q.as_str()).collect()
    }

    pub fn doc_ids(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|(_, d)| d.as_str()).collect()
    }
}

impl<Q: Into<String>, D: Into<String>> FromIterator<(Q, D)> for Qrels {
    fn from_iter<T: IntoIterator<Item = (Q, D)>>(iter: T) -> Self {
        let mut q = Qrels::new();
        for (a, b) in iter {
            q.insert(a, b);
        }
        q
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSource {
    pub docs: String,
    pub queries: String,
    pub qrels: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestCounts {
    pub documents: usize,
    pub train_queries: usize,
    pub dev_queries: usize,
    pub train_qrels: usize,
    pub dev_qrels: usize,
    pub relevant_documents: usize,
    pub random_fill: usize,
}

/// Provenance of a corpus: where it came from and how it was subset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub source: ManifestSource,
    pub seed: Option<u64>,
    pub target_size: Option<usize>,
    /// How the random fill pool was formed, when the corpus is a subset.
    pub fill_pool: Option<String>,
    pub tokenizer_vocab_size: usize,
    pub counts: ManifestCounts,
}

/// Raw, un-normalized records as read from disk.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawCorpus {
    pub docs: Vec<(String, String)>,
    pub queries: Vec<(String, String, Split)>,
    pub qrels: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: BTreeMap<String, Document>,
    pub train_queries: BTreeMap<String, Query>,
    pub dev_queries: BTreeMap<String, Query>,
    pub train_qrels: Qrels,
    pub dev_qrels: Qrels,
    pub manifest: Manifest,
    pub tokenizer: Tokenizer,
}

impl Corpus {
    /// Normalizes text, learns the tokenizer on the documents, and validates
    /// ids. Qrels are split by the split of the query they reference.
    pub fn build(raw: RawCorpus, vocab_size: usize, source: ManifestSource) -> Result<Corpus> {
        Self::assemble(raw, None, vocab_size, source)
    }

    /// Like [`Corpus::build`] but reuses an existing tokenizer.
    pub fn with_tokenizer(raw: RawCorpus, tokenizer: Tokenizer, source: ManifestSource) -> Result<Corpus> {
        let v = tokenizer.vocab_size();
        Self::assemble(raw, Some(tokenizer), v, source)
    }

    fn assemble(raw: RawCorpus, tokenizer: Option<Tokenizer>, vocab_size: usize, source: ManifestSource) -> Result<Corpus> {
        let mut documents = BTreeMap::new();
        for (id, text) in raw.docs {
            if documents.contains_key(&id) {
                return Err(Error::DuplicateDocument(id));
            }
            let text = normalize(&text);
            documents.insert(id.clone(), Document { doc_id: id, text, token_count: 0 });
        }
        let tokenizer =
            tokenizer.unwrap_or_else(|| Tokenizer::train(documents.values().map(|d| d.text.as_str()), vocab_size));
        for d in documents.values_mut() {
            d.token_count = tokenizer.count(&d.text);
        }

        let mut train_queries = BTreeMap::new();
        let mut dev_queries = BTreeMap::new();
        for (id, text, split) in raw.queries {
            let map = match split {
                Split::Train => &mut train_queries,
                Split::Dev => &mut dev_queries,
            };
            if map.contains_key(&id) {
                return Err(Error::DuplicateQuery(id, split.as_str()));
            }
            map.insert(id.clone(), Query { query_id: id, text: normalize(&text), split });
        }

        let mut train_qrels = Qrels::new();
        let mut dev_qrels = Qrels::new();
        let mut dangling = BTreeSet::new();
        for (q, d) in raw.qrels {
            let mut placed = false;
            if !documents.contains_key(&d) {
                dangling.insert(alloc::format!("doc:{d}"));
                continue;
            }
            if train_queries.contains_key(&q) {
                train_qrels.insert(q.clone(), d.clone());
                placed = true;
            }
            if dev_queries.contains_key(&q) {
                dev_qrels.insert(q.clone(), d.clone());
                placed = true;
            }
            if !placed {
                dangling.insert(alloc::format!("query:{q}"));
            }
        }
        if !dangling.is_empty() {
            return Err(Error::DanglingQrels(dangling.into_iter().collect()));
        }

        let mut corpus = Corpus {
            documents,
            train_queries,
            dev_queries,
            train_qrels,
            dev_qrels,
            manifest: Manifest { source, tokenizer_vocab_size: vocab_size, ..Manifest::default() },
            tokenizer,
        };
        corpus.refresh_counts();
        Ok(corpus)
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn doc(&self, doc_id: &str) -> Option<&Document> {
        self.documents.get(doc_id)
    }

    pub fn queries(&self, split: Split) -> &BTreeMap<String, Query> {
        match split {
            Split::Train => &self.train_queries,
            Split::Dev => &self.dev_queries,
        }
    }

    pub fn qrels(&self, split: Split) -> &Qrels {
        match split {
            Split::Train => &self.train_qrels,
            Split::Dev => &self.dev_qrels,
        }
    }

    /// Documents relevant to any train or dev query.
    pub fn relevant_documents(&self) -> BTreeSet<&str> {
        let mut s = self.train_qrels.doc_ids();
        s.extend(self.dev_qrels.doc_ids());
        s
    }

    fn refresh_counts(&mut self) {
        let relevant = self.relevant_documents().len();
        let c = &mut self.manifest.counts;
        c.documents = self.documents.len();
        c.train_queries = self.train_queries.len();
        c.dev_queries = self.dev_queries.len();
        c.train_qrels = self.train_qrels.len();
        c.dev_qrels = self.dev_qrels.len();
        c.relevant_documents = relevant;
    }
}

pub const FILL_POOL_POLICY: &str = "unlabeled documents not already included, sampled uniformly without replacement";

/// Keeps every document relevant to a train or dev query, then fills up to
/// `target_size` with a seeded uniform sample of the remaining documents.
pub fn subset_corpus(full: &Corpus, target_size: usize, seed: u64) -> Result<Corpus> {
    if target_size == 0 {
        return Err(Error::InvalidArgument("target_size must be positive".into()));
    }
    let relevant = full.relevant_documents();
    if target_size < relevant.len() {
        return Err(Error::SubsetTooSmall { requested: target_size, minimum: relevant.len() });
    }
    let pool: Vec<&str> = full
        .documents
        .keys()
        .map(String::as_str)
        .filter(|id| !relevant.contains(id))
        .collect();
    let fill = (target_size - relevant.len()).min(pool.len());
    let mut rng = seed::rng(seed);
    let mut picked: Vec<usize> = index::sample(&mut rng, pool.len(), fill).into_vec();
    picked.sort_unstable();

    let mut documents = BTreeMap::new();
    for id in relevant.iter().copied().chain(picked.iter().map(|&i| pool[i])) {
        documents.insert(id.to_string(), full.documents[id].clone());
    }
    let mut out = Corpus {
        documents,
        train_queries: full.train_queries.clone(),
        dev_queries: full.dev_queries.clone(),
        train_qrels: full.train_qrels.clone(),
        dev_qrels: full.dev_qrels.clone(),
        manifest: full.manifest.clone(),
        tokenizer: full.tokenizer.clone(),
    };
    out.manifest.seed = Some(seed);
    out.manifest.target_size = Some(target_size);
    out.manifest.fill_pool = Some(FILL_POOL_POLICY.to_string());
    out.refresh_counts();
    out.manifest.counts.random_fill = fill;
    Ok(out)
}

/// Fraction of documents with at least one train-qrels entry.
pub fn coverage_stats(corpus: &Corpus) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let covered = corpus
        .train_qrels
        .doc_ids()
        .into_iter()
        .filter(|d| corpus.documents.contains_key(*d))
        .count();
    Ok(covered as f64 / corpus.len() as f64)
}

/// First `n` tokens of a document, re-joined as text.
pub fn firstp(doc: &Document, n: usize, tokenizer: &Tokenizer) -> String {
    let stream = tokenizer.encode_stream(&doc.text);
    let end = n.min(stream.len());
    tokenizer.decode_span(&stream, 0, end)
}

/// `num_chunks` windows of `chunk_len` consecutive tokens at seeded offsets
/// (drawn with replacement). Short documents yield whole-document copies.
pub fn daq_chunks(
    doc: &Document,
    num_chunks: usize,
    chunk_len: usize,
    seed: u64,
    tokenizer: &Tokenizer,
) -> Vec<String> {
    let stream = tokenizer.encode_stream(&doc.text);
    if stream.len() <= chunk_len {
        let whole = tokenizer.decode_span(&stream, 0, stream.len());
        return alloc::vec![whole; num_chunks];
    }
    let mut rng = seed::rng(seed);
    let max_start = stream.len() - chunk_len;
    (0..num_chunks)
        .map(|_| {
            let s = rng.random_range(0..=max_start);
            tokenizer.decode_span(&stream, s, s + chunk_len)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    fn raw(docs: &[(&str, &str)], queries: &[(&str, &str, Split)], qrels: &[(&str, &str)]) -> RawCorpus {
        RawCorpus {
            docs: docs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
            queries: queries.iter().map(|(a, b, s)| (a.to_string(), b.to_string(), *s)).collect(),
            qrels: qrels.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        }
    }

    fn synthetic(n: usize, relevant: usize) -> Corpus {
        let docs: Vec<(String, String)> =
            (0..n).map(|i| (format!("d{i:03}"), format!("Doc {i} about topic {}", i % 7))).collect();
        let queries: Vec<(String, String, Split)> = (0..relevant)
            .map(|i| (format!("q{i}"), format!("topic {i}"), if i % 2 == 0 { Split::Train } else { Split::Dev }))
            .collect();
        let qrels: Vec<(String, String)> = (0..relevant).map(|i| (format!("q{i}"), format!("d{:03}", i * 3))).collect();
        Corpus::build(RawCorpus { docs, queries, qrels }, 300, ManifestSource::default()).unwrap()
    }

    #[test]
    fn three_docs_no_qrels() {
        let c = Corpus::build(raw(&[("1", "a"), ("2", "b"), ("3", "c")], &[], &[]), 300, Default::default()).unwrap();
        assert_eq!(c.len(), 3);
        assert!(c.train_qrels.is_empty() && c.dev_qrels.is_empty());
    }

    #[test]
    fn duplicate_doc_rejected() {
        let err = Corpus::build(raw(&[("7", "a"), ("7", "b")], &[], &[]), 300, Default::default()).unwrap_err();
        assert_eq!(err, Error::DuplicateDocument("7".into()));
        assert!(format!("{err}").contains("\"7\""));
    }

    #[test]
    fn text_is_lowercased() {
        let c = Corpus::build(raw(&[("1", "The   Cat")], &[], &[]), 300, Default::default()).unwrap();
        assert_eq!(c.doc("1").unwrap().text, "the cat");
    }

    #[test]
    fn dangling_qrels_listed() {
        let err = Corpus::build(
            raw(&[("1", "a")], &[("q", "x", Split::Train)], &[("q", "9"), ("zz", "1")]),
            300,
            Default::default(),
        )
        .unwrap_err();
        assert_eq!(err, Error::DanglingQrels(vec!["doc:9".into(), "query:zz".into()]));
    }

    #[test]
    fn duplicate_qrels_collapse() {
        let c = Corpus::build(
            raw(&[("1", "a")], &[("q", "x", Split::Train)], &[("q", "1"), ("q", "1")]),
            300,
            Default::default(),
        )
        .unwrap();
        assert_eq!(c.train_qrels.len(), 1);
    }

    #[test]
    fn subset_of_relevant_size_is_exactly_relevant() {
        let full = synthetic(50, 10);
        let rel: Vec<String> = full.relevant_documents().into_iter().map(String::from).collect();
        let s = subset_corpus(&full, rel.len(), 3).unwrap();
        assert_eq!(s.documents.keys().cloned().collect::<Vec<_>>(), rel);
        assert_eq!(s.manifest.counts.random_fill, 0);
    }

    #[test]
    fn subset_is_seed_deterministic() {
        let full = synthetic(50, 10);
        let a = subset_corpus(&full, 20, 1).unwrap();
        let b = subset_corpus(&full, 20, 1).unwrap();
        assert_eq!(a.documents.keys().collect::<Vec<_>>(), b.documents.keys().collect::<Vec<_>>());
        assert_eq!(a.len(), 20);
        assert_eq!(a.manifest.seed, Some(1));
        assert_eq!(a.manifest.counts.random_fill, 10);
    }

    #[test]
    fn subset_too_small_reports_minimum() {
        let full = synthetic(50, 10);
        assert_eq!(subset_corpus(&full, 5, 0).unwrap_err(), Error::SubsetTooSmall { requested: 5, minimum: 10 });
    }

    #[test]
    fn coverage_edges() {
        let none = synthetic(10, 0);
        assert_eq!(coverage_stats(&none).unwrap(), 0.0);
        let c = Corpus::build(
            raw(&[("1", "a"), ("2", "b")], &[("q1", "a", Split::Train), ("q2", "b", Split::Train)], &[("q1", "1"), ("q2", "2")]),
            300,
            Default::default(),
        )
        .unwrap();
        assert_eq!(coverage_stats(&c).unwrap(), 1.0);
        let empty = Corpus::build(RawCorpus::default(), 300, Default::default()).unwrap();
        assert_eq!(coverage_stats(&empty).unwrap_err(), Error::EmptyCorpus);
    }

    #[test]
    fn firstp_short_doc_is_whole() {
        let tok = Tokenizer::default();
        let doc = Document { doc_id: "x".into(), text: "abc de".into(), token_count: 5 };
        assert_eq!(firstp(&doc, 64, &tok), "abc de");
    }

    #[test]
    fn daq_short_doc_copies() {
        let tok = Tokenizer::default();
        let text: String = (0..30).map(|_| "a").collect::<Vec<_>>().join(" ");
        let doc = Document { doc_id: "x".into(), text: text.clone(), token_count: 30 };
        let chunks = daq_chunks(&doc, 10, 64, 7, &tok);
        assert_eq!(chunks.len(), 10);
        assert!(chunks.iter().all(|c| *c == text));
    }
}
