//! Document identifier schemes and the trie over valid identifiers.

mod embed;
mod kmeans;
mod tree;
mod trie;

pub use embed::{embed_corpus, embed_texts, EmbeddingMatrix};
pub use kmeans::{exact_partition, kmeans, KMeansOptions, KMeansResult, EXACT_MAX_POINTS};
pub use tree::{build_semantic_tree, SemanticTree, TreeNode, TreeOptions};
pub use trie::{build_trie, Next, Trie};

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Atomic,
    Naive,
    Semantic,
    #[serde(rename = "semantic_2d")]
    Semantic2D,
}

impl SchemeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemeKind::Atomic => "atomic",
            SchemeKind::Naive => "naive",
            SchemeKind::Semantic => "semantic",
            SchemeKind::Semantic2D => "semantic_2d",
        }
    }

    pub fn is_sequential(self) -> bool {
        !matches!(self, SchemeKind::Atomic)
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "atomic" => Ok(SchemeKind::Atomic),
            "naive" => Ok(SchemeKind::Naive),
            "semantic" => Ok(SchemeKind::Semantic),
            "semantic_2d" | "semantic2d" | "2d" => Ok(SchemeKind::Semantic2D),
            other => Err(Error::InvalidArgument(alloc::format!("unknown scheme {other:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SchemeRepr {
    kind: SchemeKind,
    vocab_size: usize,
    width: usize,
    id_map: BTreeMap<String, Vec<u32>>,
}

/// Mapping from doc ids to identifier token sequences.
///
/// Tokens live in the scheme's own space `0..vocab_size`; the model adds its
/// special tokens on top.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemeRepr", into = "SchemeRepr")]
pub struct DocIdScheme {
    kind: SchemeKind,
    vocab_size: usize,
    /// Values per position for 2D identifiers; 0 otherwise.
    width: usize,
    id_map: BTreeMap<String, Vec<u32>>,
    reverse: BTreeMap<Vec<u32>, String>,
}

impl TryFrom<SchemeRepr> for DocIdScheme {
    type Error = Error;

    fn try_from(r: SchemeRepr) -> Result<Self> {
        DocIdScheme::from_map(r.kind, r.vocab_size, r.width, r.id_map)
    }
}

impl From<DocIdScheme> for SchemeRepr {
    fn from(s: DocIdScheme) -> Self {
        SchemeRepr { kind: s.kind, vocab_size: s.vocab_size, width: s.width, id_map: s.id_map }
    }
}

impl DocIdScheme {
    /// Validates injectivity and token ranges.
    pub fn from_map(
        kind: SchemeKind,
        vocab_size: usize,
        width: usize,
        id_map: BTreeMap<String, Vec<u32>>,
    ) -> Result<Self> {
        let mut reverse = BTreeMap::new();
        for (doc, seq) in &id_map {
            if seq.is_empty() {
                return Err(Error::InvalidArgument(alloc::format!("empty identifier for {doc:?}")));
            }
            if kind == SchemeKind::Atomic && seq.len() != 1 {
                return Err(Error::InvalidArgument(alloc::format!("atomic identifier for {doc:?} has length {}", seq.len())));
            }
            if let Some(&t) = seq.iter().find(|&&t| t as usize >= vocab_size) {
                return Err(Error::TokenOutOfRange { token: t, vocab: vocab_size });
            }
            if let Some(other) = reverse.insert(seq.clone(), doc.clone()) {
                return Err(Error::NonInjective(other, doc.clone()));
            }
        }
        Ok(DocIdScheme { kind, vocab_size, width, id_map, reverse })
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.id_map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_map.is_empty()
    }

    pub fn encode(&self, doc_id: &str) -> Option<&[u32]> {
        self.id_map.get(doc_id).map(Vec::as_slice)
    }

    pub fn decode(&self, tokens: &[u32]) -> Option<&str> {
        self.reverse.get(tokens).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[u32])> {
        self.id_map.iter().map(|(d, s)| (d.as_str(), s.as_slice()))
    }

    pub fn max_len(&self) -> usize {
        self.id_map.values().map(Vec::len).max().unwrap_or(0)
    }

    /// Re-encodes a Semantic scheme with position-aware composite tokens.
    pub fn to_2d(&self) -> Result<DocIdScheme> {
        if self.kind != SchemeKind::Semantic {
            return Err(Error::InvalidArgument("2D identifiers derive from semantic identifiers".into()));
        }
        let depth = self.max_len();
        let width = self.vocab_size;
        let mut map = BTreeMap::new();
        for (doc, seq) in &self.id_map {
            let composite = to_2d_tokens(seq, depth)?.iter().map(|t| t.index(width)).collect();
            map.insert(doc.clone(), composite);
        }
        DocIdScheme::from_map(SchemeKind::Semantic2D, depth * width, width, map)
    }
}

/// Character-wise identifiers: each byte of the doc id string is one token.
pub fn naive_ids<'a, I: IntoIterator<Item = &'a str>>(doc_ids: I) -> Result<DocIdScheme> {
    let map = doc_ids.into_iter().map(|d| (d.to_string(), d.bytes().map(u32::from).collect())).collect();
    DocIdScheme::from_map(SchemeKind::Naive, 256, 0, map)
}

pub fn assign_naive_ids(corpus: &Corpus) -> Result<DocIdScheme> {
    naive_ids(corpus.documents.keys().map(String::as_str))
}

/// One fresh token per document, in doc id order.
pub fn atomic_ids<'a, I: IntoIterator<Item = &'a str>>(doc_ids: I) -> Result<DocIdScheme> {
    let map: BTreeMap<String, Vec<u32>> = doc_ids
        .into_iter()
        .enumerate()
        .map(|(i, d)| (d.to_string(), alloc::vec![i as u32]))
        .collect();
    let n = map.len();
    DocIdScheme::from_map(SchemeKind::Atomic, n, 0, map)
}

pub fn assign_atomic_ids(corpus: &Corpus) -> Result<DocIdScheme> {
    atomic_ids(corpus.documents.keys().map(String::as_str))
}

/// Cluster path followed by leaf position.
pub fn semantic_ids_from_tree(tree: &SemanticTree) -> Result<DocIdScheme> {
    let map: BTreeMap<String, Vec<u32>> = tree.paths().into_iter().map(|(p, d)| (d, p)).collect();
    DocIdScheme::from_map(SchemeKind::Semantic, tree.k.max(tree.c), 0, map)
}

/// A (position, value) composite identifier token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Token2d {
    pub position: u32,
    pub value: u32,
}

impl Token2d {
    pub fn index(self, width: usize) -> u32 {
        self.position * width as u32 + self.value
    }

    pub fn from_index(index: u32, width: usize) -> Token2d {
        Token2d { position: index / width as u32, value: index % width as u32 }
    }
}

impl fmt::Display for Token2d {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.position, self.value)
    }
}

pub fn to_2d_tokens(id: &[u32], max_depth: usize) -> Result<Vec<Token2d>> {
    if id.len() > max_depth {
        return Err(Error::DepthOverflow { len: id.len(), max_depth });
    }
    Ok(id.iter().enumerate().map(|(i, &v)| Token2d { position: i as u32, value: v }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;
    use alloc::format;
    use alloc::vec;

    #[test]
    fn naive_five_digit() {
        let s = naive_ids(["42915"]).unwrap();
        assert_eq!(s.encode("42915").unwrap(), b"42915".iter().map(|&b| b as u32).collect::<Vec<_>>().as_slice());
        let one = naive_ids(["0"]).unwrap();
        assert_eq!(one.encode("0").unwrap().len(), 1);
    }

    #[test]
    fn naive_thousand_distinct() {
        let ids: Vec<String> = (0..1000).map(|i| format!("{i}")).collect();
        let s = naive_ids(ids.iter().map(String::as_str)).unwrap();
        let seqs: BTreeSet<&[u32]> = s.iter().map(|(_, t)| t).collect();
        assert_eq!(seqs.len(), 1000);
    }

    #[test]
    fn atomic_round_trip() {
        let ids: Vec<String> = (0..50).map(|i| format!("doc{i}")).collect();
        let s = atomic_ids(ids.iter().map(String::as_str)).unwrap();
        assert_eq!(s.vocab_size(), 50);
        for (d, t) in s.iter() {
            assert_eq!(t.len(), 1);
            assert_eq!(s.decode(t), Some(d));
        }
        for tok in 0..50u32 {
            let d = s.decode(&[tok]).unwrap();
            assert_eq!(s.encode(d), Some(&[tok][..]));
        }
    }

    #[test]
    fn two_d_worked_example() {
        let t = to_2d_tokens(&[9, 21, 14, 29], 4).unwrap();
        let shown: Vec<String> = t.iter().map(|t| format!("{t}")).collect();
        assert_eq!(shown.join(" "), "[0,9] [1,21] [2,14] [3,29]");
        assert!(to_2d_tokens(&[], 4).unwrap().is_empty());
        assert_eq!(to_2d_tokens(&[1, 2, 3], 2).unwrap_err(), Error::DepthOverflow { len: 3, max_depth: 2 });
        let a = to_2d_tokens(&[5, 5], 2).unwrap();
        assert_ne!(a[0].index(30), a[1].index(30));
    }

    #[test]
    fn two_d_index_is_bijective() {
        let width = 7;
        let mut seen = BTreeSet::new();
        for p in 0..5u32 {
            for v in 0..width as u32 {
                let t = Token2d { position: p, value: v };
                assert_eq!(Token2d::from_index(t.index(width), width), t);
                assert!(seen.insert(t.index(width)));
            }
        }
        assert_eq!(seen.len(), 5 * width);
    }

    #[test]
    fn non_injective_rejected() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), vec![1, 2]);
        m.insert("b".to_string(), vec![1, 2]);
        assert!(matches!(DocIdScheme::from_map(SchemeKind::Semantic, 3, 0, m), Err(Error::NonInjective(..))));
    }
}
