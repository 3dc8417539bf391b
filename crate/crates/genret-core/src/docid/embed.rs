use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent with std
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::seed;

/// Row-major f32 document vectors keyed by doc id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    pub doc_ids: Vec<String>,
    pub dim: usize,
    pub data: Vec<f32>,
    /// Rows that are all zero (empty documents).
    pub zero_rows: Vec<usize>,
}

impl EmbeddingMatrix {
    pub fn new(doc_ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != doc_ids.len() * dim {
            return Err(Error::DimensionMismatch { expected: doc_ids.len() * dim, found: data.len() });
        }
        let zero_rows = (0..doc_ids.len())
            .filter(|&i| data[i * dim..(i + 1) * dim].iter().all(|&x| x == 0.0))
            .collect();
        Ok(EmbeddingMatrix { doc_ids, dim, data, zero_rows })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn check_finite(&self) -> Result<()> {
        match (0..self.len()).find(|&i| self.row(i).iter().any(|x| !x.is_finite())) {
            Some(i) => Err(Error::NonFiniteEmbedding(i)),
            None => Ok(()),
        }
    }

    /// Replaces rows with vectors from `other` for every doc id it covers.
    pub fn override_with(&mut self, other: &EmbeddingMatrix) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: other.dim });
        }
        let pos: BTreeMap<&str, usize> = self.doc_ids.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
        for (j, d) in other.doc_ids.iter().enumerate() {
            if let Some(&i) = pos.get(d.as_str()) {
                self.data[i * self.dim..(i + 1) * self.dim].copy_from_slice(other.row(j));
            }
        }
        let ids = core::mem::take(&mut self.doc_ids);
        *self = EmbeddingMatrix::new(ids, self.dim, core::mem::take(&mut self.data))?;
        Ok(())
    }
}

/// Hashed TF-IDF embedding: each word lands in a seeded bucket with a
/// seeded sign, weighted by term count times smoothed IDF, L2-normalized.
pub fn embed_texts<'a, I>(items: I, dim: usize, seed: u64) -> Result<EmbeddingMatrix>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    if dim < 2 {
        return Err(Error::InvalidArgument("embedding dimension must be at least 2".into()));
    }
    let items: Vec<(&str, &str)> = items.into_iter().collect();
    let n = items.len();
    let mut tfs: Vec<BTreeMap<&str, u32>> = Vec::with_capacity(n);
    let mut df: BTreeMap<&str, u32> = BTreeMap::new();
    for (_, text) in &items {
        let mut tf = BTreeMap::new();
        for w in text.split_whitespace() {
            *tf.entry(w).or_insert(0) += 1;
        }
        for w in tf.keys() {
            *df.entry(*w).or_insert(0) += 1;
        }
        tfs.push(tf);
    }
    let mut data = alloc::vec![0f32; n * dim];
    let mut row = alloc::vec![0f64; dim];
    for (i, tf) in tfs.iter().enumerate() {
        row.iter_mut().for_each(|x| *x = 0.0);
        for (w, &count) in tf {
            let h = seed::derive(seed, w);
            let bucket = (h % dim as u64) as usize;
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            let idf = ((1.0 + n as f64) / (1.0 + df[w] as f64)).ln() + 1.0;
            row[bucket] += sign * count as f64 * idf;
        }
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (o, x) in data[i * dim..(i + 1) * dim].iter_mut().zip(&row) {
                *o = (x / norm) as f32;
            }
        }
    }
    EmbeddingMatrix::new(items.iter().map(|(d, _)| String::from(*d)).collect(), dim, data)
}

pub fn embed_corpus(corpus: &Corpus, dim: usize, seed: u64) -> Result<EmbeddingMatrix> {
    embed_texts(corpus.documents.values().map(|d| (d.doc_id.as_str(), d.text.as_str())), dim, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::string::ToString;
    use alloc::vec;

    fn cos(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (*x as f64) * (*y as f64)).sum()
    }

    #[test]
    fn identical_documents_identical_vectors() {
        let e = embed_texts([("a", "the cat sat"), ("b", "the cat sat"), ("c", "dog")], 64, 1).unwrap();
        assert_eq!(e.row(0), e.row(1));
    }

    #[test]
    fn disjoint_vocabularies_nearly_orthogonal() {
        let a: Vec<String> = (0..40).map(|i| format!("alpha{i}")).collect();
        let b: Vec<String> = (0..40).map(|i| format!("beta{i}")).collect();
        let (ta, tb) = (a.join(" "), b.join(" "));
        let e = embed_texts([("a", ta.as_str()), ("b", tb.as_str())], 1024, 3).unwrap();
        assert!(cos(e.row(0), e.row(1)).abs() < 0.2);
        assert!((cos(e.row(0), e.row(0)) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn empty_document_flagged() {
        let e = embed_texts([("a", ""), ("b", "x")], 8, 0).unwrap();
        assert_eq!(e.zero_rows, vec![0]);
    }

    #[test]
    fn external_vectors_override() {
        let mut e = embed_texts([("a", "x y"), ("b", "z")], 4, 0).unwrap();
        let ext = EmbeddingMatrix::new(vec!["b".to_string()], 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        e.override_with(&ext).unwrap();
        assert_eq!(e.row(1), &[1.0, 2.0, 3.0, 4.0]);
        assert_ne!(e.row(0), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn non_finite_detected() {
        let e = EmbeddingMatrix::new(vec!["a".to_string()], 2, vec![f32::NAN, 0.0]).unwrap();
        assert_eq!(e.check_finite().unwrap_err(), Error::NonFiniteEmbedding(0));
    }
}
