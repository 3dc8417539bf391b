use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::embed::EmbeddingMatrix;
use super::kmeans::{exact_partition, kmeans, KMeansOptions, EXACT_MAX_POINTS};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    /// At most `c` doc ids, sorted.
    Leaf { docs: Vec<String> },
    /// One centroid per child, child `i` is cluster token `i`.
    Internal { centroids: Vec<Vec<f64>>, children: Vec<TreeNode> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeOptions {
    pub k: usize,
    pub c: usize,
    pub seed: u64,
    pub kmeans: KMeansOptions,
}

impl TreeOptions {
    pub fn new(k: usize, c: usize, seed: u64) -> Self {
        TreeOptions { k, c, seed, kmeans: KMeansOptions::default() }
    }

    pub fn with_sample_cap(mut self, sample_cap: usize, trigger: usize) -> Self {
        self.kmeans.sample_cap = sample_cap;
        self.kmeans.sample_trigger = trigger;
        self
    }
}

/// Hierarchical k-means tree over document embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticTree {
    pub k: usize,
    pub c: usize,
    pub sample_cap: usize,
    pub root: TreeNode,
}

impl SemanticTree {
    /// (cluster path + leaf position, doc id) for every document, in tree order.
    pub fn paths(&self) -> Vec<(Vec<u32>, String)> {
        let mut out = Vec::new();
        let mut prefix = Vec::new();
        walk(&self.root, &mut prefix, &mut out);
        out
    }

    pub fn depth(&self) -> usize {
        fn d(n: &TreeNode) -> usize {
            match n {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Internal { children, .. } => 1 + children.iter().map(d).max().unwrap_or(0),
            }
        }
        d(&self.root)
    }
}

fn walk(node: &TreeNode, prefix: &mut Vec<u32>, out: &mut Vec<(Vec<u32>, String)>) {
    match node {
        TreeNode::Leaf { docs } => {
            for (i, d) in docs.iter().enumerate() {
                let mut p = prefix.clone();
                p.push(i as u32);
                out.push((p, d.clone()));
            }
        }
        TreeNode::Internal { children, .. } => {
            for (i, ch) in children.iter().enumerate() {
                prefix.push(i as u32);
                walk(ch, prefix, out);
                prefix.pop();
            }
        }
    }
}

/// Recursively clusters into `k` groups until every cluster holds at most
/// `c` documents. Each node's k-means run is seeded from the run seed and the
/// node's path, so the tree does not depend on traversal order.
pub fn build_semantic_tree(emb: &EmbeddingMatrix, opts: &TreeOptions) -> Result<SemanticTree> {
    if opts.k < 2 {
        return Err(Error::InvalidArgument("k must be at least 2".into()));
    }
    if opts.c < 1 {
        return Err(Error::InvalidArgument("c must be at least 1".into()));
    }
    emb.check_finite()?;
    let data: Vec<f64> = emb.data.iter().map(|&x| x as f64).collect();
    let rows: Vec<usize> = (0..emb.len()).collect();
    let mut path = Vec::new();
    let root = build_node(emb, &data, rows, opts, &mut path);
    Ok(SemanticTree { k: opts.k, c: opts.c, sample_cap: opts.kmeans.sample_cap, root })
}

fn build_node(emb: &EmbeddingMatrix, data: &[f64], rows: Vec<usize>, opts: &TreeOptions, path: &mut Vec<u32>) -> TreeNode {
    if rows.len() <= opts.c {
        let mut docs: Vec<String> = rows.iter().map(|&r| emb.doc_ids[r].clone()).collect();
        docs.sort();
        return TreeNode::Leaf { docs };
    }
    let key: String = path.iter().map(|p| alloc::format!("{p}/")).collect();
    let mut rng = seed::rng(seed::derive(opts.seed, &key));
    let res = if rows.len() <= EXACT_MAX_POINTS {
        exact_partition(data, emb.dim, &rows, opts.k)
    } else {
        kmeans(data, emb.dim, &rows, opts.k, &opts.kmeans, &mut rng)
    };
    let mut groups: Vec<Vec<usize>> = alloc::vec![Vec::new(); res.centroids.len()];
    for (&r, &a) in rows.iter().zip(&res.assignment) {
        groups[a].push(r);
    }
    let children = groups
        .into_iter()
        .enumerate()
        .map(|(i, g)| {
            path.push(i as u32);
            let child = build_node(emb, data, g, opts, path);
            path.pop();
            child
        })
        .collect();
    TreeNode::Internal { centroids: res.centroids, children }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::docid::semantic_ids_from_tree;
    use alloc::format;
    use alloc::string::ToString;
    use alloc::vec;

    fn square() -> EmbeddingMatrix {
        EmbeddingMatrix::new(
            (0..4).map(|i| format!("d{i}")).collect(),
            2,
            vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn small_corpus_is_single_leaf() {
        let emb = EmbeddingMatrix::new((0..5).map(|i| format!("d{i}")).collect(), 2, vec![0.5; 10]).unwrap();
        let tree = build_semantic_tree(&emb, &TreeOptions::new(10, 100, 0)).unwrap();
        let ids = semantic_ids_from_tree(&tree).unwrap();
        for i in 0..5u32 {
            assert_eq!(ids.encode(&format!("d{i}")).unwrap(), &[i]);
        }
    }

    #[test]
    fn square_is_two_levels() {
        let tree = build_semantic_tree(&square(), &TreeOptions::new(2, 1, 9)).unwrap();
        assert_eq!(tree.depth(), 2);
        assert!(tree.paths().iter().all(|(p, _)| p.len() == 3 && p[2] == 0));
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(build_semantic_tree(&square(), &TreeOptions::new(1, 1, 0)).is_err());
        let bad = EmbeddingMatrix::new(vec!["x".to_string()], 2, vec![f32::INFINITY, 0.0]).unwrap();
        assert_eq!(build_semantic_tree(&bad, &TreeOptions::new(2, 1, 0)).unwrap_err(), Error::NonFiniteEmbedding(0));
    }
}
