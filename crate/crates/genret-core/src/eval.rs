//! Retrieval metrics, the Jaccard and query-budget analyses, and cost
//! accounting.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::corpus::{Qrels, Query};
use crate::decode::RankedList;
use crate::docid::SchemeKind;
use crate::error::{Error, Result};
use crate::model::{param_count, HeadKind, ModelConfig};
use crate::seed;
use crate::tasks::{query_hash, SyntheticQuerySet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub k: usize,
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
    /// Queries left out of the mean (no relevant documents).
    pub excluded: usize,
    pub warnings: Vec<String>,
    pub metadata: BTreeMap<String, String>,
}

impl EvalReport {
    fn finish(metric: &str, k: usize, per_query: BTreeMap<String, f64>, excluded: usize, warnings: Vec<String>) -> Self {
        let mean = if per_query.is_empty() { 0.0 } else { per_query.values().sum::<f64>() / per_query.len() as f64 };
        EvalReport { metric: format!("{metric}@{k}"), k, per_query, mean, excluded, warnings, metadata: BTreeMap::new() }
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("cutoff k must be at least 1".into()));
    }
    Ok(())
}

/// Reciprocal rank of the first relevant doc within the top `k`; queries
/// with no judgments score 0 and are flagged.
pub fn mrr_at_k(runs: &[RankedList], qrels: &Qrels, k: usize) -> Result<EvalReport> {
    check_k(k)?;
    let mut per = BTreeMap::new();
    let mut warnings = Vec::new();
    for run in runs {
        let rel: BTreeSet<&str> = qrels.relevant(&run.query_id).into_iter().collect();
        if rel.is_empty() {
            warnings.push(format!("query {} has no relevance judgments", run.query_id));
        }
        let rr = run
            .doc_ids()
            .take(k)
            .position(|d| rel.contains(d))
            .map_or(0.0, |p| 1.0 / (p + 1) as f64);
        per.insert(run.query_id.clone(), rr);
    }
    Ok(EvalReport::finish("mrr", k, per, 0, warnings))
}

fn overlap_metric(runs: &[RankedList], qrels: &Qrels, k: usize, name: &str, f: impl Fn(usize, usize) -> f64) -> Result<EvalReport> {
    check_k(k)?;
    let mut per = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut excluded = 0;
    for run in runs {
        let rel: BTreeSet<&str> = qrels.relevant(&run.query_id).into_iter().collect();
        if rel.is_empty() {
            excluded += 1;
            warnings.push(format!("query {} has no relevant documents; excluded", run.query_id));
            continue;
        }
        let found = run.doc_ids().take(k).collect::<BTreeSet<_>>().intersection(&rel).count();
        per.insert(run.query_id.clone(), f(found, rel.len()));
    }
    Ok(EvalReport::finish(name, k, per, excluded, warnings))
}

pub fn recall_at_k(runs: &[RankedList], qrels: &Qrels, k: usize) -> Result<EvalReport> {
    overlap_metric(runs, qrels, k, "recall", |found, n| found as f64 / n as f64)
}

pub fn hits_at_k(runs: &[RankedList], qrels: &Qrels, k: usize) -> Result<EvalReport> {
    overlap_metric(runs, qrels, k, "hits", |found, _| if found > 0 { 1.0 } else { 0.0 })
}

fn word_set(s: &str) -> BTreeSet<String> {
    crate::corpus::normalize(s).split(' ').filter(|w| !w.is_empty()).map(String::from).collect()
}

/// `(|a ∩ b|, |a ∪ b|)` over whitespace word sets.
pub fn jaccard_counts(a: &str, b: &str) -> (usize, usize) {
    let (a, b) = (word_set(a), word_set(b));
    (a.intersection(&b).count(), a.union(&b).count())
}

pub fn jaccard(a: &str, b: &str) -> f64 {
    let (i, u) = jaccard_counts(a, b);
    if u == 0 {
        0.0
    } else {
        i as f64 / u as f64
    }
}

/// Bucket `b` covers `(10b, 10b+10]` percent; zero similarity joins bucket 0.
/// Computed on integers so that 3/10 lands in `(20, 30]`.
pub fn jaccard_bucket(inter: usize, union: usize) -> usize {
    if union == 0 || inter == 0 {
        return 0;
    }
    ((10 * inter).div_ceil(union)).clamp(1, 10) - 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JaccardBucket {
    pub lower: u32,
    pub upper: u32,
    pub count: usize,
    pub mean_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JaccardReport {
    pub buckets: Vec<JaccardBucket>,
    /// Max similarity per included query.
    pub similarity: BTreeMap<String, f64>,
    pub overall_mean: f64,
    pub excluded: usize,
    pub warnings: Vec<String>,
}

/// For each dev query, the highest Jaccard similarity to any synthetic
/// query of its relevant documents, bucketed in 10-point bins with the mean
/// of `per_query_metric` per bin.
pub fn jaccard_bucket_analysis(
    qset: &SyntheticQuerySet,
    dev_queries: &BTreeMap<String, Query>,
    qrels: &Qrels,
    per_query_metric: &BTreeMap<String, f64>,
) -> JaccardReport {
    let mut sums = [0.0f64; 10];
    let mut counts = [0usize; 10];
    let mut similarity = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut excluded = 0;
    for (qid, q) in dev_queries {
        let Some(&metric) = per_query_metric.get(qid) else {
            excluded += 1;
            warnings.push(format!("query {qid} has no metric value; excluded"));
            continue;
        };
        let best = qrels
            .relevant(qid)
            .into_iter()
            .filter_map(|d| qset.queries.get(d))
            .flatten()
            .map(|s| jaccard_counts(&q.text, s))
            .max_by(|a, b| (a.0 * b.1).cmp(&(b.0 * a.1)));
        let Some((i, u)) = best else {
            excluded += 1;
            warnings.push(format!("query {qid}: no relevant document has synthetic queries; excluded"));
            continue;
        };
        let b = jaccard_bucket(i, u);
        sums[b] += metric;
        counts[b] += 1;
        similarity.insert(qid.clone(), if u == 0 { 0.0 } else { i as f64 / u as f64 });
    }
    let total: usize = counts.iter().sum();
    let buckets = (0..10)
        .map(|b| JaccardBucket {
            lower: 10 * b as u32,
            upper: 10 * b as u32 + 10,
            count: counts[b],
            mean_metric: if counts[b] == 0 { 0.0 } else { sums[b] / counts[b] as f64 },
        })
        .collect();
    let overall_mean = if total == 0 { 0.0 } else { sums.iter().sum::<f64>() / total as f64 };
    JaccardReport { buckets, similarity, overall_mean, excluded, warnings }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetStrategy {
    RandomK,
    ScoredTopK,
}

/// External relevance scores keyed by `(doc_id, query_hash)`.
pub type ScoreTable = BTreeMap<(String, String), f64>;

/// Picks at most `budget` queries per document, keeping their original order.
pub fn select_queries(
    qset: &SyntheticQuerySet,
    budget: usize,
    strategy: BudgetStrategy,
    scores: Option<&ScoreTable>,
    seed: u64,
) -> Result<SyntheticQuerySet> {
    let mut out = qset.clone();
    if strategy == BudgetStrategy::ScoredTopK {
        let table = scores.ok_or_else(|| Error::MissingScores(alloc::vec!["<no score file>".into()]))?;
        let missing: Vec<String> = qset
            .queries
            .iter()
            .flat_map(|(d, qs)| qs.iter().map(move |q| (d.clone(), query_hash(q))))
            .filter(|key| !table.contains_key(key))
            .map(|(d, h)| format!("{d}\t{h}"))
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingScores(missing));
        }
    }
    for (d, qs) in out.queries.iter_mut() {
        if qs.len() <= budget {
            continue;
        }
        let mut keep: Vec<usize> = match strategy {
            BudgetStrategy::RandomK => {
                let mut rng = seed::rng(seed::derive(seed, d));
                index::sample(&mut rng, qs.len(), budget).into_vec()
            }
            BudgetStrategy::ScoredTopK => {
                let table = scores.expect("checked above");
                let mut order: Vec<(usize, f64)> =
                    qs.iter().enumerate().map(|(i, q)| (i, table[&(d.clone(), query_hash(q))])).collect();
                order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                order.into_iter().take(budget).map(|(i, _)| i).collect()
            }
        };
        keep.sort_unstable();
        *qs = keep.into_iter().map(|i| qs[i].clone()).collect();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub budget: usize,
    pub strategy: BudgetStrategy,
    pub metric: f64,
}

/// Runs `pipeline` (train + eval, returning one metric) on each budgeted
/// query subset.
pub fn query_budget_ablation<F>(
    qset: &SyntheticQuerySet,
    budgets: &[usize],
    strategies: &[BudgetStrategy],
    scores: Option<&ScoreTable>,
    seed: u64,
    mut pipeline: F,
) -> Result<Vec<BudgetRow>>
where
    F: FnMut(&SyntheticQuerySet) -> Result<f64>,
{
    let mut rows = Vec::new();
    for &budget in budgets {
        for &strategy in strategies {
            let subset = select_queries(qset, budget, strategy, scores, seed)?;
            rows.push(BudgetRow { budget, strategy, metric: pipeline(&subset)? });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub embeddings: u64,
    pub encoder: u64,
    pub decoder: u64,
    pub head: u64,
    pub auxiliary: u64,
}

impl CostBreakdown {
    pub fn total(&self) -> u64 {
        self.embeddings + self.encoder + self.decoder + self.head + self.auxiliary
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub scheme: SchemeKind,
    pub corpus_size: usize,
    pub total_params: u64,
    pub breakdown: CostBreakdown,
    /// Headline estimate under `flops_convention`.
    pub inference_flops: f64,
    pub flops_convention: String,
    /// Per-component estimate: encoder once, decoder per step and beam,
    /// output projection.
    pub component_flops: f64,
    pub component_convention: String,
    /// Decoder steps for one query: `d * k` for sequential ids, 1 for atomic.
    pub decode_steps: u64,
    pub input_len: usize,
}

/// Input length assumed by the headline FLOPs figure.
pub const COST_INPUT_LEN: usize = 64;

/// `config` adjusted to what `kind` implies for head and vocabularies.
pub fn config_for_scheme(config: &ModelConfig, kind: SchemeKind, corpus_size: usize) -> ModelConfig {
    let mut c = config.clone();
    c.scheme = kind;
    match kind {
        SchemeKind::Atomic => {
            c.head_kind = HeadKind::Atomic;
            c.target_vocab_size = corpus_size;
            c.shared_embeddings = true;
            c.max_target_len = 1;
        }
        SchemeKind::Naive => {
            c.head_kind = HeadKind::Standard;
            c.shared_embeddings = true;
            c.target_vocab_size = c.input_vocab_size;
        }
        SchemeKind::Semantic => {
            c.head_kind = HeadKind::Standard;
            c.shared_embeddings = false;
        }
        SchemeKind::Semantic2D => c.shared_embeddings = false,
    }
    c
}

/// Closed-form parameter and FLOPs accounting for `config` under `kind`
/// identifiers of `depth` tokens, decoded with `beam` beams.
pub fn cost_estimate(config: &ModelConfig, kind: SchemeKind, corpus_size: usize, depth: usize, beam: usize) -> CostReport {
    let c = config_for_scheme(config, kind, corpus_size);
    let (d, f, l) = (c.d_model as u64, c.d_ff as u64, c.num_layers as u64);
    let attn = 4 * (d * d + d);
    let ln = 2 * d;
    let ffn = 2 * d * f + f + d;
    let encoder = l * (attn + 2 * ln + ffn) + ln;
    let decoder = l * (2 * attn + 3 * ln + ffn) + ln;
    let separate_target = c.head_kind != HeadKind::Atomic && !c.shared_embeddings;
    let embeddings = c.input_vocab_size as u64 * d + if separate_target { c.target_vocab_size as u64 * d } else { 0 };
    let head = if c.head_kind == HeadKind::Atomic { corpus_size as u64 * d } else { 0 };
    let auxiliary = if c.head_kind == HeadKind::Pawa { l * (attn + 2 * ln + ffn) + ln + d * d * d + d * d } else { 0 };
    let breakdown = CostBreakdown { embeddings, encoder, decoder, head, auxiliary };
    let total = breakdown.total();
    debug_assert_eq!(total, param_count(&c));

    let atomic = kind == SchemeKind::Atomic;
    let beams = if atomic { 1 } else { beam.max(1) } as f64;
    let n = COST_INPUT_LEN as f64;
    let inference_flops = 2.0 * total as f64 * n * beams;
    let decode_steps = if atomic { 1 } else { (depth.max(1) * beam.max(1)) as u64 };
    let out_proj = 2.0 * d as f64 * if atomic { corpus_size as f64 } else { c.target_vocab_size as f64 };
    let component_flops = 2.0 * encoder as f64 * n
        + decode_steps as f64 * (2.0 * (decoder + auxiliary) as f64 + out_proj);
    CostReport {
        scheme: kind,
        corpus_size,
        total_params: total,
        breakdown,
        inference_flops,
        flops_convention: format!(
            "2 x total params x {COST_INPUT_LEN} input tokens x beams ({} here; 1 for atomic)",
            beams as u64
        ),
        component_flops,
        component_convention: "2 x non-embedding encoder params x input tokens + d*k decoder steps x (2 x decoder/aux params + 2 x d_model x output vocab)".to_string(),
        decode_steps,
        input_len: COST_INPUT_LEN,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::Ranked;
    use alloc::vec;

    fn run(q: &str, docs: &[&str]) -> RankedList {
        RankedList {
            query_id: q.into(),
            results: docs.iter().enumerate().map(|(i, d)| Ranked { doc_id: d.to_string(), score: -(i as f64) }).collect(),
            warnings: vec![],
        }
    }

    #[test]
    fn reciprocal_rank_examples() {
        let qrels: Qrels = [("q", "x")].into_iter().collect();
        assert_eq!(mrr_at_k(&[run("q", &["x"])], &qrels, 10).unwrap().mean, 1.0);
        assert_eq!(mrr_at_k(&[run("q", &["a", "b", "c", "x"])], &qrels, 10).unwrap().mean, 0.25);
        let far: Vec<String> = (0..10).map(|i| format!("n{i}")).chain(["x".to_string()]).collect();
        let far: Vec<&str> = far.iter().map(String::as_str).collect();
        assert_eq!(mrr_at_k(&[run("q", &far)], &qrels, 10).unwrap().mean, 0.0);
    }

    #[test]
    fn recall_and_hits_examples() {
        let qrels: Qrels = [("q", "x"), ("q", "y")].into_iter().collect();
        let r = [run("q", &["a", "b", "x", "c", "d"])];
        assert_eq!(recall_at_k(&r, &qrels, 5).unwrap().mean, 0.5);
        assert_eq!(hits_at_k(&r, &qrels, 5).unwrap().mean, 1.0);
        let r = recall_at_k(&[run("z", &["a"])], &qrels, 5).unwrap();
        assert_eq!((r.excluded, r.per_query.len()), (1, 0));
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard("a b c", "c b a"), 1.0);
        assert_eq!(jaccard_bucket(3, 3), 9);
        assert_eq!(jaccard_counts("a b c", "b c d"), (2, 4));
        assert_eq!(jaccard_bucket(2, 4), 4);
        assert_eq!(jaccard_bucket(3, 10), 2);
        assert_eq!(jaccard_bucket(0, 5), 0);
    }

    #[test]
    fn atomic_minus_naive_is_head() {
        let c = ModelConfig::base(SchemeKind::Naive, 1000, 256);
        let a = cost_estimate(&c, SchemeKind::Atomic, 109_000, 1, 40);
        let n = cost_estimate(&c, SchemeKind::Naive, 109_000, 8, 40);
        assert_eq!(a.total_params - n.total_params, 109_000 * 768);
    }
}
