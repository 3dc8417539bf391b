//! The stages a run goes through, as library functions shared by the CLI
//! and the tests.

use std::collections::BTreeMap;

use genret_core::corpus::{subset_corpus, Corpus, Qrels};
use genret_core::decode::{atomic_rank, beam_search, BeamConfig, RankedList};
use genret_core::docid::{
    assign_atomic_ids, assign_naive_ids, build_semantic_tree, build_trie, embed_corpus, semantic_ids_from_tree,
    DocIdScheme, EmbeddingMatrix, SchemeKind, SemanticTree, TreeOptions,
};
use genret_core::eval::{hits_at_k, mrr_at_k, recall_at_k, EvalReport};
use genret_core::model::{init_model, train_step, Adam, LossReport, LrSchedule, ModelConfig, ModelParams, Seq2Seq, TrainOptions};
use genret_core::seed;
use genret_core::tasks::{
    encode_query, generate_queries, make_d2q_examples, make_indexing_examples, make_labeled_examples, sample_mixture,
    ExtractiveGenerator, SyntheticQuerySet, TaskKind, TrainingExample,
};
use genret_core::tokenizer::{Tokenizer, NUM_SPECIAL};
use serde::{Deserialize, Serialize};

use crate::config::{EvalSection, RunConfig};
use crate::error::{Error, Result};
use crate::io;

/// Reads the configured corpus files, then subsets when `target_size` is set.
pub fn prepare_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let c = &cfg.corpus;
    let full = io::load_corpus(&c.docs, &c.queries, &c.qrels, c.tokenizer_vocab)?;
    match c.target_size {
        Some(n) => Ok(subset_corpus(&full, n, seed::derive(cfg.seed, "subset"))?),
        None => Ok(full),
    }
}

pub struct BuiltIds {
    pub scheme: DocIdScheme,
    pub tree: Option<SemanticTree>,
    pub embeddings: Option<EmbeddingMatrix>,
}

pub fn build_ids(cfg: &RunConfig, corpus: &Corpus) -> Result<BuiltIds> {
    let s = &cfg.scheme;
    match s.kind {
        SchemeKind::Naive => Ok(BuiltIds { scheme: assign_naive_ids(corpus)?, tree: None, embeddings: None }),
        SchemeKind::Atomic => Ok(BuiltIds { scheme: assign_atomic_ids(corpus)?, tree: None, embeddings: None }),
        SchemeKind::Semantic | SchemeKind::Semantic2D => {
            let mut emb = embed_corpus(corpus, s.embedding_dim, seed::derive(cfg.seed, "embed"))?;
            if let (Some(bin), Some(order)) = (&s.embeddings, &s.embedding_order) {
                let ext = io::read_embeddings(bin, order)?;
                if ext.dim == emb.dim {
                    emb.override_with(&ext)?;
                } else {
                    let known: std::collections::BTreeSet<&str> = ext.doc_ids.iter().map(String::as_str).collect();
                    if let Some(d) = corpus.documents.keys().find(|d| !known.contains(d.as_str())) {
                        return Err(Error::Data(format!("external embeddings miss document {d:?}")));
                    }
                    emb = ext;
                }
            }
            let opts = TreeOptions::new(s.k, s.c, seed::derive(cfg.seed, "tree")).with_sample_cap(s.sample_cap, s.sample_trigger);
            let tree = build_semantic_tree(&emb, &opts)?;
            let mut scheme = semantic_ids_from_tree(&tree)?;
            if s.kind == SchemeKind::Semantic2D {
                scheme = scheme.to_2d()?;
            }
            Ok(BuiltIds { scheme, tree: Some(tree), embeddings: Some(emb) })
        }
    }
}

/// Built-in extractive generation, or ingestion of `query_gen.file`.
pub fn synthetic_queries(cfg: &RunConfig, corpus: &Corpus) -> Result<SyntheticQuerySet> {
    match &cfg.query_gen.file {
        Some(path) => io::read_synthetic_queries(path, corpus),
        None => Ok(generate_queries(corpus, &ExtractiveGenerator, &cfg.query_gen_config())?),
    }
}

pub fn model_config(cfg: &RunConfig, tokenizer: &Tokenizer, scheme: &DocIdScheme) -> Result<ModelConfig> {
    let m = &cfg.model;
    let mut mc = ModelConfig::desk(scheme.kind(), tokenizer.vocab_size(), scheme.vocab_size(), scheme.max_len());
    mc.num_layers = m.num_layers;
    mc.d_model = m.d_model;
    mc.num_heads = m.num_heads;
    mc.d_ff = m.d_ff;
    mc.max_input_len = m.max_input_len;
    mc.dropout_rate = m.dropout_rate;
    if m.pawa {
        mc = mc.with_pawa();
    }
    if !m.shared_embeddings && scheme.kind() == SchemeKind::Naive {
        mc.shared_embeddings = false;
        mc.target_vocab_size = NUM_SPECIAL as usize + scheme.vocab_size();
    }
    mc.validate()?;
    Ok(mc)
}

/// Examples for every task named in the mixture.
pub fn training_sources(
    cfg: &RunConfig,
    corpus: &Corpus,
    scheme: &DocIdScheme,
    qset: Option<&SyntheticQuerySet>,
) -> Result<BTreeMap<TaskKind, Vec<TrainingExample>>> {
    let params = cfg.indexing_params();
    let mut out = BTreeMap::new();
    for item in &cfg.mixture {
        if out.contains_key(&item.task) {
            continue;
        }
        let examples = match item.task {
            TaskKind::FirstP | TaskKind::DaQ => make_indexing_examples(corpus, scheme, item.task, &params)?,
            TaskKind::LabeledQuery => make_labeled_examples(corpus, scheme, cfg.model.max_input_len)?,
            TaskKind::D2Q => {
                let q = qset.ok_or_else(|| Error::Data("mixture has d2q but no synthetic queries were given".into()))?;
                match cfg.d2q_budget() {
                    Some(n) => make_d2q_examples(&q.truncated(n), scheme, &corpus.tokenizer, cfg.model.max_input_len)?,
                    None => make_d2q_examples(q, scheme, &corpus.tokenizer, cfg.model.max_input_len)?,
                }
            }
        };
        out.insert(item.task, examples);
    }
    Ok(out)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub lr: f64,
    pub cross_entropy: f64,
    pub consistency: f64,
    pub total: f64,
    pub nan_detected: bool,
    /// Mean total loss over finite steps since the previous row.
    pub window_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub nan_steps: u64,
    pub final_window_loss: f64,
}

pub fn fresh_model(cfg: &RunConfig, mc: &ModelConfig) -> Result<(ModelParams, Adam)> {
    let params = init_model(mc, seed::derive(cfg.seed, "init"))?;
    let opt = Adam::new(&params, LrSchedule::new(cfg.train.lr, cfg.train.warmup_steps));
    Ok((params, opt))
}

/// Runs `cfg.train.steps` updates from the optimizer's current step. Rows
/// go to `log` every `log_interval` steps and on every non-finite step.
pub fn train(
    cfg: &RunConfig,
    params: &mut ModelParams,
    opt: &mut Adam,
    sources: &BTreeMap<TaskKind, Vec<TrainingExample>>,
    scheme: &DocIdScheme,
    mut log: impl FnMut(&LogRow) -> Result<()>,
) -> Result<TrainSummary> {
    let t = &cfg.train;
    let spec = cfg.mixture_spec()?;
    let start = opt.step;
    // Resuming re-seeds the sampler from the step so the stream continues
    // deterministically rather than replaying from the beginning.
    let mut sampler = sample_mixture(&spec, sources, seed::derive(cfg.seed, &format!("mixture/{start}")))?;
    let options = TrainOptions { consistency: t.consistency, clip: t.clip };
    let dropout_base = seed::derive(cfg.seed, "dropout");
    let interval = t.log_interval.max(1);
    let (mut window, mut window_n, mut nan_steps, mut last_window) = (0.0, 0u64, 0u64, f64::NAN);
    for step in start..start + t.steps {
        let batch: Vec<Seq2Seq> = sampler.next_batch(t.batch_size).into_iter().map(|e| e.to_seq2seq(scheme)).collect();
        let lr = opt.lr();
        let r: LossReport = train_step(params, opt, &batch, &options, dropout_base.wrapping_add(step))?;
        if r.nan_detected {
            nan_steps += 1;
        } else {
            window += r.total;
            window_n += 1;
        }
        let last = step + 1 == start + t.steps;
        if r.nan_detected || (step + 1) % interval == 0 || last {
            let window_loss = if window_n == 0 { f64::NAN } else { window / window_n as f64 };
            if !r.nan_detected {
                last_window = window_loss;
                window = 0.0;
                window_n = 0;
            }
            log(&LogRow {
                step: step + 1,
                lr,
                cross_entropy: r.cross_entropy,
                consistency: r.consistency,
                total: r.total,
                nan_detected: r.nan_detected,
                window_loss,
            })?;
        }
    }
    Ok(TrainSummary { steps: t.steps, nan_steps, final_window_loss: last_window })
}

/// Decodes every `(query_id, text)`; atomic models rank all documents in a
/// single step and keep the top `beam_width`.
pub fn retrieve(
    params: &ModelParams,
    scheme: &DocIdScheme,
    tokenizer: &Tokenizer,
    queries: &[(String, String)],
    beam: &BeamConfig,
) -> Result<Vec<RankedList>> {
    let max_in = params.config.max_input_len;
    if scheme.kind() == SchemeKind::Atomic {
        return queries
            .iter()
            .map(|(id, text)| Ok(atomic_rank(params, scheme, id, &encode_query(tokenizer, text, max_in), beam.beam_width)?))
            .collect();
    }
    let trie = build_trie(scheme)?;
    queries
        .iter()
        .map(|(id, text)| Ok(beam_search(params, scheme, &trie, id, &encode_query(tokenizer, text, max_in), beam)?))
        .collect()
}

/// MRR@k, then Recall@k and Hits@k for each configured cutoff.
pub fn evaluate(runs: &[RankedList], qrels: &Qrels, e: &EvalSection) -> Result<Vec<EvalReport>> {
    let mut out = vec![mrr_at_k(runs, qrels, e.mrr_k)?];
    for &k in &e.recall_k {
        out.push(recall_at_k(runs, qrels, k)?);
    }
    for &k in &e.hits_k {
        out.push(hits_at_k(runs, qrels, k)?);
    }
    Ok(out)
}

/// Aligned text table of metric means.
pub fn report_table(reports: &[EvalReport]) -> String {
    let mut s = format!("{:<12} {:>8} {:>8} {:>9}\n", "metric", "mean", "queries", "excluded");
    for r in reports {
        s.push_str(&format!("{:<12} {:>8.4} {:>8} {:>9}\n", r.metric, r.mean, r.per_query.len(), r.excluded));
    }
    s
}
