//! Run configuration: one JSON file, dotted `--set` overrides, presets.

use std::path::{Path, PathBuf};

use genret_core::decode::BeamConfig;
use genret_core::docid::SchemeKind;
use genret_core::model::Consistency;
use genret_core::tasks::{IndexingParams, MixtureEntry, MixtureSpec, QueryGenConfig, TaskKind};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub docs: PathBuf,
    pub queries: PathBuf,
    pub qrels: PathBuf,
    pub tokenizer_vocab: usize,
    /// Subset size; `None` keeps the whole corpus.
    pub target_size: Option<usize>,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            docs: "data/docs.jsonl".into(),
            queries: "data/queries.jsonl".into(),
            qrels: "data/qrels.tsv".into(),
            tokenizer_vocab: 2000,
            target_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeSection {
    pub kind: SchemeKind,
    pub k: usize,
    pub c: usize,
    /// k-means fits on `sample_cap` points once a node exceeds `sample_trigger`.
    pub sample_cap: usize,
    pub sample_trigger: usize,
    pub embedding_dim: usize,
    /// External embeddings (binary + order file) replacing the built-in ones.
    pub embeddings: Option<PathBuf>,
    pub embedding_order: Option<PathBuf>,
}

impl Default for SchemeSection {
    fn default() -> Self {
        SchemeSection {
            kind: SchemeKind::Naive,
            k: 30,
            c: 30,
            sample_cap: 100_000,
            sample_trigger: 1_000_000,
            embedding_dim: 128,
            embeddings: None,
            embedding_order: None,
        }
    }
}

/// Free model hyperparameters. Vocabulary sizes and the head are derived
/// from the corpus and scheme when training starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub num_layers: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub d_ff: usize,
    pub max_input_len: usize,
    pub dropout_rate: f64,
    pub pawa: bool,
    /// Tie decoder targets to the input table when the scheme allows it.
    pub shared_embeddings: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            num_layers: 2,
            d_model: 128,
            num_heads: 4,
            d_ff: 512,
            max_input_len: 128,
            dropout_rate: 0.1,
            pawa: false,
            shared_embeddings: true,
        }
    }
}

/// One mixture entry. `params` may set `len` (firstp), `chunks`/`len`
/// (daq) or `max_per_doc` (d2q).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureItem {
    pub task: TaskKind,
    pub rate: f64,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryGenSection {
    pub num_queries: usize,
    pub top_k: usize,
    pub temperature: f64,
    pub min_words: usize,
    /// Ingest this JSONL instead of running the built-in generator.
    pub file: Option<PathBuf>,
}

impl Default for QueryGenSection {
    fn default() -> Self {
        let g = QueryGenConfig::default();
        QueryGenSection { num_queries: g.num_queries, top_k: g.top_k, temperature: g.temperature, min_words: g.min_words, file: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    pub consistency: Consistency,
    pub clip: Option<f64>,
    pub log_interval: u64,
    /// Steps between intermediate checkpoints; 0 keeps only the final one.
    pub eval_interval: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            steps: 1000,
            batch_size: 32,
            lr: 1e-3,
            warmup_steps: 10_000,
            consistency: Consistency::Off,
            clip: None,
            log_interval: 100,
            eval_interval: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrieveSection {
    pub split: genret_core::corpus::Split,
    pub beam_width: usize,
    pub max_steps: usize,
    pub constrained: bool,
    pub brevity_penalty: f64,
}

impl Default for RetrieveSection {
    fn default() -> Self {
        let b = BeamConfig::default();
        RetrieveSection {
            split: genret_core::corpus::Split::Dev,
            beam_width: b.beam_width,
            max_steps: b.max_steps,
            constrained: b.constrained,
            brevity_penalty: b.brevity_penalty,
        }
    }
}

impl RetrieveSection {
    pub fn beam(&self) -> BeamConfig {
        BeamConfig {
            beam_width: self.beam_width,
            max_steps: self.max_steps,
            constrained: self.constrained,
            brevity_penalty: self.brevity_penalty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub mrr_k: usize,
    pub recall_k: Vec<usize>,
    pub hits_k: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { mrr_k: 10, recall_k: vec![1, 5], hits_k: vec![1, 10] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeSection {
    /// Query budgets per document for the budget ablation; empty skips it.
    pub budgets: Vec<usize>,
    pub strategies: Vec<genret_core::eval::BudgetStrategy>,
    /// Score file for the scored strategy.
    pub scores: Option<PathBuf>,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        AnalyzeSection { budgets: Vec::new(), strategies: vec![genret_core::eval::BudgetStrategy::RandomK], scores: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    /// "base" or "large".
    pub size: String,
    pub corpus_size: Option<usize>,
    pub beam: usize,
}

impl Default for CostSection {
    fn default() -> Self {
        CostSection { size: "base".into(), corpus_size: None, beam: 40 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub synth: SynthConfig,
    pub corpus: CorpusSection,
    pub scheme: SchemeSection,
    pub model: ModelSection,
    pub indexing: IndexingParams,
    pub mixture: Vec<MixtureItem>,
    pub query_gen: QueryGenSection,
    pub train: TrainSection,
    pub retrieve: RetrieveSection,
    pub eval: EvalSection,
    pub analyze: AnalyzeSection,
    pub cost: CostSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: "runs/default".into(),
            synth: SynthConfig::default(),
            corpus: CorpusSection::default(),
            scheme: SchemeSection::default(),
            model: ModelSection::default(),
            indexing: IndexingParams::default(),
            mixture: vec![
                MixtureItem { task: TaskKind::FirstP, rate: 1.0, params: Value::Null },
                MixtureItem { task: TaskKind::LabeledQuery, rate: 1.0, params: Value::Null },
            ],
            query_gen: QueryGenSection::default(),
            train: TrainSection::default(),
            retrieve: RetrieveSection::default(),
            eval: EvalSection::default(),
            analyze: AnalyzeSection::default(),
            cost: CostSection::default(),
        }
    }
}

pub const PRESETS: &[(&str, &str)] = &[
    ("dsi", include_str!("../presets/dsi.json")),
    ("nci", include_str!("../presets/nci.json")),
    ("d2q_only", include_str!("../presets/d2q_only.json")),
];

fn parse_value(v: Value) -> Result<RunConfig> {
    serde_path_to_error::deserialize(v).map_err(|e| Error::config(e.path().to_string(), e.inner().to_string()))
}

/// Overlays `patch` onto `base` key by key.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

/// Parses a `--set` value: JSON if it parses, else a bare string.
fn parse_scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let here = parts[..=i].join(".");
        cur = match cur {
            Value::Object(map) => {
                if !map.contains_key(*part) && i + 1 < parts.len() {
                    return Err(Error::config(here, "no such section"));
                }
                map.entry(part.to_string()).or_insert(Value::Null)
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| Error::config(&here, "expected a list index"))?;
                items.get_mut(idx).ok_or_else(|| Error::config(&here, "index out of range"))?
            }
            _ => return Err(Error::config(here, "not a section")),
        };
    }
    *cur = value;
    Ok(())
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<RunConfig> {
        let text = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| Error::config("preset", format!("unknown preset {name:?}")))?;
        let v: Value = serde_json::from_str(text).map_err(|e| Error::config("preset", e.to_string()))?;
        Self::from_value(v)
    }

    /// Defaults overlaid with `v`.
    pub fn from_value(v: Value) -> Result<RunConfig> {
        let mut base = serde_json::to_value(RunConfig::default()).expect("serializable config");
        if !v.is_object() {
            return Err(Error::config("$", "config must be a JSON object"));
        }
        // Lists replace rather than merge.
        merge(&mut base, v);
        let cfg = parse_value(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}:{}", path.display(), e.line()), e.to_string()))?;
        Self::from_value(v)
    }

    /// Applies `a.b.c=value` overrides, re-validating afterwards.
    pub fn with_overrides<S: AsRef<str>>(&self, sets: &[S]) -> Result<RunConfig> {
        let mut v = serde_json::to_value(self).expect("serializable config");
        for s in sets {
            let s = s.as_ref();
            let (path, raw) = s.split_once('=').ok_or_else(|| Error::config(s, "override must look like path=value"))?;
            set_path(&mut v, path.trim(), parse_scalar(raw.trim()))?;
        }
        let cfg = parse_value(v)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Vec<u8> {
        crate::io::to_json_bytes(self)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.num_layers == 0 || m.d_model == 0 || m.num_heads == 0 || m.d_model % m.num_heads != 0 {
            return Err(Error::config("model.num_heads", "d_model must be a positive multiple of num_heads"));
        }
        if m.max_input_len < 2 {
            return Err(Error::config("model.max_input_len", "must be at least 2"));
        }
        if !(0.0..1.0).contains(&m.dropout_rate) {
            return Err(Error::config("model.dropout_rate", "must lie in [0, 1)"));
        }
        if m.pawa && self.scheme.kind != SchemeKind::Semantic2D {
            return Err(Error::config("model.pawa", "PAWA needs scheme.kind = semantic_2d"));
        }
        if self.scheme.k < 2 {
            return Err(Error::config("scheme.k", "must be at least 2"));
        }
        if self.scheme.c < 1 {
            return Err(Error::config("scheme.c", "must be at least 1"));
        }
        if self.scheme.embeddings.is_some() != self.scheme.embedding_order.is_some() {
            return Err(Error::config("scheme.embedding_order", "embeddings and embedding_order go together"));
        }
        if self.corpus.tokenizer_vocab < genret_core::tokenizer::FIRST_MERGE as usize {
            return Err(Error::config("corpus.tokenizer_vocab", "must cover the 259 byte and special tokens"));
        }
        if self.corpus.target_size == Some(0) {
            return Err(Error::config("corpus.target_size", "must be positive"));
        }
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return Err(Error::config("train.lr", "must be positive"));
        }
        if self.retrieve.beam_width == 0 {
            return Err(Error::config("retrieve.beam_width", "must be positive"));
        }
        if self.eval.mrr_k == 0 || self.eval.recall_k.contains(&0) || self.eval.hits_k.contains(&0) {
            return Err(Error::config("eval", "cutoffs must be positive"));
        }
        self.query_gen_config().validate().map_err(|e| Error::config("query_gen", e.to_string()))?;
        self.mixture_spec()?;
        for (i, item) in self.mixture.iter().enumerate() {
            check_params(item).map_err(|(k, m)| Error::config(format!("mixture.{i}.params.{k}"), m))?;
        }
        if !["base", "large"].contains(&self.cost.size.as_str()) {
            return Err(Error::config("cost.size", "expected \"base\" or \"large\""));
        }
        Ok(())
    }

    pub fn mixture_spec(&self) -> Result<MixtureSpec> {
        let spec = MixtureSpec { entries: self.mixture.iter().map(|m| MixtureEntry { task: m.task, rate: m.rate }).collect() };
        spec.validate().map_err(|e| Error::config("mixture", e.to_string()))?;
        Ok(spec)
    }

    /// Indexing parameters with per-entry overrides applied.
    pub fn indexing_params(&self) -> IndexingParams {
        let mut p = self.indexing;
        p.max_input_len = self.model.max_input_len;
        p.seed = genret_core::seed::derive(self.seed, "daq");
        for item in &self.mixture {
            let get = |k: &str| item.params.get(k).and_then(Value::as_u64).map(|x| x as usize);
            match item.task {
                TaskKind::FirstP => p.firstp_len = get("len").unwrap_or(p.firstp_len),
                TaskKind::DaQ => {
                    p.daq_chunks = get("chunks").unwrap_or(p.daq_chunks);
                    p.daq_len = get("len").unwrap_or(p.daq_len);
                }
                _ => {}
            }
        }
        p
    }

    /// Per-document cap on synthetic queries from the d2q entry, if any.
    pub fn d2q_budget(&self) -> Option<usize> {
        self.mixture
            .iter()
            .find(|m| m.task == TaskKind::D2Q)
            .and_then(|m| m.params.get("max_per_doc"))
            .and_then(Value::as_u64)
            .map(|x| x as usize)
    }

    pub fn query_gen_config(&self) -> QueryGenConfig {
        let q = &self.query_gen;
        QueryGenConfig {
            num_queries: q.num_queries,
            top_k: q.top_k,
            temperature: q.temperature,
            min_words: q.min_words,
            seed: genret_core::seed::derive(self.seed, "query_gen"),
        }
    }
}

fn check_params(item: &MixtureItem) -> std::result::Result<(), (String, String)> {
    let allowed: &[&str] = match item.task {
        TaskKind::FirstP => &["len"],
        TaskKind::DaQ => &["chunks", "len"],
        TaskKind::D2Q => &["max_per_doc"],
        TaskKind::LabeledQuery => &[],
    };
    match &item.params {
        Value::Null => Ok(()),
        Value::Object(map) => {
            for (k, v) in map {
                if !allowed.contains(&k.as_str()) {
                    return Err((k.clone(), format!("unknown parameter for task {}", item.task.as_str())));
                }
                if v.as_u64().filter(|&x| x > 0).is_none() {
                    return Err((k.clone(), "expected a positive integer".into()));
                }
            }
            Ok(())
        }
        _ => Err((String::new(), "params must be an object".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_stable() {
        let c = RunConfig::default();
        let again = RunConfig::from_value(serde_json::from_slice(&c.to_json()).unwrap()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.to_json(), again.to_json());
    }

    #[test]
    fn presets_parse() {
        for (name, _) in PRESETS {
            RunConfig::preset(name).unwrap();
        }
        let nci = RunConfig::preset("nci").unwrap();
        assert!(nci.model.pawa && nci.retrieve.constrained);
    }

    #[test]
    fn dotted_overrides() {
        let c = RunConfig::default().with_overrides(&["train.steps=7", "scheme.kind=atomic", "mixture.0.rate=2"]).unwrap();
        assert_eq!(c.train.steps, 7);
        assert_eq!(c.scheme.kind, SchemeKind::Atomic);
        assert_eq!(c.mixture[0].rate, 2.0);
    }

    #[test]
    fn diagnostics_name_the_field() {
        let e = RunConfig::default().with_overrides(&["train.steps=\"many\""]).unwrap_err();
        assert!(matches!(&e, Error::Config { path, .. } if path == "train.steps"), "{e}");
        let e = RunConfig::default().with_overrides(&["trian.steps=1"]).unwrap_err();
        assert!(matches!(&e, Error::Config { path, .. } if path == "trian"), "{e}");
        let e = RunConfig::from_value(serde_json::json!({"model": {"d_modle": 3}})).unwrap_err();
        assert!(matches!(&e, Error::Config { path, .. } if path == "model.d_modle"), "{e}");
        let e = RunConfig::default().with_overrides(&["model.num_heads=3"]).unwrap_err();
        assert_eq!(e.exit_code(), 1);
        let e = RunConfig::from_value(serde_json::json!({"mixture": [{"task": "daq", "rate": 1, "params": {"size": 2}}]})).unwrap_err();
        assert!(matches!(&e, Error::Config { path, .. } if path == "mixture.0.params.size"), "{e}");
    }
}
