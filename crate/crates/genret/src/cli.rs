//! Subcommands. Every stage writes into its own directory under
//! `output_dir`, together with the resolved config and a lock file held
//! while it runs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use genret_core::corpus::{coverage_stats, Corpus, Qrels, Split};
use genret_core::docid::SchemeKind;
use genret_core::eval::{cost_estimate, jaccard_bucket_analysis, query_budget_ablation, BudgetRow, CostReport, JaccardReport};
use genret_core::model::ModelConfig;
use log::info;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{self, DirLock};
use crate::pipeline;
use crate::synth::synth_corpus;

#[derive(Debug, Parser)]
#[command(name = "genret", version, about = "Generative retrieval: index a corpus into a seq2seq model and retrieve by decoding ids")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run config (JSON). Defaults apply to anything it leaves out.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Start from a shipped preset: dsi, nci, d2q_only.
    #[arg(long)]
    pub preset: Option<String>,
    /// Dotted override, e.g. `--set train.steps=500`. Repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub sets: Vec<String>,
    /// Overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus to the configured corpus paths.
    Synth(Common),
    /// Load the corpus files, subset to `corpus.target_size`, store the result.
    Subset(Common),
    /// Assign document identifiers.
    BuildIds(Common),
    /// Generate (or ingest) synthetic queries.
    GenQueries(Common),
    /// Train the model on the configured mixture.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the stored checkpoint for another `train.steps`.
        #[arg(long)]
        resume: bool,
    },
    /// Decode identifiers for the queries of `retrieve.split`.
    Retrieve(Common),
    /// Score a run file against qrels.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Run file; defaults to the retrieve stage output.
        #[arg(long)]
        run: Option<PathBuf>,
        /// Qrels TSV; defaults to the stored corpus qrels for the split.
        #[arg(long)]
        qrels: Option<PathBuf>,
    },
    /// Jaccard bucket analysis and optional query-budget ablation.
    Analyze(Common),
    /// Parameter and FLOPs accounting for a full-size configuration.
    Cost(Common),
    /// Print a preset's JSON.
    Preset { name: String },
}

/// Per-stage directories under the output root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }
    pub fn ids(&self) -> PathBuf {
        self.root.join("ids")
    }
    pub fn queries(&self) -> PathBuf {
        self.root.join("queries")
    }
    pub fn synthetic(&self) -> PathBuf {
        self.queries().join("synthetic.jsonl")
    }
    pub fn train(&self) -> PathBuf {
        self.root.join("train")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.train().join("checkpoint")
    }
    pub fn retrieve(&self) -> PathBuf {
        self.root.join("retrieve")
    }
    pub fn run_file(&self) -> PathBuf {
        self.retrieve().join("run.tsv")
    }
    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }
    pub fn analyze(&self) -> PathBuf {
        self.root.join("analyze")
    }
    pub fn cost(&self) -> PathBuf {
        self.root.join("cost")
    }
}

pub fn resolve(common: &Common) -> Result<RunConfig> {
    let base = match (&common.config, &common.preset) {
        (Some(_), Some(_)) => return Err(Error::config("--preset", "use either --config or --preset")),
        (Some(path), None) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => RunConfig::default(),
    };
    let mut cfg = base.with_overrides(&common.sets)?;
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

/// Locks `dir` and records the resolved config in it.
fn open_stage(dir: &Path, cfg: &RunConfig) -> Result<DirLock> {
    let lock = DirLock::acquire(dir)?;
    io::write_atomic(&dir.join("config.json"), &cfg.to_json())?;
    Ok(lock)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(c) => cmd_synth(&resolve(&c)?),
        Command::Subset(c) => cmd_subset(&resolve(&c)?),
        Command::BuildIds(c) => cmd_build_ids(&resolve(&c)?),
        Command::GenQueries(c) => cmd_gen_queries(&resolve(&c)?),
        Command::Train { common, resume } => cmd_train(&resolve(&common)?, resume),
        Command::Retrieve(c) => cmd_retrieve(&resolve(&c)?),
        Command::Eval { common, run, qrels } => cmd_eval(&resolve(&common)?, run.as_deref(), qrels.as_deref()),
        Command::Analyze(c) => cmd_analyze(&resolve(&c)?),
        Command::Cost(c) => cmd_cost(&resolve(&c)?).map(|r| print!("{}", cost_text(&r))),
        Command::Preset { name } => {
            print!("{}", String::from_utf8_lossy(&RunConfig::preset(&name)?.to_json()));
            Ok(())
        }
    }
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let raw = synth_corpus(&cfg.synth);
    // Round-trip through the corpus writer so the files use the same formats
    // as everything else; the tokenizer is not needed here.
    let corpus = Corpus::with_tokenizer(raw, Default::default(), Default::default())?;
    let dir = cfg.corpus.docs.parent().map(Path::to_path_buf).unwrap_or_default();
    let _lock = open_stage(&dir, cfg)?;
    let tmp = tempfile::tempdir_in(&dir).map_err(|e| Error::io(&dir, e))?;
    io::write_corpus(tmp.path(), &corpus)?;
    for (name, dest) in [(io::DOCS_FILE, &cfg.corpus.docs), (io::QUERIES_FILE, &cfg.corpus.queries), (io::QRELS_FILE, &cfg.corpus.qrels)] {
        let bytes = std::fs::read(tmp.path().join(name)).map_err(|e| Error::io(name, e))?;
        io::write_atomic(dest, &bytes)?;
    }
    info!("synthetic corpus: {} docs -> {}", corpus.len(), dir.display());
    Ok(())
}

pub fn cmd_subset(cfg: &RunConfig) -> Result<()> {
    let layout = Layout { root: cfg.output_dir.clone() };
    let dir = layout.corpus();
    let _lock = open_stage(&dir, cfg)?;
    let corpus = pipeline::prepare_corpus(cfg)?;
    io::write_corpus(&dir, &corpus)?;
    let coverage = coverage_stats(&corpus)?;
    io::write_json(&dir.join("coverage.json"), &serde_json::json!({ "train_query_coverage": coverage }))?;
    info!("corpus: {} docs, coverage {:.3}", corpus.len(), coverage);
    Ok(())
}

pub fn cmd_build_ids(cfg: &RunConfig) -> Result<()> {
    let layout = Layout { root: cfg.output_dir.clone() };
    let corpus = io::read_corpus(&layout.corpus())?;
    let dir = layout.ids();
    let _lock = open_stage(&dir, cfg)?;
    let built = pipeline::build_ids(cfg, &corpus)?;
    io::write_scheme(&dir, &built.scheme)?;
    if let Some(tree) = &built.tree {
        io::write_json(&dir.join("tree.json"), tree)?;
    }
    if let Some(emb) = &built.embeddings {
        io::write_embeddings(&dir.join("embeddings.bin"), &dir.join("embeddings.order"), emb)?;
    }
    info!("{} ids for {} docs, max length {}", built.scheme.kind(), built.scheme.len(), built.scheme.max_len());
    Ok(())
}

pub fn cmd_gen_queries(cfg: &RunConfig) -> Result<()> {
    let layout = Layout { root: cfg.output_dir.clone() };
    let corpus = io::read_corpus(&layout.corpus())?;
    let dir = layout.queries();
    let _lock = open_stage(&dir, cfg)?;
    let qset = pipeline::synthetic_queries(cfg, &corpus)?;
    for w in &qset.warnings {
        log::warn!("{w}");
    }
    io::write_synthetic_queries(&layout.synthetic(), &qset)?;
    info!("{} synthetic queries from {}", qset.total(), qset.generator);
    Ok(())
}

fn needs_queries(cfg: &RunConfig) -> bool {
    cfg.mixture.iter().any(|m| m.task == genret_core::tasks::TaskKind::D2Q && m.rate > 0.0)
}

pub fn cmd_train(cfg: &RunConfig, resume: bool) -> Result<()> {
    let layout = Layout { root: cfg.output_dir.clone() };
    let corpus = io::read_corpus(&layout.corpus())?;
    let scheme = io::read_scheme(&layout.ids())?;
    let qset = if needs_queries(cfg) { Some(io::read_synthetic_queries(&layout.synthetic(), &corpus)?) } else { None };
    let dir = layout.train();
    let _lock = open_stage(&dir, cfg)?;
    let mc = pipeline::model_config(cfg, &corpus.tokenizer, &scheme)?;
    let (mut params, mut opt) = if resume {
        let (p, o) = io::read_checkpoint(&layout.checkpoint())?;
        if p.config != mc {
            return Err(Error::Data("stored checkpoint was trained with a different model config".into()));
        }
        let o = o.ok_or_else(|| Error::Data("checkpoint has no optimizer.bin to resume from".into()))?;
        (p, o)
    } else {
        pipeline::fresh_model(cfg, &mc)?
    };
    let sources = pipeline::training_sources(cfg, &corpus, &scheme, qset.as_ref())?;
    let log_path = dir.join("log.jsonl");
    let mut log_bytes = if resume { std::fs::read(&log_path).unwrap_or_default() } else { Vec::new() };
    info!("training {} params for {} steps", params.num_params(), cfg.train.steps);
    let t = Instant::now();
    let summary = pipeline::train(cfg, &mut params, &mut opt, &sources, &scheme, |row| {
        serde_json::to_writer(&mut log_bytes, row).expect("serializable row");
        log_bytes.push(b'\n');
        if row.nan_detected {
            log::warn!("step {}: non-finite loss, update skipped", row.step);
        } else {
            info!("step {} loss {:.4} ({:.0}s)", row.step, row.window_loss, t.elapsed().as_secs_f64());
        }
        if cfg.train.eval_interval > 0 && row.step % cfg.train.eval_interval == 0 {
            io::write_atomic(&log_path, &log_bytes)?;
        }
        Ok(())
    })?;
    io::write_checkpoint(&layout.checkpoint(), &params, Some(&opt))?;
    io::write_atomic(&log_path, &log_bytes)?;
    io::write_json(&dir.join("summary.json"), &summary)?;
    Ok(())
}

fn split_queries(corpus: &Corpus, split: Split) -> Vec<(String, String)> {
    corpus.queries(split).values().map(|q| (q.query_id.clone(), q.text.clone())).collect()
}

pub fn cmd_retrieve(cfg: &RunConfig) -> Result<()> {
    let layout = Layout { root: cfg.output_dir.clone() };
    let corpus = io::read_corpus(&layout.corpus())?;
    let scheme = io::read_scheme(&layout.ids())?;
    let (params, _) = io::read_checkpoint(&layout.checkpoint())?;
    let dir = layout.retrieve();
    let _lock = open_stage(&dir, cfg)?;
    let queries = split_queries(&corpus, cfg.retrieve.split);
    let runs = pipeline::retrieve(&params, &scheme, &corpus.tokenizer, &queries, &cfg.retrieve.beam())?;
    let warnings: Vec<&String> = runs.iter().flat_map(|r| &r.warnings).collect();
    for w in &warnings {
        log::warn!("{w}");
    }
    io::write_run(&layout.run_file(), &runs)?;
    info!("retrieved {} queries", runs.len());
    Ok(())
}

#[derive(Serialize)]
struct EvalFile<'a> {
    split: Split,
    reports: &'a [genret_core::eval::EvalReport],
}

pub fn cmd_eval(cfg: &RunConfig, run: Option<&Path>, qrels: Option<&Path>) -> Result<()> {
    let layout = Layout { root: cfg.output_dir.clone() };
    let run_path = run.map(Path::to_path_buf).unwrap_or_else(|| layout.run_file());
    let runs = io::read_run(&run_path)?;
    let qrels: Qrels = match qrels {
        Some(p) => io::read_qrels(p)?.into_iter().collect(),
        None => io::read_corpus(&layout.corpus())?.qrels(cfg.retrieve.split).clone(),
    };
    let dir = layout.eval();
    let _lock = open_stage(&dir, cfg)?;
    let reports = pipeline::evaluate(&runs, &qrels, &cfg.eval)?;
    io::write_json(&dir.join("report.json"), &EvalFile { split: cfg.retrieve.split, reports: &reports })?;
    let table = pipeline::report_table(&reports);
    io::write_atomic(&dir.join("report.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

fn jaccard_csv(r: &JaccardReport) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["bucket_lower", "bucket_upper", "count", "mean_metric"]).expect("in-memory csv");
    for b in &r.buckets {
        w.write_record([b.lower.to_string(), b.upper.to_string(), b.count.to_string(), format!("{:.6}", b.mean_metric)])
            .expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

fn budget_csv(rows: &[BudgetRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["budget", "strategy", "metric"]).expect("in-memory csv");
    for r in rows {
        let s = serde_json::to_value(r.strategy).expect("serializable").as_str().unwrap_or_default().to_string();
        w.write_record([r.budget.to_string(), s, format!("{:.6}", r.metric)]).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

/// Jaccard buckets over the dev split's per-query MRR from the eval stage;
/// with `analyze.budgets` set, retrains once per (budget, strategy) cell.
pub fn cmd_analyze(cfg: &RunConfig) -> Result<()> {
    let layout = Layout { root: cfg.output_dir.clone() };
    let corpus = io::read_corpus(&layout.corpus())?;
    let qset = io::read_synthetic_queries(&layout.synthetic(), &corpus)?;
    let runs = io::read_run(&layout.run_file())?;
    let split = cfg.retrieve.split;
    let mrr = genret_core::eval::mrr_at_k(&runs, corpus.qrels(split), cfg.eval.mrr_k)?;
    let dir = layout.analyze();
    let _lock = open_stage(&dir, cfg)?;
    let report = jaccard_bucket_analysis(&qset, corpus.queries(split), corpus.qrels(split), &mrr.per_query);
    io::write_json(&dir.join("jaccard.json"), &report)?;
    io::write_atomic(&dir.join("jaccard.csv"), &jaccard_csv(&report))?;
    if cfg.analyze.budgets.is_empty() {
        return Ok(());
    }
    let scheme = io::read_scheme(&layout.ids())?;
    let scores = cfg.analyze.scores.as_deref().map(io::read_scores).transpose()?;
    let queries = split_queries(&corpus, split);
    let rows = query_budget_ablation(
        &qset,
        &cfg.analyze.budgets,
        &cfg.analyze.strategies,
        scores.as_ref(),
        genret_core::seed::derive(cfg.seed, "budget"),
        |subset| {
            let run = || -> Result<f64> {
                let mc = pipeline::model_config(cfg, &corpus.tokenizer, &scheme)?;
                let (mut params, mut opt) = pipeline::fresh_model(cfg, &mc)?;
                let sources = pipeline::training_sources(cfg, &corpus, &scheme, Some(subset))?;
                pipeline::train(cfg, &mut params, &mut opt, &sources, &scheme, |_| Ok(()))?;
                let runs = pipeline::retrieve(&params, &scheme, &corpus.tokenizer, &queries, &cfg.retrieve.beam())?;
                Ok(genret_core::eval::mrr_at_k(&runs, corpus.qrels(split), cfg.eval.mrr_k)?.mean)
            };
            run().map_err(|e| genret_core::Error::InvalidArgument(e.to_string()))
        },
    )?;
    io::write_atomic(&dir.join("budget.csv"), &budget_csv(&rows))?;
    io::write_json(&dir.join("budget.json"), &rows)
}

/// Identifier depth and vocabulary implied by `kind` over `n` documents.
pub fn id_shape(kind: SchemeKind, n: usize, k: usize, c: usize) -> (usize, usize) {
    match kind {
        SchemeKind::Atomic => (1, n),
        SchemeKind::Naive => (n.saturating_sub(1).max(1).to_string().len(), 256),
        SchemeKind::Semantic | SchemeKind::Semantic2D => {
            let mut depth = 1;
            let mut cap = c.max(1);
            while cap < n {
                cap = cap.saturating_mul(k.max(2));
                depth += 1;
            }
            let width = k.max(c);
            (depth, if kind == SchemeKind::Semantic2D { width * depth } else { width })
        }
    }
}

/// Sizes the configured base/large model for `scheme.kind` over
/// `cost.corpus_size` documents (or the stored corpus when unset).
pub fn cmd_cost(cfg: &RunConfig) -> Result<CostReport> {
    let layout = Layout { root: cfg.output_dir.clone() };
    let n = match cfg.cost.corpus_size {
        Some(n) => n,
        None => io::read_corpus(&layout.corpus())
            .map_err(|_| Error::config("cost.corpus_size", "unset and no stored corpus to measure"))?
            .len(),
    };
    let kind = cfg.scheme.kind;
    let (depth, vocab) = id_shape(kind, n, cfg.scheme.k, cfg.scheme.c);
    let mc = if cfg.cost.size == "large" { ModelConfig::large(kind, n, vocab) } else { ModelConfig::base(kind, n, vocab) };
    let report = cost_estimate(&mc, kind, n, depth, cfg.cost.beam);
    let dir = layout.cost();
    let _lock = open_stage(&dir, cfg)?;
    io::write_json(&dir.join("cost.json"), &report)?;
    io::write_atomic(&dir.join("cost.txt"), cost_text(&report).as_bytes())?;
    Ok(report)
}

fn human(x: f64) -> String {
    let units = [(1e12, "T"), (1e9, "B"), (1e6, "M"), (1e3, "K")];
    for (scale, u) in units {
        if x >= scale {
            return format!("{:.1}{u}", x / scale);
        }
    }
    format!("{x:.0}")
}

pub fn cost_text(r: &CostReport) -> String {
    let b = &r.breakdown;
    let mut s = String::new();
    s.push_str(&format!("{:<18} {}\n", "scheme", r.scheme));
    s.push_str(&format!("{:<18} {}\n", "corpus_size", r.corpus_size));
    s.push_str(&format!("{:<18} {} ({})\n", "params", r.total_params, human(r.total_params as f64)));
    for (name, v) in [("embeddings", b.embeddings), ("encoder", b.encoder), ("decoder", b.decoder), ("head", b.head), ("auxiliary", b.auxiliary)] {
        s.push_str(&format!("  {:<16} {}\n", name, v));
    }
    s.push_str(&format!("{:<18} {:.2e}\n", "inference_flops", r.inference_flops));
    s.push_str(&format!("  convention       {}\n", r.flops_convention));
    s.push_str(&format!("{:<18} {:.2e}\n", "component_flops", r.component_flops));
    s.push_str(&format!("  convention       {}\n", r.component_convention));
    s
}
