use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent with std
use num_traits::Float;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{HeadKind, ModelConfig};
use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct AttnIds {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct FfnIds {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LnIds {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct LayerIds {
    pub ln_self: LnIds,
    pub self_attn: AttnIds,
    pub cross: Option<(LnIds, AttnIds)>,
    pub ln_ffn: LnIds,
    pub ffn: FfnIds,
}

/// Indices of every tensor in [`ModelParams::tensors`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub(crate) struct Layout {
    pub input_embed: usize,
    pub target_embed: usize,
    pub encoder: Vec<LayerIds>,
    pub enc_norm: Option<LnIds>,
    pub decoder: Vec<LayerIds>,
    pub dec_norm: Option<LnIds>,
    pub atomic_head: Option<usize>,
    pub pawa: Option<PawaIds>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct PawaIds {
    pub layers: Vec<LayerIds>,
    pub norm: LnIds,
    pub adapt_w: usize,
    pub adapt_b: usize,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

struct Spec {
    name: String,
    rows: usize,
    cols: usize,
    init: Init,
}

struct Builder {
    specs: Vec<Spec>,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.specs.push(Spec { name, rows, cols, init });
        self.specs.len() - 1
    }

    fn ln(&mut self, p: &str, d: usize) -> LnIds {
        LnIds {
            gain: self.add(format!("{p}.gain"), 1, d, Init::Ones),
            bias: self.add(format!("{p}.bias"), 1, d, Init::Zeros),
        }
    }

    fn attn(&mut self, p: &str, d: usize) -> AttnIds {
        let s = Init::Normal(1.0 / (d as f64).sqrt());
        let mut lin = |n: &str| {
            (self.add(format!("{p}.w{n}"), d, d, s), self.add(format!("{p}.b{n}"), 1, d, Init::Zeros))
        };
        let (wq, bq) = lin("q");
        let (wk, bk) = lin("k");
        let (wv, bv) = lin("v");
        let (wo, bo) = lin("o");
        AttnIds { wq, bq, wk, bk, wv, bv, wo, bo }
    }

    fn ffn(&mut self, p: &str, d: usize, f: usize) -> FfnIds {
        FfnIds {
            w1: self.add(format!("{p}.w1"), d, f, Init::Normal(1.0 / (d as f64).sqrt())),
            b1: self.add(format!("{p}.b1"), 1, f, Init::Zeros),
            w2: self.add(format!("{p}.w2"), f, d, Init::Normal(1.0 / (f as f64).sqrt())),
            b2: self.add(format!("{p}.b2"), 1, d, Init::Zeros),
        }
    }

    fn layer(&mut self, p: &str, c: &ModelConfig, cross: bool) -> LayerIds {
        let d = c.d_model;
        let ln_self = self.ln(&format!("{p}.ln_self"), d);
        let self_attn = self.attn(&format!("{p}.self_attn"), d);
        let cross = cross.then(|| (self.ln(&format!("{p}.ln_cross"), d), self.attn(&format!("{p}.cross_attn"), d)));
        let ln_ffn = self.ln(&format!("{p}.ln_ffn"), d);
        let ffn = self.ffn(&format!("{p}.ffn"), d, c.d_ff);
        LayerIds { ln_self, self_attn, cross, ln_ffn, ffn }
    }
}

fn plan(c: &ModelConfig) -> (Layout, Vec<Spec>) {
    let d = c.d_model;
    let mut b = Builder { specs: Vec::new() };
    let mut l = Layout { input_embed: b.add("embed.input".into(), c.input_vocab_size, d, Init::Normal(1.0)), ..Layout::default() };
    l.target_embed = if c.shared_embeddings {
        l.input_embed
    } else if c.head_kind == HeadKind::Atomic {
        l.input_embed
    } else {
        b.add("embed.target".into(), c.target_vocab_size, d, Init::Normal(1.0))
    };
    l.encoder = (0..c.num_layers).map(|i| b.layer(&format!("encoder.{i}"), c, false)).collect();
    l.enc_norm = Some(b.ln("encoder.norm", d));
    l.decoder = (0..c.num_layers).map(|i| b.layer(&format!("decoder.{i}"), c, true)).collect();
    l.dec_norm = Some(b.ln("decoder.norm", d));
    match c.head_kind {
        HeadKind::Standard => {}
        HeadKind::Atomic => {
            l.atomic_head = Some(b.add("head.atomic".into(), c.target_vocab_size, d, Init::Normal(1.0 / (d as f64).sqrt())));
        }
        HeadKind::Pawa => {
            let layers = (0..c.num_layers).map(|i| b.layer(&format!("pawa.{i}"), c, false)).collect();
            let norm = b.ln("pawa.norm", d);
            let small = Init::Normal(1.0 / (d as f64).powf(1.5));
            let adapt_w = b.add("pawa.adapt.w".into(), d, d * d, small);
            let adapt_b = b.add("pawa.adapt.b".into(), 1, d * d, Init::Zeros);
            l.pawa = Some(PawaIds { layers, norm, adapt_w, adapt_b });
        }
    }
    (l, b.specs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub value: Matrix,
}

/// All trainable tensors of a model plus its config.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub(crate) names: Vec<String>,
    pub(crate) values: Vec<Matrix>,
    pub(crate) layout: Layout,
}

/// Fresh parameters, deterministic in `seed`.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let (layout, specs) = plan(config);
    let mut rng = seed::rng(seed::derive(seed, "init"));
    let tensors = specs
        .into_iter()
        .map(|s| {
            let data = match s.init {
                Init::Zeros => alloc::vec![0.0; s.rows * s.cols],
                Init::Ones => alloc::vec![1.0; s.rows * s.cols],
                Init::Normal(std) => {
                    let n = Normal::new(0.0, std).expect("positive std");
                    (0..s.rows * s.cols).map(|_| n.sample(&mut rng)).collect()
                }
            };
            Tensor { name: s.name, value: Matrix::from_vec(s.rows, s.cols, data) }
        })
        .collect();
    Ok(ModelParams::assemble(config.clone(), tensors, layout))
}

/// Closed-form parameter count for a config, without allocating.
pub fn param_count(config: &ModelConfig) -> u64 {
    let (d, f, l) = (config.d_model as u64, config.d_ff as u64, config.num_layers as u64);
    let attn = 4 * (d * d + d);
    let ln = 2 * d;
    let ffn = d * f + f + f * d + d;
    let enc = l * (attn + 2 * ln + ffn) + ln;
    let dec = l * (2 * attn + 3 * ln + ffn) + ln;
    let mut total = config.input_vocab_size as u64 * d + enc + dec;
    match config.head_kind {
        HeadKind::Atomic => total += config.target_vocab_size as u64 * d,
        HeadKind::Standard | HeadKind::Pawa if !config.shared_embeddings => {
            total += config.target_vocab_size as u64 * d
        }
        _ => {}
    }
    if config.head_kind == HeadKind::Pawa {
        total += l * (attn + 2 * ln + ffn) + ln + d * d * d + d * d;
    }
    total
}

impl ModelParams {
    fn assemble(config: ModelConfig, tensors: Vec<Tensor>, layout: Layout) -> Self {
        let (names, values) = tensors.into_iter().map(|t| (t.name, t.value)).unzip();
        ModelParams { config, names, values, layout }
    }

    /// Rebuilds from named tensors, checking names and shapes against the config.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = plan(&config);
        if specs.len() != tensors.len() {
            return Err(Error::CheckpointMismatch(format!("expected {} tensors, found {}", specs.len(), tensors.len())));
        }
        for (s, t) in specs.iter().zip(&tensors) {
            if s.name != t.name || s.rows != t.value.rows || s.cols != t.value.cols || t.value.data.len() != s.rows * s.cols {
                return Err(Error::CheckpointMismatch(format!(
                    "tensor {} ({}x{}) does not match expected {} ({}x{})",
                    t.name, t.value.rows, t.value.cols, s.name, s.rows, s.cols
                )));
            }
        }
        Ok(Self::assemble(config, tensors, layout))
    }

    /// Named tensors in layout order.
    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.names.into_iter().zip(self.values).map(|(name, value)| Tensor { name, value }).collect()
    }

    pub fn tensor(&self, name: &str) -> Option<&Matrix> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    pub fn num_params(&self) -> u64 {
        self.values.iter().map(|v| v.len() as u64).sum()
    }

    pub(crate) fn values(&self) -> &[Matrix] {
        &self.values
    }

    /// Overwrites one named tensor. Used by fault-injection tests and tools.
    pub fn set_tensor(&mut self, name: &str, value: Matrix) -> Result<()> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::CheckpointMismatch(format!("no tensor named {name}")))?;
        let t = &mut self.values[i];
        if (t.rows, t.cols) != (value.rows, value.cols) {
            return Err(Error::DimensionMismatch { expected: t.len(), found: value.len() });
        }
        *t = value;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }
}
