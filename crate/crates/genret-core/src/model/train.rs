use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::config::HeadKind;
use super::graph::Graph;
use super::loss::{position_groups, KL_WEIGHT, SOFTMAX_WEIGHT};
use super::matrix::Matrix;
use super::net::{check_input, check_target, decode, decoder_ids, encode, Packed};
use super::optim::Adam;
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::seed;

/// One training pair in model token space. `target` ends with EOS for
/// sequential heads and is a single class index for atomic ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seq2Seq {
    pub input: Vec<u32>,
    pub target: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Consistency {
    #[default]
    Off,
    /// Symmetric KL between two dropout passes' output distributions.
    Kl,
    /// In-batch contrastive loss over two passes' decoder states.
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainOptions {
    pub consistency: Consistency,
    /// Global gradient norm clip.
    pub clip: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub cross_entropy: f64,
    pub consistency: f64,
    pub total: f64,
    pub nan_detected: bool,
}

/// Loss and parameter gradients for one packed batch.
pub fn loss_and_grads(params: &ModelParams, batch: &[Seq2Seq], options: &TrainOptions, dropout_seed: u64) -> Result<(LossReport, Vec<Matrix>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let atomic = params.config.head_kind == HeadKind::Atomic;
    let mut enc = Packed::default();
    let mut dec = Packed::default();
    let mut labels = Vec::new();
    for ex in batch {
        check_input(params, &ex.input)?;
        check_target(params, &ex.target)?;
        if ex.target.is_empty() || (atomic && ex.target.len() != 1) {
            return Err(Error::InvalidArgument("malformed target".into()));
        }
        enc.push(ex.input.iter().copied());
        dec.push(decoder_ids(params, &ex.target[..ex.target.len() - 1]));
        labels.extend(ex.target.iter().map(|&t| Some(t)));
    }
    let rate = params.config.dropout_rate;
    let mut g = Graph::new(params.values(), Some((rate, seed::rng(dropout_seed))));
    let two = options.consistency != Consistency::Off;
    let e1 = encode(&mut g, params, &enc);
    let o1 = decode(&mut g, params, e1, &dec, &enc.spans);
    let ce1 = g.cross_entropy(o1.logits, &labels);
    let (ce, cons) = if two {
        let e2 = encode(&mut g, params, &enc);
        let o2 = decode(&mut g, params, e2, &dec, &enc.spans);
        let ce2 = g.cross_entropy(o2.logits, &labels);
        let ce = g.weighted(&[(ce1, 0.5), (ce2, 0.5)]);
        let cons = match options.consistency {
            Consistency::Kl => (g.sym_kl(o1.logits, o2.logits), KL_WEIGHT),
            _ => {
                let groups = position_groups(&dec.positions);
                if groups.iter().all(|g| g.len() < 2) {
                    return Err(Error::NoNegatives);
                }
                (g.contrastive(o1.hidden, o2.hidden, &groups), SOFTMAX_WEIGHT)
            }
        };
        (ce, Some(cons))
    } else {
        (ce1, None)
    };
    let mut terms = alloc::vec![(ce, 1.0)];
    terms.extend(cons);
    let root = g.weighted(&terms);
    let report = LossReport {
        cross_entropy: g.scalar(ce),
        consistency: cons.map_or(0.0, |(n, _)| g.scalar(n)),
        total: g.scalar(root),
        nan_detected: !g.scalar(root).is_finite(),
    };
    let mut grads: Vec<Matrix> = params.values().iter().map(|p| Matrix::zeros(p.rows, p.cols)).collect();
    if !report.nan_detected {
        g.backward(root, &mut grads);
    }
    Ok((report, grads))
}

/// Forward, backward and one Adam update. A non-finite loss or gradient
/// leaves parameters and optimizer state untouched.
pub fn train_step(params: &mut ModelParams, opt: &mut Adam, batch: &[Seq2Seq], options: &TrainOptions, dropout_seed: u64) -> Result<LossReport> {
    let (mut report, mut grads) = loss_and_grads(params, batch, options, dropout_seed)?;
    if !report.nan_detected && !grads.iter().all(Matrix::is_finite) {
        report.nan_detected = true;
    }
    if report.nan_detected {
        return Ok(report);
    }
    if let Some(max) = options.clip {
        let norm = grads.iter().flat_map(|g| g.data.iter()).map(|v| v * v).sum::<f64>();
        let norm = num_traits::Float::sqrt(norm);
        if norm > max {
            let s = max / norm;
            grads.iter_mut().for_each(|g| g.data.iter_mut().for_each(|v| *v *= s));
        }
    }
    opt.apply(&mut params.values, &grads);
    Ok(report)
}
