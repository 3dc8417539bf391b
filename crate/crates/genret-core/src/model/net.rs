//! Encoder-decoder forward passes built on the tape.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent with std
use num_traits::Float;

use super::config::HeadKind;
use super::graph::{Graph, NodeId, Segment};
use super::matrix::Matrix;
use super::params::{AttnIds, LayerIds, ModelParams};
use crate::error::{Error, Result};
use crate::seed;
use crate::tokenizer::BOS;

/// Packed rows of one or more sequences.
#[derive(Debug, Default, Clone)]
pub(crate) struct Packed {
    pub ids: Vec<u32>,
    pub positions: Vec<usize>,
    /// `(start, len)` per sequence.
    pub spans: Vec<(usize, usize)>,
}

impl Packed {
    pub fn push(&mut self, seq: impl IntoIterator<Item = u32>) {
        let start = self.ids.len();
        self.ids.extend(seq);
        let len = self.ids.len() - start;
        self.positions.extend(0..len);
        self.spans.push((start, len));
    }

    pub fn self_segments(&self) -> Vec<Segment> {
        self.spans.iter().map(|&(s, n)| Segment { q0: s, qn: n, k0: s, kn: n }).collect()
    }
}

pub(crate) struct Outputs {
    pub hidden: NodeId,
    pub logits: NodeId,
}

fn mha(g: &mut Graph, xq: NodeId, xkv: NodeId, a: &AttnIds, segs: &[Segment], heads: usize, causal: bool) -> NodeId {
    let q = g.linear(xq, a.wq, a.bq);
    let k = g.linear(xkv, a.wk, a.bk);
    let v = g.linear(xkv, a.wv, a.bv);
    let o = g.attention(q, k, v, segs, heads, causal);
    g.linear(o, a.wo, a.bo)
}

/// One pre-norm block. `cross` carries the encoder node and per-sequence
/// cross segments when the layer has cross-attention.
fn block(g: &mut Graph, x: NodeId, l: &LayerIds, heads: usize, self_segs: &[Segment], causal: bool, cross: Option<(NodeId, &[Segment])>) -> NodeId {
    let h = g.layer_norm(x, l.ln_self.gain, l.ln_self.bias);
    let a = mha(g, h, h, &l.self_attn, self_segs, heads, causal);
    let a = g.dropout(a);
    let mut x = g.add(x, a);
    if let (Some((ln, attn)), Some((enc, segs))) = (&l.cross, cross) {
        let h = g.layer_norm(x, ln.gain, ln.bias);
        let a = mha(g, h, enc, attn, segs, heads, false);
        let a = g.dropout(a);
        x = g.add(x, a);
    }
    let h = g.layer_norm(x, l.ln_ffn.gain, l.ln_ffn.bias);
    let f = g.linear(h, l.ffn.w1, l.ffn.b1);
    let f = g.relu(f);
    let f = g.dropout(f);
    let f = g.linear(f, l.ffn.w2, l.ffn.b2);
    let f = g.dropout(f);
    g.add(x, f)
}

pub(crate) fn encode(g: &mut Graph, p: &ModelParams, enc: &Packed) -> NodeId {
    let c = &p.config;
    let lay = &p.layout;
    let mut x = g.embed(lay.input_embed, &enc.ids, &enc.positions);
    x = g.dropout(x);
    let segs = enc.self_segments();
    for l in &lay.encoder {
        x = block(g, x, l, c.num_heads, &segs, false, None);
    }
    let n = lay.enc_norm.expect("encoder norm");
    g.layer_norm(x, n.gain, n.bias)
}

/// Decoder plus output head. `cross` gives each decoder sequence its
/// encoder rows as `(start, len)`.
pub(crate) fn decode(g: &mut Graph, p: &ModelParams, enc: NodeId, dec: &Packed, cross: &[(usize, usize)]) -> Outputs {
    let c = &p.config;
    let lay = &p.layout;
    let self_segs = dec.self_segments();
    let cross_segs: Vec<Segment> = dec
        .spans
        .iter()
        .zip(cross)
        .map(|(&(q0, qn), &(k0, kn))| Segment { q0, qn, k0, kn })
        .collect();
    let mut x = g.embed(lay.target_embed, &dec.ids, &dec.positions);
    x = g.dropout(x);
    for l in &lay.decoder {
        x = block(g, x, l, c.num_heads, &self_segs, true, Some((enc, &cross_segs)));
    }
    let n = lay.dec_norm.expect("decoder norm");
    let hidden = g.layer_norm(x, n.gain, n.bias);
    let scale = 1.0 / (c.d_model as f64).sqrt();
    let logits = match c.head_kind {
        HeadKind::Standard => g.project(hidden, lay.target_embed, scale),
        HeadKind::Atomic => g.project(hidden, lay.atomic_head.expect("atomic head"), 1.0),
        HeadKind::Pawa => {
            let adapt = pawa_adaptation(g, p, dec, &self_segs);
            g.pawa(hidden, adapt, lay.target_embed, scale)
        }
    };
    Outputs { hidden, logits }
}

/// Auxiliary decoder over the prefix, producing one `d*d` adaptation row
/// per decoder position.
fn pawa_adaptation(g: &mut Graph, p: &ModelParams, dec: &Packed, segs: &[Segment]) -> NodeId {
    let pw = p.layout.pawa.as_ref().expect("pawa layout");
    let mut x = g.embed(p.layout.target_embed, &dec.ids, &dec.positions);
    x = g.dropout(x);
    for l in &pw.layers {
        x = block(g, x, l, p.config.num_heads, segs, true, None);
    }
    let h = g.layer_norm(x, pw.norm.gain, pw.norm.bias);
    g.linear(h, pw.adapt_w, pw.adapt_b)
}

pub(crate) fn check_input(p: &ModelParams, input: &[u32]) -> Result<()> {
    let c = &p.config;
    if input.is_empty() || input.len() > c.max_input_len {
        return Err(Error::SequenceTooLong { len: input.len(), max: c.max_input_len });
    }
    if let Some(&t) = input.iter().find(|&&t| t as usize >= c.input_vocab_size) {
        return Err(Error::TokenOutOfRange { token: t, vocab: c.input_vocab_size });
    }
    Ok(())
}

pub(crate) fn check_target(p: &ModelParams, target: &[u32]) -> Result<()> {
    let c = &p.config;
    if target.len() > c.max_target_len {
        return Err(Error::SequenceTooLong { len: target.len(), max: c.max_target_len });
    }
    if let Some(&t) = target.iter().find(|&&t| t as usize >= c.target_vocab_size) {
        return Err(Error::TokenOutOfRange { token: t, vocab: c.target_vocab_size });
    }
    Ok(())
}

/// Decoder input tokens: BOS followed by the prefix. Prefix tokens are in
/// the decoder table's id space; atomic models only ever see BOS.
pub(crate) fn decoder_ids(p: &ModelParams, prefix: &[u32]) -> Vec<u32> {
    let mut v = vec![BOS];
    if p.config.head_kind != HeadKind::Atomic {
        v.extend_from_slice(prefix);
    }
    v
}

/// Logits for every decoder position given `target_prefix`: row `t` scores
/// the token following `target_prefix[..t]`.
///
/// `dropout_seed` switches dropout on with a fixed mask stream.
pub fn forward(params: &ModelParams, input: &[u32], target_prefix: &[u32], dropout_seed: Option<u64>) -> Result<Matrix> {
    check_input(params, input)?;
    check_target(params, target_prefix)?;
    if params.config.head_kind == HeadKind::Atomic && !target_prefix.is_empty() {
        return Err(Error::WrongHead { expected: "sequential", found: "atomic" });
    }
    let dropout = dropout_seed.map(|s| (params.config.dropout_rate, seed::rng(s)));
    let mut g = Graph::new(params.values(), dropout);
    let mut enc = Packed::default();
    enc.push(input.iter().copied());
    let e = encode(&mut g, params, &enc);
    let mut dec = Packed::default();
    dec.push(decoder_ids(params, target_prefix));
    let out = decode(&mut g, params, e, &dec, &enc.spans);
    Ok(g.value(out.logits).clone())
}

/// Final decoder states (after the last norm) for `target_prefix`.
pub fn decoder_hidden(params: &ModelParams, input: &[u32], target_prefix: &[u32]) -> Result<Matrix> {
    check_input(params, input)?;
    check_target(params, target_prefix)?;
    let mut g = Graph::new(params.values(), None);
    let mut enc = Packed::default();
    enc.push(input.iter().copied());
    let e = encode(&mut g, params, &enc);
    let mut dec = Packed::default();
    dec.push(decoder_ids(params, target_prefix));
    let out = decode(&mut g, params, e, &dec, &enc.spans);
    Ok(g.value(out.hidden).clone())
}

/// Encoder output for one query, reused across decode steps.
pub fn encode_input(params: &ModelParams, input: &[u32]) -> Result<Matrix> {
    check_input(params, input)?;
    let mut g = Graph::new(params.values(), None);
    let mut enc = Packed::default();
    enc.push(input.iter().copied());
    let e = encode(&mut g, params, &enc);
    Ok(g.value(e).clone())
}

/// Next-token log-probabilities for each prefix, one row per prefix, all
/// sharing the encoder output `encoded`.
pub fn next_token_log_probs(params: &ModelParams, encoded: &Matrix, prefixes: &[&[u32]]) -> Result<Matrix> {
    if encoded.cols != params.config.d_model {
        return Err(Error::DimensionMismatch { expected: params.config.d_model, found: encoded.cols });
    }
    for pfx in prefixes {
        if pfx.len() >= params.config.max_target_len.max(1) && params.config.head_kind != HeadKind::Atomic {
            return Err(Error::SequenceTooLong { len: pfx.len() + 1, max: params.config.max_target_len });
        }
        check_target(params, pfx)?;
    }
    let mut g = Graph::new(params.values(), None);
    let e = g.input(encoded.clone());
    let mut dec = Packed::default();
    for pfx in prefixes {
        dec.push(decoder_ids(params, pfx));
    }
    let cross: Vec<(usize, usize)> = prefixes.iter().map(|_| (0, encoded.rows)).collect();
    let out = decode(&mut g, params, e, &dec, &cross);
    let logits = g.value(out.logits);
    let mut res = Matrix::zeros(prefixes.len(), logits.cols);
    for (i, &(s, n)) in dec.spans.iter().enumerate() {
        let row = logits.row(s + n - 1);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for (o, v) in res.row_mut(i).iter_mut().zip(row) {
            *o = v - lse;
        }
    }
    Ok(res)
}

/// PAWA logits for decoder states `hidden` (one row per position of
/// `[BOS] + prefix`).
pub fn pawa_logits(params: &ModelParams, hidden: &Matrix, prefix: &[u32]) -> Result<Matrix> {
    if params.config.head_kind != HeadKind::Pawa {
        return Err(Error::WrongHead { expected: "pawa", found: params.config.head_kind.as_str() });
    }
    check_target(params, prefix)?;
    if hidden.rows != prefix.len() + 1 || hidden.cols != params.config.d_model {
        return Err(Error::DimensionMismatch { expected: prefix.len() + 1, found: hidden.rows });
    }
    let mut g = Graph::new(params.values(), None);
    let h = g.input(hidden.clone());
    let mut dec = Packed::default();
    dec.push(decoder_ids(params, prefix));
    let segs = dec.self_segments();
    let adapt = pawa_adaptation(&mut g, params, &dec, &segs);
    let scale = 1.0 / (params.config.d_model as f64).sqrt();
    let l = g.pawa(h, adapt, params.layout.target_embed, scale);
    Ok(g.value(l).clone())
}

/// `scale * E (I + A) h` for a single state, with `adapt` the row-major
/// `d x d` matrix `A`. With `A = 0` this is the plain tied projection.
pub fn pawa_project(table: &Matrix, h: &[f64], adapt: &[f64], scale: f64) -> Vec<f64> {
    let d = h.len();
    let u: Vec<f64> = (0..d).map(|i| h[i] + adapt[i * d..(i + 1) * d].iter().zip(h).map(|(a, b)| a * b).sum::<f64>()).collect();
    (0..table.rows).map(|r| scale * table.row(r).iter().zip(&u).map(|(a, b)| a * b).sum::<f64>()).collect()
}
