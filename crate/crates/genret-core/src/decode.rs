//! Beam search over identifier sequences and single-step atomic ranking.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::docid::{DocIdScheme, Next, SchemeKind, Trie};
use crate::error::{Error, Result};
use crate::model::{encode_input, next_token_log_probs, scheme_token, HeadKind, ModelParams};
use crate::tokenizer::{EOS, NUM_SPECIAL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub doc_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RankedList {
    pub query_id: String,
    pub results: Vec<Ranked>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RankedList {
    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.results.iter().map(|r| r.doc_id.as_str())
    }

    /// 1-based rank of `doc_id`.
    pub fn rank_of(&self, doc_id: &str) -> Option<usize> {
        self.results.iter().position(|r| r.doc_id == doc_id).map(|p| p + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam_width: usize,
    /// Identifier tokens before EOS.
    pub max_steps: usize,
    pub constrained: bool,
    /// Score of a finished hypothesis is `logp + brevity_penalty * len`.
    pub brevity_penalty: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig { beam_width: 40, max_steps: 16, constrained: true, brevity_penalty: 0.0 }
    }
}

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<u32>,
    logp: f64,
    node: usize,
    done: bool,
}

fn by_score(a: (f64, &[u32]), b: (f64, &[u32])) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Beam search over scheme tokens. With `cfg.constrained`, every expansion
/// is intersected with `trie`; otherwise finished sequences that name no
/// document are dropped.
pub fn beam_search(
    params: &ModelParams,
    scheme: &DocIdScheme,
    trie: &Trie,
    query_id: &str,
    query_tokens: &[u32],
    cfg: &BeamConfig,
) -> Result<RankedList> {
    if !scheme.kind().is_sequential() || params.config.head_kind == HeadKind::Atomic {
        return Err(Error::WrongHead { expected: "sequential", found: "atomic" });
    }
    if cfg.beam_width == 0 {
        return Err(Error::InvalidArgument("beam_width must be at least 1".into()));
    }
    let kind = scheme.kind();
    let enc = encode_input(params, query_tokens)?;
    let max_steps = cfg.max_steps.min(params.config.max_target_len.saturating_sub(1));
    let mut live = alloc::vec![Hyp { tokens: Vec::new(), logp: 0.0, node: Trie::ROOT, done: false }];
    let mut finished: Vec<(Vec<u32>, f64)> = Vec::new();
    let vocab = params.config.target_vocab_size as u32;

    for step in 0..=max_steps {
        if live.is_empty() {
            break;
        }
        // A live hypothesis can only lose probability, so once the beam is
        // full of finished ones that all beat it, it is pruned.
        if finished.len() >= cfg.beam_width {
            finished.sort_by(|a, b| by_score((a.1, &a.0), (b.1, &b.0)));
            finished.truncate(cfg.beam_width);
            let worst = finished[cfg.beam_width - 1].1;
            let bonus = cfg.brevity_penalty.max(0.0) * max_steps as f64;
            live.retain(|h| h.logp + bonus > worst);
            if live.is_empty() {
                break;
            }
        }
        let prefixes: Vec<Vec<u32>> =
            live.iter().map(|h| h.tokens.iter().map(|&t| model_token(kind, t)).collect()).collect();
        let refs: Vec<&[u32]> = prefixes.iter().map(Vec::as_slice).collect();
        let lp = next_token_log_probs(params, &enc, &refs)?;
        let mut cands: Vec<Hyp> = Vec::new();
        for (i, h) in live.iter().enumerate() {
            let row = lp.row(i);
            let can_extend = step < max_steps;
            if cfg.constrained {
                for n in trie.next_at(h.node) {
                    match n {
                        Next::End => cands.extend(finish(h, row[EOS as usize], cfg)),
                        Next::Token(t) if can_extend => {
                            let m = model_token(kind, t);
                            if m < vocab {
                                let node = trie.child(h.node, t).expect("trie child");
                                cands.push(extend(h, t, row[m as usize], node));
                            }
                        }
                        Next::Token(_) => {}
                    }
                }
            } else {
                if !h.tokens.is_empty() {
                    cands.extend(finish(h, row[EOS as usize], cfg));
                }
                if can_extend {
                    let mut local: Vec<(u32, f64)> =
                        (NUM_SPECIAL..vocab).map(|m| (m, row[m as usize])).collect();
                    local.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                    local.truncate(cfg.beam_width);
                    for (m, l) in local {
                        let t = scheme_token(kind, m).expect("non-special");
                        cands.push(extend(h, t, l, usize::MAX));
                    }
                }
            }
        }
        // Completions leave the beam without taking a slot; the beam keeps
        // the best `beam_width` open prefixes.
        let (done, mut rest): (Vec<Hyp>, Vec<Hyp>) = cands.into_iter().partition(|h| h.done);
        finished.extend(done.into_iter().map(|h| (h.tokens, h.logp)));
        rest.sort_by(|a, b| by_score((a.logp, &a.tokens), (b.logp, &b.tokens)));
        rest.truncate(cfg.beam_width);
        live = rest;
    }

    let mut results: Vec<(Vec<u32>, f64, String)> = finished
        .into_iter()
        .filter_map(|(t, s)| {
            let doc = if cfg.constrained { trie.lookup(&t) } else { scheme.decode(&t) };
            doc.map(|d| (t, s, d.to_string()))
        })
        .collect();
    results.sort_by(|a, b| by_score((a.1, &a.0), (b.1, &b.0)));
    let mut seen = alloc::collections::BTreeSet::new();
    results.retain(|r| seen.insert(r.2.clone()));
    results.truncate(cfg.beam_width);
    let mut list = RankedList {
        query_id: query_id.to_string(),
        results: results.into_iter().map(|(_, score, doc_id)| Ranked { doc_id, score }).collect(),
        warnings: Vec::new(),
    };
    if list.results.is_empty() {
        list.warnings.push(format!("query {query_id}: no identifier completed within {max_steps} steps"));
    }
    Ok(list)
}

fn model_token(kind: SchemeKind, t: u32) -> u32 {
    match kind {
        SchemeKind::Atomic => t,
        _ => t + NUM_SPECIAL,
    }
}

fn extend(h: &Hyp, t: u32, lp: f64, node: usize) -> Hyp {
    let mut tokens = h.tokens.clone();
    tokens.push(t);
    Hyp { tokens, logp: h.logp + lp, node, done: false }
}

fn finish(h: &Hyp, eos_lp: f64, cfg: &BeamConfig) -> Option<Hyp> {
    let logp = h.logp + eos_lp + cfg.brevity_penalty * h.tokens.len() as f64;
    logp.is_finite().then(|| Hyp { tokens: h.tokens.clone(), logp, node: h.node, done: true })
}

/// Top-`k` documents by atomic logit; equal logits fall back to doc id order.
pub fn atomic_rank(params: &ModelParams, scheme: &DocIdScheme, query_id: &str, query_tokens: &[u32], k: usize) -> Result<RankedList> {
    if params.config.head_kind != HeadKind::Atomic || scheme.kind() != SchemeKind::Atomic {
        return Err(Error::WrongHead { expected: "atomic", found: params.config.head_kind.as_str() });
    }
    let logits = crate::model::forward(params, query_tokens, &[], None)?;
    let row = logits.row(0);
    let mut docs: Vec<(&str, f64)> = scheme.iter().map(|(d, id)| (d, row[id[0] as usize])).collect();
    docs.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    docs.truncate(k);
    Ok(RankedList {
        query_id: query_id.to_string(),
        results: docs.into_iter().map(|(d, s)| Ranked { doc_id: d.to_string(), score: s }).collect(),
        warnings: Vec::new(),
    })
}
