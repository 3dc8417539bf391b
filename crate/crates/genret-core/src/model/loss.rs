//! Loss values and their logit/hidden-state gradients.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use super::graph::softmax_rows;
use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Probability floor inside the symmetric KL.
pub const KL_EPS: f64 = 1e-9;
pub const KL_WEIGHT: f64 = 0.015;
pub const SOFTMAX_WEIGHT: f64 = 0.15;

/// Mean negative log-likelihood of `targets` under row-wise softmax of
/// `logits`; `None` targets are padding and skipped.
pub fn cross_entropy_loss(logits: &Matrix, targets: &[Option<u32>]) -> f64 {
    let p = softmax_rows(logits);
    let mut total = 0.0;
    let mut n = 0;
    for (r, t) in targets.iter().enumerate() {
        if let Some(t) = t {
            total -= p.get(r, *t as usize).ln();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// `0.5 * (KL(p || q) + KL(q || p))` for one position.
pub fn sym_kl(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p
        .iter()
        .zip(q)
        .map(|(&a, &b)| {
            let (a, b) = (a.max(KL_EPS), b.max(KL_EPS));
            (a - b) * (a.ln() - b.ln())
        })
        .sum::<f64>()
}

/// Position-averaged symmetric KL between two per-position distributions.
pub fn consistency_loss_kl(p1: &Matrix, p2: &Matrix) -> f64 {
    sym_kl_rows(p1, p2)
}

pub(crate) fn sym_kl_rows(pa: &Matrix, pb: &Matrix) -> f64 {
    if pa.rows == 0 {
        return 0.0;
    }
    (0..pa.rows).map(|r| sym_kl(pa.row(r), pb.row(r))).sum::<f64>() / pa.rows as f64
}

/// Gradient of the row-averaged symmetric KL w.r.t. the two logit matrices
/// that produced `pa` and `pb`.
pub(crate) fn sym_kl_rows_grad(pa: &Matrix, pb: &Matrix, dy: f64) -> (Matrix, Matrix) {
    let mut ga = Matrix::zeros(pa.rows, pa.cols);
    let mut gb = Matrix::zeros(pb.rows, pb.cols);
    if pa.rows == 0 {
        return (ga, gb);
    }
    let scale = dy / pa.rows as f64;
    let mut dpa = vec![0.0; pa.cols];
    let mut dpb = vec![0.0; pa.cols];
    for r in 0..pa.rows {
        let (a, b) = (pa.row(r), pb.row(r));
        for j in 0..pa.cols {
            let (fa, fb) = (a[j].max(KL_EPS), b[j].max(KL_EPS));
            let log_ratio = fa.ln() - fb.ln();
            dpa[j] = if a[j] >= KL_EPS { 0.5 * (log_ratio + (fa - fb) / fa) * scale } else { 0.0 };
            dpb[j] = if b[j] >= KL_EPS { 0.5 * (-log_ratio + (fb - fa) / fb) * scale } else { 0.0 };
        }
        softmax_backward(a, &dpa, ga.row_mut(r));
        softmax_backward(b, &dpb, gb.row_mut(r));
    }
    (ga, gb)
}

fn softmax_backward(p: &[f64], dp: &[f64], out: &mut [f64]) {
    let inner: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    for ((o, &pi), &di) in out.iter_mut().zip(p).zip(dp) {
        *o += pi * (di - inner);
    }
}

/// Rows grouped by decoding position.
pub fn position_groups(positions: &[usize]) -> Vec<Vec<usize>> {
    let mut m: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (r, &p) in positions.iter().enumerate() {
        m.entry(p).or_default().push(r);
    }
    m.into_values().collect()
}

/// In-batch softmax consistency: for every row `i` of pass 1, the matching
/// row of pass 2 must win a softmax over dot products against all other
/// pass representations at the same position. `positions[r]` is the decoding
/// step of row `r`.
pub fn consistency_loss_softmax(h1: &Matrix, h2: &Matrix, positions: &[usize]) -> Result<f64> {
    let groups = position_groups(positions);
    if groups.iter().all(|g| g.len() < 2) {
        return Err(Error::NoNegatives);
    }
    Ok(contrastive_value(h1, h2, &groups))
}

fn lse_excluding(scores: &[f64], skip: usize) -> f64 {
    let max = scores
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != skip)
        .map(|(_, &s)| s)
        .fold(f64::neg_infinity(), f64::max);
    let sum: f64 = scores.iter().enumerate().filter(|&(k, _)| k != skip).map(|(_, &s)| (s - max).exp()).sum();
    max + sum.ln()
}

fn group_scores(h1: &Matrix, h2: &Matrix, group: &[usize], anchor: usize) -> Vec<f64> {
    let a = h1.row(group[anchor]);
    let dot = |x: &[f64]| a.iter().zip(x).map(|(p, q)| p * q).sum::<f64>();
    group.iter().map(|&r| dot(h1.row(r))).chain(group.iter().map(|&r| dot(h2.row(r)))).collect()
}

pub(crate) fn contrastive_value(h1: &Matrix, h2: &Matrix, groups: &[Vec<usize>]) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    for group in groups {
        let m = group.len();
        for b in 0..m {
            let s = group_scores(h1, h2, group, b);
            total += lse_excluding(&s, b) - s[m + b];
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

pub(crate) fn contrastive_grad(h1: &Matrix, h2: &Matrix, groups: &[Vec<usize>], dy: f64) -> (Matrix, Matrix) {
    let mut g1 = Matrix::zeros(h1.rows, h1.cols);
    let mut g2 = Matrix::zeros(h2.rows, h2.cols);
    let n: usize = groups.iter().map(Vec::len).sum();
    if n == 0 {
        return (g1, g2);
    }
    let scale = dy / n as f64;
    for group in groups {
        let m = group.len();
        for b in 0..m {
            let s = group_scores(h1, h2, group, b);
            let lse = lse_excluding(&s, b);
            let anchor = group[b];
            let a = h1.row(anchor).to_vec();
            for (k, &sk) in s.iter().enumerate() {
                let mut w = if k == b { 0.0 } else { (sk - lse).exp() };
                if k == m + b {
                    w -= 1.0;
                }
                if w == 0.0 {
                    continue;
                }
                let w = w * scale;
                let (target, row) = if k < m { (&mut g1, group[k]) } else { (&mut g2, group[k - m]) };
                let other = if k < m { h1.row(group[k]) } else { h2.row(group[k - m]) };
                for (o, &x) in target.row_mut(row).iter_mut().zip(&a) {
                    *o += w * x;
                }
                let ga = g1.row_mut(anchor);
                for (o, &x) in ga.iter_mut().zip(other) {
                    *o += w * x;
                }
            }
        }
    }
    (g1, g2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_v() {
        let logits = Matrix::zeros(3, 7);
        let ce = cross_entropy_loss(&logits, &[Some(0), Some(3), Some(6)]);
        assert!((ce - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_logits_near_zero() {
        let mut logits = Matrix::zeros(1, 4);
        logits.data[2] = 50.0;
        assert!(cross_entropy_loss(&logits, &[Some(2)]) < 1e-12);
    }

    #[test]
    fn three_class_case() {
        let logits = Matrix::from_vec(1, 3, vec![0.7f64.ln(), 0.2f64.ln(), 0.1f64.ln()]);
        let ce = cross_entropy_loss(&logits, &[Some(0)]);
        assert!((ce - 0.356_674_943_938_732_4).abs() < 1e-12);
    }

    #[test]
    fn padding_is_masked() {
        let logits = Matrix::from_vec(2, 2, vec![0.0, 0.0, 100.0, -100.0]);
        assert!((cross_entropy_loss(&logits, &[Some(0), None]) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn kl_identical_is_zero() {
        let p = Matrix::from_vec(2, 3, vec![0.2, 0.3, 0.5, 1.0, 0.0, 0.0]);
        assert_eq!(consistency_loss_kl(&p, &p), 0.0);
    }

    #[test]
    fn kl_two_point_case() {
        // independent evaluation: 0.5 * [sum p ln(p/q) + sum q ln(q/p)]
        let kl_pq = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        let kl_qp = 0.9 * (0.9f64 / 0.5).ln() + 0.1 * (0.1f64 / 0.5).ln();
        let oracle = 0.5 * (kl_pq + kl_qp);
        let v = consistency_loss_kl(&Matrix::from_vec(1, 2, vec![0.5, 0.5]), &Matrix::from_vec(1, 2, vec![0.9, 0.1]));
        assert!((v - oracle).abs() < 1e-12);
        assert!((v - 0.4395).abs() < 1e-4);
    }

    #[test]
    fn contrastive_orthogonal_case() {
        // two examples, both passes identical unit vectors, examples orthogonal
        let h = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let v = consistency_loss_softmax(&h, &h, &[0, 0]).unwrap();
        let e = core::f64::consts::E;
        assert!((v - (-(e / (e + 2.0)).ln())).abs() < 1e-12);
        assert!((v - 0.5514).abs() < 1e-4);
        // dot-product loss is not scale invariant
        let mut h3 = h.clone();
        h3.data.iter_mut().for_each(|x| *x *= 3.0);
        assert!((consistency_loss_softmax(&h3, &h3, &[0, 0]).unwrap() - v).abs() > 1e-3);
    }

    #[test]
    fn contrastive_needs_negatives() {
        let h = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(consistency_loss_softmax(&h, &h, &[0, 1]).unwrap_err(), Error::NoNegatives);
    }

    #[test]
    fn contrastive_grad_matches_differences() {
        let h1 = Matrix::from_vec(3, 2, vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.7]);
        let h2 = Matrix::from_vec(3, 2, vec![0.1, 0.2, -0.3, 0.6, 0.2, -0.5]);
        let groups = position_groups(&[0, 0, 0]);
        let (g1, g2) = contrastive_grad(&h1, &h2, &groups, 1.0);
        let eps = 1e-6;
        for which in 0..2 {
            for i in 0..6 {
                let (mut a, mut b) = (h1.clone(), h2.clone());
                let (mut c, mut d) = (h1.clone(), h2.clone());
                if which == 0 {
                    a.data[i] += eps;
                    c.data[i] -= eps;
                } else {
                    b.data[i] += eps;
                    d.data[i] -= eps;
                }
                let fd = (contrastive_value(&a, &b, &groups) - contrastive_value(&c, &d, &groups)) / (2.0 * eps);
                let an = if which == 0 { g1.data[i] } else { g2.data[i] };
                assert!((fd - an).abs() < 1e-7, "{which} {i}: {fd} vs {an}");
            }
        }
    }
}
