use alloc::vec::Vec;

#[allow(unused_imports)] // inherent with std
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;

/// Linear warmup to `peak`, then constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: u64,
}

impl LrSchedule {
    pub fn new(peak: f64, warmup_steps: u64) -> Self {
        LrSchedule { peak, warmup_steps }
    }

    /// Rate for the 0-based `step`.
    pub fn at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 {
            return self.peak;
        }
        self.peak * ((step + 1) as f64 / self.warmup_steps as f64).min(1.0)
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule { peak: 1e-3, warmup_steps: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub schedule: LrSchedule,
    pub(crate) m: Vec<Matrix>,
    pub(crate) v: Vec<Matrix>,
}

impl Adam {
    pub fn new(params: &super::ModelParams, schedule: LrSchedule) -> Self {
        let zeros = || params.values().iter().map(|p| Matrix::zeros(p.rows, p.cols)).collect::<Vec<_>>();
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, schedule, m: zeros(), v: zeros() }
    }

    pub fn lr(&self) -> f64 {
        self.schedule.at(self.step)
    }

    /// One update. Rows of embedding tables that received no gradient still
    /// decay their moments, as in dense Adam.
    pub(crate) fn apply(&mut self, values: &mut [Matrix], grads: &[Matrix]) {
        let lr = self.lr();
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - self.beta1.powf(t);
        let c2 = 1.0 - self.beta2.powf(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for ((p, g), (m, v)) in values.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                let mi = b1 * m.data[i] + (1.0 - b1) * gi;
                let vi = b2 * v.data[i] + (1.0 - b2) * gi * gi;
                m.data[i] = mi;
                v.data[i] = vi;
                p.data[i] -= lr * (mi / c1) / ((vi / c2).sqrt() + eps);
            }
        }
    }

    pub fn moments(&self) -> (&[Matrix], &[Matrix]) {
        (&self.m, &self.v)
    }

    pub fn from_moments(step: u64, schedule: LrSchedule, m: Vec<Matrix>, v: Vec<Matrix>) -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, step, schedule, m, v }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_then_flat() {
        let s = LrSchedule::new(1e-3, 10);
        assert!((s.at(0) - 1e-4).abs() < 1e-12);
        assert!((s.at(9) - 1e-3).abs() < 1e-12);
        assert_eq!(s.at(500), 1e-3);
    }
}
