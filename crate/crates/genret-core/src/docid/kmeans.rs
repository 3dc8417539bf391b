use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::index;
use rand::Rng as _;

use crate::seed::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub max_iter: usize,
    /// Stop when total centroid movement relative to centroid norm drops below this.
    pub tol: f64,
    /// Centroids are fit on a sample of this many points ...
    pub sample_cap: usize,
    /// ... once the point count exceeds this threshold.
    pub sample_trigger: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions { max_iter: 50, tol: 1e-4, sample_cap: 100_000, sample_trigger: 1_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    /// Cluster of each input row, aligned with `rows`.
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::infinity());
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations.
///
/// Every returned cluster is non-empty: empty clusters take the point
/// farthest from its centroid in the currently largest cluster. Fewer than
/// `k` clusters are produced only when there are fewer than `k` rows.
pub fn kmeans(
    data: &[f64],
    dim: usize,
    rows: &[usize],
    k: usize,
    opts: &KMeansOptions,
    rng: &mut Rng,
) -> KMeansResult {
    let n = rows.len();
    let k = k.min(n).max(1);
    let point = |r: usize| &data[r * dim..(r + 1) * dim];

    // all-identical points: k-means cannot separate them, split by order
    let first = point(rows[0]);
    if rows.iter().all(|&r| point(r) == first) {
        let assignment: Vec<usize> = (0..n).map(|i| i * k / n).collect();
        return KMeansResult { centroids: vec![first.to_vec(); k], assignment, iterations: 0 };
    }

    let fit: Vec<usize> = if n > opts.sample_trigger && opts.sample_cap < n {
        let mut s = index::sample(rng, n, opts.sample_cap).into_vec();
        s.sort_unstable();
        s.into_iter().map(|i| rows[i]).collect()
    } else {
        rows.to_vec()
    };

    let mut centroids = plus_plus(data, dim, &fit, k, rng);
    let mut assign = vec![0usize; fit.len()];
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        iterations += 1;
        for (a, &r) in assign.iter_mut().zip(&fit) {
            *a = nearest(point(r), &centroids).0;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, &r) in assign.iter().zip(&fit) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(point(r)) {
                *s += x;
            }
        }
        let mut next: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &c)| if c == 0 { s } else { s.into_iter().map(|x| x / c as f64).collect() })
            .collect();
        for j in 0..k {
            if counts[j] == 0 {
                if let Some(i) = farthest_in_largest(data, dim, &fit, &assign, &counts, &next) {
                    next[j] = point(fit[i]).to_vec();
                    counts[assign[i]] -= 1;
                    assign[i] = j;
                    counts[j] = 1;
                }
            }
        }
        let shift: f64 = centroids.iter().zip(&next).map(|(a, b)| sq_dist(a, b)).sum();
        let scale: f64 = centroids.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>()).sum();
        centroids = next;
        if shift.sqrt() <= opts.tol * scale.sqrt().max(f64::epsilon()) {
            break;
        }
    }

    let mut assignment: Vec<usize> = rows.iter().map(|&r| nearest(point(r), &centroids).0).collect();
    let mut counts = vec![0usize; k];
    for &a in &assignment {
        counts[a] += 1;
    }
    for j in 0..k {
        if counts[j] == 0 {
            if let Some(i) = farthest_in_largest(data, dim, rows, &assignment, &counts, &centroids) {
                counts[assignment[i]] -= 1;
                assignment[i] = j;
                counts[j] = 1;
                centroids[j] = point(rows[i]).to_vec();
            }
        }
    }
    KMeansResult { centroids, assignment, iterations }
}

/// Nodes at or below this many points are partitioned exactly.
pub const EXACT_MAX_POINTS: usize = 8;

/// Minimum-SSE partition of `rows` into `min(k, n)` non-empty clusters by
/// enumerating restricted-growth labelings. Ties prefer the most balanced
/// split, then the lexicographically first labeling.
pub fn exact_partition(data: &[f64], dim: usize, rows: &[usize], k: usize) -> KMeansResult {
    let n = rows.len();
    let k = k.min(n).max(1);
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    let mut labels = vec![0usize; n];

    fn centroids_of(data: &[f64], dim: usize, rows: &[usize], labels: &[usize], k: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&l, &r) in labels.iter().zip(rows) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(&data[r * dim..(r + 1) * dim]) {
                *s += x;
            }
        }
        for (s, &c) in sums.iter_mut().zip(&counts) {
            s.iter_mut().for_each(|x| *x /= c as f64);
        }
        (sums, counts)
    }

    #[allow(clippy::too_many_arguments)]
    fn go(
        i: usize,
        used: usize,
        labels: &mut Vec<usize>,
        k: usize,
        data: &[f64],
        dim: usize,
        rows: &[usize],
        best: &mut Option<(f64, usize, Vec<usize>)>,
    ) {
        let n = labels.len();
        if n - i < k - used {
            return;
        }
        if i == n {
            let (cents, counts) = centroids_of(data, dim, rows, labels, k);
            let sse: f64 = labels.iter().zip(rows).map(|(&l, &r)| sq_dist(&data[r * dim..(r + 1) * dim], &cents[l])).sum();
            let max_size = counts.iter().copied().max().unwrap_or(0);
            let better = match best {
                None => true,
                Some((b, m, _)) => sse.total_cmp(b).then(max_size.cmp(m)).is_lt(),
            };
            if better {
                *best = Some((sse, max_size, labels.clone()));
            }
            return;
        }
        for l in 0..=used.min(k - 1) {
            labels[i] = l;
            go(i + 1, used.max(l + 1), labels, k, data, dim, rows, best);
        }
    }

    go(0, 0, &mut labels, k, data, dim, rows, &mut best);
    let assignment = best.map(|b| b.2).unwrap_or_else(|| vec![0; n]);
    let (centroids, _) = centroids_of(data, dim, rows, &assignment, k);
    KMeansResult { centroids, assignment, iterations: 0 }
}

fn farthest_in_largest(
    data: &[f64],
    dim: usize,
    rows: &[usize],
    assign: &[usize],
    counts: &[usize],
    centroids: &[Vec<f64>],
) -> Option<usize> {
    let largest = (0..counts.len()).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))?;
    if counts[largest] < 2 {
        return None;
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, (&a, &r)) in assign.iter().zip(rows).enumerate() {
        if a != largest {
            continue;
        }
        let d = sq_dist(&data[r * dim..(r + 1) * dim], &centroids[largest]);
        if best.is_none_or(|(_, bd)| d > bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

fn plus_plus(data: &[f64], dim: usize, rows: &[usize], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let point = |r: usize| &data[r * dim..(r + 1) * dim];
    let n = rows.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(point(rows[rng.random_range(0..n)]).to_vec());
    let mut d2: Vec<f64> = rows.iter().map(|&r| sq_dist(point(r), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = point(rows[pick]).to_vec();
        for (d, &r) in d2.iter_mut().zip(rows) {
            *d = d.min(sq_dist(point(r), &c));
        }
        centroids.push(c);
    }
    centroids
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn separates_two_blobs() {
        let data = [0.0, 0.0, 0.1, 0.0, 0.0, 0.1, 10.0, 10.0, 10.1, 10.0, 10.0, 10.1];
        let rows: Vec<usize> = (0..6).collect();
        let r = kmeans(&data, 2, &rows, 2, &KMeansOptions::default(), &mut seed::rng(4));
        assert_eq!(r.assignment[0], r.assignment[1]);
        assert_eq!(r.assignment[1], r.assignment[2]);
        assert_eq!(r.assignment[3], r.assignment[4]);
        assert_ne!(r.assignment[0], r.assignment[3]);
    }

    #[test]
    fn identical_points_split_evenly() {
        let data = [1.0; 10];
        let rows: Vec<usize> = (0..5).collect();
        let r = kmeans(&data, 2, &rows, 2, &KMeansOptions::default(), &mut seed::rng(0));
        assert_eq!(r.assignment, vec![0, 0, 0, 1, 1]);
    }

    #[test]
    fn fewer_rows_than_k() {
        let data = [0.0, 1.0, 2.0];
        let rows = [0, 1, 2];
        let r = kmeans(&data, 1, &rows, 5, &KMeansOptions::default(), &mut seed::rng(0));
        assert_eq!(r.centroids.len(), 3);
        let mut a = r.assignment.clone();
        a.sort();
        assert_eq!(a, vec![0, 1, 2]);
    }

    #[test]
    fn sampled_fit_still_assigns_everything() {
        let data: Vec<f64> = (0..200).map(|i| (i % 2) as f64 * 5.0 + (i as f64) * 1e-3).collect();
        let rows: Vec<usize> = (0..200).collect();
        let opts = KMeansOptions { sample_cap: 20, sample_trigger: 50, ..Default::default() };
        let r = kmeans(&data, 1, &rows, 2, &opts, &mut seed::rng(1));
        assert_eq!(r.assignment.len(), 200);
        assert!(r.assignment.iter().step_by(2).all(|&a| a == r.assignment[0]));
        assert!(r.assignment.iter().skip(1).step_by(2).all(|&a| a != r.assignment[0]));
    }
}
