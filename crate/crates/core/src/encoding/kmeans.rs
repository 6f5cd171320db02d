use rand::Rng;

use super::{canonical_order, row_count, sq_dist};
use crate::rng::seeded;
use crate::{par, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub dim: usize,
    /// `k × dim` row-major centroids.
    pub centroids: Vec<f64>,
}

impl Codebook {
    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn centroid(&self, k: usize) -> &[f64] {
        &self.centroids[k * self.dim..(k + 1) * self.dim]
    }

    /// Nearest centroid and its squared distance; ties go to the lower index.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for k in 0..self.k() {
            let d = sq_dist(x, self.centroid(k));
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub codebook: Codebook,
    /// Sum of squared distances after every assignment step.
    pub objective_trace: Vec<f64>,
    pub assignments: Vec<usize>,
}

fn plus_plus_init(data: &[f64], dim: usize, k: usize, seed: u64) -> Vec<f64> {
    let m = data.len() / dim;
    let mut rng = seeded(seed);
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centroids = row(rng.random_range(0..m)).to_vec();
    let mut d2: Vec<f64> = (0..m).map(|i| sq_dist(row(i), &centroids)).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = m - 1;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        // rounding can leave `pick` on an already chosen point
        if d2[pick] == 0.0 {
            pick = (0..m).rev().find(|&i| d2[i] > 0.0).unwrap_or(pick);
        }
        let c = row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), &c));
        }
        centroids.extend(c);
    }
    centroids
}

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or `max_iter` is reached. An emptied cluster is moved onto the point
/// farthest from its centroid.
pub fn fit_kmeans(data: &[f64], dim: usize, k: usize, seed: u64, max_iter: usize) -> Result<KMeansFit> {
    let m = row_count(data, dim)?;
    if k == 0 || m < k {
        return Err(Error::Fit(format!("k-means needs 1 <= K <= M, got K={k}, M={m}")));
    }
    let order = canonical_order(data, dim);
    let distinct = 1 + order
        .windows(2)
        .filter(|w| data[w[0] * dim..(w[0] + 1) * dim] != data[w[1] * dim..(w[1] + 1) * dim])
        .count();
    if distinct < k {
        return Err(Error::Fit(format!("only {distinct} distinct descriptors for K={k}")));
    }
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut codebook = Codebook { dim, centroids: plus_plus_init(data, dim, k, seed) };
    let mut assignments: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    for _ in 0..max_iter.max(1) {
        let nearest = par::map_range(m, |i| codebook.nearest(row(i)));
        trace.push(nearest.iter().map(|n| n.1).sum());
        let next: Vec<usize> = nearest.iter().map(|n| n.0).collect();
        if next == assignments {
            break;
        }
        assignments = next;

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..m {
            let c = assignments[i];
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row(i)) {
                *s += v;
            }
        }
        let mut dist: Vec<f64> = nearest.iter().map(|n| n.1).collect();
        for c in 0..k {
            let target = &mut codebook.centroids[c * dim..(c + 1) * dim];
            if counts[c] > 0 {
                for (t, s) in target.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *t = s / counts[c] as f64;
                }
            } else {
                let far = (0..m).fold(0, |b, i| if dist[i] > dist[b] { i } else { b });
                log::debug!("k-means cluster {c} emptied, reseeding at row {far}");
                target.copy_from_slice(row(far));
                dist[far] = 0.0;
            }
        }
    }
    Ok(KMeansFit { codebook, objective_trace: trace, assignments })
}

/// Hard-assignment histogram over the codebook, L1-normalized.
pub fn encode_bovw(codebook: &Codebook, data: &[f64], dim: usize) -> Result<Vec<f64>> {
    if dim != codebook.dim {
        return Err(Error::DimensionMismatch { expected: codebook.dim, actual: dim });
    }
    let n = row_count(data, dim)?;
    let mut hist = vec![0.0; codebook.k()];
    for c in par::map_range(n, |i| codebook.nearest(&data[i * dim..(i + 1) * dim]).0) {
        hist[c] += 1.0;
    }
    hist.iter_mut().for_each(|h| *h /= n as f64);
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn random_data(seed: u64, m: usize, dim: usize) -> Vec<f64> {
        let mut rng = seeded(seed);
        (0..m * dim).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn recovers_blob_means() {
        let means = [[0.0, 0.0], [5.0, 0.0], [0.0, 5.0], [5.0, 5.0]];
        let mut rng = seeded(3);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let mut data = Vec::new();
        for _ in 0..100 {
            for m in &means {
                data.push(m[0] + noise.sample(&mut rng));
                data.push(m[1] + noise.sample(&mut rng));
            }
        }
        let fit = fit_kmeans(&data, 2, 4, 1, 100).unwrap();
        for m in &means {
            let (k, _) = fit.codebook.nearest(m);
            assert!(sq_dist(m, fit.codebook.centroid(k)).sqrt() < 0.05);
        }
    }

    #[test]
    fn k_equals_m_reproduces_points() {
        let data = random_data(4, 6, 3);
        let fit = fit_kmeans(&data, 3, 6, 9, 50).unwrap();
        assert_eq!(*fit.objective_trace.last().unwrap(), 0.0);
        for i in 0..6 {
            let (_, d) = fit.codebook.nearest(&data[i * 3..i * 3 + 3]);
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn objective_never_increases() {
        for seed in 0..10 {
            let data = random_data(100 + seed, 300, 4);
            let fit = fit_kmeans(&data, 4, 8, seed, 100).unwrap();
            for w in fit.objective_trace.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{w:?}");
            }
        }
    }

    #[test]
    fn too_few_rows_or_distinct_rows() {
        assert!(fit_kmeans(&[0.0, 1.0], 1, 3, 0, 10).is_err());
        assert!(fit_kmeans(&[1.0, 1.0, 1.0], 1, 2, 0, 10).is_err());
    }

    #[test]
    fn bovw_examples() {
        let cb = Codebook { dim: 1, centroids: vec![0.0, 1.0, 2.0, 3.0] };
        assert_eq!(encode_bovw(&cb, &[0.1, -0.2, 0.0], 1).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(encode_bovw(&cb, &[0.1, 2.9, 3.2, -0.1], 1).unwrap(), vec![0.5, 0.0, 0.0, 0.5]);
        assert!(matches!(encode_bovw(&cb, &[0.0, 0.0], 2), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn bovw_matches_brute_force_count() {
        let cb = Codebook { dim: 5, centroids: random_data(7, 8, 5) };
        let data = random_data(8, 50, 5);
        let hist = encode_bovw(&cb, &data, 5).unwrap();
        let mut counts = [0usize; 8];
        for x in data.chunks(5) {
            let d: Vec<f64> = cb.centroids.chunks(5).map(|c| sq_dist(x, c)).collect();
            let best = (0..8).min_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
            counts[best] += 1;
        }
        for k in 0..8 {
            assert_eq!(hist[k], counts[k] as f64 / 50.0);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let data = random_data(11, 200, 3);
        assert_eq!(fit_kmeans(&data, 3, 5, 2, 50).unwrap(), fit_kmeans(&data, 3, 5, 2, 50).unwrap());
    }
}
