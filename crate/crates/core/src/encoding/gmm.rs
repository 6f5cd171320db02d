use std::f64::consts::PI;

use super::{fit_kmeans, row_count};
use crate::{par, Error, Result};

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub dim: usize,
    pub weights: Vec<f64>,
    /// `k × dim` row-major.
    pub means: Vec<f64>,
    /// `k × dim` row-major diagonal variances.
    pub variances: Vec<f64>,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    pub fn variance(&self, k: usize) -> &[f64] {
        &self.variances[k * self.dim..(k + 1) * self.dim]
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 || self.dim == 0 || self.means.len() != k * self.dim || self.variances.len() != k * self.dim {
            return Err(Error::InvalidArgument("inconsistent GMM shapes".into()));
        }
        if self.weights.iter().any(|w| !(*w > 0.0)) || self.variances.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidArgument("GMM weights and variances must be > 0".into()));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument("GMM means must be finite".into()));
        }
        Ok(())
    }

    /// Per-component `log π_k + log N(x | μ_k, σ_k²)`.
    pub(crate) fn log_joint(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim as f64;
        for (k, o) in out.iter_mut().enumerate() {
            let (mu, var) = (self.mean(k), self.variance(k));
            let mut acc = 0.0;
            for j in 0..self.dim {
                let diff = x[j] - mu[j];
                acc += diff * diff / var[j] + var[j].ln();
            }
            *o = self.weights[k].ln() - 0.5 * (acc + d * (2.0 * PI).ln());
        }
    }

    /// Posteriors `γ_k(x)` written into `out`; returns `log p(x)`.
    pub(crate) fn posteriors(&self, x: &[f64], out: &mut [f64]) -> f64 {
        self.log_joint(x, out);
        let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = out.iter().map(|l| (l - max).exp()).sum();
        let log_p = max + sum.ln();
        out.iter_mut().for_each(|l| *l = (*l - log_p).exp());
        log_p
    }

    /// Total log-likelihood of the rows in `data`.
    pub fn log_likelihood(&self, data: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.k()];
        data.chunks(self.dim).map(|x| self.posteriors(x, &mut buf)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmParams {
    pub k: usize,
    pub max_iter: usize,
    /// Variance floor as a fraction of the per-dimension data variance.
    pub var_floor: f64,
    /// Stop when the log-likelihood gain falls below `tol · |ll|`.
    pub tol: f64,
}

impl Default for GmmParams {
    fn default() -> Self {
        Self { k: 16, max_iter: 100, var_floor: 1e-4, tol: 1e-7 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Log-likelihood of the data at the start of every EM iteration.
    pub log_likelihood_trace: Vec<f64>,
}

/// EM for a diagonal GMM, initialized from k-means.
pub fn fit_gmm(data: &[f64], dim: usize, params: GmmParams, seed: u64) -> Result<GmmFit> {
    let m = row_count(data, dim)?;
    let k = params.k;
    if m < 10 * k {
        log::warn!("fitting {k} components to only {m} descriptors");
    }
    let row = |i: usize| &data[i * dim..(i + 1) * dim];

    let mut floor = vec![0.0; dim];
    let mut mean_all = vec![0.0; dim];
    for i in 0..m {
        for (s, v) in mean_all.iter_mut().zip(row(i)) {
            *s += v / m as f64;
        }
    }
    for i in 0..m {
        for (j, f) in floor.iter_mut().enumerate() {
            let d = row(i)[j] - mean_all[j];
            *f += d * d / m as f64;
        }
    }
    for f in floor.iter_mut() {
        *f = if *f > 0.0 { params.var_floor * *f } else { params.var_floor };
    }

    let km = fit_kmeans(data, dim, k, seed, 100)?;
    let mut weights = vec![0.0f64; k];
    let mut variances = vec![0.0; k * dim];
    for i in 0..m {
        let c = km.assignments[i];
        weights[c] += 1.0;
        let mu = km.codebook.centroid(c);
        for j in 0..dim {
            let d = row(i)[j] - mu[j];
            variances[c * dim + j] += d * d;
        }
    }
    for c in 0..k {
        let n = weights[c].max(1.0);
        for j in 0..dim {
            let v = &mut variances[c * dim + j];
            *v = (*v / n).max(floor[j]);
        }
        weights[c] = n / m as f64;
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let mut model = GmmModel { dim, weights, means: km.codebook.centroids, variances };

    let mut trace = Vec::new();
    for _ in 0..params.max_iter.max(1) {
        let posts = par::map_range(m, |i| {
            let mut g = vec![0.0; k];
            let lp = model.posteriors(row(i), &mut g);
            (lp, g)
        });
        let ll: f64 = posts.iter().map(|p| p.0).sum();
        if !ll.is_finite() {
            return Err(Error::Diverged(format!("GMM log-likelihood became {ll}")));
        }
        let converged = trace.last().is_some_and(|&prev: &f64| ll - prev < params.tol * ll.abs().max(1.0));
        trace.push(ll);
        if converged {
            break;
        }

        let mut nk = vec![0.0; k];
        let mut s1 = vec![0.0; k * dim];
        for (i, (_, g)) in posts.iter().enumerate() {
            let x = row(i);
            for c in 0..k {
                nk[c] += g[c];
                for j in 0..dim {
                    s1[c * dim + j] += g[c] * x[j];
                }
            }
        }
        for c in 0..k {
            if !(nk[c] > 0.0) {
                return Err(Error::Fit(format!(
                    "GMM component {c} lost all responsibility; means {:?}",
                    model.mean(c)
                )));
            }
            model.weights[c] = nk[c] / m as f64;
            for j in 0..dim {
                model.means[c * dim + j] = s1[c * dim + j] / nk[c];
            }
        }
        // second pass about the new means avoids cancellation in E[x²] - μ²
        let mut sv = vec![0.0; k * dim];
        for (i, (_, g)) in posts.iter().enumerate() {
            let x = row(i);
            for c in 0..k {
                for j in 0..dim {
                    let d = x[j] - model.means[c * dim + j];
                    sv[c * dim + j] += g[c] * d * d;
                }
            }
        }
        for c in 0..k {
            for j in 0..dim {
                model.variances[c * dim + j] = (sv[c * dim + j] / nk[c]).max(floor[j]);
            }
        }
    }
    Ok(GmmFit { model, log_likelihood_trace: trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn recovers_two_blobs() {
        let mut rng = seeded(5);
        let n = Normal::new(0.0, 0.3).unwrap();
        let mut data = Vec::new();
        for i in 0..400 {
            let c = if i % 2 == 0 { -2.0 } else { 2.0 };
            data.push(c + n.sample(&mut rng));
            data.push(n.sample(&mut rng));
        }
        let fit = fit_gmm(&data, 2, GmmParams { k: 2, ..Default::default() }, 1).unwrap();
        let g = &fit.model;
        let mut xs: Vec<(f64, f64, f64)> = (0..2).map(|c| (g.mean(c)[0], g.mean(c)[1], g.weights[c])).collect();
        xs.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!((xs[0].0 + 2.0).abs() < 0.1 && (xs[1].0 - 2.0).abs() < 0.1);
        assert!(xs.iter().all(|x| x.1.abs() < 0.1 && (x.2 - 0.5).abs() < 0.1));
        assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_component_closed_form() {
        let mut rng = seeded(6);
        let data: Vec<f64> = (0..300).map(|i| rng.random::<f64>() * (1 + i % 3) as f64).collect();
        let fit = fit_gmm(&data, 3, GmmParams { k: 1, ..Default::default() }, 0).unwrap();
        for j in 0..3 {
            let col: Vec<f64> = data.iter().skip(j).step_by(3).copied().collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!((fit.model.means[j] - mean).abs() < 1e-9);
            assert!((fit.model.variances[j] - var).abs() < 1e-9);
        }
        assert_eq!(fit.model.weights, vec![1.0]);
    }

    #[test]
    fn log_likelihood_never_decreases() {
        for seed in 0..10 {
            let mut rng = seeded(40 + seed);
            let data: Vec<f64> = (0..600).map(|_| rng.random::<f64>().powi(2)).collect();
            let fit = fit_gmm(&data, 3, GmmParams { k: 4, max_iter: 60, tol: 0.0, ..Default::default() }, seed).unwrap();
            for w in fit.log_likelihood_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{w:?}");
            }
        }
    }

    #[test]
    fn variances_respect_floor() {
        // a tight cluster of identical values plus spread-out points
        let mut data = vec![1.0; 40];
        data.extend((0..40).map(|i| i as f64));
        let fit = fit_gmm(&data, 1, GmmParams { k: 2, ..Default::default() }, 0).unwrap();
        let var_all = {
            let mean = data.iter().sum::<f64>() / data.len() as f64;
            data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / data.len() as f64
        };
        assert!(fit.model.variances.iter().all(|v| *v >= 1e-4 * var_all * (1.0 - 1e-12)));
        fit.model.validate().unwrap();
    }
}
