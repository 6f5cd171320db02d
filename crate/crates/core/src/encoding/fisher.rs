use super::{canonical_order, row_count, GmmModel};
use crate::{Error, Result};

/// Unnormalized Fisher Vector: the mean block
/// `(1/(n√π_k)) Σ γ_k(x)(x−μ_k)/σ_k` followed by the variance block
/// `(1/(n√(2π_k))) Σ γ_k(x)((x−μ_k)²/σ_k² − 1)`, each laid out component-major.
pub fn fisher_raw(gmm: &GmmModel, data: &[f64], dim: usize) -> Result<Vec<f64>> {
    if dim != gmm.dim {
        return Err(Error::DimensionMismatch { expected: gmm.dim, actual: dim });
    }
    let n = row_count(data, dim)?;
    let k = gmm.k();
    let mut mean_block = vec![0.0; k * dim];
    let mut var_block = vec![0.0; k * dim];
    let mut gamma = vec![0.0; k];
    for i in canonical_order(data, dim) {
        let x = &data[i * dim..(i + 1) * dim];
        gmm.posteriors(x, &mut gamma);
        for c in 0..k {
            if gamma[c] == 0.0 {
                continue;
            }
            let (mu, var) = (gmm.mean(c), gmm.variance(c));
            for j in 0..dim {
                let z = (x[j] - mu[j]) / var[j].sqrt();
                mean_block[c * dim + j] += gamma[c] * z;
                var_block[c * dim + j] += gamma[c] * (z * z - 1.0);
            }
        }
    }
    for c in 0..k {
        let pi = gmm.weights[c];
        let (sm, sv) = (1.0 / (n as f64 * pi.sqrt()), 1.0 / (n as f64 * (2.0 * pi).sqrt()));
        mean_block[c * dim..(c + 1) * dim].iter_mut().for_each(|v| *v *= sm);
        var_block[c * dim..(c + 1) * dim].iter_mut().for_each(|v| *v *= sv);
    }
    mean_block.extend(var_block);
    Ok(mean_block)
}

/// Fisher Vector with signed square-root and L2 normalization. Length `2·K·D`.
pub fn encode_fv(gmm: &GmmModel, data: &[f64], dim: usize) -> Result<Vec<f64>> {
    let mut fv = fisher_raw(gmm, data, dim)?;
    fv.iter_mut().for_each(|v| *v = v.signum() * v.abs().sqrt());
    let norm = fv.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        log::warn!("Fisher Vector is all zeros before normalization");
        fv.iter_mut().for_each(|v| *v = 0.0);
        return Ok(fv);
    }
    fv.iter_mut().for_each(|v| *v /= norm);
    Ok(fv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn toy() -> GmmModel {
        GmmModel {
            dim: 2,
            weights: vec![0.3, 0.7],
            means: vec![0.0, 0.5, 1.2, -0.4],
            variances: vec![0.5, 0.8, 1.3, 0.6],
        }
    }

    /// Direct log-likelihood with the mixture parameterized by standard deviations.
    fn ll(w: &[f64], mu: &[f64], sigma: &[f64], data: &[f64]) -> f64 {
        data.chunks(2)
            .map(|x| {
                (0..w.len())
                    .map(|k| {
                        let mut p = w[k];
                        for j in 0..2 {
                            let s = sigma[k * 2 + j];
                            let z = (x[j] - mu[k * 2 + j]) / s;
                            p *= (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
                        }
                        p
                    })
                    .sum::<f64>()
                    .ln()
            })
            .sum()
    }

    #[test]
    fn matches_finite_difference_gradients() {
        let g = toy();
        let data = [0.3, 0.1, 1.0, -0.2, -0.5, 0.9];
        let n = 3.0;
        let sigma: Vec<f64> = g.variances.iter().map(|v| v.sqrt()).collect();
        let fv = fisher_raw(&g, &data, 2).unwrap();
        let eps = 1e-5;
        for k in 0..2 {
            for j in 0..2 {
                let idx = k * 2 + j;
                let (mut up, mut dn) = (g.means.clone(), g.means.clone());
                up[idx] += eps;
                dn[idx] -= eps;
                let d_mu = (ll(&g.weights, &up, &sigma, &data) - ll(&g.weights, &dn, &sigma, &data)) / (2.0 * eps);
                let expect_mu = sigma[idx] / (n * g.weights[k].sqrt()) * d_mu;
                let (mut up, mut dn) = (sigma.clone(), sigma.clone());
                up[idx] += eps;
                dn[idx] -= eps;
                let d_sigma = (ll(&g.weights, &g.means, &up, &data) - ll(&g.weights, &g.means, &dn, &data)) / (2.0 * eps);
                let expect_sigma = sigma[idx] / (n * (2.0 * g.weights[k]).sqrt()) * d_sigma;
                for (got, expect) in [(fv[idx], expect_mu), (fv[4 + idx], expect_sigma)] {
                    let rel = (got - expect).abs() / expect.abs().max(1e-12);
                    assert!(rel < 1e-4, "component {k} dim {j}: {got} vs {expect}");
                }
            }
        }
    }

    #[test]
    fn descriptors_at_a_mean() {
        let g = GmmModel { dim: 2, weights: vec![0.5, 0.5], means: vec![0.0, 0.0, 50.0, 50.0], variances: vec![1.0; 4] };
        let fv = fisher_raw(&g, &[0.0, 0.0, 0.0, 0.0], 2).unwrap();
        assert!(fv[0..4].iter().all(|v| v.abs() < 1e-12));
        assert!(fv[4] < 0.0 && fv[5] < 0.0);
        let enc = encode_fv(&g, &[0.0, 0.0], 2).unwrap();
        assert_eq!(enc.len(), 8);
        assert!((enc.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn order_and_duplication_invariance() {
        let g = toy();
        let mut rng = seeded(4);
        let data: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..2.0)).collect();
        let base = encode_fv(&g, &data, 2).unwrap();
        let mut rows: Vec<&[f64]> = data.chunks(2).collect();
        for _ in 0..20 {
            rows.shuffle(&mut rng);
            assert_eq!(encode_fv(&g, &rows.concat(), 2).unwrap(), base);
        }
        let doubled = [data.clone(), data.clone()].concat();
        let dup = encode_fv(&g, &doubled, 2).unwrap();
        assert!(dup.iter().zip(&base).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(encode_fv(&toy(), &[0.0; 3], 3), Err(Error::DimensionMismatch { .. })));
    }
}
