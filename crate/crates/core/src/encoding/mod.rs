//! Descriptor quantization: k-means codebooks with bag-of-words histograms and
//! diagonal GMMs with Fisher Vectors.
//!
//! Descriptor sets are passed as flat row-major slices plus a row dimension.

mod fisher;
mod gmm;
mod kmeans;
mod model_io;

pub use fisher::{encode_fv, fisher_raw};
pub use gmm::{fit_gmm, GmmFit, GmmModel, GmmParams};
pub use kmeans::{encode_bovw, fit_kmeans, Codebook, KMeansFit};
pub use model_io::{load_codebook, load_gmm, save_codebook, save_gmm};

use std::cmp::Ordering;

use crate::{Error, Result};

/// Number of rows in `data`, checking that it is a non-empty whole number of rows.
pub(crate) fn row_count(data: &[f64], dim: usize) -> Result<usize> {
    if dim == 0 {
        return Err(Error::InvalidArgument("descriptor dimension must be >= 1".into()));
    }
    if data.len() % dim != 0 {
        return Err(Error::InvalidArgument(format!(
            "{} values do not form rows of dimension {dim}",
            data.len()
        )));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("no descriptors".into()));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("descriptors must be finite".into()));
    }
    Ok(data.len() / dim)
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Row indices in lexicographic row order, so sums over rows do not depend on the
/// order the rows were supplied in.
pub(crate) fn canonical_order(data: &[f64], dim: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..data.len() / dim).collect();
    idx.sort_by(|&a, &b| {
        let (ra, rb) = (&data[a * dim..(a + 1) * dim], &data[b * dim..(b + 1) * dim]);
        ra.iter()
            .zip(rb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    idx
}
