use nalgebra::{Matrix3, Vector3};

use crate::cloud::normals::sorted_eigen;
use crate::{Error, Result};

/// Smallest accepted ratio between the middle and the largest covariance eigenvalue.
const MIN_EIGEN_RATIO: f64 = 1e-6;

/// Orthonormal local reference frame anchored at a keypoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub origin: Vector3<f64>,
    /// Rows are the x, y and z axes.
    pub rotation: Matrix3<f64>,
}

impl LocalFrame {
    pub fn x(&self) -> Vector3<f64> {
        self.rotation.row(0).transpose()
    }

    pub fn y(&self) -> Vector3<f64> {
        self.rotation.row(1).transpose()
    }

    pub fn z(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    /// Coordinates of `p` in this frame.
    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (p - self.origin)
    }
}

/// Distance-weighted covariance frame with sign disambiguation by majority vote.
///
/// Each support point contributes with weight `radius - d`. The x axis is the
/// dominant eigenvector, z the least dominant one; each is flipped so that most
/// support points lie on its positive side, and `y = z × x`.
pub fn local_frame(center: &Vector3<f64>, support: &[Vector3<f64>], radius: f64) -> Result<LocalFrame> {
    let mut cov = Matrix3::zeros();
    let mut total = 0.0;
    for p in support {
        let d = p - center;
        let w = radius - d.norm();
        if w <= 0.0 {
            continue;
        }
        cov += w * d * d.transpose();
        total += w;
    }
    if total <= 0.0 {
        return Err(Error::DegenerateFrame);
    }
    cov /= total;
    let (axes, values) = sorted_eigen(cov);
    if !(values[2] > 0.0) || values[1] / values[2] < MIN_EIGEN_RATIO {
        return Err(Error::DegenerateFrame);
    }
    let mut x = axes[2];
    let mut z = axes[0];
    if !majority_positive(center, support, &x) {
        x = -x;
    }
    if !majority_positive(center, support, &z) {
        z = -z;
    }
    let y = z.cross(&x);
    Ok(LocalFrame {
        origin: *center,
        rotation: Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]),
    })
}

fn majority_positive(center: &Vector3<f64>, support: &[Vector3<f64>], axis: &Vector3<f64>) -> bool {
    let mut balance = 0i64;
    for p in support {
        let s = (p - center).dot(axis);
        if s > 0.0 {
            balance += 1;
        } else if s < 0.0 {
            balance -= 1;
        }
    }
    balance >= 0
}
