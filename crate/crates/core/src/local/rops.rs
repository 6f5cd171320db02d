use std::f64::consts::FRAC_PI_2;

use nalgebra::{Rotation3, Vector3};

use super::{local_frame, require_normals, DescriptorKind, DescriptorSet, Keypoint, MIN_SUPPORT};
use crate::cloud::{NeighborIndex, PointCloud};
use crate::{par, Error, Result};

const STATS: usize = 5;
const PLANES: usize = 3;
const AXES: usize = 3;

pub const ROPS_DIM: usize = AXES * 3 * PLANES * STATS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RopsParams {
    pub rotations: usize,
    pub bins: usize,
}

impl Default for RopsParams {
    fn default() -> Self {
        Self { rotations: 3, bins: 5 }
    }
}

impl RopsParams {
    pub fn dim(&self) -> usize {
        AXES * self.rotations * PLANES * STATS
    }
}

/// Rotational Projection Statistics over point projections.
///
/// The support, expressed in the keypoint's local frame, is rotated about each frame
/// axis by `rotations` angles spread over (0, π/2]. Each rotated copy is projected on
/// the xy, xz and yz planes; a `bins × bins` distribution over the projection's
/// bounding box yields four central moments (μ11, μ12, μ21, μ22) and its Shannon
/// entropy.
pub fn compute_rops(
    cloud: &PointCloud,
    keypoints: &[Keypoint],
    radius: f64,
    params: RopsParams,
) -> Result<DescriptorSet> {
    require_normals(cloud)?;
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("RoPS radius must be > 0, got {radius}")));
    }
    if params.rotations == 0 || params.bins == 0 {
        return Err(Error::InvalidArgument("RoPS needs at least one rotation and one bin".into()));
    }
    let index = NeighborIndex::from_cloud(cloud);
    let rows = par::map(keypoints, |kp| {
        let support: Vec<Vector3<f64>> = index
            .radius(&kp.position, radius)
            .into_iter()
            .filter(|n| n.index != kp.index)
            .map(|n| cloud.points[n.index].position)
            .collect();
        if support.len() < MIN_SUPPORT {
            return Err(Error::TooFewNeighbors { found: support.len(), required: MIN_SUPPORT });
        }
        let frame = local_frame(&kp.position, &support, radius)?;
        let local: Vec<Vector3<f64>> = support.iter().map(|p| frame.to_local(p)).collect();
        Ok(rops_from_local(&local, params))
    });
    Ok(DescriptorSet::from_results(DescriptorKind::Rops, params.dim(), keypoints, rows))
}

/// RoPS statistics of a support already expressed in its local frame.
pub fn rops_from_local(local: &[Vector3<f64>], params: RopsParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(params.dim());
    let step = FRAC_PI_2 / params.rotations as f64;
    let mut projected = vec![(0.0, 0.0); local.len()];
    for axis in [Vector3::x_axis(), Vector3::y_axis(), Vector3::z_axis()] {
        for t in 0..params.rotations {
            let rot = Rotation3::from_axis_angle(&axis, step * (t + 1) as f64);
            let rotated: Vec<Vector3<f64>> = local.iter().map(|p| rot * p).collect();
            for (a, b) in [(0usize, 1usize), (0, 2), (1, 2)] {
                for (dst, p) in projected.iter_mut().zip(&rotated) {
                    *dst = (p[a], p[b]);
                }
                let dist = distribution(&projected, params.bins);
                out.extend_from_slice(&statistics(&dist, params.bins));
            }
        }
    }
    out
}

/// Normalized `bins × bins` occupancy over the bounding box of `pts` (row-major, first
/// coordinate selects the row).
pub(crate) fn distribution(pts: &[(f64, f64)], bins: usize) -> Vec<f64> {
    let mut d = vec![0.0; bins * bins];
    if pts.is_empty() {
        return d;
    }
    let (mut lo_u, mut hi_u, mut lo_v, mut hi_v) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(u, v) in pts {
        lo_u = lo_u.min(u);
        hi_u = hi_u.max(u);
        lo_v = lo_v.min(v);
        hi_v = hi_v.max(v);
    }
    let cell = |x: f64, lo: f64, hi: f64| -> usize {
        if hi > lo {
            (((x - lo) / (hi - lo) * bins as f64).floor() as usize).min(bins - 1)
        } else {
            0
        }
    };
    let w = 1.0 / pts.len() as f64;
    for &(u, v) in pts {
        d[cell(u, lo_u, hi_u) * bins + cell(v, lo_v, hi_v)] += w;
    }
    d
}

/// `[μ11, μ12, μ21, μ22, entropy]` of a distribution matrix with 1-based bin indices.
pub(crate) fn statistics(d: &[f64], bins: usize) -> [f64; STATS] {
    let (mut mi, mut mj) = (0.0, 0.0);
    for i in 0..bins {
        for j in 0..bins {
            let p = d[i * bins + j];
            mi += (i + 1) as f64 * p;
            mj += (j + 1) as f64 * p;
        }
    }
    let mut m = [0.0; 4];
    let mut entropy = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let p = d[i * bins + j];
            if p == 0.0 {
                continue;
            }
            let di = (i + 1) as f64 - mi;
            let dj = (j + 1) as f64 - mj;
            m[0] += di * dj * p;
            m[1] += di * dj * dj * p;
            m[2] += di * di * dj * p;
            m[3] += di * di * dj * dj * p;
            entropy -= p * p.ln();
        }
    }
    [m[0], m[1], m[2], m[3], entropy]
}
