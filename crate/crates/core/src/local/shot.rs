use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;

use super::{local_frame, require_normals, DescriptorKind, DescriptorSet, Keypoint, MIN_SUPPORT};
use crate::cloud::{NeighborIndex, PointCloud};
use crate::{par, Error, Result};

const AZIMUTH_BINS: usize = 8;
const ELEVATION_BINS: usize = 2;
const RADIAL_BINS: usize = 2;
const COSINE_BINS: usize = 11;
const SECTORS: usize = AZIMUTH_BINS * ELEVATION_BINS * RADIAL_BINS;

pub const SHOT_DIM: usize = SECTORS * COSINE_BINS;

/// Linear interpolation between bin centers with clamping at both ends.
/// `pos` is the continuous coordinate in bin units (bin `i` centered at `i + 0.5`).
fn clamped_pair(pos: f64, bins: usize) -> [(usize, f64); 2] {
    let c = pos - 0.5;
    if c <= 0.0 {
        return [(0, 1.0), (0, 0.0)];
    }
    if c >= (bins - 1) as f64 {
        return [(bins - 1, 1.0), (bins - 1, 0.0)];
    }
    let lo = c.floor();
    let frac = c - lo;
    let lo = lo as usize;
    [(lo, 1.0 - frac), (lo + 1, frac)]
}

/// Same as [`clamped_pair`] on a circular axis.
fn circular_pair(pos: f64, bins: usize) -> [(usize, f64); 2] {
    let c = (pos - 0.5).rem_euclid(bins as f64);
    let lo = c.floor();
    let frac = c - lo;
    let lo = (lo as usize) % bins;
    [(lo, 1.0 - frac), ((lo + 1) % bins, frac)]
}

/// Signature of Histograms of OrienTations at the given keypoints.
///
/// Support points are placed in 32 sectors of the keypoint's local frame
/// (8 azimuth × 2 elevation × 2 radial shells); the cosine between keypoint and
/// neighbor normals is accumulated in 11 bins with quadrilinear interpolation,
/// and the 352-vector is L2-normalized.
pub fn compute_shot(cloud: &PointCloud, keypoints: &[Keypoint], radius: f64) -> Result<DescriptorSet> {
    require_normals(cloud)?;
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("SHOT radius must be > 0, got {radius}")));
    }
    let index = NeighborIndex::from_cloud(cloud);
    let rows = par::map(keypoints, |kp| shot_row(cloud, &index, kp, radius));
    Ok(DescriptorSet::from_results(DescriptorKind::Shot, SHOT_DIM, keypoints, rows))
}

fn shot_row(cloud: &PointCloud, index: &NeighborIndex, kp: &Keypoint, radius: f64) -> Result<Vec<f64>> {
    let normal = cloud
        .normal(kp.index)
        .ok_or_else(|| Error::InvalidArgument("keypoint without a valid normal".into()))?;
    let nbrs: Vec<_> = index
        .radius(&kp.position, radius)
        .into_iter()
        .filter(|n| n.index != kp.index)
        .collect();
    if nbrs.len() < MIN_SUPPORT {
        return Err(Error::TooFewNeighbors { found: nbrs.len(), required: MIN_SUPPORT });
    }
    let positions: Vec<Vector3<f64>> = nbrs.iter().map(|n| cloud.points[n.index].position).collect();
    let frame = local_frame(&kp.position, &positions, radius)?;

    let mut hist = vec![0.0; SHOT_DIM];
    for n in &nbrs {
        let Some(nn) = cloud.normal(n.index) else {
            continue;
        };
        if n.distance == 0.0 {
            continue;
        }
        let local = frame.to_local(&cloud.points[n.index].position);
        let cosine = normal.dot(&nn).clamp(-1.0, 1.0);
        let azimuth = local.y.atan2(local.x);
        let elevation = local.z.atan2(local.x.hypot(local.y));

        let cos_bins = clamped_pair((cosine + 1.0) * 0.5 * COSINE_BINS as f64, COSINE_BINS);
        let az_bins = circular_pair((azimuth + PI) / (2.0 * PI) * AZIMUTH_BINS as f64, AZIMUTH_BINS);
        let el_bins = clamped_pair((elevation + FRAC_PI_2) / PI * ELEVATION_BINS as f64, ELEVATION_BINS);
        let rad_bins = clamped_pair(n.distance / radius * RADIAL_BINS as f64, RADIAL_BINS);

        for (a, wa) in az_bins {
            for (e, we) in el_bins {
                for (r, wr) in rad_bins {
                    let sector = (a * ELEVATION_BINS + e) * RADIAL_BINS + r;
                    let w_sector = wa * we * wr;
                    if w_sector == 0.0 {
                        continue;
                    }
                    for (c, wc) in cos_bins {
                        hist[sector * COSINE_BINS + c] += w_sector * wc;
                    }
                }
            }
        }
    }
    let norm = hist.iter().map(|h| h * h).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::TooFewNeighbors { found: 0, required: MIN_SUPPORT });
    }
    hist.iter_mut().for_each(|h| *h /= norm);
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{Normals, Point3C};

    #[test]
    fn interpolation_weights_sum_to_one() {
        for pos in [0.0, 0.3, 0.5, 1.7, 4.2, 7.99, 8.0] {
            let w: f64 = circular_pair(pos, 8).iter().map(|p| p.1).sum();
            assert!((w - 1.0).abs() < 1e-12);
            let w: f64 = clamped_pair(pos, 11).iter().map(|p| p.1).sum();
            assert!((w - 1.0).abs() < 1e-12);
        }
        assert_eq!(circular_pair(7.9, 8)[1].0, 0);
    }

    #[test]
    fn duplicate_support_is_degenerate() {
        let n = 12;
        let cloud = PointCloud {
            points: vec![Point3C::at(Vector3::new(0.5, 0.5, 0.5)); n],
            normals: Some(Normals { vectors: vec![Vector3::z(); n], valid: vec![true; n] }),
        };
        let kp = Keypoint { index: 0, position: cloud.points[0].position, radius: 0.1 };
        assert!(matches!(
            shot_row(&cloud, &NeighborIndex::from_cloud(&cloud), &kp, 0.1),
            Err(Error::DegenerateFrame)
        ));
        assert!(compute_shot(&cloud, &[kp], 0.1).unwrap().is_empty());
    }
}
