use std::collections::BTreeSet;
use std::f64::consts::PI;

use nalgebra::Vector3;

use super::{require_normals, support, DescriptorKind, DescriptorSet, Keypoint, MIN_SUPPORT};
use crate::cloud::{NeighborIndex, PointCloud};
use crate::{par, Error, Result};

pub const FPFH_BINS: usize = 11;
pub const FPFH_DIM: usize = 3 * FPFH_BINS;

/// Darboux-frame angle triple `(alpha, phi, theta)` for an oriented point pair.
///
/// The source of the frame is the point whose normal makes the smaller angle with the
/// connecting line, which makes the triple independent of argument order. Returns
/// `None` for coincident points.
pub fn pair_features(
    p1: &Vector3<f64>,
    n1: &Vector3<f64>,
    p2: &Vector3<f64>,
    n2: &Vector3<f64>,
) -> Option<(f64, f64, f64)> {
    let delta = p2 - p1;
    let d = delta.norm();
    if d == 0.0 {
        return None;
    }
    let dir = delta / d;
    let (u, target, line) = if n1.dot(&dir).abs() >= n2.dot(&dir).abs() {
        (*n1, *n2, dir)
    } else {
        (*n2, *n1, -dir)
    };
    let phi = u.dot(&line);
    let v = u.cross(&line);
    let v_norm = v.norm();
    if v_norm == 0.0 {
        // normal parallel to the connecting line; frame orientation is arbitrary
        return Some((0.0, phi, 0.0));
    }
    let v = v / v_norm;
    let w = u.cross(&v);
    let alpha = v.dot(&target);
    let theta = w.dot(&target).atan2(u.dot(&target));
    Some((alpha, phi, theta))
}

fn bin_unit(value: f64) -> usize {
    (((value + 1.0) * 0.5 * FPFH_BINS as f64).floor() as isize).clamp(0, FPFH_BINS as isize - 1) as usize
}

fn bin_angle(theta: f64) -> usize {
    (((theta + PI) / (2.0 * PI) * FPFH_BINS as f64).floor() as isize).clamp(0, FPFH_BINS as isize - 1)
        as usize
}

/// Simplified point feature histogram of point `i` against its support, each
/// sub-histogram scaled to sum to 100 (all zero when the support is empty).
fn spfh(cloud: &PointCloud, index: &NeighborIndex, i: usize, radius: f64) -> [f64; FPFH_DIM] {
    let mut hist = [0.0; FPFH_DIM];
    let p = cloud.points[i].position;
    let Some(n) = cloud.normal(i) else {
        return hist;
    };
    let mut pairs = 0usize;
    for nb in support(cloud, index, &p, radius, i) {
        let q = cloud.points[nb.index].position;
        let nq = cloud.normal(nb.index).expect("support filters invalid normals");
        if let Some((alpha, phi, theta)) = pair_features(&p, &n, &q, &nq) {
            hist[bin_unit(alpha)] += 1.0;
            hist[FPFH_BINS + bin_unit(phi)] += 1.0;
            hist[2 * FPFH_BINS + bin_angle(theta)] += 1.0;
            pairs += 1;
        }
    }
    if pairs > 0 {
        let scale = 100.0 / pairs as f64;
        hist.iter_mut().for_each(|h| *h *= scale);
    }
    hist
}

pub(crate) fn normalize_fpfh(hist: &mut [f64]) {
    for sub in hist.chunks_mut(FPFH_BINS) {
        let s: f64 = sub.iter().sum();
        if s > 0.0 {
            let scale = 100.0 / s;
            sub.iter_mut().for_each(|h| *h *= scale);
        }
    }
}

/// Fast Point Feature Histograms at the given keypoints.
///
/// `FPFH(p) = SPFH(p) + 1/k * sum_q SPFH(q) / |p - q|` over the `k` support
/// neighbors `q` of `p`, followed by rescaling each sub-histogram to 100.
/// Keypoints with fewer than five supported neighbors are skipped.
pub fn compute_fpfh(cloud: &PointCloud, keypoints: &[Keypoint], radius: f64) -> Result<DescriptorSet> {
    require_normals(cloud)?;
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("FPFH radius must be > 0, got {radius}")));
    }
    let index = NeighborIndex::from_cloud(cloud);
    let supports = par::map(keypoints, |kp| {
        support(cloud, &index, &kp.position, radius, kp.index)
            .into_iter()
            .filter(|n| n.distance > 0.0)
            .collect::<Vec<_>>()
    });

    // SPFH is shared between overlapping supports, so compute it once per point
    let needed: Vec<usize> = keypoints
        .iter()
        .map(|kp| kp.index)
        .chain(supports.iter().flatten().map(|n| n.index))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let spfh_rows = par::map(&needed, |&i| spfh(cloud, &index, i, radius));
    let lookup = |i: usize| -> &[f64; FPFH_DIM] {
        &spfh_rows[needed.binary_search(&i).expect("spfh computed for every support point")]
    };

    let jobs: Vec<(usize, &Keypoint)> = keypoints.iter().enumerate().collect();
    let rows = par::map(&jobs, |&(k, kp)| {
        let nbrs = &supports[k];
        if cloud.normal(kp.index).is_none() {
            return Err(Error::InvalidArgument("keypoint without a valid normal".into()));
        }
        if nbrs.len() < MIN_SUPPORT {
            return Err(Error::TooFewNeighbors { found: nbrs.len(), required: MIN_SUPPORT });
        }
        let mut acc = [0.0; FPFH_DIM];
        for n in nbrs {
            let h = lookup(n.index);
            let w = 1.0 / n.distance;
            for (a, v) in acc.iter_mut().zip(h) {
                *a += v * w;
            }
        }
        let own = lookup(kp.index);
        let inv_k = 1.0 / nbrs.len() as f64;
        let mut row: Vec<f64> = own.iter().zip(&acc).map(|(s, a)| s + inv_k * a).collect();
        normalize_fpfh(&mut row);
        Ok(row)
    });
    Ok(DescriptorSet::from_results(DescriptorKind::Fpfh, FPFH_DIM, keypoints, rows))
}
