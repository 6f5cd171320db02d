use super::Keypoint;
use crate::cloud::normals::local_covariance_frame;
use crate::cloud::voxel::voxel_groups;
use crate::cloud::{NeighborIndex, PointCloud};
use crate::{par, Error, Result};

/// Intrinsic Shape Signature thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IssParams {
    pub salient_radius: f64,
    pub non_max_radius: f64,
    pub gamma_21: f64,
    pub gamma_32: f64,
    pub min_neighbors: usize,
}

impl IssParams {
    pub fn from_resolution(resolution: f64) -> Self {
        Self {
            salient_radius: 6.0 * resolution,
            non_max_radius: 4.0 * resolution,
            gamma_21: 0.975,
            gamma_32: 0.975,
            min_neighbors: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KeypointMethod {
    /// One keypoint per occupied cell of a grid with the given spacing.
    Uniform { spacing: f64 },
    Iss(IssParams),
}

/// Keypoints carry `support_radius` for downstream descriptors. Only points with a
/// valid normal are eligible.
pub fn detect_keypoints(cloud: &PointCloud, method: KeypointMethod, support_radius: f64) -> Result<Vec<Keypoint>> {
    super::require_normals(cloud)?;
    let indices = match method {
        KeypointMethod::Uniform { spacing } => uniform(cloud, spacing)?,
        KeypointMethod::Iss(params) => iss(cloud, &params)?,
    };
    if indices.is_empty() {
        return Err(Error::NoKeypoints);
    }
    Ok(indices
        .into_iter()
        .map(|index| Keypoint {
            index,
            position: cloud.points[index].position,
            radius: support_radius,
        })
        .collect())
}

/// Voxel centroids snapped to the closest member point with a valid normal.
fn uniform(cloud: &PointCloud, spacing: f64) -> Result<Vec<usize>> {
    let eligible: Vec<usize> = (0..cloud.len()).filter(|&i| cloud.normal(i).is_some()).collect();
    let sub = cloud.select(&eligible);
    let groups = voxel_groups(&sub, spacing)?;
    Ok(groups
        .iter()
        .map(|members| {
            let c = crate::cloud::voxel::centroid_point(&sub, members).position;
            let best = members
                .iter()
                .min_by(|&&a, &&b| {
                    let da = (sub.points[a].position - c).norm_squared();
                    let db = (sub.points[b].position - c).norm_squared();
                    da.total_cmp(&db).then(a.cmp(&b))
                })
                .expect("voxel groups are non-empty");
            eligible[*best]
        })
        .collect())
}

fn iss(cloud: &PointCloud, p: &IssParams) -> Result<Vec<usize>> {
    if !(p.salient_radius > 0.0 && p.non_max_radius > 0.0) {
        return Err(Error::InvalidArgument("ISS radii must be > 0".into()));
    }
    let index = NeighborIndex::from_cloud(cloud);
    // saliency = smallest eigenvalue for candidates passing both ratio tests
    let saliency: Vec<Option<f64>> = par::map_range(cloud.len(), |i| {
        cloud.normal(i)?;
        let nbrs = index.radius(&cloud.points[i].position, p.salient_radius);
        if nbrs.len() < p.min_neighbors {
            return None;
        }
        let (_, _, ev) = local_covariance_frame(nbrs.iter().map(|n| index.point(n.index)))?;
        let (l3, l2, l1) = (ev[0], ev[1], ev[2]);
        // planar or linear neighborhoods have no salient third direction
        if !(l1 > 0.0) || l3 <= 1e-6 * l1 {
            return None;
        }
        (l2 / l1 < p.gamma_21 && l3 / l2 < p.gamma_32).then_some(l3)
    });
    Ok(par::map_range(cloud.len(), |i| {
        let s = saliency[i]?;
        let dominated = index
            .radius(&cloud.points[i].position, p.non_max_radius)
            .iter()
            .any(|n| n.index != i && matches!(saliency[n.index], Some(o) if o > s || (o == s && n.index < i)));
        (!dominated).then_some(i)
    })
    .into_iter()
    .flatten()
    .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{estimate_normals, Point3C};
    use nalgebra::Vector3;
    use rand::Rng;
    use std::collections::HashSet;

    fn grid_plane(n: usize, step: f64) -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push(Point3C::at(Vector3::new(i as f64 * step, j as f64 * step, 0.0)));
            }
        }
        estimate_normals(&PointCloud::new(pts), 2.5 * step).unwrap()
    }

    #[test]
    fn planar_cloud_has_no_iss_keypoints() {
        let c = grid_plane(30, 0.01);
        let res = detect_keypoints(&c, KeypointMethod::Iss(IssParams::from_resolution(0.01)), 0.08);
        assert!(matches!(res, Err(Error::NoKeypoints)));
    }

    #[test]
    fn fine_spacing_keeps_every_point() {
        let c = grid_plane(12, 0.01);
        let kps = detect_keypoints(&c, KeypointMethod::Uniform { spacing: 0.004 }, 0.08).unwrap();
        assert_eq!(kps.len(), c.len());
    }

    #[test]
    fn uniform_count_tracks_occupied_cells() {
        let mut rng = crate::rng::seeded(12);
        let pts: Vec<Point3C> = (0..10_000)
            .map(|_| {
                let (x, y): (f64, f64) = (rng.random(), rng.random());
                Point3C::at(Vector3::new(x, y, 0.1 * (6.0 * x).sin()))
            })
            .collect();
        let cloud = estimate_normals(&PointCloud::new(pts), 0.03).unwrap();
        let res = crate::cloud::compute_resolution(&cloud).unwrap();
        let spacing = 4.0 * res;
        // brute-force occupancy count over the same grid
        let cells: HashSet<[i64; 3]> = cloud
            .points
            .iter()
            .map(|p| [0, 1, 2].map(|a| (p.position[a] / spacing).floor() as i64))
            .collect();
        let kps = detect_keypoints(&cloud, KeypointMethod::Uniform { spacing }, 8.0 * res).unwrap();
        let expected = cells.len() as f64;
        assert!((kps.len() as f64 - expected).abs() <= 0.2 * expected, "{} vs {expected}", kps.len());
    }

    #[test]
    fn iss_finds_corners_of_a_box() {
        let mut pts = Vec::new();
        let n = 20;
        for i in 0..=n {
            for j in 0..=n {
                let (u, v) = (i as f64 / n as f64, j as f64 / n as f64);
                for p in [
                    [u, v, 0.0], [u, v, 1.0], [u, 0.0, v], [u, 1.0, v], [0.0, u, v], [1.0, u, v],
                ] {
                    pts.push(Point3C::at(Vector3::new(p[0], p[1], p[2])));
                }
            }
        }
        let c = estimate_normals(&PointCloud::new(pts), 0.12).unwrap();
        let params = IssParams { salient_radius: 0.15, non_max_radius: 0.3, ..IssParams::from_resolution(0.05) };
        let kps = detect_keypoints(&c, KeypointMethod::Iss(params), 0.2).unwrap();
        for corner in 0..8 {
            let c = Vector3::new((corner & 1) as f64, ((corner >> 1) & 1) as f64, ((corner >> 2) & 1) as f64);
            assert!(
                kps.iter().any(|k| (k.position - c).norm() < 0.2),
                "no keypoint near corner {c:?}"
            );
        }
    }
}
