use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::{NeighborIndex, Normals, PointCloud};
use crate::{par, Error, Result};

/// Height of the default orientation viewpoint above the cloud centroid.
pub const DEFAULT_VIEWPOINT_LIFT: f64 = 10.0;

/// Minimum neighborhood size (query point included) for a valid normal.
const MIN_NEIGHBORS: usize = 3;

/// Estimates per-point normals by local PCA and orients them toward a viewpoint
/// placed `DEFAULT_VIEWPOINT_LIFT` meters above the cloud centroid.
pub fn estimate_normals(cloud: &PointCloud, radius: f64) -> Result<PointCloud> {
    let viewpoint = cloud.centroid() + Vector3::new(0.0, 0.0, DEFAULT_VIEWPOINT_LIFT);
    estimate_normals_with_viewpoint(cloud, radius, viewpoint)
}

pub fn estimate_normals_with_viewpoint(
    cloud: &PointCloud,
    radius: f64,
    viewpoint: Vector3<f64>,
) -> Result<PointCloud> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("normal radius must be > 0, got {radius}")));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let index = NeighborIndex::from_cloud(cloud);
    let estimates = par::map(&cloud.points, |p| {
        let nbrs = index.radius(&p.position, radius);
        if nbrs.len() < MIN_NEIGHBORS {
            return None;
        }
        let (_, axes, values) = local_covariance_frame(nbrs.iter().map(|n| index.point(n.index)))?;
        // all neighbors coincide
        if values[2] == 0.0 {
            return None;
        }
        let mut n = axes[0];
        if n.dot(&(viewpoint - p.position)) < 0.0 {
            n = -n;
        }
        Some(n)
    });
    let invalid = estimates.iter().filter(|e| e.is_none()).count();
    if invalid > 0 {
        log::debug!("{invalid} of {} points have too few neighbors for a normal", cloud.len());
    }
    let normals = Normals {
        vectors: estimates.iter().map(|e| e.unwrap_or_else(Vector3::zeros)).collect(),
        valid: estimates.iter().map(Option::is_some).collect(),
    };
    Ok(PointCloud {
        points: cloud.points.clone(),
        normals: Some(normals),
    })
}

/// Centroid, eigenvectors (ascending eigenvalue order) and eigenvalues of the
/// covariance of `points`. Returns `None` for an empty iterator.
pub(crate) fn local_covariance_frame(
    points: impl Iterator<Item = Vector3<f64>> + Clone,
) -> Option<(Vector3<f64>, [Vector3<f64>; 3], [f64; 3])> {
    let mut count = 0usize;
    let mut sum = Vector3::zeros();
    for p in points.clone() {
        sum += p;
        count += 1;
    }
    if count == 0 {
        return None;
    }
    let mean = sum / count as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= count as f64;
    let (axes, values) = sorted_eigen(cov);
    Some((mean, axes, values))
}

/// Eigen-decomposition of a symmetric 3x3 matrix with eigenpairs sorted ascending.
pub(crate) fn sorted_eigen(m: Matrix3<f64>) -> ([Vector3<f64>; 3], [f64; 3]) {
    let eig = SymmetricEigen::new(m);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let axes = idx.map(|i| eig.eigenvectors.column(i).into_owned().normalize());
    let values = idx.map(|i| eig.eigenvalues[i].max(0.0));
    (axes, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Point3C;
    use nalgebra::Rotation3;
    use rand::Rng;

    fn plane(n: usize) -> PointCloud {
        let mut rng = crate::rng::seeded(11);
        PointCloud::new(
            (0..n)
                .map(|_| Point3C::at(Vector3::new(rng.random(), rng.random(), 0.0)))
                .collect(),
        )
    }

    #[test]
    fn planar_normals_point_up() {
        let c = estimate_normals(&plane(200), 0.2).unwrap();
        let n = c.normals.unwrap();
        for (v, ok) in n.vectors.iter().zip(&n.valid) {
            assert!(ok);
            assert!((v - Vector3::z()).amax() < 1e-6, "{v:?}");
        }
    }

    #[test]
    fn sphere_normals_are_radial() {
        let mut rng = crate::rng::seeded(5);
        let pts: Vec<Point3C> = (0..2000)
            .map(|_| {
                let v = Vector3::new(
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                );
                Point3C::at(v.normalize())
            })
            .collect();
        let c = estimate_normals(&PointCloud::new(pts), 0.25).unwrap();
        for (i, p) in c.points.iter().enumerate() {
            let n = c.normal(i).unwrap();
            assert!(n.dot(&p.position).abs() > 0.99);
        }
    }

    #[test]
    fn isolated_point_is_flagged() {
        let mut c = plane(100);
        c.points.push(Point3C::at(Vector3::new(50.0, 50.0, 50.0)));
        let c = estimate_normals(&c, 0.2).unwrap();
        assert!(c.normal(100).is_none());
        assert!(c.normal(0).is_some());
        c.validate().unwrap();
    }

    #[test]
    fn rotation_equivariance() {
        let mut rng = crate::rng::seeded(21);
        let pts: Vec<Point3C> = (0..500)
            .map(|_| {
                let (x, y): (f64, f64) = (rng.random(), rng.random());
                Point3C::at(Vector3::new(x, y, 0.3 * (3.0 * x).sin() * y))
            })
            .collect();
        let cloud = PointCloud::new(pts);
        let base = estimate_normals(&cloud, 0.12).unwrap();
        let rot = Rotation3::from_euler_angles(0.4, -1.1, 2.3).into_inner();
        let moved = estimate_normals(&cloud.transformed(&rot, &Vector3::new(1.0, 2.0, 3.0)), 0.12).unwrap();
        for i in 0..cloud.len() {
            let expect = rot * base.normal(i).unwrap();
            let got = moved.normal(i).unwrap();
            let err = (got - expect).amax().min((got + expect).amax());
            assert!(err < 1e-5, "point {i}: {err}");
        }
    }

    #[test]
    fn rejects_bad_radius() {
        assert!(estimate_normals(&plane(10), 0.0).is_err());
        assert!(estimate_normals(&plane(10), f64::NAN).is_err());
    }
}
