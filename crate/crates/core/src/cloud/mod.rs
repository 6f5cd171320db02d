//! Point-cloud data model and the geometric plumbing shared by every stage.

mod io;
mod neighbors;
pub(crate) mod normals;
pub(crate) mod voxel;

pub use io::{atomic_write, load_cloud, save_cloud, CloudFormat};
pub use neighbors::{Neighbor, NeighborIndex};
pub use normals::{estimate_normals, estimate_normals_with_viewpoint, DEFAULT_VIEWPOINT_LIFT};
pub use voxel::{compute_resolution, voxel_downsample};

use nalgebra::{Matrix3, Vector3};

use crate::{Error, Result};

/// A colored 3D point. Coordinates are meters, color channels live in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3C {
    pub position: Vector3<f64>,
    pub color: [f64; 3],
}

impl Point3C {
    pub fn new(x: f64, y: f64, z: f64, r: f64, g: f64, b: f64) -> Self {
        Self {
            position: Vector3::new(x, y, z),
            color: [r, g, b],
        }
    }

    pub fn at(position: Vector3<f64>) -> Self {
        Self {
            position,
            color: [0.0; 3],
        }
    }

    pub fn is_valid(&self) -> bool {
        self.position.iter().all(|c| c.is_finite())
            && self.color.iter().all(|c| (0.0..=1.0).contains(c))
    }
}

/// Per-point unit normals with a validity flag.
///
/// Invalid entries (too few neighbors at estimation time) hold the zero vector and
/// are excluded from keypoint detection and descriptor supports.
#[derive(Debug, Clone, PartialEq)]
pub struct Normals {
    pub vectors: Vec<Vector3<f64>>,
    pub valid: Vec<bool>,
}

impl Normals {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<Vector3<f64>> {
        self.valid[i].then(|| self.vectors[i])
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3C>,
    pub normals: Option<Normals>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3C>) -> Self {
        Self {
            points,
            normals: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.points.iter().map(|p| p.position).collect()
    }

    pub fn centroid(&self) -> Vector3<f64> {
        let sum: Vector3<f64> = self.points.iter().map(|p| p.position).sum();
        sum / self.points.len().max(1) as f64
    }

    pub fn normal(&self, i: usize) -> Option<Vector3<f64>> {
        self.normals.as_ref().and_then(|n| n.get(i))
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    /// Checks the data-model invariants: finite coordinates, colors in range and
    /// unit-length valid normals matching the point count.
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.points.iter().position(|p| !p.is_valid()) {
            return Err(Error::InvalidArgument(format!(
                "point {i} has non-finite coordinates or out-of-range color"
            )));
        }
        if let Some(n) = &self.normals {
            if n.vectors.len() != self.points.len() || n.valid.len() != self.points.len() {
                return Err(Error::DimensionMismatch {
                    expected: self.points.len(),
                    actual: n.vectors.len(),
                });
            }
            for (i, (v, ok)) in n.vectors.iter().zip(&n.valid).enumerate() {
                if *ok && (v.norm() - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidArgument(format!("normal {i} is not unit length")));
                }
            }
        }
        Ok(())
    }

    /// Applies `p -> R p + t` to positions and `n -> R n` to normals.
    pub fn transformed(&self, rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> PointCloud {
        let points = self
            .points
            .iter()
            .map(|p| Point3C {
                position: rotation * p.position + translation,
                color: p.color,
            })
            .collect();
        let normals = self.normals.as_ref().map(|n| Normals {
            vectors: n.vectors.iter().map(|v| rotation * v).collect(),
            valid: n.valid.clone(),
        });
        PointCloud { points, normals }
    }

    /// Sub-cloud of the given indices, normals included.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let normals = self.normals.as_ref().map(|n| Normals {
            vectors: indices.iter().map(|&i| n.vectors[i]).collect(),
            valid: indices.iter().map(|&i| n.valid[i]).collect(),
        });
        PointCloud { points, normals }
    }

    pub fn bounding_box(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = self.points.first()?.position;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(&p.position), hi.sup(&p.position))
        }))
    }
}
