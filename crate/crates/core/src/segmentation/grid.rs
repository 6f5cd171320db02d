use std::collections::BTreeMap;

use nalgebra::Vector3;

use crate::cloud::voxel::cell_of;
use crate::cloud::{estimate_normals, Point3C, PointCloud};
use crate::local::{compute_fpfh, Keypoint, FPFH_DIM};
use crate::{Error, Result};

/// xyz (3) + rgb (3) + FPFH fractions (33).
pub const FEATURE_DIM: usize = 6 + FPFH_DIM;

#[derive(Debug, Clone, PartialEq)]
pub struct Voxel {
    pub cell: [i64; 3],
    pub members: Vec<usize>,
    pub position: Vector3<f64>,
    pub color: [f64; 3],
}

/// Neighborhood radii for the per-voxel geometric feature, in voxel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureRadii {
    pub normal: f64,
    pub fpfh: f64,
}

impl Default for FeatureRadii {
    fn default() -> Self {
        Self { normal: 2.0, fpfh: 3.0 }
    }
}

#[derive(Debug, Clone)]
pub struct VoxelGrid {
    pub resolution: f64,
    /// Occupied voxels sorted by cell index.
    pub voxels: Vec<Voxel>,
    /// 26-connected neighbors per voxel, ascending.
    pub adjacency: Vec<Vec<usize>>,
    /// Per-voxel 39-dim feature; FPFH part is zero where the support was too small.
    pub features: Vec<[f64; FEATURE_DIM]>,
    cells: BTreeMap<[i64; 3], usize>,
}

impl VoxelGrid {
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn voxel_at(&self, cell: &[i64; 3]) -> Option<usize> {
        self.cells.get(cell).copied()
    }

    /// Centroid cloud of the occupied voxels.
    pub fn centroid_cloud(&self) -> PointCloud {
        PointCloud::new(
            self.voxels
                .iter()
                .map(|v| Point3C { position: v.position, color: v.color })
                .collect(),
        )
    }

    /// Voxel index of every input point.
    pub fn point_to_voxel(&self, n_points: usize) -> Vec<usize> {
        let mut map = vec![usize::MAX; n_points];
        for (vi, v) in self.voxels.iter().enumerate() {
            for &p in &v.members {
                map[p] = vi;
            }
        }
        map
    }
}

pub fn voxelize(cloud: &PointCloud, r_voxel: f64) -> Result<VoxelGrid> {
    voxelize_with(cloud, r_voxel, FeatureRadii::default())
}

/// Bins points into cells `floor(p / r_voxel)`, links 26-neighbors and computes the
/// per-voxel feature vector.
pub fn voxelize_with(cloud: &PointCloud, r_voxel: f64, radii: FeatureRadii) -> Result<VoxelGrid> {
    if !(r_voxel > 0.0) {
        return Err(Error::InvalidArgument(format!("voxel resolution must be > 0, got {r_voxel}")));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut by_cell: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        by_cell.entry(cell_of(&p.position, r_voxel)).or_default().push(i);
    }
    let mut cells = BTreeMap::new();
    let voxels: Vec<Voxel> = by_cell
        .into_iter()
        .enumerate()
        .map(|(vi, (cell, members))| {
            cells.insert(cell, vi);
            let c = crate::cloud::voxel::centroid_point(cloud, &members);
            Voxel { cell, members, position: c.position, color: c.color }
        })
        .collect();

    let adjacency = voxels
        .iter()
        .enumerate()
        .map(|(vi, v)| {
            let mut nbrs = Vec::new();
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let key = [v.cell[0] + dx, v.cell[1] + dy, v.cell[2] + dz];
                        if let Some(&u) = cells.get(&key) {
                            if u != vi {
                                nbrs.push(u);
                            }
                        }
                    }
                }
            }
            nbrs.sort_unstable();
            nbrs
        })
        .collect();

    let mut grid = VoxelGrid {
        resolution: r_voxel,
        voxels,
        adjacency,
        features: Vec::new(),
        cells,
    };
    grid.features = voxel_features(&grid, radii)?;
    Ok(grid)
}

fn voxel_features(grid: &VoxelGrid, radii: FeatureRadii) -> Result<Vec<[f64; FEATURE_DIM]>> {
    let mut features: Vec<[f64; FEATURE_DIM]> = grid
        .voxels
        .iter()
        .map(|v| {
            let mut f = [0.0; FEATURE_DIM];
            f[..3].copy_from_slice(v.position.as_slice());
            f[3..6].copy_from_slice(&v.color);
            f
        })
        .collect();
    let centroids = estimate_normals(&grid.centroid_cloud(), radii.normal * grid.resolution)?;
    let keypoints: Vec<Keypoint> = (0..centroids.len())
        .filter(|&i| centroids.normal(i).is_some())
        .map(|i| Keypoint { index: i, position: centroids.points[i].position, radius: radii.fpfh })
        .collect();
    if keypoints.is_empty() {
        return Ok(features);
    }
    let fpfh = compute_fpfh(&centroids, &keypoints, radii.fpfh * grid.resolution)?;
    for (kp, row) in fpfh.keypoints.iter().zip(fpfh.rows()) {
        for (dst, v) in features[kp.index][6..].iter_mut().zip(row) {
            *dst = v / 100.0;
        }
    }
    Ok(features)
}
