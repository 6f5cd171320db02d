//! Voxel-cloud connectivity segmentation (VCCS) and canopy extraction.
//!
//! The cloud is voxelized, seeds are placed on a coarser lattice, isolated seeds are
//! dropped, and supervoxels grow breadth-first over the 26-connected voxel graph.
//! Supervoxels whose centroid color is green enough form the plant canopy.

mod canopy;
mod expand;
mod grid;
mod seeds;

pub use canopy::{canopy_mask, excess_green, segment_canopy, write_labels, Canopy, CanopyLabel};
pub use expand::{expand_supervoxels, is_connected, Segmentation, Supervoxel, Weights};
pub use grid::{voxelize, voxelize_with, FeatureRadii, Voxel, VoxelGrid, FEATURE_DIM};
pub use seeds::{filter_isolated_seeds, select_seeds, Seed};

use crate::cloud::{compute_resolution, PointCloud};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VccsParams {
    pub voxel_resolution: f64,
    pub seed_resolution: f64,
    pub weights: Weights,
    pub min_occupied: usize,
    pub exg_threshold: f64,
}

impl VccsParams {
    /// Scale-relative defaults: voxels of twice the cloud resolution, seeds ten voxels apart.
    pub fn for_resolution(resolution: f64) -> Self {
        let voxel_resolution = 2.0 * resolution;
        Self {
            voxel_resolution,
            seed_resolution: 10.0 * voxel_resolution,
            weights: Weights::default(),
            min_occupied: 3,
            exg_threshold: 0.1,
        }
    }

    pub fn for_cloud(cloud: &PointCloud) -> Result<Self> {
        Ok(Self::for_resolution(compute_resolution(cloud)?))
    }
}

/// Full segmentation result for one cloud.
#[derive(Debug, Clone)]
pub struct SegmentedCloud {
    pub grid: VoxelGrid,
    pub segmentation: Segmentation,
    pub canopy: Canopy,
}

/// Runs voxelization, seeding, isolated-seed filtering, supervoxel growth and canopy
/// extraction.
pub fn segment(cloud: &PointCloud, params: &VccsParams) -> Result<SegmentedCloud> {
    let grid = voxelize(cloud, params.voxel_resolution)?;
    let seeds = select_seeds(&grid, params.seed_resolution)?;
    let seeds = filter_isolated_seeds(&grid, &seeds, params.min_occupied)?;
    let segmentation = expand_supervoxels(&grid, &seeds, params.weights)?;
    let canopy = segment_canopy(cloud, &grid, &segmentation, params.exg_threshold)?;
    Ok(SegmentedCloud { grid, segmentation, canopy })
}
