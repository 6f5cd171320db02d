use std::path::Path;

use super::{Segmentation, Supervoxel, VoxelGrid};
use crate::cloud::{atomic_write, PointCloud};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CanopyLabel {
    Plant,
    Background,
}

/// Excess-green index `2g - r - b`.
pub fn excess_green(rgb: [f64; 3]) -> f64 {
    2.0 * rgb[1] - rgb[0] - rgb[2]
}

/// Labels a supervoxel as plant iff the excess-green index of its centroid color
/// exceeds `threshold`.
pub fn canopy_mask(supervoxels: &[Supervoxel], threshold: f64) -> Vec<CanopyLabel> {
    supervoxels
        .iter()
        .map(|sv| {
            if excess_green(sv.color()) > threshold {
                CanopyLabel::Plant
            } else {
                CanopyLabel::Background
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Canopy {
    pub labels: Vec<CanopyLabel>,
    /// Supervoxel id per input point (`None` when its voxel was unreachable).
    pub point_supervoxel: Vec<Option<usize>>,
    pub point_is_plant: Vec<bool>,
    /// Input indices of the plant points, ascending.
    pub plant_indices: Vec<usize>,
    pub cloud: PointCloud,
}

pub fn segment_canopy(
    cloud: &PointCloud,
    grid: &VoxelGrid,
    segmentation: &Segmentation,
    threshold: f64,
) -> Result<Canopy> {
    if segmentation.supervoxels.is_empty() {
        return Err(Error::InvalidArgument("no supervoxels to label".into()));
    }
    let labels = canopy_mask(&segmentation.supervoxels, threshold);
    let voxel_of = grid.point_to_voxel(cloud.len());
    let point_supervoxel: Vec<Option<usize>> =
        voxel_of.iter().map(|&v| segmentation.voxel_labels[v]).collect();
    let point_is_plant: Vec<bool> = point_supervoxel
        .iter()
        .map(|sv| matches!(sv, Some(id) if labels[*id] == CanopyLabel::Plant))
        .collect();
    let plant_indices: Vec<usize> = (0..cloud.len()).filter(|&i| point_is_plant[i]).collect();
    if plant_indices.is_empty() {
        return Err(Error::NoCanopy);
    }
    let canopy_cloud = PointCloud::new(plant_indices.iter().map(|&i| cloud.points[i]).collect());
    Ok(Canopy {
        labels,
        point_supervoxel,
        point_is_plant,
        plant_indices,
        cloud: canopy_cloud,
    })
}

/// Writes `point_index supervoxel_id plant_flag` per point; unreachable points get
/// supervoxel id `-1`.
pub fn write_labels(canopy: &Canopy, path: &Path) -> Result<()> {
    atomic_write(path, |w| {
        for (i, (sv, plant)) in canopy.point_supervoxel.iter().zip(&canopy.point_is_plant).enumerate() {
            let id = sv.map_or(-1, |s| s as i64);
            writeln!(w, "{i} {id} {}", u8::from(*plant))?;
        }
        Ok(())
    })
}
