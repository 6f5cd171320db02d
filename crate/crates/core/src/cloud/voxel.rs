use std::collections::HashMap;

use nalgebra::Vector3;

use super::{NeighborIndex, Point3C, PointCloud};
use crate::{par, Error, Result};

/// Integer cell of `p` in a grid of edge `leaf`.
pub(crate) fn cell_of(p: &Vector3<f64>, leaf: f64) -> [i64; 3] {
    [
        (p.x / leaf).floor() as i64,
        (p.y / leaf).floor() as i64,
        (p.z / leaf).floor() as i64,
    ]
}

/// Mean distance from each point to its nearest other point.
///
/// Coincident duplicates count as distance zero; an all-duplicate cloud therefore
/// yields 0.0 (logged as a warning).
pub fn compute_resolution(cloud: &PointCloud) -> Result<f64> {
    if cloud.len() < 2 {
        return Err(Error::InvalidArgument(
            "resolution needs at least two points".into(),
        ));
    }
    let index = NeighborIndex::from_cloud(cloud);
    let nearest = par::map_range(cloud.len(), |i| index.knn_of(i, 1, false)[0].distance);
    let res = nearest.iter().sum::<f64>() / cloud.len() as f64;
    if res == 0.0 {
        log::warn!("cloud resolution is zero: all points coincide");
    }
    Ok(res)
}

/// Replaces the points of each occupied voxel by their centroid (position and color).
///
/// Output order follows the first occurrence of each voxel in the input. Normals are
/// dropped; re-estimate them on the downsampled cloud if needed.
pub fn voxel_downsample(cloud: &PointCloud, leaf: f64) -> Result<PointCloud> {
    Ok(PointCloud::new(
        voxel_groups(cloud, leaf)?
            .iter()
            .map(|members| centroid_point(cloud, members))
            .collect(),
    ))
}

/// Point indices grouped per occupied voxel, in first-occurrence order.
pub(crate) fn voxel_groups(cloud: &PointCloud, leaf: f64) -> Result<Vec<Vec<usize>>> {
    if !(leaf > 0.0) {
        return Err(Error::InvalidArgument(format!("leaf size must be > 0, got {leaf}")));
    }
    let mut slot: HashMap<[i64; 3], usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let key = cell_of(&p.position, leaf);
        let g = *slot.entry(key).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    Ok(groups)
}

pub(crate) fn centroid_point(cloud: &PointCloud, members: &[usize]) -> Point3C {
    let n = members.len() as f64;
    let mut pos = Vector3::zeros();
    let mut color = [0.0; 3];
    for &i in members {
        let p = &cloud.points[i];
        pos += p.position;
        for c in 0..3 {
            color[c] += p.color[c];
        }
    }
    Point3C {
        position: pos / n,
        color: color.map(|c| (c / n).clamp(0.0, 1.0)),
    }
}
