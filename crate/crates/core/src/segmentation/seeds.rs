use std::collections::BTreeMap;

use nalgebra::Vector3;

use super::VoxelGrid;
use crate::cloud::voxel::cell_of;
use crate::cloud::NeighborIndex;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Seed {
    /// Index into [`VoxelGrid::voxels`].
    pub voxel: usize,
    pub spacing: f64,
}

/// Places one seed per occupied cell of a lattice with spacing `r_seed`.
///
/// Each lattice point (the center of its cell) is snapped to the nearest occupied
/// voxel lying within `r_seed / 2` of it along every axis, i.e. inside the lattice
/// cell. Seeds are ordered by lattice cell.
pub fn select_seeds(grid: &VoxelGrid, r_seed: f64) -> Result<Vec<Seed>> {
    if !(r_seed > grid.resolution) {
        return Err(Error::InvalidArgument(format!(
            "seed resolution {r_seed} must exceed voxel resolution {}",
            grid.resolution
        )));
    }
    let mut best: BTreeMap<[i64; 3], (f64, usize)> = BTreeMap::new();
    for (vi, v) in grid.voxels.iter().enumerate() {
        let cell = cell_of(&v.position, r_seed);
        let center = Vector3::new(cell[0] as f64 + 0.5, cell[1] as f64 + 0.5, cell[2] as f64 + 0.5) * r_seed;
        let d2 = (v.position - center).norm_squared();
        let entry = best.entry(cell).or_insert((d2, vi));
        if d2 < entry.0 {
            *entry = (d2, vi);
        }
    }
    if best.is_empty() {
        return Err(Error::EmptySeedSet("no occupied voxel near any lattice point".into()));
    }
    Ok(best
        .into_values()
        .map(|(_, voxel)| Seed { voxel, spacing: r_seed })
        .collect())
}

/// Drops seeds with fewer than `min_occupied` occupied voxels within `spacing / 2`.
pub fn filter_isolated_seeds(grid: &VoxelGrid, seeds: &[Seed], min_occupied: usize) -> Result<Vec<Seed>> {
    if min_occupied < 1 {
        return Err(Error::InvalidArgument("min_occupied must be >= 1".into()));
    }
    let index = NeighborIndex::new(grid.voxels.iter().map(|v| v.position).collect());
    let kept: Vec<Seed> = seeds
        .iter()
        .filter(|s| index.radius(&grid.voxels[s.voxel].position, s.spacing / 2.0).len() >= min_occupied)
        .copied()
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptySeedSet(format!(
            "all {} seeds have fewer than {min_occupied} occupied voxels nearby",
            seeds.len()
        )));
    }
    Ok(kept)
}
