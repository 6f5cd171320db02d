use std::collections::{BTreeMap, VecDeque};

use super::{Seed, VoxelGrid, FEATURE_DIM};
use crate::{Error, Result};

/// Relative importance of color, spatial and geometric distance during growth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub color: f64,
    pub spatial: f64,
    pub feature: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self { color: 0.2, spatial: 0.4, feature: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Supervoxel {
    pub id: usize,
    /// Member voxel indices in the order they were claimed.
    pub voxels: Vec<usize>,
    /// Mean of the member voxel features.
    pub feature: [f64; FEATURE_DIM],
}

impl Supervoxel {
    pub fn color(&self) -> [f64; 3] {
        [self.feature[3], self.feature[4], self.feature[5]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub supervoxels: Vec<Supervoxel>,
    /// Supervoxel id per voxel; `None` for voxels no seed could reach.
    pub voxel_labels: Vec<Option<usize>>,
    pub unreachable: Vec<usize>,
}

fn distance(a: &[f64; FEATURE_DIM], b: &[f64; FEATURE_DIM], w: &Weights, spatial_norm: f64) -> f64 {
    let sq = |range: std::ops::Range<usize>| -> f64 {
        range.map(|k| (a[k] - b[k]) * (a[k] - b[k])).sum()
    };
    (w.color * sq(3..6) + w.spatial * sq(0..3) / (spatial_norm * spatial_norm) + w.feature * sq(6..FEATURE_DIM))
        .sqrt()
}

/// Grows all supervoxels simultaneously, one adjacency ring per round.
///
/// In every round each unassigned voxel touching at least one supervoxel joins the
/// touching supervoxel with the smallest distance
/// `sqrt(wc·Dc² + ws·Ds²/(3·r_seed)² + wf·Df²)` to its current centroid feature
/// (lowest id on ties). Centroids are refreshed after every round; growth stops when
/// no reachable voxel is left.
pub fn expand_supervoxels(grid: &VoxelGrid, seeds: &[Seed], weights: Weights) -> Result<Segmentation> {
    if seeds.is_empty() {
        return Err(Error::EmptySeedSet("expansion needs at least one seed".into()));
    }
    let ws = [weights.color, weights.spatial, weights.feature];
    if ws.iter().any(|w| !(*w >= 0.0)) || ws.iter().all(|w| *w == 0.0) {
        return Err(Error::InvalidArgument("weights must be >= 0 and not all zero".into()));
    }
    let spatial_norm = 3.0 * seeds[0].spacing;
    let mut labels: Vec<Option<usize>> = vec![None; grid.len()];
    let mut supervoxels: Vec<Supervoxel> = Vec::with_capacity(seeds.len());
    let mut sums: Vec<[f64; FEATURE_DIM]> = Vec::with_capacity(seeds.len());
    let mut frontiers: Vec<Vec<usize>> = Vec::with_capacity(seeds.len());
    for seed in seeds {
        if labels[seed.voxel].is_some() {
            continue;
        }
        let id = supervoxels.len();
        labels[seed.voxel] = Some(id);
        supervoxels.push(Supervoxel { id, voxels: vec![seed.voxel], feature: grid.features[seed.voxel] });
        sums.push(grid.features[seed.voxel]);
        frontiers.push(vec![seed.voxel]);
    }

    loop {
        let mut claims: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for (id, frontier) in frontiers.iter().enumerate() {
            let centroid = &supervoxels[id].feature;
            for &v in frontier {
                for &u in &grid.adjacency[v] {
                    if labels[u].is_some() {
                        continue;
                    }
                    let d = distance(&grid.features[u], centroid, &weights, spatial_norm);
                    match claims.get_mut(&u) {
                        Some(best) if d < best.0 => *best = (d, id),
                        Some(_) => {}
                        None => {
                            claims.insert(u, (d, id));
                        }
                    }
                }
            }
        }
        if claims.is_empty() {
            break;
        }
        frontiers.iter_mut().for_each(Vec::clear);
        for (u, (_, id)) in claims {
            labels[u] = Some(id);
            supervoxels[id].voxels.push(u);
            for (s, f) in sums[id].iter_mut().zip(&grid.features[u]) {
                *s += f;
            }
            frontiers[id].push(u);
        }
        for (id, sv) in supervoxels.iter_mut().enumerate() {
            if !frontiers[id].is_empty() {
                let n = sv.voxels.len() as f64;
                for (c, s) in sv.feature.iter_mut().zip(&sums[id]) {
                    *c = s / n;
                }
            }
        }
    }

    let unreachable: Vec<usize> = (0..grid.len()).filter(|&v| labels[v].is_none()).collect();
    if !unreachable.is_empty() {
        log::info!("{} of {} voxels unreachable from any seed", unreachable.len(), grid.len());
    }
    Ok(Segmentation { supervoxels, voxel_labels: labels, unreachable })
}

/// Whether `members` induce a connected subgraph of the voxel adjacency graph.
pub fn is_connected(grid: &VoxelGrid, members: &[usize]) -> bool {
    let Some(&start) = members.first() else {
        return true;
    };
    let mut inside = vec![false; grid.len()];
    members.iter().for_each(|&m| inside[m] = true);
    let mut seen = vec![false; grid.len()];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    let mut reached = 1;
    while let Some(v) = queue.pop_front() {
        for &u in &grid.adjacency[v] {
            if inside[u] && !seen[u] {
                seen[u] = true;
                reached += 1;
                queue.push_back(u);
            }
        }
    }
    reached == members.len()
}
