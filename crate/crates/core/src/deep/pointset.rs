use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::cloud::PointCloud;
use crate::rng::seeded;
use crate::{Error, Result};

/// Channels per point: normalized xyz followed by rgb.
pub const CHANNELS: usize = 6;

/// `n × 6` network input, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub data: Vec<f64>,
}

impl PointSet {
    pub fn from_rows(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() || data.len() % CHANNELS != 0 {
            return Err(Error::InvalidArgument(format!(
                "point set needs a whole, non-zero number of {CHANNELS}-channel rows"
            )));
        }
        Ok(Self { data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / CHANNELS
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * CHANNELS..(i + 1) * CHANNELS]
    }

    /// The same rows in the order given by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self { data: perm.iter().flat_map(|&i| self.row(i).iter().copied()).collect() }
    }
}

/// Samples `n` points (without replacement when the cloud is large enough, otherwise
/// every point once plus random repeats), then centers xyz on the sample centroid and
/// scales it to unit maximum radius.
pub fn sample_pointset(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointSet> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if n == 0 {
        return Err(Error::InvalidArgument("point set size must be >= 1".into()));
    }
    let mut rng = seeded(seed);
    let m = cloud.len();
    let picks: Vec<usize> = if m >= n {
        index::sample(&mut rng, m, n).into_vec()
    } else {
        let mut all: Vec<usize> = (0..m).collect();
        all.extend((m..n).map(|_| rng.random_range(0..m)));
        all.shuffle(&mut rng);
        all
    };
    let mut centroid = [0.0; 3];
    for &i in &picks {
        for a in 0..3 {
            centroid[a] += cloud.points[i].position[a] / n as f64;
        }
    }
    let radius = picks
        .iter()
        .map(|&i| (0..3).map(|a| (cloud.points[i].position[a] - centroid[a]).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let scale = if radius > 0.0 { 1.0 / radius } else { 1.0 };
    let mut data = Vec::with_capacity(n * CHANNELS);
    for &i in &picks {
        let p = &cloud.points[i];
        for a in 0..3 {
            data.push((p.position[a] - centroid[a]) * scale);
        }
        data.extend_from_slice(&p.color);
    }
    Ok(PointSet { data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Point3C;
    use std::collections::BTreeSet;

    fn cloud(n: usize) -> PointCloud {
        let mut rng = seeded(1);
        PointCloud::new(
            (0..n)
                .map(|_| Point3C::new(rng.random(), 2.0 * rng.random::<f64>(), 5.0 + rng.random::<f64>(), 0.1, 0.5, 0.2))
                .collect(),
        )
    }

    #[test]
    fn large_cloud_gives_distinct_points() {
        let c = cloud(10_000);
        let set = sample_pointset(&c, 1024, 3).unwrap();
        assert_eq!(set.len(), 1024);
        let distinct: BTreeSet<Vec<u64>> = (0..set.len()).map(|i| set.row(i).iter().map(|v| v.to_bits()).collect()).collect();
        assert_eq!(distinct.len(), 1024);
    }

    #[test]
    fn small_cloud_keeps_every_original() {
        let c = cloud(500);
        let set = sample_pointset(&c, 1024, 3).unwrap();
        assert_eq!(set.len(), 1024);
        let distinct: BTreeSet<Vec<u64>> = (0..set.len()).map(|i| set.row(i).iter().map(|v| v.to_bits()).collect()).collect();
        assert_eq!(distinct.len(), 500);
    }

    #[test]
    fn normalized_to_unit_sphere() {
        let set = sample_pointset(&cloud(3000), 512, 9).unwrap();
        let mut centroid = [0.0; 3];
        let mut radius: f64 = 0.0;
        for i in 0..set.len() {
            let r = set.row(i);
            (0..3).for_each(|a| centroid[a] += r[a] / set.len() as f64);
            radius = radius.max((r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt());
        }
        assert!(centroid.iter().all(|c| c.abs() < 1e-6));
        assert!((radius - 1.0).abs() < 1e-6);
        assert_eq!(set, sample_pointset(&cloud(3000), 512, 9).unwrap());
    }
}
