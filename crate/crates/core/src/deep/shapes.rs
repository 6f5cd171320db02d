//! Labeled rigid shapes (spheres, boxes, cylinders) used to pretrain the network
//! before it sees any plant.

use std::f64::consts::TAU;

use nalgebra::{Rotation3, Vector3};
use rand::Rng;

use super::pointset::sample_pointset;
use super::train::LabeledSet;
use crate::cloud::{Point3C, PointCloud};
use crate::rng::{derive_seed, seeded};
use crate::Result;

pub const SHAPE_CLASSES: [&str; 3] = ["sphere", "box", "cylinder"];

fn surface_point<R: Rng>(rng: &mut R, class: usize, dims: [f64; 3]) -> Vector3<f64> {
    match class {
        0 => {
            let z: f64 = rng.random_range(-1.0..1.0);
            let a = rng.random_range(0.0..TAU);
            let r = (1.0 - z * z).sqrt();
            Vector3::new(dims[0] * r * a.cos(), dims[1] * r * a.sin(), dims[2] * z)
        }
        1 => {
            let face = rng.random_range(0..6);
            let (u, v) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let s = if face % 2 == 0 { 1.0 } else { -1.0 };
            let p = match face / 2 {
                0 => Vector3::new(s, u, v),
                1 => Vector3::new(u, s, v),
                _ => Vector3::new(u, v, s),
            };
            Vector3::new(p.x * dims[0], p.y * dims[1], p.z * dims[2])
        }
        _ => {
            let a = rng.random_range(0.0..TAU);
            Vector3::new(dims[0] * a.cos(), dims[0] * a.sin(), dims[2] * rng.random_range(-1.0..1.0))
        }
    }
}

/// One cloud of the given shape class with random proportions, orientation and color.
pub fn generate_shape(class: usize, points: usize, seed: u64) -> PointCloud {
    let mut rng = seeded(seed);
    let dims = [rng.random_range(0.5..1.5), rng.random_range(0.5..1.5), rng.random_range(0.5..1.5)];
    let rot = Rotation3::from_euler_angles(
        rng.random_range(-0.4..0.4),
        rng.random_range(-0.4..0.4),
        rng.random_range(0.0..TAU),
    );
    let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.1..0.9));
    PointCloud::new(
        (0..points)
            .map(|_| {
                let p = rot * surface_point(&mut rng, class, dims);
                let c = color.map(|v: f64| (v + rng.random_range(-0.03..0.03)).clamp(0.0, 1.0));
                Point3C { position: p, color: c }
            })
            .collect(),
    )
}

/// `per_class` shapes of every class, sampled to `n_points` each.
pub fn shape_dataset(per_class: usize, n_points: usize, seed: u64) -> Result<Vec<LabeledSet>> {
    let mut out = Vec::with_capacity(per_class * SHAPE_CLASSES.len());
    for i in 0..per_class {
        for class in 0..SHAPE_CLASSES.len() {
            let s = derive_seed(seed, &format!("shape-{class}-{i}"));
            let cloud = generate_shape(class, n_points * 2, s);
            out.push(LabeledSet { set: sample_pointset(&cloud, n_points, derive_seed(s, "sample"))?, label: class });
        }
    }
    Ok(out)
}
