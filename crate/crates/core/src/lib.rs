//! Point-cloud phenotyping toolkit for drought-stress classification of plants.
//!
//! The crate is organised as a pipeline:
//!
//! * [`cloud`]: point-cloud model, PLY/CSV I/O, exact neighbor search, normals, voxel filtering.
//! * [`segmentation`]: voxel-cloud connectivity supervoxels and canopy extraction.
//! * [`local`]: keypoints and the FPFH, SHOT and RoPS local descriptors.
//! * [`deep`]: a small PointNet-style network with global and aggregated descriptors.
//! * [`encoding`]: k-means/BoVW and GMM/Fisher Vector quantization.
//! * [`classify`]: linear SVM and the method-comparison evaluation harness.
//! * [`synth`]: procedural wheat-like plants with controllable drought phenotypes.
//!
//! Per-item work (keypoints, clouds, batch samples) runs through [`par`], which uses
//! rayon when the `parallel` feature is enabled and plain iterators otherwise. Results
//! never depend on the execution order.

pub mod classify;
pub mod cloud;
pub mod deep;
pub mod encoding;
pub mod error;
pub mod local;
pub mod par;
pub mod rng;
pub mod segmentation;
pub mod synth;

pub use error::{Error, Result};
