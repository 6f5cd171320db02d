//! Keypoints and the FPFH, SHOT and RoPS local descriptors.

mod fpfh;
mod keypoints;
mod lrf;
mod rops;
mod shot;

pub use fpfh::{compute_fpfh, pair_features, FPFH_BINS, FPFH_DIM};
pub use keypoints::{detect_keypoints, IssParams, KeypointMethod};
pub use lrf::{local_frame, LocalFrame};
pub use rops::{compute_rops, rops_from_local, RopsParams, ROPS_DIM};
pub use shot::{compute_shot, SHOT_DIM};

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::Vector3;

use crate::cloud::{atomic_write, NeighborIndex, PointCloud};
use crate::{Error, Result};

/// Minimum support size for FPFH and SHOT.
pub const MIN_SUPPORT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub index: usize,
    pub position: Vector3<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DescriptorKind {
    Fpfh,
    Shot,
    Rops,
    NetGlobal,
    NetAgg,
}

impl DescriptorKind {
    pub const LOCAL: [DescriptorKind; 3] = [Self::Shot, Self::Rops, Self::Fpfh];

    pub fn name(self) -> &'static str {
        match self {
            Self::Fpfh => "fpfh",
            Self::Shot => "shot",
            Self::Rops => "rops",
            Self::NetGlobal => "net-global",
            Self::NetAgg => "net-agg",
        }
    }

    /// Fixed row dimension for the hand-crafted descriptors.
    pub fn fixed_dim(self) -> Option<usize> {
        match self {
            Self::Fpfh => Some(FPFH_DIM),
            Self::Shot => Some(SHOT_DIM),
            Self::Rops => Some(ROPS_DIM),
            Self::NetGlobal | Self::NetAgg => None,
        }
    }

    pub fn is_local(self) -> bool {
        self.fixed_dim().is_some()
    }
}

impl fmt::Display for DescriptorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DescriptorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fpfh" => Ok(Self::Fpfh),
            "shot" => Ok(Self::Shot),
            "rops" => Ok(Self::Rops),
            "net-global" => Ok(Self::NetGlobal),
            "net-agg" => Ok(Self::NetAgg),
            other => Err(Error::InvalidArgument(format!("unknown descriptor '{other}'"))),
        }
    }
}

/// Descriptor rows aligned with the keypoints they describe.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub kind: DescriptorKind,
    pub dim: usize,
    pub keypoints: Vec<Keypoint>,
    pub data: Vec<f64>,
}

impl DescriptorSet {
    pub fn new(kind: DescriptorKind, dim: usize) -> Self {
        Self {
            kind,
            dim,
            keypoints: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn push(&mut self, keypoint: Keypoint, row: &[f64]) {
        assert_eq!(row.len(), self.dim, "descriptor row has wrong dimension");
        self.keypoints.push(keypoint);
        self.data.extend_from_slice(row);
    }

    /// Collects per-keypoint results in keypoint order, dropping skipped ones.
    pub(crate) fn from_results(
        kind: DescriptorKind,
        dim: usize,
        keypoints: &[Keypoint],
        rows: Vec<Result<Vec<f64>>>,
    ) -> Self {
        let mut set = Self::new(kind, dim);
        let mut skipped = 0usize;
        for (kp, row) in keypoints.iter().zip(rows) {
            match row {
                Ok(row) => set.push(*kp, &row),
                Err(_) => skipped += 1,
            }
        }
        if skipped > 0 {
            log::debug!("{kind}: skipped {skipped} of {} keypoints", keypoints.len());
        }
        set
    }

    /// Writes the `KIND/DIM/COUNT` descriptor file and the parallel `.kp` file.
    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, |w| {
            writeln!(w, "KIND {}", self.kind)?;
            writeln!(w, "DIM {}", self.dim)?;
            writeln!(w, "COUNT {}", self.len())?;
            for row in self.rows().take(self.len()) {
                write_row(w, row)?;
            }
            Ok(())
        })?;
        atomic_write(&keypoint_path(path), |w| {
            for kp in &self.keypoints {
                writeln!(w, "{} {} {}", kp.position.x, kp.position.y, kp.position.z)?;
            }
            Ok(())
        })
    }

    /// Reads a descriptor file and its `.kp` sidecar. Keypoint indices and radii are not
    /// stored on disk and come back as the row number and zero.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut header = |key: &str| -> Result<String> {
            let (n, line) = lines
                .next()
                .ok_or_else(|| Error::parse(path, 0, format!("missing {key} header")))?;
            line.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(' '))
                .map(|v| v.trim().to_string())
                .ok_or_else(|| Error::parse(path, n, format!("expected '{key} <value>'")))
        };
        let kind: DescriptorKind = header("KIND")?.parse()?;
        let dim: usize = header("DIM")?
            .parse()
            .map_err(|_| Error::parse(path, 2, "invalid DIM"))?;
        let count: usize = header("COUNT")?
            .parse()
            .map_err(|_| Error::parse(path, 3, "invalid COUNT"))?;
        let mut data = Vec::with_capacity(dim * count);
        let mut rows = 0;
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let row = parse_row(path, n, line)?;
            if row.len() != dim {
                return Err(Error::parse(path, n, format!("expected {dim} values, found {}", row.len())));
            }
            data.extend(row);
            rows += 1;
        }
        if rows != count {
            return Err(Error::parse(path, 3, format!("COUNT {count} but {rows} rows")));
        }
        let kp_path = keypoint_path(path);
        let kp_text = fs::read_to_string(&kp_path).map_err(|e| Error::io(&kp_path, e))?;
        let mut keypoints = Vec::with_capacity(count);
        for (i, line) in kp_text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            let v = parse_row(&kp_path, i + 1, line)?;
            if v.len() != 3 {
                return Err(Error::parse(&kp_path, i + 1, "expected x y z"));
            }
            keypoints.push(Keypoint {
                index: i,
                position: Vector3::new(v[0], v[1], v[2]),
                radius: 0.0,
            });
        }
        if keypoints.len() != count {
            return Err(Error::parse(&kp_path, keypoints.len(), "keypoint count differs from COUNT"));
        }
        Ok(Self { kind, dim, keypoints, data })
    }
}

pub fn keypoint_path(path: &Path) -> PathBuf {
    path.with_extension("kp")
}

pub(crate) fn write_row(w: &mut dyn Write, row: &[f64]) -> std::io::Result<()> {
    let mut first = true;
    for v in row {
        if !first {
            w.write_all(b" ")?;
        }
        write!(w, "{v}")?;
        first = false;
    }
    writeln!(w)
}

pub(crate) fn parse_row(path: &Path, line_no: usize, line: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::parse(path, line_no, format!("non-numeric value '{t}'")))
        })
        .collect()
}

/// Neighbors of `center` within `radius` that carry a valid normal, excluding `skip`.
pub(crate) fn support(
    cloud: &PointCloud,
    index: &NeighborIndex,
    center: &Vector3<f64>,
    radius: f64,
    skip: usize,
) -> Vec<crate::cloud::Neighbor> {
    index
        .radius(center, radius)
        .into_iter()
        .filter(|n| n.index != skip && cloud.normal(n.index).is_some())
        .collect()
}

pub(crate) fn require_normals(cloud: &PointCloud) -> Result<()> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !cloud.has_normals() {
        return Err(Error::InvalidArgument("cloud has no normals".into()));
    }
    Ok(())
}
