//! Procedural wheat-like plants with controllable drought phenotypes.
//!
//! Leaves are ribbons swept along a quadratic Bézier spine. Drought severity bends the
//! spine further down (wilting), curls the cross-section toward a half cylinder (leaf
//! rolling) and shifts the leaf color from green toward yellow (chlorosis). Each plant
//! stands in a pot on a brown ground plane; every point carries a ground-truth label.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::cloud::{atomic_write, save_cloud, CloudFormat, Point3C, PointCloud};
use crate::rng::{derive_seed, seeded};
use crate::{Error, Result};

const YELLOW: [f64; 3] = [0.78, 0.74, 0.20];
const GROUND_BROWN: [f64; 3] = [0.45, 0.33, 0.22];
const SOIL_BROWN: [f64; 3] = [0.35, 0.25, 0.17];
const POT_GREY: [f64; 3] = [0.20, 0.20, 0.22];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorProfile {
    pub base: [f64; 3],
    /// Standard deviation of the per-point, per-channel color jitter.
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantParams {
    pub leaf_count: usize,
    pub leaf_length: f64,
    pub leaf_width: f64,
    /// Spine bend of a healthy leaf, radians per meter of leaf length.
    pub curvature: f64,
    /// Mean angle between a leaf's initial direction and the vertical.
    pub tiller_spread: f64,
    pub points_per_leaf: usize,
    /// Half side of the square ground plane.
    pub ground_extent: f64,
    pub ground_points: usize,
    pub pot_radius: f64,
    pub pot_height: f64,
    pub pot_points: usize,
    pub color: ColorProfile,
    /// Standard deviation of the positional noise added to leaf points.
    pub position_noise: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            leaf_count: 8,
            leaf_length: 0.28,
            leaf_width: 0.014,
            curvature: 2.5,
            tiller_spread: 0.35,
            points_per_leaf: 700,
            ground_extent: 0.3,
            ground_points: 1500,
            pot_radius: 0.07,
            pot_height: 0.12,
            pot_points: 900,
            color: ColorProfile { base: [0.20, 0.55, 0.16], noise: 0.03 },
            position_noise: 0.0004,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.leaf_length,
            self.leaf_width,
            self.ground_extent,
            self.pot_radius,
            self.pot_height,
        ];
        if self.leaf_count < 1 || self.points_per_leaf < 1 {
            return Err(Error::InvalidArgument("leaf and point counts must be >= 1".into()));
        }
        if positive.iter().any(|v| !(*v > 0.0)) || self.curvature < 0.0 || self.position_noise < 0.0 {
            return Err(Error::InvalidArgument("plant dimensions must be > 0".into()));
        }
        Ok(())
    }
}

/// Drought severity in `[0, 1]` and the phenotypes it drives.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct DroughtSeverity(f64);

impl DroughtSeverity {
    pub fn new(s: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&s) {
            Ok(Self(s))
        } else {
            Err(Error::InvalidArgument(format!("severity {s} outside [0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Extra downward bend of the leaf spine: 0 to 60 degrees.
    pub fn droop(self) -> f64 {
        self.0 * 60f64.to_radians()
    }

    /// Cross-section curl: 0 is flat, 1 is a half cylinder.
    pub fn roll(self) -> f64 {
        self.0
    }

    /// Interpolation weight from green toward yellow: 0 to 0.6.
    pub fn chlorosis(self) -> f64 {
        0.6 * self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PlantClass {
    Control,
    Drought,
}

impl PlantClass {
    /// `Control` below 0.2, `Drought` from 0.5; the gap in between has no class.
    pub fn from_severity(s: f64) -> Option<Self> {
        if s < 0.2 {
            Some(Self::Control)
        } else if s >= 0.5 {
            Some(Self::Drought)
        } else {
            None
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Control => "control",
            Self::Drought => "drought",
        }
    }
}

impl fmt::Display for PlantClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlantClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "control" => Ok(Self::Control),
            "drought" => Ok(Self::Drought),
            other => Err(Error::InvalidArgument(format!("unknown class '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointLabel {
    Leaf(u32),
    Background,
}

impl PointLabel {
    pub fn is_leaf(self) -> bool {
        matches!(self, Self::Leaf(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCloud {
    pub cloud: PointCloud,
    pub labels: Vec<PointLabel>,
    pub class: Option<PlantClass>,
    pub severity: f64,
    /// Spine end point of every leaf.
    pub leaf_tips: Vec<Vector3<f64>>,
}

impl LabeledCloud {
    pub fn leaf_point_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_leaf()).count()
    }

    pub fn mean_tip_height(&self) -> f64 {
        self.leaf_tips.iter().map(|t| t.z).sum::<f64>() / self.leaf_tips.len().max(1) as f64
    }
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|k| a[k] + (b[k] - a[k]) * t)
}

fn jitter_color<R: Rng>(rng: &mut R, base: [f64; 3], sigma: f64) -> [f64; 3] {
    if sigma == 0.0 {
        return base;
    }
    let n = Normal::new(0.0, sigma).expect("sigma is finite");
    base.map(|c| (c + n.sample(rng)).clamp(0.0, 1.0))
}

fn direction(azimuth: f64, from_vertical: f64) -> Vector3<f64> {
    Vector3::new(
        from_vertical.sin() * azimuth.cos(),
        from_vertical.sin() * azimuth.sin(),
        from_vertical.cos(),
    )
}

/// Generates one labeled plant scene. The output is a pure function of the inputs.
pub fn generate_plant(params: &PlantParams, severity: DroughtSeverity, seed: u64) -> Result<LabeledCloud> {
    params.validate()?;
    let mut rng = seeded(seed);
    let pos_noise = Normal::new(0.0, params.position_noise.max(f64::MIN_POSITIVE)).expect("finite");
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut leaf_tips = Vec::with_capacity(params.leaf_count);

    let base_z = params.pot_height + 0.02;
    let bend = params.curvature * params.leaf_length + severity.droop();
    let roll = severity.roll();
    for leaf in 0..params.leaf_count {
        let azimuth = std::f64::consts::TAU * leaf as f64 / params.leaf_count as f64 + rng.random_range(-0.3..0.3);
        let spread = params.tiller_spread * rng.random_range(0.6..1.4);
        let length = params.leaf_length * rng.random_range(0.85..1.15);
        let half = length / 2.0;
        let p0 = Vector3::new(0.004 * azimuth.cos(), 0.004 * azimuth.sin(), base_z);
        let p1 = p0 + half * direction(azimuth, spread);
        let p2 = p1 + half * direction(azimuth, spread + bend);
        leaf_tips.push(p2);
        let side = Vector3::new(-azimuth.sin(), azimuth.cos(), 0.0);

        let mut emitted = 0;
        while emitted < params.points_per_leaf {
            let u: f64 = rng.random();
            let taper = 1.0 - 0.8 * u * u;
            // area-proportional sampling along the tapering ribbon
            if rng.random::<f64>() > taper {
                continue;
            }
            let v: f64 = rng.random_range(-1.0..1.0);
            let spine = (1.0 - u) * (1.0 - u) * p0 + 2.0 * u * (1.0 - u) * p1 + u * u * p2;
            let tangent = (2.0 * (1.0 - u) * (p1 - p0) + 2.0 * u * (p2 - p1)).normalize();
            let up = side.cross(&tangent);
            let half_width = 0.5 * params.leaf_width * taper;
            let offset = if roll > 1e-9 {
                let span = roll * std::f64::consts::FRAC_PI_2;
                let radius = half_width / span;
                let a = v * span;
                radius * a.sin() * side + radius * (1.0 - a.cos()) * up
            } else {
                v * half_width * side
            };
            let noise = Vector3::new(pos_noise.sample(&mut rng), pos_noise.sample(&mut rng), pos_noise.sample(&mut rng));
            let weight = (severity.chlorosis() * (0.5 + u)).min(1.0);
            let color = jitter_color(&mut rng, lerp3(params.color.base, YELLOW, weight), params.color.noise);
            points.push(Point3C { position: spine + offset + noise, color });
            labels.push(PointLabel::Leaf(leaf as u32));
            emitted += 1;
        }
    }

    let e = params.ground_extent;
    let mut ground = 0;
    while ground < params.ground_points {
        let (x, y) = (rng.random_range(-e..e), rng.random_range(-e..e));
        if x.hypot(y) < params.pot_radius {
            continue;
        }
        let color = jitter_color(&mut rng, GROUND_BROWN, params.color.noise);
        points.push(Point3C { position: Vector3::new(x, y, 0.0), color });
        labels.push(PointLabel::Background);
        ground += 1;
    }

    // two thirds on the pot wall, the rest on the soil surface
    let wall = params.pot_points * 2 / 3;
    for k in 0..params.pot_points {
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let (position, base) = if k < wall {
            let z = rng.random_range(0.0..params.pot_height);
            (
                Vector3::new(params.pot_radius * theta.cos(), params.pot_radius * theta.sin(), z),
                POT_GREY,
            )
        } else {
            let r = params.pot_radius * rng.random::<f64>().sqrt();
            (Vector3::new(r * theta.cos(), r * theta.sin(), params.pot_height - 0.01), SOIL_BROWN)
        };
        points.push(Point3C { position, color: jitter_color(&mut rng, base, params.color.noise) });
        labels.push(PointLabel::Background);
    }

    Ok(LabeledCloud {
        cloud: PointCloud::new(points),
        labels,
        class: PlantClass::from_severity(severity.value()),
        severity: severity.value(),
        leaf_tips,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub n_control: usize,
    pub n_drought: usize,
    pub control_range: (f64, f64),
    pub drought_range: (f64, f64),
    pub base_seed: u64,
    pub params: PlantParams,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_control: 17,
            n_drought: 17,
            control_range: (0.0, 0.15),
            drought_range: (0.5, 1.0),
            base_seed: 7,
            params: PlantParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantRecord {
    pub id: usize,
    pub class: PlantClass,
    pub seed: u64,
    pub plant: LabeledCloud,
}

fn sample_in<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Control plants first, then drought plants; each with jittered shape and color.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<PlantRecord>> {
    if spec.n_control < 1 || spec.n_drought < 1 {
        return Err(Error::InvalidArgument("each class needs at least one plant".into()));
    }
    for (lo, hi) in [spec.control_range, spec.drought_range] {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::InvalidArgument(format!("invalid severity range [{lo}, {hi}]")));
        }
    }
    let jobs: Vec<(usize, PlantClass)> = (0..spec.n_control)
        .map(|_| PlantClass::Control)
        .chain((0..spec.n_drought).map(|_| PlantClass::Drought))
        .enumerate()
        .collect();
    crate::par::map(&jobs, |&(id, class)| {
        let seed = derive_seed(spec.base_seed, &format!("plant-{id}"));
        let mut rng = seeded(derive_seed(seed, "jitter"));
        let range = match class {
            PlantClass::Control => spec.control_range,
            PlantClass::Drought => spec.drought_range,
        };
        let severity = DroughtSeverity::new(sample_in(&mut rng, range))?;
        let base = &spec.params;
        let mut params = base.clone();
        params.leaf_count = (base.leaf_count as i64 + rng.random_range(-2i64..=1)).max(1) as usize;
        params.leaf_length = base.leaf_length * rng.random_range(0.85..1.15);
        params.leaf_width = base.leaf_width * rng.random_range(0.85..1.15);
        params.tiller_spread = base.tiller_spread * rng.random_range(0.8..1.2);
        params.color.base = base.color.base.map(|c| (c + rng.random_range(-0.04..0.04)).clamp(0.0, 1.0));
        let mut plant = generate_plant(&params, severity, seed)?;
        plant.class = Some(class);
        Ok(PlantRecord { id, class, seed, plant })
    })
    .into_iter()
    .collect()
}

pub fn plant_file_name(id: usize) -> String {
    format!("plant_{id:03}.ply")
}

pub fn label_path(cloud_path: &Path) -> PathBuf {
    cloud_path.with_extension("labels")
}

/// Writes each cloud as PLY with a `.labels` sidecar (leaf id or -1 per point) and a
/// `manifest.csv` with `plant_id,class,severity,seed,path`.
pub fn write_dataset(records: &[PlantRecord], dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for r in records {
        let path = dir.join(plant_file_name(r.id));
        save_cloud(&r.plant.cloud, &path, CloudFormat::PlyAscii)?;
        write_labels(&r.plant.labels, &label_path(&path))?;
    }
    let manifest = dir.join("manifest.csv");
    atomic_write(&manifest, |w| {
        writeln!(w, "plant_id,class,severity,seed,path")?;
        for r in records {
            writeln!(w, "{},{},{},{},{}", r.id, r.class, r.plant.severity, r.seed, plant_file_name(r.id))?;
        }
        Ok(())
    })?;
    Ok(manifest)
}

pub fn write_labels(labels: &[PointLabel], path: &Path) -> Result<()> {
    atomic_write(path, |w| {
        for l in labels {
            match l {
                PointLabel::Leaf(id) => writeln!(w, "{id}")?,
                PointLabel::Background => writeln!(w, "-1")?,
            }
        }
        Ok(())
    })
}

pub fn read_labels(path: &Path) -> Result<Vec<PointLabel>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| match l.trim().parse::<i64>() {
            Ok(-1) => Ok(PointLabel::Background),
            Ok(id) if id >= 0 => Ok(PointLabel::Leaf(id as u32)),
            _ => Err(Error::parse(path, i + 1, format!("invalid label '{l}'"))),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub plant_id: usize,
    pub class: PlantClass,
    pub severity: f64,
    pub seed: u64,
    pub path: PathBuf,
}

/// Reads a manifest; relative paths are resolved against the manifest directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let err = |m: &str| Error::parse(path, i + 1, m.to_string());
        if f.len() != 5 {
            return Err(err("expected 5 columns"));
        }
        rows.push(ManifestRow {
            plant_id: f[0].parse().map_err(|_| err("invalid plant_id"))?,
            class: f[1].parse()?,
            severity: f[2].parse().map_err(|_| err("invalid severity"))?,
            seed: f[3].parse().map_err(|_| err("invalid seed"))?,
            path: dir.join(f[4]),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plant(s: f64, seed: u64) -> LabeledCloud {
        generate_plant(&PlantParams::default(), DroughtSeverity::new(s).unwrap(), seed).unwrap()
    }

    fn mean_g_minus_r(p: &LabeledCloud) -> f64 {
        let leaf: Vec<_> = p.cloud.points.iter().zip(&p.labels).filter(|(_, l)| l.is_leaf()).collect();
        leaf.iter().map(|(pt, _)| pt.color[1] - pt.color[0]).sum::<f64>() / leaf.len() as f64
    }

    #[test]
    fn droop_lowers_leaf_tips() {
        assert!(plant(1.0, 3).mean_tip_height() < plant(0.0, 3).mean_tip_height());
    }

    #[test]
    fn chlorosis_reduces_green_over_red() {
        assert!(mean_g_minus_r(&plant(1.0, 3)) < mean_g_minus_r(&plant(0.0, 3)));
    }

    #[test]
    fn same_seed_same_cloud() {
        assert_eq!(plant(0.7, 11), plant(0.7, 11));
        assert_ne!(plant(0.7, 11).cloud, plant(0.7, 12).cloud);
    }

    #[test]
    fn labels_cover_every_point() {
        let p = plant(0.5, 1);
        assert_eq!(p.labels.len(), p.cloud.len());
        p.cloud.validate().unwrap();
        assert_eq!(p.leaf_point_count(), 8 * 700);
    }

    #[test]
    fn class_thresholds() {
        assert_eq!(PlantClass::from_severity(0.1), Some(PlantClass::Control));
        assert_eq!(PlantClass::from_severity(0.3), None);
        assert_eq!(PlantClass::from_severity(0.5), Some(PlantClass::Drought));
        assert!(DroughtSeverity::new(1.2).is_err());
    }

    #[test]
    fn dataset_counts_and_fixed_severity() {
        let spec = DatasetSpec {
            n_control: 3,
            n_drought: 4,
            drought_range: (0.5, 0.5),
            params: PlantParams { points_per_leaf: 50, ground_points: 50, pot_points: 30, ..Default::default() },
            ..Default::default()
        };
        let data = generate_dataset(&spec).unwrap();
        assert_eq!(data.len(), 7);
        for r in &data {
            match r.class {
                PlantClass::Drought => assert_eq!(r.plant.severity, 0.5),
                PlantClass::Control => assert!(r.plant.severity <= 0.15),
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(&data, dir.path()).unwrap();
        let rows = read_manifest(&manifest).unwrap();
        assert_eq!(rows.len(), data.len());
        assert!(rows.iter().all(|r| r.path.exists()));
        let labels = read_labels(&label_path(&rows[0].path)).unwrap();
        assert_eq!(labels, data[0].plant.labels);
    }

    #[test]
    fn generation_is_fast() {
        let params = PlantParams { points_per_leaf: 2200, ..Default::default() };
        let t = std::time::Instant::now();
        let p = generate_plant(&params, DroughtSeverity::new(0.6).unwrap(), 5).unwrap();
        assert!(p.cloud.len() >= 20_000);
        assert!(t.elapsed().as_secs_f64() < 1.0);
    }
}
