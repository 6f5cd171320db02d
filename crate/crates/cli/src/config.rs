use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Deserialize;

use canopy3d::classify::SvmConfig;
use canopy3d::deep::{NetConfig, TrainConfig};
use canopy3d::encoding::GmmParams;
use canopy3d::local::RopsParams;
use canopy3d::synth::DatasetSpec;

/// Every tunable of a run. Unknown keys are rejected; omitted keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Global seed; every stage derives its own stream from it.
    pub seed: u64,
    pub out: PathBuf,
    pub synth: SynthConfig,
    pub segment: SegmentConfig,
    pub describe: DescribeConfig,
    pub network: NetworkConfig,
    pub encode: EncodeConfig,
    pub svm: SvmSection,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            out: PathBuf::from("out"),
            synth: SynthConfig::default(),
            segment: SegmentConfig::default(),
            describe: DescribeConfig::default(),
            network: NetworkConfig::default(),
            encode: EncodeConfig::default(),
            svm: SvmSection::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub control: usize,
    pub drought: usize,
    pub control_range: [f64; 2],
    pub drought_range: [f64; 2],
    pub points_per_leaf: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let d = DatasetSpec::default();
        Self {
            control: d.n_control,
            drought: d.n_drought,
            control_range: [d.control_range.0, d.control_range.1],
            drought_range: [d.drought_range.0, d.drought_range.1],
            points_per_leaf: d.params.points_per_leaf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentConfig {
    /// Voxel size in meters; 0 picks twice the cloud resolution.
    pub voxel_resolution: f64,
    /// Seed spacing in voxels.
    pub seed_voxels: f64,
    pub exg_threshold: f64,
    pub min_occupied: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self { voxel_resolution: 0.0, seed_voxels: 10.0, exg_threshold: 0.1, min_occupied: 3 }
    }
}

/// Radii are multiples of the canopy cloud resolution.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DescribeConfig {
    pub normal_radius: f64,
    pub support_radius: f64,
    pub keypoint_spacing: f64,
    pub rops_rotations: usize,
    pub rops_bins: usize,
}

impl Default for DescribeConfig {
    fn default() -> Self {
        let rops = RopsParams::default();
        Self {
            normal_radius: 5.0,
            support_radius: 15.0,
            keypoint_spacing: 8.0,
            rops_rotations: rops.rotations,
            rops_bins: rops.bins,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub n_points: usize,
    pub pretrain_per_class: usize,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    /// Differently sampled point sets per training plant during fine-tuning.
    pub finetune_samples: usize,
    pub lr: f64,
    pub batch: usize,
    pub lambda: f64,
    pub momentum: f64,
    /// Components of the GMM over per-point descriptors.
    pub agg_k: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            n_points: NetConfig::default().n_points,
            pretrain_per_class: 20,
            pretrain_epochs: 40,
            finetune_epochs: 20,
            finetune_samples: 4,
            // 0.01 with momentum 0.9 does not converge on the shape set
            lr: 0.003,
            batch: t.batch,
            lambda: t.lambda,
            momentum: t.momentum,
            agg_k: 16,
        }
    }
}

impl NetworkConfig {
    pub fn net(&self) -> NetConfig {
        NetConfig { n_points: self.n_points, classes: 3, ..NetConfig::default() }
    }

    pub fn train(&self, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            lr: self.lr,
            batch: self.batch,
            lambda: self.lambda,
            momentum: self.momentum,
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncodeConfig {
    pub gmm_k: usize,
    pub bovw_k: usize,
    pub max_iter: usize,
    pub var_floor: f64,
    /// Cap on pooled training descriptors used to fit each model.
    pub max_fit_rows: usize,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        let g = GmmParams::default();
        Self { gmm_k: g.k, bovw_k: 64, max_iter: g.max_iter, var_floor: g.var_floor, max_fit_rows: 20_000 }
    }
}

impl EncodeConfig {
    pub fn gmm(&self, k: usize) -> GmmParams {
        GmmParams { k, max_iter: self.max_iter, var_floor: self.var_floor, ..GmmParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvmSection {
    pub c: f64,
    pub epochs: usize,
    pub standardize: bool,
}

impl Default for SvmSection {
    fn default() -> Self {
        let s = SvmConfig::default();
        Self { c: s.c, epochs: s.epochs, standardize: s.standardize }
    }
}

impl SvmSection {
    pub fn svm(&self) -> SvmConfig {
        SvmConfig { c: self.c, epochs: self.epochs, standardize: self.standardize, lead_block: None }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Training plants; the rest are test plants.
    pub n_train: usize,
    /// Write measured seconds into the CSV. Off by default so reruns compare byte for byte;
    /// the text report always shows them.
    pub csv_timing: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_train: 24, csv_timing: false }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn dataset(&self) -> DatasetSpec {
        let mut spec = DatasetSpec {
            n_control: self.synth.control,
            n_drought: self.synth.drought,
            control_range: (self.synth.control_range[0], self.synth.control_range[1]),
            drought_range: (self.synth.drought_range[0], self.synth.drought_range[1]),
            base_seed: canopy3d::rng::derive_seed(self.seed, "synth"),
            ..DatasetSpec::default()
        };
        spec.params.points_per_leaf = self.synth.points_per_leaf;
        spec
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let positive = [
            ("describe.normal_radius", self.describe.normal_radius),
            ("describe.support_radius", self.describe.support_radius),
            ("describe.keypoint_spacing", self.describe.keypoint_spacing),
            ("segment.seed_voxels", self.segment.seed_voxels),
            ("network.lr", self.network.lr),
            ("svm.c", self.svm.c),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                bail!("{name} must be a positive number, got {v}");
            }
        }
        if !(self.segment.voxel_resolution >= 0.0) {
            bail!("segment.voxel_resolution must be >= 0");
        }
        if self.synth.control == 0 || self.synth.drought == 0 {
            bail!("synth.control and synth.drought must be >= 1");
        }
        let total = self.synth.control + self.synth.drought;
        if self.eval.n_train == 0 || self.eval.n_train >= total {
            bail!("eval.n_train must be in 1..{total}");
        }
        if self.encode.gmm_k == 0 || self.encode.bovw_k == 0 || self.network.agg_k == 0 {
            bail!("encoder sizes must be >= 1");
        }
        if self.network.batch == 0 || self.network.finetune_samples == 0 || self.network.pretrain_per_class == 0 {
            bail!("network.batch, finetune_samples and pretrain_per_class must be >= 1");
        }
        self.network.net().validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg = PipelineConfig::from_toml("seed = 3\n[encode]\ngmm_k = 4\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.encode.gmm_k, 4);
        assert_eq!(cfg.encode.bovw_k, 64);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml("sed = 3\n").is_err());
        assert!(PipelineConfig::from_toml("[svm]\ngamma = 1.0\n").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(PipelineConfig::from_toml("[svm]\nc = -1.0\n").is_err());
        assert!(PipelineConfig::from_toml("[eval]\nn_train = 34\n").is_err());
    }
}
