use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use nalgebra::Vector3;
use rand::seq::index;

use canopy3d::classify::{
    score_row, stratified_split, train_svm, EvalReport, EvalRow, Split, SvmModel, TaggedFeature, TABLE_ROWS,
};
use canopy3d::cloud::{atomic_write, compute_resolution, estimate_normals, load_cloud, save_cloud, CloudFormat, PointCloud};
use canopy3d::deep::{
    fine_tune, load_network, sample_pointset, save_network, shape_dataset, train, LabeledSet, NetworkParams, PointSet,
};
use canopy3d::encoding::{encode_bovw, encode_fv, fit_gmm, fit_kmeans, save_codebook, save_gmm};
use canopy3d::local::{
    compute_fpfh, compute_rops, compute_shot, detect_keypoints, DescriptorKind, DescriptorSet, Keypoint, KeypointMethod,
    RopsParams,
};
use canopy3d::rng::{derive_seed, seeded};
use canopy3d::segmentation::{segment as vccs, write_labels, VccsParams};
use canopy3d::synth::{generate_dataset, read_labels, read_manifest, write_dataset, ManifestRow, PlantClass};
use canopy3d::{par, Error};

use crate::config::PipelineConfig;
use crate::layout::{plant_stem, read_features, read_times, row_slug, write_features, write_times, Layout, StageDir, NET_VARIANTS};

pub const ALL_METHODS: [DescriptorKind; 5] =
    [DescriptorKind::Shot, DescriptorKind::Rops, DescriptorKind::Fpfh, DescriptorKind::NetGlobal, DescriptorKind::NetAgg];

/// Table name of a hand-crafted descriptor.
fn local_name(kind: DescriptorKind) -> &'static str {
    match kind {
        DescriptorKind::Shot => "SHOT",
        DescriptorKind::Rops => "RoPS",
        DescriptorKind::Fpfh => "FPFH",
        DescriptorKind::NetGlobal | DescriptorKind::NetAgg => "PointNet",
    }
}

fn variant_name(variant: &str) -> &'static str {
    if variant == "finetuned" {
        "Fine tuned PointNet"
    } else {
        "PointNet"
    }
}

fn class_index(class: PlantClass) -> usize {
    match class {
        PlantClass::Control => 0,
        PlantClass::Drought => 1,
    }
}

fn plants(layout: &Layout) -> anyhow::Result<Vec<ManifestRow>> {
    let path = layout.manifest();
    if !path.exists() {
        bail!("no dataset at {}; run synth first", path.display());
    }
    Ok(read_manifest(&path)?)
}

/// Train/test assignment per plant id, derived from the global seed.
pub fn splits(cfg: &PipelineConfig, rows: &[ManifestRow]) -> anyhow::Result<BTreeMap<usize, Split>> {
    let labels: Vec<PlantClass> = rows.iter().map(|r| r.class).collect();
    let split = stratified_split(&labels, cfg.eval.n_train, derive_seed(cfg.seed, "split"))?;
    Ok(rows.iter().map(|r| r.plant_id).zip(split).collect())
}

fn canopy_path(layout: &Layout, id: usize) -> std::path::PathBuf {
    layout.segment().join(format!("{}.ply", plant_stem(id)))
}

fn load_canopy(layout: &Layout, id: usize) -> anyhow::Result<PointCloud> {
    let path = canopy_path(layout, id);
    if !path.exists() {
        bail!("no canopy for plant {id} at {}; run segment first", path.display());
    }
    Ok(load_cloud(&path, CloudFormat::PlyAscii)?)
}

pub fn synth(cfg: &PipelineConfig) -> anyhow::Result<usize> {
    let layout = Layout::new(&cfg.out);
    let records = generate_dataset(&cfg.dataset())?;
    let stage = StageDir::new(&layout.synth())?;
    write_dataset(&records, stage.path())?;
    stage.commit()?;
    log::info!("synth: {} plants in {}", records.len(), layout.synth().display());
    Ok(records.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentStats {
    pub plant_id: usize,
    pub input_points: usize,
    pub canopy_points: usize,
    pub supervoxels: usize,
    pub connected: bool,
    /// Against the ground-truth sidecar when one exists.
    pub recall: Option<f64>,
    pub precision: Option<f64>,
}

fn vccs_params(cfg: &PipelineConfig, cloud: &PointCloud) -> canopy3d::Result<VccsParams> {
    let s = &cfg.segment;
    let mut p = if s.voxel_resolution > 0.0 {
        VccsParams::for_resolution(s.voxel_resolution / 2.0)
    } else {
        VccsParams::for_cloud(cloud)?
    };
    p.seed_resolution = s.seed_voxels * p.voxel_resolution;
    p.exg_threshold = s.exg_threshold;
    p.min_occupied = s.min_occupied;
    Ok(p)
}

pub fn segment(cfg: &PipelineConfig) -> anyhow::Result<Vec<SegmentStats>> {
    let layout = Layout::new(&cfg.out);
    let rows = plants(&layout)?;
    let stage = StageDir::new(&layout.segment())?;
    let results = par::map(&rows, |row| -> anyhow::Result<SegmentStats> {
        let cloud = load_cloud(&row.path, CloudFormat::from_path(&row.path).unwrap_or(CloudFormat::PlyAscii))?;
        let seg = vccs(&cloud, &vccs_params(cfg, &cloud)?)?;
        let stem = plant_stem(row.plant_id);
        save_cloud(&seg.canopy.cloud, stage.path().join(format!("{stem}.ply")), CloudFormat::PlyAscii)?;
        write_labels(&seg.canopy, &stage.path().join(format!("{stem}.seg")))?;
        let truth_path = canopy3d::synth::label_path(&row.path);
        let (recall, precision) = if truth_path.exists() {
            let truth = read_labels(&truth_path)?;
            if truth.len() != cloud.len() {
                bail!("{} has {} labels for {} points", truth_path.display(), truth.len(), cloud.len());
            }
            let leaf = truth.iter().filter(|l| l.is_leaf()).count();
            let hit = truth.iter().zip(&seg.canopy.point_is_plant).filter(|(l, p)| l.is_leaf() && **p).count();
            let pred = seg.canopy.plant_indices.len();
            (Some(hit as f64 / leaf.max(1) as f64), Some(hit as f64 / pred.max(1) as f64))
        } else {
            (None, None)
        };
        let connected = seg
            .segmentation
            .supervoxels
            .iter()
            .all(|sv| canopy3d::segmentation::is_connected(&seg.grid, &sv.voxels));
        Ok(SegmentStats {
            plant_id: row.plant_id,
            input_points: cloud.len(),
            canopy_points: seg.canopy.cloud.len(),
            supervoxels: seg.segmentation.supervoxels.len(),
            connected,
            recall,
            precision,
        })
    });
    let stats = rows
        .iter()
        .zip(results)
        .map(|(row, r)| r.with_context(|| format!("segmenting plant {}", row.plant_id)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"));
    atomic_write(&stage.path().join("summary.csv"), |w| {
        writeln!(w, "plant_id,input_points,canopy_points,supervoxels,connected,recall,precision")?;
        for s in &stats {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                s.plant_id,
                s.input_points,
                s.canopy_points,
                s.supervoxels,
                s.connected,
                opt(s.recall),
                opt(s.precision)
            )?;
        }
        Ok(())
    })?;
    stage.commit()?;
    log::info!("segment: {} canopies in {}", stats.len(), layout.segment().display());
    Ok(stats)
}

/// Normals, uniform keypoints and one hand-crafted descriptor for a canopy cloud.
pub fn describe_local(cfg: &PipelineConfig, cloud: &PointCloud, kind: DescriptorKind) -> canopy3d::Result<DescriptorSet> {
    let d = &cfg.describe;
    let res = compute_resolution(cloud)?;
    let with_normals = estimate_normals(cloud, d.normal_radius * res)?;
    let radius = d.support_radius * res;
    let keypoints = detect_keypoints(&with_normals, KeypointMethod::Uniform { spacing: d.keypoint_spacing * res }, radius)?;
    let set = match kind {
        DescriptorKind::Fpfh => compute_fpfh(&with_normals, &keypoints, radius)?,
        DescriptorKind::Shot => compute_shot(&with_normals, &keypoints, radius)?,
        DescriptorKind::Rops => {
            let params = RopsParams { rotations: d.rops_rotations, bins: d.rops_bins };
            compute_rops(&with_normals, &keypoints, radius, params)?
        }
        other => return Err(Error::InvalidArgument(format!("{other} is not a local descriptor"))),
    };
    if set.is_empty() {
        return Err(Error::NoKeypoints);
    }
    Ok(set)
}

fn pointset_seed(cfg: &PipelineConfig, id: usize, sample: usize) -> u64 {
    derive_seed(cfg.seed, &format!("pointset-{id}-{sample}"))
}

fn pretrain(cfg: &PipelineConfig) -> anyhow::Result<NetworkParams> {
    let n = &cfg.network;
    let data = shape_dataset(n.pretrain_per_class, n.n_points, derive_seed(cfg.seed, "shapes"))?;
    let out = train(&n.net(), &data, &n.train(n.pretrain_epochs, derive_seed(cfg.seed, "pretrain")))?;
    log::info!("pretraining: {} shapes, training accuracy {:.3}", data.len(), out.train_accuracy);
    Ok(out.params)
}

fn fine_tune_on_plants(cfg: &PipelineConfig, pretrained: &NetworkParams) -> anyhow::Result<NetworkParams> {
    let layout = Layout::new(&cfg.out);
    let rows = plants(&layout)?;
    let split = splits(cfg, &rows)?;
    let train_rows: Vec<&ManifestRow> = rows.iter().filter(|r| split[&r.plant_id] == Split::Train).collect();
    let n = &cfg.network;
    let sets = par::map(&train_rows, |row| -> anyhow::Result<Vec<LabeledSet>> {
        let cloud = load_canopy(&layout, row.plant_id)?;
        (0..n.finetune_samples)
            .map(|j| {
                // sample 0 is the one described later; the others only augment training
                let set = sample_pointset(&cloud, n.n_points, pointset_seed(cfg, row.plant_id, j))?;
                Ok(LabeledSet { set, label: class_index(row.class) })
            })
            .collect()
    });
    let data: Vec<LabeledSet> = sets.into_iter().collect::<anyhow::Result<Vec<_>>>()?.into_iter().flatten().collect();
    let init = pretrained.with_classes(2, derive_seed(cfg.seed, "plant-head"))?;
    let out = fine_tune(&init, &data, &[], &n.train(n.finetune_epochs, derive_seed(cfg.seed, "finetune")))?;
    log::info!(
        "fine-tuning: {} point sets, accuracy {:.3} -> {:.3}",
        data.len(),
        out.pre_accuracy,
        out.post_accuracy
    );
    Ok(out.params)
}

/// Loads both networks, training and saving them first when asked to or when missing.
pub fn networks(cfg: &PipelineConfig, retrain: bool) -> anyhow::Result<[NetworkParams; 2]> {
    let layout = Layout::new(&cfg.out);
    let dir = layout.networks();
    let paths = NET_VARIANTS.map(|v| dir.join(format!("{v}.net")));
    if !retrain && paths.iter().all(|p| p.exists()) {
        let pre = load_network(&paths[0])?;
        let fine = load_network(&paths[1])?;
        if pre.config.n_points == cfg.network.n_points {
            return Ok([pre, fine]);
        }
        log::info!("stored networks use a different point count; retraining");
    }
    let pre = pretrain(cfg)?;
    let fine = fine_tune_on_plants(cfg, &pre)?;
    let stage = StageDir::new(&dir)?;
    save_network(&pre, &stage.path().join("pretrained.net"))?;
    save_network(&fine, &stage.path().join("finetuned.net"))?;
    stage.commit()?;
    Ok([pre, fine])
}

fn pointset_keypoints(set: &PointSet) -> Vec<Keypoint> {
    (0..set.len())
        .map(|i| {
            let r = set.row(i);
            Keypoint { index: i, position: Vector3::new(r[0], r[1], r[2]), radius: 0.0 }
        })
        .collect()
}

fn global_set(global: &[f64]) -> DescriptorSet {
    let mut out = DescriptorSet::new(DescriptorKind::NetGlobal, global.len());
    out.push(Keypoint { index: 0, position: Vector3::zeros(), radius: 0.0 }, global);
    out
}

fn desc_path(dir: &Path, id: usize) -> std::path::PathBuf {
    dir.join(format!("{}.desc", plant_stem(id)))
}

fn global_path(dir: &Path, id: usize) -> std::path::PathBuf {
    dir.join(format!("{}.global.desc", plant_stem(id)))
}

/// Writes descriptor files for every segmented plant. Network methods write one
/// subdirectory per network variant; `retrain` forces both networks to be retrained.
pub fn describe(cfg: &PipelineConfig, kinds: &[DescriptorKind], retrain: bool) -> anyhow::Result<()> {
    let layout = Layout::new(&cfg.out);
    let rows = plants(&layout)?;
    let mut nets: Option<[NetworkParams; 2]> = None;
    for &kind in kinds {
        let stage = StageDir::new(&layout.describe(kind))?;
        if kind.is_local() {
            let results = par::map(&rows, |row| -> anyhow::Result<(usize, f64)> {
                let cloud = load_canopy(&layout, row.plant_id)?;
                let start = Instant::now();
                let set = describe_local(cfg, &cloud, kind)?;
                let seconds = start.elapsed().as_secs_f64();
                set.save(&desc_path(stage.path(), row.plant_id))?;
                Ok((row.plant_id, seconds))
            });
            let times = collect_plants(&rows, results, kind)?;
            write_times(&stage.path().join("times.csv"), &times)?;
        } else {
            if nets.is_none() {
                nets = Some(networks(cfg, retrain)?);
            }
            let nets = nets.as_ref().expect("networks loaded above");
            for (variant, net) in NET_VARIANTS.iter().zip(nets) {
                let dir = stage.path().join(variant);
                std::fs::create_dir_all(&dir)?;
                let results = par::map(&rows, |row| -> anyhow::Result<(usize, f64)> {
                    let cloud = load_canopy(&layout, row.plant_id)?;
                    let start = Instant::now();
                    let set = sample_pointset(&cloud, cfg.network.n_points, pointset_seed(cfg, row.plant_id, 0))?;
                    if kind == DescriptorKind::NetGlobal {
                        let g = net.forward_global(&set).global;
                        let seconds = start.elapsed().as_secs_f64();
                        global_set(&g).save(&desc_path(&dir, row.plant_id))?;
                        Ok((row.plant_id, seconds))
                    } else {
                        let (g, local) = net.local_descriptors(&set);
                        let seconds = start.elapsed().as_secs_f64();
                        let mut out = DescriptorSet::new(DescriptorKind::NetAgg, net.config.local_dim());
                        for (kp, r) in pointset_keypoints(&set).into_iter().zip(local.chunks_exact(net.config.local_dim())) {
                            out.push(kp, r);
                        }
                        out.save(&desc_path(&dir, row.plant_id))?;
                        global_set(&g).save(&global_path(&dir, row.plant_id))?;
                        Ok((row.plant_id, seconds))
                    }
                });
                let times = collect_plants(&rows, results, kind)?;
                write_times(&dir.join("times.csv"), &times)?;
            }
        }
        stage.commit()?;
        log::info!("describe: {kind} for {} plants", rows.len());
    }
    Ok(())
}

fn collect_plants<T>(rows: &[ManifestRow], results: Vec<anyhow::Result<T>>, kind: DescriptorKind) -> anyhow::Result<Vec<T>> {
    rows.iter()
        .zip(results)
        .map(|(row, r)| r.with_context(|| format!("{kind} on plant {}", row.plant_id)))
        .collect()
}

/// Training rows pooled across plants, subsampled to at most `cap` rows.
fn pooled_rows(sets: &[(&ManifestRow, DescriptorSet)], split: &BTreeMap<usize, Split>, dim: usize, cap: usize, seed: u64) -> Vec<f64> {
    let pool: Vec<&[f64]> = sets
        .iter()
        .filter(|(row, _)| split[&row.plant_id] == Split::Train)
        .flat_map(|(_, s)| s.rows())
        .collect();
    let picks: Vec<usize> = if pool.len() > cap {
        let mut p = index::sample(&mut seeded(seed), pool.len(), cap).into_vec();
        p.sort_unstable();
        p
    } else {
        (0..pool.len()).collect()
    };
    let mut out = Vec::with_capacity(picks.len() * dim);
    for i in picks {
        out.extend_from_slice(pool[i]);
    }
    out
}

struct Loaded<'a> {
    rows: Vec<(&'a ManifestRow, DescriptorSet)>,
    seconds: BTreeMap<usize, f64>,
}

fn load_descriptors<'a>(dir: &Path, rows: &'a [ManifestRow], global: bool) -> anyhow::Result<Loaded<'a>> {
    let seconds: BTreeMap<usize, f64> = read_times(&dir.join("times.csv"))?.into_iter().collect();
    let sets = rows
        .iter()
        .map(|r| {
            let p = if global { global_path(dir, r.plant_id) } else { desc_path(dir, r.plant_id) };
            let set = DescriptorSet::load(&p).with_context(|| format!("loading {}", p.display()))?;
            if !seconds.contains_key(&r.plant_id) {
                bail!("{} has no time for plant {}", dir.display(), r.plant_id);
            }
            Ok((r, set))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(Loaded { rows: sets, seconds })
}

fn tagged(row: &ManifestRow, split: &BTreeMap<usize, Split>, values: Vec<f64>, seconds: f64) -> TaggedFeature {
    TaggedFeature { plant_id: row.plant_id, split: split[&row.plant_id], label: row.class, values, seconds }
}

/// Fits the quantizers on training plants and writes one feature file per table row.
pub fn encode(cfg: &PipelineConfig, kinds: &[DescriptorKind]) -> anyhow::Result<usize> {
    let layout = Layout::new(&cfg.out);
    let rows = plants(&layout)?;
    let split = splits(cfg, &rows)?;
    let e = &cfg.encode;
    let stage = StageDir::new(&layout.encode())?;
    let mut written = 0;
    for &kind in kinds {
        let dir = layout.describe(kind);
        if !dir.exists() {
            log::warn!("encode: no {kind} descriptors; skipping");
            continue;
        }
        if kind.is_local() {
            let loaded = load_descriptors(&dir, &rows, false)?;
            let dim = loaded.rows[0].1.dim;
            let pool = pooled_rows(&loaded.rows, &split, dim, e.max_fit_rows, derive_seed(cfg.seed, &format!("pool-{kind}")));
            let gmm = fit_gmm(&pool, dim, e.gmm(e.gmm_k), derive_seed(cfg.seed, &format!("gmm-{kind}")))
                .with_context(|| format!("fitting the {kind} GMM"))?
                .model;
            let codebook = fit_kmeans(&pool, dim, e.bovw_k, derive_seed(cfg.seed, &format!("kmeans-{kind}")), e.max_iter)
                .with_context(|| format!("fitting the {kind} codebook"))?
                .codebook;
            save_gmm(&gmm, &stage.path().join(format!("{kind}.gmm")))?;
            save_codebook(&codebook, &stage.path().join(format!("{kind}.km")))?;
            let encoded = par::map(&loaded.rows, |(row, set)| -> canopy3d::Result<[TaggedFeature; 2]> {
                let base = loaded.seconds[&row.plant_id];
                let start = Instant::now();
                let fv = encode_fv(&gmm, &set.data, dim)?;
                let fv_time = start.elapsed().as_secs_f64();
                let start = Instant::now();
                let bovw = encode_bovw(&codebook, &set.data, dim)?;
                let bovw_time = start.elapsed().as_secs_f64();
                Ok([tagged(row, &split, fv, base + fv_time), tagged(row, &split, bovw, base + bovw_time)])
            });
            let encoded = collect_plants(&rows, encoded.into_iter().map(|r| r.map_err(anyhow::Error::from)).collect(), kind)?;
            for (i, encoding) in ["FV", "BoVW"].into_iter().enumerate() {
                let feats: Vec<TaggedFeature> = encoded.iter().map(|pair| pair[i].clone()).collect();
                write_features(&stage.path().join(format!("{}.feat", row_slug(local_name(kind), encoding))), &feats)?;
                written += 1;
            }
        } else {
            for variant in NET_VARIANTS {
                let vdir = dir.join(variant);
                let method = variant_name(variant);
                let feats: Vec<TaggedFeature> = if kind == DescriptorKind::NetGlobal {
                    let loaded = load_descriptors(&vdir, &rows, false)?;
                    loaded.rows.iter().map(|(row, set)| tagged(row, &split, set.data.clone(), loaded.seconds[&row.plant_id])).collect()
                } else {
                    let locals = load_descriptors(&vdir, &rows, false)?;
                    let globals = load_descriptors(&vdir, &rows, true)?;
                    let dim = locals.rows[0].1.dim;
                    let tag = format!("{kind}-{variant}");
                    let pool = pooled_rows(&locals.rows, &split, dim, e.max_fit_rows, derive_seed(cfg.seed, &format!("pool-{tag}")));
                    let gmm = fit_gmm(&pool, dim, e.gmm(cfg.network.agg_k), derive_seed(cfg.seed, &format!("gmm-{tag}")))
                        .with_context(|| format!("fitting the {tag} GMM"))?
                        .model;
                    save_gmm(&gmm, &stage.path().join(format!("{tag}.gmm")))?;
                    let pairs: Vec<_> = locals.rows.iter().zip(&globals.rows).collect();
                    let encoded = par::map(&pairs, |((row, local), (_, global))| -> canopy3d::Result<TaggedFeature> {
                        let start = Instant::now();
                        let mut values = global.data.clone();
                        values.extend(encode_fv(&gmm, &local.data, dim)?);
                        let seconds = locals.seconds[&row.plant_id] + start.elapsed().as_secs_f64();
                        Ok(tagged(row, &split, values, seconds))
                    });
                    collect_plants(&rows, encoded.into_iter().map(|r| r.map_err(anyhow::Error::from)).collect(), kind)?
                };
                let encoding = if kind == DescriptorKind::NetGlobal { "Global" } else { "Aggregation" };
                write_features(&stage.path().join(format!("{}.feat", row_slug(method, encoding))), &feats)?;
                written += 1;
            }
        }
        log::info!("encode: {kind} done");
    }
    if written == 0 {
        bail!("no descriptors to encode; run describe first");
    }
    stage.commit()?;
    Ok(written)
}

/// Trains one SVM per available feature file and writes the model bundle.
pub fn train_models(cfg: &PipelineConfig) -> anyhow::Result<usize> {
    let layout = Layout::new(&cfg.out);
    if !layout.encode().exists() {
        bail!("no encoded features at {}; run encode first", layout.encode().display());
    }
    let stage = StageDir::new(&layout.models())?;
    let mut bundle = Vec::new();
    for (method, encoding) in TABLE_ROWS {
        let slug = row_slug(method, encoding);
        let feat_path = layout.encode().join(format!("{slug}.feat"));
        if !feat_path.exists() {
            log::warn!("train: no features for {method} ({encoding})");
            continue;
        }
        let feats = read_features(&feat_path)?;
        let train_rows: Vec<&TaggedFeature> = feats.iter().filter(|f| f.split == Split::Train).collect();
        let xs: Vec<Vec<f64>> = train_rows.iter().map(|f| f.values.clone()).collect();
        let ys: Vec<PlantClass> = train_rows.iter().map(|f| f.label).collect();
        let mut svm = cfg.svm.svm();
        if encoding == "Aggregation" && cfg.svm.standardize {
            // [global || Fisher vector]: keep the long Fisher block from drowning the global part
            svm.lead_block = Some(cfg.network.net().global_dim());
        }
        match train_svm(&xs, &ys, svm) {
            Ok(fit) => {
                fit.model.save(&stage.path().join(format!("{slug}.svm")))?;
                bundle.push((method, encoding, slug));
            }
            Err(e) => log::warn!("train: {method} ({encoding}) failed: {e}"),
        }
    }
    atomic_write(&stage.path().join("bundle.csv"), |w| {
        writeln!(w, "method,encoding,model")?;
        for (m, e, slug) in &bundle {
            writeln!(w, "{m},{e},{slug}.svm")?;
        }
        Ok(())
    })?;
    stage.commit()?;
    log::info!("train: {} models", bundle.len());
    Ok(bundle.len())
}

fn read_bundle(path: &Path) -> anyhow::Result<BTreeMap<(String, String), String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            match f.as_slice() {
                [m, e, model] => Ok(((m.to_string(), e.to_string()), model.to_string())),
                _ => Err(anyhow!("{}: bad line '{l}'", path.display())),
            }
        })
        .collect()
}

/// Scores every table row on the test plants and writes `report.txt` and `report.csv`.
pub fn evaluate(cfg: &PipelineConfig) -> anyhow::Result<EvalReport> {
    let layout = Layout::new(&cfg.out);
    let bundle_path = layout.bundle();
    if !bundle_path.exists() {
        return Err(Error::MissingModel(format!("{} not found; run train first", bundle_path.display())).into());
    }
    let bundle = read_bundle(&bundle_path)?;
    let rows: Vec<EvalRow> = TABLE_ROWS
        .iter()
        .map(|&(method, encoding)| {
            let Some(model) = bundle.get(&(method.to_string(), encoding.to_string())) else {
                return EvalRow::failed(method, encoding, "no trained model");
            };
            let scored = (|| -> anyhow::Result<EvalRow> {
                let model = SvmModel::load(&layout.models().join(model))?;
                let feats = read_features(&layout.encode().join(format!("{}.feat", row_slug(method, encoding))))?;
                Ok(score_row(method, encoding, &model, &feats))
            })();
            scored.unwrap_or_else(|e| EvalRow::failed(method, encoding, format!("{e:#}")))
        })
        .collect();
    let report = EvalReport::new(rows);
    let stage = StageDir::new(&layout.eval())?;
    report.write(&stage.path().join("report.txt"), &stage.path().join("report.csv"), cfg.eval.csv_timing)?;
    stage.commit()?;
    Ok(report)
}

/// synth → segment → describe → encode → train → eval.
pub fn pipeline(cfg: &PipelineConfig, kinds: &[DescriptorKind]) -> anyhow::Result<EvalReport> {
    let t = Instant::now();
    synth(cfg)?;
    log::info!("synth took {:.1}s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    segment(cfg)?;
    log::info!("segment took {:.1}s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    describe(cfg, kinds, true)?;
    log::info!("describe took {:.1}s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    encode(cfg, kinds)?;
    log::info!("encode took {:.1}s", t.elapsed().as_secs_f64());
    train_models(cfg)?;
    evaluate(cfg)
}
