//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any gating criterion fails.

use std::f64::consts::PI;
use std::fs;
use std::time::{Duration, Instant};

use nalgebra::{Rotation3, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;

use canopy3d::classify::{train_svm, SvmConfig};
use canopy3d::cloud::{compute_resolution, estimate_normals, Point3C, PointCloud};
use canopy3d::deep::{sample_pointset, NetConfig, NetworkParams};
use canopy3d::encoding::{encode_bovw, encode_fv, fisher_raw, fit_gmm, fit_kmeans, GmmModel, GmmParams};
use canopy3d::local::{
    compute_fpfh, compute_rops, compute_shot, detect_keypoints, DescriptorSet, Keypoint, KeypointMethod, RopsParams,
    FPFH_BINS, FPFH_DIM,
};
use canopy3d::rng::seeded;
use canopy3d::segmentation::{is_connected, segment, VccsParams};
use canopy3d::synth::{generate_dataset, DatasetSpec, PlantClass, PlantRecord};
use canopy3d_cli::stages::{self, ALL_METHODS};
use canopy3d_cli::PipelineConfig;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn report(id: usize, name: &str, gating: bool, elapsed: Duration, out: &Outcome) -> bool {
    let tag = if out.pass { "PASS" } else if gating { "FAIL" } else { "FAIL (report-only)" };
    println!("criterion {id} {tag}: {name} [{:.1}s] {}", elapsed.as_secs_f64(), out.detail);
    out.pass || !gating
}

fn plants(n: usize, seed: u64) -> Vec<PlantRecord> {
    generate_dataset(&DatasetSpec { n_control: n, n_drought: n, base_seed: seed, ..Default::default() }).unwrap()
}

fn leaves(r: &PlantRecord) -> PointCloud {
    let keep: Vec<usize> = (0..r.plant.labels.len()).filter(|&i| r.plant.labels[i].is_leaf()).collect();
    r.plant.cloud.select(&keep)
}

// ---------- oracles ----------

fn oracle_pair(p1: Vector3<f64>, n1: Vector3<f64>, p2: Vector3<f64>, n2: Vector3<f64>) -> Option<[f64; 3]> {
    let d = p2 - p1;
    let len = d.norm();
    if len == 0.0 {
        return None;
    }
    let (u, t, line) = if n1.dot(&d).abs() >= n2.dot(&d).abs() { (n1, n2, d / len) } else { (n2, n1, -d / len) };
    let phi = u.dot(&line);
    let v = u.cross(&line);
    if v.norm() == 0.0 {
        return Some([0.0, phi, 0.0]);
    }
    let v = v.normalize();
    let w = u.cross(&v);
    Some([v.dot(&t), phi, w.dot(&t).atan2(u.dot(&t))])
}

fn oracle_bin(x: f64, lo: f64, hi: f64) -> usize {
    let b = ((x - lo) / (hi - lo) * FPFH_BINS as f64).floor();
    b.clamp(0.0, (FPFH_BINS - 1) as f64) as usize
}

/// Brute-force neighbors: every other point within `r`, scanned in index order.
fn brute_neighbors(cloud: &PointCloud, center: Vector3<f64>, r: f64, skip: usize) -> Vec<(usize, f64)> {
    (0..cloud.len())
        .filter(|&j| j != skip)
        .map(|j| (j, (cloud.points[j].position - center).norm()))
        .filter(|&(_, d)| d <= r)
        .collect()
}

fn oracle_spfh(cloud: &PointCloud, i: usize, r: f64) -> Vec<f64> {
    let mut h = vec![0.0; FPFH_DIM];
    let p = cloud.points[i].position;
    let n = cloud.normal(i).unwrap();
    let mut pairs = 0.0;
    for (j, _) in brute_neighbors(cloud, p, r, i) {
        if let Some(f) = oracle_pair(p, n, cloud.points[j].position, cloud.normal(j).unwrap()) {
            h[oracle_bin(f[0], -1.0, 1.0)] += 1.0;
            h[FPFH_BINS + oracle_bin(f[1], -1.0, 1.0)] += 1.0;
            h[2 * FPFH_BINS + oracle_bin(f[2], -PI, PI)] += 1.0;
            pairs += 1.0;
        }
    }
    if pairs > 0.0 {
        h.iter_mut().for_each(|v| *v *= 100.0 / pairs);
    }
    h
}

/// FPFH straight from its definition, recomputing every neighbor's SPFH: O(k^2) per keypoint.
fn oracle_fpfh(cloud: &PointCloud, kp: usize, r: f64) -> Option<Vec<f64>> {
    let nbrs: Vec<(usize, f64)> =
        brute_neighbors(cloud, cloud.points[kp].position, r, kp).into_iter().filter(|&(_, d)| d > 0.0).collect();
    if nbrs.len() < 5 {
        return None;
    }
    let mut row = oracle_spfh(cloud, kp, r);
    let k = nbrs.len() as f64;
    for (j, d) in nbrs {
        for (a, s) in row.iter_mut().zip(oracle_spfh(cloud, j, r)) {
            *a += s / (d * k);
        }
    }
    for sub in row.chunks_mut(FPFH_BINS) {
        let s: f64 = sub.iter().sum();
        if s > 0.0 {
            sub.iter_mut().for_each(|v| *v *= 100.0 / s);
        }
    }
    Some(row)
}

fn surface(n: usize, seed: u64) -> PointCloud {
    let mut rng = seeded(seed);
    let pts = (0..n)
        .map(|_| {
            let (x, y): (f64, f64) = (rng.random(), rng.random());
            Point3C::at(Vector3::new(x, y, 0.25 * (3.0 * x).sin() * (2.0 * y).cos()))
        })
        .collect();
    estimate_normals(&PointCloud::new(pts), 0.12).unwrap()
}

fn check_fpfh() -> (bool, String) {
    let cloud = surface(700, 1);
    let r = 0.11;
    let kps: Vec<Keypoint> =
        (0..cloud.len()).step_by(11).map(|i| Keypoint { index: i, position: cloud.points[i].position, radius: r }).collect();
    let got = compute_fpfh(&cloud, &kps, r).unwrap();
    let expected: Vec<(usize, Vec<f64>)> =
        kps.iter().filter_map(|k| oracle_fpfh(&cloud, k.index, r).map(|row| (k.index, row))).collect();
    if expected.len() != got.len() || expected.is_empty() {
        return (false, format!("fpfh rows {} vs oracle {}", got.len(), expected.len()));
    }
    let mut worst = 0.0f64;
    for (i, (idx, row)) in expected.iter().enumerate() {
        if got.keypoints[i].index != *idx {
            return (false, "fpfh keypoint order differs".into());
        }
        for (a, b) in got.row(i).iter().zip(row) {
            worst = worst.max((a - b).abs());
        }
    }
    (worst <= 1e-6, format!("fpfh {} rows max|diff| {worst:.1e}", got.len()))
}

fn check_bovw() -> (bool, String) {
    let mut rng = seeded(2);
    let dim = 5;
    let train: Vec<f64> = (0..dim * 400).map(|_| rng.random_range(-1.0..1.0)).collect();
    let book = fit_kmeans(&train, dim, 12, 3, 50).unwrap().codebook;
    for trial in 0..10 {
        let n = 30 + 7 * trial;
        let data: Vec<f64> = (0..dim * n).map(|_| rng.random_range(-1.2..1.2)).collect();
        let mut hist = vec![0usize; 12];
        for x in data.chunks(dim) {
            let mut best = (0, f64::INFINITY);
            for c in 0..12 {
                let d: f64 = x.iter().zip(&book.centroids[c * dim..(c + 1) * dim]).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.1 {
                    best = (c, d);
                }
            }
            hist[best.0] += 1;
        }
        let expect: Vec<f64> = hist.iter().map(|&h| h as f64 / n as f64).collect();
        if encode_bovw(&book, &data, dim).unwrap() != expect {
            return (false, format!("bovw differs on trial {trial}"));
        }
    }
    (true, "bovw exact on 10 sets".into())
}

fn toy_ll(w: &[f64], mu: &[f64], sd: &[f64], data: &[f64]) -> f64 {
    data.chunks(2)
        .map(|x| {
            (0..2)
                .map(|k| {
                    let mut p = w[k];
                    for j in 0..2 {
                        let z = (x[j] - mu[k * 2 + j]) / sd[k * 2 + j];
                        p *= (-0.5 * z * z).exp() / (sd[k * 2 + j] * (2.0 * PI).sqrt());
                    }
                    p
                })
                .sum::<f64>()
                .ln()
        })
        .sum()
}

fn check_fv() -> (bool, String) {
    let g = GmmModel { dim: 2, weights: vec![0.4, 0.6], means: vec![-0.3, 0.2, 0.9, -0.5], variances: vec![0.7, 0.4, 1.1, 0.9] };
    let data = [0.1, 0.4, 0.8, -0.9, -0.6, 0.3, 1.4, 0.0];
    let n = 4.0;
    let sd: Vec<f64> = g.variances.iter().map(|v| v.sqrt()).collect();
    let fv = fisher_raw(&g, &data, 2).unwrap();
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for idx in 0..4 {
        let k = idx / 2;
        let nudge = |v: &[f64], s: f64| {
            let mut v = v.to_vec();
            v[idx] += s;
            v
        };
        let d_mu = (toy_ll(&g.weights, &nudge(&g.means, eps), &sd, &data)
            - toy_ll(&g.weights, &nudge(&g.means, -eps), &sd, &data))
            / (2.0 * eps);
        let d_sd = (toy_ll(&g.weights, &g.means, &nudge(&sd, eps), &data)
            - toy_ll(&g.weights, &g.means, &nudge(&sd, -eps), &data))
            / (2.0 * eps);
        let want_mu = sd[idx] * d_mu / (n * g.weights[k].sqrt());
        let want_sd = sd[idx] * d_sd / (n * (2.0 * g.weights[k]).sqrt());
        for (got, want) in [(fv[idx], want_mu), (fv[4 + idx], want_sd)] {
            worst = worst.max((got - want).abs() / want.abs().max(1e-12));
        }
    }
    (worst < 1e-4, format!("fv max rel err {worst:.1e}"))
}

fn oracles() -> Outcome {
    let parts = [check_fpfh(), check_bovw(), check_fv()];
    let pass = parts.iter().all(|p| p.0);
    Outcome::new(pass, parts.iter().map(|p| p.1.as_str()).collect::<Vec<_>>().join("; "))
}

// ---------- invariance ----------

fn permutation_invariance() -> (bool, String) {
    let config = NetConfig { n_points: 256, ..Default::default() };
    let net = NetworkParams::init(&config, 21).unwrap();
    let records = plants(2, 22);
    let sets: Vec<_> = records.iter().map(|r| sample_pointset(&leaves(r), 256, r.seed).unwrap()).collect();
    let locals: Vec<f64> = sets.iter().flat_map(|s| net.local_descriptors(s).1).collect();
    let gmm = fit_gmm(&locals, config.agg_dim, GmmParams { k: 4, ..Default::default() }, 23).unwrap().model;
    let book = fit_kmeans(&locals, config.agg_dim, 8, 24, 30).unwrap().codebook;

    let set = &sets[0];
    let global = net.forward_global(set).global;
    let agg = net.forward_aggregated(set, &gmm).unwrap();
    let (_, local) = net.local_descriptors(set);
    let d = config.agg_dim;
    let fv = encode_fv(&gmm, &local, d).unwrap();
    let bovw = encode_bovw(&book, &local, d).unwrap();

    let mut rng = seeded(25);
    let mut perm: Vec<usize> = (0..set.len()).collect();
    for t in 0..100 {
        perm.shuffle(&mut rng);
        let p = set.permuted(&perm);
        let (_, pl) = net.local_descriptors(&p);
        if net.forward_global(&p).global != global
            || net.forward_aggregated(&p, &gmm).unwrap() != agg
            || encode_fv(&gmm, &pl, d).unwrap() != fv
            || encode_bovw(&book, &pl, d).unwrap() != bovw
        {
            return (false, format!("output changed under permutation {t}"));
        }
    }
    (true, "global, aggregated, FV and BoVW bit-identical over 100 permutations".into())
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 && nb == 0.0 {
        1.0
    } else if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean cosine between matching rows; a keypoint present in only one set counts as 0.
fn mean_cosine(a: &DescriptorSet, b: &DescriptorSet) -> f64 {
    let mut sum = 0.0;
    let mut total = 0usize;
    let mut j = 0;
    for (i, kp) in a.keypoints.iter().enumerate() {
        while j < b.len() && b.keypoints[j].index < kp.index {
            j += 1;
            total += 1;
        }
        total += 1;
        if j < b.len() && b.keypoints[j].index == kp.index {
            sum += cosine(a.row(i), b.row(j));
            j += 1;
        }
    }
    total += b.len() - j;
    sum / total.max(1) as f64
}

fn rigid_invariance() -> (bool, String) {
    let record = &plants(1, 31)[0];
    let canopy = leaves(record);
    let res = compute_resolution(&canopy).unwrap();
    let cloud = estimate_normals(&canopy, 5.0 * res).unwrap();
    let r = 15.0 * res;
    let kps = detect_keypoints(&cloud, KeypointMethod::Uniform { spacing: 8.0 * res }, r).unwrap();
    let describe = |c: &PointCloud, k: &[Keypoint]| {
        [
            compute_shot(c, k, r).unwrap(),
            compute_rops(c, k, r, RopsParams::default()).unwrap(),
            compute_fpfh(c, k, r).unwrap(),
        ]
    };
    let base = describe(&cloud, &kps);
    let mut rng = seeded(32);
    let mut sums = [0.0; 3];
    for _ in 0..20 {
        let rot = Rotation3::from_euler_angles(
            rng.random_range(-PI..PI),
            rng.random_range(-PI / 2.0..PI / 2.0),
            rng.random_range(-PI..PI),
        )
        .into_inner();
        let shift = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let moved = cloud.transformed(&rot, &shift);
        let moved_kps: Vec<Keypoint> =
            kps.iter().map(|k| Keypoint { position: moved.points[k.index].position, ..*k }).collect();
        for (s, (a, b)) in sums.iter_mut().zip(base.iter().zip(describe(&moved, &moved_kps))) {
            *s += mean_cosine(a, &b) / 20.0;
        }
    }
    let pass = sums.iter().all(|&s| s >= 0.95);
    (pass, format!("{} keypoints, mean cosine SHOT {:.4} RoPS {:.4} FPFH {:.4}", kps.len(), sums[0], sums[1], sums[2]))
}

fn invariance() -> Outcome {
    let parts = [permutation_invariance(), rigid_invariance()];
    Outcome::new(parts.iter().all(|p| p.0), parts.iter().map(|p| p.1.as_str()).collect::<Vec<_>>().join("; "))
}

// ---------- monotonicity ----------

fn non_decreasing(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0))
}

fn non_increasing(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0))
}

fn blobs(seed: u64, n: usize, dim: usize) -> Vec<f64> {
    let mut rng = seeded(seed);
    let centers: Vec<f64> = (0..4 * dim).map(|_| rng.random_range(-3.0..3.0)).collect();
    (0..n)
        .flat_map(|i| {
            let c = i % 4;
            (0..dim).map(|j| centers[c * dim + j] + rng.random_range(-1.0..1.0)).collect::<Vec<_>>()
        })
        .collect()
}

fn monotonicity() -> Outcome {
    let (mut em, mut km, mut svm) = (0, 0, 0);
    for inst in 0..10u64 {
        let data = blobs(100 + inst, 300, 3);
        let fit = fit_gmm(&data, 3, GmmParams { k: 4, max_iter: 60, ..Default::default() }, inst).unwrap();
        em += usize::from(fit.log_likelihood_trace.len() > 1 && non_decreasing(&fit.log_likelihood_trace));
        let fit = fit_kmeans(&data, 3, 5, inst, 60).unwrap();
        km += usize::from(!fit.objective_trace.is_empty() && non_increasing(&fit.objective_trace));

        let mut rng = seeded(200 + inst);
        let rows: Vec<Vec<f64>> = (0..80)
            .map(|i| {
                let shift = if i % 2 == 0 { 0.8 } else { -0.8 };
                (0..6).map(|_| shift + rng.random_range(-1.5..1.5)).collect()
            })
            .collect();
        let labels: Vec<PlantClass> =
            (0..80).map(|i| if i % 2 == 0 { PlantClass::Control } else { PlantClass::Drought }).collect();
        let fit = train_svm(&rows, &labels, SvmConfig { epochs: 200, ..Default::default() }).unwrap();
        svm += usize::from(fit.final_objective <= fit.objective_trace[0] + 1e-12);
    }
    Outcome::new(
        em == 10 && km == 10 && svm == 10,
        format!("EM non-decreasing {em}/10, k-means non-increasing {km}/10, SVM objective below init {svm}/10"),
    )
}

// ---------- segmentation ----------

fn segmentation() -> Outcome {
    let records = plants(5, 41);
    let mut worst = (1.0f64, 1.0f64);
    let mut connected = true;
    for r in &records {
        let cloud = &r.plant.cloud;
        let seg = segment(cloud, &VccsParams::for_cloud(cloud).unwrap()).unwrap();
        let leaf = r.plant.labels.iter().filter(|l| l.is_leaf()).count();
        let hit = r.plant.labels.iter().zip(&seg.canopy.point_is_plant).filter(|(l, p)| l.is_leaf() && **p).count();
        worst.0 = worst.0.min(hit as f64 / leaf as f64);
        worst.1 = worst.1.min(hit as f64 / seg.canopy.plant_indices.len() as f64);
        connected &= seg.segmentation.supervoxels.iter().all(|sv| is_connected(&seg.grid, &sv.voxels));
    }
    Outcome::new(
        worst.0 >= 0.95 && worst.1 >= 0.90 && connected,
        format!(
            "{} scenes, min recall {:.4}, min precision {:.4}, supervoxels connected: {connected}",
            records.len(),
            worst.0,
            worst.1
        ),
    )
}

// ---------- end to end ----------

fn pipeline_config(out: &std::path::Path) -> PipelineConfig {
    let mut cfg = PipelineConfig { seed: 7, out: out.to_path_buf(), ..Default::default() };
    cfg.synth.control = 20;
    cfg.synth.drought = 20;
    cfg.eval.n_train = 24;
    cfg
}

fn main() {
    // under `cargo test` libtest flags are passed through; `--list` must not run anything
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut ok = true;

    let t = Instant::now();
    let mut out = oracles();
    out.pass &= t.elapsed() < Duration::from_secs(60);
    ok &= report(1, "oracles", true, t.elapsed(), &out);

    let t = Instant::now();
    let mut out = invariance();
    out.pass &= t.elapsed() < Duration::from_secs(300);
    ok &= report(2, "invariance", true, t.elapsed(), &out);

    let t = Instant::now();
    let out = monotonicity();
    ok &= report(3, "monotonicity", true, t.elapsed(), &out);

    let t = Instant::now();
    let out = segmentation();
    ok &= report(4, "segmentation", true, t.elapsed(), &out);

    let tmp = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let first = stages::pipeline(&pipeline_config(&tmp.path().join("a")), &ALL_METHODS).unwrap();
    let run_time = t.elapsed();
    print!("{}", first.to_text());
    let acc = |m: &str, e: &str| first.row(m, e).and_then(|r| r.accuracy).unwrap_or(0.0);
    let best_local = ["SHOT", "RoPS", "FPFH"]
        .into_iter()
        .map(|m| (m, acc(m, "FV")))
        .fold(("", -1.0), |a, b| if b.1 > a.1 { b } else { a });
    let agg = acc("Fine tuned PointNet", "Aggregation");
    let out = Outcome::new(
        best_local.1 >= 85.0 && agg >= 85.0 && run_time < Duration::from_secs(1800),
        format!("best local FV {} {:.1}%, fine tuned aggregation {agg:.1}%", best_local.0, best_local.1),
    );
    ok &= report(5, "classification", true, run_time, &out);

    let t = Instant::now();
    let mut gaps = Vec::new();
    for m in ["SHOT", "RoPS", "FPFH"] {
        let fv = first.row(m, "FV").unwrap();
        let bovw = first.row(m, "BoVW").unwrap();
        let secs = |r: &canopy3d::classify::EvalRow| r.seconds.map_or("NA".to_string(), |s| format!("{s:.3}s"));
        gaps.push((
            fv.accuracy.unwrap_or(0.0) >= bovw.accuracy.unwrap_or(0.0) - 2.0,
            format!(
                "{m} FV {:.1}% ({}) vs BoVW {:.1}% ({})",
                fv.accuracy.unwrap_or(0.0),
                secs(fv),
                bovw.accuracy.unwrap_or(0.0),
                secs(bovw)
            ),
        ));
    }
    let out = Outcome::new(gaps.iter().all(|g| g.0), gaps.iter().map(|g| g.1.as_str()).collect::<Vec<_>>().join("; "));
    report(6, "FV vs BoVW", false, t.elapsed(), &out);

    let t = Instant::now();
    stages::pipeline(&pipeline_config(&tmp.path().join("b")), &ALL_METHODS).unwrap();
    let mut same = Vec::new();
    for rel in ["eval/report.csv", "segment/summary.csv", "synth/manifest.csv"] {
        let a = fs::read(tmp.path().join("a").join(rel)).unwrap();
        let b = fs::read(tmp.path().join("b").join(rel)).unwrap();
        same.push((a == b, rel));
    }
    let out = Outcome::new(
        same.iter().all(|s| s.0),
        same.iter().map(|s| format!("{} {}", s.1, if s.0 { "identical" } else { "differs" })).collect::<Vec<_>>().join(", "),
    );
    ok &= report(7, "determinism", true, t.elapsed(), &out);

    if !ok {
        std::process::exit(1);
    }
}
