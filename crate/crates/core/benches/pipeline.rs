//! Parallel vs sequential throughput of the data-parallel stages.
//!
//! With the default `parallel` feature each workload runs on the global rayon pool and
//! on a one-thread pool. Build with `--no-default-features` to time the plain-iterator
//! fallback; its results are reported under the `sequential` group.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use canopy3d::cloud::{compute_resolution, estimate_normals, PointCloud};
use canopy3d::encoding::{encode_fv, fit_gmm, GmmParams};
use canopy3d::local::{compute_fpfh, compute_shot, detect_keypoints, KeypointMethod};
use canopy3d::synth::{generate_dataset, DatasetSpec};

fn canopy() -> PointCloud {
    let spec = DatasetSpec { n_control: 1, n_drought: 1, ..Default::default() };
    let record = generate_dataset(&spec).unwrap().remove(0);
    let keep: Vec<usize> = (0..record.plant.labels.len()).filter(|&i| record.plant.labels[i].is_leaf()).collect();
    record.plant.cloud.select(&keep)
}

fn mode() -> &'static str {
    if cfg!(feature = "parallel") {
        "parallel"
    } else {
        "sequential"
    }
}

#[cfg(feature = "parallel")]
fn pools() -> Vec<(String, Option<rayon::ThreadPool>)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    vec![(format!("global-pool-{}", rayon::current_num_threads()), None), ("1-thread".to_string(), Some(one))]
}

#[cfg(not(feature = "parallel"))]
fn pools() -> Vec<(String, Option<()>)> {
    vec![("iterators".to_string(), None)]
}

#[cfg(feature = "parallel")]
fn run<R: Send>(pool: &Option<rayon::ThreadPool>, f: impl FnOnce() -> R + Send) -> R {
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn run<R>(_: &Option<()>, f: impl FnOnce() -> R) -> R {
    f()
}

fn descriptors(c: &mut Criterion) {
    let cloud = canopy();
    let res = compute_resolution(&cloud).unwrap();
    let cloud = estimate_normals(&cloud, 5.0 * res).unwrap();
    let radius = 15.0 * res;
    let kps = detect_keypoints(&cloud, KeypointMethod::Uniform { spacing: 8.0 * res }, radius).unwrap();

    let mut group = c.benchmark_group(format!("descriptors/{}", mode()));
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_with_input(BenchmarkId::new("normals", &name), &cloud, |b, cl| {
            b.iter(|| run(&pool, || estimate_normals(black_box(cl), 5.0 * res).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("fpfh", &name), &cloud, |b, cl| {
            b.iter(|| run(&pool, || compute_fpfh(black_box(cl), &kps, radius).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("shot", &name), &cloud, |b, cl| {
            b.iter(|| run(&pool, || compute_shot(black_box(cl), &kps, radius).unwrap()))
        });
    }
    group.finish();
}

fn fisher(c: &mut Criterion) {
    let dim = 33;
    let data: Vec<f64> = (0..dim * 4000).map(|i| ((i * 7919) % 1000) as f64 / 100.0).collect();
    let gmm = fit_gmm(&data, dim, GmmParams { k: 16, max_iter: 10, ..Default::default() }, 1).unwrap().model;

    let mut group = c.benchmark_group(format!("encoding/{}", mode()));
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_with_input(BenchmarkId::new("fisher-vector", &name), &data, |b, d| {
            b.iter(|| run(&pool, || encode_fv(&gmm, black_box(d), dim).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("gmm-em", &name), &data, |b, d| {
            b.iter(|| run(&pool, || fit_gmm(black_box(d), dim, GmmParams { k: 8, max_iter: 5, ..Default::default() }, 2)))
        });
    }
    group.finish();
}

criterion_group!(benches, descriptors, fisher);
criterion_main!(benches);
