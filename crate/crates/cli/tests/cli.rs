use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use canopy3d::local::DescriptorSet;

fn canopy3d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_canopy3d"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

const TINY: &str = r#"
[synth]
control = 4
drought = 4
points_per_leaf = 300

[network]
n_points = 64
pretrain_per_class = 2
pretrain_epochs = 2
finetune_epochs = 2
finetune_samples = 1
agg_k = 2

[encode]
gmm_k = 2
bovw_k = 4
max_iter = 20

[svm]
epochs = 50

[eval]
n_train = 4
"#;

#[test]
fn synth_writes_the_dataset_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("missing/nested");
    let out_s = out.to_str().unwrap();
    let args = ["synth", "--control", "17", "--drought", "17", "--seed", "7", "--out", out_s];
    let first = canopy3d(&args);
    assert!(first.status.success(), "{}", stderr(&first));
    let synth = out.join("synth");
    let files = dir_files(&synth);
    assert_eq!(files.iter().filter(|(n, _)| n.ends_with(".ply")).count(), 34);
    let manifest = String::from_utf8(fs::read(synth.join("manifest.csv")).unwrap()).unwrap();
    assert_eq!(manifest.lines().count(), 35);
    assert!(manifest.starts_with("plant_id,class,severity,seed,path\n"));
    assert!(canopy3d(&args).status.success());
    assert_eq!(dir_files(&synth), files);
}

#[test]
fn unknown_method_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = canopy3d(&["describe", "--method", "sift", "--out", tmp.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown method 'sift'"));
}

#[test]
fn eval_without_models_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let o = canopy3d(&["eval", "--out", tmp.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("model bundle missing"), "{}", stderr(&o));
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn grey_scene_has_no_canopy() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = tmp.path().join("synth");
    fs::create_dir_all(&synth).unwrap();
    let mut ply = String::from(
        "ply\nformat ascii 1.0\nelement vertex 400\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
    );
    for i in 0..20 {
        for j in 0..20 {
            ply.push_str(&format!("{} {} 0 120 120 120\n", i as f64 * 0.01, j as f64 * 0.01));
        }
    }
    fs::write(synth.join("grey.ply"), ply).unwrap();
    fs::write(synth.join("manifest.csv"), "plant_id,class,severity,seed,path\n0,control,0,1,grey.ply\n").unwrap();
    let o = canopy3d(&["segment", "--out", tmp.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("no canopy found"), "{}", stderr(&o));
    let names: Vec<String> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["synth"]);
}

#[test]
fn config_is_strict_and_flags_override_it() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "seed = 1\nsede = 2\n").unwrap();
    let o = canopy3d(&["synth", "--config", bad.to_str().unwrap(), "--out", tmp.path().join("x").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("sede"), "{}", stderr(&o));

    let good = tmp.path().join("good.toml");
    fs::write(&good, "seed = 3\n[synth]\ncontrol = 2\ndrought = 2\n[eval]\nn_train = 2\n").unwrap();
    let run = |dir: &str, extra: &[&str]| {
        let out = tmp.path().join(dir);
        let mut args = vec!["synth", "--config", good.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        assert!(canopy3d(&args).status.success());
        fs::read_to_string(out.join("synth/manifest.csv")).unwrap()
    };
    let from_file = run("a", &[]);
    let overridden = run("b", &["--seed", "5"]);
    let direct = run("c", &["--seed", "5", "--control", "2"]);
    assert_eq!(from_file.lines().count(), 5);
    assert_ne!(from_file, overridden);
    assert_eq!(overridden, direct);
    assert_eq!(run("d", &["--drought", "3"]).lines().count(), 6);
}

#[test]
fn tiny_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let out = tmp.path().join("out");
    let o = canopy3d(&["pipeline", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("Fine tuned PointNet (Aggregation)"));

    let csv = fs::read_to_string(out.join("eval/report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,encoding,accuracy,seconds");
    assert_eq!(lines.len(), 11);
    assert!(lines[1].starts_with("SHOT,FV,") && lines[10].starts_with("Fine tuned PointNet,Aggregation,"));

    let fpfh = DescriptorSet::load(&out.join("describe/fpfh/plant_000.desc")).unwrap();
    assert_eq!(fpfh.dim, 33);
    let global = DescriptorSet::load(&out.join("describe/net-global/finetuned/plant_000.desc")).unwrap();
    assert_eq!((global.len(), global.dim), (1, 256));
    let agg = fs::read_to_string(out.join("encode/fine-tuned-pointnet-aggregation.feat")).unwrap();
    assert!(agg.starts_with(&format!("FEATV1 {} 8\n", 256 + 2 * 2 * 64)));

    let summary = fs::read_to_string(out.join("segment/summary.csv")).unwrap();
    for line in summary.lines().skip(1) {
        let f: Vec<usize> = line.split(',').take(3).map(|v| v.parse().unwrap()).collect();
        assert!(f[2] <= f[1]);
    }

    // eval reruns on the stored models give the same CSV
    let again = canopy3d(&["eval", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(again.status.success(), "{}", stderr(&again));
    assert_eq!(fs::read_to_string(out.join("eval/report.csv")).unwrap(), csv);
}

#[test]
fn thread_cap_is_read_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let args = ["synth", "--control", "13", "--drought", "13", "--out", out];
    let capped = Command::new(env!("CARGO_BIN_EXE_canopy3d")).args(args).env("CANOPY3D_THREADS", "1").output().unwrap();
    assert!(capped.status.success(), "{}", stderr(&capped));
    let bad = Command::new(env!("CARGO_BIN_EXE_canopy3d")).args(args).env("CANOPY3D_THREADS", "many").output().unwrap();
    assert!(!bad.status.success());
    assert!(stderr(&bad).contains("CANOPY3D_THREADS"));
}
