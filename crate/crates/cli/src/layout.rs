//! Where each stage reads and writes under the output root, plus the small text
//! formats that only the pipeline uses.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use canopy3d::classify::{Split, TaggedFeature};
use canopy3d::cloud::atomic_write;
use canopy3d::local::DescriptorKind;

pub const NET_VARIANTS: [&str; 2] = ["pretrained", "finetuned"];

#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn synth(&self) -> PathBuf {
        self.root.join("synth")
    }

    pub fn manifest(&self) -> PathBuf {
        self.synth().join("manifest.csv")
    }

    pub fn segment(&self) -> PathBuf {
        self.root.join("segment")
    }

    pub fn describe(&self, kind: DescriptorKind) -> PathBuf {
        self.root.join("describe").join(kind.name())
    }

    pub fn networks(&self) -> PathBuf {
        self.root.join("networks")
    }

    pub fn encode(&self) -> PathBuf {
        self.root.join("encode")
    }

    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn bundle(&self) -> PathBuf {
        self.models().join("bundle.csv")
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }
}

/// File stem shared by every per-plant output.
pub fn plant_stem(id: usize) -> String {
    format!("plant_{id:03}")
}

/// `"Fine tuned PointNet"`, `"Aggregation"` → `"fine-tuned-pointnet-aggregation"`.
pub fn row_slug(method: &str, encoding: &str) -> String {
    format!("{method} {encoding}").to_ascii_lowercase().split_whitespace().collect::<Vec<_>>().join("-")
}

/// Builds a stage's output in a sibling temporary directory and swaps it into place
/// only when the stage succeeds, so a failed run never leaves partial results.
pub struct StageDir {
    tmp: tempfile::TempDir,
    target: PathBuf,
}

impl StageDir {
    pub fn new(target: &Path) -> anyhow::Result<Self> {
        let parent = target.parent().unwrap_or(Path::new("."));
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        let tmp = tempfile::Builder::new()
            .prefix(".staging-")
            .tempdir_in(parent)
            .with_context(|| format!("creating staging directory in {}", parent.display()))?;
        Ok(Self { tmp, target: target.to_path_buf() })
    }

    pub fn path(&self) -> &Path {
        self.tmp.path()
    }

    pub fn commit(self) -> anyhow::Result<()> {
        if self.target.exists() {
            fs::remove_dir_all(&self.target).with_context(|| format!("replacing {}", self.target.display()))?;
        }
        let staged = self.tmp.keep();
        fs::rename(&staged, &self.target).with_context(|| format!("moving results to {}", self.target.display()))?;
        Ok(())
    }
}

/// `plant_id,seconds` per line.
pub fn write_times(path: &Path, times: &[(usize, f64)]) -> anyhow::Result<()> {
    atomic_write(path, |w| {
        writeln!(w, "plant_id,seconds")?;
        for (id, s) in times {
            writeln!(w, "{id},{s}")?;
        }
        Ok(())
    })?;
    Ok(())
}

pub fn read_times(path: &Path) -> anyhow::Result<Vec<(usize, f64)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (id, s) = l.split_once(',').with_context(|| format!("{}: bad line '{l}'", path.display()))?;
            Ok((id.parse()?, s.parse()?))
        })
        .collect()
}

/// `FEATV1 <dim> <count>`, then `plant_id split label seconds v1 … vdim` per plant.
pub fn write_features(path: &Path, features: &[TaggedFeature]) -> anyhow::Result<()> {
    let dim = features.first().map_or(0, |f| f.values.len());
    if features.iter().any(|f| f.values.len() != dim) {
        bail!("feature rows for {} differ in length", path.display());
    }
    atomic_write(path, |w| {
        writeln!(w, "FEATV1 {dim} {}", features.len())?;
        for f in features {
            write!(w, "{} {} {} {}", f.plant_id, f.split.name(), f.label, f.seconds)?;
            for v in &f.values {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    Ok(())
}

pub fn read_features(path: &Path) -> anyhow::Result<Vec<TaggedFeature>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split_whitespace().collect();
    let (dim, count): (usize, usize) = match header.as_slice() {
        ["FEATV1", d, c] => (d.parse()?, c.parse()?),
        _ => bail!("{}: expected 'FEATV1 <dim> <count>'", path.display()),
    };
    let mut out = Vec::with_capacity(count);
    for (i, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != dim + 4 {
            bail!("{}: row {} has {} fields, expected {}", path.display(), i + 1, f.len(), dim + 4);
        }
        out.push(TaggedFeature {
            plant_id: f[0].parse()?,
            split: f[1].parse::<Split>()?,
            label: f[2].parse()?,
            seconds: f[3].parse()?,
            values: f[4..].iter().map(|v| v.parse::<f64>()).collect::<Result<_, _>>()?,
        });
    }
    if out.len() != count {
        bail!("{}: header says {count} rows, found {}", path.display(), out.len());
    }
    Ok(out)
}
