use std::path::Path;

use crate::cloud::atomic_write;
use crate::synth::PlantClass;
use crate::{Error, Result};

/// Floor on each dimension's scale, as a fraction of the mean standard deviation.
pub const SCALE_FLOOR: f64 = 0.1;

/// Per-dimension standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    /// Standard deviation per dimension, floored at `SCALE_FLOOR` times the mean
    /// standard deviation so nearly constant dimensions (empty Fisher components,
    /// say) are not blown up into noise; 1 where all training data is constant.
    pub scale: Vec<f64>,
}

impl Scaler {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = check_rows(rows)?;
        let m = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            mean.iter_mut().zip(r).for_each(|(s, v)| *s += v / m);
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for j in 0..dim {
                var[j] += (r[j] - mean[j]).powi(2) / m;
            }
        }
        let sd: Vec<f64> = var.into_iter().map(f64::sqrt).collect();
        let floor = SCALE_FLOOR * sd.iter().sum::<f64>() / dim as f64;
        let scale = sd.into_iter().map(|s| if floor > 1e-12 { s.max(floor) } else { 1.0 }).collect();
        Ok(Self { mean, scale })
    }

    /// Reweights the standardized features `[lead (len) || rest]` so both blocks carry
    /// about the same total variance. The larger block is shrunk by `sqrt(small / large)`;
    /// a long Fisher block would otherwise outvote a short global descriptor.
    pub fn balance_blocks(mut self, lead: usize) -> Result<Self> {
        let dim = self.scale.len();
        if lead == 0 || lead >= dim {
            return Err(Error::InvalidArgument(format!("lead block {lead} must be inside 1..{dim}")));
        }
        let rest = dim - lead;
        let shrink = (lead.min(rest) as f64 / lead.max(rest) as f64).sqrt();
        let range = if lead > rest { 0..lead } else { lead..dim };
        self.scale[range].iter_mut().for_each(|s| *s /= shrink);
        Ok(self)
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }
}

fn check_rows(rows: &[Vec<f64>]) -> Result<usize> {
    let dim = rows.first().map(Vec::len).ok_or_else(|| Error::InvalidArgument("no feature rows".into()))?;
    if dim == 0 {
        return Err(Error::InvalidArgument("features must have dimension >= 1".into()));
    }
    for r in rows {
        if r.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: r.len() });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("feature rows must be finite".into()));
        }
    }
    Ok(dim)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmConfig {
    pub c: f64,
    pub epochs: usize,
    /// Standardize features with training statistics before fitting.
    pub standardize: bool,
    /// Length of a leading feature block to balance against the rest after
    /// standardization (see [`Scaler::balance_blocks`]).
    pub lead_block: Option<usize>,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self { c: 1.0, epochs: 1000, standardize: true, lead_block: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub c: f64,
    pub scaler: Option<Scaler>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: PlantClass,
    pub margin: f64,
}

fn sign(label: PlantClass) -> f64 {
    match label {
        PlantClass::Drought => 1.0,
        PlantClass::Control => -1.0,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(1/2)‖w‖² + C Σ max(0, 1 − yᵢ(w·xᵢ + b))` on already transformed rows.
pub fn svm_objective(w: &[f64], b: f64, c: f64, rows: &[Vec<f64>], labels: &[PlantClass]) -> f64 {
    let hinge: f64 = rows
        .iter()
        .zip(labels)
        .map(|(x, &y)| (1.0 - sign(y) * (dot(w, x) + b)).max(0.0))
        .sum();
    0.5 * dot(w, w) + c * hinge
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// Decision value `w·x + b` after the model's own scaling.
    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: x.len() });
        }
        Ok(match &self.scaler {
            Some(s) => dot(&self.w, &s.transform(x)) + self.b,
            None => dot(&self.w, x) + self.b,
        })
    }

    /// Drought when `w·x + b > 0`; points on the hyperplane go to control.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let margin = self.decision(x)?;
        let label = if margin > 0.0 { PlantClass::Drought } else { PlantClass::Control };
        Ok(Prediction { label, margin })
    }

    /// Multiplies `w` and `b` by `factor`; labels are unchanged for `factor > 0`.
    pub fn rescaled(&self, factor: f64) -> Self {
        Self { w: self.w.iter().map(|v| v * factor).collect(), b: self.b * factor, ..self.clone() }
    }

    /// `SVMV1 D C`, then the bias, the weights and, when present, scaler means and scales.
    pub fn save(&self, path: &Path) -> Result<()> {
        let row = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
        atomic_write(path, |w| {
            writeln!(w, "SVMV1 {} {}", self.dim(), self.c)?;
            writeln!(w, "{}", self.b)?;
            writeln!(w, "{}", row(&self.w))?;
            if let Some(s) = &self.scaler {
                writeln!(w, "{}", row(&s.mean))?;
                writeln!(w, "{}", row(&s.scale))?;
            }
            Ok(())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<&str> = text.lines().collect();
        let parse_row = |i: usize| -> Result<Vec<f64>> {
            let line = lines.get(i).ok_or_else(|| Error::parse(path, i + 1, "unexpected end of file"))?;
            line.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| Error::parse(path, i + 1, "non-numeric value")))
                .collect()
        };
        let header: Vec<&str> = lines.first().map(|l| l.split_whitespace().collect()).unwrap_or_default();
        let (dim, c) = match header.as_slice() {
            ["SVMV1", d, c] => (
                d.parse::<usize>().map_err(|_| Error::parse(path, 1, "invalid dimension"))?,
                c.parse::<f64>().map_err(|_| Error::parse(path, 1, "invalid C"))?,
            ),
            _ => return Err(Error::parse(path, 1, "expected 'SVMV1 D C' header")),
        };
        let b = parse_row(1)?;
        let w = parse_row(2)?;
        if b.len() != 1 || w.len() != dim {
            return Err(Error::parse(path, 3, "bias or weight count does not match header"));
        }
        let scaler = if lines.len() > 3 {
            let (mean, scale) = (parse_row(3)?, parse_row(4)?);
            if mean.len() != dim || scale.len() != dim {
                return Err(Error::parse(path, 4, "scaler length does not match header"));
            }
            Some(Scaler { mean, scale })
        } else {
            None
        };
        Ok(Self { w, b: b[0], c, scaler })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmFit {
    pub model: SvmModel,
    /// Objective of the running iterate: at initialization, then after every epoch.
    pub objective_trace: Vec<f64>,
    /// Objective of the returned model.
    pub final_objective: f64,
}

/// Primal linear SVM by full-batch subgradient descent.
///
/// With `λ = 1/(C·m)` the scaled objective `λ/2‖w‖² + (1/m)Σ hinge` is minimized with
/// step `1/(λt)` and projection onto `‖w‖ ≤ 1/√λ`. The bias is unregularized. The
/// iterates of the second half are averaged; if some single iterate (including the
/// zero start) has a lower objective than the average, that iterate is returned.
pub fn train_svm(features: &[Vec<f64>], labels: &[PlantClass], config: SvmConfig) -> Result<SvmFit> {
    let dim = check_rows(features)?;
    if labels.len() != features.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} feature rows",
            labels.len(),
            features.len()
        )));
    }
    if !labels.contains(&PlantClass::Control) || !labels.contains(&PlantClass::Drought) {
        return Err(Error::SingleClass);
    }
    if !(config.c > 0.0) {
        return Err(Error::InvalidArgument(format!("C must be > 0, got {}", config.c)));
    }
    let scaler = match (config.standardize, config.lead_block) {
        (false, Some(_)) => return Err(Error::InvalidArgument("block balancing needs standardization".into())),
        (false, None) => None,
        (true, None) => Some(Scaler::fit(features)?),
        (true, Some(lead)) => Some(Scaler::fit(features)?.balance_blocks(lead)?),
    };
    let rows: Vec<Vec<f64>> = match &scaler {
        Some(s) => features.iter().map(|x| s.transform(x)).collect(),
        None => features.to_vec(),
    };
    if rows.iter().all(|r| r == &rows[0]) {
        log::warn!("all training features are identical; the classifier cannot separate the classes");
    }

    let m = rows.len() as f64;
    let lambda = 1.0 / (config.c * m);
    let radius = 1.0 / lambda.sqrt();
    let ys: Vec<f64> = labels.iter().map(|&l| sign(l)).collect();
    let objective = |w: &[f64], b: f64| svm_objective(w, b, config.c, &rows, labels);

    let (mut w, mut b) = (vec![0.0; dim], 0.0);
    let mut best = (objective(&w, b), w.clone(), b);
    let mut trace = vec![best.0];
    let (mut avg_w, mut avg_b, mut averaged) = (vec![0.0; dim], 0.0, 0usize);
    let burn_in = config.epochs / 2;
    for t in 1..=config.epochs {
        let mut gw: Vec<f64> = w.iter().map(|v| lambda * v).collect();
        let mut gb = 0.0;
        for (x, y) in rows.iter().zip(&ys) {
            if y * (dot(&w, x) + b) < 1.0 {
                gw.iter_mut().zip(x).for_each(|(g, v)| *g -= y * v / m);
                gb -= y / m;
            }
        }
        let eta = 1.0 / (lambda * t as f64);
        w.iter_mut().zip(&gw).for_each(|(v, g)| *v -= eta * g);
        b -= eta * gb;
        let norm = dot(&w, &w).sqrt();
        if norm > radius {
            w.iter_mut().for_each(|v| *v *= radius / norm);
        }
        let obj = objective(&w, b);
        if !obj.is_finite() {
            return Err(Error::Diverged(format!("SVM objective became {obj} at epoch {t}")));
        }
        trace.push(obj);
        if obj < best.0 {
            best = (obj, w.clone(), b);
        }
        if t > burn_in {
            averaged += 1;
            let k = averaged as f64;
            avg_w.iter_mut().zip(&w).for_each(|(a, v)| *a += (v - *a) / k);
            avg_b += (b - avg_b) / k;
        }
    }
    let avg_obj = objective(&avg_w, avg_b);
    let (final_objective, w, b) = if averaged > 0 && avg_obj <= best.0 { (avg_obj, avg_w, avg_b) } else { best };
    Ok(SvmFit { model: SvmModel { w, b, c: config.c, scaler }, objective_trace: trace, final_objective })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    use PlantClass::{Control, Drought};

    /// Two classes on either side of the line x + y = 0 with margin >= 0.5.
    fn separable(seed: u64, m: usize) -> (Vec<Vec<f64>>, Vec<PlantClass>) {
        let mut rng = seeded(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        while xs.len() < m {
            let p: Vec<f64> = vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let s = (p[0] + p[1]) / 2f64.sqrt();
            if s.abs() < 0.5 {
                continue;
            }
            ys.push(if s > 0.0 { Drought } else { Control });
            xs.push(p);
        }
        (xs, ys)
    }

    fn accuracy(model: &SvmModel, xs: &[Vec<f64>], ys: &[PlantClass]) -> f64 {
        let ok = xs.iter().zip(ys).filter(|(x, y)| model.predict(x).unwrap().label == **y).count();
        ok as f64 / xs.len() as f64
    }

    #[test]
    fn separable_toy_is_fit_exactly() {
        let (xs, ys) = separable(1, 60);
        // oracle: the generator's own separator classifies every point correctly
        assert!(xs.iter().zip(&ys).all(|(x, y)| (x[0] + x[1] > 0.0) == (*y == Drought)));
        let fit = train_svm(&xs, &ys, SvmConfig::default()).unwrap();
        assert_eq!(accuracy(&fit.model, &xs, &ys), 1.0);
        assert!(fit.final_objective <= fit.objective_trace[0]);
    }

    #[test]
    fn hyperplane_points_go_to_control() {
        let model = SvmModel { w: vec![1.0, -1.0], b: 0.0, c: 1.0, scaler: None };
        let p = model.predict(&[2.0, 2.0]).unwrap();
        assert_eq!((p.label, p.margin), (Control, 0.0));
        assert_eq!(model.predict(&[2.0, 1.0]).unwrap().label, Drought);
        assert!(matches!(model.predict(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn positive_rescaling_keeps_labels() {
        let (xs, ys) = separable(2, 40);
        let model = train_svm(&xs, &ys, SvmConfig::default()).unwrap().model;
        let big = model.rescaled(3.0);
        for x in &xs {
            assert_eq!(model.predict(x).unwrap().label, big.predict(x).unwrap().label);
        }
    }

    #[test]
    fn tiny_c_shrinks_weights() {
        let (xs, ys) = separable(3, 40);
        let cfg = SvmConfig { standardize: false, ..Default::default() };
        let strong = train_svm(&xs, &ys, cfg).unwrap().model;
        let weak = train_svm(&xs, &ys, SvmConfig { c: 1e-6, ..cfg }).unwrap().model;
        assert!(dot(&weak.w, &weak.w) < dot(&strong.w, &strong.w));
    }

    #[test]
    fn identical_features_give_chance_accuracy() {
        let xs = vec![vec![1.0, 2.0]; 20];
        let ys: Vec<PlantClass> = (0..20).map(|i| if i % 2 == 0 { Drought } else { Control }).collect();
        let model = train_svm(&xs, &ys, SvmConfig::default()).unwrap().model;
        assert!((accuracy(&model, &xs, &ys) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(matches!(
            train_svm(&[vec![1.0], vec![2.0]], &[Drought, Drought], SvmConfig::default()),
            Err(Error::SingleClass)
        ));
    }

    /// Coordinate-wise exhaustive search: repeatedly scans each of (w1, w2, b) on a grid
    /// that is refined around the current optimum.
    fn exhaustive(xs: &[Vec<f64>], ys: &[PlantClass], c: f64) -> f64 {
        let mut p = [0.0f64; 3];
        let f = |p: &[f64; 3]| svm_objective(&p[..2], p[2], c, xs, ys);
        let mut span = 8.0;
        for _ in 0..40 {
            for axis in 0..3 {
                let mut best = (f(&p), p[axis]);
                for s in -200..=200 {
                    let mut q = p;
                    q[axis] = p[axis] + span * s as f64 / 200.0;
                    let v = f(&q);
                    if v < best.0 {
                        best = (v, q[axis]);
                    }
                }
                p[axis] = best.1;
            }
            span *= 0.7;
        }
        f(&p)
    }

    #[test]
    fn objective_close_to_exhaustive_search() {
        for seed in 0..5 {
            // overlapping classes so the hinge term stays active
            let mut rng = seeded(50 + seed);
            let xs: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
            let ys: Vec<PlantClass> = xs
                .iter()
                .map(|x| if x[0] - 0.5 * x[1] + rng.random_range(-1.0..1.0) > 0.3 { Drought } else { Control })
                .collect();
            let cfg = SvmConfig { standardize: false, ..Default::default() };
            let fit = train_svm(&xs, &ys, cfg).unwrap();
            let oracle = exhaustive(&xs, &ys, cfg.c);
            assert!(fit.final_objective <= oracle * 1.05, "seed {seed}: {} vs {oracle}", fit.final_objective);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let (xs, ys) = separable(4, 30);
        let model = train_svm(&xs, &ys, SvmConfig::default()).unwrap().model;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.svm");
        model.save(&p).unwrap();
        assert_eq!(SvmModel::load(&p).unwrap(), model);
    }

    #[test]
    fn scaler_standardizes_and_floors_quiet_dimensions() {
        let rows = vec![vec![0.0, 5.0, 1.0], vec![2.0, 5.0, 1.0 + 1e-9], vec![4.0, 5.0, 1.0]];
        let s = Scaler::fit(&rows).unwrap();
        let sd0 = (8.0f64 / 3.0).sqrt();
        assert!((s.scale[0] - sd0).abs() < 1e-12);
        let floor = SCALE_FLOOR * (sd0 + 0.0 + (2.0f64 / 9.0).sqrt() * 1e-9) / 3.0;
        assert!((s.scale[1] - floor).abs() < 1e-12 && (s.scale[2] - floor).abs() < 1e-12);
        // without the floor the third coordinate would come out near -0.7
        let t = s.transform(&[2.0, 5.0, 1.0]);
        assert!(t[0] == 0.0 && t[1] == 0.0 && t[2].abs() < 1e-7, "{t:?}");
        let constant = Scaler::fit(&[vec![3.0], vec![3.0]]).unwrap();
        assert_eq!(constant.scale, vec![1.0]);
    }

    #[test]
    fn balanced_blocks_have_equal_energy() {
        let mut rng = seeded(8);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| (0..10).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let plain = Scaler::fit(&rows).unwrap();
        for lead in [2, 8] {
            let s = plain.clone().balance_blocks(lead).unwrap();
            let energy = |r: std::ops::Range<usize>| -> f64 {
                rows.iter().map(|x| s.transform(x)[r.clone()].iter().map(|v| v * v).sum::<f64>()).sum()
            };
            let (a, b) = (energy(0..lead), energy(lead..10));
            assert!((a / b - 1.0).abs() < 0.3, "lead {lead}: {a} vs {b}");
            // the short block is left alone
            let short = if lead == 2 { 0..2 } else { 8..10 };
            assert_eq!(s.scale[short.clone()], plain.scale[short]);
        }
        assert!(plain.clone().balance_blocks(0).is_err());
        assert!(plain.balance_blocks(10).is_err());
        let cfg = SvmConfig { standardize: false, lead_block: Some(2), ..Default::default() };
        let labels = [PlantClass::Control, PlantClass::Drought];
        assert!(train_svm(&rows[..2], &labels, cfg).is_err());
    }
}
