use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::{accuracy_percent, train_svm, EvalRow, SvmConfig, SvmModel};
use crate::rng::seeded;
use crate::synth::PlantClass;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split '{other}'"))),
        }
    }
}

/// One plant's encoded feature vector, tagged with the split it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedFeature {
    pub plant_id: usize,
    pub split: Split,
    pub label: PlantClass,
    pub values: Vec<f64>,
    /// Description plus quantization time spent on this plant.
    pub seconds: f64,
}

/// Per-class proportional split into `n_train` training plants; the rest are test plants.
/// Returns one split per input plant, in input order.
pub fn stratified_split(labels: &[PlantClass], n_train: usize, seed: u64) -> Result<Vec<Split>> {
    if n_train == 0 || n_train >= labels.len() {
        return Err(Error::InvalidArgument(format!(
            "training size {n_train} must be in 1..{}",
            labels.len()
        )));
    }
    let mut rng = seeded(seed);
    let mut out = vec![Split::Test; labels.len()];
    let total = labels.len() as f64;
    let mut assigned = 0;
    for (i, class) in [PlantClass::Control, PlantClass::Drought].into_iter().enumerate() {
        let mut ids: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] == class).collect();
        let take = if i == 1 {
            n_train - assigned
        } else {
            ((n_train as f64 * ids.len() as f64 / total).round() as usize).min(n_train)
        };
        if take > ids.len() {
            return Err(Error::InvalidArgument(format!("not enough {class} plants for the split")));
        }
        ids.shuffle(&mut rng);
        for &j in &ids[..take] {
            out[j] = Split::Train;
        }
        assigned += take;
    }
    Ok(out)
}

/// Trains an SVM on the training rows and scores the test rows.
///
/// Fails when a plant appears in both splits, when either split is empty or when the
/// SVM cannot be trained. With `timing` the row reports the mean per-test-model
/// feature time plus the measured classification time.
pub fn evaluate_row(
    method: &str,
    encoding: &str,
    features: &[TaggedFeature],
    svm: SvmConfig,
    timing: bool,
) -> EvalRow {
    let trained = check_splits(features).and_then(|(train, _)| {
        let xs: Vec<Vec<f64>> = train.iter().map(|f| f.values.clone()).collect();
        let ys: Vec<PlantClass> = train.iter().map(|f| f.label).collect();
        train_svm(&xs, &ys, svm)
    });
    let mut row = match trained {
        Ok(fit) => score_row(method, encoding, &fit.model, features),
        Err(e) => failed(method, encoding, e),
    };
    if !timing {
        row.seconds = None;
    }
    row
}

/// Scores an already trained model on the test rows of `features`.
///
/// The training rows are only used to check that no plant is in both splits.
pub fn score_row(method: &str, encoding: &str, model: &SvmModel, features: &[TaggedFeature]) -> EvalRow {
    match score(model, features) {
        Ok((accuracy, seconds, confusion)) => EvalRow {
            method: method.into(),
            encoding: encoding.into(),
            accuracy: Some(accuracy),
            seconds: Some(seconds),
            confusion,
            error: None,
        },
        Err(e) => failed(method, encoding, e),
    }
}

fn failed(method: &str, encoding: &str, e: Error) -> EvalRow {
    log::warn!("{method} ({encoding}) failed: {e}");
    EvalRow::failed(method, encoding, e)
}

type Partition<'a> = (Vec<&'a TaggedFeature>, Vec<&'a TaggedFeature>);

fn check_splits(features: &[TaggedFeature]) -> Result<Partition<'_>> {
    let train: Vec<&TaggedFeature> = features.iter().filter(|f| f.split == Split::Train).collect();
    let test: Vec<&TaggedFeature> = features.iter().filter(|f| f.split == Split::Test).collect();
    let train_ids: BTreeSet<usize> = train.iter().map(|f| f.plant_id).collect();
    if let Some(leak) = test.iter().find(|f| train_ids.contains(&f.plant_id)) {
        return Err(Error::InvalidArgument(format!("plant {} is in both splits", leak.plant_id)));
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument("both splits need at least one plant".into()));
    }
    Ok((train, test))
}

type Scored = (f64, f64, [[usize; 2]; 2]);

fn score(model: &SvmModel, features: &[TaggedFeature]) -> Result<Scored> {
    let (_, test) = check_splits(features)?;
    let mut confusion = [[0usize; 2]; 2];
    let mut seconds = 0.0;
    for f in &test {
        let start = Instant::now();
        let predicted = model.predict(&f.values)?.label;
        seconds += f.seconds + start.elapsed().as_secs_f64();
        confusion[f.label as usize][predicted as usize] += 1;
    }
    let correct = confusion[0][0] + confusion[1][1];
    Ok((accuracy_percent(correct, test.len()), seconds / test.len() as f64, confusion))
}
