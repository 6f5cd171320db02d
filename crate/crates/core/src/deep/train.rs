use rand::seq::SliceRandom;

use super::network::{NetConfig, NetworkParams};
use super::pointset::PointSet;
use crate::rng::{derive_seed, seeded};
use crate::{par, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub set: PointSet,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    /// Weight of the transform orthogonality regularizer.
    pub lambda: f64,
    pub momentum: f64,
    /// Global gradient-norm clip.
    pub clip: f64,
    /// Weight of the auxiliary head that trains the aggregation layer.
    pub aux_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 50, lr: 0.01, batch: 8, lambda: 0.001, momentum: 0.9, clip: 5.0, aux_weight: 0.5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    /// Mean training loss per epoch.
    pub loss_trace: Vec<f64>,
    /// Training accuracy of the final parameters, in `[0, 1]`.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineTuneOutcome {
    pub params: NetworkParams,
    pub loss_trace: Vec<f64>,
    /// Accuracy before and after, on the validation sets (the training sets when no
    /// validation sets were given).
    pub pre_accuracy: f64,
    pub post_accuracy: f64,
}

/// Fraction of sets whose predicted class equals the label.
pub fn accuracy(params: &NetworkParams, data: &[LabeledSet]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let hits = par::map(data, |d| params.predict(&d.set) == d.label);
    hits.iter().filter(|h| **h).count() as f64 / data.len() as f64
}

fn check_data(params: &NetworkParams, data: &[LabeledSet]) -> Result<()> {
    if let Some(bad) = data.iter().find(|d| d.label >= params.config.classes) {
        return Err(Error::InvalidArgument(format!(
            "label {} does not fit a {}-class network",
            bad.label, params.config.classes
        )));
    }
    let first = data.first().ok_or_else(|| Error::InvalidArgument("no training data".into()))?.label;
    if data.iter().all(|d| d.label == first) {
        return Err(Error::SingleClass);
    }
    Ok(())
}

/// Mini-batch SGD with momentum from `params`. Per-sample gradients may be computed in
/// parallel; they are summed in batch order, so the result does not depend on the
/// number of threads.
fn optimize(mut params: NetworkParams, data: &[LabeledSet], cfg: &TrainConfig) -> Result<(NetworkParams, Vec<f64>)> {
    if !(cfg.lr > 0.0) || cfg.batch == 0 || !(cfg.clip > 0.0) {
        return Err(Error::InvalidArgument("lr, batch and clip must be > 0".into()));
    }
    let mut rng = seeded(derive_seed(cfg.seed, "shuffle"));
    let mut velocity = params.zeros_like();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (bi, batch) in order.chunks(cfg.batch).enumerate() {
            let results = par::map(batch, |&i| params.loss_and_grad(&data[i].set, data[i].label, cfg.lambda, cfg.aux_weight));
            let mut grad = params.zeros_like();
            let mut batch_loss = 0.0;
            for (loss, g, _) in &results {
                batch_loss += loss;
                for (acc, l) in grad.layers_mut().into_iter().zip(g.layers()) {
                    acc.w.iter_mut().zip(&l.w).for_each(|(a, v)| *a += v);
                    acc.b.iter_mut().zip(&l.b).for_each(|(a, v)| *a += v);
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "loss {batch_loss} at epoch {epoch}, batch {bi} (lr {}, lambda {})",
                    cfg.lr, cfg.lambda
                )));
            }
            epoch_loss += batch_loss;
            let scale = 1.0 / batch.len() as f64;
            let norm = grad
                .layers()
                .iter()
                .flat_map(|l| l.w.iter().chain(&l.b))
                .map(|v| (v * scale).powi(2))
                .sum::<f64>()
                .sqrt();
            let clip = if norm > cfg.clip { cfg.clip / norm } else { 1.0 };
            let step = scale * clip;
            for ((p, v), g) in params.layers_mut().into_iter().zip(velocity.layers_mut()).zip(grad.layers()) {
                for ((pw, vw), gw) in p.w.iter_mut().zip(v.w.iter_mut()).zip(&g.w) {
                    *vw = cfg.momentum * *vw - cfg.lr * step * gw;
                    *pw += *vw;
                }
                for ((pb, vb), gb) in p.b.iter_mut().zip(v.b.iter_mut()).zip(&g.b) {
                    *vb = cfg.momentum * *vb - cfg.lr * step * gb;
                    *pb += *vb;
                }
            }
        }
        let mean = epoch_loss / data.len() as f64;
        log::debug!("epoch {epoch}: loss {mean:.5}");
        trace.push(mean);
    }
    Ok((params, trace))
}

/// Trains a fresh network. Deterministic given `cfg.seed`.
pub fn train(config: &NetConfig, data: &[LabeledSet], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let params = NetworkParams::init(config, derive_seed(cfg.seed, "init"))?;
    check_data(&params, data)?;
    let (params, loss_trace) = optimize(params, data, cfg)?;
    let train_accuracy = accuracy(&params, data);
    Ok(TrainOutcome { params, loss_trace, train_accuracy })
}

/// Continues training from `init`; zero epochs return `init` unchanged.
pub fn fine_tune(
    init: &NetworkParams,
    data: &[LabeledSet],
    validation: &[LabeledSet],
    cfg: &TrainConfig,
) -> Result<FineTuneOutcome> {
    init.validate()?;
    check_data(init, data)?;
    if let Some(bad) = validation.iter().find(|d| d.label >= init.config.classes) {
        return Err(Error::InvalidArgument(format!("validation label {} out of range", bad.label)));
    }
    let held_out = if validation.is_empty() { data } else { validation };
    let pre_accuracy = accuracy(init, held_out);
    let (params, loss_trace) = optimize(init.clone(), data, cfg)?;
    let post_accuracy = accuracy(&params, held_out);
    Ok(FineTuneOutcome { params, loss_trace, pre_accuracy, post_accuracy })
}
