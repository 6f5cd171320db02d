use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};

use super::pointset::{PointSet, CHANNELS};
use crate::encoding::{encode_fv, GmmModel};
use crate::rng::seeded;
use crate::{par, Error, Result};

/// Layer widths. Every hidden layer uses ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    /// Points per input set.
    pub n_points: usize,
    /// Per-point widths of the input-transform subnetwork before its max-pool.
    pub tnet_point: Vec<usize>,
    /// Dense widths of the input-transform subnetwork between max-pool and the 3×3 output.
    pub tnet_dense: Vec<usize>,
    /// Shared per-point stack ending in the local feature width L.
    pub local: Vec<usize>,
    /// Shared per-point stack after the local features, ending in the global width G.
    pub global: Vec<usize>,
    /// Hidden widths of the classification head.
    pub head: Vec<usize>,
    /// Width L' of the aggregated per-point descriptors.
    pub agg_dim: usize,
    pub classes: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            n_points: 1024,
            tnet_point: vec![32, 64],
            tnet_dense: vec![32],
            local: vec![64, 64, 64],
            global: vec![128, 256],
            head: vec![64],
            agg_dim: 64,
            classes: 2,
        }
    }
}

impl NetConfig {
    pub fn local_dim(&self) -> usize {
        *self.local.last().unwrap_or(&0)
    }

    pub fn global_dim(&self) -> usize {
        *self.global.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [&self.tnet_point, &self.tnet_dense, &self.local, &self.global, &self.head];
        if self.tnet_point.is_empty() || self.local.is_empty() || self.global.is_empty() {
            return Err(Error::InvalidArgument("transform, local and global stacks need >= 1 layer".into()));
        }
        if widths.iter().any(|w| w.contains(&0)) || self.agg_dim == 0 || self.n_points == 0 {
            return Err(Error::InvalidArgument("layer widths and point count must be >= 1".into()));
        }
        if self.classes < 2 {
            return Err(Error::InvalidArgument("network needs >= 2 classes".into()));
        }
        Ok(())
    }
}

/// Fully connected layer `z = W x + b` with `W` of shape `rows × cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn he<R: rand::Rng>(name: String, cols: usize, rows: usize, rng: &mut R) -> Self {
        let n = Normal::new(0.0, (2.0 / cols as f64).sqrt()).expect("finite");
        Self { name, rows, cols, w: (0..rows * cols).map(|_| n.sample(rng)).collect(), b: vec![0.0; rows] }
    }

    pub fn zeros_like(&self) -> Self {
        Self { w: vec![0.0; self.w.len()], b: vec![0.0; self.b.len()], ..self.clone() }
    }

    #[inline]
    fn apply(&self, x: &[f64], out: &mut [f64], relu: bool) {
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &self.w[o * self.cols..(o + 1) * self.cols];
            let mut z = self.b[o];
            for (a, v) in row.iter().zip(x) {
                z += a * v;
            }
            *slot = if relu && !(z > 0.0) { 0.0 } else { z };
        }
    }

    /// Accumulates `dz ⊗ x` into `grad` and, when asked, writes `Wᵀ dz` into `dx`.
    fn backprop(&self, x: &[f64], dz: &[f64], grad: &mut Dense, mut dx: Option<&mut [f64]>) {
        for (o, &d) in dz.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad.b[o] += d;
            let gw = &mut grad.w[o * self.cols..(o + 1) * self.cols];
            gw.iter_mut().zip(x).for_each(|(g, v)| *g += d * v);
            if let Some(dx) = dx.as_deref_mut() {
                let row = &self.w[o * self.cols..(o + 1) * self.cols];
                dx.iter_mut().zip(row).for_each(|(g, w)| *g += d * w);
            }
        }
    }
}

/// All trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub config: NetConfig,
    pub tnet_point: Vec<Dense>,
    /// Ends in the 9-output layer emitting the row-major 3×3 transform.
    pub tnet_dense: Vec<Dense>,
    pub local: Vec<Dense>,
    pub global: Vec<Dense>,
    /// Ends in the `classes`-output logit layer.
    pub head: Vec<Dense>,
    /// `[local ‖ global] → L'`.
    pub agg: Dense,
    /// Logits from the mean of the aggregated per-point descriptors.
    pub aux: Dense,
}

fn stack<R: rand::Rng>(prefix: &str, input: usize, widths: &[usize], rng: &mut R) -> Vec<Dense> {
    let mut prev = input;
    widths
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let d = Dense::he(format!("{prefix}.{i}"), prev, w, rng);
            prev = w;
            d
        })
        .collect()
}

const IDENTITY: [f64; 9] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];

impl NetworkParams {
    /// He-initialized weights; the transform output layer starts at zero weights with
    /// an identity bias so the initial transform is exactly `I`.
    pub fn init(config: &NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed);
        let tnet_point = stack("tnet.point", 3, &config.tnet_point, &mut rng);
        let mut dense_widths = config.tnet_dense.clone();
        dense_widths.push(9);
        let mut tnet_dense = stack("tnet.dense", *config.tnet_point.last().expect("validated"), &dense_widths, &mut rng);
        let last = tnet_dense.last_mut().expect("non-empty");
        last.w.iter_mut().for_each(|w| *w = 0.0);
        last.b = IDENTITY.to_vec();
        let local = stack("local", CHANNELS, &config.local, &mut rng);
        let global = stack("global", config.local_dim(), &config.global, &mut rng);
        let mut head_widths = config.head.clone();
        head_widths.push(config.classes);
        let head = stack("head", config.global_dim(), &head_widths, &mut rng);
        let agg = Dense::he("agg".into(), config.local_dim() + config.global_dim(), config.agg_dim, &mut rng);
        let aux = Dense::he("aux".into(), config.agg_dim, config.classes, &mut rng);
        Ok(Self { config: config.clone(), tnet_point, tnet_dense, local, global, head, agg, aux })
    }

    /// Copy with freshly initialized output layers for `classes` classes.
    pub fn with_classes(&self, classes: usize, seed: u64) -> Result<Self> {
        let mut config = self.config.clone();
        config.classes = classes;
        let fresh = Self::init(&config, seed)?;
        let mut out = self.clone();
        out.config = config;
        *out.head.last_mut().expect("non-empty") = fresh.head.last().expect("non-empty").clone();
        out.aux = fresh.aux;
        Ok(out)
    }

    pub fn layers(&self) -> Vec<&Dense> {
        let mut v: Vec<&Dense> = Vec::new();
        for group in [&self.tnet_point, &self.tnet_dense, &self.local, &self.global, &self.head] {
            v.extend(group.iter());
        }
        v.push(&self.agg);
        v.push(&self.aux);
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Dense> {
        let mut v: Vec<&mut Dense> = Vec::new();
        for group in [&mut self.tnet_point, &mut self.tnet_dense, &mut self.local, &mut self.global, &mut self.head] {
            v.extend(group.iter_mut());
        }
        v.push(&mut self.agg);
        v.push(&mut self.aux);
        v
    }

    pub fn zeros_like(&self) -> Self {
        let z = |g: &[Dense]| g.iter().map(Dense::zeros_like).collect::<Vec<_>>();
        Self {
            config: self.config.clone(),
            tnet_point: z(&self.tnet_point),
            tnet_dense: z(&self.tnet_dense),
            local: z(&self.local),
            global: z(&self.global),
            head: z(&self.head),
            agg: self.agg.zeros_like(),
            aux: self.aux.zeros_like(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Checks that consecutive layer shapes chain and every value is finite.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let chain = |group: &[Dense], input: usize| -> Result<usize> {
            let mut prev = input;
            for l in group {
                if l.cols != prev || l.w.len() != l.rows * l.cols || l.b.len() != l.rows {
                    return Err(Error::InvalidArgument(format!("layer {} has inconsistent shape", l.name)));
                }
                prev = l.rows;
            }
            Ok(prev)
        };
        let c = &self.config;
        let t = chain(&self.tnet_point, 3)?;
        let ok = chain(&self.tnet_dense, t)? == 9
            && chain(&self.local, CHANNELS)? == c.local_dim()
            && chain(&self.global, c.local_dim())? == c.global_dim()
            && chain(&self.head, c.global_dim())? == c.classes
            && chain(std::slice::from_ref(&self.agg), c.local_dim() + c.global_dim())? == c.agg_dim
            && chain(std::slice::from_ref(&self.aux), c.agg_dim)? == c.classes;
        if !ok {
            return Err(Error::InvalidArgument("layer shapes do not match the network config".into()));
        }
        if self.layers().iter().any(|l| l.w.iter().chain(&l.b).any(|v| !v.is_finite())) {
            return Err(Error::InvalidArgument("network parameters must be finite".into()));
        }
        Ok(())
    }

    /// Same layer names and shapes.
    pub fn same_shape(&self, other: &Self) -> bool {
        let (a, b) = (self.layers(), other.layers());
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.name == y.name && x.rows == y.rows && x.cols == y.cols)
    }
}

/// Applies a stack of ReLU layers to every row of `input`; returns every layer's output.
fn point_stack(layers: &[Dense], input: &[f64], in_dim: usize) -> Vec<Vec<f64>> {
    let n = input.len() / in_dim;
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    for l in layers {
        let prev: &[f64] = acts.last().map_or(input, |a| a.as_slice());
        let mut out = vec![0.0; n * l.rows];
        par::for_each_row_mut(&mut out, l.rows, |p, row| l.apply(&prev[p * l.cols..(p + 1) * l.cols], row, true));
        acts.push(out);
    }
    acts
}

/// Channel-wise maximum over rows and the first row attaining it.
fn max_pool(acts: &[f64], width: usize) -> (Vec<f64>, Vec<usize>) {
    let mut vals = vec![f64::NEG_INFINITY; width];
    let mut arg = vec![0usize; width];
    for (p, row) in acts.chunks(width).enumerate() {
        for c in 0..width {
            if row[c] > vals[c] {
                vals[c] = row[c];
                arg[c] = p;
            }
        }
    }
    (vals, arg)
}

fn dense_stack(layers: &[Dense], x: &[f64], relu_last: bool) -> Vec<Vec<f64>> {
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    for (i, l) in layers.iter().enumerate() {
        let prev: &[f64] = acts.last().map_or(x, |a| a.as_slice());
        let mut out = vec![0.0; l.rows];
        l.apply(prev, &mut out, relu_last || i + 1 < layers.len());
        acts.push(out);
    }
    acts
}

/// Backward through a dense stack whose last layer is linear; returns the input gradient.
fn dense_stack_backward(layers: &[Dense], grads: &mut [Dense], x: &[f64], acts: &[Vec<f64>], d_out: Vec<f64>) -> Vec<f64> {
    let mut d = d_out;
    for k in (0..layers.len()).rev() {
        let l = &layers[k];
        if k + 1 < layers.len() {
            d.iter_mut().zip(&acts[k]).for_each(|(g, a)| if !(*a > 0.0) { *g = 0.0 });
        }
        let input = if k == 0 { x } else { &acts[k - 1] };
        let mut dx = vec![0.0; l.cols];
        l.backprop(input, &d, &mut grads[k], Some(&mut dx));
        d = dx;
    }
    d
}

/// Backward for row `p` through a per-point ReLU stack.
fn point_backward(
    layers: &[Dense],
    grads: &mut [Dense],
    input: &[f64],
    in_dim: usize,
    acts: &[Vec<f64>],
    p: usize,
    d_top: Vec<f64>,
    need_input_grad: bool,
) -> Vec<f64> {
    let mut d = d_top;
    for k in (0..layers.len()).rev() {
        let l = &layers[k];
        d.iter_mut()
            .zip(&acts[k][p * l.rows..(p + 1) * l.rows])
            .for_each(|(g, a)| if !(*a > 0.0) { *g = 0.0 });
        let x = if k == 0 { &input[p * in_dim..(p + 1) * in_dim] } else { &acts[k - 1][p * l.cols..(p + 1) * l.cols] };
        let mut dx = vec![0.0; l.cols];
        let want = k > 0 || need_input_grad;
        l.backprop(x, &d, &mut grads[k], if want { Some(&mut dx) } else { None });
        d = dx;
    }
    d
}

/// `‖T Tᵀ − I‖²_F` for a row-major 3×3 `T`.
pub fn orthogonality_penalty(t: &[f64; 9]) -> f64 {
    let a = gram_minus_identity(t);
    a.iter().map(|v| v * v).sum()
}

fn gram_minus_identity(t: &[f64; 9]) -> [f64; 9] {
    let mut a = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            a[i * 3 + j] = (0..3).map(|k| t[i * 3 + k] * t[j * 3 + k]).sum::<f64>() - if i == j { 1.0 } else { 0.0 };
        }
    }
    a
}

/// Softmax cross-entropy and its gradient with respect to the logits.
fn softmax_ce(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = -(logits[label] - max - sum.ln());
    let grad = exps.iter().enumerate().map(|(k, e)| e / sum - if k == label { 1.0 } else { 0.0 }).collect();
    (loss, grad)
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

/// Outputs of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalOutput {
    pub global: Vec<f64>,
    /// `n × L` per-point local features.
    pub local: Vec<f64>,
    pub transform: [f64; 9],
}

struct Trace {
    xyz: Vec<f64>,
    tnet_acts: Vec<Vec<f64>>,
    tnet_pool: Vec<f64>,
    tnet_arg: Vec<usize>,
    tnet_dense_acts: Vec<Vec<f64>>,
    t: [f64; 9],
    x0: Vec<f64>,
    local_acts: Vec<Vec<f64>>,
    global_acts: Vec<Vec<f64>>,
    global: Vec<f64>,
    global_arg: Vec<usize>,
    head_acts: Vec<Vec<f64>>,
    agg: Vec<f64>,
    agg_mean: Vec<f64>,
    aux_logits: Vec<f64>,
}

impl NetworkParams {
    fn transform_of(&self, xyz: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>, Vec<usize>, Vec<Vec<f64>>, [f64; 9]) {
        let tnet_acts = point_stack(&self.tnet_point, xyz, 3);
        let width = self.tnet_point.last().expect("non-empty").rows;
        let (pool, arg) = max_pool(tnet_acts.last().expect("non-empty"), width);
        let dense = dense_stack(&self.tnet_dense, &pool, false);
        let mut t = [0.0; 9];
        t.copy_from_slice(dense.last().expect("non-empty"));
        (tnet_acts, pool, arg, dense, t)
    }

    fn apply_transform(set: &PointSet, t: &[f64; 9]) -> Vec<f64> {
        let mut x0 = set.data.clone();
        for row in x0.chunks_mut(CHANNELS) {
            let p = [row[0], row[1], row[2]];
            for i in 0..3 {
                row[i] = t[i * 3] * p[0] + t[i * 3 + 1] * p[1] + t[i * 3 + 2] * p[2];
            }
        }
        x0
    }

    fn trace(&self, set: &PointSet, with_agg: bool) -> Trace {
        let xyz: Vec<f64> = set.data.chunks(CHANNELS).flat_map(|r| r[..3].iter().copied()).collect();
        let (tnet_acts, tnet_pool, tnet_arg, tnet_dense_acts, t) = self.transform_of(&xyz);
        let x0 = Self::apply_transform(set, &t);
        let local_acts = point_stack(&self.local, &x0, CHANNELS);
        let global_acts = point_stack(&self.global, local_acts.last().expect("non-empty"), self.config.local_dim());
        let (global, global_arg) = max_pool(global_acts.last().expect("non-empty"), self.config.global_dim());
        let head_acts = dense_stack(&self.head, &global, false);
        let (agg, agg_mean, aux_logits) = if with_agg {
            let agg = self.aggregate(local_acts.last().expect("non-empty"), &global);
            let n = set.len() as f64;
            let mut mean = vec![0.0; self.config.agg_dim];
            for row in agg.chunks(self.config.agg_dim) {
                mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / n);
            }
            let mut logits = vec![0.0; self.config.classes];
            self.aux.apply(&mean, &mut logits, false);
            (agg, mean, logits)
        } else {
            (Vec::new(), Vec::new(), Vec::new())
        };
        Trace {
            xyz,
            tnet_acts,
            tnet_pool,
            tnet_arg,
            tnet_dense_acts,
            t,
            x0,
            local_acts,
            global_acts,
            global,
            global_arg,
            head_acts,
            agg,
            agg_mean,
            aux_logits,
        }
    }

    /// Per-point `ReLU(W_L·l + W_G·g + b)`; the global half is evaluated once.
    fn aggregate(&self, local: &[f64], global: &[f64]) -> Vec<f64> {
        let (l_dim, a) = (self.config.local_dim(), &self.agg);
        let shared: Vec<f64> = (0..a.rows)
            .map(|o| {
                let row = &a.w[o * a.cols + l_dim..(o + 1) * a.cols];
                a.b[o] + row.iter().zip(global).map(|(w, g)| w * g).sum::<f64>()
            })
            .collect();
        let mut out = vec![0.0; local.len() / l_dim * a.rows];
        par::for_each_row_mut(&mut out, a.rows, |p, row| {
            let x = &local[p * l_dim..(p + 1) * l_dim];
            for (o, slot) in row.iter_mut().enumerate() {
                let w = &a.w[o * a.cols..o * a.cols + l_dim];
                let mut z = shared[o];
                for (wv, xv) in w.iter().zip(x) {
                    z += wv * xv;
                }
                *slot = if z > 0.0 { z } else { 0.0 };
            }
        });
        out
    }

    /// The predicted 3×3 transform and the point set with it applied to xyz.
    pub fn input_transform(&self, set: &PointSet) -> (PointSet, [f64; 9]) {
        let xyz: Vec<f64> = set.data.chunks(CHANNELS).flat_map(|r| r[..3].iter().copied()).collect();
        let t = self.transform_of(&xyz).4;
        (PointSet { data: Self::apply_transform(set, &t) }, t)
    }

    pub fn forward_global(&self, set: &PointSet) -> GlobalOutput {
        let tr = self.trace(set, false);
        GlobalOutput { global: tr.global, local: tr.local_acts.last().cloned().unwrap_or_default(), transform: tr.t }
    }

    /// Global feature and the `n × L'` aggregated per-point descriptors.
    pub fn local_descriptors(&self, set: &PointSet) -> (Vec<f64>, Vec<f64>) {
        let tr = self.trace(set, true);
        (tr.global, tr.agg)
    }

    /// `[global ‖ Fisher Vector of the aggregated per-point descriptors]`.
    pub fn forward_aggregated(&self, set: &PointSet, gmm: &GmmModel) -> Result<Vec<f64>> {
        if gmm.dim != self.config.agg_dim {
            return Err(Error::DimensionMismatch { expected: self.config.agg_dim, actual: gmm.dim });
        }
        let (mut global, locals) = self.local_descriptors(set);
        global.extend(encode_fv(gmm, &locals, self.config.agg_dim)?);
        Ok(global)
    }

    pub fn logits(&self, set: &PointSet) -> Vec<f64> {
        self.trace(set, false).head_acts.pop().unwrap_or_default()
    }

    pub fn predict(&self, set: &PointSet) -> usize {
        argmax(&self.logits(set))
    }

    /// Training loss: cross-entropy of the head, `aux_weight` times the cross-entropy of
    /// the auxiliary head, plus `lambda·‖TTᵀ − I‖²`.
    pub fn loss(&self, set: &PointSet, label: usize, lambda: f64, aux_weight: f64) -> f64 {
        let tr = self.trace(set, true);
        let ce = softmax_ce(tr.head_acts.last().expect("non-empty"), label).0;
        let aux = softmax_ce(&tr.aux_logits, label).0;
        ce + aux_weight * aux + lambda * orthogonality_penalty(&tr.t)
    }

    /// Loss, gradient and whether the head classified the sample correctly.
    pub fn loss_and_grad(&self, set: &PointSet, label: usize, lambda: f64, aux_weight: f64) -> (f64, NetworkParams, bool) {
        let cfg = &self.config;
        let n = set.len();
        let (l_dim, g_dim) = (cfg.local_dim(), cfg.global_dim());
        let tr = self.trace(set, true);
        let mut g = self.zeros_like();

        let logits = tr.head_acts.last().expect("non-empty");
        let correct = argmax(logits) == label;
        let (ce, d_logits) = softmax_ce(logits, label);
        let mut d_global = dense_stack_backward(&self.head, &mut g.head, &tr.global, &tr.head_acts, d_logits);

        let (ce_aux, d_aux) = softmax_ce(&tr.aux_logits, label);
        let d_aux: Vec<f64> = d_aux.iter().map(|v| v * aux_weight).collect();
        let mut d_mean = vec![0.0; cfg.agg_dim];
        self.aux.backprop(&tr.agg_mean, &d_aux, &mut g.aux, Some(&mut d_mean));
        let local_out = tr.local_acts.last().expect("non-empty");
        let a = &self.agg;
        let mut d_local = vec![0.0; n * l_dim];
        let mut dz_sum = vec![0.0; a.rows];
        for p in 0..n {
            let act = &tr.agg[p * a.rows..(p + 1) * a.rows];
            let x = &local_out[p * l_dim..(p + 1) * l_dim];
            let dl = &mut d_local[p * l_dim..(p + 1) * l_dim];
            for o in 0..a.rows {
                if !(act[o] > 0.0) {
                    continue;
                }
                let dz = d_mean[o] / n as f64;
                dz_sum[o] += dz;
                let row = &a.w[o * a.cols..o * a.cols + l_dim];
                let grow = &mut g.agg.w[o * a.cols..o * a.cols + l_dim];
                for j in 0..l_dim {
                    grow[j] += dz * x[j];
                    dl[j] += dz * row[j];
                }
            }
        }
        for o in 0..a.rows {
            g.agg.b[o] += dz_sum[o];
            for j in 0..g_dim {
                g.agg.w[o * a.cols + l_dim + j] += dz_sum[o] * tr.global[j];
                d_global[j] += dz_sum[o] * a.w[o * a.cols + l_dim + j];
            }
        }

        let mut active: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (c, &p) in tr.global_arg.iter().enumerate() {
            active.entry(p).or_insert_with(|| vec![0.0; g_dim])[c] += d_global[c];
        }
        for (p, d_top) in active {
            let dl = point_backward(&self.global, &mut g.global, local_out, l_dim, &tr.global_acts, p, d_top, true);
            d_local[p * l_dim..(p + 1) * l_dim].iter_mut().zip(&dl).for_each(|(a, b)| *a += b);
        }

        let mut d_t = [0.0; 9];
        for p in 0..n {
            let d_top = d_local[p * l_dim..(p + 1) * l_dim].to_vec();
            if d_top.iter().all(|v| *v == 0.0) {
                continue;
            }
            let dx = point_backward(&self.local, &mut g.local, &tr.x0, CHANNELS, &tr.local_acts, p, d_top, true);
            let xyz = &tr.xyz[p * 3..p * 3 + 3];
            for i in 0..3 {
                for j in 0..3 {
                    d_t[i * 3 + j] += dx[i] * xyz[j];
                }
            }
        }

        let penalty = orthogonality_penalty(&tr.t);
        let gm = gram_minus_identity(&tr.t);
        for i in 0..3 {
            for j in 0..3 {
                d_t[i * 3 + j] += 4.0 * lambda * (0..3).map(|k| gm[i * 3 + k] * tr.t[k * 3 + j]).sum::<f64>();
            }
        }
        let d_pool = dense_stack_backward(&self.tnet_dense, &mut g.tnet_dense, &tr.tnet_pool, &tr.tnet_dense_acts, d_t.to_vec());
        let t_width = d_pool.len();
        let mut active: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (c, &p) in tr.tnet_arg.iter().enumerate() {
            active.entry(p).or_insert_with(|| vec![0.0; t_width])[c] += d_pool[c];
        }
        for (p, d_top) in active {
            point_backward(&self.tnet_point, &mut g.tnet_point, &tr.xyz, 3, &tr.tnet_acts, p, d_top, false);
        }

        (ce + aux_weight * ce_aux + lambda * penalty, g, correct)
    }
}
