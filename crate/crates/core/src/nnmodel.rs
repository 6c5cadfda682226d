//! Small fully-connected prediction head over downsampled raster features
//! and agent kinematics, with backprop and the SGD training engine.
//!
//! The network input is the flattened feature grid followed by the scaled
//! `(speed, accel, yaw_rate)` triple. The classification head emits one
//! logit per set member; the regression head appends `K × N × 2` residuals.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::geometry::{points_on_road, Direction, Frame, PolygonSet, Pose2, Trajectory, DEFAULT_SAMPLE_STEP};
use crate::losses::{
    classification_target, decode_mode, offroad_loss, ordinal_regression_loss, softmax, total_loss, Logits,
    LossVariant, OnRoadMask, RegressionWeights,
};
use crate::math;
use crate::raster::{downsample_features, render, RasterConfig, RenderMode};
use crate::rng::{derive_seed, permutation, seeded};
use crate::scene::{Scene, SceneContext};
use crate::trajset::TrajectorySet;

/// Fixed scaling applied to `(speed, accel, yaw_rate)` before they enter the network.
pub const KINEMATIC_SCALE: [f64; 3] = [0.1, 0.5, 2.0];

const SUBSET_STREAM: u64 = 0x5u64;
const SHUFFLE_STREAM: u64 = 0x6u64;
const INIT_STREAM: u64 = 0x7u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum HeadKind {
    #[default]
    Classification,
    OrdinalRegression,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Classification => "classification",
            HeadKind::OrdinalRegression => "ordinal_regression",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "classification" => Some(HeadKind::Classification),
            "ordinal_regression" => Some(HeadKind::OrdinalRegression),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub feature_grid: (usize, usize),
    pub hidden_sizes: Vec<usize>,
    pub head: HeadKind,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { feature_grid: (25, 25), hidden_sizes: vec![256, 256], head: HeadKind::Classification, seed: 0 }
    }
}

impl ModelConfig {
    pub fn feature_len(&self) -> usize {
        self.feature_grid.0 * self.feature_grid.1 * 3
    }

    pub fn input_dim(&self) -> usize {
        self.feature_len() + 3
    }

    pub fn output_dim(&self, set: &TrajectorySet) -> usize {
        match self.head {
            HeadKind::Classification => set.len(),
            HeadKind::OrdinalRegression => set.len() * (2 * set.n_points() + 1),
        }
    }
}

/// Dense layer, weights row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer { inputs, outputs, weights: vec![0.0; inputs * outputs], biases: vec![0.0; outputs] }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.biases.iter().zip(self.weights.chunks_exact(self.inputs)).map(|(b, row)| b + dot(row, x)));
    }
}

/// Dot product with four fixed partial sums; order is deterministic.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..a.len() {
        s += a[j] * b[j];
    }
    s
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Gradient buffers mirroring [`Layer`] shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(layers: &[Layer]) -> Self {
        Gradients {
            weights: layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    fn clear(&mut self) {
        self.weights.iter_mut().chain(self.biases.iter_mut()).for_each(|v| v.fill(0.0));
    }

    fn scale(&mut self, s: f64) {
        self.weights.iter_mut().chain(self.biases.iter_mut()).flatten().for_each(|v| *v *= s);
    }

    /// Flattened view in layer order, weights before biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

/// Per-layer activations of a forward pass (post-ReLU for hidden layers).
#[derive(Debug, Clone)]
pub struct Trace {
    activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has an input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    set: TrajectorySet,
    layers: Vec<Layer>,
}

impl Model {
    /// Uniform `±1/√fan_in` initialisation from the config seed.
    pub fn new(config: ModelConfig, set: TrajectorySet) -> Result<Self> {
        let mut model = Model::zeros(config, set)?;
        let mut rng = seeded(derive_seed(model.config.seed, INIT_STREAM));
        for layer in &mut model.layers {
            let bound = 1.0 / math::sqrt(layer.inputs as f64);
            for w in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Ok(model)
    }

    /// All weights and biases zero.
    pub fn zeros(config: ModelConfig, set: TrajectorySet) -> Result<Self> {
        if config.hidden_sizes.is_empty() || config.hidden_sizes.contains(&0) {
            return Err(Error::InvalidArgument("model needs at least one non-empty hidden layer"));
        }
        if config.feature_grid.0 == 0 || config.feature_grid.1 == 0 {
            return Err(Error::InvalidArgument("feature grid must be non-empty"));
        }
        let mut dims = vec![config.input_dim()];
        dims.extend_from_slice(&config.hidden_sizes);
        dims.push(config.output_dim(&set));
        let layers = dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Ok(Model { config, set, layers })
    }

    /// Rebuilds a model from stored layers (checkpoint loading).
    pub fn from_layers(config: ModelConfig, set: TrajectorySet, layers: Vec<Layer>) -> Result<Self> {
        let template = Model::zeros(config, set)?;
        if layers.len() != template.layers.len() {
            return Err(Error::LengthMismatch { expected: template.layers.len(), found: layers.len() });
        }
        for (l, t) in layers.iter().zip(&template.layers) {
            if l.inputs != t.inputs || l.outputs != t.outputs {
                return Err(Error::InvalidArgument("layer shape does not match the config"));
            }
            if l.weights.len() != t.weights.len() || l.biases.len() != t.biases.len() {
                return Err(Error::InvalidArgument("layer buffer length does not match its shape"));
            }
            if l.weights.iter().chain(&l.biases).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("layer weights"));
            }
        }
        Ok(Model { config: template.config, set: template.set, layers })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn set(&self) -> &TrajectorySet {
        &self.set
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn head(&self) -> HeadKind {
        self.config.head
    }

    fn input(&self, features: &[f64], kinematics: [f64; 3]) -> Result<Vec<f64>> {
        if features.len() != self.config.feature_len() {
            return Err(Error::LengthMismatch { expected: self.config.feature_len(), found: features.len() });
        }
        let mut x = Vec::with_capacity(self.config.input_dim());
        x.extend_from_slice(features);
        x.extend(kinematics.iter().zip(KINEMATIC_SCALE).map(|(k, s)| k * s));
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model input"));
        }
        Ok(x)
    }

    pub fn forward_trace(&self, features: &[f64], kinematics: [f64; 3]) -> Result<Trace> {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(self.input(features, kinematics)?);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.forward(activations.last().unwrap(), &mut out);
            if i < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            activations.push(out);
        }
        Ok(Trace { activations })
    }

    /// Splits a raw output vector into logits and (for regression) residuals.
    pub fn split_output(&self, raw: &[f64]) -> Logits {
        let k = self.set.len();
        match self.config.head {
            HeadKind::Classification => Logits::classification(raw.to_vec()),
            HeadKind::OrdinalRegression => Logits { values: raw[..k].to_vec(), residuals: Some(raw[k..].to_vec()) },
        }
    }

    pub fn forward(&self, features: &[f64], kinematics: [f64; 3]) -> Result<Logits> {
        let trace = self.forward_trace(features, kinematics)?;
        Ok(self.split_output(trace.output()))
    }

    /// Accumulates parameter gradients of a scalar loss whose gradient with
    /// respect to the raw output is `grad_out` into `grads`.
    pub fn backward_into(&self, trace: &Trace, grad_out: &[f64], grads: &mut Gradients) {
        let mut delta = grad_out.to_vec();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &trace.activations[li];
            let gw = &mut grads.weights[li];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, input, &mut gw[o * layer.inputs..(o + 1) * layer.inputs]);
                }
            }
            axpy(1.0, &delta, &mut grads.biases[li]);
            if li == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, &layer.weights[o * layer.inputs..(o + 1) * layer.inputs], &mut prev);
                }
            }
            // ReLU: gradient passes only where the activation was positive
            for (p, &a) in prev.iter_mut().zip(input.iter()) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    pub fn backward(&self, trace: &Trace, grad_out: &[f64]) -> Gradients {
        let mut g = Gradients::zeros_like(&self.layers);
        self.backward_into(trace, grad_out, &mut g);
        g
    }

    fn sgd_step(&mut self, grads: &Gradients, lr: f64) {
        for (li, layer) in self.layers.iter_mut().enumerate() {
            axpy(-lr, &grads.weights[li], &mut layer.weights);
            axpy(-lr, &grads.biases[li], &mut layer.biases);
        }
    }
}

/// One training instance with everything precomputed from its scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub kinematics: [f64; 3],
    pub on_road: OnRoadMask,
    /// Agent-frame future; absent for map-only data.
    pub ground_truth: Option<Trajectory>,
    pub pose: Pose2,
}

/// Containment of every set member placed at `pose`.
pub fn on_road_mask(set: &TrajectorySet, pose: &Pose2, area: &PolygonSet) -> OnRoadMask {
    let flags: Vec<bool> = set
        .trajectories()
        .iter()
        .map(|t| {
            let global: Vec<_> = t.points().iter().map(|&p| pose.to_global(p)).collect();
            points_on_road(&global, area, DEFAULT_SAMPLE_STEP)
        })
        .collect();
    OnRoadMask::from_bools(&flags)
}

/// Raster features plus scaled-free kinematics for a scene context.
pub fn scene_features(ctx: &SceneContext, grid: (usize, usize), mode: RenderMode, cfg: &RasterConfig) -> Result<(Vec<f64>, [f64; 3])> {
    let img = render(ctx, mode, cfg)?;
    let features = downsample_features(&img, grid)?;
    let k = ctx.target_kinematics()?;
    Ok((features, [k.speed, k.accel, k.yaw_rate]))
}

impl Example {
    /// `MapOnly` renders no agents and drops the ground truth.
    pub fn from_scene(scene: &Scene, set: &TrajectorySet, grid: (usize, usize), mode: RenderMode, cfg: &RasterConfig) -> Result<Self> {
        let ctx = &scene.context;
        let (features, kinematics) = scene_features(ctx, grid, mode, cfg)?;
        let pose = ctx.target_pose()?;
        let on_road = on_road_mask(set, &pose, &ctx.map.drivable);
        let ground_truth = match mode {
            RenderMode::Full => scene.future_in_agent_frame()?,
            RenderMode::MapOnly => None,
        };
        Ok(Example { features, kinematics, on_road, ground_truth, pose })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub lambda_offroad: f64,
    pub loss_variant: LossVariant,
    /// WCE radius, or exclusion radius for Avoid-Nearby (meters).
    pub threshold: f64,
    pub data_fraction: f64,
    pub seed: u64,
    pub regression: RegressionWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            lr0: 1e-3,
            lr_decay: 0.9,
            lambda_offroad: 0.0,
            loss_variant: LossVariant::Ce,
            threshold: 2.0,
            data_fraction: 1.0,
            seed: 0,
            regression: RegressionWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be positive"));
        }
        if !(self.lr0 > 0.0 && self.lr_decay > 0.0) {
            return Err(Error::InvalidArgument("learning rate and decay must be positive"));
        }
        if !(self.lambda_offroad >= 0.0 && self.lambda_offroad.is_finite()) {
            return Err(Error::InvalidArgument("lambda must be non-negative"));
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return Err(Error::InvalidArgument("data fraction must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// `lr0 · decay^epoch`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * math::powi(cfg.lr_decay, epoch as i32)
}

/// Examples used for a data fraction: `⌈fraction · n⌉`, at least one.
pub fn fraction_count(n: usize, fraction: f64) -> usize {
    (math::ceil(fraction * n as f64 - 1e-9) as usize).clamp(1, n)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub ce_term: f64,
    pub offroad_term: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
    pub examples_used: usize,
}

impl TrainLog {
    /// Mean step loss per epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for e in &self.entries {
            if out.len() <= e.epoch {
                out.resize(e.epoch + 1, (0.0, 0));
            }
            out[e.epoch].0 += e.loss;
            out[e.epoch].1 += 1;
        }
        out.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Classification (or ordinal regression) loss plus λ·off-road.
    Supervised,
    /// Off-road loss only; ground truth never read.
    MapOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub loss: f64,
    pub ce_term: f64,
    pub offroad_term: f64,
}

/// Loss of one example and its gradient with respect to the raw output.
pub fn example_loss(model: &Model, out: &[f64], ex: &Example, cfg: &TrainConfig, objective: Objective) -> Result<(LossTerms, Vec<f64>)> {
    let set = model.set();
    let k = set.len();
    if ex.on_road.len() != k {
        return Err(Error::LengthMismatch { expected: k, found: ex.on_road.len() });
    }
    if objective == Objective::MapOnly {
        let off = offroad_loss(&out[..k], &ex.on_road)?;
        let mut grad = vec![0.0; out.len()];
        grad[..k].copy_from_slice(&off.grad);
        return Ok((LossTerms { loss: off.loss, ce_term: 0.0, offroad_term: off.loss }, grad));
    }
    let gt = ex.ground_truth.as_ref().ok_or(Error::Empty("ground truth for supervised training"))?;
    match model.head() {
        HeadKind::Classification => {
            let target = classification_target(cfg.loss_variant, set, gt, cfg.threshold)?;
            let t = total_loss(out, &target, &ex.on_road, cfg.lambda_offroad)?;
            Ok((LossTerms { loss: t.loss, ce_term: t.ce_term, offroad_term: t.offroad_term }, t.grad))
        }
        HeadKind::OrdinalRegression => {
            if cfg.loss_variant != LossVariant::Ce {
                return Err(Error::InvalidArgument("the regression head trains with one-hot anchor targets only"));
            }
            let logits = model.split_output(out);
            let r = ordinal_regression_loss(&logits, set, gt, cfg.regression)?;
            let off = offroad_loss(&logits.values, &ex.on_road)?;
            let mut grad = r.grad_logits;
            axpy(cfg.lambda_offroad, &off.grad, &mut grad);
            grad.extend_from_slice(&r.grad_residuals);
            let terms = LossTerms { loss: r.loss + cfg.lambda_offroad * off.loss, ce_term: r.loss, offroad_term: off.loss };
            Ok((terms, grad))
        }
    }
}

/// Mean loss and mean parameter gradient over `batch`, summed in order.
pub fn batch_gradient(model: &Model, batch: &[&Example], cfg: &TrainConfig, objective: Objective) -> Result<(LossTerms, Gradients)> {
    let mut grads = Gradients::zeros_like(&model.layers);
    let terms = accumulate_batch(model, batch, cfg, objective, &mut grads)?;
    Ok((terms, grads))
}

fn accumulate_batch(model: &Model, batch: &[&Example], cfg: &TrainConfig, objective: Objective, grads: &mut Gradients) -> Result<LossTerms> {
    grads.clear();
    let mut sum = LossTerms::default();
    for ex in batch {
        let trace = model.forward_trace(&ex.features, ex.kinematics)?;
        let (terms, grad_out) = example_loss(model, trace.output(), ex, cfg, objective)?;
        model.backward_into(&trace, &grad_out, grads);
        sum.loss += terms.loss;
        sum.ce_term += terms.ce_term;
        sum.offroad_term += terms.offroad_term;
    }
    let inv = 1.0 / batch.len() as f64;
    grads.scale(inv);
    Ok(LossTerms { loss: sum.loss * inv, ce_term: sum.ce_term * inv, offroad_term: sum.offroad_term * inv })
}

fn fit(mut model: Model, dataset: &[Example], cfg: &TrainConfig, objective: Objective) -> Result<(Model, TrainLog)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    let used = fraction_count(dataset.len(), cfg.data_fraction);
    let mut subset = permutation(dataset.len(), &mut seeded(derive_seed(cfg.seed, SUBSET_STREAM)));
    subset.truncate(used);
    let mut rng = seeded(derive_seed(cfg.seed, SHUFFLE_STREAM));
    let mut grads = Gradients::zeros_like(&model.layers);
    let mut log = TrainLog { entries: Vec::new(), examples_used: used };
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        let order = permutation(used, &mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &dataset[subset[i]]).collect();
            let terms = accumulate_batch(&model, &batch, cfg, objective, &mut grads)?;
            model.sgd_step(&grads, lr);
            log.entries.push(LogEntry {
                epoch,
                step,
                loss: terms.loss,
                ce_term: terms.ce_term,
                offroad_term: terms.offroad_term,
            });
            step += 1;
        }
    }
    Ok((model, log))
}

/// Plain minibatch SGD with the per-epoch decayed learning rate.
pub fn train(model: Model, dataset: &[Example], cfg: &TrainConfig) -> Result<(Model, TrainLog)> {
    fit(model, dataset, cfg, Objective::Supervised)
}

/// Trains on the off-road loss alone; usable with agent-free, label-free data.
pub fn pretrain_map_only(model: Model, map_dataset: &[Example], cfg: &TrainConfig) -> Result<(Model, TrainLog)> {
    fit(model, map_dataset, cfg, Objective::MapOnly)
}

/// One predicted mode in the agent frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedMode {
    pub index: usize,
    pub probability: f64,
    pub trajectory: Trajectory,
}

/// Top-`k` modes by probability (ties by index), transformed to the global
/// frame of `pose`.
pub fn predict_topk_features(model: &Model, features: &[f64], kinematics: [f64; 3], pose: &Pose2, k: usize) -> Result<Vec<RankedMode>> {
    let set = model.set();
    if k == 0 || k > set.len() {
        return Err(Error::InvalidArgument("k must lie in 1..=|K|"));
    }
    let out = model.forward(features, kinematics)?;
    let probs = softmax(&out.values);
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order
        .into_iter()
        .take(k)
        .map(|idx| {
            let local = Trajectory::new(decode_mode(set, &out, idx), set.dt(), Frame::Agent)?;
            let trajectory = crate::geometry::transform_to_frame(&local, pose, Direction::ToGlobal)?;
            Ok(RankedMode { index: idx, probability: probs[idx], trajectory })
        })
        .collect()
}

/// Renders `ctx` with the default raster and returns the top-`k` global-frame modes.
pub fn predict_topk(model: &Model, ctx: &SceneContext, k: usize) -> Result<Vec<RankedMode>> {
    let (features, kin) = scene_features(ctx, model.config().feature_grid, RenderMode::Full, &RasterConfig::default())?;
    predict_topk_features(model, &features, kin, &ctx.target_pose()?, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point2, Polygon};
    use crate::trajset::CoverageMetric;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn straight(offset: f64) -> Trajectory {
        Trajectory::new((1..=3).map(|i| Point2::new(i as f64 * 2.0, offset)).collect(), 0.5, Frame::Agent).unwrap()
    }

    fn set3() -> TrajectorySet {
        TrajectorySet::new(vec![straight(0.0), straight(3.0), straight(-3.0)], 1.0, CoverageMetric::MaxL2, 3).unwrap()
    }

    fn tiny_config(head: HeadKind, hidden: Vec<usize>) -> ModelConfig {
        ModelConfig { feature_grid: (1, 2), hidden_sizes: hidden, head, seed: 3 }
    }

    fn example(rng: &mut ChaCha8Rng, gt_offset: f64) -> Example {
        Example {
            features: (0..6).map(|_| rng.gen_range(0.0..1.0)).collect(),
            kinematics: [rng.gen_range(0.0..10.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.3..0.3)],
            on_road: OnRoadMask::from_bools(&[true, rng.gen_bool(0.5), false]),
            ground_truth: Some(straight(gt_offset)),
            pose: Pose2::default(),
        }
    }

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        let m = Model::zeros(tiny_config(HeadKind::Classification, vec![4]), set3()).unwrap();
        let out = m.forward(&[0.3; 6], [1.0, 0.0, 0.0]).unwrap();
        assert_eq!(out.values, vec![0.0; 3]);
        let modes = predict_topk_features(&m, &[0.3; 6], [1.0, 0.0, 0.0], &Pose2::default(), 3).unwrap();
        assert_eq!(modes.iter().map(|m| m.index).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(modes.iter().all(|m| (m.probability - 1.0 / 3.0).abs() < 1e-15));
        let total: f64 = modes.iter().map(|m| m.probability).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(predict_topk_features(&m, &[0.3; 6], [1.0, 0.0, 0.0], &Pose2::default(), 4).is_err());
    }

    #[test]
    fn identity_like_weights_pass_a_feature_through() {
        let set = TrajectorySet::new(vec![straight(0.0)], 1.0, CoverageMetric::MaxL2, 1).unwrap();
        let cfg = ModelConfig { feature_grid: (1, 1), hidden_sizes: vec![1], head: HeadKind::Classification, seed: 0 };
        let mut m = Model::zeros(cfg, set).unwrap();
        m.layers_mut()[0].weights[0] = 1.0;
        m.layers_mut()[1].weights[0] = 1.0;
        let out = m.forward(&[0.7, 0.0, 0.0], [0.0; 3]).unwrap();
        assert_eq!(out.values, vec![0.7]);
    }

    /// Independent forward pass with explicit index arithmetic.
    fn naive_forward(m: &Model, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let n = m.layers().len();
        for (li, l) in m.layers().iter().enumerate() {
            let mut out = vec![0.0; l.outputs];
            for o in 0..l.outputs {
                let mut s = l.biases[o];
                for i in 0..l.inputs {
                    s += l.weights[o * l.inputs + i] * a[i];
                }
                out[o] = if li + 1 < n && s < 0.0 { 0.0 } else { s };
            }
            a = out;
        }
        a
    }

    #[test]
    fn forward_matches_naive_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Model::new(tiny_config(HeadKind::OrdinalRegression, vec![7, 5]), set3()).unwrap();
        for _ in 0..20 {
            let ex = example(&mut rng, 0.0);
            let mut x = ex.features.clone();
            x.extend(ex.kinematics.iter().zip(KINEMATIC_SCALE).map(|(k, s)| k * s));
            let expected = naive_forward(&m, &x);
            let trace = m.forward_trace(&ex.features, ex.kinematics).unwrap();
            for (a, b) in trace.output().iter().zip(&expected) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
        assert!(m.forward(&[0.0; 5], [0.0; 3]).is_err());
    }

    fn flat_params(m: &Model) -> Vec<f64> {
        let mut out = Vec::new();
        for l in m.layers() {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    fn set_flat_params(m: &mut Model, p: &[f64]) {
        let mut i = 0;
        for l in m.layers_mut() {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[i..i + nw]);
            i += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&p[i..i + nb]);
            i += nb;
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for head in [HeadKind::Classification, HeadKind::OrdinalRegression] {
            for variant in [LossVariant::Ce, LossVariant::WceMean] {
                if head == HeadKind::OrdinalRegression && variant != LossVariant::Ce {
                    continue;
                }
                let mut cfg = tiny_config(head, vec![6, 5]);
                cfg.seed = rng.gen();
                let mut m = Model::new(cfg, set3()).unwrap();
                let off = rng.gen_range(-2.0..2.0);
                let ex = example(&mut rng, off);
                let tc = TrainConfig { lambda_offroad: 0.7, loss_variant: variant, threshold: 4.0, ..TrainConfig::default() };
                let (_, g) = batch_gradient(&m, &[&ex], &tc, Objective::Supervised).unwrap();
                let analytic = g.flatten();
                let p0 = flat_params(&m);
                let h = 1e-5;
                for i in 0..p0.len() {
                    let mut p = p0.clone();
                    p[i] += h;
                    set_flat_params(&mut m, &p);
                    let up = batch_gradient(&m, &[&ex], &tc, Objective::Supervised).unwrap().0.loss;
                    p[i] -= 2.0 * h;
                    set_flat_params(&mut m, &p);
                    let down = batch_gradient(&m, &[&ex], &tc, Objective::Supervised).unwrap().0.loss;
                    set_flat_params(&mut m, &p0);
                    let numeric = (up - down) / (2.0 * h);
                    let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-3);
                    assert!(err <= 1e-5, "param {i}: {} vs {numeric}", analytic[i]);
                }
            }
        }
    }

    #[test]
    fn unmatched_residual_outputs_get_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = Model::new(tiny_config(HeadKind::OrdinalRegression, vec![4]), set3()).unwrap();
        let ex = example(&mut rng, 2.8);
        let trace = m.forward_trace(&ex.features, ex.kinematics).unwrap();
        let (_, grad_out) = example_loss(&m, trace.output(), &ex, &TrainConfig::default(), Objective::Supervised).unwrap();
        // matched anchor is index 1; residual block of anchors 0 and 2 is zero
        assert!(grad_out[3..9].iter().all(|&g| g == 0.0));
        assert!(grad_out[15..21].iter().all(|&g| g == 0.0));
        let g = m.backward(&trace, &grad_out);
        let last = g.weights.last().unwrap();
        let inputs = m.layers().last().unwrap().inputs;
        assert!(last[3 * inputs..9 * inputs].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_gradient_is_mean_of_example_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = Model::new(tiny_config(HeadKind::Classification, vec![5]), set3()).unwrap();
        let exs: Vec<Example> = (0..4).map(|i| example(&mut rng, i as f64 - 1.5)).collect();
        let refs: Vec<&Example> = exs.iter().collect();
        let tc = TrainConfig { lambda_offroad: 1.0, ..TrainConfig::default() };
        let (_, batch) = batch_gradient(&m, &refs, &tc, Objective::Supervised).unwrap();
        let mut mean = vec![0.0; batch.flatten().len()];
        for e in &refs {
            let (_, g) = batch_gradient(&m, &[e], &tc, Objective::Supervised).unwrap();
            for (a, b) in mean.iter_mut().zip(g.flatten()) {
                *a += b / 4.0;
            }
        }
        for (a, b) in batch.flatten().iter().zip(mean) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn learning_rate_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg), 1e-3);
        assert!((lr_at(1, &cfg) - 9e-4).abs() < 1e-18);
        assert!((lr_at(2, &cfg) - 8.1e-4).abs() < 1e-18);
    }

    #[test]
    fn data_fraction_counts() {
        assert_eq!(fraction_count(30, 0.1), 3);
        assert_eq!(fraction_count(1000, 0.1), 100);
        assert_eq!(fraction_count(25, 0.1), 3);
        assert_eq!(fraction_count(7, 1.0), 7);
        assert_eq!(fraction_count(7, 0.01), 1);
    }

    #[test]
    fn single_example_training_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = Model::new(tiny_config(HeadKind::Classification, vec![8]), set3()).unwrap();
        let ex = example(&mut rng, 0.2);
        let cfg = TrainConfig { epochs: 200, batch_size: 1, lr0: 0.5, lr_decay: 1.0, ..TrainConfig::default() };
        let (_, log) = train(m, &[ex], &cfg).unwrap();
        let losses: Vec<f64> = log.entries.iter().map(|e| e.loss).collect();
        assert!(losses[10..].windows(2).all(|w| w[1] <= w[0]));
        assert!(*losses.last().unwrap() <= 0.01);
    }

    #[test]
    fn training_is_deterministic_and_uses_the_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let exs: Vec<Example> = (0..10).map(|i| example(&mut rng, (i % 3) as f64 - 1.0)).collect();
        let cfg = TrainConfig { epochs: 3, batch_size: 3, lr0: 0.1, data_fraction: 0.3, ..TrainConfig::default() };
        let m = Model::new(tiny_config(HeadKind::Classification, vec![5]), set3()).unwrap();
        let (a, la) = train(m.clone(), &exs, &cfg).unwrap();
        let (b, lb) = train(m, &exs, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert_eq!(la.examples_used, 3);
        assert!(train(a, &[], &cfg).is_err());
    }

    #[test]
    fn pretraining_never_reads_ground_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let exs: Vec<Example> = (0..6).map(|i| example(&mut rng, i as f64)).collect();
        let stripped: Vec<Example> = exs.iter().cloned().map(|mut e| {
            e.ground_truth = None;
            e
        }).collect();
        let cfg = TrainConfig { epochs: 4, batch_size: 2, lr0: 0.1, ..TrainConfig::default() };
        let m = Model::new(tiny_config(HeadKind::Classification, vec![5]), set3()).unwrap();
        let (a, _) = pretrain_map_only(m.clone(), &exs, &cfg).unwrap();
        let (b, _) = pretrain_map_only(m.clone(), &stripped, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(train(m, &stripped, &cfg).is_err());
    }

    #[test]
    fn regression_head_with_zero_residuals_returns_anchors() {
        let mut m = Model::zeros(tiny_config(HeadKind::OrdinalRegression, vec![3]), set3()).unwrap();
        // bias the logits so mode 2 wins
        m.layers_mut()[1].biases[2] = 1.0;
        let pose = Pose2::new(10.0, -5.0, 0.5);
        let modes = predict_topk_features(&m, &[0.0; 6], [0.0; 3], &pose, 1).unwrap();
        assert_eq!(modes[0].index, 2);
        let expected: Vec<Point2> = set3().trajectories()[2].points().iter().map(|&p| pose.to_global(p)).collect();
        assert_eq!(modes[0].trajectory.points(), &expected[..]);
    }

    #[test]
    fn on_road_mask_places_members_at_pose() {
        let ring = vec![Point2::new(0.0, -1.0), Point2::new(20.0, -1.0), Point2::new(20.0, 1.0), Point2::new(0.0, 1.0)];
        let area = PolygonSet::new(vec![Polygon::new(ring, vec![]).unwrap()]);
        let mask = on_road_mask(&set3(), &Pose2::default(), &area);
        assert_eq!(mask.values(), &[1.0, 0.0, 0.0]);
        let shifted = on_road_mask(&set3(), &Pose2::new(0.0, -3.0, 0.0), &area);
        assert_eq!(shifted.values(), &[0.0, 1.0, 0.0]);
    }
}
