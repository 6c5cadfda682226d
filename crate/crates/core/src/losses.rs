//! Training losses with analytic gradients with respect to the network
//! outputs: cross-entropy against arbitrary target distributions, the
//! weighted-target builders, the per-mode off-road BCE, their weighted sum,
//! and the anchor-classification-plus-residual loss of the regression head.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{Point2, Trajectory};
use crate::math;
use crate::trajset::{closest_match, distances_to, CoverageMetric, TrajectorySet};

/// Distances below this are clamped before inversion.
pub const DISTANCE_CLAMP: f64 = 1e-6;
/// Lower clamp for probabilities inside logarithms.
pub const LOG_CLAMP: f64 = 1e-12;
/// Tolerance on `Σ w = 1` for target distributions.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Raw network outputs. The regression head adds `K × N × 2` residuals,
/// laid out mode-major, then waypoint, then (x, y).
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub values: Vec<f64>,
    pub residuals: Option<Vec<f64>>,
}

impl Logits {
    pub fn classification(values: Vec<f64>) -> Self {
        Logits { values, residuals: None }
    }

    /// Residual waypoints of mode `k`, or `None` for classification outputs.
    pub fn mode_residuals(&self, k: usize, n_points: usize) -> Option<&[f64]> {
        self.residuals.as_deref().map(|r| &r[k * n_points * 2..(k + 1) * n_points * 2])
    }
}

/// Per-mode drivable-area containment, entries in {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct OnRoadMask(Vec<f64>);

impl OnRoadMask {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument("on-road mask entries must be 0 or 1"));
        }
        Ok(OnRoadMask(values))
    }

    pub fn from_bools(values: &[bool]) -> Self {
        OnRoadMask(values.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Non-negative vector summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDistribution(Vec<f64>);

impl TargetDistribution {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("target distribution"));
        }
        if values.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("target entries must be finite and non-negative"));
        }
        let sum: f64 = values.iter().sum();
        if math::abs(sum - 1.0) > NORMALIZATION_TOLERANCE {
            return Err(Error::NotNormalized { sum });
        }
        Ok(TargetDistribution(values))
    }

    pub fn one_hot(index: usize, len: usize) -> Self {
        let mut v = vec![0.0; len];
        v[index] = 1.0;
        TargetDistribution(v)
    }

    fn normalized(raw: Vec<f64>) -> Self {
        let sum: f64 = raw.iter().sum();
        TargetDistribution(raw.into_iter().map(|v| v / sum).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

fn check_finite(x: &[f64], what: &'static str) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    Ok(())
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::LengthMismatch { expected, found });
    }
    Ok(())
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + math::ln(x.iter().map(|&v| math::exp(v - m)).sum::<f64>())
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&v| math::exp(v - m)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `−Σ w_k log softmax(x)_k`, gradient `softmax(x) − w`.
pub fn ce_loss(logits: &[f64], target: &TargetDistribution) -> Result<LossGrad> {
    check_len(target.len(), logits.len())?;
    check_finite(logits, "logits")?;
    let lse = log_sum_exp(logits);
    let loss = logits
        .iter()
        .zip(target.values())
        .filter(|(_, &w)| w > 0.0)
        .map(|(&x, &w)| -w * (x - lse))
        .sum();
    let grad = softmax(logits).into_iter().zip(target.values()).map(|(p, &w)| p - w).collect();
    Ok(LossGrad { loss, grad })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WceTarget {
    pub target: TargetDistribution,
    /// Set when nothing lay within the threshold and the target fell back
    /// to one-hot on the nearest mode.
    pub fallback: bool,
}

fn check_distances(d: &[f64]) -> Result<()> {
    if d.is_empty() {
        return Err(Error::Empty("distances"));
    }
    if d.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("distances must be finite and non-negative"));
    }
    Ok(())
}

fn argmin(d: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in d.iter().enumerate() {
        if v < d[best] {
            best = i;
        }
    }
    best
}

/// Inverse-distance target over modes within `threshold`, normalized to one.
pub fn wce_target(distances: &[f64], threshold: f64) -> Result<WceTarget> {
    check_distances(distances)?;
    if !(threshold >= 0.0) {
        return Err(Error::InvalidArgument("threshold must be non-negative"));
    }
    let raw: Vec<f64> = distances
        .iter()
        .map(|&d| if d <= threshold { 1.0 / d.max(DISTANCE_CLAMP) } else { 0.0 })
        .collect();
    if raw.iter().all(|&v| v == 0.0) {
        return Ok(WceTarget { target: TargetDistribution::one_hot(argmin(distances), distances.len()), fallback: true });
    }
    Ok(WceTarget { target: TargetDistribution::normalized(raw), fallback: false })
}

/// Weight 1 on the closest mode, 0 on every other mode within `exclusion`,
/// `1/|K|` elsewhere; normalized to one.
pub fn avoid_nearby_target(distances: &[f64], exclusion: f64) -> Result<TargetDistribution> {
    check_distances(distances)?;
    let k = distances.len();
    let closest = argmin(distances);
    let raw = distances
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            if i == closest {
                1.0
            } else if d <= exclusion {
                0.0
            } else {
                1.0 / k as f64
            }
        })
        .collect();
    Ok(TargetDistribution::normalized(raw))
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + math::ln_1p(math::exp(-math::abs(z)))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + math::exp(-x))
    } else {
        let e = math::exp(x);
        e / (1.0 + e)
    }
}

/// Per-mode binary cross-entropy between `σ(x_k)` and the on-road mask,
/// summed over modes. Gradient `σ(x_k) − r_k`.
pub fn offroad_loss(logits: &[f64], mask: &OnRoadMask) -> Result<LossGrad> {
    check_len(mask.len(), logits.len())?;
    check_finite(logits, "logits")?;
    let floor = math::ln(LOG_CLAMP);
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&x, &r) in logits.iter().zip(mask.values()) {
        let log_p = (-softplus(-x)).max(floor);
        let log_q = (-softplus(x)).max(floor);
        loss -= r * log_p + (1.0 - r) * log_q;
        grad.push(sigmoid(x) - r);
    }
    Ok(LossGrad { loss, grad })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub loss: f64,
    pub ce_term: f64,
    pub offroad_term: f64,
    pub grad: Vec<f64>,
}

/// Classification loss plus `lambda` times the off-road loss.
pub fn total_loss(logits: &[f64], target: &TargetDistribution, mask: &OnRoadMask, lambda: f64) -> Result<TotalLoss> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument("lambda must be non-negative"));
    }
    let ce = ce_loss(logits, target)?;
    let off = offroad_loss(logits, mask)?;
    let grad = ce.grad.iter().zip(&off.grad).map(|(g, o)| g + lambda * o).collect();
    Ok(TotalLoss { loss: ce.loss + lambda * off.loss, ce_term: ce.loss, offroad_term: off.loss, grad })
}

/// Huber-style smooth ℓ1 with transition at `beta`.
pub fn smooth_l1(x: f64, beta: f64) -> f64 {
    let a = math::abs(x);
    if a < beta {
        0.5 * x * x / beta
    } else {
        a - 0.5 * beta
    }
}

pub fn smooth_l1_grad(x: f64, beta: f64) -> f64 {
    if math::abs(x) < beta {
        x / beta
    } else if x > 0.0 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionLoss {
    pub loss: f64,
    pub ce_term: f64,
    pub regression_term: f64,
    /// Anchor the ground truth was assigned to.
    pub matched: usize,
    pub grad_logits: Vec<f64>,
    /// Same layout as [`Logits::residuals`]; zero outside the matched anchor.
    pub grad_residuals: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionWeights {
    /// Weight of the residual term relative to the classification term.
    pub alpha: f64,
    /// Smooth-ℓ1 transition, meters.
    pub beta: f64,
}

impl Default for RegressionWeights {
    fn default() -> Self {
        RegressionWeights { alpha: 1.0, beta: 1.0 }
    }
}

/// Classification over anchors (one-hot on the closest anchor) plus smooth-ℓ1
/// regression of the matched anchor's residuals onto `ground_truth − anchor`.
/// `ground_truth` must be in the agent frame of the set.
pub fn ordinal_regression_loss(
    out: &Logits,
    set: &TrajectorySet,
    ground_truth: &Trajectory,
    weights: RegressionWeights,
) -> Result<RegressionLoss> {
    let k = set.len();
    let n = set.n_points();
    check_len(k, out.values.len())?;
    let residuals = out.residuals.as_deref().ok_or(Error::InvalidArgument("regression loss needs residual outputs"))?;
    check_len(k * n * 2, residuals.len())?;
    check_finite(residuals, "residuals")?;
    if !(weights.alpha >= 0.0 && weights.beta > 0.0) {
        return Err(Error::InvalidArgument("alpha must be non-negative and beta positive"));
    }
    let matched = closest_match(set, ground_truth)?;
    let ce = ce_loss(&out.values, &TargetDistribution::one_hot(matched, k))?;
    let anchor = set.trajectories()[matched].points();
    let mut grad_residuals = vec![0.0; residuals.len()];
    let base = matched * n * 2;
    let mut reg = 0.0;
    for (i, (a, g)) in anchor.iter().zip(ground_truth.points()).enumerate() {
        let target = *g - *a;
        for (c, t) in [(0, target.x), (1, target.y)] {
            let u = residuals[base + 2 * i + c] - t;
            reg += smooth_l1(u, weights.beta);
            grad_residuals[base + 2 * i + c] = weights.alpha * smooth_l1_grad(u, weights.beta);
        }
    }
    Ok(RegressionLoss {
        loss: ce.loss + weights.alpha * reg,
        ce_term: ce.loss,
        regression_term: reg,
        matched,
        grad_logits: ce.grad,
        grad_residuals,
    })
}

/// Predicted agent-frame waypoints of mode `k`: anchor plus residual.
pub fn decode_mode(set: &TrajectorySet, out: &Logits, k: usize) -> Vec<Point2> {
    let anchor = set.trajectories()[k].points();
    match out.mode_residuals(k, set.n_points()) {
        None => anchor.to_vec(),
        Some(r) => anchor
            .iter()
            .enumerate()
            .map(|(i, a)| Point2::new(a.x + r[2 * i], a.y + r[2 * i + 1]))
            .collect(),
    }
}

/// Classification target family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LossVariant {
    /// One-hot on the closest match.
    #[default]
    Ce,
    /// Inverse-distance target over max-ℓ2 distances.
    WceMax,
    /// Inverse-distance target over mean-ℓ2 distances.
    WceMean,
    /// Closest match plus uniform mass on modes outside the exclusion radius.
    AvoidNearby,
}

impl LossVariant {
    pub const ALL: [LossVariant; 4] = [LossVariant::Ce, LossVariant::WceMax, LossVariant::WceMean, LossVariant::AvoidNearby];

    pub fn name(self) -> &'static str {
        match self {
            LossVariant::Ce => "ce",
            LossVariant::WceMax => "wce_max",
            LossVariant::WceMean => "wce_mean",
            LossVariant::AvoidNearby => "avoid_nearby",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        LossVariant::ALL.into_iter().find(|v| v.name() == name)
    }
}

/// Classification target for an agent-frame ground truth. `threshold` is
/// the WCE radius, or the exclusion radius for `AvoidNearby`.
pub fn classification_target(
    variant: LossVariant,
    set: &TrajectorySet,
    ground_truth: &Trajectory,
    threshold: f64,
) -> Result<TargetDistribution> {
    match variant {
        LossVariant::Ce => Ok(TargetDistribution::one_hot(closest_match(set, ground_truth)?, set.len())),
        LossVariant::WceMax => Ok(wce_target(&distances_to(set, ground_truth, CoverageMetric::MaxL2)?, threshold)?.target),
        LossVariant::WceMean => Ok(wce_target(&distances_to(set, ground_truth, CoverageMetric::MeanL2)?, threshold)?.target),
        LossVariant::AvoidNearby => avoid_nearby_target(&distances_to(set, ground_truth, CoverageMetric::MeanL2)?, threshold),
    }
}
