//! Evaluation metrics over ranked global-frame predictions.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{max_l2, mean_l2, points_on_road, PolygonSet, Trajectory, DEFAULT_SAMPLE_STEP};
use crate::nnmodel::{Example, HeadKind, Model};
use crate::trajset::closest_match;

/// Miss-rate defaults: top five modes, two meters.
pub const MISS_K: usize = 5;
pub const MISS_DISTANCE: f64 = 2.0;
/// Number of top modes used for the mode-diversity statistic.
pub const MODE_DISTANCE_K: usize = 5;

/// Ranked predictions, most probable first.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    entries: Vec<(Trajectory, f64)>,
}

impl PredictionSet {
    pub fn new(entries: Vec<(Trajectory, f64)>) -> Result<Self> {
        if entries.iter().any(|(_, p)| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("prediction probability outside [0, 1]"));
        }
        if entries.windows(2).any(|w| w[1].1 > w[0].1) {
            return Err(Error::InvalidArgument("predictions must be sorted by descending probability"));
        }
        if let Some((first, _)) = entries.first() {
            for (t, _) in &entries[1..] {
                if t.len() != first.len() || t.frame() != first.frame() {
                    return Err(Error::InvalidArgument("predictions must share length and frame"));
                }
            }
        }
        Ok(PredictionSet { entries })
    }

    pub fn entries(&self) -> &[(Trajectory, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn top(&self, k: usize) -> Result<&[(Trajectory, f64)]> {
        if self.entries.is_empty() {
            return Err(Error::Empty("predictions"));
        }
        if k == 0 || k > self.entries.len() {
            return Err(Error::InvalidArgument("k must lie in 1..=|predictions|"));
        }
        Ok(&self.entries[..k])
    }
}

/// Smallest mean displacement among the top `k` predictions.
pub fn min_ade(preds: &PredictionSet, gt: &Trajectory, k: usize) -> Result<f64> {
    let mut best = f64::INFINITY;
    for (t, _) in preds.top(k)? {
        best = best.min(mean_l2(t, gt)?);
    }
    Ok(best)
}

/// Smallest maximum displacement among the top `k` predictions.
pub fn min_max_distance(preds: &PredictionSet, gt: &Trajectory, k: usize) -> Result<f64> {
    let mut best = f64::INFINITY;
    for (t, _) in preds.top(k)? {
        best = best.min(max_l2(t, gt)?);
    }
    Ok(best)
}

/// 1 when no top-`k` prediction stays within `d` of the ground truth at every
/// step; a distance of exactly `d` is a hit.
pub fn miss_rate_single(preds: &PredictionSet, gt: &Trajectory, k: usize, d: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::InvalidArgument("miss distance must be positive"));
    }
    Ok(if min_max_distance(preds, gt, k)? > d { 1.0 } else { 0.0 })
}

/// Fraction of predictions that stay inside the drivable area.
pub fn dac(preds: &PredictionSet, area: &PolygonSet) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    let on = preds.entries.iter().filter(|(t, _)| points_on_road(t.points(), area, DEFAULT_SAMPLE_STEP)).count();
    Ok(on as f64 / preds.len() as f64)
}

/// Per-rank on-road fraction across instances, for the first `ranks` modes.
pub fn dac_by_rank(batch: &[(&PredictionSet, &PolygonSet)], ranks: usize) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Empty("prediction batch"));
    }
    if batch.iter().any(|(p, _)| p.len() < ranks) {
        return Err(Error::InvalidArgument("every instance needs at least `ranks` predictions"));
    }
    let mut counts = vec![0usize; ranks];
    for (preds, area) in batch {
        for (r, (t, _)) in preds.entries[..ranks].iter().enumerate() {
            if points_on_road(t.points(), area, DEFAULT_SAMPLE_STEP) {
                counts[r] += 1;
            }
        }
    }
    Ok(counts.into_iter().map(|c| c as f64 / batch.len() as f64).collect())
}

/// Mean pairwise mean displacement among the top `k` predictions.
pub fn mean_mode_distance(preds: &PredictionSet, k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::InvalidArgument("mode distance needs k >= 2"));
    }
    let top = preds.top(k)?;
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..k {
        for j in i + 1..k {
            sum += mean_l2(&top[i].0, &top[j].0)?;
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualStats {
    /// Mean absolute residual coordinate, averaged over instances.
    pub mean_l1: f64,
    /// Largest absolute residual coordinate, averaged over instances.
    pub mean_linf: f64,
}

/// Reduces one residual vector to its mean absolute and max absolute entry.
pub fn residual_norms(residuals: &[f64]) -> (f64, f64) {
    if residuals.is_empty() {
        return (0.0, 0.0);
    }
    let l1 = residuals.iter().map(|r| r.abs()).sum::<f64>() / residuals.len() as f64;
    let linf = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    (l1, linf)
}

/// Residual magnitudes the regression head predicts for each example's
/// closest anchor.
pub fn residual_stats(model: &Model, dataset: &[Example]) -> Result<ResidualStats> {
    if model.head() != HeadKind::OrdinalRegression {
        return Err(Error::InvalidArgument("residual statistics need a regression head"));
    }
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let n = model.set().n_points();
    let (mut l1, mut linf) = (0.0, 0.0);
    for ex in dataset {
        let gt = ex.ground_truth.as_ref().ok_or(Error::Empty("ground truth"))?;
        let k = closest_match(model.set(), gt)?;
        let out = model.forward(&ex.features, ex.kinematics)?;
        let res = out.mode_residuals(k, n).ok_or(Error::InvalidArgument("model emitted no residuals"))?;
        let (a, b) = residual_norms(res);
        l1 += a;
        linf += b;
    }
    let m = dataset.len() as f64;
    Ok(ResidualStats { mean_l1: l1 / m, mean_linf: linf / m })
}

/// Per-scene evaluation row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneMetrics {
    pub min_ade1: f64,
    pub min_ade5: f64,
    pub min_ade10: f64,
    pub miss_5_2: f64,
    pub dac: f64,
    pub mean_mode_distance: f64,
}

impl SceneMetrics {
    /// `dac` is measured over the top-`MISS_K` modes.
    pub fn compute(preds: &PredictionSet, gt: &Trajectory, area: &PolygonSet) -> Result<Self> {
        let capped = |k: usize| k.min(preds.len());
        let top5 = PredictionSet { entries: preds.top(capped(MISS_K))?.to_vec() };
        Ok(SceneMetrics {
            min_ade1: min_ade(preds, gt, 1)?,
            min_ade5: min_ade(preds, gt, capped(5))?,
            min_ade10: min_ade(preds, gt, capped(10))?,
            miss_5_2: miss_rate_single(preds, gt, capped(MISS_K), MISS_DISTANCE)?,
            dac: dac(&top5, area)?,
            mean_mode_distance: if preds.len() >= 2 {
                mean_mode_distance(preds, capped(MODE_DISTANCE_K))?
            } else {
                0.0
            },
        })
    }

    /// Unweighted mean of each column.
    pub fn mean(rows: &[SceneMetrics]) -> Option<SceneMetrics> {
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let avg = |f: fn(&SceneMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Some(SceneMetrics {
            min_ade1: avg(|r| r.min_ade1),
            min_ade5: avg(|r| r.min_ade5),
            min_ade10: avg(|r| r.min_ade10),
            miss_5_2: avg(|r| r.miss_5_2),
            dac: avg(|r| r.dac),
            mean_mode_distance: avg(|r| r.mean_mode_distance),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Frame, Point2, Polygon};

    fn line(offset: f64) -> Trajectory {
        Trajectory::new((1..=4).map(|i| Point2::new(i as f64, offset)).collect(), 0.5, Frame::Global).unwrap()
    }

    fn preds(offsets: &[f64]) -> PredictionSet {
        let n = offsets.len() as f64;
        PredictionSet::new(offsets.iter().map(|&o| (line(o), 1.0 / n)).collect()).unwrap()
    }

    fn corridor(half_width: f64) -> PolygonSet {
        let ring = vec![
            Point2::new(-1.0, -half_width),
            Point2::new(10.0, -half_width),
            Point2::new(10.0, half_width),
            Point2::new(-1.0, half_width),
        ];
        PolygonSet::new(vec![Polygon::new(ring, vec![]).unwrap()])
    }

    #[test]
    fn prediction_set_validation() {
        assert!(PredictionSet::new(vec![(line(0.0), 0.2), (line(1.0), 0.5)]).is_err());
        assert!(PredictionSet::new(vec![(line(0.0), 1.2)]).is_err());
        assert!(PredictionSet::new(vec![]).unwrap().is_empty());
    }

    #[test]
    fn min_ade_examples() {
        let p = preds(&[3.0, 0.0, 1.0]);
        assert_eq!(min_ade(&p, &line(0.0), 3).unwrap(), 0.0);
        assert_eq!(min_ade(&preds(&[1.0]), &line(0.0), 1).unwrap(), 1.0);
        assert!(min_ade(&p, &line(0.0), 4).is_err());
        assert!(min_ade(&preds(&[]), &line(0.0), 1).is_err());
    }

    #[test]
    fn min_ade_matches_brute_force() {
        let offsets = [2.5, -0.7, 1.9, 4.0, -3.3, 0.4];
        let gt = Trajectory::new((1..=4).map(|i| Point2::new(i as f64 * 1.1, 0.1 * i as f64)).collect(), 0.5, Frame::Global).unwrap();
        let p = preds(&offsets);
        let brute = offsets[..5]
            .iter()
            .map(|&o| {
                let t = line(o);
                t.points().iter().zip(gt.points()).map(|(a, b)| (a.x - b.x).hypot(a.y - b.y)).sum::<f64>() / 4.0
            })
            .fold(f64::INFINITY, f64::min);
        assert!((min_ade(&p, &gt, 5).unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn miss_rate_examples() {
        let gt = line(0.0);
        assert_eq!(miss_rate_single(&preds(&[1.9]), &gt, 1, 2.0).unwrap(), 0.0);
        assert_eq!(miss_rate_single(&preds(&[2.1]), &gt, 1, 2.0).unwrap(), 1.0);
        assert_eq!(miss_rate_single(&preds(&[2.0]), &gt, 1, 2.0).unwrap(), 0.0);
        assert!(miss_rate_single(&preds(&[2.0]), &gt, 1, 0.0).is_err());
    }

    #[test]
    fn dac_examples() {
        let area = corridor(1.0);
        assert_eq!(dac(&preds(&[0.0, 0.5, -0.5]), &area).unwrap(), 1.0);
        assert!((dac(&preds(&[0.0, 0.5, -0.5, 0.9, 3.0]), &area).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(dac(&preds(&[0.0, 0.5]), &PolygonSet::empty()).unwrap(), 0.0);
        assert!(dac(&preds(&[]), &area).is_err());
    }

    #[test]
    fn dac_by_rank_examples() {
        let area = corridor(1.0);
        let a = preds(&[0.0, 5.0]);
        let b = preds(&[0.5, -4.0]);
        assert_eq!(dac_by_rank(&[(&a, &area), (&b, &area)], 2).unwrap(), vec![1.0, 0.0]);
        let on = preds(&[0.0, 0.2]);
        assert_eq!(dac_by_rank(&[(&on, &area)], 2).unwrap(), vec![1.0, 1.0]);
        assert!(dac_by_rank(&[(&on, &area)], 3).is_err());
    }

    #[test]
    fn mode_distance_examples() {
        assert_eq!(mean_mode_distance(&preds(&[1.0, 1.0, 1.0]), 3).unwrap(), 0.0);
        assert_eq!(mean_mode_distance(&preds(&[0.0, 2.0]), 2).unwrap(), 2.0);
        assert_eq!(mean_mode_distance(&preds(&[0.0, 1.0, 3.0]), 3).unwrap(), 2.0);
        assert!(mean_mode_distance(&preds(&[0.0, 1.0]), 3).is_err());
        assert!(mean_mode_distance(&preds(&[0.0, 1.0]), 1).is_err());
    }

    #[test]
    fn residual_norm_examples() {
        assert_eq!(residual_norms(&[0.0; 6]), (0.0, 0.0));
        assert_eq!(residual_norms(&[0.5; 6]).1, 0.5);
        assert_eq!(residual_norms(&[1.0, -3.0, 0.5, -0.5]), (1.25, 3.0));
    }

    #[test]
    fn scene_metrics_mean_is_unweighted() {
        let area = corridor(1.0);
        let gt = line(0.0);
        let a = SceneMetrics::compute(&preds(&[0.0, 3.0]), &gt, &area).unwrap();
        let b = SceneMetrics::compute(&preds(&[2.5, 0.5]), &gt, &area).unwrap();
        let m = SceneMetrics::mean(&[a, b]).unwrap();
        assert_eq!(m.min_ade1, 1.25);
        assert_eq!(m.miss_5_2, 0.0);
        assert_eq!(m.dac, 0.5);
        assert!(SceneMetrics::mean(&[]).is_none());
    }
}
