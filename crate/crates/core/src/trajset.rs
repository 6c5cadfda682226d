//! Fixed trajectory sets built by greedy ε-coverage, plus the
//! closest-match labelling used for classification targets.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{max_l2_points, mean_l2_points, Frame, Point2, Trajectory};

/// Default cap on the candidate pool before the quadratic greedy pass.
pub const DEFAULT_MAX_CANDIDATES: usize = 60_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum CoverageMetric {
    #[default]
    MaxL2,
    MeanL2,
}

impl CoverageMetric {
    pub fn distance(self, a: &[Point2], b: &[Point2]) -> f64 {
        match self {
            CoverageMetric::MaxL2 => max_l2_points(a, b),
            CoverageMetric::MeanL2 => mean_l2_points(a, b),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CoverageMetric::MaxL2 => "max_l2",
            CoverageMetric::MeanL2 => "mean_l2",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "max_l2" => Some(CoverageMetric::MaxL2),
            "mean_l2" => Some(CoverageMetric::MeanL2),
            _ => None,
        }
    }
}

/// Ordered agent-frame trajectories sharing point count and `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    trajectories: Vec<Trajectory>,
    epsilon: f64,
    metric: CoverageMetric,
    source_count: usize,
}

fn check_homogeneous(trajs: &[Trajectory]) -> Result<(usize, f64)> {
    let first = trajs.first().ok_or(Error::Empty("trajectory list"))?;
    let (n, dt) = (first.len(), first.dt());
    for t in trajs {
        if t.frame() != Frame::Agent {
            return Err(Error::FrameMismatch { expected: Frame::Agent, found: t.frame() });
        }
        if t.len() != n {
            return Err(Error::LengthMismatch { expected: n, found: t.len() });
        }
        if t.dt() != dt {
            return Err(Error::DtMismatch { expected: dt, found: t.dt() });
        }
    }
    Ok((n, dt))
}

impl TrajectorySet {
    /// Assembles a set from explicit members (e.g. when loading a file).
    pub fn new(
        trajectories: Vec<Trajectory>,
        epsilon: f64,
        metric: CoverageMetric,
        source_count: usize,
    ) -> Result<Self> {
        check_homogeneous(&trajectories)?;
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument("epsilon must be positive"));
        }
        for (i, a) in trajectories.iter().enumerate() {
            for b in &trajectories[i + 1..] {
                if metric.distance(a.points(), b.points()) == 0.0 {
                    return Err(Error::InvalidArgument("trajectory set contains duplicate members"));
                }
            }
        }
        Ok(TrajectorySet { trajectories, epsilon, metric, source_count })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn get(&self, k: usize) -> Option<&Trajectory> {
        self.trajectories.get(k)
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn n_points(&self) -> usize {
        self.trajectories[0].len()
    }

    pub fn dt(&self) -> f64 {
        self.trajectories[0].dt()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn metric(&self) -> CoverageMetric {
        self.metric
    }

    pub fn source_count(&self) -> usize {
        self.source_count
    }

    fn check_query(&self, gt: &Trajectory) -> Result<()> {
        if gt.frame() != Frame::Agent {
            return Err(Error::FrameMismatch { expected: Frame::Agent, found: gt.frame() });
        }
        if gt.len() != self.n_points() {
            return Err(Error::LengthMismatch { expected: self.n_points(), found: gt.len() });
        }
        if gt.dt() != self.dt() {
            return Err(Error::DtMismatch { expected: self.dt(), found: gt.dt() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    /// Candidates beyond this count are thinned by even striding.
    pub max_candidates: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { max_candidates: DEFAULT_MAX_CANDIDATES }
    }
}

/// Greedy ε-cover of `candidates` using the default options.
pub fn build_set(candidates: &[Trajectory], epsilon: f64, metric: CoverageMetric) -> Result<TrajectorySet> {
    build_set_with(candidates, epsilon, metric, &BuildOptions::default())
}

fn subsample(candidates: &[Trajectory], cap: usize) -> Vec<&Trajectory> {
    let n = candidates.len();
    if n <= cap {
        return candidates.iter().collect();
    }
    (0..cap).map(|i| &candidates[i * n / cap]).collect()
}

pub fn build_set_with(
    candidates: &[Trajectory],
    epsilon: f64,
    metric: CoverageMetric,
    options: &BuildOptions,
) -> Result<TrajectorySet> {
    check_homogeneous(candidates)?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument("epsilon must be positive"));
    }
    if options.max_candidates == 0 {
        return Err(Error::InvalidArgument("max_candidates must be positive"));
    }
    let pool = subsample(candidates, options.max_candidates);
    let order = greedy_cover(pool.len(), epsilon, |i, j| metric.distance(pool[i].points(), pool[j].points()));
    let members = order.into_iter().map(|i| pool[i].clone()).collect();
    Ok(TrajectorySet { trajectories: members, epsilon, metric, source_count: pool.len() })
}

/// Greedy set cover over `n` items where item `i` covers `j` iff
/// `dist(i, j) <= epsilon`. Returns member indices in insertion order.
///
/// Each step adds the item covering the most still-uncovered items; ties go
/// to the lowest index. Coverage counts are maintained incrementally so the
/// whole run costs O(n²) distance evaluations and O(n) memory.
pub(crate) fn greedy_cover(n: usize, epsilon: f64, dist: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let mut gain = vec![1usize; n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dist(i, j) <= epsilon {
                gain[i] += 1;
                gain[j] += 1;
            }
        }
    }
    let mut covered = vec![false; n];
    let mut remaining = n;
    let mut members = Vec::new();
    while remaining > 0 {
        let mut best = 0;
        for i in 1..n {
            if gain[i] > gain[best] {
                best = i;
            }
        }
        debug_assert!(gain[best] > 0);
        members.push(best);
        for j in 0..n {
            if covered[j] || (j != best && dist(best, j) > epsilon) {
                continue;
            }
            covered[j] = true;
            remaining -= 1;
            for i in 0..n {
                if i == j || dist(i, j) <= epsilon {
                    gain[i] -= 1;
                }
            }
        }
    }
    members
}

/// Set of exactly `size` members: the greedy insertion prefix at the largest
/// ε (found by bisection) whose cover still has at least `size` members.
/// The reported ε is the achieved coverage radius over the candidates.
pub fn build_set_of_size(candidates: &[Trajectory], size: usize, metric: CoverageMetric) -> Result<TrajectorySet> {
    check_homogeneous(candidates)?;
    if size == 0 {
        return Err(Error::InvalidArgument("set size must be positive"));
    }
    let n = candidates.len();
    let mut matrix = vec![0.0f64; n * n];
    let mut max_d = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = metric.distance(candidates[i].points(), candidates[j].points());
            matrix[i * n + j] = d;
            matrix[j * n + i] = d;
            max_d = max_d.max(d);
        }
    }
    let dist = |i: usize, j: usize| matrix[i * n + j];
    let tiny = f64::MIN_POSITIVE;
    let mut lo_order = greedy_cover(n, tiny, dist);
    if lo_order.len() < size {
        return Err(Error::InvalidArgument("fewer distinct candidates than the requested set size"));
    }
    let (mut lo, mut hi) = (tiny, max_d.max(tiny));
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let order = greedy_cover(n, mid, dist);
        if order.len() >= size {
            lo = mid;
            lo_order = order;
        } else {
            hi = mid;
        }
    }
    lo_order.truncate(size);
    let radius = (0..n)
        .map(|c| lo_order.iter().map(|&m| dist(c, m)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max);
    let epsilon = if radius > 0.0 { radius } else { lo };
    let members = lo_order.into_iter().map(|i| candidates[i].clone()).collect();
    Ok(TrajectorySet { trajectories: members, epsilon, metric, source_count: n })
}

/// Index of the member with the smallest mean point-wise distance; ties go
/// to the lowest index.
pub fn closest_match(set: &TrajectorySet, ground_truth: &Trajectory) -> Result<usize> {
    set.check_query(ground_truth)?;
    let mut best = (0, f64::INFINITY);
    for (k, member) in set.trajectories.iter().enumerate() {
        let d = mean_l2_points(member.points(), ground_truth.points());
        if d < best.1 {
            best = (k, d);
        }
    }
    Ok(best.0)
}

pub fn distances_to(set: &TrajectorySet, ground_truth: &Trajectory, metric: CoverageMetric) -> Result<Vec<f64>> {
    set.check_query(ground_truth)?;
    Ok(set
        .trajectories
        .iter()
        .map(|m| metric.distance(m.points(), ground_truth.points()))
        .collect())
}

/// Largest distance from any candidate to its nearest member.
pub fn coverage_radius(set: &TrajectorySet, candidates: &[Trajectory], metric: CoverageMetric) -> f64 {
    candidates
        .iter()
        .map(|c| {
            set.trajectories
                .iter()
                .map(|m| metric.distance(m.points(), c.points()))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetStats {
    pub size: usize,
    /// Pairwise statistics use the set's coverage metric; absent for singletons.
    pub min_pairwise: Option<f64>,
    pub mean_pairwise: Option<f64>,
    /// Average speed (m/s) along each member, measured from the agent origin.
    pub min_speed: f64,
    pub max_speed: f64,
}

pub fn set_stats(set: &TrajectorySet) -> SetStats {
    let k = set.len();
    let mut min_pairwise = f64::INFINITY;
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..k {
        for j in (i + 1)..k {
            let d = set.metric.distance(set.trajectories[i].points(), set.trajectories[j].points());
            min_pairwise = min_pairwise.min(d);
            sum += d;
            pairs += 1;
        }
    }
    let horizon = set.n_points() as f64 * set.dt();
    let (mut min_speed, mut max_speed) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in &set.trajectories {
        let v = t.path_length(Some(Point2::default())) / horizon;
        min_speed = min_speed.min(v);
        max_speed = max_speed.max(v);
    }
    SetStats {
        size: k,
        min_pairwise: (pairs > 0).then_some(min_pairwise),
        mean_pairwise: (pairs > 0).then(|| sum / pairs as f64),
        min_speed,
        max_speed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(offset: f64) -> Trajectory {
        let pts = (1..=4).map(|i| Point2::new(i as f64 * 2.0, offset)).collect();
        Trajectory::new(pts, 0.5, Frame::Agent).unwrap()
    }

    #[test]
    fn five_parallel_lanes_greedy_picks_one_and_three() {
        let cands: Vec<_> = (0..5).map(|o| straight(o as f64)).collect();
        let set = build_set(&cands, 1.0, CoverageMetric::MaxL2).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.trajectories()[0], cands[1]);
        assert_eq!(set.trajectories()[1], cands[3]);
        assert_eq!(set.source_count(), 5);
    }

    #[test]
    fn large_epsilon_gives_single_member() {
        let cands: Vec<_> = (0..5).map(|o| straight(o as f64)).collect();
        let set = build_set(&cands, 4.0, CoverageMetric::MaxL2).unwrap();
        assert_eq!(set.len(), 1);
    }

    #[test]
    fn small_epsilon_keeps_every_distinct_candidate() {
        let mut cands: Vec<_> = (0..5).map(|o| straight(o as f64)).collect();
        cands.push(straight(2.0));
        let set = build_set(&cands, 0.5, CoverageMetric::MeanL2).unwrap();
        assert_eq!(set.len(), 5);
    }

    #[test]
    fn build_rejects_heterogeneous_candidates() {
        let short = Trajectory::new(vec![Point2::new(1.0, 0.0)], 0.5, Frame::Agent).unwrap();
        let err = build_set(&[straight(0.0), short], 1.0, CoverageMetric::MaxL2).unwrap_err();
        assert_eq!(err, Error::LengthMismatch { expected: 4, found: 1 });
        let global = Trajectory::new(straight(0.0).into_points(), 0.5, Frame::Global).unwrap();
        assert!(build_set(&[global], 1.0, CoverageMetric::MaxL2).is_err());
        assert!(build_set(&[], 1.0, CoverageMetric::MaxL2).is_err());
        assert!(build_set(&[straight(0.0)], 0.0, CoverageMetric::MaxL2).is_err());
    }

    #[test]
    fn subsampling_cap_is_even_strided() {
        let cands: Vec<_> = (0..10).map(|o| straight(o as f64 * 10.0)).collect();
        let set = build_set_with(&cands, 0.5, CoverageMetric::MaxL2, &BuildOptions { max_candidates: 5 }).unwrap();
        assert_eq!(set.source_count(), 5);
        let offsets: Vec<f64> = set.trajectories().iter().map(|t| t.points()[0].y).collect();
        assert_eq!(offsets, vec![0.0, 20.0, 40.0, 60.0, 80.0]);
    }

    #[test]
    fn closest_match_examples() {
        let cands: Vec<_> = (0..10).map(|o| straight(o as f64 * 3.0)).collect();
        let set = TrajectorySet::new(cands.clone(), 1.0, CoverageMetric::MaxL2, 10).unwrap();
        assert_eq!(closest_match(&set, &cands[7]).unwrap(), 7);
        // distances [2, 1, 3]
        let set = TrajectorySet::new(vec![straight(-2.0), straight(1.0), straight(3.0)], 1.0, CoverageMetric::MaxL2, 3)
            .unwrap();
        assert_eq!(closest_match(&set, &straight(0.0)).unwrap(), 1);
        // exact tie between 2 and 5
        let offs = [10.0, 20.0, -1.0, 30.0, 40.0, 1.0];
        let set = TrajectorySet::new(offs.iter().map(|&o| straight(o)).collect(), 1.0, CoverageMetric::MaxL2, 6).unwrap();
        assert_eq!(closest_match(&set, &straight(0.0)).unwrap(), 2);
    }

    #[test]
    fn distances_examples() {
        let set = TrajectorySet::new(vec![straight(0.0)], 1.0, CoverageMetric::MaxL2, 1).unwrap();
        assert_eq!(distances_to(&set, &straight(0.0), CoverageMetric::MaxL2).unwrap(), vec![0.0]);
        let set = TrajectorySet::new(vec![straight(1.0), straight(-3.0)], 1.0, CoverageMetric::MaxL2, 2).unwrap();
        assert_eq!(distances_to(&set, &straight(0.0), CoverageMetric::MeanL2).unwrap(), vec![1.0, 3.0]);
        let wrong = Trajectory::new(vec![Point2::new(0.0, 0.0)], 0.5, Frame::Agent).unwrap();
        assert!(distances_to(&set, &wrong, CoverageMetric::MaxL2).is_err());
        assert!(closest_match(&set, &wrong).is_err());
    }

    #[test]
    fn stats_examples() {
        let single = TrajectorySet::new(vec![straight(0.0)], 1.0, CoverageMetric::MaxL2, 1).unwrap();
        let s = set_stats(&single);
        assert_eq!(s.size, 1);
        assert_eq!(s.min_pairwise, None);
        assert_eq!(s.mean_pairwise, None);
        assert!((s.min_speed - 4.0).abs() < 1e-12);
        let pair = TrajectorySet::new(vec![straight(0.0), straight(2.0)], 1.0, CoverageMetric::MaxL2, 2).unwrap();
        assert_eq!(set_stats(&pair).min_pairwise, Some(2.0));
    }

    #[test]
    fn duplicates_rejected_in_explicit_sets() {
        assert!(TrajectorySet::new(vec![straight(0.0), straight(0.0)], 1.0, CoverageMetric::MaxL2, 2).is_err());
    }

    #[test]
    fn exact_size_sets() {
        let cands: Vec<_> = (0..40).map(|o| straight(o as f64 * 0.5)).collect();
        for size in [1, 3, 8, 40] {
            let set = build_set_of_size(&cands, size, CoverageMetric::MaxL2).unwrap();
            assert_eq!(set.len(), size);
            let r = coverage_radius(&set, &cands, CoverageMetric::MaxL2);
            assert!(r <= set.epsilon() + 1e-12);
        }
        assert!(build_set_of_size(&cands, 41, CoverageMetric::MaxL2).is_err());
    }
}
