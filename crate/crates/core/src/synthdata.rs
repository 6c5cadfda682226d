//! Procedural driving scenes: a road corridor wrapped around the target's
//! kinematic path, lane centerlines, distractor agents and a noisy future.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, points_on_road, Frame, Point2, Polygon, PolygonSet, Pose2, Trajectory, DEFAULT_SAMPLE_STEP};
use crate::math;
use crate::physics::{rollout_states, AgentKinematics, MotionModel};
use crate::rng::{derive_seed, permutation, seeded, Rng};
use crate::scene::{Agent, AgentState, AgentType, RoadMap, Scene, SceneContext};

/// Widest agent the generator places; lanes must be wider.
pub const MAX_VEHICLE_WIDTH: f64 = 2.0;
const BEHIND_EXTENSION: f64 = 25.0;
const AHEAD_EXTENSION: f64 = 40.0;
const MIN_SPEED: f64 = 1.0;
const CURVE_CLEARANCE: f64 = 3.0;
const MAX_ATTEMPTS: u64 = 64;
const TARGET_ID: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RoadKind {
    Straight,
    Arc,
    TJunction,
}

impl RoadKind {
    pub const ALL: [RoadKind; 3] = [RoadKind::Straight, RoadKind::Arc, RoadKind::TJunction];

    pub fn name(self) -> &'static str {
        match self {
            RoadKind::Straight => "straight",
            RoadKind::Arc => "arc",
            RoadKind::TJunction => "t_junction",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        RoadKind::ALL.into_iter().find(|k| k.name() == name)
    }

    fn models(self) -> &'static [MotionModel] {
        match self {
            RoadKind::Straight => &[MotionModel::CvCy, MotionModel::CaCy],
            RoadKind::Arc => &[MotionModel::CvCyr, MotionModel::CaCyr],
            RoadKind::TJunction => &MotionModel::ALL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub n_scenes: usize,
    /// Relative weights for straight, arc and T-junction roads.
    pub road_mix: [f64; 3],
    pub lane_width: f64,
    pub n_lanes: usize,
    pub speed_range: (f64, f64),
    pub history_window: f64,
    pub prediction_horizon: f64,
    pub freq: f64,
    /// Bound on the lateral perturbation of the future (meters).
    pub lateral_noise: f64,
    pub max_distractors: usize,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            seed: 0,
            n_scenes: 100,
            road_mix: [1.0, 1.0, 1.0],
            lane_width: 3.5,
            n_lanes: 2,
            speed_range: (3.0, 15.0),
            history_window: 1.0,
            prediction_horizon: 3.0,
            freq: 2.0,
            lateral_noise: 0.2,
            max_distractors: 4,
        }
    }
}

fn steps(seconds: f64, freq: f64) -> Result<usize> {
    let n = seconds * freq;
    let r = math::round(n);
    if r < 1.0 || math::abs(n - r) > 1e-6 {
        return Err(Error::InvalidArgument("horizon times frequency must be a positive integer"));
    }
    Ok(r as usize)
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lane_width > MAX_VEHICLE_WIDTH) {
            return Err(Error::Infeasible("lane narrower than a vehicle"));
        }
        if self.n_lanes == 0 {
            return Err(Error::InvalidArgument("need at least one lane"));
        }
        let (lo, hi) = self.speed_range;
        if !(lo >= MIN_SPEED && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidArgument("speed range must satisfy 1 <= min <= max"));
        }
        if self.road_mix.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || self.road_mix.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidArgument("road mix weights must be non-negative with a positive sum"));
        }
        if !(self.freq > 0.0 && self.freq.is_finite()) {
            return Err(Error::InvalidArgument("frequency must be positive"));
        }
        steps(self.history_window, self.freq)?;
        steps(self.prediction_horizon, self.freq)?;
        if !(self.lateral_noise >= 0.0 && self.lateral_noise < self.lane_width / 2.0) {
            return Err(Error::InvalidArgument("lateral noise must lie in [0, lane_width/2)"));
        }
        Ok(())
    }

    fn road_offsets(&self) -> (f64, f64) {
        // target drives the rightmost lane; (right, left) edge distances from its path
        (self.lane_width / 2.0, (self.n_lanes as f64 - 0.5) * self.lane_width)
    }
}

/// A generated scene together with the generator's choices.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScene {
    pub scene: Scene,
    pub road: RoadKind,
    pub model: MotionModel,
    /// Whether the lateral perturbation was kept (false when it left the road).
    pub noisy: bool,
}

/// Arc-length parameterised polyline with linear extrapolation past its ends.
struct PathSampler {
    points: Vec<Point2>,
    cum: Vec<f64>,
}

impl PathSampler {
    fn new(points: Vec<Point2>) -> Self {
        let mut cum = vec![0.0];
        for w in points.windows(2) {
            cum.push(cum.last().unwrap() + w[0].distance(w[1]));
        }
        PathSampler { points, cum }
    }

    fn segment(&self, s: f64) -> usize {
        let last = self.points.len() - 2;
        self.cum[1..].iter().position(|&c| s <= c).unwrap_or(last).min(last)
    }

    /// Position and heading at arc length `s`.
    fn at(&self, s: f64) -> (Point2, f64) {
        let i = self.segment(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        let d = b - a;
        let len = d.norm();
        let yaw = math::atan2(d.y, d.x);
        let u = if len > 0.0 { (s - self.cum[i]) / len } else { 0.0 };
        (a + d * u, yaw)
    }
}

fn left_normal(yaw: f64) -> Point2 {
    Point2::new(-math::sin(yaw), math::cos(yaw))
}

fn pick_road(spec: &ScenarioSpec, rng: &mut Rng) -> RoadKind {
    let total: f64 = spec.road_mix.iter().sum();
    let mut u = rng.gen_range(0.0..total);
    for (kind, w) in RoadKind::ALL.into_iter().zip(spec.road_mix) {
        if u < w {
            return kind;
        }
        u -= w;
    }
    RoadKind::ALL.into_iter().zip(spec.road_mix).rev().find(|(_, w)| *w > 0.0).unwrap().0
}

/// Initial kinematics at the start of the history window, chosen so speed
/// stays above [`MIN_SPEED`] and the path curvature leaves room for the road.
fn initial_kinematics(spec: &ScenarioSpec, model: MotionModel, rng: &mut Rng) -> AgentKinematics {
    let (lo, hi) = spec.speed_range;
    let span = spec.history_window + spec.prediction_horizon;
    let (v0, accel) = loop {
        let v_now = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let accel = if model.uses_accel() {
            let mag = rng.gen_range(0.5..=2.0);
            if rng.gen_bool(0.5) { mag } else { -mag }
        } else {
            0.0
        };
        let v0 = v_now - accel * spec.history_window;
        if v0 >= MIN_SPEED && v0 + accel * span >= MIN_SPEED {
            break (v0, accel);
        }
    };
    let yaw_rate = if model.uses_yaw_rate() {
        let v_min = v0.min(v0 + accel * span);
        let (right, left) = spec.road_offsets();
        let bound = v_min / (right.max(left) + CURVE_CLEARANCE);
        let mag = rng.gen_range(0.05..=0.25f64).min(bound);
        if rng.gen_bool(0.5) { mag } else { -mag }
    } else {
        0.0
    };
    let yaw = rng.gen_range(-core::f64::consts::PI..core::f64::consts::PI);
    let origin = Point2::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
    AgentKinematics { pose: Pose2::new(origin.x, origin.y, yaw), speed: v0, accel, yaw_rate }
}

/// Path vertices and headings: straight tail behind, kinematic states, straight lead ahead.
fn extended_path(states: &[AgentKinematics]) -> (Vec<Point2>, Vec<f64>) {
    let first = states.first().unwrap().pose;
    let last = states.last().unwrap().pose;
    let mut pts = vec![first.position() - Point2::new(math::cos(first.yaw), math::sin(first.yaw)) * BEHIND_EXTENSION];
    let mut yaws = vec![first.yaw];
    for s in states {
        pts.push(s.pose.position());
        yaws.push(s.pose.yaw);
    }
    pts.push(last.position() + Point2::new(math::cos(last.yaw), math::sin(last.yaw)) * AHEAD_EXTENSION);
    yaws.push(last.yaw);
    (pts, yaws)
}

fn corridor(path: &[Point2], yaws: &[f64], right: f64, left: f64) -> Result<Polygon> {
    let mut ring: Vec<Point2> = path.iter().zip(yaws).map(|(&p, &y)| p - left_normal(y) * right).collect();
    ring.extend(path.iter().zip(yaws).rev().map(|(&p, &y)| p + left_normal(y) * left));
    Polygon::new(ring, vec![])
}

fn branch(path: &PathSampler, at: f64, to_left: bool, right: f64, left: f64, length: f64) -> Result<(Polygon, Vec<Point2>)> {
    let (p, yaw) = path.at(at);
    let width = right + left;
    let dir = if to_left { left_normal(yaw) } else { left_normal(yaw) * -1.0 };
    let along = Point2::new(math::cos(yaw), math::sin(yaw));
    // branch centerline starts on the road centerline and leaves sideways
    let center = p + left_normal(yaw) * ((left - right) / 2.0);
    let start = center;
    let end = center + dir * length;
    let half = along * (width / 2.0);
    let ring = vec![start - half, end - half, end + half, start + half];
    let lane = vec![start, end];
    Ok((Polygon::new(ring, vec![])?, lane))
}

fn state_at(t: f64, pose: Pose2, speed: f64, extent: Option<(f64, f64)>) -> AgentState {
    AgentState {
        t,
        pose,
        speed,
        accel: 0.0,
        yaw_rate: 0.0,
        length: extent.map(|e| e.0),
        width: extent.map(|e| e.1),
    }
}

fn timestamps(spec: &ScenarioSpec) -> Result<Vec<f64>> {
    let h = steps(spec.history_window, spec.freq)?;
    Ok((0..=h).map(|i| (i as f64 - h as f64) / spec.freq).collect())
}

fn distractors(spec: &ScenarioSpec, path: &PathSampler, s_now: f64, rng: &mut Rng) -> Result<Vec<Agent>> {
    let count = rng.gen_range(0..=spec.max_distractors);
    let times = timestamps(spec)?;
    let (right, left) = spec.road_offsets();
    let mut agents = Vec::with_capacity(count);
    for i in 0..count {
        let id = i as u64 + 1;
        if rng.gen_bool(0.75) {
            let lane = rng.gen_range(0..spec.n_lanes);
            let gap = rng.gen_range(8.0..40.0);
            let s0 = if lane == 0 || rng.gen_bool(0.5) { s_now + gap } else { s_now - gap / 2.0 };
            let speed = rng.gen_range(spec.speed_range.0..=spec.speed_range.1);
            let extent = (rng.gen_range(4.2..=5.0), rng.gen_range(1.7..=MAX_VEHICLE_WIDTH));
            let history = times
                .iter()
                .map(|&t| {
                    let (p, yaw) = path.at(s0 + speed * t);
                    let pos = p + left_normal(yaw) * (lane as f64 * spec.lane_width);
                    state_at(t, Pose2::new(pos.x, pos.y, yaw), speed, Some(extent))
                })
                .collect();
            agents.push(Agent { id, kind: AgentType::Vehicle, history });
        } else {
            let s0 = s_now + rng.gen_range(-10.0..30.0);
            let (p, yaw) = path.at(s0);
            let side = if rng.gen_bool(0.5) { left + rng.gen_range(1.0..3.0) } else { -(right + rng.gen_range(1.0..3.0)) };
            let start = p + left_normal(yaw) * side;
            let heading = normalize_angle(yaw + if rng.gen_bool(0.5) { 0.0 } else { core::f64::consts::PI });
            let speed = rng.gen_range(0.0..1.5);
            let dir = Point2::new(math::cos(heading), math::sin(heading));
            let history = times
                .iter()
                .map(|&t| {
                    let pos = start + dir * (speed * t);
                    state_at(t, Pose2::new(pos.x, pos.y, heading), speed, None)
                })
                .collect();
            agents.push(Agent { id, kind: AgentType::Pedestrian, history });
        }
    }
    Ok(agents)
}

fn attempt(spec: &ScenarioSpec, index: usize, seed: u64) -> Result<GeneratedScene> {
    let mut rng = seeded(seed);
    let road = pick_road(spec, &mut rng);
    let models = road.models();
    let model = models[rng.gen_range(0..models.len())];
    let start = initial_kinematics(spec, model, &mut rng);

    let mut history = vec![start];
    history.extend(rollout_states(&start, model, spec.history_window, spec.freq)?);
    let now = *history.last().unwrap();
    let future = rollout_states(&now, model, spec.prediction_horizon, spec.freq)?;

    let mut all = history.clone();
    all.extend_from_slice(&future);
    let (path_pts, yaws) = extended_path(&all);
    let (right, left) = spec.road_offsets();
    let mut polygons = vec![corridor(&path_pts, &yaws, right, left)?];

    let sampler = PathSampler::new(path_pts.clone());
    let s_now = BEHIND_EXTENSION + history.windows(2).map(|w| w[0].pose.position().distance(w[1].pose.position())).sum::<f64>();
    let mut lanes: Vec<Vec<Point2>> = (0..spec.n_lanes)
        .map(|k| {
            let off = k as f64 * spec.lane_width;
            path_pts.iter().zip(&yaws).map(|(&p, &y)| p + left_normal(y) * off).collect()
        })
        .collect();
    if road == RoadKind::TJunction {
        let at = s_now + rng.gen_range(10.0..30.0);
        let (poly, lane) = branch(&sampler, at, rng.gen_bool(0.5), right, left, 30.0)?;
        polygons.push(poly);
        lanes.push(lane);
    }
    let drivable = PolygonSet::new(polygons);

    let clean: Vec<Point2> = future.iter().map(|s| s.pose.position()).collect();
    let n = clean.len() as f64;
    let amp = spec.lateral_noise * rng.gen_range(0.0..=1.0);
    let split = rng.gen_range(0.0..=1.0);
    let sign = |r: &mut Rng| if r.gen_bool(0.5) { 1.0 } else { -1.0 };
    let (drift, bump) = (sign(&mut rng) * amp * split, sign(&mut rng) * amp * (1.0 - split));
    let noisy: Vec<Point2> = future
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let u = (i + 1) as f64 / n;
            let offset = drift * u + bump * math::sin(core::f64::consts::PI * u);
            s.pose.position() + left_normal(s.pose.yaw) * offset
        })
        .collect();
    let start_pt = now.pose.position();
    let on_road = |pts: &[Point2]| {
        let mut with_now = vec![start_pt];
        with_now.extend_from_slice(pts);
        points_on_road(&with_now, &drivable, DEFAULT_SAMPLE_STEP)
    };
    let (points, kept_noise) = if spec.lateral_noise > 0.0 && on_road(&noisy) {
        (noisy, true)
    } else if on_road(&clean) {
        (clean, false)
    } else {
        return Err(Error::Infeasible("future left the generated road"));
    };

    let times = timestamps(spec)?;
    let extent = (rng.gen_range(4.2..=5.0), rng.gen_range(1.7..=MAX_VEHICLE_WIDTH));
    let target_history = history
        .iter()
        .zip(&times)
        .map(|(s, &t)| AgentState {
            t,
            pose: s.pose,
            speed: s.speed,
            accel: s.accel,
            yaw_rate: s.yaw_rate,
            length: Some(extent.0),
            width: Some(extent.1),
        })
        .collect();
    let mut agents = vec![Agent { id: TARGET_ID, kind: AgentType::Vehicle, history: target_history }];
    agents.extend(distractors(spec, &sampler, s_now, &mut rng)?);

    let context = SceneContext {
        map: RoadMap { drivable, lanes },
        agents,
        target_id: TARGET_ID,
        t_now: 0.0,
        history_window: spec.history_window,
        prediction_horizon: spec.prediction_horizon,
        freq: spec.freq,
    };
    let scene = Scene {
        id: format!("scene_{index:05}"),
        context,
        future: Some(Trajectory::new(points, 1.0 / spec.freq, Frame::Global)?),
    };
    scene.validate()?;
    Ok(GeneratedScene { scene, road, model, noisy: kept_noise })
}

/// Scene `index` of the corpus described by `spec`; independent of other indices.
pub fn generate_scene(spec: &ScenarioSpec, index: usize) -> Result<GeneratedScene> {
    spec.validate()?;
    let base = derive_seed(spec.seed, index as u64);
    let mut last = Error::Infeasible("scene generation exhausted its attempts");
    for k in 0..MAX_ATTEMPTS {
        match attempt(spec, index, derive_seed(base, k)) {
            Ok(s) => return Ok(s),
            Err(e @ (Error::InvalidPolygon(_) | Error::Infeasible(_))) => last = e,
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

pub fn generate(spec: &ScenarioSpec) -> Result<Vec<GeneratedScene>> {
    spec.validate()?;
    (0..spec.n_scenes).map(|i| generate_scene(spec, i)).collect()
}

/// Seeded disjoint train/validation index split, each side sorted ascending.
/// Sizes are `round(fraction · n)`.
pub fn split(n: usize, train_fraction: f64, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction >= 0.0 && val_fraction >= 0.0 && train_fraction + val_fraction <= 1.0 + 1e-12) {
        return Err(Error::InvalidArgument("split fractions must be non-negative and sum to at most 1"));
    }
    let order = permutation(n, &mut seeded(seed));
    let n_train = (math::round(train_fraction * n as f64) as usize).min(n);
    let n_val = (math::round(val_fraction * n as f64) as usize).min(n - n_train);
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..n_train + n_val].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::trajectory_on_road;
    use crate::physics::physics_oracle;

    fn small(seed: u64) -> ScenarioSpec {
        ScenarioSpec { seed, n_scenes: 60, ..ScenarioSpec::default() }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small(4)).unwrap();
        let b = generate(&small(4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate(&small(5)).unwrap());
    }

    #[test]
    fn ground_truth_is_always_on_road() {
        for g in generate(&ScenarioSpec { n_scenes: 200, ..small(1) }).unwrap() {
            let f = g.scene.future.as_ref().unwrap();
            assert!(trajectory_on_road(f, &g.scene.context.map.drivable, 0.1).unwrap(), "{}", g.scene.id);
        }
    }

    #[test]
    fn history_and_future_are_continuous() {
        let spec = small(2);
        for g in generate(&spec).unwrap() {
            let ctx = &g.scene.context;
            let target = ctx.target().unwrap();
            assert_eq!(target.history.len(), 3);
            let mut pts: Vec<Point2> = target.history.iter().map(|s| s.pose.position()).collect();
            pts.extend_from_slice(g.scene.future.as_ref().unwrap().points());
            let v_max = spec.speed_range.1 + 2.0 * (spec.history_window + spec.prediction_horizon);
            for w in pts.windows(2) {
                assert!(w[0].distance(w[1]) <= v_max / spec.freq + 2.0 * spec.lateral_noise);
            }
            for a in &ctx.agents {
                for (s, t) in a.history.iter().zip([-1.0, -0.5, 0.0]) {
                    assert_eq!(s.t, t);
                }
            }
        }
    }

    #[test]
    fn noise_free_oracle_recovers_the_generator() {
        let spec = ScenarioSpec { lateral_noise: 0.0, n_scenes: 80, ..small(3) };
        for g in generate(&spec).unwrap() {
            let kin = g.scene.context.target_kinematics().unwrap();
            let r = physics_oracle(&kin, g.scene.future.as_ref().unwrap(), spec.prediction_horizon, spec.freq).unwrap();
            assert!(r.ade <= 1e-6);
            assert_eq!(r.best_model, g.model, "{}", g.scene.id);
        }
    }

    #[test]
    fn straight_roads_stay_near_the_oracle() {
        let spec = ScenarioSpec { road_mix: [1.0, 0.0, 0.0], n_scenes: 100, ..small(0) };
        let scenes = generate(&spec).unwrap();
        let good = scenes
            .iter()
            .filter(|g| {
                let kin = g.scene.context.target_kinematics().unwrap();
                physics_oracle(&kin, g.scene.future.as_ref().unwrap(), 3.0, 2.0).unwrap().ade <= 0.25
            })
            .count();
        assert!(good >= 90);
        assert!(scenes.iter().all(|g| g.road == RoadKind::Straight));
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        let narrow = ScenarioSpec { lane_width: 1.9, ..ScenarioSpec::default() };
        assert!(matches!(generate(&narrow), Err(Error::Infeasible(_))));
        assert!(generate(&ScenarioSpec { freq: 0.0, ..ScenarioSpec::default() }).is_err());
        assert!(generate(&ScenarioSpec { speed_range: (5.0, 2.0), ..ScenarioSpec::default() }).is_err());
    }

    #[test]
    fn narrow_single_lane_corridors_generate() {
        let spec = ScenarioSpec { lane_width: 2.5, n_lanes: 1, n_scenes: 50, ..small(6) };
        assert_eq!(generate(&spec).unwrap().len(), 50);
    }

    #[test]
    fn split_examples() {
        let (t, v) = split(1000, 0.1, 0.2, 3).unwrap();
        assert_eq!(t.len(), 100);
        assert_eq!(v.len(), 200);
        assert!(t.iter().all(|i| !v.contains(i)));
        assert_eq!(split(1000, 0.1, 0.2, 3).unwrap(), (t, v));
        let (all, none) = split(17, 1.0, 0.0, 1).unwrap();
        assert_eq!(all, (0..17).collect::<Vec<_>>());
        assert!(none.is_empty());
        assert!(split(10, 0.8, 0.5, 0).is_err());
    }
}
