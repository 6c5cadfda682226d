//! Birds-eye-view RGB rasterization of a scene, aligned so the target
//! agent's heading points up.
//!
//! Layout: the target sits on pixel `(agent_row, agent_col)`; image rows
//! run backwards along the target's heading (row decreases going forward)
//! and columns run to the target's right. Pixel `(r, c)` is centred on the
//! agent-frame point `((agent_row − r)·res, (agent_col − c)·res)`.
//!
//! Colour table (RGB):
//!
//! | layer        | colour                         |
//! |--------------|--------------------------------|
//! | background   | black `(0, 0, 0)`              |
//! | drivable     | dark gray `(64, 64, 64)`       |
//! | lanes        | white `(255, 255, 255)`        |
//! | vehicles     | yellow, hue 60°                |
//! | pedestrians  | cyan, hue 180°                 |
//! | target agent | red, hue 0°                    |
//!
//! Agent history frames are drawn oldest first with HSV saturation falling
//! linearly from 1.0 at `t_now` to 0.2 at the start of the history window.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{Point2, Pose2};
use crate::math;
pub use crate::scene::{Agent, AgentState, AgentType, RoadMap, SceneContext};

pub const BACKGROUND: [u8; 3] = [0, 0, 0];
pub const DRIVABLE: [u8; 3] = [64, 64, 64];
pub const LANE: [u8; 3] = [255, 255, 255];
pub const VEHICLE_HUE: f64 = 60.0;
pub const PEDESTRIAN_HUE: f64 = 180.0;
pub const TARGET_HUE: f64 = 0.0;
pub const SATURATION_FLOOR: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterConfig {
    pub height: usize,
    pub width: usize,
    /// Meters per pixel.
    pub resolution: f64,
    pub agent_row: usize,
    pub agent_col: usize,
}

impl Default for RasterConfig {
    /// 80 m ahead, 20 m behind and 50 m to each side at 0.25 m/px.
    fn default() -> Self {
        RasterConfig { height: 400, width: 400, resolution: 0.25, agent_row: 320, agent_col: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    Full,
    MapOnly,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    pub height: usize,
    pub width: usize,
    /// Row-major RGB triples.
    pub data: Vec<u8>,
    pub agent_pixel: (usize, usize),
    resolution_bits: u64,
}

impl RasterImage {
    pub fn new(height: usize, width: usize, resolution: f64, agent_pixel: (usize, usize)) -> Self {
        let mut data = vec![0u8; height * width * 3];
        for px in data.chunks_exact_mut(3) {
            px.copy_from_slice(&BACKGROUND);
        }
        RasterImage { height, width, data, agent_pixel, resolution_bits: resolution.to_bits() }
    }

    pub fn resolution(&self) -> f64 {
        f64::from_bits(self.resolution_bits)
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn put(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// HSV (hue in degrees, s and v in [0, 1]) to 8-bit RGB.
pub fn hsv_to_rgb(hue: f64, s: f64, v: f64) -> [u8; 3] {
    let h = (hue % 360.0 + 360.0) % 360.0 / 60.0;
    let sector = math::floor(h);
    let f = h - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    let (r, g, b) = match sector as i32 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    let to8 = |x: f64| math::round(x.clamp(0.0, 1.0) * 255.0) as u8;
    [to8(r), to8(g), to8(b)]
}

/// Saturation for a history frame `age` seconds old.
pub fn history_saturation(age: f64, history_window: f64) -> f64 {
    if history_window <= 0.0 {
        return 1.0;
    }
    (1.0 - (1.0 - SATURATION_FLOOR) * age / history_window).clamp(SATURATION_FLOOR, 1.0)
}

struct Projector {
    pose: Pose2,
    res: f64,
    row0: f64,
    col0: f64,
}

impl Projector {
    /// Global point to continuous (row, col) pixel coordinates.
    fn project(&self, p: Point2) -> (f64, f64) {
        let a = self.pose.to_local(p);
        (self.row0 - a.x / self.res, self.col0 - a.y / self.res)
    }
}

/// Even-odd scanline fill of a set of rings given in pixel coordinates.
fn fill_rings(img: &mut RasterImage, rings: &[Vec<(f64, f64)>], rgb: [u8; 3]) {
    let (mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for ring in rings {
        for &(v, _) in ring {
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
    }
    if !(vmin.is_finite() && vmax.is_finite()) || vmax < 0.0 || vmin > (img.height - 1) as f64 {
        return;
    }
    let r0 = math::ceil(vmin).max(0.0) as usize;
    let r1 = (math::floor(vmax) as usize).min(img.height - 1);
    let mut xs: Vec<f64> = Vec::new();
    for row in r0..=r1 {
        let y = row as f64;
        xs.clear();
        for ring in rings {
            let n = ring.len();
            for i in 0..n {
                let (av, au) = ring[i];
                let (bv, bu) = ring[(i + 1) % n];
                if (av > y) != (bv > y) {
                    xs.push(au + (y - av) * (bu - au) / (bv - av));
                }
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            // half-open in both axes: pixel centres in [u0, u1)
            let c0 = math::ceil(pair[0]).max(0.0);
            let c1 = (math::ceil(pair[1]) - 1.0).min((img.width - 1) as f64);
            if c1 < c0 {
                continue;
            }
            for col in c0 as usize..=c1 as usize {
                img.put(row, col, rgb);
            }
        }
    }
}

/// Liang-Barsky clip of a segment against `[lo, hi]` boxes in both axes.
fn clip_segment(a: (f64, f64), b: (f64, f64), lo: (f64, f64), hi: (f64, f64)) -> Option<((f64, f64), (f64, f64))> {
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    let d = (b.0 - a.0, b.1 - a.1);
    let checks = [(-d.0, a.0 - lo.0), (d.0, hi.0 - a.0), (-d.1, a.1 - lo.1), (d.1, hi.1 - a.1)];
    for (p, q) in checks {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 <= t1).then_some(((a.0 + t0 * d.0, a.1 + t0 * d.1), (a.0 + t1 * d.0, a.1 + t1 * d.1)))
}

fn draw_polyline(img: &mut RasterImage, pts: &[(f64, f64)], rgb: [u8; 3]) {
    let lo = (-1.0, -1.0);
    let hi = (img.height as f64, img.width as f64);
    for w in pts.windows(2) {
        let Some((a, b)) = clip_segment(w[0], w[1], lo, hi) else { continue };
        let steps = math::ceil(math::abs(b.0 - a.0).max(math::abs(b.1 - a.1)) * 2.0).max(1.0) as usize;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let r = math::round(a.0 + (b.0 - a.0) * t);
            let c = math::round(a.1 + (b.1 - a.1) * t);
            if r >= 0.0 && c >= 0.0 && (r as usize) < img.height && (c as usize) < img.width {
                img.put(r as usize, c as usize, rgb);
            }
        }
    }
}

fn box_ring(proj: &Projector, state: &AgentState, kind: AgentType) -> Vec<(f64, f64)> {
    let (length, width) = state.extent(kind);
    let (hl, hw) = (0.5 * length, 0.5 * width);
    let corners = [Point2::new(hl, hw), Point2::new(-hl, hw), Point2::new(-hl, -hw), Point2::new(hl, -hw)];
    corners
        .iter()
        .map(|&c| proj.project(state.pose.to_global(c)))
        .collect()
}

fn draw_agent(img: &mut RasterImage, proj: &Projector, agent: &Agent, hue: f64, t_now: f64, window: f64) {
    for state in &agent.history {
        let s = history_saturation(t_now - state.t, window);
        let ring = box_ring(proj, state, agent.kind);
        fill_rings(img, &[ring], hsv_to_rgb(hue, s, 1.0));
    }
}

/// Renders `map` and `agents` in the frame of `pose`.
///
/// Draw order: drivable area, lanes, non-target vehicles, pedestrians,
/// then the agent with id `target_id` (if present in `agents`).
pub fn render_at(
    map: &RoadMap,
    agents: &[Agent],
    target_id: u64,
    pose: Pose2,
    t_now: f64,
    history_window: f64,
    cfg: &RasterConfig,
) -> RasterImage {
    let mut img = RasterImage::new(cfg.height, cfg.width, cfg.resolution, (cfg.agent_row, cfg.agent_col));
    let proj = Projector { pose, res: cfg.resolution, row0: cfg.agent_row as f64, col0: cfg.agent_col as f64 };
    for poly in map.drivable.polygons() {
        let mut rings = Vec::with_capacity(1 + poly.holes().len());
        rings.push(poly.outer().iter().map(|&p| proj.project(p)).collect::<Vec<_>>());
        for h in poly.holes() {
            rings.push(h.iter().map(|&p| proj.project(p)).collect());
        }
        fill_rings(&mut img, &rings, DRIVABLE);
    }
    for lane in &map.lanes {
        let pts: Vec<_> = lane.iter().map(|&p| proj.project(p)).collect();
        draw_polyline(&mut img, &pts, LANE);
    }
    let others = || agents.iter().filter(|a| a.id != target_id);
    for a in others().filter(|a| a.kind == AgentType::Vehicle) {
        draw_agent(&mut img, &proj, a, VEHICLE_HUE, t_now, history_window);
    }
    for a in others().filter(|a| a.kind == AgentType::Pedestrian) {
        draw_agent(&mut img, &proj, a, PEDESTRIAN_HUE, t_now, history_window);
    }
    if let Some(target) = agents.iter().find(|a| a.id == target_id) {
        draw_agent(&mut img, &proj, target, TARGET_HUE, t_now, history_window);
    }
    img
}

/// Renders a scene around its target agent. `MapOnly` omits every agent
/// but still needs the target to anchor the frame.
pub fn render(ctx: &SceneContext, mode: RenderMode, cfg: &RasterConfig) -> Result<RasterImage> {
    let pose = ctx.target_pose()?;
    let agents: &[Agent] = match mode {
        RenderMode::Full => &ctx.agents,
        RenderMode::MapOnly => &[],
    };
    Ok(render_at(&ctx.map, agents, ctx.target_id, pose, ctx.t_now, ctx.history_window, cfg))
}

/// Per-cell channel means scaled to [0, 1], flattened row-major over cells
/// with the three channels innermost.
pub fn downsample_features(img: &RasterImage, grid: (usize, usize)) -> Result<Vec<f64>> {
    let (rows, cols) = grid;
    if rows == 0 || cols == 0 || !img.height.is_multiple_of(rows) || !img.width.is_multiple_of(cols) {
        return Err(Error::InvalidArgument("feature grid must divide the image dimensions"));
    }
    let (ch, cw) = (img.height / rows, img.width / cols);
    let mut sums = vec![0u64; rows * cols * 3];
    for r in 0..img.height {
        let cell_row = r / ch;
        for c in 0..img.width {
            let base = (cell_row * cols + c / cw) * 3;
            let i = (r * img.width + c) * 3;
            sums[base] += img.data[i] as u64;
            sums[base + 1] += img.data[i + 1] as u64;
            sums[base + 2] += img.data[i + 2] as u64;
        }
    }
    let denom = (ch * cw) as f64 * 255.0;
    Ok(sums.into_iter().map(|s| s as f64 / denom).collect())
}
