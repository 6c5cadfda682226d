//! On-disk formats: scene JSON, trajectory-set JSON, checkpoints and images.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use trajcover_core::geometry::Polygon;
use trajcover_core::nnmodel::{HeadKind, Layer, Model, ModelConfig};
use trajcover_core::raster::RasterImage;
use trajcover_core::scene::{Agent, AgentState, AgentType, RoadMap};
use trajcover_core::{CoverageMetric, Frame, Point2, PolygonSet, Pose2, Scene, SceneContext, Trajectory, TrajectorySet};

use crate::numfmt;

type Xy = [f64; 2];

fn xy(p: Point2) -> Xy {
    [p.x, p.y]
}

fn pt(v: Xy) -> Point2 {
    Point2::new(v[0], v[1])
}

/// A drivable polygon: a bare ring, or a ring with holes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolygonFile {
    Ring(Vec<Xy>),
    WithHoles { outer: Vec<Xy>, holes: Vec<Vec<Xy>> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapFile {
    pub drivable: Vec<PolygonFile>,
    pub lanes: Vec<Vec<Xy>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateFile {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub speed: f64,
    #[serde(default)]
    pub accel: f64,
    #[serde(default)]
    pub yaw_rate: f64,
    #[serde(default)]
    pub length: Option<f64>,
    #[serde(default)]
    pub width: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentFile {
    pub id: u64,
    #[serde(rename = "type")]
    pub kind: String,
    pub states: Vec<StateFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneFile {
    pub scene_id: String,
    pub freq_hz: f64,
    pub map: MapFile,
    pub agents: Vec<AgentFile>,
    pub target_id: u64,
    pub t_now: f64,
    pub history_s: f64,
    pub horizon_s: f64,
    #[serde(default)]
    pub future: Option<Vec<Xy>>,
}

impl SceneFile {
    pub fn from_scene(scene: &Scene) -> Self {
        let ctx = &scene.context;
        let drivable = ctx
            .map
            .drivable
            .polygons()
            .iter()
            .map(|p| {
                let outer = p.outer().iter().copied().map(xy).collect();
                if p.holes().is_empty() {
                    PolygonFile::Ring(outer)
                } else {
                    let holes = p.holes().iter().map(|h| h.iter().copied().map(xy).collect()).collect();
                    PolygonFile::WithHoles { outer, holes }
                }
            })
            .collect();
        let lanes = ctx.map.lanes.iter().map(|l| l.iter().copied().map(xy).collect()).collect();
        let agents = ctx
            .agents
            .iter()
            .map(|a| AgentFile {
                id: a.id,
                kind: a.kind.name().to_string(),
                states: a
                    .history
                    .iter()
                    .map(|s| StateFile {
                        t: s.t,
                        x: s.pose.x,
                        y: s.pose.y,
                        yaw: s.pose.yaw,
                        speed: s.speed,
                        accel: s.accel,
                        yaw_rate: s.yaw_rate,
                        length: s.length,
                        width: s.width,
                    })
                    .collect(),
            })
            .collect();
        SceneFile {
            scene_id: scene.id.clone(),
            freq_hz: ctx.freq,
            map: MapFile { drivable, lanes },
            agents,
            target_id: ctx.target_id,
            t_now: ctx.t_now,
            history_s: ctx.history_window,
            horizon_s: ctx.prediction_horizon,
            future: scene.future.as_ref().map(|f| f.points().iter().copied().map(xy).collect()),
        }
    }

    pub fn into_scene(self) -> Result<Scene> {
        let drivable = self
            .map
            .drivable
            .into_iter()
            .map(|p| match p {
                PolygonFile::Ring(r) => Polygon::new(r.into_iter().map(pt).collect(), vec![]),
                PolygonFile::WithHoles { outer, holes } => Polygon::new(
                    outer.into_iter().map(pt).collect(),
                    holes.into_iter().map(|h| h.into_iter().map(pt).collect()).collect(),
                ),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let agents = self
            .agents
            .into_iter()
            .map(|a| {
                let kind = AgentType::parse(&a.kind).with_context(|| format!("unknown agent type {:?}", a.kind))?;
                let history = a
                    .states
                    .into_iter()
                    .map(|s| AgentState {
                        t: s.t,
                        pose: Pose2 { x: s.x, y: s.y, yaw: s.yaw },
                        speed: s.speed,
                        accel: s.accel,
                        yaw_rate: s.yaw_rate,
                        length: s.length,
                        width: s.width,
                    })
                    .collect();
                Ok(Agent { id: a.id, kind, history })
            })
            .collect::<Result<Vec<_>>>()?;
        let context = SceneContext {
            map: RoadMap { drivable: PolygonSet::new(drivable), lanes: self.map.lanes.into_iter().map(|l| l.into_iter().map(pt).collect()).collect() },
            agents,
            target_id: self.target_id,
            t_now: self.t_now,
            history_window: self.history_s,
            prediction_horizon: self.horizon_s,
            freq: self.freq_hz,
        };
        let future = self
            .future
            .map(|f| Trajectory::new(f.into_iter().map(pt).collect(), 1.0 / self.freq_hz, Frame::Global))
            .transpose()?;
        let scene = Scene { id: self.scene_id, context, future };
        scene.validate()?;
        Ok(scene)
    }
}

pub fn scene_to_json(scene: &Scene) -> Result<Vec<u8>> {
    Ok(numfmt::to_json(&SceneFile::from_scene(scene))?)
}

pub fn scene_from_json(bytes: &[u8]) -> Result<Scene> {
    let file: SceneFile = serde_json::from_slice(bytes)?;
    file.into_scene()
}

pub fn write_scene(path: &Path, scene: &Scene) -> Result<()> {
    write_bytes(path, &scene_to_json(scene)?)
}

pub fn read_scene(path: &Path) -> Result<Scene> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    scene_from_json(&bytes).with_context(|| format!("parsing scene {}", path.display()))
}

/// Scene files in `dir` (`*.json`), sorted by file name.
pub fn scene_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
    paths.sort();
    if paths.is_empty() {
        bail!("no scene files in {}", dir.display());
    }
    Ok(paths)
}

pub fn read_scene_dir(dir: &Path) -> Result<Vec<Scene>> {
    scene_paths(dir)?.iter().map(|p| read_scene(p)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SetFile {
    pub epsilon: f64,
    pub metric: String,
    pub dt: f64,
    pub n_points: usize,
    #[serde(default)]
    pub source_count: Option<usize>,
    pub trajectories: Vec<Vec<Xy>>,
}

impl SetFile {
    pub fn from_set(set: &TrajectorySet) -> Self {
        SetFile {
            epsilon: set.epsilon(),
            metric: set.metric().name().to_string(),
            dt: set.dt(),
            n_points: set.n_points(),
            source_count: Some(set.source_count()),
            trajectories: set.trajectories().iter().map(|t| t.points().iter().copied().map(xy).collect()).collect(),
        }
    }

    pub fn into_set(self) -> Result<TrajectorySet> {
        let metric = CoverageMetric::parse(&self.metric).with_context(|| format!("unknown metric {:?}", self.metric))?;
        let trajectories = self
            .trajectories
            .into_iter()
            .map(|t| Trajectory::new(t.into_iter().map(pt).collect(), self.dt, Frame::Agent))
            .collect::<Result<Vec<_>, _>>()?;
        if trajectories.iter().any(|t| t.len() != self.n_points) {
            bail!("set member length differs from n_points = {}", self.n_points);
        }
        let count = self.source_count.unwrap_or(trajectories.len());
        Ok(TrajectorySet::new(trajectories, self.epsilon, metric, count)?)
    }
}

pub fn write_set(path: &Path, set: &TrajectorySet) -> Result<()> {
    write_bytes(path, &numfmt::to_json(&SetFile::from_set(set))?)
}

pub fn read_set(path: &Path) -> Result<TrajectorySet> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let file: SetFile = serde_json::from_slice(&bytes).with_context(|| format!("parsing set {}", path.display()))?;
    file.into_set()
}

/// Checkpoint layout: config echo, the trajectory set the head indexes, and
/// per-layer row-major (`outputs × inputs`) weights followed by biases.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub format: String,
    pub version: u32,
    pub feature_grid: [usize; 2],
    pub hidden_sizes: Vec<usize>,
    pub head: String,
    pub seed: u64,
    pub set: SetFile,
    pub layers: Vec<LayerFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerFile {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

pub const CHECKPOINT_FORMAT: &str = "trajcover-checkpoint";

pub fn checkpoint_to_json(model: &Model) -> Result<Vec<u8>> {
    let cfg = model.config();
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: 1,
        feature_grid: [cfg.feature_grid.0, cfg.feature_grid.1],
        hidden_sizes: cfg.hidden_sizes.clone(),
        head: cfg.head.name().into(),
        seed: cfg.seed,
        set: SetFile::from_set(model.set()),
        layers: model
            .layers()
            .iter()
            .map(|l| LayerFile { inputs: l.inputs, outputs: l.outputs, weights: l.weights.clone(), biases: l.biases.clone() })
            .collect(),
    };
    Ok(numfmt::to_json(&file)?)
}

pub fn checkpoint_from_json(bytes: &[u8]) -> Result<Model> {
    let file: CheckpointFile = serde_json::from_slice(bytes)?;
    if file.format != CHECKPOINT_FORMAT || file.version != 1 {
        bail!("unsupported checkpoint format {:?} v{}", file.format, file.version);
    }
    let head = HeadKind::parse(&file.head).with_context(|| format!("unknown head {:?}", file.head))?;
    let config = ModelConfig {
        feature_grid: (file.feature_grid[0], file.feature_grid[1]),
        hidden_sizes: file.hidden_sizes,
        head,
        seed: file.seed,
    };
    let layers = file
        .layers
        .into_iter()
        .map(|l| Layer { inputs: l.inputs, outputs: l.outputs, weights: l.weights, biases: l.biases })
        .collect();
    Ok(Model::from_layers(config, file.set.into_set()?, layers)?)
}

pub fn write_checkpoint(path: &Path, model: &Model) -> Result<()> {
    write_bytes(path, &checkpoint_to_json(model)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    checkpoint_from_json(&bytes).with_context(|| format!("parsing checkpoint {}", path.display()))
}

/// Binary PPM (P6).
pub fn ppm_bytes(img: &RasterImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn png_bytes(img: &RasterImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let encoder = image::codecs::png::PngEncoder::new(&mut out);
    image::ImageEncoder::write_image(encoder, &img.data, img.width as u32, img.height as u32, image::ExtendedColorType::Rgb8)?;
    Ok(out)
}

/// Parses a P6 PPM written by [`ppm_bytes`] into `(width, height, rgb)`.
pub fn parse_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            bail!("truncated PPM header");
        }
        fields.push(std::str::from_utf8(&bytes[start..i])?.to_string());
    }
    if fields[0] != "P6" || fields[3] != "255" {
        bail!("only 8-bit P6 PPM is supported");
    }
    let (w, h): (usize, usize) = (fields[1].parse()?, fields[2].parse()?);
    let data = bytes.get(i + 1..).context("missing PPM body")?.to_vec();
    if data.len() != w * h * 3 {
        bail!("PPM body has {} bytes, expected {}", data.len(), w * h * 3);
    }
    Ok((w, h, data))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}
