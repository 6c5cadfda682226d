//! Dataset preparation, evaluation and the resumable sweep runner.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use trajcover_core::losses::LossVariant;
use trajcover_core::metrics::{dac_by_rank, residual_stats, PredictionSet, SceneMetrics};
use trajcover_core::nnmodel::{
    on_road_mask, predict_topk_features, pretrain_map_only, scene_features, train, Example, HeadKind, Model, ModelConfig,
    TrainConfig, TrainLog,
};
use trajcover_core::physics::all_rollouts;
use trajcover_core::raster::{RasterConfig, RenderMode};
use trajcover_core::rng::{derive_seed, mix64};
use trajcover_core::synthdata::{generate_scene, split, GeneratedScene, ScenarioSpec};
use trajcover_core::trajset::{build_set_of_size, build_set_with, BuildOptions};
use trajcover_core::{CoverageMetric, PolygonSet, Scene, Trajectory, TrajectorySet};

use crate::io;
use crate::svg;

/// Predictions kept per scene during evaluation (enough for minADE_10).
pub const EVAL_TOP_K: usize = 10;
/// Probability assigned to each of the four physics rollouts.
pub const PHYSICS_PROBABILITY: f64 = 0.25;

pub fn generate_corpus(spec: &ScenarioSpec) -> Result<Vec<GeneratedScene>> {
    spec.validate()?;
    Ok((0..spec.n_scenes).into_par_iter().map(|i| generate_scene(spec, i)).collect::<Result<Vec<_>, _>>()?)
}

/// Agent-frame ground-truth futures of every scene that has one.
pub fn agent_futures(scenes: &[Scene]) -> Result<Vec<Trajectory>> {
    let mut out = Vec::with_capacity(scenes.len());
    for s in scenes {
        if let Some(f) = s.future_in_agent_frame()? {
            out.push(f);
        }
    }
    Ok(out)
}

/// How a trajectory set is chosen: by coverage radius or by exact size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetChoice {
    Epsilon(f64),
    Size(usize),
}

impl SetChoice {
    pub fn build(self, futures: &[Trajectory], metric: CoverageMetric, options: &BuildOptions) -> Result<TrajectorySet> {
        Ok(match self {
            SetChoice::Epsilon(eps) => build_set_with(futures, eps, metric, options)?,
            SetChoice::Size(k) => build_set_of_size(futures, k, metric)?,
        })
    }

    fn label(self) -> String {
        match self {
            SetChoice::Epsilon(e) => format!("eps{e}"),
            SetChoice::Size(k) => format!("size{k}"),
        }
    }
}

/// Set-independent features of one scene.
#[derive(Debug, Clone)]
pub struct SceneFeatures {
    pub features: Vec<f64>,
    pub kinematics: [f64; 3],
}

pub fn compute_features(scenes: &[Scene], grid: (usize, usize), mode: RenderMode) -> Result<Vec<SceneFeatures>> {
    let cfg = RasterConfig::default();
    scenes
        .par_iter()
        .map(|s| {
            let (features, kinematics) = scene_features(&s.context, grid, mode, &cfg)?;
            Ok(SceneFeatures { features, kinematics })
        })
        .collect()
}

/// Pairs cached features with the on-road mask of `set`; ground truth is
/// attached only when `with_labels`.
pub fn attach(scenes: &[Scene], feats: &[SceneFeatures], set: &TrajectorySet, with_labels: bool) -> Result<Vec<Example>> {
    scenes
        .par_iter()
        .zip(feats)
        .map(|(s, f)| {
            let pose = s.context.target_pose()?;
            Ok(Example {
                features: f.features.clone(),
                kinematics: f.kinematics,
                on_road: on_road_mask(set, &pose, &s.context.map.drivable),
                ground_truth: if with_labels { s.future_in_agent_frame()? } else { None },
                pose,
            })
        })
        .collect()
}

pub fn build_examples(scenes: &[Scene], set: &TrajectorySet, grid: (usize, usize), mode: RenderMode) -> Result<Vec<Example>> {
    let feats = compute_features(scenes, grid, mode)?;
    attach(scenes, &feats, set, mode == RenderMode::Full)
}

/// Four physics rollouts, each with probability 0.25, in oracle order.
pub fn physics_predictions(scene: &Scene) -> Result<PredictionSet> {
    let ctx = &scene.context;
    let kin = ctx.target_kinematics()?;
    let entries = all_rollouts(&kin, ctx.prediction_horizon, ctx.freq)?
        .into_iter()
        .map(|(_, t)| (t, PHYSICS_PROBABILITY))
        .collect();
    Ok(PredictionSet::new(entries)?)
}

pub fn model_predictions(model: &Model, feats: &SceneFeatures, scene: &Scene, k: usize) -> Result<PredictionSet> {
    let pose = scene.context.target_pose()?;
    let k = k.min(model.set().len());
    let modes = predict_topk_features(model, &feats.features, feats.kinematics, &pose, k)?;
    Ok(PredictionSet::new(modes.into_iter().map(|m| (m.trajectory, m.probability)).collect())?)
}

#[derive(Debug, Clone)]
pub struct EvalRow {
    pub scene_id: String,
    pub metrics: SceneMetrics,
}

pub fn evaluate(scenes: &[Scene], preds: &[PredictionSet]) -> Result<Vec<EvalRow>> {
    scenes
        .par_iter()
        .zip(preds)
        .map(|(s, p)| {
            let gt = s.future.as_ref().with_context(|| format!("scene {} has no ground-truth future", s.id))?;
            Ok(EvalRow { scene_id: s.id.clone(), metrics: SceneMetrics::compute(p, gt, &s.context.map.drivable)? })
        })
        .collect()
}

pub const EVAL_HEADER: [&str; 7] = ["scene_id", "minade1", "minade5", "minade10", "miss_5_2", "dac", "mean_mode_dist"];

fn metric_fields(m: &SceneMetrics) -> [String; 6] {
    [m.min_ade1, m.min_ade5, m.min_ade10, m.miss_5_2, m.dac, m.mean_mode_distance].map(|v| v.to_string())
}

/// Per-scene rows followed by an `aggregate` row of unweighted means.
pub fn eval_csv(rows: &[EvalRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(EVAL_HEADER)?;
    for r in rows {
        let mut rec = vec![r.scene_id.clone()];
        rec.extend(metric_fields(&r.metrics));
        w.write_record(&rec)?;
    }
    if let Some(mean) = SceneMetrics::mean(&rows.iter().map(|r| r.metrics).collect::<Vec<_>>()) {
        let mut rec = vec!["aggregate".to_string()];
        rec.extend(metric_fields(&mean));
        w.write_record(&rec)?;
    }
    Ok(w.into_inner()?)
}

pub fn log_csv(log: &TrainLog) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "step", "loss", "ce_term", "offroad_term"])?;
    for e in &log.entries {
        w.write_record([e.epoch.to_string(), e.step.to_string(), e.loss.to_string(), e.ce_term.to_string(), e.offroad_term.to_string()])?;
    }
    Ok(w.into_inner()?)
}

// ---------------------------------------------------------------- sweeps

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_scenes: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub road_mix: [f64; 3],
    pub lane_width: f64,
    pub n_lanes: usize,
    pub speed_min: f64,
    pub speed_max: f64,
    pub history_s: f64,
    pub horizon_s: f64,
    pub freq_hz: f64,
    pub lateral_noise: f64,
    pub max_distractors: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = ScenarioSpec::default();
        DataConfig {
            n_scenes: 500,
            train_fraction: 0.8,
            val_fraction: 0.2,
            road_mix: s.road_mix,
            lane_width: s.lane_width,
            n_lanes: s.n_lanes,
            speed_min: s.speed_range.0,
            speed_max: s.speed_range.1,
            history_s: s.history_window,
            horizon_s: s.prediction_horizon,
            freq_hz: s.freq,
            lateral_noise: s.lateral_noise,
            max_distractors: s.max_distractors,
        }
    }
}

impl DataConfig {
    pub fn spec(&self, seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            seed,
            n_scenes: self.n_scenes,
            road_mix: self.road_mix,
            lane_width: self.lane_width,
            n_lanes: self.n_lanes,
            speed_range: (self.speed_min, self.speed_max),
            history_window: self.history_s,
            prediction_horizon: self.horizon_s,
            freq: self.freq_hz,
            lateral_noise: self.lateral_noise,
            max_distractors: self.max_distractors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SetConfig {
    pub metric: String,
    pub max_candidates: usize,
}

impl Default for SetConfig {
    fn default() -> Self {
        SetConfig { metric: "max_l2".into(), max_candidates: BuildOptions::default().max_candidates }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub feature_grid: [usize; 2],
    pub hidden_sizes: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection { feature_grid: [m.feature_grid.0, m.feature_grid.1], hidden_sizes: m.hidden_sizes }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub threshold: f64,
    pub pretrain_epochs: usize,
    pub pretrain_lr0: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr0: t.lr0,
            lr_decay: t.lr_decay,
            threshold: t.threshold,
            pretrain_epochs: t.epochs,
            pretrain_lr0: t.lr0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Axes {
    pub lambda: Vec<f64>,
    pub data_fraction: Vec<f64>,
    pub epsilon: Vec<f64>,
    /// When non-empty, sets are built to these exact sizes instead of by epsilon.
    pub set_size: Vec<usize>,
    pub loss_variant: Vec<String>,
    pub head: Vec<String>,
    pub pretrain: Vec<bool>,
}

impl Default for Axes {
    fn default() -> Self {
        Axes {
            lambda: vec![0.0],
            data_fraction: vec![1.0],
            epsilon: vec![2.0],
            set_size: vec![],
            loss_variant: vec!["ce".into()],
            head: vec!["classification".into()],
            pretrain: vec![false],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every other seed is derived from it.
    pub seed: u64,
    /// Replicate seeds; each replicate gets its own corpus and initialisation.
    pub replicates: Vec<u64>,
    /// Number of probability ranks reported in the DAC-by-rank columns.
    pub ranks: usize,
    pub data: DataConfig,
    pub set: SetConfig,
    pub model: ModelSection,
    pub train: TrainSection,
    pub axes: Axes,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            replicates: vec![0],
            ranks: EVAL_TOP_K,
            data: DataConfig::default(),
            set: SetConfig::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            axes: Axes::default(),
        }
    }
}

/// One point of the sweep grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub replicate: u64,
    pub lambda: f64,
    pub data_fraction: f64,
    pub set: SetChoice,
    pub loss_variant: String,
    pub head: String,
    pub pretrain: bool,
}

impl Cell {
    pub fn id(&self) -> String {
        format!(
            "r{}_lam{}_frac{}_{}_{}_{}_{}",
            self.replicate,
            self.lambda,
            self.data_fraction,
            self.set.label(),
            self.loss_variant,
            self.head,
            if self.pretrain { "pre" } else { "scratch" }
        )
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.axes;
        if self.replicates.is_empty()
            || a.lambda.is_empty()
            || a.data_fraction.is_empty()
            || (a.epsilon.is_empty() && a.set_size.is_empty())
            || a.loss_variant.is_empty()
            || a.head.is_empty()
            || a.pretrain.is_empty()
        {
            bail!("every sweep axis needs at least one value");
        }
        for v in &a.loss_variant {
            LossVariant::parse(v).with_context(|| format!("unknown loss variant {v:?}"))?;
        }
        for h in &a.head {
            HeadKind::parse(h).with_context(|| format!("unknown head {h:?}"))?;
        }
        CoverageMetric::parse(&self.set.metric).with_context(|| format!("unknown metric {:?}", self.set.metric))?;
        if self.ranks == 0 {
            bail!("ranks must be positive");
        }
        self.data.spec(0).validate()?;
        Ok(())
    }

    pub fn cells(&self) -> Vec<Cell> {
        let sets: Vec<SetChoice> = if self.axes.set_size.is_empty() {
            self.axes.epsilon.iter().map(|&e| SetChoice::Epsilon(e)).collect()
        } else {
            self.axes.set_size.iter().map(|&k| SetChoice::Size(k)).collect()
        };
        let mut cells = Vec::new();
        for &replicate in &self.replicates {
            for &set in &sets {
                for head in &self.axes.head {
                    for loss_variant in &self.axes.loss_variant {
                        for &pretrain in &self.axes.pretrain {
                            for &data_fraction in &self.axes.data_fraction {
                                for &lambda in &self.axes.lambda {
                                    cells.push(Cell {
                                        replicate,
                                        lambda,
                                        data_fraction,
                                        set,
                                        loss_variant: loss_variant.clone(),
                                        head: head.clone(),
                                        pretrain,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        cells
    }

    fn replicate_seed(&self, replicate: u64) -> u64 {
        derive_seed(self.seed, mix64(replicate))
    }

    /// Content hash of everything that determines a cell's results.
    pub fn cell_hash(&self, cell: &Cell) -> Result<String> {
        #[derive(Serialize)]
        struct Key<'a> {
            version: &'static str,
            seed: u64,
            ranks: usize,
            data: &'a DataConfig,
            set: &'a SetConfig,
            model: &'a ModelSection,
            train: &'a TrainSection,
            cell: &'a Cell,
        }
        let key = Key {
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            ranks: self.ranks,
            data: &self.data,
            set: &self.set,
            model: &self.model,
            train: &self.train,
            cell,
        };
        let digest = Sha256::digest(serde_json::to_vec(&key)?);
        Ok(digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        }))
    }
}

/// Corpus and cached features for one replicate.
pub struct ReplicateData {
    pub train: Vec<Scene>,
    pub val: Vec<Scene>,
    pub train_full: Vec<SceneFeatures>,
    pub train_map: Vec<SceneFeatures>,
    pub val_full: Vec<SceneFeatures>,
}

pub fn prepare_replicate(cfg: &ExperimentConfig, replicate: u64) -> Result<ReplicateData> {
    let seed = cfg.replicate_seed(replicate);
    let corpus = generate_corpus(&cfg.data.spec(seed))?;
    let (tr, va) = split(corpus.len(), cfg.data.train_fraction, cfg.data.val_fraction, derive_seed(seed, 1))?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| corpus[i].scene.clone()).collect::<Vec<_>>();
    let (train, val) = (pick(&tr), pick(&va));
    if train.is_empty() || val.is_empty() {
        bail!("replicate {replicate}: empty train or validation split");
    }
    let grid = (cfg.model.feature_grid[0], cfg.model.feature_grid[1]);
    Ok(ReplicateData {
        train_full: compute_features(&train, grid, RenderMode::Full)?,
        train_map: compute_features(&train, grid, RenderMode::MapOnly)?,
        val_full: compute_features(&val, grid, RenderMode::Full)?,
        train,
        val,
    })
}

/// Results of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub set_len: usize,
    pub mean: [f64; 6],
    pub residual_l1: Option<f64>,
    pub residual_linf: Option<f64>,
    pub dac_by_rank: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CellRecord {
    hash: String,
    cell: Cell,
    result: CellResult,
}

pub struct CellOutput {
    pub result: CellResult,
    pub metrics_csv: Vec<u8>,
    pub log_csv: Vec<u8>,
}

pub fn train_config(cfg: &ExperimentConfig, cell: &Cell) -> Result<TrainConfig> {
    Ok(TrainConfig {
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        lr0: cfg.train.lr0,
        lr_decay: cfg.train.lr_decay,
        lambda_offroad: cell.lambda,
        loss_variant: LossVariant::parse(&cell.loss_variant).context("loss variant")?,
        threshold: cfg.train.threshold,
        data_fraction: cell.data_fraction,
        seed: derive_seed(cfg.replicate_seed(cell.replicate), 2),
        ..TrainConfig::default()
    })
}

pub fn run_cell(cfg: &ExperimentConfig, cell: &Cell, data: &ReplicateData, set: &TrajectorySet) -> Result<CellOutput> {
    let head = HeadKind::parse(&cell.head).context("head")?;
    let tc = train_config(cfg, cell)?;
    if head == HeadKind::OrdinalRegression && tc.loss_variant != LossVariant::Ce {
        bail!("the regression head only trains with the ce variant");
    }
    let grid = (cfg.model.feature_grid[0], cfg.model.feature_grid[1]);
    let mc = ModelConfig {
        feature_grid: grid,
        hidden_sizes: cfg.model.hidden_sizes.clone(),
        head,
        seed: derive_seed(cfg.replicate_seed(cell.replicate), 3),
    };
    let mut model = Model::new(mc, set.clone())?;
    let mut log_bytes = Vec::new();
    if cell.pretrain {
        let map_examples = attach(&data.train, &data.train_map, set, false)?;
        let pc = TrainConfig { epochs: cfg.train.pretrain_epochs, lr0: cfg.train.pretrain_lr0, data_fraction: 1.0, ..tc };
        let (m, log) = pretrain_map_only(model, &map_examples, &pc)?;
        model = m;
        log_bytes.extend(b"# pretrain\n");
        log_bytes.extend(log_csv(&log)?);
        log_bytes.extend(b"# train\n");
    }
    let examples = attach(&data.train, &data.train_full, set, true)?;
    let (model, log) = train(model, &examples, &tc)?;
    log_bytes.extend(log_csv(&log)?);

    let preds = data
        .val
        .iter()
        .zip(&data.val_full)
        .map(|(s, f)| model_predictions(&model, f, s, EVAL_TOP_K))
        .collect::<Result<Vec<_>>>()?;
    let rows = evaluate(&data.val, &preds)?;
    let mean = SceneMetrics::mean(&rows.iter().map(|r| r.metrics).collect::<Vec<_>>()).context("empty validation split")?;
    let ranks = cfg.ranks.min(set.len());
    let batch: Vec<(&PredictionSet, &PolygonSet)> = preds.iter().zip(&data.val).map(|(p, s)| (p, &s.context.map.drivable)).collect();
    let by_rank = dac_by_rank(&batch, ranks)?;
    let (residual_l1, residual_linf) = if head == HeadKind::OrdinalRegression {
        let val_examples = attach(&data.val, &data.val_full, set, true)?;
        let r = residual_stats(&model, &val_examples)?;
        (Some(r.mean_l1), Some(r.mean_linf))
    } else {
        (None, None)
    };
    Ok(CellOutput {
        result: CellResult {
            set_len: set.len(),
            mean: [mean.min_ade1, mean.min_ade5, mean.min_ade10, mean.miss_5_2, mean.dac, mean.mean_mode_distance],
            residual_l1,
            residual_linf,
            dac_by_rank: by_rank,
        },
        metrics_csv: eval_csv(&rows)?,
        log_csv: log_bytes,
    })
}

/// Outcome of a whole sweep.
pub struct SweepReport {
    pub cells: Vec<(Cell, Result<CellResult, String>)>,
    pub skipped: usize,
}

impl SweepReport {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|(_, r)| r.is_err()).count()
    }
}

fn load_record(path: &Path, hash: &str) -> Option<CellResult> {
    let bytes = fs::read(path).ok()?;
    let rec: CellRecord = serde_json::from_slice(&bytes).ok()?;
    (rec.hash == hash).then_some(rec.result)
}

/// Runs (or resumes) every cell and writes the report into `out`.
pub fn run_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<SweepReport> {
    cfg.validate()?;
    let cells = cfg.cells();
    let cell_dir = |c: &Cell| out.join("cells").join(c.id());
    let mut done: Vec<Option<CellResult>> = Vec::with_capacity(cells.len());
    for c in &cells {
        let hash = cfg.cell_hash(c)?;
        done.push(load_record(&cell_dir(c).join("cell.json"), &hash));
    }
    let skipped = done.iter().filter(|d| d.is_some()).count();

    let mut replicates: Vec<u64> = cells.iter().zip(&done).filter(|(_, d)| d.is_none()).map(|(c, _)| c.replicate).collect();
    replicates.sort_unstable();
    replicates.dedup();
    let metric = CoverageMetric::parse(&cfg.set.metric).context("metric")?;
    let options = BuildOptions { max_candidates: cfg.set.max_candidates };

    let mut results: Vec<Option<Result<CellResult, String>>> = done.into_iter().map(|d| d.map(Ok)).collect();
    for rep in replicates {
        let data = prepare_replicate(cfg, rep)?;
        let futures = agent_futures(&data.train)?;
        let pending: Vec<usize> = (0..cells.len()).filter(|&i| results[i].is_none() && cells[i].replicate == rep).collect();
        let mut sets: BTreeMap<String, Result<TrajectorySet, String>> = BTreeMap::new();
        for &i in &pending {
            let choice = cells[i].set;
            sets.entry(choice.label()).or_insert_with(|| choice.build(&futures, metric, &options).map_err(|e| format!("{e:#}")));
        }
        let outputs: Vec<(usize, Result<CellOutput, String>)> = pending
            .par_iter()
            .map(|&i| {
                let c = &cells[i];
                let out = match &sets[&c.set.label()] {
                    Ok(set) => run_cell(cfg, c, &data, set).map_err(|e| format!("{e:#}")),
                    Err(e) => Err(e.clone()),
                };
                (i, out)
            })
            .collect();
        for (i, out) in outputs {
            let c = &cells[i];
            let dir = cell_dir(c);
            match out {
                Ok(o) => {
                    io::write_bytes(&dir.join("metrics.csv"), &o.metrics_csv)?;
                    io::write_bytes(&dir.join("log.csv"), &o.log_csv)?;
                    let rec = CellRecord { hash: cfg.cell_hash(c)?, cell: c.clone(), result: o.result.clone() };
                    io::write_bytes(&dir.join("cell.json"), &crate::numfmt::to_json_pretty(&rec)?)?;
                    let _ = fs::remove_file(dir.join("error.txt"));
                    results[i] = Some(Ok(o.result));
                }
                Err(e) => {
                    io::write_bytes(&dir.join("error.txt"), format!("{e}\n").as_bytes())?;
                    results[i] = Some(Err(e));
                }
            }
        }
    }
    let cells: Vec<(Cell, Result<CellResult, String>)> =
        cells.into_iter().zip(results).map(|(c, r)| (c, r.expect("every cell resolved"))).collect();
    let summary = summary_csv(&cells, cfg.ranks)?;
    io::write_bytes(&out.join("summary.csv"), &summary)?;
    let table = SummaryTable::parse(&summary)?;
    io::write_bytes(&out.join("summary_mean.csv"), &table.seed_means_csv()?)?;
    for (name, svg) in svg::sweep_plots(&table) {
        io::write_bytes(&out.join("plots").join(name), svg.as_bytes())?;
    }
    Ok(SweepReport { cells, skipped })
}

pub const SUMMARY_AXES: [&str; 8] = ["cell_id", "seed", "lambda", "data_fraction", "set", "loss_variant", "head", "pretrain"];
pub const SUMMARY_METRICS: [&str; 9] =
    ["set_len", "minade1", "minade5", "minade10", "miss_5_2", "dac", "mean_mode_dist", "residual_l1", "residual_linf"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn summary_csv(cells: &[(Cell, Result<CellResult, String>)], ranks: usize) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = SUMMARY_AXES.iter().chain(&SUMMARY_METRICS).map(|s| s.to_string()).collect();
    header.extend((1..=ranks).map(|r| format!("dac_rank_{r}")));
    header.push("status".into());
    w.write_record(&header)?;
    for (c, r) in cells {
        let set = match c.set {
            SetChoice::Epsilon(e) => format!("eps={e}"),
            SetChoice::Size(k) => format!("size={k}"),
        };
        let mut rec = vec![
            c.id(),
            c.replicate.to_string(),
            c.lambda.to_string(),
            c.data_fraction.to_string(),
            set,
            c.loss_variant.clone(),
            c.head.clone(),
            c.pretrain.to_string(),
        ];
        match r {
            Ok(res) => {
                rec.push(res.set_len.to_string());
                rec.extend(res.mean.iter().map(|v| v.to_string()));
                rec.push(opt(res.residual_l1));
                rec.push(opt(res.residual_linf));
                rec.extend((0..ranks).map(|i| opt(res.dac_by_rank.get(i).copied())));
                rec.push("ok".into());
            }
            Err(_) => {
                rec.extend(std::iter::repeat_n(String::new(), SUMMARY_METRICS.len() + ranks));
                rec.push("failed".into());
            }
        }
        w.write_record(&rec)?;
    }
    Ok(w.into_inner()?)
}

/// Summary CSV read back as string axes and numeric columns.
#[derive(Debug, Clone)]
pub struct SummaryTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl SummaryTable {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        let header = r.headers()?.iter().map(String::from).collect();
        let rows = r.records().map(|rec| rec.map(|r| r.iter().map(String::from).collect())).collect::<Result<_, _>>()?;
        Ok(SummaryTable { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn value(&self, row: &[String], name: &str) -> Option<f64> {
        self.column(name).and_then(|i| row[i].parse().ok())
    }

    pub fn text<'a>(&self, row: &'a [String], name: &str) -> &'a str {
        self.column(name).map(|i| row[i].as_str()).unwrap_or("")
    }

    fn ok_rows(&self) -> impl Iterator<Item = &Vec<String>> {
        self.rows.iter().filter(move |r| self.text(r, "status") == "ok")
    }

    /// Successful rows grouped by every axis except `cell_id` and `seed`,
    /// with each numeric column averaged over seeds. Groups keep first-seen order.
    pub fn seed_means(&self) -> Vec<(Vec<String>, Vec<Option<f64>>)> {
        let axes: Vec<usize> = SUMMARY_AXES[2..].iter().filter_map(|a| self.column(a)).collect();
        let numeric: Vec<usize> = (0..self.header.len())
            .filter(|i| !SUMMARY_AXES.contains(&self.header[*i].as_str()) && self.header[*i] != "status")
            .collect();
        let mut groups: Vec<(Vec<String>, Vec<(f64, usize)>)> = Vec::new();
        for row in self.ok_rows() {
            let key: Vec<String> = axes.iter().map(|&i| row[i].clone()).collect();
            let pos = match groups.iter().position(|(k, _)| *k == key) {
                Some(p) => p,
                None => {
                    groups.push((key, vec![(0.0, 0); numeric.len()]));
                    groups.len() - 1
                }
            };
            for (slot, &i) in groups[pos].1.iter_mut().zip(&numeric) {
                if let Ok(v) = row[i].parse::<f64>() {
                    slot.0 += v;
                    slot.1 += 1;
                }
            }
        }
        groups
            .into_iter()
            .map(|(k, sums)| (k, sums.into_iter().map(|(s, n)| (n > 0).then(|| s / n as f64)).collect()))
            .collect()
    }

    pub fn mean_header(&self) -> Vec<String> {
        let mut h: Vec<String> = SUMMARY_AXES[2..].iter().map(|s| s.to_string()).collect();
        h.extend(
            self.header.iter().filter(|c| !SUMMARY_AXES.contains(&c.as_str()) && c.as_str() != "status").cloned(),
        );
        h
    }

    pub fn seed_means_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.mean_header())?;
        for (key, vals) in self.seed_means() {
            let mut rec = key;
            rec.extend(vals.into_iter().map(opt));
            w.write_record(&rec)?;
        }
        Ok(w.into_inner()?)
    }
}

/// Resolves `p` against `base` unless it is absolute.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() { p.to_path_buf() } else { base.join(p) }
}
