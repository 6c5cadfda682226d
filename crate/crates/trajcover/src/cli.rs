//! Command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use trajcover_core::losses::LossVariant;
use trajcover_core::nnmodel::{pretrain_map_only, train, HeadKind, Model, ModelConfig, TrainConfig};
use trajcover_core::physics::physics_oracle;
use trajcover_core::raster::{render, RasterConfig, RenderMode};
use trajcover_core::rng::derive_seed;
use trajcover_core::synthdata::{split, ScenarioSpec};
use trajcover_core::trajset::{build_set_of_size, build_set_with, coverage_radius, set_stats, BuildOptions};
use trajcover_core::CoverageMetric;

use crate::experiment::{
    agent_futures, build_examples, compute_features, eval_csv, evaluate, generate_corpus, log_csv, model_predictions,
    physics_predictions, resolve, run_sweep, ExperimentConfig, EVAL_TOP_K,
};
use crate::io;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_CELL_FAILED: u8 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] anyhow::Error),
    #[error("{0} sweep cell(s) failed; see cells/*/error.txt")]
    CellsFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::CellsFailed(_) => EXIT_CELL_FAILED,
        }
    }
}

impl From<trajcover_core::Error> for CliError {
    fn from(e: trajcover_core::Error) -> Self {
        CliError::Data(e.into())
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "trajcover", version, about = "Trajectory-set motion prediction toolkit")]
pub struct Cli {
    /// Output directory; relative paths in every flag are resolved against it.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Master seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenes as JSON files.
    Synth(SynthArgs),
    /// Build an epsilon-covering trajectory set from scene futures.
    BuildSet(BuildSetArgs),
    /// Render a scene raster as PPM or PNG.
    Rasterize(RasterizeArgs),
    /// Physics-oracle ADE per scene.
    Baseline(BaselineArgs),
    /// Map-only pretraining with the off-road loss.
    Pretrain(PretrainArgs),
    /// Supervised training of a prediction head.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or the physics rollouts) on scenes.
    Eval(EvalArgs),
    /// Run a grid of experiments described by a TOML file.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    pub n_scenes: usize,
    /// Directory that receives the scene files.
    #[arg(long, default_value = "scenes")]
    pub dir: PathBuf,
    /// Weights for straight, arc and T-junction roads.
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 1.0, 1.0])]
    pub road_mix: Vec<f64>,
    #[arg(long, default_value_t = 3.5)]
    pub lane_width: f64,
    #[arg(long, default_value_t = 2)]
    pub n_lanes: usize,
    #[arg(long, default_value_t = 3.0)]
    pub speed_min: f64,
    #[arg(long, default_value_t = 15.0)]
    pub speed_max: f64,
    #[arg(long, default_value_t = 1.0)]
    pub history: f64,
    #[arg(long, default_value_t = 3.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 2.0)]
    pub freq: f64,
    /// Bound on the lateral perturbation of futures (meters).
    #[arg(long, default_value_t = 0.2)]
    pub noise: f64,
    #[arg(long, default_value_t = 4)]
    pub max_distractors: usize,
    /// When positive, scenes are split into `train/` and `val/` subdirectories.
    #[arg(long, default_value_t = 0.0)]
    pub val_fraction: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MetricArg {
    #[value(name = "max_l2", alias = "max-l2")]
    MaxL2,
    #[value(name = "mean_l2", alias = "mean-l2")]
    MeanL2,
}

impl From<MetricArg> for CoverageMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::MaxL2 => CoverageMetric::MaxL2,
            MetricArg::MeanL2 => CoverageMetric::MeanL2,
        }
    }
}

#[derive(Debug, Args)]
pub struct BuildSetArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    /// Coverage radius in meters.
    #[arg(long, conflicts_with = "size", required_unless_present = "size")]
    pub epsilon: Option<f64>,
    /// Exact set size (the radius is then the one achieved).
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long, value_enum, default_value_t = MetricArg::MaxL2)]
    pub metric: MetricArg,
    #[arg(long, default_value_t = BuildOptions::default().max_candidates)]
    pub max_candidates: usize,
    #[arg(long, default_value = "set.json")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum ImageFormat {
    Ppm,
    Png,
}

#[derive(Debug, Args)]
pub struct RasterizeArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Defaults to `<scene_id>.ppm` or `.png`.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ImageFormat::Ppm)]
    pub format: ImageFormat,
    /// Render only the map layers.
    #[arg(long)]
    pub map_only: bool,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long, default_value = "baseline.csv")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum HeadArg {
    Classification,
    #[value(name = "ordinal_regression", alias = "ordinal-regression")]
    OrdinalRegression,
}

impl From<HeadArg> for HeadKind {
    fn from(h: HeadArg) -> Self {
        match h {
            HeadArg::Classification => HeadKind::Classification,
            HeadArg::OrdinalRegression => HeadKind::OrdinalRegression,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum LossArg {
    Ce,
    #[value(name = "wce_max", alias = "wce-max")]
    WceMax,
    #[value(name = "wce_mean", alias = "wce-mean")]
    WceMean,
    #[value(name = "avoid_nearby", alias = "avoid-nearby")]
    AvoidNearby,
}

impl From<LossArg> for LossVariant {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Ce => LossVariant::Ce,
            LossArg::WceMax => LossVariant::WceMax,
            LossArg::WceMean => LossVariant::WceMean,
            LossArg::AvoidNearby => LossVariant::AvoidNearby,
        }
    }
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Feature grid as rows,cols.
    #[arg(long, value_delimiter = ',', default_values_t = [25usize, 25])]
    pub grid: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [256usize, 256])]
    pub hidden: Vec<usize>,
    #[arg(long, value_enum, default_value_t = HeadArg::Classification)]
    pub head: HeadArg,
}

#[derive(Debug, Args)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub lr_decay: f64,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long)]
    pub set: PathBuf,
    #[arg(long, default_value = "pretrained.json")]
    pub output: PathBuf,
    #[arg(long, default_value = "pretrain_log.csv")]
    pub log: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    /// Trajectory set; required unless `--init` supplies one.
    #[arg(long, required_unless_present = "init")]
    pub set: Option<PathBuf>,
    /// Start from this checkpoint (its set and architecture are reused).
    #[arg(long, conflicts_with = "set")]
    pub init: Option<PathBuf>,
    #[arg(long, default_value = "model.json")]
    pub output: PathBuf,
    #[arg(long, default_value = "train_log.csv")]
    pub log: PathBuf,
    /// Off-road loss weight.
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, value_enum, default_value_t = LossArg::Ce)]
    pub loss: LossArg,
    /// WCE radius or Avoid-Nearby exclusion radius (meters).
    #[arg(long, default_value_t = 2.0)]
    pub threshold: f64,
    #[arg(long, default_value_t = 1.0)]
    pub data_fraction: f64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long, conflicts_with = "physics", required_unless_present = "physics")]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate the four physics rollouts instead of a model.
    #[arg(long)]
    pub physics: bool,
    #[arg(long, default_value = "metrics.csv")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Report directory.
    #[arg(long, default_value = "sweep")]
    pub report: PathBuf,
}

struct Ctx {
    out: PathBuf,
    seed: u64,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        resolve(&self.out, p)
    }

    /// Resolves an input path and fails with a configuration error if absent.
    fn input(&self, p: &Path) -> Result<PathBuf, CliError> {
        let full = self.path(p);
        if !full.exists() {
            return Err(config_err(format!("{} does not exist", full.display())));
        }
        Ok(full)
    }
}

fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("TRAJCOVER_THREADS") {
        let n: usize = v.parse().map_err(|_| config_err(format!("TRAJCOVER_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(config_err("TRAJCOVER_THREADS must be positive"));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Data(e.into()))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = Ctx { out: cli.out, seed: cli.seed.unwrap_or(0) };
    let pool = thread_pool()?;
    pool.install(|| match cli.command {
        Command::Synth(a) => synth(&ctx, a),
        Command::BuildSet(a) => build_set_cmd(&ctx, a),
        Command::Rasterize(a) => rasterize(&ctx, a),
        Command::Baseline(a) => baseline(&ctx, a),
        Command::Pretrain(a) => pretrain(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Sweep(a) => sweep(&ctx, cli.seed, a),
    })
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if let CliError::Data(inner) = &e {
                for cause in inner.chain().skip(1) {
                    eprintln!("  caused by: {cause}");
                }
            }
            ExitCode::from(e.exit_code())
        }
    }
}

fn synth(ctx: &Ctx, a: SynthArgs) -> Result<(), CliError> {
    if a.road_mix.len() != 3 {
        return Err(config_err("--road-mix needs three weights"));
    }
    let spec = ScenarioSpec {
        seed: ctx.seed,
        n_scenes: a.n_scenes,
        road_mix: [a.road_mix[0], a.road_mix[1], a.road_mix[2]],
        lane_width: a.lane_width,
        n_lanes: a.n_lanes,
        speed_range: (a.speed_min, a.speed_max),
        history_window: a.history,
        prediction_horizon: a.horizon,
        freq: a.freq,
        lateral_noise: a.noise,
        max_distractors: a.max_distractors,
    };
    spec.validate().map_err(|e| config_err(e.to_string()))?;
    if !(0.0..1.0).contains(&a.val_fraction) {
        return Err(config_err("--val-fraction must lie in [0, 1)"));
    }
    let corpus = generate_corpus(&spec)?;
    let dir = ctx.path(&a.dir);
    let mut targets = vec![dir.clone(); corpus.len()];
    if a.val_fraction > 0.0 {
        let (_, val) = split(corpus.len(), 1.0 - a.val_fraction, a.val_fraction, derive_seed(ctx.seed, 1))?;
        for (i, t) in targets.iter_mut().enumerate() {
            *t = dir.join(if val.binary_search(&i).is_ok() { "val" } else { "train" });
        }
    }
    let mut manifest = csv::Writer::from_writer(Vec::new());
    manifest.write_record(["scene_id", "split", "road", "model", "noisy"]).context("manifest")?;
    for (g, t) in corpus.iter().zip(&targets) {
        io::write_scene(&t.join(format!("{}.json", g.scene.id)), &g.scene)?;
        let split_name = t.file_name().filter(|_| a.val_fraction > 0.0).and_then(|n| n.to_str()).unwrap_or("all");
        manifest
            .write_record([g.scene.id.as_str(), split_name, g.road.name(), g.model.name(), if g.noisy { "true" } else { "false" }])
            .context("manifest")?;
    }
    io::write_bytes(&dir.join("manifest.csv"), &manifest.into_inner().context("manifest")?)?;
    println!("wrote {} scenes to {}", corpus.len(), dir.display());
    Ok(())
}

fn build_set_cmd(ctx: &Ctx, a: BuildSetArgs) -> Result<(), CliError> {
    let scenes = io::read_scene_dir(&ctx.input(&a.scenes)?)?;
    let futures = agent_futures(&scenes)?;
    let metric: CoverageMetric = a.metric.into();
    let set = match (a.epsilon, a.size) {
        (Some(eps), _) => {
            if !(eps > 0.0) {
                return Err(config_err("--epsilon must be positive"));
            }
            build_set_with(&futures, eps, metric, &BuildOptions { max_candidates: a.max_candidates })?
        }
        (None, Some(k)) => build_set_of_size(&futures, k, metric)?,
        (None, None) => return Err(config_err("one of --epsilon or --size is required")),
    };
    io::write_set(&ctx.path(&a.output), &set)?;
    let stats = set_stats(&set);
    println!(
        "set size {} from {} futures, epsilon {}, achieved radius {}, speed range [{}, {}] m/s",
        set.len(),
        futures.len(),
        set.epsilon(),
        coverage_radius(&set, &futures, metric),
        stats.min_speed,
        stats.max_speed
    );
    Ok(())
}

fn rasterize(ctx: &Ctx, a: RasterizeArgs) -> Result<(), CliError> {
    let scene = io::read_scene(&ctx.input(&a.scene)?)?;
    let mode = if a.map_only { RenderMode::MapOnly } else { RenderMode::Full };
    let img = render(&scene.context, mode, &RasterConfig::default()).context("rendering")?;
    let ext = if a.format == ImageFormat::Png { "png" } else { "ppm" };
    let out = ctx.path(&a.output.unwrap_or_else(|| PathBuf::from(format!("{}.{ext}", scene.id))));
    let bytes = match a.format {
        ImageFormat::Ppm => io::ppm_bytes(&img),
        ImageFormat::Png => io::png_bytes(&img)?,
    };
    io::write_bytes(&out, &bytes)?;
    Ok(())
}

fn baseline(ctx: &Ctx, a: BaselineArgs) -> Result<(), CliError> {
    let scenes = io::read_scene_dir(&ctx.input(&a.scenes)?)?;
    let rows = scenes
        .par_iter()
        .map(|s| {
            let gt = s.future.as_ref().with_context(|| format!("scene {} has no future", s.id))?;
            let kin = s.context.target_kinematics()?;
            Ok(physics_oracle(&kin, gt, s.context.prediction_horizon, s.context.freq)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scene_id", "best_model", "ade"]).context("csv")?;
    for (s, r) in scenes.iter().zip(&rows) {
        w.write_record([s.id.clone(), r.best_model.name().to_string(), r.ade.to_string()]).context("csv")?;
    }
    io::write_bytes(&ctx.path(&a.output), &w.into_inner().context("csv")?)?;
    let mean = rows.iter().map(|r| r.ade).sum::<f64>() / rows.len() as f64;
    println!("physics oracle mean ADE {mean} over {} scenes", rows.len());
    Ok(())
}

fn model_config(ctx: &Ctx, m: &ModelArgs) -> Result<ModelConfig, CliError> {
    if m.grid.len() != 2 || m.grid.contains(&0) || m.hidden.is_empty() || m.hidden.contains(&0) {
        return Err(config_err("--grid needs two positive sizes and --hidden positive widths"));
    }
    Ok(ModelConfig { feature_grid: (m.grid[0], m.grid[1]), hidden_sizes: m.hidden.clone(), head: m.head.into(), seed: derive_seed(ctx.seed, 3) })
}

fn optim_config(ctx: &Ctx, o: &OptimArgs) -> TrainConfig {
    TrainConfig {
        epochs: o.epochs,
        batch_size: o.batch_size,
        lr0: o.lr,
        lr_decay: o.lr_decay,
        seed: derive_seed(ctx.seed, 2),
        ..TrainConfig::default()
    }
}

fn pretrain(ctx: &Ctx, a: PretrainArgs) -> Result<(), CliError> {
    let tc = optim_config(ctx, &a.optim);
    tc.validate().map_err(|e| config_err(e.to_string()))?;
    let mc = model_config(ctx, &a.model)?;
    let set = io::read_set(&ctx.input(&a.set)?)?;
    let scenes = io::read_scene_dir(&ctx.input(&a.scenes)?)?;
    let examples = build_examples(&scenes, &set, mc.feature_grid, RenderMode::MapOnly)?;
    let model = Model::new(mc, set).context("model")?;
    let (model, log) = pretrain_map_only(model, &examples, &tc).context("pretraining")?;
    io::write_checkpoint(&ctx.path(&a.output), &model)?;
    io::write_bytes(&ctx.path(&a.log), &log_csv(&log)?)?;
    Ok(())
}

fn train_cmd(ctx: &Ctx, a: TrainArgs) -> Result<(), CliError> {
    let tc = TrainConfig {
        lambda_offroad: a.lambda,
        loss_variant: a.loss.into(),
        threshold: a.threshold,
        data_fraction: a.data_fraction,
        ..optim_config(ctx, &a.optim)
    };
    tc.validate().map_err(|e| config_err(e.to_string()))?;
    let model = match (&a.init, &a.set) {
        (Some(init), _) => io::read_checkpoint(&ctx.input(init)?)?,
        (None, Some(set)) => {
            let mc = model_config(ctx, &a.model)?;
            Model::new(mc, io::read_set(&ctx.input(set)?)?).context("model")?
        }
        (None, None) => return Err(config_err("one of --set or --init is required")),
    };
    if model.head() == HeadKind::OrdinalRegression && tc.loss_variant != LossVariant::Ce {
        return Err(config_err("the ordinal-regression head trains with --loss ce only"));
    }
    let scenes = io::read_scene_dir(&ctx.input(&a.scenes)?)?;
    let examples = build_examples(&scenes, model.set(), model.config().feature_grid, RenderMode::Full)?;
    let (model, log) = train(model, &examples, &tc).context("training")?;
    io::write_checkpoint(&ctx.path(&a.output), &model)?;
    io::write_bytes(&ctx.path(&a.log), &log_csv(&log)?)?;
    Ok(())
}

fn eval(ctx: &Ctx, a: EvalArgs) -> Result<(), CliError> {
    let scenes = io::read_scene_dir(&ctx.input(&a.scenes)?)?;
    let preds = if a.physics {
        scenes.par_iter().map(physics_predictions).collect::<Result<Vec<_>>>()?
    } else {
        let path = a.checkpoint.as_ref().ok_or_else(|| config_err("--checkpoint or --physics is required"))?;
        let model = io::read_checkpoint(&ctx.input(path)?)?;
        let feats = compute_features(&scenes, model.config().feature_grid, RenderMode::Full)?;
        scenes
            .par_iter()
            .zip(&feats)
            .map(|(s, f)| model_predictions(&model, f, s, EVAL_TOP_K))
            .collect::<Result<Vec<_>>>()?
    };
    let rows = evaluate(&scenes, &preds)?;
    io::write_bytes(&ctx.path(&a.output), &eval_csv(&rows)?)?;
    Ok(())
}

fn sweep(ctx: &Ctx, seed: Option<u64>, a: SweepArgs) -> Result<(), CliError> {
    let path = ctx.input(&a.config)?;
    let text = std::fs::read_to_string(&path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::from_toml(&text).map_err(|e| config_err(format!("{}: {e:#}", path.display())))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let report = run_sweep(&cfg, &ctx.path(&a.report))?;
    println!("{} cells ({} reused from a previous run), {} failed", report.cells.len(), report.skipped, report.failures());
    match report.failures() {
        0 => Ok(()),
        n => Err(CliError::CellsFailed(n)),
    }
}
