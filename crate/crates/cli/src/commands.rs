//! Subcommands. Each writes its artifacts plus a versioned JSON report and
//! logs a human-readable summary.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use grasptransfer_core::geometry::chamfer_distance;
use grasptransfer_core::grasp::{evaluate_method, synthetic_demonstration, GraspOutcome, TransferOptions};
use grasptransfer_core::mesh::sample_surface;
use grasptransfer_core::reward::{evaluate, lowest_point_height};
use grasptransfer_core::shape_space::{assemble, prepare_canonical, register_training_instance};
use grasptransfer_core::synthetic::generate_synthetic_category_with;
use grasptransfer_core::{
    CpdConfig, EnergyOrientation, Family, FitConfig, FitResult, HandModel, LatentCode, Point3, PointSet, Provenance,
    RetargetConfig, RewardConfig, ShapeSpace, SuccessThresholds, Task,
};
use log::info;
use rayon::prelude::*;

use crate::archive::{config_digest, ShapeSpaceArchive};
use crate::error::{CliError, Result};
use crate::files::*;
use crate::mesh_io::{load_point_cloud, parse_obj, parse_ply, save_point_cloud};
use crate::view::{synthesize_partial_view, ViewMode, ViewSpec};

#[derive(Debug, Parser)]
#[command(name = "grasptransfer", version, about = "Transfer a demonstrated grasp across an object category")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register the canonical object onto training instances and build the shape space.
    Build(BuildArgs),
    /// Fit latent coordinates to an observed cloud.
    Fit(FitArgs),
    /// Transfer the demonstrated grasp onto a fitted instance.
    Transfer(TransferArgs),
    /// Compare the full transfer with the wrist-only and canonical baselines.
    EvalAblations(EvalArgs),
    /// Evaluate shaped rewards for a batch of task states.
    Reward(RewardArgs),
    /// Generate a synthetic object category.
    Synth(SynthArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Build(a) => cmd_build(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Transfer(a) => cmd_transfer(&a),
        Command::EvalAblations(a) => cmd_eval_ablations(&a),
        Command::Reward(a) => cmd_reward(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn parse_point(s: &str) -> std::result::Result<Point3, String> {
    let v: Vec<f64> = s.split(',').map(|t| t.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|e| e.to_string())?;
    match v.as_slice() {
        [x, y, z] => Ok(Point3::new(*x, *y, *z)),
        _ => Err(format!("expected x,y,z, got '{s}'")),
    }
}

fn parse_weight(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected term=value, got '{s}'"))?;
    Ok((k.trim().to_string(), v.trim().parse().map_err(|e| format!("{e}"))?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CropMode {
    Halfspace,
    Hpr,
}

impl From<CropMode> for ViewMode {
    fn from(m: CropMode) -> Self {
        match m {
            CropMode::Halfspace => ViewMode::Halfspace,
            CropMode::Hpr => ViewMode::HiddenPointRemoval,
        }
    }
}

/// Supported cloud extensions, for directory scans.
const CLOUD_EXTENSIONS: [&str; 4] = ["xyz", "txt", "ply", "obj"];

/// Point cloud files in `dir`, sorted by name.
pub fn list_clouds(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| CliError::io(dir, err)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| {
            p.is_file()
                && p.extension().and_then(|e| e.to_str()).is_some_and(|e| CLOUD_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    out.sort();
    Ok(out)
}

/// A cloud file, or a mesh whose surface is sampled with `samples` points.
fn load_cloud_or_mesh(path: &Path, samples: usize, seed: u64) -> Result<PointSet> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let faces = match ext.as_str() {
        "obj" => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            parse_obj(&text, path)?.1
        }
        "ply" => parse_ply(&fs::read(path).map_err(|e| CliError::io(path, e))?, path)?.1,
        _ => Vec::new(),
    };
    if faces.is_empty() {
        return load_point_cloud(path);
    }
    let mesh = crate::mesh_io::load_mesh(path)?;
    Ok(sample_surface(&mesh, samples, seed)?)
}

#[derive(Debug, Clone, Args)]
pub struct BuildArgs {
    /// Canonical object (point cloud, or a mesh to sample).
    pub canonical: PathBuf,
    /// Directory of training instances; every cloud file in it is used.
    pub training_dir: PathBuf,
    pub out_archive: PathBuf,
    /// Kernel width of the deformation field, normalized units.
    #[arg(long, default_value_t = 2.0)]
    pub beta: f64,
    /// Motion-coherence weight.
    #[arg(long, default_value_t = 2.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    pub outlier_weight: f64,
    #[arg(long, default_value_t = 150)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
    /// Fraction of variance the retained modes must explain.
    #[arg(long, default_value_t = 0.95)]
    pub variance_target: f64,
    /// Clouds larger than this are reduced by farthest-point sampling.
    #[arg(long, default_value_t = 1024)]
    pub subsample: usize,
    /// Points sampled from mesh inputs.
    #[arg(long, default_value_t = 2048)]
    pub mesh_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON report path; defaults to the archive path with `.report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

impl BuildArgs {
    fn cpd(&self) -> CpdConfig {
        CpdConfig {
            beta: self.beta,
            lambda: self.lambda,
            outlier_weight: self.outlier_weight,
            max_iterations: self.max_iterations,
            sigma2_tolerance: self.tolerance,
            subsample_limit: self.subsample,
            seed: self.seed,
        }
    }

    /// Stable text form of every setting that affects the archive.
    fn config_text(&self) -> String {
        format!(
            "beta={:?};lambda={:?};outlier_weight={:?};max_iterations={};tolerance={:?};variance_target={:?};subsample={};mesh_samples={};seed={}",
            self.beta,
            self.lambda,
            self.outlier_weight,
            self.max_iterations,
            self.tolerance,
            self.variance_target,
            self.subsample,
            self.mesh_samples,
            self.seed
        )
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn cmd_build(a: &BuildArgs) -> Result<()> {
    let cpd = a.cpd();
    cpd.validate()?;
    if !(a.variance_target > 0.0 && a.variance_target <= 1.0) {
        return Err(CliError::invalid(format!("variance target must lie in (0, 1], got {}", a.variance_target)));
    }
    let files = list_clouds(&a.training_dir)?;
    if files.len() < 2 {
        return Err(CliError::invalid(format!(
            "need ≥ 2 training instances, found {} in {}",
            files.len(),
            a.training_dir.display()
        )));
    }
    let canonical = load_cloud_or_mesh(&a.canonical, a.mesh_samples, a.seed)?;
    let (c, frame) = prepare_canonical(&canonical, &cpd)?;
    info!("registering {} points onto {} training instances", c.len(), files.len());

    let registrations = files
        .par_iter()
        .enumerate()
        .map(|(i, path)| {
            let inst = load_cloud_or_mesh(path, a.mesh_samples, a.seed)?;
            Ok(register_training_instance(&c, frame, &inst, &cpd, i)?)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(files.len());
    println!("{:>5}  {:>14}  {:>5}  instance", "index", "sigma2", "iters");
    for (i, (r, path)) in registrations.iter().zip(&files).enumerate() {
        println!("{i:>5}  {:>14.6e}  {:>5}  {}", r.final_sigma2, r.iterations, path.display());
        rows.push(BuildInstanceRow {
            index: i,
            path: path.display().to_string(),
            final_sigma2: r.final_sigma2,
            iterations: r.iterations,
        });
    }

    let build = assemble(c, frame, &cpd, registrations, a.variance_target)?;
    let cumulative = build.cumulative_explained_variance();
    println!("{:>4}  {:>14}  {:>10}", "mode", "singular", "cumulative");
    for (k, (s, v)) in build.spectrum.iter().zip(&cumulative).enumerate() {
        let mark = if k < build.space.latent_dim() { "*" } else { "" };
        println!("{:>4}  {s:>14.6e}  {v:>10.6}{mark}", k + 1);
    }
    println!("kept {} of {} modes (variance target {})", build.space.latent_dim(), build.spectrum.len(), a.variance_target);

    let digest = config_digest(&a.config_text());
    let report = BuildReport {
        schema_version: SCHEMA_VERSION,
        anchors: build.space.anchor_count(),
        latent_dim: build.space.latent_dim(),
        training_count: build.space.training_count(),
        config_digest: digest.clone(),
        singular_values: build.spectrum.clone(),
        cumulative_explained_variance: cumulative,
        instances: rows,
    };
    ShapeSpaceArchive { space: build.space, config_digest: digest }.save(&a.out_archive)?;
    write_json(&report, &a.report.clone().unwrap_or_else(|| sibling(&a.out_archive, ".report.json")))?;
    info!("wrote {}", a.out_archive.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Energy {
    /// Every observed point must be explained by the model.
    ObservationOuter,
    /// Every model point must find observed support (full views only).
    CanonicalOuter,
}

#[derive(Debug, Clone, Args)]
pub struct FitOptions {
    /// Decreasing kernel widths of the coarse-to-fine schedule, normalized units.
    #[arg(long, value_delimiter = ',', default_values_t = FitConfig::default().sigma_schedule)]
    pub sigma_schedule: Vec<f64>,
    /// Which point set the energy's outer sum runs over.
    #[arg(long, value_enum, default_value_t = Energy::ObservationOuter)]
    pub energy: Energy,
    /// The observation covers only part of the object; requires the
    /// observation-outer energy.
    #[arg(long)]
    pub partial: bool,
    /// Crop the observation to a synthetic partial view before fitting.
    /// Implies `--partial`.
    #[arg(long, value_enum)]
    pub crop: Option<CropMode>,
    /// Viewpoint for `--crop`, world coordinates.
    #[arg(long, value_parser = parse_point, default_value = "1,0,0")]
    pub viewpoint: Point3,
    #[arg(long, default_value_t = FitConfig::default().max_steps_per_stage)]
    pub max_steps: usize,
    #[arg(long, default_value_t = FitConfig::default().subsample_limit)]
    pub subsample: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl FitOptions {
    fn config(&self) -> Result<FitConfig> {
        let orientation = match self.energy {
            Energy::ObservationOuter => EnergyOrientation::ObservationOuter,
            Energy::CanonicalOuter => EnergyOrientation::CanonicalOuter,
        };
        if (self.partial || self.crop.is_some()) && orientation == EnergyOrientation::CanonicalOuter {
            return Err(CliError::invalid("partial observations need the observation-outer energy"));
        }
        Ok(FitConfig {
            sigma_schedule: self.sigma_schedule.clone(),
            max_steps_per_stage: self.max_steps,
            subsample_limit: self.subsample,
            seed: self.seed,
            orientation,
            ..FitConfig::default()
        })
    }

    fn observation(&self, path: &Path) -> Result<PointSet> {
        let obs = load_point_cloud(path)?;
        match self.crop {
            None => Ok(obs),
            Some(mode) => Ok(synthesize_partial_view(&obs, &ViewSpec::new(self.viewpoint, mode.into()))?),
        }
    }
}

fn orientation_name(o: EnergyOrientation) -> &'static str {
    match o {
        EnergyOrientation::CanonicalOuter => "canonical_outer",
        EnergyOrientation::ObservationOuter => "observation_outer",
    }
}

pub struct Fitted {
    pub result: FitResult,
    pub deformed: PointSet,
    pub doc: LatentFile,
}

pub fn fit_observation(space: &ShapeSpace, obs: &PointSet, opts: &FitOptions) -> Result<Fitted> {
    let cfg = opts.config()?;
    let result = grasptransfer_core::fit_latent(space, obs, &cfg)?;
    let deformed = space.deformed(&result.code)?;
    let doc = LatentFile {
        schema_version: SCHEMA_VERSION,
        latent: result.code.values().to_vec(),
        final_energy: result.final_energy,
        energy_orientation: orientation_name(cfg.orientation).to_string(),
        observation_points: obs.len(),
        stages: result
            .trace
            .iter()
            .map(|s| StageDoc {
                sigma: s.sigma,
                steps: s.steps,
                final_energy: *s.energies.last().expect("stage records its start"),
                gradient_norm: s.gradient_norm,
                converged: s.converged,
            })
            .collect(),
        chamfer_to_observation: chamfer_distance(&deformed, obs),
    };
    Ok(Fitted { result, deformed, doc })
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    pub archive: PathBuf,
    pub observation: PathBuf,
    pub out_latent: PathBuf,
    /// Deformed canonical cloud; defaults to the latent path with `.deformed.ply`.
    #[arg(long)]
    pub deformed: Option<PathBuf>,
    #[command(flatten)]
    pub fit: FitOptions,
}

pub fn cmd_fit(a: &FitArgs) -> Result<()> {
    let archive = ShapeSpaceArchive::load(&a.archive)?;
    let obs = a.fit.observation(&a.observation)?;
    let fitted = fit_observation(&archive.space, &obs, &a.fit)?;
    for s in &fitted.doc.stages {
        info!("sigma {:<6} steps {:>4}  energy {:.6e}  |grad| {:.3e}", s.sigma, s.steps, s.final_energy, s.gradient_norm);
    }
    println!(
        "latent {:?}\nfinal energy {:.9e}\nchamfer to observation {:.6e} m",
        fitted.doc.latent, fitted.doc.final_energy, fitted.doc.chamfer_to_observation
    );
    write_json(&fitted.doc, &a.out_latent)?;
    save_point_cloud(&fitted.deformed, &a.deformed.clone().unwrap_or_else(|| sibling(&a.out_latent, ".deformed.ply")))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Keypoint transfer plus retargeting.
    Ours,
    /// Wrist position follows the field; the rest of the demo is kept.
    Wp,
    /// The demonstration unchanged.
    Cg,
}

impl From<Method> for Provenance {
    fn from(m: Method) -> Self {
        match m {
            Method::Ours => Provenance::FullTransfer,
            Method::Wp => Provenance::WristOnly,
            Method::Cg => Provenance::Canonical,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GraspOptions {
    /// Back-off distance of the pre-grasp along the palm normal, meters.
    #[arg(long, default_value_t = grasptransfer_core::hand::DEFAULT_PREGRASP_OFFSET)]
    pub pregrasp_offset: f64,
    /// Pre-grasp joint blend: 0 is the open hand, 1 the grasp.
    #[arg(long, default_value_t = grasptransfer_core::hand::DEFAULT_PREGRASP_INTERPOLATION)]
    pub interpolation: f64,
    #[arg(long, default_value_t = 200)]
    pub retarget_iterations: usize,
}

impl GraspOptions {
    fn transfer(&self) -> TransferOptions {
        TransferOptions {
            retarget: RetargetConfig { max_iterations: self.retarget_iterations, ..RetargetConfig::default() },
            pregrasp_offset: self.pregrasp_offset,
            pregrasp_interpolation: self.interpolation,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TransferArgs {
    pub archive: PathBuf,
    /// A latent JSON from `fit`, or a point cloud to fit first.
    pub latent_or_observation: PathBuf,
    pub demo: PathBuf,
    /// Hand model JSON, or `builtin:<id>`.
    pub hand: PathBuf,
    pub out_grasp: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Ours)]
    pub ablation: Method,
    #[command(flatten)]
    pub grasp: GraspOptions,
    #[command(flatten)]
    pub fit: FitOptions,
}

fn is_json(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn load_code(space: &ShapeSpace, path: &Path, fit: &FitOptions) -> Result<LatentCode> {
    if is_json(path) {
        let doc: LatentFile = read_json(path)?;
        if doc.latent.len() != space.latent_dim() {
            return Err(CliError::schema(
                path,
                format!("latent has {} entries but the shape space has {} modes", doc.latent.len(), space.latent_dim()),
            ));
        }
        return LatentCode::new(doc.latent).map_err(|e| CliError::schema(path, e));
    }
    let obs = fit.observation(path)?;
    Ok(fit_observation(space, &obs, fit)?.result.code)
}

pub fn cmd_transfer(a: &TransferArgs) -> Result<()> {
    let archive = ShapeSpaceArchive::load(&a.archive)?;
    let space = &archive.space;
    let code = load_code(space, &a.latent_or_observation, &a.fit)?;
    let demo = load_demo(&a.demo)?;
    let model = load_hand(&a.hand)?;
    let field = space.decode(&code)?;
    let outcome = evaluate_method(&field, &demo, &model, a.ablation.into(), &a.grasp.transfer())?;
    println!(
        "{}: task-space distance {:.6e} m ({:.4} cm)",
        outcome.provenance,
        outcome.task_space_distance,
        100.0 * outcome.task_space_distance
    );
    if let Some(r) = outcome.retarget_residual {
        info!("retarget RMS residual {r:.3e} m");
    }
    write_json(&TransferReport::from_outcome(&outcome, code.values()), &a.out_grasp)
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    pub archive: PathBuf,
    pub demo: PathBuf,
    /// Hand model JSON, or `builtin:<id>`.
    pub hand: PathBuf,
    /// Directory of observed instances; every cloud file in it is evaluated.
    pub instances_dir: PathBuf,
    pub out_report: PathBuf,
    /// Category label for the report; defaults to the instance directory name.
    #[arg(long)]
    pub category: Option<String>,
    #[command(flatten)]
    pub grasp: GraspOptions,
    #[command(flatten)]
    pub fit: FitOptions,
}

pub const METHODS: [Provenance; 3] = [Provenance::FullTransfer, Provenance::WristOnly, Provenance::Canonical];

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn cmd_eval_ablations(a: &EvalArgs) -> Result<()> {
    let archive = ShapeSpaceArchive::load(&a.archive)?;
    let space = &archive.space;
    let demo = load_demo(&a.demo)?;
    let model = load_hand(&a.hand)?;
    demo.check_model(&model)?;
    let files = list_clouds(&a.instances_dir)?;
    if files.is_empty() {
        return Err(CliError::invalid(format!("no instances in {}", a.instances_dir.display())));
    }
    let opts = a.grasp.transfer();
    let rows = files
        .par_iter()
        .enumerate()
        .map(|(i, path)| evaluate_instance(space, &demo, &model, &opts, &a.fit, i, path))
        .collect::<Result<Vec<_>>>()?;

    let category = a.category.clone().unwrap_or_else(|| {
        a.instances_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "category".into())
    });
    let summary: Vec<MethodSummary> = METHODS
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let d: Vec<f64> = rows.iter().map(|r| r.methods[k].task_space_distance).collect();
            let (mean, std) = mean_std(&d);
            MethodSummary { provenance: m.name().to_string(), mean_m: mean, std_m: std, mean_cm: 100.0 * mean, std_cm: 100.0 * std }
        })
        .collect();

    println!("{category} ({} instances), task-space distance", rows.len());
    println!("{:<14} {:>22} {:>18}", "method", "meters", "cm");
    for s in &summary {
        println!(
            "{:<14} {:>10.6} ± {:<9.6} {:>7.3} ± {:<7.3}",
            s.provenance, s.mean_m, s.std_m, s.mean_cm, s.std_cm
        );
    }
    write_json(&AblationReport { schema_version: SCHEMA_VERSION, category, rows, summary }, &a.out_report)
}

fn evaluate_instance(
    space: &ShapeSpace,
    demo: &grasptransfer_core::GraspDemonstration,
    model: &HandModel,
    opts: &TransferOptions,
    fit: &FitOptions,
    index: usize,
    path: &Path,
) -> Result<AblationRow> {
    let obs = fit.observation(path)?;
    let fitted = fit_observation(space, &obs, fit)?;
    let field = space.decode(&fitted.result.code)?;
    let methods = METHODS
        .iter()
        .map(|m| {
            let o: GraspOutcome = evaluate_method(&field, demo, model, *m, opts)?;
            Ok(MethodResult {
                provenance: m.name().to_string(),
                task_space_distance: o.task_space_distance,
                retarget_residual: o.retarget_residual,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationRow {
        index,
        path: path.display().to_string(),
        final_energy: fitted.result.final_energy,
        chamfer_to_observation: fitted.doc.chamfer_to_observation,
        methods,
    })
}

#[derive(Debug, Clone, Args)]
pub struct RewardArgs {
    /// JSON batch of task states.
    pub states: PathBuf,
    /// `place_mug`, `position_drill` or `drive_nail`.
    #[arg(long, value_parser = parse_task)]
    pub task: Task,
    /// Report path; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Position error scale of the pose term [default: 10].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Orientation error scale of the pose term [default: 1].
    #[arg(long)]
    pub beta: Option<f64>,
    /// Offset guarding the reciprocal distance terms [default: 0.025].
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Term weight override, `term=value`; repeatable.
    #[arg(long = "weight", value_parser = parse_weight)]
    pub weights: Vec<(String, f64)>,
    /// Success position threshold, meters.
    #[arg(long)]
    pub position_threshold: Option<f64>,
    /// Success orientation threshold, radians.
    #[arg(long)]
    pub orientation_threshold: Option<f64>,
    /// Nail depth at which the nail counts as driven, meters.
    #[arg(long)]
    pub nail_depth_threshold: Option<f64>,
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    s.parse().map_err(|e: grasptransfer_core::Error| e.to_string())
}

pub fn reward_report(a: &RewardArgs) -> Result<RewardReport> {
    let doc: TaskStatesFile = read_json(&a.states)?;
    let mut cfg = RewardConfig::default();
    cfg.alpha = a.alpha.unwrap_or(cfg.alpha);
    cfg.beta = a.beta.unwrap_or(cfg.beta);
    cfg.epsilon = a.epsilon.unwrap_or(cfg.epsilon);
    for (k, v) in &a.weights {
        cfg.weights.insert(k.clone(), *v);
    }
    cfg.validate()?;
    let mut th = SuccessThresholds::default();
    th.position = a.position_threshold.unwrap_or(th.position);
    th.orientation = a.orientation_threshold.unwrap_or(th.orientation);
    th.nail_depth = a.nail_depth_threshold.unwrap_or(th.nail_depth);
    th.validate()?;

    let rows = doc
        .states
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let state = s.to_state().map_err(|e| CliError::schema(&a.states, format!("state {i}: {e}")))?;
            let b = evaluate(&state, &cfg, &th, a.task)?;
            let lowest = state.tool_surface_points.as_ref().map(|p| lowest_point_height(p, &state.tool_pose, state.table_height));
            Ok(RewardRow { index: i, terms: b.terms, total: b.total, success: b.success, lowest_point_height: lowest })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RewardReport { schema_version: SCHEMA_VERSION, task: a.task.name().to_string(), rows })
}

pub fn cmd_reward(a: &RewardArgs) -> Result<()> {
    let report = reward_report(a)?;
    for r in &report.rows {
        info!("state {}: total {:.9} success {}", r.index, r.total, r.success);
    }
    match &a.out {
        Some(p) => write_json(&report, p),
        None => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// `ellipsoid_mugs`, `stretched_hammers` or `scaled_drill_blanks`.
    #[arg(value_parser = parse_family)]
    pub family: Family,
    /// Number of instances besides the canonical one.
    pub n: usize,
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = grasptransfer_core::synthetic::DEFAULT_POINTS)]
    pub points: usize,
    /// Also write a partial view of every instance.
    #[arg(long, value_enum)]
    pub partial_view: Option<CropMode>,
    /// Viewpoint for the partial views, world coordinates.
    #[arg(long, value_parser = parse_point, default_value = "1,0,0")]
    pub viewpoint: Point3,
}

fn parse_family(s: &str) -> std::result::Result<Family, String> {
    s.parse().map_err(|e: grasptransfer_core::Error| e.to_string())
}

/// Writes `canonical.xyz`, `instances/`, optional `partial/`, the
/// demonstration, the hand model and `manifest.json`.
pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cat = generate_synthetic_category_with(a.family, a.n, a.points, a.seed)?;
    let mkdir = |p: &Path| fs::create_dir_all(p).map_err(|e| CliError::io(p, e));
    let inst_dir = a.out_dir.join("instances");
    mkdir(&inst_dir)?;
    let partial_dir = a.out_dir.join("partial");
    if a.partial_view.is_some() {
        mkdir(&partial_dir)?;
    }
    save_point_cloud(&cat.canonical, &a.out_dir.join("canonical.xyz"))?;
    let width = a.n.saturating_sub(1).to_string().len().max(3);
    let mut instances = Vec::with_capacity(a.n);
    for (i, (inst, gt)) in cat.instances.iter().zip(&cat.ground_truth).enumerate() {
        let name = format!("instance_{i:0width$}.xyz");
        save_point_cloud(inst, &inst_dir.join(&name))?;
        let partial_path = match a.partial_view {
            Some(mode) => {
                let view = synthesize_partial_view(inst, &ViewSpec::new(a.viewpoint, mode.into()))?;
                save_point_cloud(&view, &partial_dir.join(&name))?;
                Some(format!("partial/{name}"))
            }
            None => None,
        };
        instances.push(ManifestEntry { path: format!("instances/{name}"), parameters: gt.values.clone(), partial_path });
    }
    let demo = synthetic_demonstration(a.family);
    write_json(&GraspFile::from_demo(&demo), &a.out_dir.join("demo.json"))?;
    write_json(&HandModelFile::from_model(&HandModel::anthropomorphic()), &a.out_dir.join("hand.json"))?;
    let manifest = SynthManifest {
        schema_version: SCHEMA_VERSION,
        family: a.family.name().to_string(),
        seed: a.seed,
        points: a.points,
        parameter_names: cat.canonical_params.names.clone(),
        canonical: ManifestEntry { path: "canonical.xyz".into(), parameters: cat.canonical_params.values.clone(), partial_path: None },
        instances,
        demonstration: "demo.json".into(),
        hand_model: "hand.json".into(),
    };
    write_json(&manifest, &a.out_dir.join("manifest.json"))?;
    println!("wrote {} {} instances to {}", a.n, a.family.name(), a.out_dir.display());
    Ok(())
}
