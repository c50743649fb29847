//! Command-line harness: scene generation, model training, benchmark runs,
//! ablation sweeps, and report emission.
//!
//! Configuration comes from an optional TOML file plus CLI flags; flags win.
//! The environment variable `STREAMLAT_SEED` overrides the config-file seed
//! (but not an explicit `--seed` flag). Every output carries a config-hash
//! header so a run can be replayed exactly.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime divergence/failure.

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use streamlat::compensation::CompensationStrategy;
use streamlat::eval::{
    build_pred_samples, build_prop_samples, collect_endpoints, streaming_evaluate,
    AlignmentVariant, MetricsReport, PipelineConfig, PredictorBundle, Provenance,
};
use streamlat::io::{
    load_checkpoint, load_intentions, load_mln, load_predictor, load_propagator, save_checkpoint,
    save_intentions, save_mln, save_predictor, save_propagator,
};
use streamlat::prediction::{
    train_predictor_resume, IntentionPointSet, PredictorConfig, PredictorParams, DEFAULT_HORIZON,
    DEFAULT_K_INT,
};
use streamlat::propagation::train::{
    train_mln, train_propagator_resume, TrainConfig, TrainError, TrainState,
};
use streamlat::propagation::{MlnParams, PropagatorConfig, PropagatorParams};
use streamlat::rng::Rng;
use streamlat::stream::{frames_at_rate, schedule_run, LatencyModel, RunSchedule};
use streamlat::worldgen::{generate_scene, NoiseSpec, Scene, SceneConfig};

// ---------------------------------------------------------------------------
// Errors: validation (exit 1) vs runtime (exit 2)

#[derive(Debug)]
enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }
    fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "{m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn val_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Validation(e.to_string())
}

fn run_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

// ---------------------------------------------------------------------------
// Config file + flag resolution

/// Optional TOML config. Every key has a flag counterpart; flags win.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    frame_rate: Option<f64>,
    eval_rate: Option<f64>,
    latency: Option<String>,
    compensation: Option<Vec<String>>,
    alignment: Option<String>,
    noise: Option<String>,
    output_dir: Option<PathBuf>,
    models_dir: Option<PathBuf>,
    scenes: Option<usize>,
    duration: Option<f64>,
    agents: Option<usize>,
    motion_mix: Option<[f64; 3]>,
    speed_range: Option<[f64; 2]>,
    steps: Option<usize>,
    lr: Option<f64>,
    batch_size: Option<usize>,
    m_dim: Option<usize>,
}

fn load_file_config(path: &Option<PathBuf>) -> CliResult<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", p.display())))?;
            toml::from_str(&text)
                .map_err(|e| CliError::validation(format!("bad config {}: {e}", p.display())))
        }
    }
}

/// Precedence: explicit flag > STREAMLAT_SEED > config file > 0.
fn resolve_seed(flag: Option<u64>, file: &FileConfig) -> CliResult<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Ok(text) = std::env::var("STREAMLAT_SEED") {
        return text
            .parse()
            .map_err(|_| CliError::validation(format!("STREAMLAT_SEED is not an integer: {text}")));
    }
    Ok(file.seed.unwrap_or(0))
}

fn parse_latency(spec: &str) -> CliResult<LatencyModel> {
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |s: &str| -> CliResult<f64> {
        s.parse().map_err(|_| CliError::validation(format!("bad number in latency spec: {s}")))
    };
    match parts.as_slice() {
        ["constant", v] => Ok(LatencyModel::Constant { tau: num(v)? }),
        ["uniform", lo, hi] => Ok(LatencyModel::Uniform { lo: num(lo)?, hi: num(hi)? }),
        ["lognormal", mu, sigma] => {
            Ok(LatencyModel::Lognormal { mu: num(mu)?, sigma: num(sigma)?, clamp_max: 4.0 })
        }
        ["lognormal", mu, sigma, max] => {
            Ok(LatencyModel::Lognormal { mu: num(mu)?, sigma: num(sigma)?, clamp_max: num(max)? })
        }
        ["trace", path] => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::validation(format!("cannot read trace {path}: {e}")))?;
            LatencyModel::trace_from_text(&text).map_err(val_err)
        }
        _ => Err(CliError::validation(format!(
            "bad latency spec '{spec}'; expected constant:T, uniform:LO:HI, \
             lognormal:MU:SIGMA[:MAX], or trace:FILE"
        ))),
    }
}

fn parse_compensation(spec: &str) -> CliResult<CompensationStrategy> {
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        ["zero_hold"] => Ok(CompensationStrategy::ZeroHold),
        ["velocity_based"] => Ok(CompensationStrategy::VelocityBased),
        ["trajectory"] => Ok(CompensationStrategy::Trajectory),
        ["forecasting", h] => {
            let fixed_horizon: f64 = h
                .parse()
                .map_err(|_| CliError::validation(format!("bad forecasting horizon: {h}")))?;
            Ok(CompensationStrategy::Forecasting { fixed_horizon })
        }
        _ => Err(CliError::validation(format!(
            "bad compensation spec '{spec}'; expected zero_hold, forecasting:H, \
             velocity_based, or trajectory"
        ))),
    }
}

fn parse_noise(spec: &str) -> CliResult<NoiseSpec> {
    match spec {
        "none" => Ok(NoiseSpec::none()),
        "default" => Ok(NoiseSpec::default()),
        other => Err(CliError::validation(format!(
            "bad noise spec '{other}'; expected none or default"
        ))),
    }
}

/// Mean latency of a model, used to center train-time interval perturbation.
fn mean_latency(model: &LatencyModel) -> f64 {
    match model {
        LatencyModel::Constant { tau } => *tau,
        LatencyModel::Uniform { lo, hi } => 0.5 * (lo + hi),
        LatencyModel::Lognormal { mu, sigma, clamp_max } => {
            (mu + 0.5 * sigma * sigma).exp().min(*clamp_max)
        }
        LatencyModel::Trace { latencies } => {
            latencies.iter().sum::<f64>() / latencies.len().max(1) as f64
        }
    }
}

fn config_hash<T: Serialize>(cfg: &T) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::validation(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// CLI surface

#[derive(Parser, Debug)]
#[command(name = "streamlat", version, about = "Latency-aware streaming perception benchmark")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate synthetic scenes as JSON files.
    Gen(GenArgs),
    /// Train the propagator, the MLN baseline, and the trajectory predictor.
    Train(TrainArgs),
    /// Run the streaming benchmark over a scene directory.
    Run(RunArgs),
    /// Sweep alignment and compensation variants; emit comparison tables.
    Ablate(AblateArgs),
    /// Summarize previously written JSON reports as a Markdown table.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// TOML config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides STREAMLAT_SEED and the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of scenes to generate.
    #[arg(long)]
    scenes: Option<usize>,
    /// Scene duration in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Agents per scene.
    #[arg(long)]
    agents: Option<usize>,
    /// Motion-model mixture "cv,turn,stopgo".
    #[arg(long)]
    motion_mix: Option<String>,
    /// Agent speed range "lo,hi" in m/s.
    #[arg(long)]
    speed_range: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Directory of scene JSON files (from `gen`).
    #[arg(long)]
    scenes_dir: PathBuf,
    /// Which models to train.
    #[arg(long, default_value = "all", value_parser = ["all", "propagator", "mln", "predictor"])]
    models: String,
    /// Latency model the intervals are perturbed around.
    #[arg(long)]
    latency: Option<String>,
    /// Optimization steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Peak learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Minibatch size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Query embedding dimension.
    #[arg(long)]
    m_dim: Option<usize>,
    /// Stop after this many steps and write a checkpoint.
    #[arg(long)]
    stop_after: Option<usize>,
    /// Resume from the checkpoints in the output directory.
    #[arg(long, default_value_t = false)]
    resume: bool,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Directory of scene JSON files (from `gen`).
    #[arg(long)]
    scenes_dir: PathBuf,
    /// Latency model spec.
    #[arg(long)]
    latency: Option<String>,
    /// Compensation strategies (repeatable); one summary row per (scene, strategy).
    #[arg(long = "compensation")]
    compensation: Vec<String>,
    /// Temporal alignment variant: none, mln, or ode.
    #[arg(long, value_parser = ["none", "mln", "ode"])]
    alignment: Option<String>,
    /// Detector noise: none or default.
    #[arg(long)]
    noise: Option<String>,
    /// Directory holding trained model blobs (from `train`).
    #[arg(long)]
    models_dir: Option<PathBuf>,
    /// Evaluation grid rate, Hz.
    #[arg(long)]
    eval_rate: Option<f64>,
    /// Frame rate, Hz.
    #[arg(long)]
    frame_rate: Option<f64>,
    /// Scene-level parallelism; outputs are independent of this value.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Directory of scene JSON files (from `gen`).
    #[arg(long)]
    scenes_dir: PathBuf,
    /// Latency model spec.
    #[arg(long)]
    latency: Option<String>,
    /// Detector noise: none or default.
    #[arg(long)]
    noise: Option<String>,
    /// Directory holding trained model blobs; trains in-process when absent.
    #[arg(long)]
    models_dir: Option<PathBuf>,
    /// Evaluation grid rate, Hz.
    #[arg(long)]
    eval_rate: Option<f64>,
    /// Frame rate, Hz.
    #[arg(long)]
    frame_rate: Option<f64>,
    /// Scene-level parallelism; outputs are independent of this value.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Exit nonzero unless mAP(trajectory) > mAP(zero_hold).
    #[arg(long, default_value_t = false)]
    check_ordering: bool,
    /// Table format.
    #[arg(long, default_value = "md", value_parser = ["md", "csv"])]
    format: String,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Directory of *.report.json files (from `run` or `ablate`).
    #[arg(long)]
    input: PathBuf,
    /// Write the Markdown table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// gen

/// Fully-resolved generation config; hashed into the manifest.
#[derive(Debug, Clone, Serialize)]
struct GenResolved {
    scenes: usize,
    seed: u64,
    scene_cfg: SceneConfig,
}

fn parse_pair(spec: &str, what: &str) -> CliResult<(f64, f64)> {
    let parts: Vec<&str> = spec.split(',').collect();
    if parts.len() != 2 {
        return Err(CliError::validation(format!("bad {what} '{spec}'; expected LO,HI")));
    }
    let lo = parts[0].trim().parse().map_err(|_| CliError::validation(format!("bad {what}: {spec}")))?;
    let hi = parts[1].trim().parse().map_err(|_| CliError::validation(format!("bad {what}: {spec}")))?;
    Ok((lo, hi))
}

fn parse_mix(spec: &str) -> CliResult<[f64; 3]> {
    let parts: Vec<&str> = spec.split(',').collect();
    if parts.len() != 3 {
        return Err(CliError::validation(format!("bad motion mix '{spec}'; expected CV,TURN,STOPGO")));
    }
    let mut mix = [0.0; 3];
    for (m, p) in mix.iter_mut().zip(&parts) {
        *m = p.trim().parse().map_err(|_| CliError::validation(format!("bad motion mix: {spec}")))?;
    }
    Ok(mix)
}

fn cmd_gen(args: &GenArgs) -> CliResult<()> {
    let file = load_file_config(&args.common.config)?;
    let seed = resolve_seed(args.common.seed, &file)?;
    let out = args.common.out.clone().or(file.output_dir.clone()).unwrap_or_else(|| "scenes".into());
    let n = args.scenes.or(file.scenes).unwrap_or(10);

    let mut scene_cfg = SceneConfig::default();
    if let Some(d) = args.duration.or(file.duration) {
        scene_cfg.duration = d;
    }
    if let Some(a) = args.agents.or(file.agents) {
        scene_cfg.n_agents = a;
    }
    scene_cfg.motion_mix = match &args.motion_mix {
        Some(s) => parse_mix(s)?,
        None => file.motion_mix.unwrap_or(scene_cfg.motion_mix),
    };
    scene_cfg.speed_range = match &args.speed_range {
        Some(s) => parse_pair(s, "speed range")?,
        None => file.speed_range.map(|[lo, hi]| (lo, hi)).unwrap_or(scene_cfg.speed_range),
    };

    let resolved = GenResolved { scenes: n, seed, scene_cfg: scene_cfg.clone() };
    let hash = config_hash(&resolved);
    ensure_dir(&out)?;

    let mut files = Vec::with_capacity(n);
    for i in 0..n {
        let mut cfg = scene_cfg.clone();
        cfg.seed = seed.wrapping_add(i as u64);
        let scene = generate_scene(&cfg).map_err(val_err)?;
        let name = format!("scene_{i:04}.json");
        let mut json = serde_json::to_string_pretty(&scene).map_err(run_err)?;
        json.push('\n');
        write_file(&out.join(&name), &json)?;
        files.push(name);
    }

    #[derive(Serialize)]
    struct Manifest<'a> {
        config_hash: &'a str,
        config: &'a GenResolved,
        files: &'a [String],
    }
    let mut manifest =
        serde_json::to_string_pretty(&Manifest { config_hash: &hash, config: &resolved, files: &files })
            .map_err(run_err)?;
    manifest.push('\n');
    write_file(&out.join("manifest.json"), &manifest)?;
    println!("config_hash={hash}");
    for f in &files {
        println!("{}", out.join(f).display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Scene loading shared by train/run/ablate

fn load_scenes(dir: &Path) -> CliResult<Vec<(String, Scene)>> {
    let entries = fs::read_dir(dir)
        .map_err(|e| CliError::validation(format!("cannot read scene dir {}: {e}", dir.display())))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("scene_") && n.ends_with(".json"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(CliError::validation(format!(
            "no scene_*.json files in {}",
            dir.display()
        )));
    }
    let mut scenes = Vec::with_capacity(names.len());
    for name in names {
        let text = fs::read_to_string(dir.join(&name))
            .map_err(|e| CliError::validation(format!("cannot read {name}: {e}")))?;
        let scene: Scene = serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("bad scene file {name}: {e}")))?;
        let stem = name.trim_end_matches(".json").to_string();
        scenes.push((stem, scene));
    }
    Ok(scenes)
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Clone, Serialize)]
struct TrainResolved {
    seed: u64,
    models: String,
    latency: String,
    steps: usize,
    lr: f64,
    batch_size: usize,
    m_dim: usize,
}

fn loss_csv(hash: &str, curve: &[f64], start_step: usize) -> String {
    let mut out = format!("# config_hash={hash}\nstep,loss\n");
    for (i, loss) in curve.iter().enumerate() {
        out.push_str(&format!("{},{loss:.12e}\n", start_step + i));
    }
    out
}

fn append_loss_csv(path: &Path, hash: &str, curve: &[f64], start_step: usize) -> CliResult<()> {
    if start_step > 0 && path.exists() {
        let mut text = fs::read_to_string(path).map_err(run_err)?;
        for (i, loss) in curve.iter().enumerate() {
            text.push_str(&format!("{},{loss:.12e}\n", start_step + i));
        }
        write_file(path, &text)
    } else {
        write_file(path, &loss_csv(hash, curve, start_step))
    }
}

fn map_train_err(e: TrainError) -> CliError {
    match e {
        TrainError::Diverged { .. } => CliError::runtime(format!("training diverged: {e}")),
        TrainError::EmptyDataset => CliError::validation(e.to_string()),
    }
}

fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let file = load_file_config(&args.common.config)?;
    let seed = resolve_seed(args.common.seed, &file)?;
    let out = args.common.out.clone().or(file.output_dir.clone()).unwrap_or_else(|| "models".into());
    let latency_spec = args
        .latency
        .clone()
        .or(file.latency.clone())
        .unwrap_or_else(|| "constant:0.5".into());
    let latency = parse_latency(&latency_spec)?;
    let m_dim = args.m_dim.or(file.m_dim).unwrap_or(32);
    let tcfg = TrainConfig {
        steps: args.steps.or(file.steps).unwrap_or(TrainConfig::default().steps),
        lr: args.lr.or(file.lr).unwrap_or(TrainConfig::default().lr),
        batch_size: args.batch_size.or(file.batch_size).unwrap_or(TrainConfig::default().batch_size),
        seed,
        ..TrainConfig::default()
    };
    let resolved = TrainResolved {
        seed,
        models: args.models.clone(),
        latency: latency_spec,
        steps: tcfg.steps,
        lr: tcfg.lr,
        batch_size: tcfg.batch_size,
        m_dim,
    };
    let hash = config_hash(&resolved);
    let scenes = load_scenes(&args.scenes_dir)?;
    ensure_dir(&out)?;

    let mean_dt = mean_latency(&latency);
    let train_prop = args.models == "all" || args.models == "propagator";
    let train_mln_too = args.models == "all" || args.models == "mln";
    let train_pred = args.models == "all" || args.models == "predictor";

    if train_prop || train_mln_too {
        let mut data = Vec::new();
        for (_, scene) in &scenes {
            data.extend(build_prop_samples(scene, 2.0, mean_dt, m_dim, seed).map_err(run_err)?);
        }
        if train_prop {
            let pcfg = PropagatorConfig { m_dim, ..Default::default() };
            let ckpt = out.join("propagator.ckpt");
            let (mut params, mut state, start) = if args.resume && ckpt.exists() {
                let (vec, state) = load_checkpoint(&ckpt).map_err(val_err)?;
                let mut p = PropagatorParams::init(&pcfg, &mut Rng::new(seed));
                if vec.len() != p.param_count() {
                    return Err(CliError::validation(
                        "checkpoint does not match the configured propagator shape",
                    ));
                }
                p.load_from_vec(&vec);
                let start = state.step;
                (p, state, start)
            } else {
                let p = PropagatorParams::init(&pcfg, &mut Rng::new(seed));
                (PropagatorParams::clone(&p), TrainState::new(p.param_count()), 0)
            };
            let curve =
                train_propagator_resume(&data, &mut params, &tcfg, &mut state, args.stop_after)
                    .map_err(map_train_err)?;
            save_checkpoint(&ckpt, &params.params_to_vec(), &state).map_err(run_err)?;
            save_propagator(&out.join("propagator.bin"), &params).map_err(run_err)?;
            append_loss_csv(&out.join("loss_propagator.csv"), &hash, &curve, start)?;
            println!(
                "propagator: steps {}..{} final loss {:.6e}",
                start,
                state.step,
                curve.last().copied().unwrap_or(f64::NAN)
            );
        }
        if train_mln_too {
            let mut params = MlnParams::init(m_dim, 32, &mut Rng::new(seed).split(0x31a));
            let curve = train_mln(&data, &mut params, &tcfg).map_err(map_train_err)?;
            save_mln(&out.join("mln.bin"), &params, m_dim, 32).map_err(run_err)?;
            write_file(&out.join("loss_mln.csv"), &loss_csv(&hash, &curve, 0))?;
            println!("mln: final loss {:.6e}", curve.last().copied().unwrap_or(f64::NAN));
        }
    }

    if train_pred {
        let mut samples = Vec::new();
        let pcfg = PredictorConfig { m_dim, ..Default::default() };
        for (_, scene) in &scenes {
            samples.extend(
                build_pred_samples(scene, 2.0, pcfg.waypoints, pcfg.horizon, m_dim)
                    .map_err(run_err)?,
            );
        }
        let owned: Vec<Scene> = scenes.iter().map(|(_, s)| s.clone()).collect();
        let endpoints = collect_endpoints(&owned, 2.0, DEFAULT_HORIZON).map_err(run_err)?;
        let intentions = IntentionPointSet::from_endpoints(
            &endpoints,
            DEFAULT_K_INT,
            DEFAULT_HORIZON,
            &mut Rng::new(seed).split(0x1f2),
        )
        .map_err(run_err)?;
        let ckpt = out.join("predictor.ckpt");
        let (mut params, mut state, start) = if args.resume && ckpt.exists() {
            let (vec, state) = load_checkpoint(&ckpt).map_err(val_err)?;
            let mut p = PredictorParams::init(&pcfg, &mut Rng::new(seed).split(0x1f3));
            if vec.len() != p.param_count() {
                return Err(CliError::validation(
                    "checkpoint does not match the configured predictor shape",
                ));
            }
            p.load_from_vec(&vec);
            let start = state.step;
            (p, state, start)
        } else {
            let p = PredictorParams::init(&pcfg, &mut Rng::new(seed).split(0x1f3));
            let n = p.param_count();
            (p, TrainState::new(n), 0)
        };
        let curve = train_predictor_resume(
            &samples,
            &intentions,
            &mut params,
            &tcfg,
            true,
            &mut state,
            args.stop_after,
        )
        .map_err(map_train_err)?;
        save_checkpoint(&ckpt, &params.params_to_vec(), &state).map_err(run_err)?;
        save_predictor(&out.join("predictor.bin"), &params).map_err(run_err)?;
        save_intentions(&out.join("intentions.bin"), &intentions).map_err(run_err)?;
        append_loss_csv(&out.join("loss_predictor.csv"), &hash, &curve, start)?;
        println!(
            "predictor: steps {}..{} final loss {:.6e}",
            start,
            state.step,
            curve.last().copied().unwrap_or(f64::NAN)
        );
    }
    println!("config_hash={hash}");
    Ok(())
}

// ---------------------------------------------------------------------------
// run

#[derive(Debug, Clone, Serialize)]
struct RunResolved {
    seed: u64,
    latency: String,
    compensation: Vec<String>,
    alignment: String,
    noise: String,
    frame_rate: f64,
    eval_rate: f64,
    m_dim: usize,
}

struct LoadedModels {
    propagator: Option<PropagatorParams>,
    mln: Option<MlnParams>,
    predictor: Option<PredictorBundle>,
}

fn load_models(dir: &Option<PathBuf>, need_align: &str, need_pred: bool) -> CliResult<LoadedModels> {
    let mut models = LoadedModels { propagator: None, mln: None, predictor: None };
    let dir = match dir {
        Some(d) => d,
        None => {
            if need_align != "none" || need_pred {
                return Err(CliError::validation(
                    "the selected variants need trained models; pass --models-dir",
                ));
            }
            return Ok(models);
        }
    };
    if need_align == "ode" {
        models.propagator = Some(load_propagator(&dir.join("propagator.bin")).map_err(val_err)?);
    }
    if need_align == "mln" {
        models.mln = Some(load_mln(&dir.join("mln.bin")).map_err(val_err)?);
    }
    if need_pred {
        models.predictor = Some(PredictorBundle {
            params: load_predictor(&dir.join("predictor.bin")).map_err(val_err)?,
            intentions: load_intentions(&dir.join("intentions.bin")).map_err(val_err)?,
        });
    }
    Ok(models)
}

fn alignment_variant(label: &str, models: &LoadedModels) -> CliResult<AlignmentVariant> {
    match label {
        "none" => Ok(AlignmentVariant::None),
        "mln" => Ok(AlignmentVariant::Mln(models.mln.clone().ok_or_else(|| {
            CliError::validation("alignment=mln needs a trained MLN model".to_string())
        })?)),
        "ode" => Ok(AlignmentVariant::Ode(models.propagator.clone().ok_or_else(|| {
            CliError::validation("alignment=ode needs a trained propagator".to_string())
        })?)),
        other => Err(CliError::validation(format!("unknown alignment '{other}'"))),
    }
}

/// Schedule derivation is pure in (seed, scene seed) so results do not depend
/// on evaluation order or worker count.
fn scene_schedule(
    scene: &Scene,
    latency: &LatencyModel,
    frame_rate: f64,
    eval_rate: f64,
    seed: u64,
) -> CliResult<RunSchedule> {
    let frames = frames_at_rate(frame_rate, scene.duration);
    let mut rng = Rng::new(seed).split(0x5c4e).split(scene.seed);
    schedule_run(&frames, latency, eval_rate, &mut rng).map_err(run_err)
}

fn cmd_run(args: &RunArgs) -> CliResult<()> {
    let file = load_file_config(&args.common.config)?;
    let seed = resolve_seed(args.common.seed, &file)?;
    let out = args.common.out.clone().or(file.output_dir.clone()).unwrap_or_else(|| "runs".into());
    let latency_spec =
        args.latency.clone().or(file.latency.clone()).unwrap_or_else(|| "constant:0.5".into());
    let latency = parse_latency(&latency_spec)?;
    let comp_specs: Vec<String> = if !args.compensation.is_empty() {
        args.compensation.clone()
    } else {
        file.compensation.clone().unwrap_or_else(|| vec!["zero_hold".into()])
    };
    let strategies: Vec<CompensationStrategy> =
        comp_specs.iter().map(|s| parse_compensation(s)).collect::<CliResult<_>>()?;
    let align_label = args.alignment.clone().or(file.alignment.clone()).unwrap_or_else(|| "none".into());
    let noise_spec = args.noise.clone().or(file.noise.clone()).unwrap_or_else(|| "default".into());
    let noise = parse_noise(&noise_spec)?;
    let frame_rate = args.frame_rate.or(file.frame_rate).unwrap_or(12.0);
    let eval_rate = args.eval_rate.or(file.eval_rate).unwrap_or(12.0);
    let m_dim = file.m_dim.unwrap_or(32);

    let resolved = RunResolved {
        seed,
        latency: latency_spec.clone(),
        compensation: comp_specs.clone(),
        alignment: align_label.clone(),
        noise: noise_spec,
        frame_rate,
        eval_rate,
        m_dim,
    };
    let hash = config_hash(&resolved);

    let need_pred = strategies.iter().any(|s| matches!(s, CompensationStrategy::Trajectory));
    let models = load_models(&args.models_dir, &align_label, need_pred)?;
    let alignment = alignment_variant(&align_label, &models)?;

    let scenes = load_scenes(&args.scenes_dir)?;
    ensure_dir(&out)?;

    // Work items are fully ordered up front; rayon preserves indexing, so the
    // collected outputs are identical for any --jobs value.
    let work: Vec<(usize, usize)> = (0..scenes.len())
        .flat_map(|si| (0..strategies.len()).map(move |ci| (si, ci)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(run_err)?;
    let results: Vec<CliResult<(String, String, MetricsReport)>> = pool.install(|| {
        work.par_iter()
            .map(|&(si, ci)| {
                let (stem, scene) = &scenes[si];
                let strategy = &strategies[ci];
                let sched = scene_schedule(scene, &latency, frame_rate, eval_rate, seed)?;
                let pipe = PipelineConfig {
                    strategy: strategy.clone(),
                    alignment: alignment.clone(),
                    predictor: models.predictor.clone(),
                    noise: noise.clone(),
                    m_dim,
                    seed,
                    ..PipelineConfig::baseline(strategy.clone(), noise.clone(), seed)
                };
                let provenance = Provenance {
                    config_hash: hash.clone(),
                    seed,
                    latency_model: latency_spec.clone(),
                    strategy: strategy.to_string(),
                };
                let report = streaming_evaluate(scene, &sched, &pipe, provenance).map_err(run_err)?;
                Ok((stem.clone(), strategy.to_string(), report))
            })
            .collect()
    });

    let mut csv = format!("# config_hash={hash}\n{}\n", MetricsReport::csv_header());
    for r in results {
        let (stem, strategy, report) = r?;
        let run_id = format!("{stem}:{strategy}");
        csv.push_str(&report.csv_row(&run_id));
        csv.push('\n');
        let mut json = serde_json::to_string_pretty(&report).map_err(run_err)?;
        json.push('\n');
        write_file(&out.join(format!("{stem}_{strategy}.report.json")), &json)?;
    }
    write_file(&out.join("summary.csv"), &csv)?;
    println!("config_hash={hash}");
    println!("{}", out.join("summary.csv").display());
    Ok(())
}

// ---------------------------------------------------------------------------
// ablate

const ALIGNMENT_ROWS: [&str; 3] = ["none", "mln", "ode"];

fn compensation_rows() -> Vec<(String, CompensationStrategy)> {
    vec![
        ("zero_hold".into(), CompensationStrategy::ZeroHold),
        ("forecasting:0.5".into(), CompensationStrategy::Forecasting { fixed_horizon: 0.5 }),
        ("velocity_based".into(), CompensationStrategy::VelocityBased),
        ("trajectory".into(), CompensationStrategy::Trajectory),
    ]
}

#[derive(Debug, Clone, Serialize)]
struct AblateResolved {
    seed: u64,
    latency: String,
    noise: String,
    frame_rate: f64,
    eval_rate: f64,
    m_dim: usize,
    train_steps: usize,
}

#[derive(Debug, Clone, Default)]
struct RowAgg {
    map: f64,
    mate: f64,
    mase: f64,
    maoe: f64,
    n: usize,
}

impl RowAgg {
    fn add(&mut self, r: &MetricsReport) {
        self.map += r.map;
        self.mate += r.mate;
        self.mase += r.mase;
        self.maoe += r.maoe;
        self.n += 1;
    }
    fn mean(&self) -> [f64; 4] {
        let n = self.n.max(1) as f64;
        [self.map / n, self.mate / n, self.mase / n, self.maoe / n]
    }
}

/// Train the three model blobs in-process on the given scenes when no
/// models directory was supplied.
fn ablate_models(
    scenes: &[(String, Scene)],
    mean_dt: f64,
    m_dim: usize,
    steps: usize,
    seed: u64,
) -> CliResult<(PropagatorParams, MlnParams, PredictorBundle)> {
    let tcfg = TrainConfig { steps, batch_size: 64, seed, ..TrainConfig::default() };
    let mut prop_data = Vec::new();
    for (_, scene) in scenes {
        prop_data.extend(build_prop_samples(scene, 2.0, mean_dt, m_dim, seed).map_err(run_err)?);
    }
    let pcfg = PropagatorConfig { m_dim, ..Default::default() };
    let mut prop = PropagatorParams::init(&pcfg, &mut Rng::new(seed));
    let mut state = TrainState::new(prop.param_count());
    train_propagator_resume(&prop_data, &mut prop, &tcfg, &mut state, None).map_err(map_train_err)?;
    let mut mln = MlnParams::init(m_dim, 32, &mut Rng::new(seed).split(0x31a));
    train_mln(&prop_data, &mut mln, &tcfg).map_err(map_train_err)?;

    let prcfg = PredictorConfig { m_dim, ..Default::default() };
    let mut samples = Vec::new();
    for (_, scene) in scenes {
        samples.extend(
            build_pred_samples(scene, 2.0, prcfg.waypoints, prcfg.horizon, m_dim).map_err(run_err)?,
        );
    }
    let owned: Vec<Scene> = scenes.iter().map(|(_, s)| s.clone()).collect();
    let endpoints = collect_endpoints(&owned, 2.0, DEFAULT_HORIZON).map_err(run_err)?;
    let intentions = IntentionPointSet::from_endpoints(
        &endpoints,
        DEFAULT_K_INT,
        DEFAULT_HORIZON,
        &mut Rng::new(seed).split(0x1f2),
    )
    .map_err(run_err)?;
    let mut pred = PredictorParams::init(&prcfg, &mut Rng::new(seed).split(0x1f3));
    let mut pstate = TrainState::new(pred.param_count());
    train_predictor_resume(&samples, &intentions, &mut pred, &tcfg, true, &mut pstate, None)
        .map_err(map_train_err)?;
    Ok((prop, mln, PredictorBundle { params: pred, intentions }))
}

fn cmd_ablate(args: &AblateArgs) -> CliResult<()> {
    let file = load_file_config(&args.common.config)?;
    let seed = resolve_seed(args.common.seed, &file)?;
    let out = args.common.out.clone().or(file.output_dir.clone()).unwrap_or_else(|| "ablation".into());
    let latency_spec =
        args.latency.clone().or(file.latency.clone()).unwrap_or_else(|| "constant:0.5".into());
    let latency = parse_latency(&latency_spec)?;
    let noise_spec = args.noise.clone().or(file.noise.clone()).unwrap_or_else(|| "default".into());
    let noise = parse_noise(&noise_spec)?;
    let frame_rate = args.frame_rate.or(file.frame_rate).unwrap_or(12.0);
    let eval_rate = args.eval_rate.or(file.eval_rate).unwrap_or(12.0);
    let m_dim = file.m_dim.unwrap_or(32);
    let train_steps = file.steps.unwrap_or(400);

    let resolved = AblateResolved {
        seed,
        latency: latency_spec.clone(),
        noise: noise_spec,
        frame_rate,
        eval_rate,
        m_dim,
        train_steps,
    };
    let hash = config_hash(&resolved);
    let scenes = load_scenes(&args.scenes_dir)?;
    ensure_dir(&out)?;

    let (prop, mln, predictor) = match &args.models_dir {
        Some(dir) => (
            load_propagator(&dir.join("propagator.bin")).map_err(val_err)?,
            load_mln(&dir.join("mln.bin")).map_err(val_err)?,
            PredictorBundle {
                params: load_predictor(&dir.join("predictor.bin")).map_err(val_err)?,
                intentions: load_intentions(&dir.join("intentions.bin")).map_err(val_err)?,
            },
        ),
        None => ablate_models(&scenes, mean_latency(&latency), m_dim, train_steps, seed)?,
    };

    // Alignment sweep holds compensation at velocity_based; compensation
    // sweep holds alignment at none, isolating each axis.
    struct Cell {
        table: usize,
        row: usize,
        alignment: AlignmentVariant,
        strategy: CompensationStrategy,
    }
    let mut cells = Vec::new();
    for (row, label) in ALIGNMENT_ROWS.iter().enumerate() {
        let alignment = match *label {
            "none" => AlignmentVariant::None,
            "mln" => AlignmentVariant::Mln(mln.clone()),
            _ => AlignmentVariant::Ode(prop.clone()),
        };
        cells.push(Cell { table: 0, row, alignment, strategy: CompensationStrategy::VelocityBased });
    }
    for (row, (_, strategy)) in compensation_rows().into_iter().enumerate() {
        cells.push(Cell { table: 1, row, alignment: AlignmentVariant::None, strategy });
    }

    let work: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|ci| (0..scenes.len()).map(move |si| (ci, si)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(run_err)?;
    let results: Vec<CliResult<(usize, MetricsReport)>> = pool.install(|| {
        work.par_iter()
            .map(|&(ci, si)| {
                let cell = &cells[ci];
                let (_, scene) = &scenes[si];
                let sched = scene_schedule(scene, &latency, frame_rate, eval_rate, seed)?;
                let pipe = PipelineConfig {
                    strategy: cell.strategy.clone(),
                    alignment: cell.alignment.clone(),
                    predictor: Some(predictor.clone()),
                    noise: noise.clone(),
                    m_dim,
                    seed,
                    ..PipelineConfig::baseline(cell.strategy.clone(), noise.clone(), seed)
                };
                let provenance = Provenance {
                    config_hash: hash.clone(),
                    seed,
                    latency_model: latency_spec.clone(),
                    strategy: cell.strategy.to_string(),
                };
                let report = streaming_evaluate(scene, &sched, &pipe, provenance).map_err(run_err)?;
                Ok((ci, report))
            })
            .collect()
    });

    let mut aggs: Vec<RowAgg> = (0..cells.len()).map(|_| RowAgg::default()).collect();
    for r in results {
        let (ci, report) = r?;
        aggs[ci].add(&report);
    }

    let comp_labels: Vec<String> = compensation_rows().into_iter().map(|(l, _)| l).collect();
    let row_label = |cell: &Cell| -> String {
        if cell.table == 0 {
            ALIGNMENT_ROWS[cell.row].to_string()
        } else {
            comp_labels[cell.row].clone()
        }
    };

    let (text, fname) = if args.format == "csv" {
        let mut text = format!("# config_hash={hash}\ntable,variant,mAP,mATE,mASE,mAOE\n");
        for (cell, agg) in cells.iter().zip(&aggs) {
            let [map, mate, mase, maoe] = agg.mean();
            let table = if cell.table == 0 { "alignment" } else { "compensation" };
            text.push_str(&format!(
                "{table},{},{map:.6},{mate:.6},{mase:.6},{maoe:.6}\n",
                row_label(cell)
            ));
        }
        (text, "ablation.csv")
    } else {
        let mut text = format!("<!-- config_hash={hash} -->\n\n## Temporal alignment (velocity_based compensation)\n\n| variant | mAP | mATE | mASE | mAOE |\n|---|---|---|---|---|\n");
        for (cell, agg) in cells.iter().zip(&aggs).filter(|(c, _)| c.table == 0) {
            let [map, mate, mase, maoe] = agg.mean();
            text.push_str(&format!(
                "| {} | {map:.4} | {mate:.4} | {mase:.4} | {maoe:.4} |\n",
                row_label(cell)
            ));
        }
        text.push_str("\n## Motion compensation (no alignment)\n\n| variant | mAP | mATE | mASE | mAOE |\n|---|---|---|---|---|\n");
        for (cell, agg) in cells.iter().zip(&aggs).filter(|(c, _)| c.table == 1) {
            let [map, mate, mase, maoe] = agg.mean();
            text.push_str(&format!(
                "| {} | {map:.4} | {mate:.4} | {mase:.4} | {maoe:.4} |\n",
                row_label(cell)
            ));
        }
        (text, "ablation.md")
    };
    write_file(&out.join(fname), &text)?;
    println!("config_hash={hash}");
    println!("{}", out.join(fname).display());

    if args.check_ordering {
        let zero_hold = aggs[cells.iter().position(|c| c.table == 1 && c.row == 0).unwrap()].mean()[0];
        let trajectory = aggs[cells.iter().position(|c| c.table == 1 && c.row == 3).unwrap()].mean()[0];
        if trajectory <= zero_hold {
            return Err(CliError::runtime(format!(
                "ordering check failed: mAP(trajectory) {trajectory:.4} <= mAP(zero_hold) {zero_hold:.4}"
            )));
        }
        println!("ordering check passed: trajectory {trajectory:.4} > zero_hold {zero_hold:.4}");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// report

fn cmd_report(args: &ReportArgs) -> CliResult<()> {
    let entries = fs::read_dir(&args.input)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", args.input.display())))?;
    let mut reports: BTreeMap<String, MetricsReport> = BTreeMap::new();
    for entry in entries.filter_map(|e| e.ok()) {
        let name = entry.file_name().to_string_lossy().into_owned();
        if !name.ends_with(".report.json") {
            continue;
        }
        let text = fs::read_to_string(entry.path()).map_err(val_err)?;
        let report: MetricsReport = serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("bad report {name}: {e}")))?;
        reports.insert(name.trim_end_matches(".report.json").to_string(), report);
    }
    if reports.is_empty() {
        return Err(CliError::validation(format!(
            "no *.report.json files in {}",
            args.input.display()
        )));
    }
    let mut text = String::from(
        "| run | strategy | latency | mAP | mATE | mASE | mAOE | composite |\n|---|---|---|---|---|---|---|---|\n",
    );
    for (name, r) in &reports {
        text.push_str(&format!(
            "| {name} | {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
            r.provenance.strategy, r.provenance.latency_model, r.map, r.mate, r.mase, r.maoe,
            r.composite
        ));
    }
    text.push_str(
        "\ncomposite = (5·mAP + Σ_e (1 − min(1, e))) / 8 over {mATE, mASE, mAOE}; \
         the attribute and velocity terms of the reference composite are omitted.\n",
    );
    match &args.out {
        Some(p) => write_file(p, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with success status.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let result = match &cli.cmd {
        Cmd::Gen(args) => cmd_gen(args),
        Cmd::Train(args) => cmd_train(args),
        Cmd::Run(args) => cmd_run(args),
        Cmd::Ablate(args) => cmd_ablate(args),
        Cmd::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
