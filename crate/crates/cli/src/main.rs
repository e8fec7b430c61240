mod pipeline;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rsunroll::ensemble::MergeWeights;
use rsunroll::interp::plugin::serve_request;
use rsunroll::interp::{BuiltinInterpolator, Interpolator, OracleInterpolator, PluginInterpolator, ReconstructOptions};
use rsunroll::io::{read_clip, write_clip, BitDepth};
use rsunroll::metrics::{evaluate, misalignment_viz, recurrence_stats_with};
use rsunroll::patches::NnMode;
use rsunroll::refine::{Lambda, RefineConfig};
use rsunroll::synth::{
    make_pair, make_training_set_with, Geometry, MotionFamily, PairedSample, SceneSpec, SceneVolume,
};
use rsunroll::{Error, Shutter, VideoClip, VolumeSource};
use serde_json::json;

use crate::pipeline::UnrollPlan;

/// Rolling-shutter video rectification.
#[derive(Parser, Debug)]
#[command(name = "rsunroll", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a scene spec into paired GS/RS frame directories.
    Synth(SynthArgs),
    /// Generate a directory of random paired samples.
    Dataset(DatasetArgs),
    /// Rectify an RS clip: proposals, merge, optional refinement.
    Unroll(UnrollArgs),
    /// Merge a proposals directory written by `unroll`.
    Merge(MergeArgs),
    /// Run the refinement stage on its own.
    Refine(RefineArgs),
    /// Score a predicted GS clip against ground truth.
    Eval(EvalArgs),
    /// Patch-recurrence statistics between a GS and an RS clip.
    Stats(StatsArgs),
    /// Answer one interpolator plugin request with the built-in interpolator.
    ServePlugin {
        /// Request directory.
        dir: PathBuf,
    },
}

#[derive(Args, Debug)]
struct DepthArgs {
    /// Write 16-bit PNG artifacts.
    #[arg(long)]
    deep: bool,
}

impl DepthArgs {
    fn depth(&self) -> BitDepth {
        if self.deep {
            BitDepth::Sixteen
        } else {
            BitDepth::Eight
        }
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Scene spec (TOML).
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    depth: DepthArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Family {
    Affine,
    Translation,
    Rotation,
    Zoom,
    NonRigid,
}

impl From<Family> for MotionFamily {
    fn from(f: Family) -> Self {
        match f {
            Family::Affine => MotionFamily::Affine,
            Family::Translation => MotionFamily::Translation,
            Family::Rotation => MotionFamily::Rotation,
            Family::Zoom => MotionFamily::Zoom,
            Family::NonRigid => MotionFamily::NonRigid,
        }
    }
}

#[derive(Args, Debug)]
struct DatasetArgs {
    #[arg(long, value_enum, default_value_t = Family::Affine)]
    family: Family,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Frame width and height.
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long, default_value_t = 12)]
    frames: usize,
    #[arg(long, default_value_t = 3)]
    channels: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    depth: DepthArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InterpKind {
    Builtin,
    Oracle,
    Plugin,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NnKind {
    Exact,
    Approx,
}

#[derive(Args, Debug)]
struct RefineFlags {
    #[arg(long, default_value_t = 5)]
    refine_iters: usize,
    /// Validity weight: a number, `auto` (largest balanced weight) or `ratio` (first-solve term ratio).
    #[arg(long, default_value = "auto")]
    lambda: String,
    #[arg(long, default_value_t = 0.9)]
    alpha_edge: f64,
    #[arg(long, default_value_t = 0.1)]
    alpha_flat: f64,
    #[arg(long, value_enum, default_value_t = NnKind::Exact)]
    nn_mode: NnKind,
    /// Approximation factor for `--nn-mode approx`.
    #[arg(long, default_value_t = 0.05)]
    nn_eps: f64,
    /// Only match RS patches within this many rows of the query row.
    #[arg(long)]
    row_window: Option<usize>,
}

impl RefineFlags {
    fn config(&self) -> Result<RefineConfig> {
        let lambda =
            match self.lambda.as_str() {
                "auto" => Lambda::Auto,
                "ratio" => Lambda::Ratio,
                other => Lambda::Fixed(other.parse().map_err(|_| {
                    Error::Config(format!("--lambda must be `auto`, `ratio` or a number, got {other}"))
                })?),
            };
        let cfg = RefineConfig {
            iterations: self.refine_iters,
            lambda,
            alpha_edge: self.alpha_edge,
            alpha_flat: self.alpha_flat,
            nn_mode: match self.nn_mode {
                NnKind::Exact => NnMode::Exact,
                NnKind::Approx => NnMode::Approximate { eps: self.nn_eps },
            },
            row_window: self.row_window,
            ..RefineConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct UnrollArgs {
    /// RS frame directory.
    rs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "interp", value_enum, default_value_t = InterpKind::Builtin)]
    interp: InterpKind,
    /// Scene spec backing the oracle interpolator.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Seed the oracle scene was rendered with.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Plugin executable; the request directory is appended as its last argument.
    #[arg(long)]
    plugin: Option<PathBuf>,
    #[arg(long = "plugin-arg", allow_hyphen_values = true)]
    plugin_args: Vec<String>,
    #[arg(long)]
    plugin_batch: Option<usize>,
    /// The plugin tolerates concurrent invocations.
    #[arg(long)]
    plugin_concurrent: bool,
    /// Interpolate only every `stride`-th row offset.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Merge weights file; omit to average the proposals.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    no_refine: bool,
    #[command(flatten)]
    refine: RefineFlags,
    #[command(flatten)]
    depth: DepthArgs,
}

#[derive(Args, Debug)]
struct MergeArgs {
    /// `proposals` directory written by `unroll`.
    proposals: PathBuf,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    depth: DepthArgs,
}

#[derive(Args, Debug)]
struct RefineArgs {
    /// Initial GS estimate.
    gs: PathBuf,
    /// RS clip supplying the patch pool.
    rs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    refine: RefineFlags,
    #[command(flatten)]
    depth: DepthArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    pred: PathBuf,
    gt: PathBuf,
    /// Frame directory of 0/1 masks, aligned with the ground truth.
    #[arg(long)]
    mask_dir: Option<PathBuf>,
    /// Skip this many leading ground-truth (and mask) frames.
    #[arg(long, default_value_t = 0)]
    gt_offset: usize,
    /// Write misalignment visualization frames here.
    #[arg(long)]
    viz: Option<PathBuf>,
    /// Also write the report to this file.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StatsArgs {
    gs: PathBuf,
    rs: PathBuf,
    /// Approximate NN search with this factor instead of exact search.
    #[arg(long)]
    approx: Option<f64>,
    /// Print JSON instead of key=value lines.
    #[arg(long)]
    json: bool,
}

fn read_scene(path: &Path) -> Result<SceneSpec> {
    if !path.exists() {
        return Err(Error::MissingResource(path.to_path_buf()).into());
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(SceneSpec::from_toml(&text)?)
}

fn write_sample(out: &Path, spec: &SceneSpec, sample: &PairedSample, depth: BitDepth) -> Result<()> {
    write_clip(&out.join("gs"), &sample.gs, depth)?;
    write_clip(&out.join("rs"), &sample.rs, depth)?;
    if let Some(masks) = &sample.occlusion_masks {
        let clip = VideoClip::new(masks.clone(), Shutter::Rolling)?;
        write_clip(&out.join("masks"), &clip, BitDepth::Eight)?;
    }
    fs::write(out.join("scene.toml"), spec.to_toml())?;
    for w in &sample.warnings {
        log::warn!("{}: {w}", out.display());
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let spec = read_scene(&a.scene)?;
    let sample = make_pair(&spec, a.seed)?;
    write_sample(&a.out, &spec, &sample, a.depth.depth())?;
    let scene = SceneVolume::new(&spec, a.seed)?;
    let r = scene.oversampling() as f64;
    let elements: Vec<Vec<[f64; 2]>> = (0..spec.elements.len())
        .map(|i| {
            (0..spec.stored_frames())
                .map(|s| scene.element_center(i, s as f64 / r))
                .collect()
        })
        .collect();
    let sidecar = json!({
        "seed": a.seed,
        "oversampling": spec.oversampling,
        "rows": spec.rows(),
        "elements": elements,
        "warnings": sample.warnings,
    });
    fs::write(a.out.join("trajectory.json"), serde_json::to_string(&sidecar)? + "\n")?;
    Ok(())
}

fn cmd_dataset(a: &DatasetArgs) -> Result<()> {
    let geom = Geometry {
        width: a.size,
        height: a.size,
        channels: a.channels,
        frames: a.frames,
        oversampling: a.size,
    };
    let samples = make_training_set_with(&geom, a.count, a.seed, a.family.into())?;
    for (i, s) in samples.iter().enumerate() {
        write_sample(&a.out.join(format!("sample_{i:04}")), &s.provenance, s, a.depth.depth())?;
    }
    println!("wrote {} samples to {}", samples.len(), a.out.display());
    Ok(())
}

fn load_weights(path: Option<&Path>) -> Result<Option<MergeWeights>> {
    path.map(|p| MergeWeights::load(p).map_err(Into::into)).transpose()
}

fn interpolator(a: &UnrollArgs, rs: &VideoClip) -> Result<Box<dyn Interpolator>> {
    Ok(match a.interp {
        InterpKind::Builtin => Box::new(BuiltinInterpolator),
        InterpKind::Oracle => {
            let path = a
                .scene
                .as_ref()
                .ok_or_else(|| Error::Config("--interp oracle needs --scene".into()))?;
            let spec = read_scene(path)?;
            if spec.width != rs.width() || spec.height != rs.height() || spec.rows() != rs.rows {
                return Err(
                    Error::Config(format!("scene {} does not match the RS clip geometry", path.display())).into(),
                );
            }
            let vol = SceneVolume::new(&spec, a.seed)?;
            Box::new(OracleInterpolator::new(Arc::new(vol), spec.rows())?)
        }
        InterpKind::Plugin => {
            let program = a
                .plugin
                .clone()
                .ok_or_else(|| Error::Config("--interp plugin needs --plugin".into()))?;
            let mut p = PluginInterpolator::new(program, a.plugin_args.clone());
            p.max_batch = a.plugin_batch;
            p.concurrent = a.plugin_concurrent;
            Box::new(p)
        }
    })
}

fn cmd_unroll(a: &UnrollArgs) -> Result<()> {
    // Check cheap resources before any heavy work.
    let weights = load_weights(a.weights.as_deref())?;
    let refine = if a.no_refine { None } else { Some(a.refine.config()?) };
    let rs = pipeline::read_rs(&a.rs)?;
    let interp = interpolator(a, &rs)?;
    let plan = UnrollPlan {
        interp: interp.as_ref(),
        options: ReconstructOptions { stride: a.stride },
        weights,
        refine,
        depth: a.depth.depth(),
    };
    let out = pipeline::unroll(&rs, &plan, &a.out)?;
    println!(
        "wrote {} GS frames to {}",
        out.len(),
        a.out.join(pipeline::OUTPUT).display()
    );
    Ok(())
}

fn cmd_merge(a: &MergeArgs) -> Result<()> {
    let weights = load_weights(a.weights.as_deref())?;
    let clips = pipeline::read_proposals(&a.proposals)?;
    let (_, merged) = pipeline::merge_stage(&clips, weights.as_ref(), a.depth.depth())?;
    write_clip(&a.out, &merged, a.depth.depth())?;
    Ok(())
}

fn cmd_refine(a: &RefineArgs) -> Result<()> {
    let cfg = a.refine.config()?;
    let gs = read_clip(&a.gs)?;
    let rs = pipeline::read_rs(&a.rs)?;
    let out = pipeline::refine_stage(&gs, &rs, &cfg, a.depth.depth())?;
    write_clip(&a.out, &out, a.depth.depth())?;
    Ok(())
}

fn tail(clip: VideoClip, skip: usize) -> Result<VideoClip> {
    if skip == 0 {
        return Ok(clip);
    }
    if skip >= clip.len() {
        return Err(Error::Range(format!("cannot skip {skip} of {} frames", clip.len())).into());
    }
    Ok(VideoClip::new(clip.frames[skip..].to_vec(), clip.shutter)?)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let pred = read_clip(&a.pred)?;
    let gt = tail(read_clip(&a.gt)?, a.gt_offset)?;
    let masks = a
        .mask_dir
        .as_ref()
        .map(|d| tail(read_clip(d)?, a.gt_offset))
        .transpose()?;
    if let Some(m) = &masks {
        if m.len() != pred.len() {
            return Err(Error::Dimension(format!("{} masks for {} frames", m.len(), pred.len())).into());
        }
    }
    let mut config = BTreeMap::new();
    config.insert("pred".into(), a.pred.display().to_string());
    config.insert("gt".into(), a.gt.display().to_string());
    config.insert("gt_offset".into(), a.gt_offset.to_string());
    config.insert(
        "mask".into(),
        a.mask_dir.as_ref().map_or("none".into(), |d| d.display().to_string()),
    );
    let report = evaluate(&pred, &gt, masks.as_ref().map(|m| m.frames.as_slice()), config)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(path) = &a.report {
        fs::write(path, &text)?;
    }
    if let Some(dir) = &a.viz {
        write_clip(dir, &misalignment_viz(&gt, &pred)?, BitDepth::Eight)?;
    }
    Ok(())
}

fn cmd_stats(a: &StatsArgs) -> Result<()> {
    let gs = read_clip(&a.gs)?;
    let rs = read_clip(&a.rs)?;
    let mode = a.approx.map_or(NnMode::Exact, |eps| NnMode::Approximate { eps });
    let s = recurrence_stats_with(&gs, &rs, mode)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&s)?);
        return Ok(());
    }
    println!("patches={}", s.patch_count);
    println!("top_patches={}", s.top_count);
    println!("mean_ratio={:.6}", s.mean_ratio);
    println!("mean_ratio_all={:.6}", s.mean_ratio_all);
    println!("frac_le_1.1={:.6}", s.frac_le_1_1);
    println!("frac_le_1.5={:.6}", s.frac_le_1_5);
    for (q, r) in &s.quantiles {
        println!("quantile_{q}={r:.6}");
    }
    println!("unreliable={}", s.unreliable);
    Ok(())
}

/// Exit-code contract: 2 input/spec error, 3 missing resource, 4 invariant violation.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::MissingResource(_) => 3,
                Error::Invariant(_) => 4,
                Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 3,
                _ => 2,
            };
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::NotFound {
                return 3;
            }
        }
    }
    2
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Dataset(a) => cmd_dataset(a),
        Command::Unroll(a) => cmd_unroll(a),
        Command::Merge(a) => cmd_merge(a),
        Command::Refine(a) => cmd_refine(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Stats(a) => cmd_stats(a),
        Command::ServePlugin { dir } => Ok(serve_request(dir, &BuiltinInterpolator)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
