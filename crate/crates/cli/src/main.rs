//! `fswap`: synthetic fixtures, inversion, swapping, metrics and sweeps.
//!
//! Every command prints JSON (or CSV for `sweep`) on stdout. Failures print
//! `{"error": {"kind": ..., "message": ...}}` on stderr and exit nonzero.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fswap_core::io::encode_tensor;
use fswap_core::{
    flicker_index, invert, low_band_similarity, psnr, read_tensor, sample, swap_video, sweep, synth_video,
    write_frame_pgm, write_tensor, AttentionHooks, Condition, Denoiser, DenoiserKind, FatsChain, FlowField, FlowSource,
    FsaiAxis, InversionKind, PipelineConfig, SweepGrid, SyntheticKind, SyntheticSpec, Tensor4,
};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] fswap_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Config { path: PathBuf, source: serde_json::Error },
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Config { .. } => "config",
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "fswap",
    version,
    about = "Diffusion-based video face swapping on toy denoisers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic video, its ground-truth flow and both conditions.
    Synth(SynthCmd),
    /// Invert clean latents to DDIM noise.
    Invert(InvertCmd),
    /// Run the full swapping pipeline.
    Swap(SwapCmd),
    /// Report flicker, PSNR and low-band similarity of a video.
    Metrics(MetricsCmd),
    /// Run a ρ × α × T₁ grid on a synthetic video and write CSV.
    Sweep(SweepCmd),
}

#[derive(Args, Clone)]
struct SynthFlags {
    #[arg(long)]
    kind: Option<SyntheticKind>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    vx: Option<f32>,
    #[arg(long, allow_hyphen_values = true)]
    vy: Option<f32>,
    #[arg(long)]
    noise_std: Option<f64>,
    /// Seed of the synthetic content.
    #[arg(long)]
    synth_seed: Option<u64>,
}

impl SynthFlags {
    fn spec(&self) -> SyntheticSpec {
        let d = SyntheticSpec::default();
        SyntheticSpec {
            kind: self.kind.unwrap_or(d.kind),
            frames: self.frames.unwrap_or(d.frames),
            channels: self.channels.unwrap_or(d.channels),
            height: self.height.unwrap_or(d.height),
            width: self.width.unwrap_or(d.width),
            vx: self.vx.unwrap_or(d.vx),
            vy: self.vy.unwrap_or(d.vy),
            noise_std: self.noise_std.unwrap_or(d.noise_std),
            seed: self.synth_seed.unwrap_or(d.seed),
        }
    }
}

/// Pipeline settings: defaults, then `--config`, then individual flags.
#[derive(Args, Clone)]
struct PipelineFlags {
    /// JSON file with any subset of the pipeline config fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    /// Seed of the denoiser weights.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, visible_alias = "mode")]
    inversion: Option<InversionKind>,
    #[arg(long)]
    inversion_tol: Option<f64>,
    #[arg(long)]
    inversion_max_iter: Option<usize>,
    #[arg(long)]
    fsai_axis: Option<FsaiAxis>,
    #[arg(long)]
    fats_chain: Option<FatsChain>,
    /// `block` or `file:<path>` with a (n−1, 2, H, W) tensor.
    #[arg(long)]
    flow: Option<FlowSource>,
    #[arg(long)]
    flow_radius: Option<usize>,
    #[arg(long)]
    flow_block: Option<usize>,
    #[arg(long)]
    denoiser: Option<DenoiserKind>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    data_std: Option<f64>,
    #[arg(long)]
    attention_dim: Option<usize>,
    #[arg(long)]
    train_steps: Option<usize>,
    #[arg(long)]
    beta_start: Option<f64>,
    #[arg(long)]
    beta_end: Option<f64>,
}

impl PipelineFlags {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|source| CliError::Io {
                    path: path.clone(),
                    source,
                })?;
                serde_json::from_str(&text).map_err(|source| CliError::Config {
                    path: path.clone(),
                    source,
                })?
            }
            None => PipelineConfig::default(),
        };
        set(&mut cfg.steps, self.steps);
        set(&mut cfg.window, self.window);
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.inversion.mode, self.inversion);
        set(&mut cfg.inversion.tol, self.inversion_tol);
        set(&mut cfg.inversion.max_iter, self.inversion_max_iter);
        set(&mut cfg.fsai_axis, self.fsai_axis);
        set(&mut cfg.fats_chain, self.fats_chain);
        if let Some(f) = &self.flow {
            cfg.flow = f.clone();
        }
        match (&mut cfg.flow, self.flow_radius, self.flow_block) {
            (FlowSource::Block { radius, block }, r, b) => {
                set(radius, r);
                set(block, b);
            }
            (FlowSource::File { .. }, None, None) => {}
            (FlowSource::File { .. }, _, _) => {
                return Err(CliError::Usage("--flow-radius/--flow-block need --flow block".into()));
            }
        }
        set(&mut cfg.denoiser.kind, self.denoiser);
        set(&mut cfg.denoiser.gamma, self.gamma);
        set(&mut cfg.denoiser.data_std, self.data_std);
        set(&mut cfg.denoiser.dim, self.attention_dim);
        set(&mut cfg.schedule.train_steps, self.train_steps);
        set(&mut cfg.schedule.beta_start, self.beta_start);
        set(&mut cfg.schedule.beta_end, self.beta_end);
        Ok(cfg)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Args)]
struct SynthCmd {
    /// Output directory (created if missing).
    #[arg(long, default_value = "synth")]
    out: PathBuf,
    #[command(flatten)]
    synth: SynthFlags,
}

#[derive(Args)]
struct InvertCmd {
    /// Clean latents, (B, C, H, W) TNSR.
    #[arg(long)]
    input: PathBuf,
    /// Condition mean, (1, C, H, W) TNSR.
    #[arg(long)]
    cond: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Also sample back from the noise and report the round-trip error.
    #[arg(long)]
    roundtrip: bool,
    #[command(flatten)]
    pipeline: PipelineFlags,
}

#[derive(Args)]
struct SwapCmd {
    /// Directory written by `synth`; overrides the built-in synthetic fixture.
    #[arg(long)]
    input_dir: Option<PathBuf>,
    /// Target video, (n, C, H, W) TNSR.
    #[arg(long, requires_all = ["src", "tar"], conflicts_with = "input_dir")]
    target: Option<PathBuf>,
    #[arg(long, requires = "target")]
    src: Option<PathBuf>,
    #[arg(long, requires = "target")]
    tar: Option<PathBuf>,
    /// Ground-truth flow for an extra flicker figure.
    #[arg(long)]
    gt_flow: Option<PathBuf>,
    /// Where to write the swapped video.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Where to write one PGM per output frame (channel 0).
    #[arg(long)]
    frames_dir: Option<PathBuf>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    t1: Option<usize>,
    #[command(flatten)]
    pipeline: PipelineFlags,
    #[command(flatten)]
    synth: SynthFlags,
}

#[derive(Args)]
struct MetricsCmd {
    #[arg(long)]
    video: PathBuf,
    /// Flow between consecutive frames; optional for single-frame videos.
    #[arg(long)]
    flow: Option<PathBuf>,
    #[arg(long)]
    target: Option<PathBuf>,
    /// Source pattern, (1, C, H, W).
    #[arg(long)]
    src: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    rho: f64,
    /// PSNR peak; defaults to the target's dynamic range.
    #[arg(long)]
    peak: Option<f64>,
}

#[derive(Args)]
struct SweepCmd {
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    rho_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    alpha_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    t1_grid: Option<Vec<usize>>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    t1: Option<usize>,
    #[command(flatten)]
    pipeline: PipelineFlags,
    #[command(flatten)]
    synth: SynthFlags,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn sha256(t: &Tensor4) -> String {
    format!("{:x}", Sha256::digest(encode_tensor(t)))
}

fn write_frames(dir: &Path, video: &Tensor4) -> Result<()> {
    create_dir(dir)?;
    for b in 0..video.shape().frames {
        write_frame_pgm(dir.join(format!("frame_{b:04}.pgm")), video, b, 0)?;
    }
    Ok(())
}

fn read_flow(path: Option<&Path>, video: &Tensor4) -> Result<FlowField> {
    let s = video.shape();
    match path {
        Some(p) => Ok(FlowField::new(read_tensor(p)?)?),
        None if s.frames == 1 => Ok(FlowField::empty(s.height, s.width)),
        None => Err(CliError::Usage(
            "--flow is required for videos with more than one frame".into(),
        )),
    }
}

fn dynamic_range(t: &Tensor4) -> f64 {
    let (lo, hi) = t.min_max();
    if hi > lo {
        (hi - lo) as f64
    } else {
        1.0
    }
}

fn run_synth(cmd: &SynthCmd) -> Result<Value> {
    let spec = cmd.synth.spec();
    let data = synth_video(&spec)?;
    create_dir(&cmd.out)?;
    write_tensor(cmd.out.join("video.tnsr"), &data.video)?;
    write_tensor(cmd.out.join("tar.tnsr"), &data.tar.mu)?;
    write_tensor(cmd.out.join("src.tnsr"), &data.src.mu)?;
    if let Some(flow) = data.flow.as_tensor() {
        write_tensor(cmd.out.join("flow.tnsr"), flow)?;
    }
    write_frames(&cmd.out.join("frames"), &data.video)?;
    Ok(json!({
        "spec": spec,
        "out": cmd.out,
        "shape": data.video.shape().dims(),
        "video_sha256": sha256(&data.video),
    }))
}

fn run_invert(cmd: &InvertCmd) -> Result<Value> {
    let cfg = cmd.pipeline.config()?;
    cfg.validate()?;
    let z0 = read_tensor(&cmd.input)?;
    let cond = Condition::new("cond", read_tensor(&cmd.cond)?)?;
    let s = cfg.schedule.build()?;
    let d = Denoiser::new(cfg.denoiser_spec(), z0.shape().channels)?;
    let steps = s.timesteps(cfg.steps)?;
    let noise = invert(&d, &z0, &cond, &s, &steps, &cfg.inversion)?.last().clone();
    write_tensor(&cmd.output, &noise)?;
    let mut report = json!({
        "inversion": cfg.inversion,
        "steps": cfg.steps,
        "denoiser": cfg.denoiser_spec(),
        "shape": noise.shape().dims(),
        "output": cmd.output,
    });
    if cmd.roundtrip {
        let desc: Vec<usize> = steps.iter().rev().copied().collect();
        let back = sample(&d, &noise, &cond, &s, &desc, &mut AttentionHooks::none())?;
        report["roundtrip_max_error"] = json!(back.last().max_abs_diff(&z0)?);
    }
    Ok(report)
}

fn run_swap(cmd: &SwapCmd) -> Result<Value> {
    let mut cfg = cmd.pipeline.config()?;
    set(&mut cfg.rho, cmd.rho);
    set(&mut cfg.alpha, cmd.alpha);
    set(&mut cfg.t1, cmd.t1);
    cfg.validate()?;

    let (input, video, src, tar, gt_flow) = if let Some(dir) = &cmd.input_dir {
        let video = read_tensor(dir.join("video.tnsr"))?;
        let flow_path = dir.join("flow.tnsr");
        let gt = if flow_path.exists() {
            Some(FlowField::new(read_tensor(flow_path)?)?)
        } else {
            None
        };
        let src = Condition::new("src", read_tensor(dir.join("src.tnsr"))?)?;
        let tar = Condition::new("tar", read_tensor(dir.join("tar.tnsr"))?)?;
        (json!({ "dir": dir }), video, src, tar, gt)
    } else if let (Some(t), Some(s), Some(r)) = (&cmd.target, &cmd.src, &cmd.tar) {
        let video = read_tensor(t)?;
        let src = Condition::new("src", read_tensor(s)?)?;
        let tar = Condition::new("tar", read_tensor(r)?)?;
        (json!({ "target": t, "src": s, "tar": r }), video, src, tar, None)
    } else {
        let spec = cmd.synth.spec();
        let data = synth_video(&spec)?;
        (
            json!({ "synthetic": spec }),
            data.video,
            data.src,
            data.tar,
            Some(data.flow),
        )
    };
    let gt_flow = match &cmd.gt_flow {
        Some(p) => Some(FlowField::new(read_tensor(p)?)?),
        None => gt_flow,
    };

    let result = swap_video(&video, &src, &tar, &cfg)?;
    if let Some(path) = &cmd.output {
        write_tensor(path, &result.output)?;
    }
    if let Some(dir) = &cmd.frames_dir {
        write_frames(dir, &result.output)?;
    }
    let mut report = json!({
        "config": cfg,
        "input": input,
        "shape": result.output.shape().dims(),
        "output_sha256": sha256(&result.output),
        "metrics": result.metrics,
        "windows": result.windows,
    });
    if let Some(gt) = gt_flow {
        report["ground_truth_flicker_index"] = json!(flicker_index(&result.output, &gt)?);
    }
    if let Some(path) = &cmd.output {
        report["output"] = json!(path);
    }
    Ok(report)
}

fn run_metrics(cmd: &MetricsCmd) -> Result<Value> {
    let video = read_tensor(&cmd.video)?;
    let flow = read_flow(cmd.flow.as_deref(), &video)?;
    let mut report = json!({ "flicker_index": flicker_index(&video, &flow)? });
    if let Some(path) = &cmd.target {
        let target = read_tensor(path)?;
        let peak = cmd.peak.unwrap_or_else(|| dynamic_range(&target));
        report["psnr_to_target"] = json!(psnr(&video, &target, peak)?);
    }
    if let Some(path) = &cmd.src {
        report["low_band_similarity"] = json!(low_band_similarity(&video, &read_tensor(path)?, cmd.rho)?);
    }
    Ok(report)
}

fn run_sweep(cmd: &SweepCmd) -> Result<String> {
    let mut base = cmd.pipeline.config()?;
    set(&mut base.rho, cmd.rho);
    set(&mut base.alpha, cmd.alpha);
    set(&mut base.t1, cmd.t1);
    let grid = SweepGrid {
        rho: cmd.rho_grid.clone().unwrap_or_else(|| vec![base.rho]),
        alpha: cmd.alpha_grid.clone().unwrap_or_else(|| vec![base.alpha]),
        t1: cmd.t1_grid.clone().unwrap_or_else(|| vec![base.t1]),
    };
    let csv = sweep(&grid, &base, &cmd.synth.spec())?.to_csv()?;
    match &cmd.output {
        Some(path) => {
            fs::write(path, &csv).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            Ok(json!({ "rows": grid.cells().len(), "output": path }).to_string())
        }
        None => Ok(csv),
    }
}

fn run(cli: &Cli) -> Result<String> {
    let pretty = |v: Value| serde_json::to_string_pretty(&v).expect("json values serialize");
    Ok(match &cli.command {
        Command::Synth(c) => pretty(run_synth(c)?),
        Command::Invert(c) => pretty(run_invert(c)?),
        Command::Swap(c) => pretty(run_swap(c)?),
        Command::Metrics(c) => pretty(run_metrics(c)?),
        Command::Sweep(c) => run_sweep(c)?,
    })
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim(), 2),
    };
    match run(&cli) {
        Ok(out) => {
            println!("{}", out.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), &e.to_string(), 1),
    }
}
