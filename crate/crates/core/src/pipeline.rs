//! Dual-branch swapping over a sliding window of frames.
//!
//! Per window: invert the target frames under the target condition, replay
//! them in a reconstruction branch that records attention features, estimate
//! flow, then denoise the same inverted noise under the source condition
//! while blending in the recorded features.

use std::ops::Range;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionHooks, FatsCarry, FatsInjection, FeatureCache, HookStats, InjectPolicy};
use crate::ddim::{invert, sample, InversionMode};
use crate::denoiser::{Condition, Denoiser, DenoiserSpec};
use crate::error::{Error, Result};
use crate::fats::{estimate_video_flow, FatsChain, FatsConfig, FlowField};
use crate::fsai::{FsaiAxis, FsaiConfig};
use crate::io::read_tensor;
use crate::metrics::{report, MetricsReport};
use crate::schedule::{NoiseSchedule, ScheduleConfig};
use crate::tensor::Tensor4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FlowSource {
    /// Block matching on the target frames of each window.
    Block { radius: usize, block: usize },
    /// A `(n − 1, 2, H, W)` TNSR file covering the whole video.
    File { path: PathBuf },
}

impl Default for FlowSource {
    fn default() -> Self {
        FlowSource::Block { radius: 3, block: 5 }
    }
}

/// `block` (default search parameters) or `file:<path>`.
impl std::str::FromStr for FlowSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "block" => Ok(FlowSource::default()),
            Some(("file", path)) if !path.is_empty() => Ok(FlowSource::File { path: path.into() }),
            _ => Err(Error::param(format!("unknown flow source {s:?} (block|file:<path>)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Number of visited DDIM timesteps.
    pub steps: usize,
    pub rho: f64,
    pub alpha: f64,
    pub t1: usize,
    pub window: usize,
    pub inversion: InversionMode,
    /// Seed of the denoiser weights; overrides `denoiser.seed`.
    pub seed: u64,
    pub fsai_axis: FsaiAxis,
    pub fats_chain: FatsChain,
    pub schedule: ScheduleConfig,
    pub denoiser: DenoiserSpec,
    pub flow: FlowSource,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            steps: 50,
            rho: 0.8,
            alpha: 0.8,
            t1: 10,
            window: 6,
            inversion: InversionMode::approx(),
            seed: 0,
            fsai_axis: FsaiAxis::Channel,
            fats_chain: FatsChain::Recursive,
            schedule: ScheduleConfig::default(),
            denoiser: DenoiserSpec::default(),
            flow: FlowSource::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::param("steps must be at least 1"));
        }
        if self.t1 > self.steps {
            return Err(Error::param(format!("t1 = {} exceeds steps = {}", self.t1, self.steps)));
        }
        if self.window == 0 {
            return Err(Error::param("window must be at least 1"));
        }
        self.fsai().validate()?;
        self.fats().validate()?;
        self.inversion.validate()?;
        self.denoiser_spec().validate()?;
        if let FlowSource::Block { block, .. } = self.flow {
            if block.is_multiple_of(2) {
                return Err(Error::param(format!("flow block size must be odd, got {block}")));
            }
        }
        Ok(())
    }

    pub fn fsai(&self) -> FsaiConfig {
        FsaiConfig {
            rho: self.rho,
            axis: self.fsai_axis,
        }
    }

    pub fn fats(&self) -> FatsConfig {
        FatsConfig {
            alpha: self.alpha,
            t1: self.t1,
            chain: self.fats_chain,
        }
    }

    pub fn denoiser_spec(&self) -> DenoiserSpec {
        DenoiserSpec {
            seed: self.seed,
            ..self.denoiser
        }
    }

    /// True when two configs share everything that happens before generation.
    pub fn same_preparation(&self, other: &PipelineConfig) -> bool {
        self.steps == other.steps
            && self.window == other.window
            && self.inversion == other.inversion
            && self.seed == other.seed
            && self.schedule == other.schedule
            && self.denoiser == other.denoiser
            && self.flow == other.flow
    }
}

/// Window ranges (end exclusive) covering `0..n`; consecutive windows share one frame.
pub fn window_plan(n: usize, window: usize) -> Result<Vec<Range<usize>>> {
    if n == 0 || window == 0 {
        return Err(Error::param(format!(
            "window plan needs n >= 1 and window >= 1, got {n}, {window}"
        )));
    }
    if window == 1 && n > 1 {
        return Err(Error::param("windows of one frame cannot overlap; use window >= 2"));
    }
    let mut plan = Vec::new();
    plan.push(0..window.min(n));
    while plan.last().unwrap().end < n {
        let start = plan.last().unwrap().end - 1;
        plan.push(start..(start + window).min(n));
    }
    Ok(plan)
}

/// Denoises inverted noise under the target condition, recording features at
/// every visited timestep. Returns the cache and the reconstructed latents.
pub fn reconstruction_branch(
    inverted: &Tensor4,
    tar: &Condition,
    s: &NoiseSchedule,
    d: &Denoiser,
    steps: &[usize],
) -> Result<(FeatureCache, Tensor4, HookStats)> {
    let cache = FeatureCache::new();
    let mut hooks = AttentionHooks::record(&cache, 0);
    let traj = sample(d, inverted, tar, s, &sample_order(steps), &mut hooks)?;
    let stats = hooks.stats();
    Ok((cache, traj.last().clone(), stats))
}

#[derive(Clone, Debug)]
pub struct GenerationOutput {
    pub latents: Tensor4,
    pub stats: HookStats,
    /// Aligned features of the last frame, for the next window.
    pub carry: FatsCarry,
}

/// Denoises inverted noise under the source condition with spectral blending
/// against the cache at every step and temporal smoothing during the first
/// `t1` steps.
#[allow(clippy::too_many_arguments)]
pub fn generation_branch(
    inverted: &Tensor4,
    src: &Condition,
    cache: &FeatureCache,
    flows: &FlowField,
    s: &NoiseSchedule,
    d: &Denoiser,
    cfg: &PipelineConfig,
    carry_in: FatsCarry,
) -> Result<GenerationOutput> {
    let frames = inverted.shape().frames;
    if flows.pairs() + 1 != frames {
        return Err(Error::shape(&[frames - 1], &[flows.pairs()]));
    }
    let order = sample_order(&s.timesteps(cfg.steps)?);
    let policy = if cfg.alpha < 1.0 && cfg.t1 > 0 {
        InjectPolicy::FsaiFats(Box::new(FatsInjection {
            fsai: cfg.fsai(),
            fats: cfg.fats(),
            flows: flows.clone(),
            active: order[..cfg.t1].to_vec(),
            carry_in,
            carry_out: FatsCarry::default(),
        }))
    } else {
        InjectPolicy::Fsai(cfg.fsai())
    };
    let mut hooks = AttentionHooks::inject(cache, policy, 0);
    let traj = sample(d, inverted, src, s, &order, &mut hooks)?;
    Ok(GenerationOutput {
        latents: traj.last().clone(),
        stats: hooks.stats(),
        carry: hooks.take_carry(),
    })
}

fn sample_order(steps: &[usize]) -> Vec<usize> {
    steps.iter().rev().copied().collect()
}

/// Everything computed for one window before generation.
#[derive(Debug)]
pub struct PreparedWindow {
    pub frames: Range<usize>,
    pub target: Tensor4,
    pub inverted: Tensor4,
    pub reconstruction: Tensor4,
    pub cache: FeatureCache,
    pub flows: FlowField,
    pub recording: HookStats,
}

#[derive(Debug)]
pub struct Prepared {
    pub config: PipelineConfig,
    pub schedule: NoiseSchedule,
    pub denoiser: Denoiser,
    pub windows: Vec<PreparedWindow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowDiagnostics {
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    /// Max-norm gap between reconstruction and target latents.
    pub inversion_residual: f64,
    pub recording: HookStats,
    pub generation: HookStats,
}

#[derive(Clone, Debug)]
pub struct SwapResult {
    pub output: Tensor4,
    pub windows: Vec<WindowDiagnostics>,
    /// Flow used for smoothing, stitched across windows.
    pub flow: FlowField,
    pub metrics: MetricsReport,
}

fn window_error(index: usize, range: &Range<usize>) -> impl FnOnce(Error) -> Error + '_ {
    move |e| Error::Window {
        window: index,
        start: range.start,
        end: range.end - 1,
        source: Box::new(e),
    }
}

fn load_flow(cfg: &PipelineConfig, target: &Tensor4) -> Result<Option<FlowField>> {
    match &cfg.flow {
        FlowSource::Block { .. } => Ok(None),
        FlowSource::File { path } => {
            let flow = FlowField::new(read_tensor(path)?)?;
            let s = target.shape();
            if flow.pairs() + 1 != s.frames || flow.height() != s.height || flow.width() != s.width {
                return Err(Error::shape(
                    &[s.frames - 1, 2, s.height, s.width],
                    &[flow.pairs(), 2, flow.height(), flow.width()],
                ));
            }
            Ok(Some(flow))
        }
    }
}

/// Inversion, reconstruction and flow for every window of `target`.
///
/// `flow`, when given, overrides `cfg.flow` and must cover the whole video.
pub fn prepare(target: &Tensor4, tar: &Condition, cfg: &PipelineConfig, flow: Option<&FlowField>) -> Result<Prepared> {
    cfg.validate()?;
    let s = cfg.schedule.build()?;
    let shape = target.shape();
    let d = Denoiser::new(cfg.denoiser_spec(), shape.channels)?;
    let steps = s.timesteps(cfg.steps)?;
    let loaded = match flow {
        Some(f) => Some(f.clone()),
        None => load_flow(cfg, target)?,
    };
    if let Some(f) = &loaded {
        if f.pairs() + 1 != shape.frames {
            return Err(Error::shape(&[shape.frames - 1], &[f.pairs()]));
        }
    }
    let mut windows = Vec::new();
    for (index, range) in window_plan(shape.frames, cfg.window)?.iter().enumerate() {
        let prepared = (|| {
            let frames = target.frames(range.clone())?;
            let inverted = invert(&d, &frames, tar, &s, &steps, &cfg.inversion)?.last().clone();
            let (cache, reconstruction, recording) = reconstruction_branch(&inverted, tar, &s, &d, &steps)?;
            let flows = match (&loaded, &cfg.flow) {
                (Some(f), _) => f.slice(range.start, range.end - 1)?,
                (None, FlowSource::Block { radius, block }) => estimate_video_flow(&frames, *radius, *block)?,
                (None, FlowSource::File { .. }) => unreachable!("file flow is loaded up front"),
            };
            Ok(PreparedWindow {
                frames: range.clone(),
                target: frames,
                inverted,
                reconstruction,
                cache,
                flows,
                recording,
            })
        })()
        .map_err(window_error(index, range))?;
        windows.push(prepared);
    }
    Ok(Prepared {
        config: cfg.clone(),
        schedule: s,
        denoiser: d,
        windows,
    })
}

fn stitch_flows(windows: &[PreparedWindow], height: usize, width: usize) -> Result<FlowField> {
    let parts: Vec<Tensor4> = windows.iter().filter_map(|w| w.flows.as_tensor().cloned()).collect();
    if parts.is_empty() {
        return Ok(FlowField::empty(height, width));
    }
    FlowField::new(Tensor4::stack(&parts)?)
}

/// Generation for every prepared window, stitched so each frame appears once.
///
/// Only the generation-side fields of `cfg` (ρ, α, T₁, axis, chain) may
/// differ from the config used to prepare.
pub fn generate(
    prepared: &Prepared,
    src: &Condition,
    cfg: &PipelineConfig,
) -> Result<(Tensor4, Vec<WindowDiagnostics>)> {
    cfg.validate()?;
    if !cfg.same_preparation(&prepared.config) {
        return Err(Error::param(
            "generation config differs from the prepared config outside rho/alpha/t1/axis/chain",
        ));
    }
    let mut frames: Vec<Tensor4> = Vec::new();
    let mut diagnostics = Vec::new();
    let mut carry = FatsCarry::default();
    for (index, w) in prepared.windows.iter().enumerate() {
        let out = generation_branch(
            &w.inverted,
            src,
            &w.cache,
            &w.flows,
            &prepared.schedule,
            &prepared.denoiser,
            cfg,
            std::mem::take(&mut carry),
        )
        .map_err(window_error(index, &w.frames))?;
        let skip = if index == 0 { 0 } else { 1 };
        for b in skip..w.frames.len() {
            frames.push(out.latents.frame(b)?);
        }
        diagnostics.push(WindowDiagnostics {
            start: w.frames.start,
            end: w.frames.end,
            inversion_residual: w.reconstruction.max_abs_diff(&w.target)?,
            recording: w.recording,
            generation: out.stats,
        });
        carry = out.carry;
    }
    Ok((Tensor4::stack(&frames)?, diagnostics))
}

/// Full swap of `target` from the `tar` condition to the `src` condition.
pub fn swap_video(target: &Tensor4, src: &Condition, tar: &Condition, cfg: &PipelineConfig) -> Result<SwapResult> {
    let prepared = prepare(target, tar, cfg, None)?;
    finish(&prepared, target, src, cfg)
}

/// Generation plus metrics on an already prepared target.
pub fn finish(prepared: &Prepared, target: &Tensor4, src: &Condition, cfg: &PipelineConfig) -> Result<SwapResult> {
    let (output, windows) = generate(prepared, src, cfg)?;
    let s = target.shape();
    let flow = stitch_flows(&prepared.windows, s.height, s.width)?;
    let metrics = report(&output, target, &flow, &src.mu, cfg.rho)?;
    Ok(SwapResult {
        output,
        windows,
        flow,
        metrics,
    })
}
