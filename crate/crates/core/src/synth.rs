//! Synthetic videos with known motion, used as stand-ins for real footage.

use serde::{Deserialize, Serialize};

use crate::denoiser::Condition;
use crate::error::{Error, Result};
use crate::fats::{bilinear_warp, FlowField};
use crate::rng::SplitMix64;
use crate::tensor::{Shape, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    MovingDisk,
    #[default]
    TranslatingTexture,
}

impl std::str::FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moving_disk" => Ok(SyntheticKind::MovingDisk),
            "translating_texture" => Ok(SyntheticKind::TranslatingTexture),
            other => Err(Error::param(format!(
                "unknown synthetic kind {other:?} (moving_disk|translating_texture)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub vx: f32,
    pub vy: f32,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            kind: SyntheticKind::TranslatingTexture,
            frames: 12,
            channels: 4,
            height: 32,
            width: 32,
            vx: 1.0,
            vy: 0.0,
            noise_std: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        Shape::new(self.frames, self.channels, self.height, self.width)?;
        if !(self.vx.is_finite() && self.vy.is_finite())
            || self.vx.abs() >= self.width as f32
            || self.vy.abs() >= self.height as f32
        {
            return Err(Error::param(format!(
                "velocity ({}, {}) must be smaller than the frame size",
                self.vx, self.vy
            )));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::param(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticVideo {
    pub video: Tensor4,
    /// Ground-truth motion between consecutive frames.
    pub flow: FlowField,
    /// Smooth low-frequency layer of the video.
    pub tar: Condition,
    /// A different smooth pattern standing in for the source identity.
    pub src: Condition,
}

/// Sum of cosines `a · cos(2π(fx·x/W + fy·y/H) + phase + c)` per channel `c`.
fn cosine_pattern(shape: Shape, phase: f64, waves: &[(f64, f64, f64)]) -> Result<Tensor4> {
    let (h, w) = (shape.height as f64, shape.width as f64);
    Tensor4::from_fn(shape, |_, c, y, x| {
        waves
            .iter()
            .map(|&(fx, fy, a)| {
                a * (std::f64::consts::TAU * (fx * x as f64 / w + fy * y as f64 / h) + phase + c as f64).cos()
            })
            .sum::<f64>() as f32
    })
}

/// Zero-mean Gaussian texture scaled to standard deviation 0.3 per channel.
fn texture(shape: Shape, rng: &mut SplitMix64) -> Result<Tensor4> {
    let n = shape.plane_len();
    let mut data = Vec::with_capacity(shape.numel());
    for _ in 0..shape.channels {
        let raw: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mean = raw.iter().sum::<f64>() / n as f64;
        let var = raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let scale = if var > 0.0 { 0.3 / var.sqrt() } else { 0.0 };
        data.extend(raw.iter().map(|v| ((v - mean) * scale) as f32));
    }
    Tensor4::from_vec(shape, data)
}

fn disk(shape: Shape) -> Result<Tensor4> {
    let (h, w) = (shape.height as f64, shape.width as f64);
    let (cx, cy, r) = (w / 3.0, h / 2.0, h.min(w) / 6.0);
    Tensor4::from_fn(shape, |_, _, y, x| {
        let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
        if d <= r {
            1.0
        } else {
            0.0
        }
    })
}

pub fn synth_video(spec: &SyntheticSpec) -> Result<SyntheticVideo> {
    spec.validate()?;
    let frame_shape = Shape::new(1, spec.channels, spec.height, spec.width)?;
    let mut rng = SplitMix64::new(spec.seed);
    let low_tar = cosine_pattern(frame_shape, 0.0, &[(1.0, 0.0, 0.5), (0.0, 1.0, 0.3)])?;
    let low_src = cosine_pattern(frame_shape, 1.7, &[(1.0, 1.0, 0.5), (2.0, 0.0, 0.3)])?;
    let detail = match spec.kind {
        SyntheticKind::TranslatingTexture => texture(frame_shape, &mut rng)?,
        SyntheticKind::MovingDisk => disk(frame_shape)?,
    };
    let pairs = spec.frames - 1;
    let flow = FlowField::constant(pairs, spec.height, spec.width, spec.vx, spec.vy)?;
    let step = FlowField::constant(1, spec.height, spec.width, spec.vx, spec.vy)?.pair(0)?;
    let mut clean = vec![low_tar.add(&detail)?];
    for _ in 0..pairs {
        let next = bilinear_warp(clean.last().unwrap(), &step)?;
        clean.push(next);
    }
    let frames = clean
        .iter()
        .map(|f| {
            if spec.noise_std == 0.0 {
                return Ok(f.clone());
            }
            let noise = Tensor4::from_fn(frame_shape, |_, _, _, _| (rng.normal() * spec.noise_std) as f32)?;
            f.add(&noise)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticVideo {
        video: Tensor4::stack(&frames)?,
        flow,
        tar: Condition::new("target", low_tar)?,
        src: Condition::new("source", low_src)?,
    })
}
