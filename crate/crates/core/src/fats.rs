//! Flow-guided temporal smoothing of per-frame feature maps, plus an
//! exhaustive block-matching flow estimator.
//!
//! Flow `f_i` maps frame `i` to frame `i + 1`: frame `i + 1` at pixel `p`
//! is approximated by frame `i` sampled at `p − f_i(p)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor4};

/// `(B − 1, 2, H, W)` displacements; channel 0 is `dx`, channel 1 is `dy`.
///
/// A single-frame video has no pairs, so the field may be empty.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    flows: Option<Tensor4>,
    height: usize,
    width: usize,
}

impl FlowField {
    pub fn new(flows: Tensor4) -> Result<Self> {
        let s = flows.shape();
        if s.channels != 2 {
            return Err(Error::shape(&[s.frames, 2, s.height, s.width], &s.dims()));
        }
        let bound = s.height.max(s.width) as f64;
        if flows.max_abs() > bound {
            return Err(Error::param(format!(
                "flow magnitude {} exceeds the frame size bound {bound}",
                flows.max_abs()
            )));
        }
        Ok(FlowField {
            flows: Some(flows),
            height: s.height,
            width: s.width,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        FlowField {
            flows: None,
            height,
            width,
        }
    }

    /// The same displacement `(dx, dy)` at every pixel of every pair.
    pub fn constant(pairs: usize, height: usize, width: usize, dx: f32, dy: f32) -> Result<Self> {
        if pairs == 0 {
            Shape::new(1, 2, height, width)?;
            return Ok(FlowField::empty(height, width));
        }
        let shape = Shape::new(pairs, 2, height, width)?;
        FlowField::new(Tensor4::from_fn(shape, |_, c, _, _| if c == 0 { dx } else { dy })?)
    }

    pub fn zeros(pairs: usize, height: usize, width: usize) -> Result<Self> {
        FlowField::constant(pairs, height, width, 0.0, 0.0)
    }

    pub fn pairs(&self) -> usize {
        self.flows.as_ref().map_or(0, |f| f.shape().frames)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// The `(B − 1, 2, H, W)` tensor, absent for an empty field.
    pub fn as_tensor(&self) -> Option<&Tensor4> {
        self.flows.as_ref()
    }

    /// Flow of pair `i` as a `(1, 2, H, W)` tensor.
    pub fn pair(&self, i: usize) -> Result<Tensor4> {
        match &self.flows {
            Some(f) => f.frame(i),
            None => Err(Error::IndexOutOfRange {
                index: vec![i],
                shape: vec![0, 2, self.height, self.width],
            }),
        }
    }

    /// Pairs `start..end` as a new field.
    pub fn slice(&self, start: usize, end: usize) -> Result<FlowField> {
        if start == end && end <= self.pairs() {
            return Ok(FlowField::empty(self.height, self.width));
        }
        match &self.flows {
            Some(f) => Ok(FlowField {
                flows: Some(f.frames(start..end)?),
                height: self.height,
                width: self.width,
            }),
            None => Err(Error::IndexOutOfRange {
                index: vec![start, end],
                shape: vec![0, 2, self.height, self.width],
            }),
        }
    }

    fn check_frames(&self, shape: Shape) -> Result<()> {
        if shape.frames != self.pairs() + 1 || shape.height != self.height || shape.width != self.width {
            return Err(Error::shape(
                &[self.pairs() + 1, shape.channels, self.height, self.width],
                &shape.dims(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FatsChain {
    /// Each frame blends against its predecessor's already smoothed value.
    #[default]
    Recursive,
    /// Each frame blends against its predecessor's original value.
    Original,
}

impl std::str::FromStr for FatsChain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recursive" => Ok(FatsChain::Recursive),
            "original" => Ok(FatsChain::Original),
            other => Err(Error::param(format!("unknown chain {other:?} (recursive|original)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FatsConfig {
    pub alpha: f64,
    pub t1: usize,
    #[serde(default)]
    pub chain: FatsChain,
}

impl Default for FatsConfig {
    fn default() -> Self {
        FatsConfig {
            alpha: 0.8,
            t1: 10,
            chain: FatsChain::Recursive,
        }
    }
}

impl FatsConfig {
    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.alpha) {
            Ok(())
        } else {
            Err(Error::param(format!("alpha must lie in [0, 1], got {}", self.alpha)))
        }
    }
}

/// Bilinear sample of one `H × W` plane at `(sx, sy)`, coordinates clamped to the border.
fn sample_plane(plane: &[f32], height: usize, width: usize, sx: f64, sy: f64) -> f64 {
    let sx = sx.clamp(0.0, (width - 1) as f64);
    let sy = sy.clamp(0.0, (height - 1) as f64);
    let x0 = sx.floor() as usize;
    let y0 = sy.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let wx = sx - x0 as f64;
    let wy = sy - y0 as f64;
    let at = |y: usize, x: usize| plane[y * width + x] as f64;
    at(y0, x0) * (1.0 - wx) * (1.0 - wy)
        + at(y0, x1) * wx * (1.0 - wy)
        + at(y1, x0) * (1.0 - wx) * wy
        + at(y1, x1) * wx * wy
}

fn warp_frame(frame: &[f32], channels: usize, height: usize, width: usize, flow: &[f32]) -> Vec<f32> {
    let n = height * width;
    let (fx, fy) = flow.split_at(n);
    let mut out = vec![0.0f32; channels * n];
    for c in 0..channels {
        let plane = &frame[c * n..(c + 1) * n];
        for y in 0..height {
            for x in 0..width {
                let i = y * width + x;
                let sx = x as f64 - fx[i] as f64;
                let sy = y as f64 - fy[i] as f64;
                out[c * n + i] = sample_plane(plane, height, width, sx, sy) as f32;
            }
        }
    }
    out
}

/// Backward warp of a `(1, C, H, W)` slice by a `(1, 2, H, W)` flow.
pub fn bilinear_warp(x: &Tensor4, flow: &Tensor4) -> Result<Tensor4> {
    let s = x.shape();
    let f = flow.shape();
    if s.frames != 1 || f.frames != 1 || f.channels != 2 || f.height != s.height || f.width != s.width {
        return Err(Error::shape(&[1, 2, s.height, s.width], &f.dims()));
    }
    let data = warp_frame(x.data(), s.channels, s.height, s.width, flow.data());
    Tensor4::from_vec(s, data)
}

/// `α · x_next + (1 − α) · warp(x_prev, flow)`.
pub fn fats_blend(x_next: &Tensor4, x_prev: &Tensor4, flow: &Tensor4, cfg: &FatsConfig) -> Result<Tensor4> {
    cfg.validate()?;
    x_next.ensure_same_shape(x_prev)?;
    if cfg.alpha == 1.0 {
        bilinear_warp(x_prev, flow)?;
        return Ok(x_next.clone());
    }
    let warped = bilinear_warp(x_prev, flow)?;
    x_next.lin_comb(cfg.alpha, &warped, 1.0 - cfg.alpha)
}

/// Left-to-right smoothing chain over the frame axis.
pub fn fats_pass(batch: &Tensor4, flows: &FlowField, cfg: &FatsConfig) -> Result<Tensor4> {
    fats_pass_seeded(batch, flows, cfg, None)
}

/// [`fats_pass`] with frame 0 optionally replaced by `seed` before the chain
/// starts, used to carry the aligned overlap frame between windows.
pub fn fats_pass_seeded(
    batch: &Tensor4,
    flows: &FlowField,
    cfg: &FatsConfig,
    seed: Option<&Tensor4>,
) -> Result<Tensor4> {
    cfg.validate()?;
    let s = batch.shape();
    flows.check_frames(s)?;
    if cfg.alpha == 1.0 {
        return Ok(batch.clone());
    }
    let mut out = batch.clone();
    if let Some(seed) = seed {
        out.set_frame(0, seed)?;
    }
    for i in 0..s.frames - 1 {
        let prev = match cfg.chain {
            FatsChain::Recursive => out.frame(i)?,
            FatsChain::Original if i == 0 => out.frame(0)?,
            FatsChain::Original => batch.frame(i)?,
        };
        let blended = fats_blend(&batch.frame(i + 1)?, &prev, &flows.pair(i)?, cfg)?;
        out.set_frame(i + 1, &blended)?;
    }
    Ok(out)
}

/// Integer displacement per pixel minimizing the block SSD between `b` around
/// `p` and `a` around `p − d`, so that `bilinear_warp(a, flow) ≈ b`.
///
/// Both inputs are `(1, C, H, W)`; the result is `(1, 2, H, W)`.
pub fn block_matching_flow(a: &Tensor4, b: &Tensor4, radius: usize, block: usize) -> Result<Tensor4> {
    a.ensure_same_shape(b)?;
    let s = a.shape();
    if s.frames != 1 {
        return Err(Error::shape(&[1, s.channels, s.height, s.width], &s.dims()));
    }
    if block.is_multiple_of(2) {
        return Err(Error::param(format!("block size must be odd, got {block}")));
    }
    let (h, w, n) = (s.height as isize, s.width as isize, s.plane_len());
    let r = radius as isize;
    let half = (block / 2) as isize;
    let clamp = |v: isize, hi: isize| v.clamp(0, hi - 1) as usize;
    let mut candidates: Vec<(isize, isize)> = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            candidates.push((dx, dy));
        }
    }
    // Tie-break order: smallest |dx| + |dy|, then dy, then dx.
    candidates.sort_by_key(|&(dx, dy)| (dx.abs() + dy.abs(), dy, dx));
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0f32; 2 * n];
    for y in 0..h {
        for x in 0..w {
            let mut best = (f64::INFINITY, 0isize, 0isize);
            for &(dx, dy) in &candidates {
                let mut ssd = 0.0f64;
                for oy in -half..=half {
                    for ox in -half..=half {
                        let by = clamp(y + oy, h);
                        let bx = clamp(x + ox, w);
                        let ay = clamp(y + oy - dy, h);
                        let ax = clamp(x + ox - dx, w);
                        for c in 0..s.channels {
                            let d = bd[c * n + by * s.width + bx] as f64 - ad[c * n + ay * s.width + ax] as f64;
                            ssd += d * d;
                        }
                    }
                }
                if ssd < best.0 {
                    best = (ssd, dx, dy);
                }
            }
            let i = y as usize * s.width + x as usize;
            out[i] = best.1 as f32;
            out[n + i] = best.2 as f32;
        }
    }
    Tensor4::from_vec(Shape::new(1, 2, s.height, s.width)?, out)
}

/// Block-matching flow between every consecutive pair of a video.
pub fn estimate_video_flow(video: &Tensor4, radius: usize, block: usize) -> Result<FlowField> {
    let s = video.shape();
    if s.frames < 2 {
        return Ok(FlowField::empty(s.height, s.width));
    }
    let pairs = (0..s.frames - 1)
        .map(|i| block_matching_flow(&video.frame(i)?, &video.frame(i + 1)?, radius, block))
        .collect::<Result<Vec<_>>>()?;
    FlowField::new(Tensor4::stack(&pairs)?)
}
