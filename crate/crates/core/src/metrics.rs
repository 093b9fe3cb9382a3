//! Proxy quality metrics for swapped videos.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fats::{bilinear_warp, FlowField};
use crate::fsai::{low_band_bins, rdft};
use crate::tensor::Tensor4;

/// Value reported when two tensors are identical.
pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub flicker_index: f64,
    pub psnr_to_target: f64,
    pub low_band_similarity: f64,
}

/// Mean squared difference between each frame and its flow-warped predecessor.
pub fn flicker_index(video: &Tensor4, flow: &FlowField) -> Result<f64> {
    let s = video.shape();
    if flow.pairs() + 1 != s.frames || flow.height() != s.height || flow.width() != s.width {
        return Err(Error::shape(
            &[s.frames - 1, 2, s.height, s.width],
            &[flow.pairs(), 2, flow.height(), flow.width()],
        ));
    }
    if s.frames == 1 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..s.frames - 1 {
        let warped = bilinear_warp(&video.frame(i)?, &flow.pair(i)?)?;
        total += video.frame(i + 1)?.mean_sq_diff(&warped)?;
    }
    Ok(total / (s.frames - 1) as f64)
}

/// `10 · log10(peak² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Tensor4, b: &Tensor4, peak: f64) -> Result<f64> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::param(format!("psnr peak must be positive, got {peak}")));
    }
    let mse = a.mean_sq_diff(b)?;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// Channel-averaged magnitudes of the low `⌈ρ·M⌉` bins of each row's
/// spectrum along the width, flattened over rows.
fn low_band_profile(t: &Tensor4, frame: usize, rho: f64) -> Vec<f64> {
    let s = t.shape();
    let low = low_band_bins(rho, s.width / 2 + 1).max(1);
    let mut out = vec![0.0; s.height * low];
    let data = t.frame_data(frame);
    for c in 0..s.channels {
        for y in 0..s.height {
            let start = (c * s.height + y) * s.width;
            let spec = rdft(&data[start..start + s.width]);
            for k in 0..low {
                out[y * low + k] += spec[k].norm() / s.channels as f64;
            }
        }
    }
    out
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Mean over frames of the cosine similarity between the low-band spectral
/// profiles of each frame and of `src_pattern` (a single frame).
///
/// At least the DC bin is always compared, so `ρ = 0` degenerates to a DC comparison.
pub fn low_band_similarity(video: &Tensor4, src_pattern: &Tensor4, rho: f64) -> Result<f64> {
    let (vs, ps) = (video.shape(), src_pattern.shape());
    if ps.frames != 1 || (vs.channels, vs.height, vs.width) != (ps.channels, ps.height, ps.width) {
        return Err(Error::shape(&[1, vs.channels, vs.height, vs.width], &ps.dims()));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::param(format!("rho must lie in [0, 1], got {rho}")));
    }
    let reference = low_band_profile(src_pattern, 0, rho);
    let total: f64 = (0..vs.frames)
        .map(|b| cosine(&low_band_profile(video, b, rho), &reference))
        .sum();
    Ok(total / vs.frames as f64)
}

/// Metrics of a swapped video; PSNR uses the target's dynamic range as peak.
pub fn report(
    output: &Tensor4,
    target: &Tensor4,
    flow: &FlowField,
    src_pattern: &Tensor4,
    rho: f64,
) -> Result<MetricsReport> {
    let (lo, hi) = target.min_max();
    let peak = if hi > lo { (hi - lo) as f64 } else { 1.0 };
    Ok(MetricsReport {
        flicker_index: flicker_index(output, flow)?,
        psnr_to_target: psnr(output, target, peak)?,
        low_band_similarity: low_band_similarity(output, src_pattern, rho)?,
    })
}
