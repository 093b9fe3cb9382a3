//! Noise predictors: a closed-form affine denoiser and an attentive variant
//! that adds a small self-attention residual the hooks can act on.

use serde::{Deserialize, Serialize};

use crate::attention::{attend, compute_qkv, rms_normalize, AttentionHooks, Matrix, QkvWeights};
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor4;

/// Id of the single attention layer of the attentive denoiser.
pub const ATTENTION_LAYER: usize = 0;

/// Conditioning: a labelled mean image of shape `(1, C, H, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    pub id: String,
    pub mu: Tensor4,
}

impl Condition {
    pub fn new(id: impl Into<String>, mu: Tensor4) -> Result<Self> {
        if mu.shape().frames != 1 {
            let s = mu.shape();
            return Err(Error::shape(&[1, s.channels, s.height, s.width], &s.dims()));
        }
        Ok(Condition { id: id.into(), mu })
    }

    fn check(&self, z: &Tensor4) -> Result<()> {
        let (zs, ms) = (z.shape(), self.mu.shape());
        if (zs.channels, zs.height, zs.width) != (ms.channels, ms.height, ms.width) {
            return Err(Error::shape(&ms.with_frames(zs.frames)?.dims(), &zs.dims()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DenoiserKind {
    Affine,
    #[default]
    Attentive,
}

impl std::str::FromStr for DenoiserKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "affine" => Ok(DenoiserKind::Affine),
            "attentive" => Ok(DenoiserKind::Attentive),
            other => Err(Error::param(format!(
                "unknown denoiser kind {other:?} (affine|attentive)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserSpec {
    pub kind: DenoiserKind,
    /// Weight of the attention residual.
    pub gamma: f64,
    /// Seed of the attention weights.
    pub seed: u64,
    /// Spread of the Gaussian data prior around the condition mean; 0 gives a point mass.
    pub data_std: f64,
    /// Attention feature dimension `D`.
    pub dim: usize,
    pub weight_gain: f64,
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        DenoiserSpec {
            kind: DenoiserKind::Attentive,
            gamma: 0.1,
            seed: 0,
            data_std: 0.5,
            dim: 8,
            weight_gain: 1.0,
        }
    }
}

impl DenoiserSpec {
    pub fn affine(data_std: f64) -> Self {
        DenoiserSpec {
            kind: DenoiserKind::Affine,
            data_std,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::param(format!(
                "gamma must be finite and >= 0, got {}",
                self.gamma
            )));
        }
        if !(self.data_std.is_finite() && self.data_std >= 0.0) {
            return Err(Error::param(format!(
                "data_std must be finite and >= 0, got {}",
                self.data_std
            )));
        }
        if self.dim == 0 {
            return Err(Error::param("attention dim must be at least 1"));
        }
        Ok(())
    }
}

/// `ε(z, t)` of a noise-prediction model, evaluated on a batch of frames.
pub trait NoisePredictor {
    fn predict(
        &self,
        z: &Tensor4,
        t: usize,
        s: &NoiseSchedule,
        c: &Condition,
        hooks: &mut AttentionHooks<'_>,
    ) -> Result<Tensor4>;
}

/// Exact noise prediction for data distributed as `N(μ_c, σ_d² I)`:
///
/// ```text
/// ε = sqrt(1 − ᾱ_t) · (z − sqrt(ᾱ_t) · μ_c) / (ᾱ_t · σ_d² + 1 − ᾱ_t)
/// ```
///
/// With `σ_d = 0` this is `(z − sqrt(ᾱ_t) · μ_c) / sqrt(1 − ᾱ_t)`.
pub fn affine_eps(z: &Tensor4, t: usize, s: &NoiseSchedule, c: &Condition, data_std: f64) -> Result<Tensor4> {
    c.check(z)?;
    let ab = s.alpha_bar(t)?;
    if ab >= 1.0 {
        return Err(Error::DegenerateTimestep { t, alpha_bar: ab });
    }
    let scale = (1.0 - ab).sqrt() / (ab * data_std * data_std + 1.0 - ab);
    let shift = ab.sqrt();
    let mu = c.mu.data();
    let frame_len = mu.len();
    let data = z
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| (scale * (v as f64 - shift * mu[i % frame_len] as f64)) as f32)
        .collect();
    Tensor4::from_vec(z.shape(), data)
}

/// `ε = affine_eps + γ · residual`, where the residual is one self-attention
/// layer over the RMS-normalized tokens of each frame, projected back to `C`
/// channels. Hooks see and may replace each frame's q, k, v.
pub fn attentive_eps(
    z: &Tensor4,
    t: usize,
    s: &NoiseSchedule,
    c: &Condition,
    spec: &DenoiserSpec,
    weights: &QkvWeights,
    hooks: &mut AttentionHooks<'_>,
) -> Result<Tensor4> {
    let base = affine_eps(z, t, s, c, spec.data_std)?;
    let shape = z.shape();
    if weights.channels() != shape.channels {
        return Err(Error::shape(&[weights.channels()], &[shape.channels]));
    }
    let feats = (0..shape.frames)
        .map(|b| compute_qkv(&rms_normalize(&Matrix::from_frame(z, b)?), weights))
        .collect::<Result<Vec<_>>>()?;
    let feats = hooks.process(ATTENTION_LAYER, t, feats, shape.height, shape.width)?;
    let scale = 1.0 / (weights.dim() as f64).sqrt();
    let residuals = feats
        .iter()
        .map(|f| {
            attend(f, scale)?
                .matmul(&weights.wo)?
                .to_frame(shape.height, shape.width)
        })
        .collect::<Result<Vec<_>>>()?;
    base.lin_comb(1.0, &Tensor4::stack(&residuals)?, spec.gamma)
}

/// A denoiser built from a [`DenoiserSpec`] for a fixed channel count.
#[derive(Clone, Debug)]
pub struct Denoiser {
    spec: DenoiserSpec,
    weights: Option<QkvWeights>,
}

impl Denoiser {
    pub fn new(spec: DenoiserSpec, channels: usize) -> Result<Self> {
        spec.validate()?;
        let weights = match spec.kind {
            DenoiserKind::Affine => None,
            DenoiserKind::Attentive => Some(QkvWeights::seeded(spec.seed, channels, spec.dim, spec.weight_gain)?),
        };
        Ok(Denoiser { spec, weights })
    }

    pub fn spec(&self) -> &DenoiserSpec {
        &self.spec
    }

    pub fn weights(&self) -> Option<&QkvWeights> {
        self.weights.as_ref()
    }

    pub fn has_attention(&self) -> bool {
        self.weights.is_some()
    }
}

impl NoisePredictor for Denoiser {
    fn predict(
        &self,
        z: &Tensor4,
        t: usize,
        s: &NoiseSchedule,
        c: &Condition,
        hooks: &mut AttentionHooks<'_>,
    ) -> Result<Tensor4> {
        match &self.weights {
            None => affine_eps(z, t, s, c, self.spec.data_std),
            Some(w) => attentive_eps(z, t, s, c, &self.spec, w, hooks),
        }
    }
}
