//! Deterministic DDIM sampling and inversion over strided timestep lists.

use serde::{Deserialize, Serialize};

use crate::attention::AttentionHooks;
use crate::denoiser::{Condition, NoisePredictor};
use crate::error::{Error, Result};
use crate::schedule::{DdimCoeffs, NoiseSchedule};
use crate::tensor::Tensor4;

/// Latents visited by a sampling or inversion run, endpoints inclusive.
///
/// For sampling, `latents[0]` is `z_T` and `timesteps` is decreasing; for
/// inversion, `latents[0]` is `z_0` and `timesteps` is increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub latents: Vec<Tensor4>,
    pub timesteps: Vec<usize>,
}

impl Trajectory {
    pub fn first(&self) -> &Tensor4 {
        &self.latents[0]
    }

    pub fn last(&self) -> &Tensor4 {
        self.latents.last().expect("trajectory is never empty")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InversionKind {
    /// Noise evaluated at the less noisy latent.
    #[default]
    Approx,
    /// Fixed-point solve of the implicit step.
    Exact,
}

impl std::str::FromStr for InversionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "approx" => Ok(InversionKind::Approx),
            "exact" => Ok(InversionKind::Exact),
            other => Err(Error::param(format!("unknown inversion mode {other:?} (approx|exact)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionMode {
    pub mode: InversionKind,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for InversionMode {
    fn default() -> Self {
        InversionMode {
            mode: InversionKind::Approx,
            tol: 1e-6,
            max_iter: 50,
        }
    }
}

impl InversionMode {
    pub fn approx() -> Self {
        InversionMode::default()
    }

    pub fn exact() -> Self {
        InversionMode {
            mode: InversionKind::Exact,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) || self.max_iter == 0 {
            return Err(Error::param(format!(
                "inversion needs tol > 0 and max_iter >= 1, got {} and {}",
                self.tol, self.max_iter
            )));
        }
        Ok(())
    }
}

fn apply(z: &Tensor4, eps: &Tensor4, c: DdimCoeffs) -> Result<Tensor4> {
    z.lin_comb(c.m, eps, c.n)
}

/// `m_t · z_t + n_t · ε` for the single step `t → t − 1`.
pub fn ddim_step(z_t: &Tensor4, eps: &Tensor4, s: &NoiseSchedule, t: usize) -> Result<Tensor4> {
    apply(z_t, eps, s.ddim_coeffs(t)?)
}

/// The strided step `t → prev`.
pub fn ddim_step_between(z_t: &Tensor4, eps: &Tensor4, s: &NoiseSchedule, t: usize, prev: usize) -> Result<Tensor4> {
    apply(z_t, eps, s.ddim_coeffs_between(t, prev)?)
}

fn wrap(t: usize) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        Error::Denoiser { .. } => e,
        other => Error::Denoiser {
            t,
            source: Box::new(other),
        },
    }
}

fn check_steps(steps: &[usize], s: &NoiseSchedule, increasing: bool) -> Result<()> {
    if steps.is_empty() {
        return Err(Error::param("timestep list is empty"));
    }
    let ordered = steps
        .windows(2)
        .all(|w| if increasing { w[0] < w[1] } else { w[0] > w[1] });
    if !ordered {
        let dir = if increasing { "increasing" } else { "decreasing" };
        return Err(Error::param(format!("timesteps must be strictly {dir}")));
    }
    for &t in steps {
        if t == 0 || t > s.steps() {
            return Err(Error::TimestepOutOfRange { t, max: s.steps() });
        }
    }
    Ok(())
}

/// Runs the generative chain from `z_T` through `steps` (strictly
/// decreasing) and on to `t = 0`.
pub fn sample<P: NoisePredictor + ?Sized>(
    d: &P,
    z_t: &Tensor4,
    c: &Condition,
    s: &NoiseSchedule,
    steps: &[usize],
    hooks: &mut AttentionHooks<'_>,
) -> Result<Trajectory> {
    check_steps(steps, s, false)?;
    let mut latents = Vec::with_capacity(steps.len() + 1);
    latents.push(z_t.clone());
    for (i, &t) in steps.iter().enumerate() {
        let prev = steps.get(i + 1).copied().unwrap_or(0);
        let z = latents.last().unwrap();
        let eps = d.predict(z, t, s, c, hooks).map_err(wrap(t))?;
        latents.push(ddim_step_between(z, &eps, s, t, prev)?);
    }
    Ok(Trajectory {
        latents,
        timesteps: steps.to_vec(),
    })
}

/// Inverts the step `t → t − 1`.
pub fn invert_step<P: NoisePredictor + ?Sized>(
    z_prev: &Tensor4,
    d: &P,
    c: &Condition,
    s: &NoiseSchedule,
    t: usize,
    mode: &InversionMode,
) -> Result<Tensor4> {
    s.ddim_coeffs(t)?;
    invert_step_between(z_prev, d, c, s, t, t - 1, mode)
}

/// Recovers `z_t` from `z_prev` for the strided step `t → prev`.
pub fn invert_step_between<P: NoisePredictor + ?Sized>(
    z_prev: &Tensor4,
    d: &P,
    c: &Condition,
    s: &NoiseSchedule,
    t: usize,
    prev: usize,
    mode: &InversionMode,
) -> Result<Tensor4> {
    mode.validate()?;
    let coeffs = s.ddim_coeffs_between(t, prev)?;
    if coeffs.m == 0.0 {
        return Err(Error::param(format!(
            "step {t} -> {prev} has m = 0 and cannot be inverted"
        )));
    }
    let solve = |z: &Tensor4| -> Result<Tensor4> {
        let eps = d.predict(z, t, s, c, &mut AttentionHooks::none()).map_err(wrap(t))?;
        z_prev.lin_comb(1.0 / coeffs.m, &eps, -coeffs.n / coeffs.m)
    };
    let mut z = solve(z_prev)?;
    if mode.mode == InversionKind::Approx {
        return Ok(z);
    }
    let mut delta = f64::INFINITY;
    for _ in 0..mode.max_iter {
        let next = solve(&z)?;
        delta = next.max_abs_diff(&z)?;
        z = next;
        if delta < mode.tol {
            let eps = d.predict(&z, t, s, c, &mut AttentionHooks::none()).map_err(wrap(t))?;
            let residual = apply(&z, &eps, coeffs)?.max_abs_diff(z_prev)?;
            if residual > 10.0 * mode.tol {
                return Err(Error::Convergence {
                    t,
                    iterations: mode.max_iter,
                    residual,
                });
            }
            return Ok(z);
        }
    }
    Err(Error::Convergence {
        t,
        iterations: mode.max_iter,
        residual: delta,
    })
}

/// Runs the inversion chain from `z_0` up through `steps` (strictly increasing).
pub fn invert<P: NoisePredictor + ?Sized>(
    d: &P,
    z_0: &Tensor4,
    c: &Condition,
    s: &NoiseSchedule,
    steps: &[usize],
    mode: &InversionMode,
) -> Result<Trajectory> {
    check_steps(steps, s, true)?;
    let mut latents = Vec::with_capacity(steps.len() + 1);
    latents.push(z_0.clone());
    let mut prev = 0;
    for &t in steps {
        let z = invert_step_between(latents.last().unwrap(), d, c, s, t, prev, mode)?;
        latents.push(z);
        prev = t;
    }
    Ok(Trajectory {
        latents,
        timesteps: steps.to_vec(),
    })
}
