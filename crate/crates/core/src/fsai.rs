//! Frequency-spectrum attention interpolation.
//!
//! Each 1-d lane of an attention component is taken to the real half
//! spectrum; the lowest `⌈ρ·M⌉` bins (DC inclusive) are kept from the
//! source-guided generation branch and the rest from the target
//! reconstruction branch, and the hybrid is transformed back.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionFeatures, Matrix};
use crate::error::{Error, Result};

/// Forward real DFT, unnormalized: `X_k = Σ_n x_n e^{−2πikn/L}` for
/// `k = 0..=L/2`.
pub fn rdft(signal: &[f32]) -> Vec<Complex64> {
    let len = signal.len();
    let half = len / 2 + 1;
    if len.is_power_of_two() {
        let mut buf: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v as f64, 0.0)).collect();
        fft_in_place(&mut buf, false);
        buf.truncate(half);
        buf
    } else {
        (0..half)
            .map(|k| {
                signal
                    .iter()
                    .enumerate()
                    .map(|(n, &v)| Complex64::from_polar(v as f64, -twiddle_angle(k * n, len)))
                    .sum()
            })
            .collect()
    }
}

/// Inverse of [`rdft`], normalized by `1/L`.
///
/// The missing upper half of the spectrum is filled in by conjugate
/// symmetry, so the result is real by construction; imaginary parts of the
/// DC and Nyquist bins are ignored.
pub fn irdft(spectrum: &[Complex64], len: usize) -> Result<Vec<f32>> {
    if len == 0 || spectrum.len() != len / 2 + 1 {
        return Err(Error::param(format!(
            "half spectrum of {} bins does not match length {len}",
            spectrum.len()
        )));
    }
    let full: Vec<Complex64> = (0..len)
        .map(|k| {
            if k < spectrum.len() {
                spectrum[k]
            } else {
                spectrum[len - k].conj()
            }
        })
        .collect();
    let scale = 1.0 / len as f64;
    if len.is_power_of_two() {
        let mut buf = full;
        fft_in_place(&mut buf, true);
        Ok(buf.iter().map(|c| (c.re * scale) as f32).collect())
    } else {
        Ok((0..len)
            .map(|n| {
                let s: f64 = full
                    .iter()
                    .enumerate()
                    .map(|(k, x)| (x * Complex64::from_polar(1.0, twiddle_angle(k * n, len))).re)
                    .sum();
                (s * scale) as f32
            })
            .collect())
    }
}

fn twiddle_angle(kn: usize, len: usize) -> f64 {
    std::f64::consts::TAU * (kn % len) as f64 / len as f64
}

/// Iterative radix-2 Cooley-Tukey; `buf.len()` must be a power of two.
fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut size = 2;
    while size <= n {
        let step = sign * std::f64::consts::TAU / size as f64;
        for start in (0..n).step_by(size) {
            for k in 0..size / 2 {
                let w = Complex64::from_polar(1.0, step * k as f64);
                let a = buf[start + k];
                let b = buf[start + k + size / 2] * w;
                buf[start + k] = a + b;
                buf[start + k + size / 2] = a - b;
            }
        }
        size *= 2;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FsaiAxis {
    /// Transform each token's feature vector (length `D`).
    #[default]
    Channel,
    /// Transform each feature column across tokens (length `N`).
    Token,
}

impl std::str::FromStr for FsaiAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "channel" => Ok(FsaiAxis::Channel),
            "token" => Ok(FsaiAxis::Token),
            other => Err(Error::param(format!("unknown fsai axis {other:?} (channel|token)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FsaiConfig {
    pub rho: f64,
    #[serde(default)]
    pub axis: FsaiAxis,
}

impl Default for FsaiConfig {
    fn default() -> Self {
        FsaiConfig {
            rho: 0.8,
            axis: FsaiAxis::Channel,
        }
    }
}

impl FsaiConfig {
    pub fn new(rho: f64, axis: FsaiAxis) -> Result<Self> {
        let cfg = FsaiConfig { rho, axis };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.rho) {
            Ok(())
        } else {
            Err(Error::param(format!("rho must lie in [0, 1], got {}", self.rho)))
        }
    }
}

/// Number of half-spectrum bins, counted from DC, taken from the source.
pub fn low_band_bins(rho: f64, half_len: usize) -> usize {
    // The small slack keeps products like 0.8 · 5 from rounding up to 5.
    ((rho * half_len as f64 - 1e-9).ceil().max(0.0) as usize).min(half_len)
}

/// Hybrid-spectrum blend of one lane.
pub fn fsai_lane(src: &[f32], tar: &[f32], rho: f64) -> Result<Vec<f32>> {
    if src.len() != tar.len() {
        return Err(Error::shape(&[src.len()], &[tar.len()]));
    }
    if src.is_empty() {
        return Err(Error::param("empty lane"));
    }
    let len = src.len();
    let low = low_band_bins(rho, len / 2 + 1);
    let mut hybrid = rdft(tar);
    let s = rdft(src);
    hybrid[..low].copy_from_slice(&s[..low]);
    irdft(&hybrid, len)
}

/// Blends two `(N, D)` attention components along `cfg.axis`.
pub fn fsai(src: &Matrix, tar: &Matrix, cfg: &FsaiConfig) -> Result<Matrix> {
    cfg.validate()?;
    if src.shape() != tar.shape() {
        let (a, b) = (src.shape(), tar.shape());
        return Err(Error::shape(&[a.0, a.1], &[b.0, b.1]));
    }
    let (rows, cols) = src.shape();
    let mut out = vec![0.0f32; rows * cols];
    match cfg.axis {
        FsaiAxis::Channel => {
            for r in 0..rows {
                let lane = fsai_lane(src.row(r), tar.row(r), cfg.rho)?;
                out[r * cols..(r + 1) * cols].copy_from_slice(&lane);
            }
        }
        FsaiAxis::Token => {
            for c in 0..cols {
                let lane = fsai_lane(&src.column(c), &tar.column(c), cfg.rho)?;
                for (r, v) in lane.into_iter().enumerate() {
                    out[r * cols + c] = v;
                }
            }
        }
    }
    Matrix::from_vec(rows, cols, out)
}

/// Replaces the generation branch's queries and keys by their spectral
/// blend with the cached reconstruction features; values are untouched.
pub fn apply_fsai_qk(
    gen: &AttentionFeatures,
    cached: &AttentionFeatures,
    cfg: &FsaiConfig,
) -> Result<AttentionFeatures> {
    let q = fsai(&gen.q, &cached.q, cfg)?;
    let k = fsai(&gen.k, &cached.k, cfg)?;
    AttentionFeatures::new(q, k, gen.v.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn naive_dft(x: &[f32]) -> Vec<Complex64> {
        let l = x.len();
        (0..l / 2 + 1)
            .map(|k| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (n, &v) in x.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (k * n) as f64 / l as f64;
                    acc += Complex64::new(v as f64 * ang.cos(), v as f64 * ang.sin());
                }
                acc
            })
            .collect()
    }

    fn random_lane(rng: &mut SplitMix64, len: usize) -> Vec<f32> {
        (0..len).map(|_| rng.uniform(-1.0, 1.0) as f32).collect()
    }

    fn close(a: &[Complex64], b: &[Complex64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).norm() <= tol)
    }

    #[test]
    fn four_point_by_hand() {
        let ones = rdft(&[1.0, 1.0, 1.0, 1.0]);
        assert!(close(&ones, &[4.0.into(), 0.0.into(), 0.0.into()], 1e-12));
        let alt = rdft(&[1.0, -1.0, 1.0, -1.0]);
        assert!(close(&alt, &[0.0.into(), 0.0.into(), 4.0.into()], 1e-12));
        let back = irdft(&[4.0.into(), 0.0.into(), 4.0.into()], 4).unwrap();
        assert_eq!(back, vec![2.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn constant_signal_is_pure_dc() {
        for len in [1, 3, 5, 8] {
            let s = rdft(&vec![0.75; len]);
            assert!((s[0].re - 0.75 * len as f64).abs() < 1e-12);
            assert!(s[1..].iter().all(|c| c.norm() < 1e-12));
            let mut dc = vec![Complex64::new(0.0, 0.0); len / 2 + 1];
            dc[0] = Complex64::new(0.75 * len as f64, 0.0);
            assert!(irdft(&dc, len).unwrap().iter().all(|v| (v - 0.75).abs() < 1e-7));
        }
    }

    #[test]
    fn matches_naive_dft() {
        let mut rng = SplitMix64::new(11);
        for len in [1, 2, 3, 4, 7, 8, 16, 64] {
            let x = random_lane(&mut rng, len);
            assert!(close(&rdft(&x), &naive_dft(&x), 1e-9), "len {len}");
        }
    }

    #[test]
    fn inverse_roundtrip() {
        let mut rng = SplitMix64::new(5);
        for len in [1, 2, 3, 4, 7, 64] {
            for _ in 0..10 {
                let x = random_lane(&mut rng, len);
                let y = irdft(&rdft(&x), len).unwrap();
                let err = x.iter().zip(&y).fold(0.0f32, |m, (a, b)| m.max((a - b).abs()));
                assert!(err <= 1e-5, "len {len}: {err}");
            }
        }
    }

    #[test]
    fn inverse_length_mismatch() {
        assert!(irdft(&[Complex64::new(1.0, 0.0); 2], 4).is_err());
    }

    #[test]
    fn low_band_counting() {
        assert_eq!(low_band_bins(0.8, 5), 4);
        assert_eq!(low_band_bins(0.5, 3), 2);
        assert_eq!(low_band_bins(1.0, 3), 3);
        assert_eq!(low_band_bins(0.0, 3), 0);
        assert_eq!(low_band_bins(0.01, 9), 1);
    }

    #[test]
    fn boundary_ratios() {
        let mut rng = SplitMix64::new(1);
        for len in [3, 4, 7, 8] {
            let s = random_lane(&mut rng, len);
            let t = random_lane(&mut rng, len);
            let all_src = fsai_lane(&s, &t, 1.0).unwrap();
            let all_tar = fsai_lane(&s, &t, 0.0).unwrap();
            for i in 0..len {
                assert!((all_src[i] - s[i]).abs() <= 1e-5);
                assert!((all_tar[i] - t[i]).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn hand_computed_hybrid() {
        let out = fsai_lane(&[1.0, 1.0, 1.0, 1.0], &[1.0, -1.0, 1.0, -1.0], 0.5).unwrap();
        assert_eq!(out, vec![2.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn token_axis_blends_columns() {
        let src = Matrix::from_vec(4, 2, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let tar = Matrix::from_vec(4, 2, vec![1.0, 5.0, -1.0, 5.0, 1.0, 5.0, -1.0, 5.0]).unwrap();
        let cfg = FsaiConfig::new(0.5, FsaiAxis::Token).unwrap();
        let out = fsai(&src, &tar, &cfg).unwrap();
        assert_eq!(out.column(0), vec![2.0, 0.0, 2.0, 0.0]);
        // Column 1: source DC is 0, target carries only DC, so the blend is zero.
        assert!(out.column(1).iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn qk_blend_leaves_values() {
        let mut rng = SplitMix64::new(2);
        let mut m = |r, c| Matrix::from_vec(r, c, random_lane(&mut rng, r * c)).unwrap();
        let gen = AttentionFeatures::new(m(5, 8), m(5, 8), m(5, 8)).unwrap();
        let cached = AttentionFeatures::new(m(5, 8), m(5, 8), m(5, 8)).unwrap();
        let cfg0 = FsaiConfig::new(0.0, FsaiAxis::Channel).unwrap();
        let cfg1 = FsaiConfig::new(1.0, FsaiAxis::Channel).unwrap();
        let zero = apply_fsai_qk(&gen, &cached, &cfg0).unwrap();
        let one = apply_fsai_qk(&gen, &cached, &cfg1).unwrap();
        assert!(zero.q.max_abs_diff(&cached.q) <= 1e-5 && zero.k.max_abs_diff(&cached.k) <= 1e-5);
        assert!(one.q.max_abs_diff(&gen.q) <= 1e-5 && one.k.max_abs_diff(&gen.k) <= 1e-5);
        assert!(zero.v.bit_eq(&gen.v) && one.v.bit_eq(&gen.v));
        let bad = AttentionFeatures::new(m(4, 8), m(4, 8), m(4, 8)).unwrap();
        assert!(apply_fsai_qk(&gen, &bad, &cfg0).is_err());
    }

    #[test]
    fn rho_out_of_range() {
        assert!(FsaiConfig::new(1.5, FsaiAxis::Channel).is_err());
        assert!(FsaiConfig::new(-0.1, FsaiAxis::Channel).is_err());
    }

    fn lane_pair() -> impl Strategy<Value = (Vec<f32>, Vec<f32>, f64)> {
        (1usize..20).prop_flat_map(|len| {
            (
                proptest::collection::vec(-2f32..2.0, len),
                proptest::collection::vec(-2f32..2.0, len),
                0.0f64..=1.0,
            )
        })
    }

    proptest! {
        #[test]
        fn linear_in_both_arguments((a, c, rho) in lane_pair(), seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let b = random_lane(&mut rng, a.len());
            let d = random_lane(&mut rng, a.len());
            let ab: Vec<f32> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let cd: Vec<f32> = c.iter().zip(&d).map(|(x, y)| x + y).collect();
            let lhs = fsai_lane(&ab, &cd, rho).unwrap();
            let r1 = fsai_lane(&a, &c, rho).unwrap();
            let r2 = fsai_lane(&b, &d, rho).unwrap();
            for i in 0..a.len() {
                prop_assert!((lhs[i] - r1[i] - r2[i]).abs() <= 1e-5);
            }
        }

        #[test]
        fn idempotent((s, t, rho) in lane_pair()) {
            let once = fsai_lane(&s, &t, rho).unwrap();
            let twice = fsai_lane(&once, &t, rho).unwrap();
            for i in 0..s.len() {
                prop_assert!((once[i] - twice[i]).abs() <= 1e-5);
            }
        }

        #[test]
        fn parseval_energy((s, t, rho) in lane_pair()) {
            let len = s.len();
            let half = len / 2 + 1;
            let low = low_band_bins(rho, half);
            let (ss, ts) = (naive_dft(&s), naive_dft(&t));
            let weight = |k: usize| if k == 0 || (len.is_multiple_of(2) && k == len / 2) { 1.0 } else { 2.0 };
            let expected: f64 = (0..half)
                .map(|k| weight(k) * if k < low { ss[k].norm_sqr() } else { ts[k].norm_sqr() })
                .sum::<f64>() / len as f64;
            // DC and Nyquist of a real lane are real, so the weighting is exact.
            let out = fsai_lane(&s, &t, rho).unwrap();
            let energy: f64 = out.iter().map(|&v| (v as f64).powi(2)).sum();
            prop_assert!((energy - expected).abs() <= 1e-4 * expected.max(1e-3));
        }
    }
}
