//! Single-head spatial self-attention over latent tokens, the feature cache
//! shared by the reconstruction and generation branches, and the hooks that
//! record or inject query/key features.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::{Arc, RwLock};

use crate::error::{Error, Result};
use crate::fats::{fats_pass_seeded, FatsConfig, FlowField};
use crate::fsai::{apply_fsai_qk, FsaiConfig};
use crate::io::write_tensor;
use crate::rng::SplitMix64;
use crate::tensor::{Shape, Tensor4};

/// Dense row-major `rows × cols` matrix of `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::param(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if let Some((offset, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { offset, value });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f32> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(&[self.cols, other.cols], &[other.rows, other.cols]));
        }
        let mut out = vec![0.0f32; self.rows * other.cols];
        let mut acc = vec![0.0f64; other.cols];
        for r in 0..self.rows {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (i, &a) in self.row(r).iter().enumerate() {
                for (o, &b) in acc.iter_mut().zip(other.row(i)) {
                    *o += a as f64 * b as f64;
                }
            }
            for (o, a) in out[r * other.cols..(r + 1) * other.cols].iter_mut().zip(&acc) {
                *o = *a as f32;
            }
        }
        Matrix::from_vec(self.rows, other.cols, out)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff on mismatched shapes");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (a, b)| m.max((*a as f64 - *b as f64).abs()))
    }

    pub fn bit_eq(&self, other: &Matrix) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Reads frame `b` of a `(B, C, H, W)` tensor as `(H·W, C)` tokens,
    /// token index `y·W + x`.
    pub fn from_frame(t: &Tensor4, b: usize) -> Result<Matrix> {
        let s = t.shape();
        if b >= s.frames {
            return Err(Error::IndexOutOfRange {
                index: vec![b],
                shape: s.dims().to_vec(),
            });
        }
        let n = s.plane_len();
        let frame = t.frame_data(b);
        let mut data = vec![0.0f32; n * s.channels];
        for c in 0..s.channels {
            for (i, &v) in frame[c * n..(c + 1) * n].iter().enumerate() {
                data[i * s.channels + c] = v;
            }
        }
        Matrix::from_vec(n, s.channels, data)
    }

    /// Inverse of [`Matrix::from_frame`]: `(H·W, D)` tokens to a `(1, D, H, W)` map.
    pub fn to_frame(&self, height: usize, width: usize) -> Result<Tensor4> {
        if height * width != self.rows {
            return Err(Error::shape(&[height * width, self.cols], &[self.rows, self.cols]));
        }
        let shape = Shape::new(1, self.cols, height, width)?;
        let n = self.rows;
        let mut data = vec![0.0f32; self.data.len()];
        for i in 0..n {
            for c in 0..self.cols {
                data[c * n + i] = self.data[i * self.cols + c];
            }
        }
        Tensor4::from_vec(shape, data)
    }
}

/// Queries, keys and values of one frame at one layer and timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionFeatures {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
}

impl AttentionFeatures {
    pub fn new(q: Matrix, k: Matrix, v: Matrix) -> Result<Self> {
        if q.shape() != k.shape() || q.shape() != v.shape() {
            let (a, b, c) = (q.shape(), k.shape(), v.shape());
            return Err(Error::ShapeMismatch {
                expected: vec![a.0, a.1],
                actual: if k.shape() != a { vec![b.0, b.1] } else { vec![c.0, c.1] },
            });
        }
        Ok(AttentionFeatures { q, k, v })
    }

    pub fn tokens(&self) -> usize {
        self.q.rows()
    }

    pub fn dim(&self) -> usize {
        self.q.cols()
    }

    pub fn byte_len(&self) -> usize {
        3 * 4 * self.q.data().len()
    }
}

/// Projection weights: `W_q, W_k, W_v` are `C × D`, the output map `W_o` is `D × C`.
#[derive(Clone, Debug, PartialEq)]
pub struct QkvWeights {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
}

impl QkvWeights {
    pub fn new(wq: Matrix, wk: Matrix, wv: Matrix, wo: Matrix) -> Result<Self> {
        if wq.shape() != wk.shape() || wq.shape() != wv.shape() {
            return Err(Error::param("W_q, W_k and W_v must share one shape"));
        }
        if wo.shape() != (wq.cols(), wq.rows()) {
            let (c, d) = wq.shape();
            return Err(Error::shape(&[d, c], &[wo.rows(), wo.cols()]));
        }
        Ok(QkvWeights { wq, wk, wv, wo })
    }

    /// Deterministic weights from one SplitMix64 stream.
    ///
    /// Entries are uniform in `±gain·sqrt(3/fan_in)`, filled in the order
    /// `W_q, W_k, W_v, W_o`, each row-major.
    pub fn seeded(seed: u64, channels: usize, dim: usize, gain: f64) -> Result<Self> {
        if channels == 0 || dim == 0 {
            return Err(Error::param(
                "attention needs at least one channel and one feature dimension",
            ));
        }
        if !(gain.is_finite() && gain >= 0.0) {
            return Err(Error::param(format!(
                "weight gain must be finite and non-negative, got {gain}"
            )));
        }
        let mut rng = SplitMix64::new(seed);
        let mut fill = |rows: usize, cols: usize, fan_in: usize| {
            let lim = gain * (3.0 / fan_in as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.uniform(-lim, lim) as f32).collect();
            Matrix::from_vec(rows, cols, data)
        };
        let wq = fill(channels, dim, channels)?;
        let wk = fill(channels, dim, channels)?;
        let wv = fill(channels, dim, channels)?;
        let wo = fill(dim, channels, dim)?;
        QkvWeights::new(wq, wk, wv, wo)
    }

    pub fn channels(&self) -> usize {
        self.wq.rows()
    }

    pub fn dim(&self) -> usize {
        self.wq.cols()
    }
}

/// Scales a frame's tokens by one factor so their joint root-mean-square is one.
///
/// A single factor per frame keeps the map Lipschitz near zero-norm tokens,
/// which the inversion fixed-point solve relies on.
pub fn rms_normalize(tokens: &Matrix) -> Matrix {
    let ms = tokens.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / tokens.data().len() as f64;
    let inv = 1.0 / (ms + 1e-6).sqrt();
    Matrix {
        rows: tokens.rows(),
        cols: tokens.cols(),
        data: tokens.data().iter().map(|&v| (v as f64 * inv) as f32).collect(),
    }
}

pub fn compute_qkv(tokens: &Matrix, w: &QkvWeights) -> Result<AttentionFeatures> {
    if tokens.cols() != w.channels() {
        return Err(Error::shape(
            &[tokens.rows(), w.channels()],
            &[tokens.rows(), tokens.cols()],
        ));
    }
    AttentionFeatures::new(tokens.matmul(&w.wq)?, tokens.matmul(&w.wk)?, tokens.matmul(&w.wv)?)
}

/// Row-stochastic matrix `softmax(scale · q kᵀ)`.
pub fn attention_weights(f: &AttentionFeatures, scale: f64) -> Matrix {
    let n = f.tokens();
    let mut data = Vec::with_capacity(n * n);
    let mut logits = vec![0.0f64; n];
    for i in 0..n {
        let qi = f.q.row(i);
        for (j, l) in logits.iter_mut().enumerate() {
            *l = scale
                * qi.iter()
                    .zip(f.k.row(j))
                    .map(|(a, b)| *a as f64 * *b as f64)
                    .sum::<f64>();
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        data.extend(exps.iter().map(|e| (e / sum) as f32));
    }
    Matrix { rows: n, cols: n, data }
}

/// `softmax(scale · q kᵀ) · v`, row by row without materializing the `N × N` weights.
pub fn attend(f: &AttentionFeatures, scale: f64) -> Result<Matrix> {
    let (n, d) = f.q.shape();
    let scale = scale as f32;
    // Column-major copies so the inner loops run over contiguous token lanes.
    let kt = transpose(&f.k);
    let vt = transpose(&f.v);
    let mut out = vec![0.0f32; n * d];
    let mut logits = vec![0.0f32; n];
    for i in 0..n {
        let qi = f.q.row(i);
        logits.iter_mut().for_each(|l| *l = 0.0);
        for (c, &q) in qi.iter().enumerate() {
            let q = q * scale;
            for (l, &k) in logits.iter_mut().zip(&kt[c * n..(c + 1) * n]) {
                *l += q * k;
            }
        }
        let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        logits.iter_mut().for_each(|l| *l = (*l - max).exp());
        let sum = lane_sum(&logits, None);
        for c in 0..d {
            out[i * d + c] = (lane_sum(&logits, Some(&vt[c * n..(c + 1) * n])) / sum) as f32;
        }
    }
    Matrix::from_vec(n, d, out)
}

fn transpose(m: &Matrix) -> Vec<f32> {
    let (r, c) = m.shape();
    let mut out = vec![0.0f32; r * c];
    for i in 0..r {
        for (j, &v) in m.row(i).iter().enumerate() {
            out[j * r + i] = v;
        }
    }
    out
}

/// `Σ a` or `Σ a·b`, with eight `f32` partial sums per block folded into `f64`.
fn lane_sum(a: &[f32], b: Option<&[f32]>) -> f64 {
    let mut total = 0.0f64;
    let mut blocks = a.chunks(256).enumerate();
    for (bi, block) in &mut blocks {
        let mut part = [0.0f32; 8];
        match b {
            Some(b) => {
                let bb = &b[bi * 256..bi * 256 + block.len()];
                for (x, y) in block.chunks(8).zip(bb.chunks(8)) {
                    for k in 0..x.len() {
                        part[k] += x[k] * y[k];
                    }
                }
            }
            None => {
                for x in block.chunks(8) {
                    for k in 0..x.len() {
                        part[k] += x[k];
                    }
                }
            }
        }
        total += part.iter().map(|&p| p as f64).sum::<f64>();
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureKey {
    pub layer: usize,
    pub timestep: usize,
    pub frame: usize,
}

impl FeatureKey {
    pub fn new(layer: usize, timestep: usize, frame: usize) -> Self {
        FeatureKey { layer, timestep, frame }
    }

    /// File name used by [`FeatureCache::dump`].
    pub fn file_name(&self) -> String {
        format!("l{}_t{:04}_f{:04}.tnsr", self.layer, self.timestep, self.frame)
    }
}

impl fmt::Display for FeatureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(layer {}, t={}, frame {})", self.layer, self.timestep, self.frame)
    }
}

/// Write-once store of recorded features.
///
/// Readers and writers of distinct keys may run concurrently; entries are
/// never modified after insertion.
#[derive(Debug, Default)]
pub struct FeatureCache {
    entries: RwLock<HashMap<FeatureKey, Arc<AttentionFeatures>>>,
}

impl FeatureCache {
    pub fn new() -> Self {
        FeatureCache::default()
    }

    pub fn record(&self, key: FeatureKey, f: AttentionFeatures) -> Result<()> {
        let mut map = self.entries.write().expect("feature cache lock poisoned");
        if let Some(existing) = map.values().next() {
            if existing.dim() != f.dim() {
                return Err(Error::shape(&[f.tokens(), existing.dim()], &[f.tokens(), f.dim()]));
            }
        }
        if map.contains_key(&key) {
            return Err(Error::DuplicateCacheEntry(key));
        }
        map.insert(key, Arc::new(f));
        Ok(())
    }

    pub fn get(&self, key: FeatureKey) -> Result<Arc<AttentionFeatures>> {
        self.entries
            .read()
            .expect("feature cache lock poisoned")
            .get(&key)
            .cloned()
            .ok_or(Error::MissingCacheEntry(key))
    }

    pub fn contains(&self, key: FeatureKey) -> bool {
        self.entries
            .read()
            .expect("feature cache lock poisoned")
            .contains_key(&key)
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("feature cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Payload bytes of all stored q, k and v values.
    pub fn memory_bytes(&self) -> usize {
        self.entries
            .read()
            .expect("feature cache lock poisoned")
            .values()
            .map(|f| f.byte_len())
            .sum()
    }

    pub fn keys(&self) -> Vec<FeatureKey> {
        let mut keys: Vec<_> = self
            .entries
            .read()
            .expect("feature cache lock poisoned")
            .keys()
            .copied()
            .collect();
        keys.sort();
        keys
    }

    /// Writes one `(3, 1, N, D)` tensor per entry (q, k, v stacked) into `dir`.
    pub fn dump(&self, dir: impl AsRef<Path>) -> Result<usize> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let keys = self.keys();
        for key in &keys {
            let f = self.get(*key)?;
            let (n, d) = f.q.shape();
            let mut data = Vec::with_capacity(3 * n * d);
            data.extend_from_slice(f.q.data());
            data.extend_from_slice(f.k.data());
            data.extend_from_slice(f.v.data());
            let t = Tensor4::from_vec(Shape::new(3, 1, n, d)?, data)?;
            write_tensor(dir.join(key.file_name()), &t)?;
        }
        Ok(keys.len())
    }
}

/// Queries and keys taken verbatim from the cache, values kept from `gen`.
pub fn tsg_replace(gen: &AttentionFeatures, cache: &FeatureCache, key: FeatureKey) -> Result<AttentionFeatures> {
    let cached = cache.get(key)?;
    if cached.q.shape() != gen.q.shape() {
        let (a, b) = (gen.q.shape(), cached.q.shape());
        return Err(Error::shape(&[a.0, a.1], &[b.0, b.1]));
    }
    AttentionFeatures::new(cached.q.clone(), cached.k.clone(), gen.v.clone())
}

/// Per-timestep aligned q and k of the last frame of a window, used to seed
/// the temporal chain of the next window at its overlapping first frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FatsCarry {
    entries: HashMap<usize, (Matrix, Matrix)>,
}

impl FatsCarry {
    pub fn get(&self, t: usize) -> Option<&(Matrix, Matrix)> {
        self.entries.get(&t)
    }

    pub fn insert(&mut self, t: usize, q: Matrix, k: Matrix) {
        self.entries.insert(t, (q, k));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Temporal smoothing settings carried by an injecting hook.
#[derive(Clone, Debug)]
pub struct FatsInjection {
    pub fsai: FsaiConfig,
    pub fats: FatsConfig,
    /// Flow between consecutive frames of the batch at latent resolution.
    pub flows: FlowField,
    /// Timesteps at which smoothing runs.
    pub active: Vec<usize>,
    pub carry_in: FatsCarry,
    pub carry_out: FatsCarry,
}

#[derive(Clone, Debug)]
pub enum InjectPolicy {
    TsgReplace,
    Fsai(FsaiConfig),
    FsaiFats(Box<FatsInjection>),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct HookStats {
    pub recorded: usize,
    pub injected: usize,
    pub smoothed_steps: usize,
}

#[derive(Debug)]
enum HookMode<'a> {
    None,
    Record(&'a FeatureCache),
    Inject(&'a FeatureCache, InjectPolicy),
}

/// Observation or replacement of attention inputs for a batch of frames.
///
/// Frame `b` of the batch is keyed as frame `first_frame + b`.
#[derive(Debug)]
pub struct AttentionHooks<'a> {
    mode: HookMode<'a>,
    first_frame: usize,
    stats: HookStats,
}

impl<'a> AttentionHooks<'a> {
    pub fn none() -> Self {
        AttentionHooks {
            mode: HookMode::None,
            first_frame: 0,
            stats: HookStats::default(),
        }
    }

    pub fn record(cache: &'a FeatureCache, first_frame: usize) -> Self {
        AttentionHooks {
            mode: HookMode::Record(cache),
            first_frame,
            stats: HookStats::default(),
        }
    }

    pub fn inject(cache: &'a FeatureCache, policy: InjectPolicy, first_frame: usize) -> Self {
        AttentionHooks {
            mode: HookMode::Inject(cache, policy),
            first_frame,
            stats: HookStats::default(),
        }
    }

    pub fn stats(&self) -> HookStats {
        self.stats
    }

    /// Aligned features handed to the next window, if smoothing ran.
    pub fn take_carry(&mut self) -> FatsCarry {
        match &mut self.mode {
            HookMode::Inject(_, InjectPolicy::FsaiFats(inj)) => std::mem::take(&mut inj.carry_out),
            _ => FatsCarry::default(),
        }
    }

    /// Applies the hook to the features of every frame in a batch.
    pub fn process(
        &mut self,
        layer: usize,
        t: usize,
        feats: Vec<AttentionFeatures>,
        height: usize,
        width: usize,
    ) -> Result<Vec<AttentionFeatures>> {
        let first = self.first_frame;
        match &mut self.mode {
            HookMode::None => Ok(feats),
            HookMode::Record(cache) => {
                for (b, f) in feats.iter().enumerate() {
                    cache.record(FeatureKey::new(layer, t, first + b), f.clone())?;
                    self.stats.recorded += 1;
                }
                Ok(feats)
            }
            HookMode::Inject(cache, policy) => {
                let mut out = Vec::with_capacity(feats.len());
                for (b, f) in feats.iter().enumerate() {
                    let key = FeatureKey::new(layer, t, first + b);
                    let blended = match policy {
                        InjectPolicy::TsgReplace => tsg_replace(f, cache, key)?,
                        InjectPolicy::Fsai(cfg) => apply_fsai_qk(f, &*cache.get(key)?, cfg)?,
                        InjectPolicy::FsaiFats(inj) => apply_fsai_qk(f, &*cache.get(key)?, &inj.fsai)?,
                    };
                    self.stats.injected += 1;
                    out.push(blended);
                }
                if let InjectPolicy::FsaiFats(inj) = policy {
                    if inj.active.contains(&t) {
                        out = smooth_batch(out, inj, t, height, width)?;
                        self.stats.smoothed_steps += 1;
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Runs the temporal chain over the q and k maps of a batch.
fn smooth_batch(
    feats: Vec<AttentionFeatures>,
    inj: &mut FatsInjection,
    t: usize,
    height: usize,
    width: usize,
) -> Result<Vec<AttentionFeatures>> {
    let to_maps = |pick: &dyn Fn(&AttentionFeatures) -> &Matrix| -> Result<Tensor4> {
        let frames: Vec<Tensor4> = feats
            .iter()
            .map(|f| pick(f).to_frame(height, width))
            .collect::<Result<_>>()?;
        Tensor4::stack(&frames)
    };
    let q_maps = to_maps(&|f| &f.q)?;
    let k_maps = to_maps(&|f| &f.k)?;
    let (seed_q, seed_k) = match inj.carry_in.get(t) {
        Some((q, k)) => (Some(q.to_frame(height, width)?), Some(k.to_frame(height, width)?)),
        None => (None, None),
    };
    let q_maps = fats_pass_seeded(&q_maps, &inj.flows, &inj.fats, seed_q.as_ref())?;
    let k_maps = fats_pass_seeded(&k_maps, &inj.flows, &inj.fats, seed_k.as_ref())?;
    let mut out = Vec::with_capacity(feats.len());
    for (b, f) in feats.into_iter().enumerate() {
        let q = Matrix::from_frame(&q_maps, b)?;
        let k = Matrix::from_frame(&k_maps, b)?;
        out.push(AttentionFeatures::new(q, k, f.v)?);
    }
    let last = out.last().expect("non-empty batch");
    inj.carry_out.insert(t, last.q.clone(), last.k.clone());
    Ok(out)
}
