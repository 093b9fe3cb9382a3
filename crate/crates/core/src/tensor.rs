//! Dense 4-d tensors in (frames, channels, height, width) row-major layout.
//!
//! Every public constructor and arithmetic helper rejects non-finite values,
//! so a `Tensor4` that exists is always finite. Reductions accumulate in
//! `f64`.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(frames: usize, channels: usize, height: usize, width: usize) -> Result<Self> {
        let shape = Shape {
            frames,
            channels,
            height,
            width,
        };
        if shape.dims().contains(&0) {
            return Err(Error::InvalidShape(shape.dims()));
        }
        Ok(shape)
    }

    pub fn from_dims(dims: [usize; 4]) -> Result<Self> {
        Self::new(dims[0], dims[1], dims[2], dims[3])
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.frames, self.channels, self.height, self.width]
    }

    pub fn numel(&self) -> usize {
        self.frames * self.channels * self.height * self.width
    }

    /// Number of pixels in one channel plane.
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    /// Number of values in one frame.
    pub fn frame_len(&self) -> usize {
        self.channels * self.plane_len()
    }

    pub fn with_frames(&self, frames: usize) -> Result<Self> {
        Self::new(frames, self.channels, self.height, self.width)
    }

    pub fn contains(&self, b: usize, c: usize, y: usize, x: usize) -> bool {
        b < self.frames && c < self.channels && y < self.height && x < self.width
    }

    #[inline]
    pub fn offset(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.channels + c) * self.height + y) * self.width + x
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    shape: Shape,
    data: Vec<f32>,
}

fn check_finite(data: &[f32]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(offset) => Err(Error::NonFinite {
            offset,
            value: data[offset],
        }),
        None => Ok(()),
    }
}

impl Tensor4 {
    pub fn zeros(shape: Shape) -> Self {
        Tensor4 {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn full(shape: Shape, value: f32) -> Result<Self> {
        check_finite(&[value])?;
        Ok(Tensor4 {
            shape,
            data: vec![value; shape.numel()],
        })
    }

    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::LengthMismatch {
                expected: shape.numel(),
                actual: data.len(),
            });
        }
        check_finite(&data)?;
        Ok(Tensor4 { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(shape.numel());
        for b in 0..shape.frames {
            for c in 0..shape.channels {
                for y in 0..shape.height {
                    for x in 0..shape.width {
                        data.push(f(b, c, y, x));
                    }
                }
            }
        }
        Self::from_vec(shape, data)
    }

    /// Concatenates tensors along the frame axis.
    pub fn stack(parts: &[Tensor4]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::param("cannot stack an empty list of tensors"))?;
        let mut frames = 0;
        for p in parts {
            if p.shape.channels != first.shape.channels
                || p.shape.height != first.shape.height
                || p.shape.width != first.shape.width
            {
                return Err(Error::shape(&first.shape.dims()[1..], &p.shape.dims()[1..]));
            }
            frames += p.shape.frames;
        }
        let shape = first.shape.with_frames(frames)?;
        let mut data = Vec::with_capacity(shape.numel());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dims(&self) -> [usize; 4] {
        self.shape.dims()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, b: usize, c: usize, y: usize, x: usize) -> Result<f32> {
        self.check_index(b, c, y, x)?;
        Ok(self.data[self.shape.offset(b, c, y, x)])
    }

    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, value: f32) -> Result<()> {
        self.check_index(b, c, y, x)?;
        check_finite(&[value])?;
        let o = self.shape.offset(b, c, y, x);
        self.data[o] = value;
        Ok(())
    }

    fn check_index(&self, b: usize, c: usize, y: usize, x: usize) -> Result<()> {
        if self.shape.contains(b, c, y, x) {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index: vec![b, c, y, x],
                shape: self.shape.dims().to_vec(),
            })
        }
    }

    fn check_frame(&self, b: usize) -> Result<()> {
        if b < self.shape.frames {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index: vec![b],
                shape: self.shape.dims().to_vec(),
            })
        }
    }

    /// Raw values of frame `b`, laid out (channels, height, width).
    pub fn frame_data(&self, b: usize) -> &[f32] {
        let n = self.shape.frame_len();
        &self.data[b * n..(b + 1) * n]
    }

    /// Copy of frame `b` as a single-frame tensor.
    pub fn frame(&self, b: usize) -> Result<Tensor4> {
        self.check_frame(b)?;
        Ok(Tensor4 {
            shape: self.shape.with_frames(1)?,
            data: self.frame_data(b).to_vec(),
        })
    }

    pub fn frames(&self, range: Range<usize>) -> Result<Tensor4> {
        if range.start >= range.end || range.end > self.shape.frames {
            return Err(Error::IndexOutOfRange {
                index: vec![range.start, range.end],
                shape: self.shape.dims().to_vec(),
            });
        }
        let n = self.shape.frame_len();
        Ok(Tensor4 {
            shape: self.shape.with_frames(range.len())?,
            data: self.data[range.start * n..range.end * n].to_vec(),
        })
    }

    /// Overwrites frame `b` with the single frame `src`.
    pub fn set_frame(&mut self, b: usize, src: &Tensor4) -> Result<()> {
        self.check_frame(b)?;
        let want = self.shape.with_frames(1)?;
        if src.shape != want {
            return Err(Error::shape(&want.dims(), &src.dims()));
        }
        let n = self.shape.frame_len();
        self.data[b * n..(b + 1) * n].copy_from_slice(&src.data);
        Ok(())
    }

    /// Repeats a single-frame tensor `frames` times.
    pub fn repeat_frames(&self, frames: usize) -> Result<Tensor4> {
        if self.shape.frames != 1 {
            return Err(Error::shape(&[1], &[self.shape.frames]));
        }
        let shape = self.shape.with_frames(frames)?;
        Ok(Tensor4 {
            shape,
            data: self.data.repeat(frames),
        })
    }

    pub fn ensure_same_shape(&self, other: &Tensor4) -> Result<()> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(Error::shape(&self.dims(), &other.dims()))
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Tensor4> {
        let data: Vec<f32> = self.data.iter().map(|&v| f(v)).collect();
        check_finite(&data)?;
        Ok(Tensor4 {
            shape: self.shape,
            data,
        })
    }

    /// Elementwise `a * self + b * other`, evaluated in `f64`.
    pub fn lin_comb(&self, a: f64, other: &Tensor4, b: f64) -> Result<Tensor4> {
        self.ensure_same_shape(other)?;
        let data: Vec<f32> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&x, &y)| (a * x as f64 + b * y as f64) as f32)
            .collect();
        check_finite(&data)?;
        Ok(Tensor4 {
            shape: self.shape,
            data,
        })
    }

    pub fn add(&self, other: &Tensor4) -> Result<Tensor4> {
        self.lin_comb(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &Tensor4) -> Result<Tensor4> {
        self.lin_comb(1.0, other, -1.0)
    }

    pub fn scale(&self, a: f64) -> Result<Tensor4> {
        self.map(|v| (a * v as f64) as f32)
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64) * (v as f64)).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.sum_sq().sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()))
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Max-norm distance `max |self - other|`.
    pub fn max_abs_diff(&self, other: &Tensor4) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (&a, &b)| m.max((a as f64 - b as f64).abs())))
    }

    pub fn mean_sq_diff(&self, other: &Tensor4) -> Result<f64> {
        self.ensure_same_shape(other)?;
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum();
        Ok(s / self.data.len() as f64)
    }

    /// Bit-level equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &Tensor4) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn offsets_are_row_major() {
        let s = Shape::new(2, 3, 4, 5).unwrap();
        assert_eq!(s.offset(0, 0, 0, 1), 1);
        assert_eq!(s.offset(0, 0, 1, 0), 5);
        assert_eq!(s.offset(0, 1, 0, 0), 20);
        assert_eq!(s.offset(1, 0, 0, 0), 60);
        assert_eq!(s.offset(1, 2, 3, 4), s.numel() - 1);
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(Shape::new(1, 0, 2, 2), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn non_finite_rejected() {
        let s = Shape::new(1, 1, 1, 2).unwrap();
        assert!(matches!(
            Tensor4::from_vec(s, vec![0.0, f32::NAN]),
            Err(Error::NonFinite { offset: 1, .. })
        ));
        let mut t = Tensor4::zeros(s);
        assert!(t.set(0, 0, 0, 0, f32::INFINITY).is_err());
        let big = Tensor4::full(s, f32::MAX).unwrap();
        assert!(big.add(&big).is_err());
    }

    #[test]
    fn length_mismatch_rejected() {
        let s = Shape::new(1, 1, 2, 2).unwrap();
        assert!(matches!(
            Tensor4::from_vec(s, vec![0.0; 3]),
            Err(Error::LengthMismatch { expected: 4, actual: 3 })
        ));
    }

    #[test]
    fn frame_helpers() {
        let s = Shape::new(3, 1, 1, 2).unwrap();
        let t = Tensor4::from_fn(s, |b, _, _, x| (b * 10 + x) as f32).unwrap();
        assert_eq!(t.frame(1).unwrap().data(), &[10.0, 11.0]);
        assert_eq!(t.frames(1..3).unwrap().data(), &[10.0, 11.0, 20.0, 21.0]);
        let parts = [t.frame(2).unwrap(), t.frame(0).unwrap()];
        assert_eq!(Tensor4::stack(&parts).unwrap().data(), &[20.0, 21.0, 0.0, 1.0]);
        assert!(t.frame(3).is_err());
    }

    proptest! {
        #[test]
        fn get_after_set_roundtrips(b in 0usize..2, c in 0usize..3, y in 0usize..4, x in 0usize..5,
                                    v in -1e6f32..1e6) {
            let mut t = Tensor4::zeros(Shape::new(2, 3, 4, 5).unwrap());
            t.set(b, c, y, x, v).unwrap();
            prop_assert_eq!(t.get(b, c, y, x).unwrap().to_bits(), v.to_bits());
            prop_assert_eq!(t.data()[t.shape().offset(b, c, y, x)], v);
        }

        #[test]
        fn arithmetic_is_deterministic(vals in proptest::collection::vec(-10f32..10.0, 8)) {
            let s = Shape::new(1, 2, 2, 2).unwrap();
            let a = Tensor4::from_vec(s, vals.clone()).unwrap();
            let b = a.scale(0.37).unwrap();
            let r1 = a.lin_comb(1.3, &b, -0.7).unwrap();
            let r2 = a.lin_comb(1.3, &b, -0.7).unwrap();
            prop_assert!(r1.bit_eq(&r2));
            prop_assert_eq!(a.l2_norm().to_bits(), a.l2_norm().to_bits());
        }
    }
}
