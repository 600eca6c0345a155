//! Dense image containers.
//!
//! All images are stored row-major with interleaved channels, so the value of
//! channel `c` at row `y`, column `x` lives at `(y * width + x) * channels + c`.
//! Values are linear-light and nominally in `[0, 1]`.

use crate::error::{Error, Result};

/// Dense `height × width × channels` image.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "buffer of {} values does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds a tensor by evaluating `f(y, x, c)` at every sample.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width, channels)`
    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn same_dims(&self, other: &Tensor3) -> bool {
        self.dims() == other.dims()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    pub fn dot(&self, other: &Tensor3) -> f64 {
        debug_assert!(self.same_dims(other));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor3 {
        Tensor3 {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Tensor3 {
        self.map(|v| v * s)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor3 {
        self.map(|v| v.clamp(lo, hi))
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &Tensor3) {
        debug_assert!(self.same_dims(other));
        for (s, o) in self.data.iter_mut().zip(&other.data) {
            *s += a * o;
        }
    }

    pub fn add(&self, other: &Tensor3) -> Tensor3 {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &Tensor3) -> Tensor3 {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Copies a single channel out as a `H×W×1` tensor.
    pub fn channel(&self, c: usize) -> Tensor3 {
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px[c])
            .collect();
        Tensor3 {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    /// Writes a `H×W×1` plane into channel `c`.
    pub fn set_channel(&mut self, c: usize, plane: &Tensor3) {
        debug_assert_eq!(plane.channels, 1);
        debug_assert_eq!((plane.height, plane.width), (self.height, self.width));
        for (px, &v) in self.data.chunks_exact_mut(self.channels).zip(&plane.data) {
            px[c] = v;
        }
    }

    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Tensor3 {
        Tensor3::from_fn(height, width, self.channels, |y, x, c| {
            self.get(y0 + y, x0 + x, c)
        })
    }
}

/// One raw LR frame in packed RGGB form: `H/2 × W/2 × 4` with channel order
/// `[R, G_r, G_b, B]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedRaw(Tensor3);

impl PackedRaw {
    pub const CHANNELS: usize = 4;

    pub fn new(t: Tensor3) -> Result<Self> {
        if t.channels() != Self::CHANNELS {
            return Err(Error::Dimension(format!(
                "packed raw needs 4 channels, got {}",
                t.channels()
            )));
        }
        Ok(Self(t))
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self(Tensor3::zeros(height, width, Self::CHANNELS))
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.0
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor3 {
        &mut self.0
    }

    pub fn into_tensor(self) -> Tensor3 {
        self.0
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }
}

/// Ordered set of raw frames of the same scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Burst {
    frames: Vec<PackedRaw>,
    reference_index: usize,
}

impl Burst {
    pub fn new(frames: Vec<PackedRaw>) -> Result<Self> {
        Self::with_reference(frames, 0)
    }

    pub fn with_reference(frames: Vec<PackedRaw>, reference_index: usize) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::Argument("a burst needs at least one frame".into()));
        };
        let dims = first.tensor().dims();
        if let Some(bad) = frames.iter().position(|f| f.tensor().dims() != dims) {
            return Err(Error::Dimension(format!(
                "frame {bad} has dims {:?}, expected {dims:?}",
                frames[bad].tensor().dims()
            )));
        }
        if reference_index >= frames.len() {
            return Err(Error::Argument(format!(
                "reference index {reference_index} out of range for {} frames",
                frames.len()
            )));
        }
        Ok(Self {
            frames,
            reference_index,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[PackedRaw] {
        &self.frames
    }

    pub fn frame(&self, i: usize) -> &PackedRaw {
        &self.frames[i]
    }

    pub fn reference_index(&self) -> usize {
        self.reference_index
    }

    pub fn reference(&self) -> &PackedRaw {
        &self.frames[self.reference_index]
    }

    /// `(height, width)` of each packed frame.
    pub fn frame_dims(&self) -> (usize, usize) {
        (self.frames[0].height(), self.frames[0].width())
    }

    pub fn into_frames(self) -> Vec<PackedRaw> {
        self.frames
    }

    /// Sum of squared values over all frames.
    pub fn norm_sq(&self) -> f64 {
        self.frames.iter().map(|f| f.tensor().norm_sq()).sum()
    }

    pub fn dot(&self, other: &Burst) -> f64 {
        self.frames
            .iter()
            .zip(&other.frames)
            .map(|(a, b)| a.tensor().dot(b.tensor()))
            .sum()
    }
}
