//! Dense tensors for the little inference/training engine.
//!
//! Two shapes cover everything the networks need: channel-interleaved
//! `(H, W, C)` feature maps and flat vectors. All arithmetic is `f64` so the
//! finite-difference checks have headroom.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tensor shape: a spatial feature map or a flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Shape {
    Hwc { h: usize, w: usize, c: usize },
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Hwc { h, w, c } => h * w * c,
            Shape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hwc(&self) -> Option<(usize, usize, usize)> {
        match *self {
            Shape::Hwc { h, w, c } => Some((h, w, c)),
            Shape::Flat(_) => None,
        }
    }

    pub fn flat_len(&self) -> Option<usize> {
        match *self {
            Shape::Flat(n) => Some(n),
            Shape::Hwc { .. } => None,
        }
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            Shape::Hwc { h, w, c } => write!(f, "{h}x{w}x{c}"),
            Shape::Flat(n) => write!(f, "flat({n})"),
        }
    }
}

/// A shape plus its values. Feature maps are row-major with channels
/// interleaved: `data[(y * w + x) * c + ch]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "shape {shape} wants {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a feature-map tensor from interleaved `u8` counts divided by
    /// `normalization` (the patch-to-input conversion).
    pub fn from_u8_hwc(h: usize, w: usize, c: usize, counts: &[u8], normalization: f64) -> Result<Self> {
        if normalization <= 0.0 {
            return Err(Error::validation("normalization divisor must be positive"));
        }
        let shape = Shape::Hwc { h, w, c };
        if counts.len() != shape.len() {
            return Err(Error::shape(format!(
                "shape {shape} wants {} values, got {}",
                shape.len(),
                counts.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: counts.iter().map(|&v| v as f64 / normalization).collect(),
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Reinterprets the data under a new shape of identical length.
    pub fn reshaped(&self, shape: Shape) -> Result<Tensor> {
        if shape.len() != self.data.len() {
            return Err(Error::shape(format!(
                "cannot view {} values as {shape}",
                self.data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, ch: usize) -> f64 {
        let (_, w, c) = self.shape.hwc().expect("spatial access on flat tensor");
        self.data[(y * w + x) * c + ch]
    }
}
