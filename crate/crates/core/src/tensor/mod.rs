//! Dense float tensors and the numeric primitives shared by every CAM method.
//!
//! Feature and gradient stacks are stored channels-last (`H' x W' x C`), the
//! layout the exporter writes. Images are kept planar (`3 x H x W`) because
//! that is what the model graphs consume.

mod image;
mod npy;
mod ops;

pub use self::image::{overlay_heatmap, Image, Normalization};
pub(crate) use self::image::load_rgb8;
pub use self::npy::{load_array_file, save_array_file};
pub use self::ops::{
    bilinear_upsample, channel_l2_norms, gaussian_blur_2d, gaussian_kernel, percentile,
    relu_normalize, upsample_plane,
};
pub(crate) use self::ops::convolve_renormalized;

use crate::error::{Error, Result};

/// Row-major `f32` array with shape metadata.
///
/// Every extent is positive and every value finite; constructors enforce both.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParameter(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::LengthMismatch {
                shape,
                len: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match *self.shape.as_slice() {
            [h, w] => Ok((h, w)),
            _ => Err(Error::WrongRank {
                expected: 2,
                found: self.rank(),
            }),
        }
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::WrongRank {
                expected: 3,
                found: self.rank(),
            }),
        }
    }

    /// Extracts channel `c` of a channels-last `H x W x C` tensor as a flat
    /// row-major `H x W` plane.
    pub fn channel(&self, c: usize) -> Result<Vec<f32>> {
        let (_, _, channels) = self.dims3()?;
        if c >= channels {
            return Err(Error::InvalidParameter(format!(
                "channel {c} out of range for {channels} channels"
            )));
        }
        Ok(self.data.iter().skip(c).step_by(channels).copied().collect())
    }

    /// Channels-last `H x W x C` to a batch-of-one `1 x C x H x W` tensor.
    pub fn hwc_to_nchw(&self) -> Result<Tensor> {
        let (h, w, c) = self.dims3()?;
        let mut out = vec![0.0f32; self.data.len()];
        for (pos, pixel) in self.data.chunks_exact(c).enumerate() {
            for (ch, &v) in pixel.iter().enumerate() {
                out[ch * h * w + pos] = v;
            }
        }
        Ok(Tensor {
            shape: vec![1, c, h, w],
            data: out,
        })
    }

    /// Returns a copy with every element mapped through `f`; fails if the
    /// result contains non-finite values.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Tensor> {
        Tensor::new(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                found: other.shape.clone(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .fold(0.0, f64::max))
    }
}

/// Single-channel saliency map with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl Heatmap {
    /// Wraps an existing map; every value must lie in `[0, 1]`.
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParameter("heatmap extents must be positive".into()));
        }
        if values.len() != height * width {
            return Err(Error::LengthMismatch {
                shape: vec![height, width],
                len: values.len(),
            });
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter(
                "heatmap values must lie in [0, 1]".into(),
            ));
        }
        Ok(Heatmap {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            shape: vec![self.height, self.width],
            data: self.values.clone(),
        }
    }
}
