use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{Heatmap, Tensor};
use crate::error::{Error, Result};

/// Per-channel mean/std standardization applied to `[0, 1]` pixel values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Normalization {
    pub const IMAGENET: Normalization = Normalization {
        mean: [0.485, 0.456, 0.406],
        std: [0.229, 0.224, 0.225],
    };

    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|&s| !(s > 0.0) || !s.is_finite())
            || self.mean.iter().any(|m| !m.is_finite())
        {
            return Err(Error::InvalidParameter(
                "normalization std must be positive and mean finite".into(),
            ));
        }
        Ok(())
    }
}

/// Three-channel image in normalized space, stored planar (`3 x H x W`).
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn from_planar(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParameter("image extents must be positive".into()));
        }
        if data.len() != 3 * height * width {
            return Err(Error::LengthMismatch {
                shape: vec![3, height, width],
                len: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn from_rgb8(rgb: &RgbImage, norm: &Normalization) -> Result<Self> {
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let mut data = vec![0.0f32; 3 * h * w];
        for (i, px) in rgb.pixels().enumerate() {
            for c in 0..3 {
                data[c * h * w + i] = (px[c] as f32 / 255.0 - norm.mean[c]) / norm.std[c];
            }
        }
        Image::from_planar(h, w, data)
    }

    pub fn load_png(path: &Path, norm: &Normalization) -> Result<Self> {
        Image::from_rgb8(&load_rgb8(path)?, norm)
    }

    pub fn to_rgb8(&self, norm: &Normalization) -> RgbImage {
        let plane = self.height * self.width;
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let i = y as usize * self.width + x as usize;
            image::Rgb(std::array::from_fn(|c| {
                let v = (self.data[c * plane + i] * norm.std[c] + norm.mean[c]) * 255.0;
                v.round().clamp(0.0, 255.0) as u8
            }))
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Planar `3 x H x W` values.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Batch-of-one `1 x 3 x H x W` model input.
    pub fn to_input_tensor(&self) -> Tensor {
        Tensor::new(vec![1, 3, self.height, self.width], self.data.clone())
            .expect("image invariants guarantee a valid tensor")
    }

    /// Scales every channel of pixel `i` by `weights[i]`.
    pub fn scaled_by(&self, weights: &[f32]) -> Result<Image> {
        if weights.len() != self.pixels() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.height, self.width],
                found: vec![weights.len()],
            });
        }
        let data = self
            .data
            .chunks_exact(self.pixels())
            .flat_map(|plane| plane.iter().zip(weights).map(|(&v, &m)| v * m))
            .collect();
        Image::from_planar(self.height, self.width, data)
    }

    /// Takes pixel `i` from `other` wherever `take[i]` is set.
    pub fn blend_from(&self, other: &Image, take: &[bool]) -> Result<Image> {
        if other.height != self.height || other.width != self.width {
            return Err(Error::ShapeMismatch {
                expected: vec![self.height, self.width],
                found: vec![other.height, other.width],
            });
        }
        let n = self.pixels();
        if take.len() != n {
            return Err(Error::ShapeMismatch {
                expected: vec![self.height, self.width],
                found: vec![take.len()],
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .enumerate()
            .map(|(i, (&mine, &theirs))| if take[i % n] { theirs } else { mine })
            .collect();
        Image::from_planar(self.height, self.width, data)
    }
}

pub(crate) fn load_rgb8(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    Ok(img.to_rgb8())
}

fn jet(v: f32) -> [f32; 3] {
    let f = |x: f32| (1.5 - (4.0 * v - x).abs()).clamp(0.0, 1.0);
    [f(3.0), f(2.0), f(1.0)]
}

/// Blends a jet-coloured heatmap over `base` at 40% opacity.
pub fn overlay_heatmap(base: &RgbImage, heat: &Heatmap) -> Result<RgbImage> {
    if base.width() as usize != heat.width() || base.height() as usize != heat.height() {
        return Err(Error::ShapeMismatch {
            expected: vec![base.height() as usize, base.width() as usize],
            found: vec![heat.height(), heat.width()],
        });
    }
    const ALPHA: f32 = 0.4;
    let mut out = base.clone();
    for (px, &v) in out.pixels_mut().zip(heat.values()) {
        let colour = jet(v);
        for c in 0..3 {
            let mixed = (1.0 - ALPHA) * px[c] as f32 + ALPHA * colour[c] * 255.0;
            px[c] = mixed.round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_round_trip_through_normalization() {
        let rgb = RgbImage::from_fn(4, 3, |x, y| image::Rgb([x as u8 * 60, y as u8 * 90, 17]));
        let img = Image::from_rgb8(&rgb, &Normalization::IMAGENET).unwrap();
        assert_eq!((img.height(), img.width()), (3, 4));
        assert_eq!(img.to_rgb8(&Normalization::IMAGENET), rgb);
        // a pixel at the dataset mean maps to zero
        let mean_px = RgbImage::from_pixel(1, 1, image::Rgb([124, 116, 104]));
        let z = Image::from_rgb8(&mean_px, &Normalization::IMAGENET).unwrap();
        assert!(z.data().iter().all(|v| v.abs() < 0.01));
    }

    #[test]
    fn overlay_extremes() {
        let base = RgbImage::from_pixel(2, 1, image::Rgb([100, 100, 100]));
        let heat = Heatmap::new(1, 2, vec![0.0, 1.0]).unwrap();
        let out = overlay_heatmap(&base, &heat).unwrap();
        // cold end is dark blue, hot end dark red
        assert_eq!(out.get_pixel(0, 0).0, [60, 60, 111]);
        assert_eq!(out.get_pixel(1, 0).0, [111, 60, 60]);
    }

    #[test]
    fn scale_and_blend() {
        let a = Image::from_planar(1, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Image::from_planar(1, 2, vec![0.0; 6]).unwrap();
        assert_eq!(a.scaled_by(&[1.0, 0.0]).unwrap().data(), &[1., 0., 3., 0., 5., 0.]);
        assert_eq!(a.blend_from(&b, &[false, true]).unwrap().data(), &[1., 0., 3., 0., 5., 0.]);
    }
}
