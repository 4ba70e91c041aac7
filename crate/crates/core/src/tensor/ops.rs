use super::{Heatmap, Image, Tensor};
use crate::error::{Error, Result};

/// Linear-interpolation percentile: with the values sorted ascending and
/// rank `r = p/100 * (n-1)`, returns `v[floor r] + frac(r) * (v[ceil r] - v[floor r])`.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("percentile of an empty set"));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "percentile {p} outside [0, 100]"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// L2 norm of every channel of an `H x W x C` stack.
pub fn channel_l2_norms(features: &Tensor) -> Result<Vec<f64>> {
    let (_, _, c) = features.dims3()?;
    let mut sums = vec![0.0f64; c];
    for pixel in features.data().chunks_exact(c) {
        for (acc, &v) in sums.iter_mut().zip(pixel) {
            *acc += v as f64 * v as f64;
        }
    }
    Ok(sums.into_iter().map(f64::sqrt).collect())
}

/// `ReLU(x) / max(ReLU(x))`, or all zeros when nothing is positive.
pub fn relu_normalize(map: &Tensor) -> Result<Heatmap> {
    let (h, w) = map.dims2()?;
    let max = map.data().iter().copied().fold(0.0f32, f32::max);
    let values = if max > 0.0 {
        map.data().iter().map(|&v| v.max(0.0) / max).collect()
    } else {
        vec![0.0; h * w]
    };
    Heatmap::new(h, w, values)
}

/// Half-pixel-centred bilinear resampling of a row-major plane.
pub fn upsample_plane(
    data: &[f32],
    height: usize,
    width: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Vec<f32>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidParameter("zero-sized upsampling target".into()));
    }
    if out_h < height || out_w < width {
        return Err(Error::InvalidParameter(format!(
            "target {out_h}x{out_w} smaller than source {height}x{width}"
        )));
    }
    if data.len() != height * width {
        return Err(Error::LengthMismatch {
            shape: vec![height, width],
            len: data.len(),
        });
    }
    let rows = sample_positions(height, out_h);
    let cols = sample_positions(width, out_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(r0, r1, fr) in &rows {
        for &(c0, c1, fc) in &cols {
            let top = data[r0 * width + c0] as f64 * (1.0 - fc) + data[r0 * width + c1] as f64 * fc;
            let bottom =
                data[r1 * width + c0] as f64 * (1.0 - fc) + data[r1 * width + c1] as f64 * fc;
            out.push((top * (1.0 - fr) + bottom * fr) as f32);
        }
    }
    Ok(out)
}

fn sample_positions(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

pub fn bilinear_upsample(map: &Heatmap, out_h: usize, out_w: usize) -> Result<Heatmap> {
    let values = upsample_plane(map.values(), map.height(), map.width(), out_h, out_w)?;
    // Convex combinations of [0, 1] values; clamp away float drift only.
    let values = values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Heatmap::new(out_h, out_w, values)
}

/// Unnormalized Gaussian taps `exp(-t^2 / 2 sigma^2)` for `t` in
/// `[-ceil(3 sigma), ceil(3 sigma)]`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "gaussian sigma must be positive, got {sigma}"
        )));
    }
    let radius = (3.0 * sigma).ceil() as i64;
    Ok((-radius..=radius)
        .map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp())
        .collect())
}

/// Convolves `input` (read with `stride`) with a centred odd-length kernel,
/// dividing each output by the sum of the taps that landed in bounds.
///
/// Accumulates offsets from the centre sample, so constant runs and
/// single samples come back bit-exact.
pub(crate) fn convolve_renormalized(
    input: &[f64],
    kernel: &[f64],
    len: usize,
    stride: usize,
    out: &mut [f64],
) {
    let radius = (kernel.len() / 2) as isize;
    for i in 0..len as isize {
        let lo = (i - radius).max(0);
        let hi = (i + radius).min(len as isize - 1);
        let centre = input[i as usize * stride];
        let mut acc = 0.0;
        let mut norm = 0.0;
        for j in lo..=hi {
            let k = kernel[(j - i + radius) as usize];
            acc += k * (input[j as usize * stride] - centre);
            norm += k;
        }
        out[i as usize * stride] = centre + acc / norm;
    }
}

/// Separable Gaussian blur of every image plane with in-bounds renormalization.
pub fn gaussian_blur_2d(img: &Image, sigma: f64) -> Result<Image> {
    let kernel = gaussian_kernel(sigma)?;
    let (h, w) = (img.height(), img.width());
    let mut planes = Vec::with_capacity(3 * h * w);
    let mut line = vec![0.0f64; h.max(w)];
    let mut out = vec![0.0f64; h.max(w)];
    for plane in img.data().chunks_exact(h * w) {
        let mut buf: Vec<f64> = plane.iter().map(|&v| v as f64).collect();
        for row in buf.chunks_exact_mut(w) {
            line[..w].copy_from_slice(row);
            convolve_renormalized(&line[..w], &kernel, w, 1, &mut out[..w]);
            row.copy_from_slice(&out[..w]);
        }
        for col in 0..w {
            for r in 0..h {
                line[r] = buf[r * w + col];
            }
            convolve_renormalized(&line[..h], &kernel, h, 1, &mut out[..h]);
            for r in 0..h {
                buf[r * w + col] = out[r];
            }
        }
        planes.extend(buf.into_iter().map(|v| v as f32));
    }
    Image::from_planar(h, w, planes)
}
