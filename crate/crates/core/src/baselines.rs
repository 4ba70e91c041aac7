//! Reference CAM methods: Grad-CAM and Grad-CAM++ from exported gradients,
//! Score-CAM and Ablation-CAM from forward passes.

use crate::cfcam::weighted_sum;
use crate::error::{Error, Result};
use crate::inference::{forward_probs, Classifier};
use crate::tensor::{relu_normalize, upsample_plane, Heatmap, Image, Tensor};

/// Tolerance for the stored powers, relative to `max(1, |expected|)`.
pub const POWER_TOLERANCE: f64 = 1e-5;

/// First-order gradient with its elementwise square and cube.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientPowers {
    g1: Tensor,
    g2: Tensor,
    g3: Tensor,
}

/// Largest scaled deviation of `power` from `g1^exponent`.
pub fn power_deviation(g1: &Tensor, power: &Tensor, exponent: i32) -> Result<f64> {
    if g1.shape() != power.shape() {
        return Err(Error::ShapeMismatch {
            expected: g1.shape().to_vec(),
            found: power.shape().to_vec(),
        });
    }
    Ok(g1
        .data()
        .iter()
        .zip(power.data())
        .map(|(&g, &p)| {
            let expected = (g as f64).powi(exponent);
            (p as f64 - expected).abs() / expected.abs().max(1.0)
        })
        .fold(0.0, f64::max))
}

impl GradientPowers {
    /// Validates shapes and power consistency of exported tensors.
    pub fn new(g1: Tensor, g2: Tensor, g3: Tensor) -> Result<Self> {
        g1.dims3()?;
        for (name, t, exp) in [("g2", &g2, 2), ("g3", &g3, 3)] {
            let deviation = power_deviation(&g1, t, exp)?;
            if deviation > POWER_TOLERANCE {
                return Err(Error::PowerMismatch {
                    tensor: name,
                    deviation,
                });
            }
        }
        Ok(GradientPowers { g1, g2, g3 })
    }

    /// Computes the powers from `g1`.
    pub fn from_first(g1: Tensor) -> Result<Self> {
        g1.dims3()?;
        let g2 = g1.map(|v| v * v)?;
        let g3 = g1.map(|v| v * v * v)?;
        Ok(GradientPowers { g1, g2, g3 })
    }

    pub fn g1(&self) -> &Tensor {
        &self.g1
    }

    pub fn g2(&self) -> &Tensor {
        &self.g2
    }

    pub fn g3(&self) -> &Tensor {
        &self.g3
    }
}

fn check_same_shape(a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            expected: a.shape().to_vec(),
            found: b.shape().to_vec(),
        });
    }
    a.dims3()
}

/// Spatial mean of each gradient channel.
pub fn grad_cam_weights(g1: &Tensor) -> Result<Vec<f64>> {
    let (h, w, c) = g1.dims3()?;
    let mut sums = vec![0.0f64; c];
    for pixel in g1.data().chunks_exact(c) {
        for (s, &v) in sums.iter_mut().zip(pixel) {
            *s += v as f64;
        }
    }
    Ok(sums.into_iter().map(|s| s / (h * w) as f64).collect())
}

pub fn grad_cam(features: &Tensor, g1: &Tensor) -> Result<Heatmap> {
    check_same_shape(features, g1)?;
    relu_normalize(&weighted_sum(features, &grad_cam_weights(g1)?)?)
}

/// Grad-CAM++ channel weights under the exponential-score closed form:
/// `alpha = g2 / (2 g2 + sum(F) g3)` (zero where the denominator vanishes),
/// `w = sum(alpha * relu(g1))`.
pub fn grad_cam_pp_weights(features: &Tensor, powers: &GradientPowers) -> Result<Vec<f64>> {
    let (_, _, c) = check_same_shape(features, &powers.g1)?;
    let mut activation_sums = vec![0.0f64; c];
    for pixel in features.data().chunks_exact(c) {
        for (s, &v) in activation_sums.iter_mut().zip(pixel) {
            *s += v as f64;
        }
    }
    let mut weights = vec![0.0f64; c];
    let rows = powers
        .g1
        .data()
        .chunks_exact(c)
        .zip(powers.g2.data().chunks_exact(c))
        .zip(powers.g3.data().chunks_exact(c));
    for ((g1, g2), g3) in rows {
        for i in 0..c {
            let (a, b, d) = (g1[i] as f64, g2[i] as f64, g3[i] as f64);
            let denom = 2.0 * b + activation_sums[i] * d;
            let alpha = if denom != 0.0 { b / denom } else { 0.0 };
            weights[i] += alpha * a.max(0.0);
        }
    }
    Ok(weights)
}

pub fn grad_cam_pp(features: &Tensor, powers: &GradientPowers) -> Result<Heatmap> {
    relu_normalize(&weighted_sum(features, &grad_cam_pp_weights(features, powers)?)?)
}

/// Score-CAM channel weights: softmax over the increase in class
/// probability each min-max-normalized activation mask produces relative to
/// an all-zero input. Constant channels are skipped and get weight zero.
pub fn score_cam_weights<C: Classifier + ?Sized>(
    model: &C,
    image: &Image,
    features: &Tensor,
    class_idx: usize,
) -> Result<Vec<f64>> {
    let (fh, fw, c) = features.dims3()?;
    let (h, w) = (image.height(), image.width());
    let expected = [1, 3, h, w];
    if model.input_shape() != expected {
        return Err(Error::ShapeMismatch {
            expected: expected.to_vec(),
            found: model.input_shape().to_vec(),
        });
    }
    let blank = Tensor::zeros(expected.to_vec());
    let baseline = forward_probs(model, &blank, class_idx)?;

    let mut cic = Vec::new();
    for ch in 0..c {
        let plane = features.channel(ch)?;
        let lo = plane.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = plane.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        if hi <= lo {
            continue;
        }
        let up = upsample_plane(&plane, fh, fw, h, w)?;
        let span = (hi - lo) as f64;
        let mask: Vec<f32> = up
            .iter()
            .map(|&v| ((v - lo) as f64 / span).clamp(0.0, 1.0) as f32)
            .collect();
        let masked = image.scaled_by(&mask)?;
        let p = forward_probs(model, &masked.to_input_tensor(), class_idx)?;
        cic.push((ch, p - baseline));
    }
    if cic.is_empty() {
        return Err(Error::EmptyValidSet);
    }
    let max = cic.iter().map(|&(_, s)| s).fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = cic.iter().map(|&(_, s)| (s - max).exp()).sum();
    let mut weights = vec![0.0; c];
    for (ch, s) in cic {
        weights[ch] = (s - max).exp() / total;
    }
    Ok(weights)
}

pub fn score_cam<C: Classifier + ?Sized>(
    model: &C,
    image: &Image,
    features: &Tensor,
    class_idx: usize,
) -> Result<Heatmap> {
    let weights = score_cam_weights(model, image, features, class_idx)?;
    relu_normalize(&weighted_sum(features, &weights)?)
}

/// Ablation-CAM slopes `(y - y_i) / (|y| + 1e-8)` where `y_i` is the class
/// score with channel `i` zeroed. Issues exactly `C + 1` head calls.
pub fn ablation_cam_weights<C: Classifier + ?Sized>(
    head: &C,
    features: &Tensor,
    class_idx: usize,
) -> Result<Vec<f64>> {
    let (h, w, c) = features.dims3()?;
    let input = features.hwc_to_nchw()?;
    if head.input_shape() != input.shape() {
        return Err(Error::ShapeMismatch {
            expected: head.input_shape().to_vec(),
            found: input.shape().to_vec(),
        });
    }
    let score = |x: &Tensor| -> Result<f64> {
        let logits = head.logits(x)?;
        logits
            .get(class_idx)
            .map(|&v| v as f64)
            .ok_or_else(|| Error::InvalidParameter(format!("class {class_idx} out of range")))
    };
    let base = score(&input)?;
    let plane = h * w;
    let mut weights = Vec::with_capacity(c);
    for ch in 0..c {
        let mut data = input.data().to_vec();
        data[ch * plane..(ch + 1) * plane].fill(0.0);
        let ablated = score(&Tensor::new(input.shape().to_vec(), data)?)?;
        weights.push((base - ablated) / (base.abs() + 1e-8));
    }
    Ok(weights)
}

pub fn ablation_cam<C: Classifier + ?Sized>(
    head: &C,
    features: &Tensor,
    class_idx: usize,
) -> Result<Heatmap> {
    let weights = ablation_cam_weights(head, features, class_idx)?;
    relu_normalize(&weighted_sum(features, &weights)?)
}
