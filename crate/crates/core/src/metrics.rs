//! Faithfulness metrics (deletion/insertion curves, Average Drop/Increase)
//! and heatmap similarity (SSIM, MSE).

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{forward_probs, Classifier};
use crate::tensor::{gaussian_blur_2d, Heatmap, Image};

pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_TOP_FRACTION: f64 = 0.5;
pub const DEFAULT_BLUR_SIGMA: f64 = 10.0;

/// Pixel indices by descending saliency; equal values keep ascending index.
pub fn saliency_order(values: &[f32]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order
}

/// Selects the `floor(fraction * HW)` most salient pixels.
pub fn top_fraction_mask(m: &Heatmap, fraction: f64) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidParameter(format!(
            "fraction {fraction} outside [0, 1]"
        )));
    }
    let n = m.values().len();
    let count = ((fraction * n as f64).floor() as usize).min(n);
    let mut mask = vec![false; n];
    for &i in &saliency_order(m.values())[..count] {
        mask[i] = true;
    }
    Ok(mask)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub fractions: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Curve {
    pub fn new(fractions: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if fractions.len() != probs.len() || fractions.len() < 2 {
            return Err(Error::InvalidParameter(
                "curve needs matching fractions and probabilities, at least two points".into(),
            ));
        }
        let ordered = fractions.windows(2).all(|w| w[0] < w[1]);
        if !ordered || fractions[0] != 0.0 || *fractions.last().unwrap() != 1.0 {
            return Err(Error::InvalidParameter(
                "curve fractions must increase strictly from 0 to 1".into(),
            ));
        }
        Ok(Curve { fractions, probs })
    }

    /// Curve with every probability divided by `reference`.
    pub fn normalized_by(&self, reference: f64) -> Result<Curve> {
        if !(reference > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "cannot normalize a curve by {reference}"
            )));
        }
        Ok(Curve {
            fractions: self.fractions.clone(),
            probs: self.probs.iter().map(|p| p / reference).collect(),
        })
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::InvalidParameter(format!("csv: {e}"));
        w.write_record(["fraction", "probability"]).map_err(csv_err)?;
        for (f, p) in self.fractions.iter().zip(&self.probs) {
            w.write_record([f.to_string(), p.to_string()]).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<curve csv>", e))?;
        Ok(())
    }
}

/// Trapezoidal area under a curve.
pub fn auc(curve: &Curve) -> f64 {
    curve
        .fractions
        .windows(2)
        .zip(curve.probs.windows(2))
        .map(|(f, p)| (f[1] - f[0]) * (p[0] + p[1]) / 2.0)
        .sum()
}

fn check_heatmap_fits(image: &Image, m: &Heatmap) -> Result<()> {
    if m.height() != image.height() || m.width() != image.width() {
        return Err(Error::ShapeMismatch {
            expected: vec![image.height(), image.width()],
            found: vec![m.height(), m.width()],
        });
    }
    Ok(())
}

/// Walks `k = 0..=steps`, each time setting the `k * n / steps` most salient
/// pixels of `start` to the values in `source`, and records the class
/// probability. One forward pass per step.
fn progressive_curve<C: Classifier + ?Sized>(
    model: &C,
    start: &Image,
    source: &Image,
    m: &Heatmap,
    steps: usize,
    class_idx: usize,
) -> Result<Curve> {
    if steps == 0 {
        return Err(Error::InvalidParameter("curve needs at least one step".into()));
    }
    let n = m.values().len();
    let order = saliency_order(m.values());
    let mut take = vec![false; n];
    let mut done = 0;
    let mut fractions = Vec::with_capacity(steps + 1);
    let mut probs = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let count = k * n / steps;
        for &i in &order[done..count] {
            take[i] = true;
        }
        done = count;
        let current = start.blend_from(source, &take)?;
        probs.push(forward_probs(model, &current.to_input_tensor(), class_idx)?);
        fractions.push(k as f64 / steps as f64);
    }
    Curve::new(fractions, probs)
}

/// Probability as the most salient pixels are replaced by zeros.
pub fn deletion_curve<C: Classifier + ?Sized>(
    model: &C,
    image: &Image,
    m: &Heatmap,
    steps: usize,
    class_idx: usize,
) -> Result<Curve> {
    check_heatmap_fits(image, m)?;
    let blank = Image::from_planar(image.height(), image.width(), vec![0.0; image.data().len()])?;
    progressive_curve(model, image, &blank, m, steps, class_idx)
}

/// Probability as the most salient pixels are restored into a blurred copy.
pub fn insertion_curve<C: Classifier + ?Sized>(
    model: &C,
    image: &Image,
    m: &Heatmap,
    steps: usize,
    blur_sigma: f64,
    class_idx: usize,
) -> Result<Curve> {
    check_heatmap_fits(image, m)?;
    let blurred = gaussian_blur_2d(image, blur_sigma)?;
    progressive_curve(model, &blurred, image, m, steps, class_idx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdMask {
    /// Keep the top fraction of salient pixels, zero the rest.
    #[default]
    Binary,
    /// Multiply the image by the heatmap.
    Soft,
}

/// The input Average Drop/Increase scores: the image restricted to the
/// explanation.
pub fn explanation_input(image: &Image, m: &Heatmap, top_fraction: f64, mode: AdMask) -> Result<Image> {
    check_heatmap_fits(image, m)?;
    match mode {
        AdMask::Binary => {
            let keep = top_fraction_mask(m, top_fraction)?;
            let drop: Vec<bool> = keep.iter().map(|k| !k).collect();
            let blank = Image::from_planar(image.height(), image.width(), vec![0.0; image.data().len()])?;
            image.blend_from(&blank, &drop)
        }
        AdMask::Soft => image.scaled_by(m.values()),
    }
}

/// Per-image Average Drop contribution and Average Increase indicator, both
/// in percent.
pub fn drop_increase_terms(y: f64, o: f64) -> Result<(f64, f64)> {
    if !(y > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "full-image probability must be positive, got {y}"
        )));
    }
    let drop = 100.0 * (y - o).max(0.0) / y;
    let increase = if o > y { 100.0 } else { 0.0 };
    Ok((drop, increase))
}

/// `(AD, AI)` in percent over `(Y, O)` pairs.
pub fn average_drop_increase(pairs: &[(f64, f64)]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no probability pairs"));
    }
    let mut ad = 0.0;
    let mut ai = 0.0;
    for &(y, o) in pairs {
        let (d, i) = drop_increase_terms(y, o)?;
        ad += d;
        ai += i;
    }
    let n = pairs.len() as f64;
    Ok((ad / n, ai / n))
}

fn check_same_size(a: &Heatmap, b: &Heatmap) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::ShapeMismatch {
            expected: vec![a.height(), a.width()],
            found: vec![b.height(), b.width()],
        });
    }
    Ok(())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Normalized 1-D Gaussian taps of the SSIM window, `size` taps centred on
/// `(size - 1) / 2`.
pub fn ssim_window(size: usize) -> Vec<f64> {
    let centre = (size as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let t = i as f64 - centre;
            (-t * t / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Valid-mode separable filtering of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let s = taps.len();
    let (oh, ow) = (h - s + 1, w - s + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(t, k)| k * plane[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(t, k)| k * rows[(y + t) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM with a Gaussian window (11 taps, sigma 1.5; shrunk to the
/// map when it is smaller), dynamic range 1, valid windows only.
pub fn ssim(a: &Heatmap, b: &Heatmap) -> Result<f64> {
    check_same_size(a, b)?;
    let (h, w) = (a.height(), a.width());
    let taps = ssim_window(SSIM_WINDOW.min(h).min(w));
    let av: Vec<f64> = a.values().iter().map(|&v| v as f64).collect();
    let bv: Vec<f64> = b.values().iter().map(|&v| v as f64).collect();
    let square = |x: &[f64]| -> Vec<f64> { x.iter().map(|v| v * v).collect() };
    let prod: Vec<f64> = av.iter().zip(&bv).map(|(x, y)| x * y).collect();

    let mu_a = filter_valid(&av, h, w, &taps);
    let mu_b = filter_valid(&bv, h, w, &taps);
    let ea2 = filter_valid(&square(&av), h, w, &taps);
    let eb2 = filter_valid(&square(&bv), h, w, &taps);
    let eab = filter_valid(&prod, h, w, &taps);

    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = ea2[i] - ma * ma;
        let vb = eb2[i] - mb * mb;
        let cov = eab[i] - ma * mb;
        let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
        total += num / den;
    }
    Ok(total / n as f64)
}

pub fn mse(a: &Heatmap, b: &Heatmap) -> Result<f64> {
    check_same_size(a, b)?;
    let sum: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.values().len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricParams {
    pub steps: usize,
    pub top_fraction: f64,
    pub blur_sigma: f64,
    pub ad_mask: AdMask,
    pub normalize_curves: bool,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams {
            steps: DEFAULT_STEPS,
            top_fraction: DEFAULT_TOP_FRACTION,
            blur_sigma: DEFAULT_BLUR_SIGMA,
            ad_mask: AdMask::Binary,
            normalize_curves: false,
        }
    }
}

impl MetricParams {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidParameter("steps must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.top_fraction) {
            return Err(Error::InvalidParameter(format!(
                "top fraction {} outside [0, 1]",
                self.top_fraction
            )));
        }
        if !(self.blur_sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "blur sigma must be positive, got {}",
                self.blur_sigma
            )));
        }
        Ok(())
    }
}

/// Metrics for one explanation of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEval {
    pub image: String,
    /// Class probability on the unmodified image.
    pub full_prob: f64,
    /// Class probability on the explanation-restricted image.
    pub explanation_prob: f64,
    pub drop: f64,
    pub increase: f64,
    pub auc_del: f64,
    pub auc_ins: f64,
    pub t_infer_ms: f64,
    #[serde(skip)]
    pub deletion: Option<Curve>,
    #[serde(skip)]
    pub insertion: Option<Curve>,
}

/// Runs every faithfulness metric for heatmap `m` (already at image size).
/// `t_infer_ms` is the caller's measured explanation time.
pub fn evaluate_explanation<C: Classifier + ?Sized>(
    model: &C,
    image_id: &str,
    image: &Image,
    m: &Heatmap,
    class_idx: usize,
    params: &MetricParams,
    t_infer_ms: f64,
) -> Result<ImageEval> {
    params.validate()?;
    let full_prob = forward_probs(model, &image.to_input_tensor(), class_idx)?;
    let restricted = explanation_input(image, m, params.top_fraction, params.ad_mask)?;
    let explanation_prob = forward_probs(model, &restricted.to_input_tensor(), class_idx)?;
    let (drop, increase) = drop_increase_terms(full_prob, explanation_prob)?;

    let mut deletion = deletion_curve(model, image, m, params.steps, class_idx)?;
    let mut insertion = insertion_curve(model, image, m, params.steps, params.blur_sigma, class_idx)?;
    if params.normalize_curves {
        let first = deletion.probs[0];
        let last = *insertion.probs.last().unwrap();
        deletion = deletion.normalized_by(first)?;
        insertion = insertion.normalized_by(last)?;
    }
    Ok(ImageEval {
        image: image_id.to_string(),
        full_prob,
        explanation_prob,
        drop,
        increase,
        auc_del: auc(&deletion),
        auc_ins: auc(&insertion),
        t_infer_ms,
        deletion: Some(deletion),
        insertion: Some(insertion),
    })
}

/// Means over the images of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub images: usize,
    pub ad: f64,
    pub ai: f64,
    pub auc_del: f64,
    pub auc_ins: f64,
    pub t_infer_ms: f64,
}

impl MethodSummary {
    pub fn from_images(method: &str, evals: &[ImageEval]) -> Result<Self> {
        if evals.is_empty() {
            return Err(Error::EmptyInput("no evaluated images"));
        }
        let pairs: Vec<(f64, f64)> = evals.iter().map(|e| (e.full_prob, e.explanation_prob)).collect();
        let (ad, ai) = average_drop_increase(&pairs)?;
        let n = evals.len() as f64;
        let mean = |f: fn(&ImageEval) -> f64| evals.iter().map(f).sum::<f64>() / n;
        Ok(MethodSummary {
            method: method.to_string(),
            images: evals.len(),
            ad,
            ai,
            auc_del: mean(|e| e.auc_del),
            auc_ins: mean(|e| e.auc_ins),
            t_infer_ms: mean(|e| e.t_infer_ms),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub summary: MethodSummary,
    pub images: Vec<ImageEval>,
    /// Images whose evaluation failed, with the error message.
    pub failures: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: serde_json::Value,
    pub methods: Vec<MethodReport>,
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Aggregate table without timing, so reruns are byte-identical.
    pub fn write_summary_csv(&self, out: impl Write) -> Result<()> {
        let csv_err = |e: csv::Error| Error::InvalidParameter(format!("csv: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "images", "AD", "AI", "AUC_del", "AUC_ins"])
            .map_err(csv_err)?;
        for m in &self.methods {
            let s = &m.summary;
            w.write_record([
                s.method.clone(),
                s.images.to_string(),
                format!("{:.6}", s.ad),
                format!("{:.6}", s.ai),
                format!("{:.6}", s.auc_del),
                format!("{:.6}", s.auc_ins),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<report csv>", e))
    }

    pub fn write_timing_csv(&self, out: impl Write) -> Result<()> {
        let csv_err = |e: csv::Error| Error::InvalidParameter(format!("csv: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "image", "t_infer_ms"]).map_err(csv_err)?;
        for m in &self.methods {
            for e in &m.images {
                w.write_record([m.summary.method.clone(), e.image.clone(), format!("{:.3}", e.t_infer_ms)])
                    .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| Error::io("<timing csv>", e))
    }
}
