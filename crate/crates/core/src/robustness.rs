//! Gradient-noise robustness: perturb the first-order gradient, regenerate
//! heatmaps and compare them to the clean ones.

use std::fmt::Write as _;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::GradientPowers;
use crate::cfcam::CfCamParams;
use crate::error::{Error, Result};
use crate::explain::{gradient_heatmap, Method};
use crate::metrics::{mse, ssim};
use crate::tensor::{bilinear_upsample, Heatmap, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    Absolute,
    /// sigma is a multiple of the gradient's standard deviation
    #[default]
    Relative,
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absolute" => Ok(NoiseMode::Absolute),
            "relative" => Ok(NoiseMode::Relative),
            _ => Err(Error::InvalidParameter(format!(
                "unknown noise mode {s:?}; expected absolute or relative"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub levels: Vec<f64>,
    pub mode: NoiseMode,
    pub trials: usize,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            levels: (1..=10).map(f64::from).collect(),
            mode: NoiseMode::Relative,
            trials: 5,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    /// Zero is accepted as a level: it is the clean control.
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::InvalidParameter("no noise levels".into()));
        }
        if let Some(bad) = self.levels.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::InvalidParameter(format!("noise level {bad} must be >= 0")));
        }
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        Ok(())
    }
}

/// Population standard deviation of all elements.
pub fn tensor_std(t: &Tensor) -> f64 {
    let n = t.len() as f64;
    let mean = t.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = t.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    var.sqrt()
}

/// Random stream for one trial. The four coordinates fill the ChaCha seed
/// directly, so streams never depend on scheduling order.
pub fn trial_rng(seed: u64, image: u64, level: u64, trial: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    for (chunk, v) in bytes.chunks_exact_mut(8).zip([seed, image, level, trial]) {
        chunk.copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

/// `g + N(0, s^2)` elementwise, `s = sigma` or `sigma * std(g)`.
pub fn perturb_gradients(g: &Tensor, sigma: f64, mode: NoiseMode, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise sigma {sigma} must be >= 0")));
    }
    let scale = match mode {
        NoiseMode::Absolute => sigma,
        NoiseMode::Relative => sigma * tensor_std(g),
    };
    if scale == 0.0 {
        return Ok(g.clone());
    }
    let normal = Normal::new(0.0, scale).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let data = g
        .data()
        .iter()
        .map(|&v| (v as f64 + normal.sample(rng)) as f32)
        .collect();
    Tensor::new(g.shape().to_vec(), data)
}

/// What the sweep needs from one bundle.
#[derive(Debug, Clone, Copy)]
pub struct SweepInput<'a> {
    pub features: &'a Tensor,
    pub g1: &'a Tensor,
    /// Heatmaps are compared after upsampling to this size.
    pub image_size: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodCurve {
    pub method: Method,
    pub mean_ssim: Vec<f64>,
    pub mean_mse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCurves {
    pub levels: Vec<f64>,
    pub curves: Vec<MethodCurve>,
}

fn heatmap_at(
    method: Method,
    input: &SweepInput,
    g1: Tensor,
    params: &CfCamParams,
) -> Result<Heatmap> {
    // powers are recomputed from g1 for both clean and noisy maps so that a
    // zero-noise trial reproduces the clean map exactly
    let powers = GradientPowers::from_first(g1)?;
    let m = gradient_heatmap(method, input.features, &powers, params)?;
    let (h, w) = input.image_size;
    bilinear_upsample(&m, h, w)
}

/// Mean SSIM and MSE between clean and perturbed heatmaps over every image
/// and trial, per method and noise level.
pub fn robustness_sweep(
    inputs: &[SweepInput],
    methods: &[Method],
    spec: &NoiseSpec,
    params: &CfCamParams,
) -> Result<RobustnessCurves> {
    spec.validate()?;
    if inputs.is_empty() {
        return Err(Error::EmptyInput("no bundles to sweep"));
    }
    if let Some(m) = methods.iter().find(|m| !m.uses_gradients()) {
        return Err(Error::InvalidParameter(format!(
            "{m} does not use gradients; robustness sweeps accept cf-cam, grad-cam, grad-cam-pp"
        )));
    }
    let clean: Vec<Vec<Heatmap>> = methods
        .iter()
        .map(|&method| {
            inputs
                .par_iter()
                .map(|input| heatmap_at(method, input, input.g1.clone(), params))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let levels = spec.levels.len();
    let mut tasks = Vec::new();
    for m in 0..methods.len() {
        for i in 0..inputs.len() {
            for l in 0..levels {
                for t in 0..spec.trials {
                    tasks.push((m, i, l, t));
                }
            }
        }
    }
    let scores: Vec<(f64, f64)> = tasks
        .par_iter()
        .map(|&(m, i, l, t)| {
            let input = &inputs[i];
            let mut rng = trial_rng(spec.seed, i as u64, l as u64, t as u64);
            let noisy = perturb_gradients(input.g1, spec.levels[l], spec.mode, &mut rng)?;
            let map = heatmap_at(methods[m], input, noisy, params)?;
            Ok((ssim(&clean[m][i], &map)?, mse(&clean[m][i], &map)?))
        })
        .collect::<Result<_>>()?;

    // sequential reduction in task order keeps the sums bit-reproducible
    let per_level = (inputs.len() * spec.trials) as f64;
    let mut curves: Vec<MethodCurve> = methods
        .iter()
        .map(|&method| MethodCurve {
            method,
            mean_ssim: vec![0.0; levels],
            mean_mse: vec![0.0; levels],
        })
        .collect();
    for (&(m, _, l, _), &(s, e)) in tasks.iter().zip(&scores) {
        curves[m].mean_ssim[l] += s;
        curves[m].mean_mse[l] += e;
    }
    for c in &mut curves {
        c.mean_ssim.iter_mut().for_each(|v| *v /= per_level);
        c.mean_mse.iter_mut().for_each(|v| *v /= per_level);
    }
    Ok(RobustnessCurves {
        levels: spec.levels.clone(),
        curves,
    })
}

impl RobustnessCurves {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let csv_err = |e: csv::Error| Error::InvalidParameter(format!("csv: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "sigma", "mean_ssim", "mean_mse"]).map_err(csv_err)?;
        for c in &self.curves {
            for (l, sigma) in self.levels.iter().enumerate() {
                w.write_record([
                    c.method.name().to_string(),
                    sigma.to_string(),
                    format!("{:.9}", c.mean_ssim[l]),
                    format!("{:.9}", c.mean_mse[l]),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| Error::io("<robustness csv>", e))
    }

    /// Two side-by-side line plots: mean SSIM and mean MSE against sigma.
    pub fn to_svg(&self) -> String {
        const W: f64 = 460.0;
        const H: f64 = 340.0;
        const LEFT: f64 = 60.0;
        const TOP: f64 = 40.0;
        const PW: f64 = 360.0;
        const PH: f64 = 240.0;
        const COLORS: [&str; 5] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e"];

        let xmin = self.levels.iter().copied().fold(f64::INFINITY, f64::min);
        let mut xmax = self.levels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if xmax <= xmin {
            xmax = xmin + 1.0;
        }

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{H}" font-family="sans-serif" font-size="12">"#,
            2.0 * W
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let panels: [(&str, fn(&MethodCurve) -> &Vec<f64>); 2] =
            [("Average SSIM", |c| &c.mean_ssim), ("Average MSE", |c| &c.mean_mse)];
        for (p, (title, series)) in panels.iter().enumerate() {
            let ox = p as f64 * W + LEFT;
            let values = self.curves.iter().flat_map(|c| series(c).iter().copied());
            let (mut ymin, mut ymax) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            if !ymin.is_finite() {
                (ymin, ymax) = (0.0, 1.0);
            }
            if ymax - ymin < 1e-12 {
                ymin -= 0.5;
                ymax += 0.5;
            }
            let px = |x: f64| ox + (x - xmin) / (xmax - xmin) * PW;
            let py = |y: f64| TOP + PH - (y - ymin) / (ymax - ymin) * PH;

            let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">{title} vs. noise level</text>"#, ox + PW / 2.0, TOP - 15.0);
            let _ = writeln!(svg, r#"<rect x="{ox}" y="{TOP}" width="{PW}" height="{PH}" fill="none" stroke="black"/>"#);
            for k in 0..=4 {
                let yv = ymin + (ymax - ymin) * k as f64 / 4.0;
                let y = py(yv);
                let _ = writeln!(svg, r##"<line x1="{ox}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/>"##, ox + PW);
                let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">{yv:.4}</text>"#, ox - 5.0, y + 4.0);
            }
            for &x in &self.levels {
                let _ = writeln!(svg, r#"<text x="{:.2}" y="{}" text-anchor="middle">{x}</text>"#, px(x), TOP + PH + 16.0);
            }
            let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">sigma</text>"#, ox + PW / 2.0, TOP + PH + 34.0);
            for (ci, c) in self.curves.iter().enumerate() {
                let color = COLORS[ci % COLORS.len()];
                let points: Vec<String> = self
                    .levels
                    .iter()
                    .zip(series(c))
                    .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
                    .collect();
                let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, points.join(" "));
                let ly = TOP + 15.0 + 16.0 * ci as f64;
                let _ = writeln!(svg, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, ox + PW - 110.0, ox + PW - 90.0);
                let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, ox + PW - 85.0, ly + 4.0, c.method);
            }
        }
        svg.push_str("</svg>\n");
        svg
    }
}
