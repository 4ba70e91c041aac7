//! On-disk explanation bundles: one image, one class target, the captured
//! target-layer tensors and the three graphs needed to re-run the model.
//!
//! ```text
//! bundle/
//!   manifest.json  image.png
//!   F.npy  g1.npy  g2.npy  g3.npy
//!   full.onnx  backbone.onnx  head.onnx
//! ```

use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::baselines::{power_deviation, GradientPowers, POWER_TOLERANCE};
use crate::cfcam::GradientStack;
use crate::error::{Error, Result};
use crate::inference::{compose_check, softmax, ModelBundleGraphs, SUPPORTED_OPSET};
use crate::tensor::{load_array_file, Image, Normalization, Tensor};

pub const BUNDLE_VERSION: &str = "cfcam-bundle/1";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Largest tolerated gap between graph outputs that should agree
/// (composition, recorded parity values, re-extracted features).
pub const PARITY_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorFiles {
    pub features: String,
    pub g1: String,
    pub g2: String,
    pub g3: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFiles {
    pub full: String,
    pub backbone: String,
    pub head: String,
}

/// Values recorded by the exporter for cross-runtime checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parity {
    pub class_probability: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub class_index: usize,
    /// Pre-softmax class score.
    pub class_score: f64,
    #[serde(default = "default_gradient_target")]
    pub gradient_target: String,
    pub target_layer: String,
    pub opset: i64,
    pub normalization: Normalization,
    pub image: String,
    pub tensors: TensorFiles,
    pub graphs: GraphFiles,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parity: Option<Parity>,
}

fn default_gradient_target() -> String {
    "logit".into()
}

impl Manifest {
    /// Every file the manifest references, relative to the bundle root.
    pub fn referenced_files(&self) -> [&str; 8] {
        [
            &self.image,
            &self.tensors.features,
            &self.tensors.g1,
            &self.tensors.g2,
            &self.tensors.g3,
            &self.graphs.full,
            &self.graphs.backbone,
            &self.graphs.head,
        ]
    }
}

/// A bundle loaded from disk. Loading checks only that every piece parses;
/// the invariants are checked by [`validate_bundle`].
#[derive(Debug, Clone)]
pub struct ExplainBundle {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub rgb: RgbImage,
    pub image: Image,
    pub features: Tensor,
    pub g1: Tensor,
    pub g2: Tensor,
    pub g3: Tensor,
    pub graphs: ModelBundleGraphs,
}

impl ExplainBundle {
    /// Bundle directory name, used as the image id in reports.
    pub fn id(&self) -> String {
        self.dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.dir.display().to_string())
    }

    pub fn class_index(&self) -> usize {
        self.manifest.class_index
    }

    pub fn gradients(&self) -> Result<GradientStack> {
        GradientStack::new(self.g1.clone())
    }

    pub fn powers(&self) -> Result<GradientPowers> {
        GradientPowers::new(self.g1.clone(), self.g2.clone(), self.g3.clone())
    }
}

/// Reads and parses a manifest, rejecting unknown versions before looking at
/// any other field.
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    match raw.get("version").and_then(|v| v.as_str()) {
        Some(BUNDLE_VERSION) => {}
        Some(other) => {
            return Err(Error::Bundle(vec![format!(
                "version: unknown manifest version {other:?}, expected {BUNDLE_VERSION:?}"
            )]))
        }
        None => {
            return Err(Error::Bundle(vec![
                "version: manifest has no version field".into()
            ]))
        }
    }
    Ok(serde_json::from_value(raw)?)
}

/// Loads every referenced file. Missing files are all reported together.
pub fn load_bundle(dir: &Path) -> Result<ExplainBundle> {
    let manifest = read_manifest(dir)?;
    let missing: Vec<String> = manifest
        .referenced_files()
        .iter()
        .filter(|f| !dir.join(f).is_file())
        .map(|f| format!("files: missing {f}"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Bundle(missing));
    }
    manifest.normalization.validate()?;
    let rgb = crate::tensor::load_rgb8(&dir.join(&manifest.image))?;
    let image = Image::from_rgb8(&rgb, &manifest.normalization)?;
    let t = &manifest.tensors;
    let features = load_array_file(&dir.join(&t.features))?;
    let g1 = load_array_file(&dir.join(&t.g1))?;
    let g2 = load_array_file(&dir.join(&t.g2))?;
    let g3 = load_array_file(&dir.join(&t.g3))?;
    let g = &manifest.graphs;
    let graphs = ModelBundleGraphs::load(&dir.join(&g.full), &dir.join(&g.backbone), &dir.join(&g.head))?;
    Ok(ExplainBundle {
        dir: dir.to_path_buf(),
        manifest,
        rgb,
        image,
        features,
        g1,
        g2,
        g3,
        graphs,
    })
}

/// Names of the validation rules, in report order.
pub const RULES: [&str; 12] = [
    "version",
    "feature-rank",
    "gradient-shapes",
    "g2-power",
    "g3-power",
    "normalization",
    "opset",
    "image-size",
    "feature-layout",
    "class-index",
    "composition",
    "parity",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleResult {
    pub rule: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub results: Vec<RuleResult>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn violations(&self) -> Vec<String> {
        self.results
            .iter()
            .filter(|r| !r.passed)
            .map(|r| format!("{}: {}", r.rule, r.detail))
            .collect()
    }

    pub fn get(&self, rule: &str) -> Option<&RuleResult> {
        self.results.iter().find(|r| r.rule == rule)
    }
}

type Check = std::result::Result<String, String>;

fn shape_check(name: &str, expected: &[usize], found: &[usize]) -> Check {
    if expected == found {
        Ok(format!("{name} {found:?}"))
    } else {
        Err(format!("{name} has shape {found:?}, expected {expected:?}"))
    }
}

fn check_rule(b: &ExplainBundle, rule: &str) -> Check {
    let m = &b.manifest;
    let fshape = b.features.shape();
    let err = |e: Error| e.to_string();
    match rule {
        "version" => {
            if m.version == BUNDLE_VERSION {
                Ok(m.version.clone())
            } else {
                Err(format!("unknown version {:?}", m.version))
            }
        }
        "feature-rank" => b.features.dims3().map(|_| "H' x W' x C".into()).map_err(err),
        "gradient-shapes" => {
            for (name, t) in [("g1", &b.g1), ("g2", &b.g2), ("g3", &b.g3)] {
                shape_check(name, fshape, t.shape())?;
            }
            Ok(format!("{fshape:?}"))
        }
        "g2-power" | "g3-power" => {
            let (name, t, exp) = if rule == "g2-power" {
                ("g2", &b.g2, 2)
            } else {
                ("g3", &b.g3, 3)
            };
            let dev = power_deviation(&b.g1, t, exp).map_err(err)?;
            if dev <= POWER_TOLERANCE {
                Ok(format!("max deviation {dev:e}"))
            } else {
                Err(format!("{name} is not g1^{exp} (max deviation {dev:e})"))
            }
        }
        "normalization" => m.normalization.validate().map(|_| "ok".into()).map_err(err),
        "opset" => {
            let g = &b.graphs;
            for h in [&g.full, &g.backbone, &g.head] {
                if h.opset() != m.opset {
                    return Err(format!(
                        "{} declares opset {}, manifest says {}",
                        h.id(),
                        h.opset(),
                        m.opset
                    ));
                }
            }
            if m.opset > SUPPORTED_OPSET {
                return Err(format!("opset {} above supported {SUPPORTED_OPSET}", m.opset));
            }
            Ok(format!("{}", m.opset))
        }
        "image-size" => shape_check(
            "full graph input",
            &[1, 3, b.image.height(), b.image.width()],
            &b.graphs.full.input().shape,
        ),
        "feature-layout" => {
            let (h, w, c) = b.features.dims3().map_err(err)?;
            let nchw = [1, c, h, w];
            shape_check("backbone output", &nchw, &b.graphs.backbone.output().shape)?;
            shape_check("head input", &nchw, &b.graphs.head.input().shape)?;
            shape_check("backbone input", &b.graphs.full.input().shape, &b.graphs.backbone.input().shape)?;
            shape_check("head output", &b.graphs.full.output().shape, &b.graphs.head.output().shape)
        }
        "class-index" => {
            let n = b.graphs.full.output_len();
            if m.class_index < n {
                Ok(format!("{} of {n}", m.class_index))
            } else {
                Err(format!("class {} but the model has {n} outputs", m.class_index))
            }
        }
        "composition" => {
            let probe = b.image.to_input_tensor();
            let dev = compose_check(&b.graphs, &probe).map_err(err)?;
            if dev <= PARITY_TOLERANCE {
                Ok(format!("max deviation {dev:e}"))
            } else {
                Err(format!("head(backbone(x)) differs from full(x) by {dev:e}"))
            }
        }
        "parity" => check_parity(b),
        other => Err(format!("unknown rule {other}")),
    }
}

fn check_parity(b: &ExplainBundle) -> Check {
    let m = &b.manifest;
    let x = b.image.to_input_tensor();
    let logits = b.graphs.full.run(&x).map_err(|e| e.to_string())?.into_data();
    let y = *logits
        .get(m.class_index)
        .ok_or_else(|| format!("class {} out of range", m.class_index))? as f64;
    let scaled = |d: f64, reference: f64| d / reference.abs().max(1.0);
    let score_gap = scaled((y - m.class_score).abs(), m.class_score);
    if score_gap > PARITY_TOLERANCE {
        return Err(format!(
            "class score {y} differs from recorded {} (scaled gap {score_gap:e})",
            m.class_score
        ));
    }
    let features = b
        .graphs
        .backbone
        .run(&x)
        .map_err(|e| e.to_string())?;
    let stored = b.features.hwc_to_nchw().map_err(|e| e.to_string())?;
    let fgap = features.max_abs_diff(&stored).map_err(|e| e.to_string())?;
    let fscale = stored.data().iter().fold(1.0f64, |a, &v| a.max(v.abs() as f64));
    if fgap / fscale > PARITY_TOLERANCE {
        return Err(format!("backbone features differ from F.npy by {fgap:e}"));
    }
    if let Some(p) = &m.parity {
        let prob = softmax(&logits)[m.class_index];
        if (prob - p.class_probability).abs() > PARITY_TOLERANCE {
            return Err(format!(
                "class probability {prob} differs from recorded {}",
                p.class_probability
            ));
        }
        if let Some(rec) = &p.logits {
            if rec.len() != logits.len() {
                return Err(format!("{} recorded logits, model has {}", rec.len(), logits.len()));
            }
            for (a, &b) in rec.iter().zip(&logits) {
                if scaled((a - b as f64).abs(), *a) > PARITY_TOLERANCE {
                    return Err(format!("logit {b} differs from recorded {a}"));
                }
            }
        }
    }
    Ok(format!("class score {y:.6}, features within {fgap:e}"))
}

/// Runs the fixed rule set. Rules whose inputs are unusable fail with the
/// reason instead of aborting the report.
pub fn validate_bundle(bundle: &ExplainBundle) -> ValidationReport {
    let results = RULES
        .iter()
        .map(|&rule| {
            let (passed, detail) = match check_rule(bundle, rule) {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            RuleResult {
                rule: rule.to_string(),
                passed,
                detail,
            }
        })
        .collect();
    ValidationReport { results }
}

/// [`load_bundle`] followed by [`validate_bundle`]; any failed rule turns
/// into [`Error::Bundle`] listing every violation.
pub fn open_bundle(dir: &Path) -> Result<ExplainBundle> {
    let bundle = load_bundle(dir)?;
    let report = validate_bundle(&bundle);
    if !report.passed() {
        return Err(Error::Bundle(report.violations()));
    }
    log::debug!("opened bundle {}", dir.display());
    Ok(bundle)
}

/// Bundle directories directly under `root` (those holding a manifest),
/// sorted by name. `root` itself counts if it is a bundle.
pub fn discover_bundles(root: &Path) -> Result<Vec<PathBuf>> {
    if root.join(MANIFEST_FILE).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.join(MANIFEST_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}
