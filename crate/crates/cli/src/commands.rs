use std::path::{Path, PathBuf};

use cfcam::bundle::{discover_bundles, open_bundle, ExplainBundle};
use cfcam::cfcam::CfCamParams;
use cfcam::clustering::ClusterAlgorithm;
use cfcam::explain::{explain as run_method, Explanation, Method};
use cfcam::metrics::{evaluate_explanation, EvalReport, ImageEval, MethodReport, MethodSummary, MetricParams};
use cfcam::robustness::{robustness_sweep, SweepInput};
use cfcam::tensor::{bilinear_upsample, overlay_heatmap, save_array_file};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::args::{AblateArgs, Arm, EvaluateArgs, ExplainArgs, RobustnessArgs};
use crate::output::{write_atomic, write_json, write_text, write_via_path};
use crate::CliError;

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))
}

fn ms(d: std::time::Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn validate_cam(params: &CfCamParams) -> Result<(), CliError> {
    params.clustering.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if !(params.sigma_filter > 0.0) {
        return Err(CliError::Usage(format!("--sigma must be positive, got {}", params.sigma_filter)));
    }
    Ok(())
}

fn validate_metrics(params: &MetricParams) -> Result<(), CliError> {
    params.validate().map_err(|e| CliError::Usage(e.to_string()))
}

fn bundle_dirs(root: &Path) -> Result<Vec<PathBuf>, CliError> {
    let dirs = discover_bundles(root)?;
    if dirs.is_empty() {
        return Err(CliError::Runtime(format!("no bundles found under {}", root.display())));
    }
    Ok(dirs)
}

fn dir_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

/// Opens every bundle; failures are logged and returned separately.
fn open_all(dirs: &[PathBuf]) -> (Vec<ExplainBundle>, Vec<(String, String)>) {
    let opened: Vec<_> = dirs.par_iter().map(|d| (dir_name(d), open_bundle(d))).collect();
    let mut bundles = Vec::new();
    let mut failures = Vec::new();
    for (name, r) in opened {
        match r {
            Ok(b) => bundles.push(b),
            Err(e) => {
                log::warn!("skipping bundle {name}: {e}");
                failures.push((name, e.to_string()));
            }
        }
    }
    (bundles, failures)
}

pub fn explain(a: &ExplainArgs) -> Result<(), CliError> {
    let params = a.cam.params();
    validate_cam(&params)?;
    let out = &a.run.out;
    let bundle = open_bundle(&a.bundle)?;
    let Explanation {
        heatmap,
        partition,
        elapsed,
        ..
    } = run_method(&bundle, a.method, &params)?;

    write_via_path(&out.join("heatmap.npy"), |p| save_array_file(p, &heatmap.to_tensor()))?;
    let full = bilinear_upsample(&heatmap, bundle.image.height(), bundle.image.width())?;
    let overlay = overlay_heatmap(&bundle.rgb, &full)?;
    write_atomic(&out.join("overlay.png"), |buf| {
        overlay
            .write_to(&mut std::io::Cursor::new(buf), image::ImageFormat::Png)
            .map_err(|e| CliError::Runtime(format!("png: {e}")))
    })?;
    if let Some(p) = &partition {
        write_json(&out.join("partition.json"), &p.record())?;
    }
    write_json(
        &out.join("timing.json"),
        &json!({ "method": a.method, "bundle": bundle.id(), "t_infer_ms": ms(elapsed) }),
    )?;
    let derived = partition.as_ref().map(|p| p.derived);
    write_json(
        &out.join("config.json"),
        &json!({
            "command": "explain",
            "bundle": a.bundle,
            "method": a.method,
            "cfcam": params,
            "derived": derived,
            "seed": a.run.seed,
        }),
    )?;
    log::info!("{} on {} in {:.2} ms", a.method, bundle.id(), ms(elapsed));
    Ok(())
}

fn evaluate_one(
    bundle: &ExplainBundle,
    method: Method,
    cam: &CfCamParams,
    metrics: &MetricParams,
) -> cfcam::Result<(ImageEval, Explanation)> {
    let explanation = run_method(bundle, method, cam)?;
    let full = bilinear_upsample(&explanation.heatmap, bundle.image.height(), bundle.image.width())?;
    let eval = evaluate_explanation(
        &bundle.graphs.full,
        &bundle.id(),
        &bundle.image,
        &full,
        bundle.class_index(),
        metrics,
        ms(explanation.elapsed),
    )?;
    Ok((eval, explanation))
}

/// Evaluates one method over every bundle, keeping bundle order.
fn evaluate_method(
    label: &str,
    bundles: &[ExplainBundle],
    open_failures: &[(String, String)],
    method: Method,
    cam: &CfCamParams,
    metrics: &MetricParams,
) -> Result<(MethodReport, Vec<Option<Explanation>>), CliError> {
    let results: Vec<_> = bundles
        .par_iter()
        .map(|b| (b.id(), evaluate_one(b, method, cam, metrics)))
        .collect();
    let mut images = Vec::new();
    let mut explanations = Vec::new();
    let mut failures = open_failures.to_vec();
    for (id, r) in results {
        match r {
            Ok((eval, ex)) => {
                images.push(eval);
                explanations.push(Some(ex));
            }
            Err(e) => {
                log::warn!("{label} failed on {id}: {e}");
                failures.push((id, e.to_string()));
                explanations.push(None);
            }
        }
    }
    if images.is_empty() {
        return Err(CliError::Runtime(format!("{label}: every bundle failed")));
    }
    let summary = MethodSummary::from_images(label, &images)?;
    Ok((
        MethodReport {
            summary,
            images,
            failures,
        },
        explanations,
    ))
}

fn write_curves(dir: &Path, report: &MethodReport) -> Result<(), CliError> {
    for e in &report.images {
        for (kind, curve) in [("deletion", &e.deletion), ("insertion", &e.insertion)] {
            if let Some(c) = curve {
                let path = dir.join(format!("{}_{kind}.csv", e.image));
                write_atomic(&path, |buf| Ok(c.write_csv(buf)?))?;
            }
        }
    }
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let cam = a.cam.params();
    let metrics = a.metrics.params();
    validate_cam(&cam)?;
    validate_metrics(&metrics)?;
    let dirs = bundle_dirs(&a.bundles)?;
    let out = &a.run.out;
    let config = json!({
        "command": "evaluate",
        "bundles": a.bundles,
        "methods": a.method,
        "cfcam": cam,
        "metrics": metrics,
        "seed": a.run.seed,
        "jobs": a.run.jobs,
    });

    let methods = pool(a.run.jobs)?.install(|| -> Result<Vec<MethodReport>, CliError> {
        let (bundles, open_failures) = open_all(&dirs);
        if bundles.is_empty() {
            return Err(CliError::Runtime("no bundle could be opened".into()));
        }
        a.method
            .iter()
            .map(|&m| evaluate_method(m.name(), &bundles, &open_failures, m, &cam, &metrics).map(|r| r.0))
            .collect()
    })?;

    for m in &methods {
        write_curves(&out.join("curves").join(&m.summary.method), m)?;
    }
    let report = EvalReport { config: config.clone(), methods };
    write_json(&out.join("report.json"), &report)?;
    write_atomic(&out.join("report.csv"), |buf| Ok(report.write_summary_csv(buf)?))?;
    write_atomic(&out.join("timing.csv"), |buf| Ok(report.write_timing_csv(buf)?))?;
    write_json(&out.join("config.json"), &config)?;
    Ok(())
}

pub fn robustness(a: &RobustnessArgs) -> Result<(), CliError> {
    if let Some(m) = a.method.iter().find(|m| !m.uses_gradients()) {
        return Err(CliError::Usage(format!(
            "{m} is not gradient-based; robustness accepts cf-cam, grad-cam, grad-cam-pp"
        )));
    }
    let cam = a.cam.params();
    validate_cam(&cam)?;
    let spec = a.noise();
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let dirs = bundle_dirs(&a.bundles)?;
    let out = &a.run.out;

    let (curves, skipped) = pool(a.run.jobs)?.install(|| -> Result<_, CliError> {
        let (bundles, failures) = open_all(&dirs);
        let inputs: Vec<SweepInput> = bundles
            .iter()
            .map(|b| SweepInput {
                features: &b.features,
                g1: &b.g1,
                image_size: (b.image.height(), b.image.width()),
            })
            .collect();
        Ok((robustness_sweep(&inputs, &a.method, &spec, &cam)?, failures))
    })?;

    let config = json!({
        "command": "robustness",
        "bundles": a.bundles,
        "methods": a.method,
        "cfcam": cam,
        "noise": spec,
        "jobs": a.run.jobs,
    });
    write_atomic(&out.join("robustness.csv"), |buf| Ok(curves.write_csv(buf)?))?;
    write_text(&out.join("robustness.svg"), &curves.to_svg())?;
    write_json(
        &out.join("robustness.json"),
        &json!({ "config": config, "curves": curves, "skipped": skipped }),
    )?;
    write_json(&out.join("config.json"), &config)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct AblationDeltas {
    ad: f64,
    ai: f64,
    auc_del: f64,
    auc_ins: f64,
    t_infer_ms: f64,
}

pub fn ablate(a: &AblateArgs) -> Result<(), CliError> {
    let default = a.cam.params();
    validate_cam(&default)?;
    let metrics = a.metrics.params();
    validate_metrics(&metrics)?;
    if a.kmeans_k.is_some() && a.arm != Arm::Kmeans {
        return Err(CliError::Usage("--kmeans-k only applies to --arm kmeans".into()));
    }
    let mut variant = default;
    let label = match a.arm {
        Arm::NoL2 => {
            variant.clustering.l2_selection = false;
            "no-l2"
        }
        Arm::Kmeans => {
            variant.clustering.algorithm = ClusterAlgorithm::KMeans {
                k: a.kmeans_k,
                seed: a.run.seed,
            };
            "kmeans"
        }
    };
    let dirs = bundle_dirs(&a.bundles)?;
    let out = &a.run.out;

    let rows = pool(a.run.jobs)?.install(|| -> Result<_, CliError> {
        let (bundles, failures) = open_all(&dirs);
        if bundles.is_empty() {
            return Err(CliError::Runtime("no bundle could be opened".into()));
        }
        let mut rows = Vec::new();
        for (name, params) in [(label, &variant), ("default", &default)] {
            let (report, explanations) = evaluate_method(name, &bundles, &failures, Method::CfCam, params, &metrics)?;
            if a.dump_partition {
                for (b, ex) in bundles.iter().zip(&explanations) {
                    if let Some(p) = ex.as_ref().and_then(|e| e.partition.as_ref()) {
                        let path = out.join("partitions").join(format!("{}_{name}.json", b.id()));
                        write_json(&path, &p.record())?;
                    }
                }
            }
            rows.push(report);
        }
        Ok(rows)
    })?;

    let (v, d) = (&rows[0].summary, &rows[1].summary);
    let deltas = AblationDeltas {
        ad: v.ad - d.ad,
        ai: v.ai - d.ai,
        auc_del: v.auc_del - d.auc_del,
        auc_ins: v.auc_ins - d.auc_ins,
        t_infer_ms: v.t_infer_ms - d.t_infer_ms,
    };
    let config = json!({
        "command": "ablate",
        "bundles": a.bundles,
        "arm": label,
        "variant": variant,
        "default": default,
        "metrics": metrics,
        "seed": a.run.seed,
        "jobs": a.run.jobs,
    });
    let report = EvalReport {
        config: config.clone(),
        methods: rows,
    };
    write_json(
        &out.join("ablation.json"),
        &json!({ "report": report, "deltas": deltas }),
    )?;
    write_atomic(&out.join("ablation.csv"), |buf| Ok(report.write_summary_csv(buf)?))?;
    write_atomic(&out.join("timing.csv"), |buf| Ok(report.write_timing_csv(buf)?))?;
    write_json(&out.join("config.json"), &config)?;
    Ok(())
}
