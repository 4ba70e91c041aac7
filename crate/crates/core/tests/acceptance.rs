//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs against the checked-in fixture bundles.

mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use cfcam::baselines::GradientPowers;
use cfcam::bundle::{open_bundle, ExplainBundle};
use cfcam::cfcam::{cf_cam, filter_cluster_gradients, normalize_weights, CfCamParams, GradientStack, Weighting};
use cfcam::clustering::{dbscan, derive_eps, derive_minpts, ChannelLabel, DistanceMatrix, PointLabel};
use cfcam::explain::{explain, Method};
use cfcam::inference::Classifier;
use cfcam::metrics::{auc, deletion_curve, evaluate_explanation, insertion_curve, mse, ssim, Curve, MetricParams, DEFAULT_STEPS};
use cfcam::robustness::{perturb_gradients, robustness_sweep, trial_rng, NoiseMode, NoiseSpec, SweepInput};
use cfcam::tensor::{bilinear_upsample, percentile, Heatmap, Tensor};
use rand::Rng;

use common::*;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

struct Counting<'a, C> {
    inner: &'a C,
    calls: AtomicUsize,
}

impl<'a, C: Classifier> Counting<'a, C> {
    fn new(inner: &'a C) -> Self {
        Counting {
            inner,
            calls: AtomicUsize::new(0),
        }
    }
    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<C: Classifier> Classifier for Counting<'_, C> {
    fn input_shape(&self) -> &[usize] {
        self.inner.input_shape()
    }
    fn logits(&self, x: &Tensor) -> cfcam::Result<Vec<f32>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.logits(x)
    }
}

fn bundles() -> Vec<ExplainBundle> {
    bundle_dirs().iter().map(|d| open_bundle(d).expect("fixture bundle opens")).collect()
}

fn dbscan_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    for case in 0..200 {
        let n = r.gen_range(2..=64);
        let dim = r.gen_range(1..=4);
        let integer = case % 2 == 0;
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..dim)
                    .map(|_| {
                        if integer {
                            r.gen_range(0..8) as f64
                        } else {
                            r.gen_range(-1.0..1.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let d = DistanceMatrix::from_points(&points);
        let eps = if case % 3 == 0 {
            r.gen_range(0.05..1.5)
        } else {
            derive_eps(&d, r.gen_range(1.0..40.0)).map_err(|e| e.to_string())?
        };
        let min_pts = r.gen_range(2..=5);
        let got: Vec<Option<usize>> = dbscan(&d, eps, min_pts)
            .into_iter()
            .map(|l| match l {
                PointLabel::Cluster(k) => Some(k),
                PointLabel::Noise => None,
            })
            .collect();
        let want = dbscan_oracle(&points, eps, min_pts);
        check(
            canonicalize(&got) == want,
            format!("instance {case} (n={n}, eps={eps}, min_pts={min_pts}) differs"),
        )?;
    }
    let t = start.elapsed();
    check(t < Duration::from_secs(10), format!("took {t:?}"))?;
    Ok(format!("200 instances match, {t:.2?}"))
}

fn parameter_formulas() -> Outcome {
    let m = [derive_minpts(100), derive_minpts(500), derive_minpts(2048)];
    check(m == [2, 5, 21], format!("minpts {m:?}"))?;
    let p = percentile(&[1.0, 2.0, 3.0, 4.0], 75.0).map_err(|e| e.to_string())?;
    check((p - 3.25).abs() <= 1e-9, format!("percentile {p}"))?;
    Ok("minpts 2/5/21, percentile 3.25".into())
}

fn filtering_correctness() -> Outcome {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let (h, w, c) = (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..40));
        let g = GradientStack::new(random_tensor(&mut r, vec![h, w, c], -1.0, 1.0)).unwrap();
        let mut cluster: Vec<usize> = (0..c).filter(|_| r.gen_bool(0.6)).collect();
        if cluster.is_empty() {
            cluster.push(r.gen_range(0..c));
        }
        // shuffle so the order the caller passes does not matter
        for i in (1..cluster.len()).rev() {
            cluster.swap(i, r.gen_range(0..=i));
        }
        let sigma = r.gen_range(0.3..7.0);
        let got = filter_cluster_gradients(&g, &cluster, sigma).map_err(|e| e.to_string())?;
        let mut members = cluster.clone();
        members.sort_unstable();
        for pos in 0..h * w {
            let seq: Vec<f64> = members.iter().map(|&ch| g.values().data()[pos * c + ch] as f64).collect();
            let want = filter_oracle(&seq, sigma);
            for (slot, (ch, map)) in got.iter().enumerate() {
                check(*ch == members[slot], format!("case {case}: member order"))?;
                worst = worst.max((map[pos] - want[slot]).abs());
            }
        }
    }
    check(worst <= 1e-6, format!("max deviation {worst:e}"))?;

    let constant = GradientStack::new(Tensor::new(vec![1, 2, 5], vec![0.25; 10]).unwrap()).unwrap();
    for (_, map) in filter_cluster_gradients(&constant, &[0, 1, 2, 3, 4], 5.0).unwrap() {
        check(map.iter().all(|&v| v == 0.25), "constant sequence moved")?;
    }
    let single = GradientStack::new(Tensor::new(vec![2, 1, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap()).unwrap();
    let out = filter_cluster_gradients(&single, &[1], 5.0).unwrap();
    check(out[0].1 == vec![0.2f32 as f64, 0.5f32 as f64], "singleton moved")?;
    Ok(format!("100 fixtures, max deviation {worst:.1e}; fixed points exact"))
}

fn weighting() -> Outcome {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    let mut with_noise = 0;
    for case in 0..1000 {
        let c = r.gen_range(1..48);
        let f = random_tensor(&mut r, vec![3, 3, c], -1.0, 2.0);
        let g = GradientStack::new(random_tensor(&mut r, vec![3, 3, c], -0.2, 0.2)).unwrap();
        let mut params = CfCamParams::default();
        params.clustering.p1 = r.gen_range(50.0..95.0);
        params.clustering.p2 = r.gen_range(2.0..40.0);
        params.clustering.l2_selection = case % 10 != 0;
        if r.gen_bool(0.2) {
            params.weighting = Weighting::Single;
        }
        let out = match cf_cam(&f, &g, &params) {
            Ok(o) => o,
            Err(cfcam::Error::EmptyValidSet) => continue,
            Err(e) => return Err(format!("case {case}: {e}")),
        };
        let mut total = 0.0;
        for (ch, label) in out.partition.labels.iter().enumerate() {
            if *label == ChannelLabel::Noise {
                check(out.weights.omega[ch] == 0.0, format!("case {case}: noise channel {ch} weighted"))?;
                with_noise += 1;
            } else {
                total += out.weights.omega[ch];
            }
        }
        worst = worst.max((total - 1.0).abs());
    }
    check(worst <= 1e-6, format!("sum deviation {worst:e}"))?;
    check(with_noise > 0, "no partition had noise channels")?;

    let w = normalize_weights(&[(0, 0.0), (1, 2f64.ln())], &[(2, 0.0)], 3, Weighting::TwoStage)
        .map_err(|e| e.to_string())?;
    let expected = [0.321321919853, 0.448440863799, 0.230237216348];
    for (a, b) in w.omega.iter().zip(expected) {
        check((a - b).abs() <= 1e-6, format!("hand example {:?}", w.omega))?;
    }
    Ok(format!("1000 partitions, max |sum-1| {worst:.1e}; hand example {:.6?}", w.omega))
}

fn heatmap_contract(m: &Heatmap) -> bool {
    let max = m.max();
    m.values().iter().all(|v| (0.0..=1.0).contains(v)) && (max == 0.0 || max == 1.0)
}

fn cam_contract(bundles: &[ExplainBundle]) -> Outcome {
    let params = CfCamParams::default();
    for b in bundles {
        for method in Method::ALL {
            let e = explain(b, method, &params).map_err(|e| format!("{} {method}: {e}", b.id()))?;
            check(heatmap_contract(&e.heatmap), format!("{} {method} out of contract", b.id()))?;
        }
        let g = b.gradients().unwrap();
        let first = cf_cam(&b.features, &g, &params).unwrap();
        let second = cf_cam(&b.features, &g, &params).unwrap();
        let bits = |m: &Heatmap| m.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        check(bits(&first.heatmap) == bits(&second.heatmap), format!("{} cf-cam not deterministic", b.id()))?;
    }
    Ok(format!("{} bundles x 5 methods in [0,1], max in {{0,1}}; cf-cam bit-identical", bundles.len()))
}

fn metrics(bundles: &[ExplainBundle]) -> Outcome {
    let fr: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
    let constant = Curve::new(fr.clone(), vec![1.0; 11]).unwrap();
    let linear = Curve::new(fr.clone(), fr.clone()).unwrap();
    check((auc(&constant) - 1.0).abs() <= 1e-12, "constant auc")?;
    check((auc(&linear) - 0.5).abs() <= 1e-12, "linear auc")?;

    let mut r = rng(4);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (h, w) = (r.gen_range(3..30), r.gen_range(3..30));
        let a = random_heatmap(&mut r, h, w);
        let b = random_heatmap(&mut r, h, w);
        check(ssim(&a, &a).unwrap() == 1.0, "ssim(a,a) != 1")?;
        check(mse(&a, &a).unwrap() == 0.0, "mse(a,a) != 0")?;
        worst = worst.max((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs());
    }
    check(worst <= 1e-6, format!("ssim deviation {worst:e}"))?;

    let b = &bundles[0];
    let m = random_heatmap(&mut r, b.image.height(), b.image.width());
    let counter = Counting::new(&b.graphs.full);
    deletion_curve(&counter, &b.image, &m, DEFAULT_STEPS, b.class_index()).unwrap();
    check(counter.calls() == DEFAULT_STEPS + 1, format!("deletion used {} passes", counter.calls()))?;
    let counter = Counting::new(&b.graphs.full);
    insertion_curve(&counter, &b.image, &m, DEFAULT_STEPS, 10.0, b.class_index()).unwrap();
    check(counter.calls() == DEFAULT_STEPS + 1, format!("insertion used {} passes", counter.calls()))?;
    Ok(format!("auc exact; ssim oracle max deviation {worst:.1e}; {} passes per curve", DEFAULT_STEPS + 1))
}

fn ablation_pass_count(bundles: &[ExplainBundle]) -> Outcome {
    for b in bundles {
        let c = b.features.dims3().unwrap().2;
        let counter = Counting::new(&b.graphs.head);
        cfcam::baselines::ablation_cam(&counter, &b.features, b.class_index()).map_err(|e| e.to_string())?;
        check(counter.calls() == c + 1, format!("{}: {} calls for C={c}", b.id(), counter.calls()))?;
    }
    Ok(format!("C+1 head calls on {} bundles", bundles.len()))
}

fn sweep_inputs(bundles: &[ExplainBundle]) -> Vec<SweepInput<'_>> {
    bundles
        .iter()
        .map(|b| SweepInput {
            features: &b.features,
            g1: &b.g1,
            image_size: (b.image.height(), b.image.width()),
        })
        .collect()
}

fn robustness_protocol(bundles: &[ExplainBundle]) -> Outcome {
    let start = Instant::now();
    let params = CfCamParams::default();
    let methods = [Method::CfCam, Method::GradCam, Method::GradCamPp];
    let inputs = sweep_inputs(bundles);

    let zero = NoiseSpec {
        levels: vec![0.0],
        trials: 2,
        ..NoiseSpec::default()
    };
    let clean = robustness_sweep(&inputs, &methods, &zero, &params).map_err(|e| e.to_string())?;
    for c in &clean.curves {
        check(c.mean_ssim[0] == 1.0 && c.mean_mse[0] == 0.0, format!("{} at sigma 0: {:?}", c.method, c))?;
    }

    let spec = NoiseSpec {
        seed: 17,
        ..NoiseSpec::default()
    };
    let a = robustness_sweep(&inputs, &methods, &spec, &params).map_err(|e| e.to_string())?;
    let b = robustness_sweep(&inputs, &methods, &spec, &params).map_err(|e| e.to_string())?;
    let bits = |c: &cfcam::robustness::RobustnessCurves| {
        c.curves
            .iter()
            .flat_map(|m| m.mean_ssim.iter().chain(&m.mean_mse).map(|v| v.to_bits()))
            .collect::<Vec<_>>()
    };
    check(bits(&a) == bits(&b), "sweep not bit-reproducible")?;

    // relative noise sanity: the perturbation scale follows the gradient std
    let g = &bundles[0].g1;
    let noisy = perturb_gradients(g, 1.0, NoiseMode::Relative, &mut trial_rng(0, 0, 0, 0)).unwrap();
    check(noisy != *g, "relative noise did nothing")?;

    let cf = &a.curves[0];
    let gc = &a.curves[1];
    let wins = cf.mean_ssim.iter().zip(&gc.mean_ssim).filter(|(c, g)| c >= g).count();
    let t = start.elapsed();
    check(bundles.len() >= 20, "fewer than 20 bundles")?;
    check(t < Duration::from_secs(600), format!("took {t:?}"))?;
    let detail = format!(
        "cf-cam >= grad-cam SSIM at {wins}/10 levels over {} bundles; cf {:.3?} vs grad {:.3?}; {t:.1?}",
        bundles.len(),
        cf.mean_ssim,
        gc.mean_ssim
    );
    check(wins >= 9, detail.clone())?;
    Ok(detail)
}

fn faithfulness(bundles: &[ExplainBundle]) -> Outcome {
    let start = Instant::now();
    let cam = CfCamParams::default();
    let metric = MetricParams::default();
    let mut r = rng(5);
    let n = bundles.len() as f64;

    let (mut rand_del, mut rand_ins) = (0.0, 0.0);
    for b in bundles {
        for _ in 0..5 {
            let m = random_heatmap(&mut r, b.image.height(), b.image.width());
            let e = evaluate_explanation(&b.graphs.full, "random", &b.image, &m, b.class_index(), &metric, 0.0)
                .map_err(|e| e.to_string())?;
            rand_del += e.auc_del / (5.0 * n);
            rand_ins += e.auc_ins / (5.0 * n);
        }
    }
    let mut lines = vec![format!("random del {rand_del:.4} ins {rand_ins:.4}")];
    let mut failed = false;
    for method in Method::ALL {
        let (mut del, mut ins) = (0.0, 0.0);
        for b in bundles {
            let x = explain(b, method, &cam).map_err(|e| e.to_string())?;
            let m = bilinear_upsample(&x.heatmap, b.image.height(), b.image.width()).unwrap();
            let e = evaluate_explanation(&b.graphs.full, "m", &b.image, &m, b.class_index(), &metric, 0.0)
                .map_err(|e| e.to_string())?;
            del += e.auc_del / n;
            ins += e.auc_ins / n;
        }
        failed |= !(del < rand_del && ins > rand_ins);
        lines.push(format!("{method} del {del:.4} ins {ins:.4}"));
    }
    let t = start.elapsed();
    lines.push(format!("{t:.1?}"));
    let detail = lines.join("; ");
    check(bundles.len() >= 20 && !failed && t < Duration::from_secs(600), detail.clone())?;
    Ok(detail)
}

fn main() {
    let bundles = bundles();
    // powers of every fixture are consistent, otherwise nothing below means much
    for b in &bundles {
        GradientPowers::new(b.g1.clone(), b.g2.clone(), b.g3.clone()).expect("fixture powers");
    }
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("dbscan oracle equivalence", Box::new(dbscan_oracle_equivalence)),
        ("parameter formulas", Box::new(parameter_formulas)),
        ("filtering correctness", Box::new(filtering_correctness)),
        ("weighting", Box::new(weighting)),
        ("cam contract", Box::new(|| cam_contract(&bundles))),
        ("metrics", Box::new(|| metrics(&bundles))),
        ("ablation-cam pass count", Box::new(|| ablation_pass_count(&bundles))),
        ("robustness protocol", Box::new(|| robustness_protocol(&bundles))),
        ("faithfulness sanity", Box::new(|| faithfulness(&bundles))),
    ];
    let mut failures = 0;
    for (name, run) in &criteria {
        match run() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{}/{} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
