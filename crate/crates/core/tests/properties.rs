mod common;

use cfcam::cfcam::{
    assemble_cam, cf_cam, normalize_weights, partition_weights, CfCamParams, ChannelWeights, GradientStack,
    WeightSource, Weighting,
};
use cfcam::clustering::{dbscan, derive_minpts, partition_channels, ChannelPartition, ClusteringParams, DerivedParams, DistanceMatrix, PointLabel};
use cfcam::metrics::{auc, mse, ssim, Curve};
use cfcam::tensor::{Heatmap, Tensor};
use proptest::prelude::*;

use common::*;

fn tensor_strategy(max_c: usize) -> impl Strategy<Value = Tensor> {
    (1usize..4, 1usize..4, 1usize..max_c).prop_flat_map(|(h, w, c)| {
        proptest::collection::vec(-2.0f32..2.0, h * w * c)
            .prop_map(move |data| Tensor::new(vec![h, w, c], data).unwrap())
    })
}

fn heatmap_pair() -> impl Strategy<Value = (Heatmap, Heatmap)> {
    (2usize..16, 2usize..16).prop_flat_map(|(h, w)| {
        (
            proptest::collection::vec(0.0f32..=1.0, h * w),
            proptest::collection::vec(0.0f32..=1.0, h * w),
        )
            .prop_map(move |(a, b)| (Heatmap::new(h, w, a).unwrap(), Heatmap::new(h, w, b).unwrap()))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn dbscan_core_and_noise_sets_survive_permutation(
        pts in proptest::collection::vec(0i32..6, 2..30),
        seed in 0u64..1000,
    ) {
        let points: Vec<Vec<f64>> = pts.iter().map(|&v| vec![v as f64]).collect();
        let n = points.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| points[i].clone()).collect();
        let (eps, min_pts) = (1.0, 3);
        let a = dbscan(&DistanceMatrix::from_points(&points), eps, min_pts);
        let b = dbscan(&DistanceMatrix::from_points(&shuffled), eps, min_pts);
        let core = |p: &[Vec<f64>], i: usize| p.iter().filter(|q| (q[0] - p[i][0]).abs() <= eps).count() >= min_pts;
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(a[i] == PointLabel::Noise, b[k] == PointLabel::Noise);
            prop_assert_eq!(core(&points, i), core(&shuffled, k));
        }
        // two cores share a cluster in one order iff they do in the other
        for i in 0..n {
            for j in 0..n {
                let (ki, kj) = (perm.iter().position(|&p| p == i).unwrap(), perm.iter().position(|&p| p == j).unwrap());
                if core(&points, i) && core(&points, j) {
                    prop_assert_eq!(a[i] == a[j], b[ki] == b[kj]);
                }
            }
        }
    }

    #[test]
    fn dbscan_clusters_meet_min_pts(f in tensor_strategy(40), p2 in 1.0f64..60.0) {
        let params = ClusteringParams { p2, ..ClusteringParams::default() };
        let part = partition_channels(&f, &params).unwrap();
        let min_pts = derive_minpts(f.shape()[2]);
        for c in &part.clusters {
            prop_assert!(c.len() >= min_pts);
        }
        let mut all: Vec<usize> = part.dominant.iter().chain(part.noise.iter()).chain(part.clusters.iter().flatten()).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..f.shape()[2]).collect::<Vec<_>>());
    }

    #[test]
    fn heatmap_invariant_under_positive_feature_scaling(f in tensor_strategy(10), scale in 0.01f32..50.0) {
        let c = f.shape()[2];
        let weights = ChannelWeights {
            omega: (0..c).map(|i| 1.0 / (i + 1) as f64).collect(),
            provenance: vec![WeightSource::Dominant; c],
        };
        let scaled = f.map(|v| v * scale).unwrap();
        let a = assemble_cam(&f, &weights).unwrap();
        let b = assemble_cam(&scaled, &weights).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= 1e-5);
        }
    }

    #[test]
    fn singleton_clusters_reduce_to_double_softmax(g in tensor_strategy(12)) {
        let (h, w, c) = g.dims3().unwrap();
        let stack = GradientStack::new(g.clone()).unwrap();
        let part = ChannelPartition {
            dominant: vec![],
            clusters: (0..c).map(|i| vec![i]).collect(),
            noise: vec![],
            labels: (0..c).map(cfcam::clustering::ChannelLabel::Cluster).collect(),
            derived: DerivedParams { tau: None, eps: None, min_pts: 2 },
        };
        let got = partition_weights(&stack, &part, &CfCamParams::default()).unwrap();
        let means: Vec<f64> = (0..c)
            .map(|i| (0..h * w).map(|p| g.data()[p * c + i] as f64).sum::<f64>() / (h * w) as f64)
            .collect();
        let soft = |x: &[f64]| -> Vec<f64> {
            let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        };
        let want = soft(&soft(&means));
        for (a, b) in got.omega.iter().zip(&want) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn single_softmax_weights_sum_to_one(alphas in proptest::collection::vec(-3.0f64..3.0, 0..6), betas in proptest::collection::vec(-3.0f64..3.0, 1..6)) {
        let a: Vec<(usize, f64)> = alphas.iter().copied().enumerate().collect();
        let b: Vec<(usize, f64)> = betas.iter().enumerate().map(|(i, &v)| (i + a.len(), v)).collect();
        let n = a.len() + b.len();
        for mode in [Weighting::TwoStage, Weighting::Single] {
            let w = normalize_weights(&a, &b, n, mode).unwrap();
            prop_assert!((w.omega.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn auc_between_min_and_max(probs in proptest::collection::vec(0.0f64..=1.0, 2..60)) {
        let m = probs.len() - 1;
        let fr = (0..=m).map(|k| k as f64 / m as f64).collect();
        let c = Curve::new(fr, probs.clone()).unwrap();
        let a = auc(&c);
        let lo = probs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(a >= lo - 1e-12 && a <= hi + 1e-12);
        prop_assert!((a - composite_trapezoid(&probs)).abs() < 1e-12);
    }

    #[test]
    fn ssim_symmetric_and_mse_quadratic((a, b) in heatmap_pair(), k in 0.05f32..1.0) {
        prop_assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        prop_assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
        let s = ssim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        // scale the gap: b' = a + k (b - a)
        let scaled: Vec<f32> = a.values().iter().zip(b.values()).map(|(&x, &y)| x + k * (y - x)).collect();
        let b2 = Heatmap::new(a.height(), a.width(), scaled).unwrap();
        let expected = (k as f64).powi(2) * mse(&a, &b).unwrap();
        prop_assert!((mse(&a, &b2).unwrap() - expected).abs() <= 1e-6 * expected.max(1e-6));
    }
}

/// With disjoint one-hot channels of equal gradient magnitude, every weight
/// scheme is monotone in the same quantity, so Grad-CAM and CF-CAM with
/// every channel dominant agree on the argmax.
#[test]
fn grad_cam_and_cf_cam_agree_on_disjoint_fixtures() {
    use rand::Rng;
    let mut r = rng(11);
    for _ in 0..50 {
        let c = r.gen_range(2..8);
        let (h, w) = (3, 3);
        let mut f = vec![0.0f32; h * w * c];
        let mut g = vec![0.0f32; h * w * c];
        for ch in 0..c {
            let pos = ch; // channel ch lights up position ch only
            f[pos * c + ch] = 1.0;
            let grad = r.gen_range(0.01f32..1.0);
            for p in 0..h * w {
                g[p * c + ch] = grad;
            }
        }
        let f = Tensor::new(vec![h, w, c], f).unwrap();
        let g = Tensor::new(vec![h, w, c], g).unwrap();
        let grad = cfcam::baselines::grad_cam(&f, &g).unwrap();
        let mut params = CfCamParams::default();
        params.clustering.p1 = 0.0;
        params.weighting = Weighting::Single;
        let cf = cf_cam(&f, &GradientStack::new(g).unwrap(), &params).unwrap();
        assert!(cf.partition.clusters.is_empty());
        let argmax = |m: &Heatmap| {
            m.values()
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0
        };
        assert_eq!(argmax(&grad), argmax(&cf.heatmap));
    }
}

#[test]
fn zero_radius_tiny_instances_are_all_noise() {
    let points: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
    let d = DistanceMatrix::from_points(&points);
    let labels = dbscan(&d, 0.5, 2);
    assert!(labels.iter().all(|l| *l == PointLabel::Noise));
    assert_eq!(dbscan_oracle(&points, 0.5, 2), vec![None; 5]);
}
