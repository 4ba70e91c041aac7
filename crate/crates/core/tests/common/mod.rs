//! Independent reference implementations and fixture helpers shared by the
//! integration tests. Nothing here calls the code it is used to check.

#![allow(dead_code)]

use std::path::PathBuf;

use cfcam::tensor::{Heatmap, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn bundle_dirs() -> Vec<PathBuf> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(fixture_dir().join("bundles"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.join("manifest.json").is_file())
        .collect();
    dirs.sort();
    dirs
}

pub fn random_tensor(r: &mut ChaCha8Rng, shape: Vec<usize>, lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| r.gen_range(lo..hi)).collect();
    Tensor::new(shape, data).unwrap()
}

pub fn random_heatmap(r: &mut ChaCha8Rng, h: usize, w: usize) -> Heatmap {
    Heatmap::new(h, w, (0..h * w).map(|_| r.gen_range(0.0f32..=1.0)).collect()).unwrap()
}

/// Brute-force DBSCAN: union-find over core points, border points given to
/// the adjacent component with the smallest core index, labels renumbered
/// by lowest member index. `None` is noise.
pub fn dbscan_oracle(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let dist = |i: usize, j: usize| -> f64 {
        let s: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
        s.sqrt()
    };
    let near = |i: usize, j: usize| dist(i, j) <= eps;
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts)
        .collect();

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut y = x;
        while p[y] != r {
            let next = p[y];
            p[y] = r;
            y = next;
        }
        r
    }
    for i in 0..n {
        for j in 0..n {
            if core[i] && core[j] && near(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    // component key = smallest core index in it
    let mut key = vec![None; n];
    for i in 0..n {
        if core[i] {
            let root = find(&mut parent, i);
            key[i] = Some(root);
        }
    }
    let mut min_core = vec![usize::MAX; n];
    for i in 0..n {
        if let Some(r) = key[i] {
            min_core[r] = min_core[r].min(i);
        }
    }
    let mut comp: Vec<Option<usize>> = key.iter().map(|k| k.map(|r| min_core[r])).collect();
    for i in 0..n {
        if !core[i] {
            comp[i] = (0..n)
                .filter(|&j| core[j] && near(i, j))
                .map(|j| min_core[find(&mut parent, j)])
                .min();
        }
    }
    canonicalize(&comp)
}

/// Renumbers cluster ids by first appearance.
pub fn canonicalize(labels: &[Option<usize>]) -> Vec<Option<usize>> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            l.map(|k| {
                let next = map.len();
                *map.entry(k).or_insert(next)
            })
        })
        .collect()
}

/// Direct convolution of one sequence with a truncated Gaussian, weights
/// renormalized over the taps that fall inside the sequence.
pub fn filter_oracle(seq: &[f64], sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let n = seq.len() as i64;
    (0..n)
        .map(|i| {
            let (mut num, mut den) = (0.0, 0.0);
            for j in (i - r).max(0)..=(i + r).min(n - 1) {
                let t = (j - i) as f64;
                let w = (-t * t / (2.0 * sigma * sigma)).exp();
                num += w * seq[j as usize];
                den += w;
            }
            num / den
        })
        .collect()
}

/// SSIM from the textbook definition: for every fully inside window
/// position, two-pass weighted mean, variance and covariance under a 2-D
/// Gaussian window.
pub fn ssim_oracle(a: &Heatmap, b: &Heatmap) -> f64 {
    let (h, w) = (a.height(), a.width());
    let s = 11.min(h).min(w);
    let c = (s as f64 - 1.0) / 2.0;
    let mut win = vec![0.0; s * s];
    for y in 0..s {
        for x in 0..s {
            let (dy, dx) = (y as f64 - c, x as f64 - c);
            win[y * s + x] = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let total: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= total);

    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let av = |y: usize, x: usize| a.values()[y * w + x] as f64;
    let bv = |y: usize, x: usize| b.values()[y * w + x] as f64;
    let mut sum = 0.0;
    let mut count = 0;
    for oy in 0..=h - s {
        for ox in 0..=w - s {
            let (mut ma, mut mb) = (0.0, 0.0);
            for y in 0..s {
                for x in 0..s {
                    ma += win[y * s + x] * av(oy + y, ox + x);
                    mb += win[y * s + x] * bv(oy + y, ox + x);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for y in 0..s {
                for x in 0..s {
                    let da = av(oy + y, ox + x) - ma;
                    let db = bv(oy + y, ox + x) - mb;
                    va += win[y * s + x] * da * da;
                    vb += win[y * s + x] * db * db;
                    cov += win[y * s + x] * da * db;
                }
            }
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    sum / count as f64
}

/// Trapezoid over equally spaced samples on [0, 1], written out as the
/// composite rule.
pub fn composite_trapezoid(values: &[f64]) -> f64 {
    let m = (values.len() - 1) as f64;
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    (values[0] / 2.0 + inner + values[values.len() - 1] / 2.0) / m
}
