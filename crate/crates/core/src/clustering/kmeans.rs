use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's K-Means with `k` distinct seeded initial centroids.
///
/// Returns one cluster id per point; empty clusters are dropped and the
/// remaining ids renumbered by lowest member index, so every id in
/// `0..max+1` is used.
pub fn kmeans(points: &[Vec<f64>], k: usize, iterations: usize, seed: u64) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(Error::EmptyInput("k-means over no points"));
    }
    if k == 0 || k > points.len() {
        return Err(Error::InvalidParameter(format!(
            "k={k} must lie in 1..={}",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = rand::seq::index::sample(&mut rng, points.len(), k).into_vec();
    init.sort_unstable();
    let mut centroids: Vec<Vec<f64>> = init.iter().map(|&i| points[i].clone()).collect();

    let assign = |centroids: &[Vec<f64>]| -> Vec<usize> {
        points
            .iter()
            .map(|p| {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (j, c) in centroids.iter().enumerate() {
                    let d = sq_dist(p, c);
                    if d < best_d {
                        best = j;
                        best_d = d;
                    }
                }
                best
            })
            .collect()
    };

    let mut labels = assign(&centroids);
    for _ in 0..iterations {
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        let next = assign(&centroids);
        if next == labels {
            break;
        }
        labels = next;
    }

    let mut rename = vec![usize::MAX; k];
    let mut next_id = 0;
    for &l in &labels {
        if rename[l] == usize::MAX {
            rename[l] = next_id;
            next_id += 1;
        }
    }
    Ok(labels.into_iter().map(|l| rename[l]).collect())
}
