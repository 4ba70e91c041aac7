use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::DistanceMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointLabel {
    Cluster(usize),
    Noise,
}

/// DBSCAN over a precomputed distance matrix.
///
/// A point is core when at least `min_pts` points (itself included) lie
/// within `eps`. Points are scanned in ascending index order; a border point
/// belongs to the first cluster that reaches it. Cluster ids are ordered by
/// each cluster's lowest member index.
pub fn dbscan(d: &DistanceMatrix, eps: f64, min_pts: usize) -> Vec<PointLabel> {
    let n = d.len();
    let neighbours = |i: usize| (0..n).filter(move |&j| d.get(i, j) <= eps);
    let core: Vec<bool> = (0..n).map(|i| neighbours(i).count() >= min_pts).collect();

    let mut assigned: Vec<Option<usize>> = vec![None; n];
    let mut next_id = 0;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if assigned[start].is_some() || !core[start] {
            continue;
        }
        let id = next_id;
        next_id += 1;
        assigned[start] = Some(id);
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for q in neighbours(p) {
                if assigned[q].is_none() {
                    assigned[q] = Some(id);
                    if core[q] {
                        queue.push_back(q);
                    }
                }
            }
        }
    }

    // A border point below a cluster's first core can make scan order differ
    // from lowest-member order; renumber.
    let mut lowest = vec![usize::MAX; next_id];
    for (i, a) in assigned.iter().enumerate() {
        if let Some(k) = *a {
            lowest[k] = lowest[k].min(i);
        }
    }
    let mut order: Vec<usize> = (0..next_id).collect();
    order.sort_by_key(|&k| lowest[k]);
    let mut rename = vec![0; next_id];
    for (new, &old) in order.iter().enumerate() {
        rename[old] = new;
    }

    assigned
        .into_iter()
        .map(|a| match a {
            Some(k) => PointLabel::Cluster(rename[k]),
            None => PointLabel::Noise,
        })
        .collect()
}
