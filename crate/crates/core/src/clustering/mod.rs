//! Channel clustering: L2-percentile selection of dominant channels followed
//! by density clustering of the remaining channels' activation patterns.

mod dbscan;
mod kmeans;

pub use self::dbscan::{dbscan, PointLabel};
pub use self::kmeans::kmeans;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{channel_l2_norms, percentile, Tensor};

/// Algorithm used to group the non-dominant channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterAlgorithm {
    Dbscan,
    /// Lloyd's K-Means. Without an explicit `k`, uses the number of clusters
    /// DBSCAN finds on the same channels (at least one).
    KMeans { k: Option<usize>, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteringParams {
    /// Percentile of channel L2 norms above which a channel is dominant.
    pub p1: f64,
    /// Percentile of pairwise channel distances used as the DBSCAN radius.
    pub p2: f64,
    /// When false every channel goes to the clustering step.
    pub l2_selection: bool,
    pub algorithm: ClusterAlgorithm,
}

impl Default for ClusteringParams {
    fn default() -> Self {
        ClusteringParams {
            p1: 75.0,
            p2: 10.0,
            l2_selection: true,
            algorithm: ClusterAlgorithm::Dbscan,
        }
    }
}

impl ClusteringParams {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p1", self.p1), ("p2", self.p2)] {
            if !(0.0..=100.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("{name}={p} outside [0, 100]")));
            }
        }
        Ok(())
    }
}

/// Thresholds actually used for one partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedParams {
    /// L2 threshold; `None` when selection is disabled.
    pub tau: Option<f64>,
    /// Neighbourhood radius; `None` when fewer than two channels were clustered.
    pub eps: Option<f64>,
    pub min_pts: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelLabel {
    Dominant,
    Cluster(usize),
    Noise,
}

/// Assignment of every channel to the dominant set, one cluster, or noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPartition {
    pub dominant: Vec<usize>,
    pub clusters: Vec<Vec<usize>>,
    pub noise: Vec<usize>,
    pub labels: Vec<ChannelLabel>,
    pub derived: DerivedParams,
}

/// On-disk form of a partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionRecord {
    pub dominant: Vec<usize>,
    pub clusters: Vec<Vec<usize>>,
    pub noise: Vec<usize>,
}

impl ChannelPartition {
    fn from_labels(labels: Vec<ChannelLabel>, derived: DerivedParams) -> Self {
        let mut dominant = Vec::new();
        let mut noise = Vec::new();
        let mut clusters: Vec<Vec<usize>> = Vec::new();
        for (i, label) in labels.iter().enumerate() {
            match *label {
                ChannelLabel::Dominant => dominant.push(i),
                ChannelLabel::Noise => noise.push(i),
                ChannelLabel::Cluster(k) => {
                    if clusters.len() <= k {
                        clusters.resize_with(k + 1, Vec::new);
                    }
                    clusters[k].push(i);
                }
            }
        }
        ChannelPartition {
            dominant,
            clusters,
            noise,
            labels,
            derived,
        }
    }

    pub fn channels(&self) -> usize {
        self.labels.len()
    }

    pub fn record(&self) -> PartitionRecord {
        PartitionRecord {
            dominant: self.dominant.clone(),
            clusters: self.clusters.clone(),
            noise: self.noise.clone(),
        }
    }
}

/// Result of the L2 percentile split.
#[derive(Debug, Clone, PartialEq)]
pub struct DominantSplit {
    pub dominant: Vec<usize>,
    pub rest: Vec<usize>,
    pub tau: f64,
}

/// Channels whose L2 norm reaches the `p1`-th percentile of all norms.
pub fn select_dominant(features: &Tensor, p1: f64) -> Result<DominantSplit> {
    let norms = channel_l2_norms(features)?;
    let tau = percentile(&norms, p1)?;
    let (dominant, rest) = (0..norms.len()).partition(|&i| norms[i] >= tau);
    Ok(DominantSplit {
        dominant,
        rest,
        tau,
    })
}

/// Symmetric matrix of pairwise distances, stored densely.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    /// Euclidean distances between equal-length points.
    pub fn from_points(points: &[Vec<f64>]) -> Self {
        let n = points.len();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|j| {
                        points[i]
                            .iter()
                            .zip(&points[j])
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .collect()
            })
            .collect();
        DistanceMatrix {
            n,
            data: rows.concat(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Each unordered pair once, diagonal excluded.
    pub fn upper_triangle(&self) -> Vec<f64> {
        (0..self.n)
            .flat_map(|i| (i + 1..self.n).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect()
    }
}

/// Flattens each listed channel of an `H x W x C` stack into an `H*W` vector.
pub fn flatten_channels(features: &Tensor, channels: &[usize]) -> Result<Vec<Vec<f64>>> {
    let (_, _, c) = features.dims3()?;
    if let Some(&bad) = channels.iter().find(|&&i| i >= c) {
        return Err(Error::InvalidParameter(format!(
            "channel {bad} out of range for {c} channels"
        )));
    }
    let mut out: Vec<Vec<f64>> = vec![Vec::with_capacity(features.len() / c); channels.len()];
    for pixel in features.data().chunks_exact(c) {
        for (row, &ch) in out.iter_mut().zip(channels) {
            row.push(pixel[ch] as f64);
        }
    }
    Ok(out)
}

/// Pairwise Euclidean distances between the flattened channels in `rest`.
pub fn pairwise_distances(features: &Tensor, rest: &[usize]) -> Result<DistanceMatrix> {
    if rest.is_empty() {
        return Err(Error::EmptyInput("no channels to compare"));
    }
    Ok(DistanceMatrix::from_points(&flatten_channels(features, rest)?))
}

/// `p2`-th percentile of the strict upper triangle of `d`.
pub fn derive_eps(d: &DistanceMatrix, p2: f64) -> Result<f64> {
    if d.len() < 2 {
        return Err(Error::DegenerateClustering);
    }
    percentile(&d.upper_triangle(), p2)
}

/// `max(2, ceil(0.01 * C))` over the total channel count.
pub fn derive_minpts(channels: usize) -> usize {
    2.max(channels.div_ceil(100))
}

/// Splits the channels of `features` into dominant, clustered and noise sets.
pub fn partition_channels(features: &Tensor, params: &ClusteringParams) -> Result<ChannelPartition> {
    params.validate()?;
    let (_, _, c) = features.dims3()?;
    let (dominant, rest, tau) = if params.l2_selection {
        let split = select_dominant(features, params.p1)?;
        (split.dominant, split.rest, Some(split.tau))
    } else {
        (Vec::new(), (0..c).collect(), None)
    };
    let min_pts = derive_minpts(c);

    let mut labels = vec![ChannelLabel::Noise; c];
    for &i in &dominant {
        labels[i] = ChannelLabel::Dominant;
    }

    let mut eps = None;
    let rest_labels: Vec<PointLabel> = if rest.len() < 2 {
        match params.algorithm {
            // a lone leftover channel forms its own K-Means cluster
            ClusterAlgorithm::KMeans { .. } => vec![PointLabel::Cluster(0); rest.len()],
            ClusterAlgorithm::Dbscan => vec![PointLabel::Noise; rest.len()],
        }
    } else {
        let points = flatten_channels(features, &rest)?;
        let d = DistanceMatrix::from_points(&points);
        let radius = derive_eps(&d, params.p2)?;
        eps = Some(radius);
        let density = dbscan(&d, radius, min_pts);
        match params.algorithm {
            ClusterAlgorithm::Dbscan => density,
            ClusterAlgorithm::KMeans { k, seed } => {
                let found = density
                    .iter()
                    .filter_map(|l| match l {
                        PointLabel::Cluster(k) => Some(k + 1),
                        PointLabel::Noise => None,
                    })
                    .max()
                    .unwrap_or(0);
                let k = k.unwrap_or(found).clamp(1, rest.len());
                kmeans(&points, k, 50, seed)?
                    .into_iter()
                    .map(PointLabel::Cluster)
                    .collect()
            }
        }
    };
    for (&ch, label) in rest.iter().zip(rest_labels) {
        labels[ch] = match label {
            PointLabel::Cluster(k) => ChannelLabel::Cluster(k),
            PointLabel::Noise => ChannelLabel::Noise,
        };
    }

    Ok(ChannelPartition::from_labels(
        labels,
        DerivedParams { tau, eps, min_pts },
    ))
}
