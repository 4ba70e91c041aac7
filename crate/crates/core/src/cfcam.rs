//! Cluster-filtered CAM: gradients of clustered channels are smoothed across
//! each cluster with a 1-D Gaussian, dominant channels keep their raw
//! gradients, noise channels are dropped, and the surviving spatial-mean
//! gradients are softmax-normalized into channel weights.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{partition_channels, ChannelPartition, ClusteringParams};
use crate::error::{Error, Result};
use crate::tensor::{convolve_renormalized, gaussian_kernel, relu_normalize, Heatmap, Tensor};

/// Per-channel gradients of the class score, `H x W x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientStack {
    values: Tensor,
}

impl GradientStack {
    pub fn new(values: Tensor) -> Result<Self> {
        values.dims3()?;
        Ok(GradientStack { values })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_tensor(self) -> Tensor {
        self.values
    }

    /// Raw gradient map of one channel.
    pub fn channel(&self, c: usize) -> Result<Vec<f32>> {
        self.values.channel(c)
    }
}

/// How clustered and dominant channel scores are turned into weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// Softmax over the clustered scores, then a second softmax over those
    /// results together with the dominant scores.
    #[default]
    TwoStage,
    /// One softmax over the raw clustered and dominant scores.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfCamParams {
    /// Standard deviation of the cross-channel gradient filter.
    pub sigma_filter: f64,
    /// Range parameter of a bilateral filter. Recorded for provenance; the
    /// Gaussian filter does not use it.
    pub sigma_range: f64,
    pub clustering: ClusteringParams,
    pub weighting: Weighting,
}

impl Default for CfCamParams {
    fn default() -> Self {
        CfCamParams {
            sigma_filter: 5.0,
            sigma_range: 0.1,
            clustering: ClusteringParams::default(),
            weighting: Weighting::TwoStage,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightSource {
    Clustered,
    Dominant,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelWeights {
    pub omega: Vec<f64>,
    pub provenance: Vec<WeightSource>,
}

/// Per-position sequences of the cluster's gradients, channels in ascending
/// index order. Outer index is the row-major spatial position.
pub fn gather_cluster_sequences(g: &GradientStack, cluster: &[usize]) -> Result<Vec<Vec<f64>>> {
    if cluster.is_empty() {
        return Err(Error::EmptyInput("empty cluster"));
    }
    let (_, _, c) = g.values.dims3()?;
    let mut members = cluster.to_vec();
    members.sort_unstable();
    if let Some(&bad) = members.iter().find(|&&i| i >= c) {
        return Err(Error::InvalidParameter(format!("channel {bad} out of range")));
    }
    Ok(g.values
        .data()
        .chunks_exact(c)
        .map(|pixel| members.iter().map(|&i| pixel[i] as f64).collect())
        .collect())
}

/// 1-D Gaussian smoothing with radius `ceil(3 sigma)` and per-output
/// renormalization over the taps that fall inside the sequence.
pub fn gaussian_filter_1d(seq: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if seq.is_empty() {
        return Err(Error::EmptyInput("empty sequence"));
    }
    let kernel = gaussian_kernel(sigma)?;
    let mut out = vec![0.0; seq.len()];
    convolve_renormalized(seq, &kernel, seq.len(), 1, &mut out);
    Ok(out)
}

/// Smooths each spatial position's gradient sequence across the cluster and
/// returns `(channel, filtered map)` for every member, ascending by channel.
pub fn filter_cluster_gradients(
    g: &GradientStack,
    cluster: &[usize],
    sigma: f64,
) -> Result<Vec<(usize, Vec<f64>)>> {
    let sequences = gather_cluster_sequences(g, cluster)?;
    let kernel = gaussian_kernel(sigma)?;
    let n = sequences[0].len();
    let mut members = cluster.to_vec();
    members.sort_unstable();

    let mut maps = vec![Vec::with_capacity(sequences.len()); n];
    let mut filtered = vec![0.0; n];
    for seq in &sequences {
        convolve_renormalized(seq, &kernel, n, 1, &mut filtered);
        for (map, &v) in maps.iter_mut().zip(&filtered) {
            map.push(v);
        }
    }
    Ok(members.into_iter().zip(maps).collect())
}

fn spatial_mean(map: &[f64]) -> f64 {
    map.iter().sum::<f64>() / map.len() as f64
}

/// Spatial mean of a filtered gradient map.
pub fn clustered_weight(filtered: &[f64]) -> f64 {
    spatial_mean(filtered)
}

/// Spatial mean of an unfiltered gradient map.
pub fn dominant_weight(raw: &[f32]) -> f64 {
    let as_f64: Vec<f64> = raw.iter().map(|&v| v as f64).collect();
    spatial_mean(&as_f64)
}

fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax-normalized channel weights. `alphas` and `betas` hold
/// `(channel, score)` pairs for clustered and dominant channels; every other
/// channel gets exactly zero.
pub fn normalize_weights(
    alphas: &[(usize, f64)],
    betas: &[(usize, f64)],
    channels: usize,
    weighting: Weighting,
) -> Result<ChannelWeights> {
    if alphas.is_empty() && betas.is_empty() {
        return Err(Error::EmptyValidSet);
    }
    let clustered: Vec<f64> = alphas.iter().map(|&(_, a)| a).collect();
    let first_stage = match weighting {
        Weighting::TwoStage if !clustered.is_empty() => softmax(&clustered),
        _ => clustered,
    };
    let scores: Vec<f64> = first_stage
        .into_iter()
        .chain(betas.iter().map(|&(_, b)| b))
        .collect();
    let normalized = softmax(&scores);

    let mut omega = vec![0.0; channels];
    let mut provenance = vec![WeightSource::Zero; channels];
    let sources = alphas
        .iter()
        .map(|&(c, _)| (c, WeightSource::Clustered))
        .chain(betas.iter().map(|&(c, _)| (c, WeightSource::Dominant)));
    for ((c, source), w) in sources.zip(normalized) {
        if c >= channels {
            return Err(Error::InvalidParameter(format!("channel {c} out of range")));
        }
        omega[c] = w;
        provenance[c] = source;
    }
    Ok(ChannelWeights { omega, provenance })
}

/// Weighted channel sum of an `H x W x C` stack (zero weights skipped).
pub(crate) fn weighted_sum(features: &Tensor, omega: &[f64]) -> Result<Tensor> {
    let (h, w, c) = features.dims3()?;
    if omega.len() != c {
        return Err(Error::ShapeMismatch {
            expected: vec![c],
            found: vec![omega.len()],
        });
    }
    let data = features
        .data()
        .chunks_exact(c)
        .map(|pixel| {
            pixel
                .iter()
                .zip(omega)
                .filter(|(_, &w)| w != 0.0)
                .map(|(&f, &w)| f as f64 * w)
                .sum::<f64>() as f32
        })
        .collect();
    Tensor::new(vec![h, w], data)
}

/// `relu_normalize(sum_i omega_i F_i)`.
pub fn assemble_cam(features: &Tensor, weights: &ChannelWeights) -> Result<Heatmap> {
    relu_normalize(&weighted_sum(features, &weights.omega)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfCamOutput {
    pub heatmap: Heatmap,
    pub partition: ChannelPartition,
    pub weights: ChannelWeights,
}

/// Channel weights for an already computed partition.
pub fn partition_weights(
    g: &GradientStack,
    partition: &ChannelPartition,
    params: &CfCamParams,
) -> Result<ChannelWeights> {
    let per_cluster: Vec<Vec<(usize, f64)>> = partition
        .clusters
        .par_iter()
        .map(|cluster| {
            Ok(filter_cluster_gradients(g, cluster, params.sigma_filter)?
                .into_iter()
                .map(|(ch, map)| (ch, clustered_weight(&map)))
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut alphas: Vec<(usize, f64)> = per_cluster.into_iter().flatten().collect();
    alphas.sort_by_key(|&(c, _)| c);
    let betas = partition
        .dominant
        .iter()
        .map(|&j| Ok((j, dominant_weight(&g.channel(j)?))))
        .collect::<Result<Vec<_>>>()?;
    normalize_weights(&alphas, &betas, partition.channels(), params.weighting)
}

/// Full pipeline: partition channels, filter clustered gradients, weight and
/// combine the feature maps.
pub fn cf_cam(features: &Tensor, g: &GradientStack, params: &CfCamParams) -> Result<CfCamOutput> {
    if features.shape() != g.values.shape() {
        return Err(Error::ShapeMismatch {
            expected: features.shape().to_vec(),
            found: g.values.shape().to_vec(),
        });
    }
    if !(params.sigma_filter > 0.0) {
        return Err(Error::InvalidParameter("sigma_filter must be positive".into()));
    }
    let partition = partition_channels(features, &params.clustering)?;
    let weights = partition_weights(g, &partition, params)?;
    let heatmap = assemble_cam(features, &weights)?;
    Ok(CfCamOutput {
        heatmap,
        partition,
        weights,
    })
}
