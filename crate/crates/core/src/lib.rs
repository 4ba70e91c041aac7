//! Class activation maps for convolutional classifiers computed from exported
//! feature and gradient tensors.
//!
//! The centre of the crate is [`cfcam::cf_cam`]: channels are split by
//! activation strength, the weak ones grouped with DBSCAN, their gradients
//! smoothed across each group, and the resulting weights softmax-normalized
//! before the feature maps are combined. Grad-CAM, Grad-CAM++, Score-CAM and
//! Ablation-CAM are provided for comparison, together with deletion/insertion,
//! Average Drop/Increase, SSIM and MSE metrics and a gradient-noise
//! robustness sweep.

pub mod baselines;
pub mod bundle;
pub mod cfcam;
pub mod clustering;
pub mod error;
pub mod explain;
pub mod inference;
pub mod metrics;
pub mod robustness;
pub mod tensor;

pub use error::{Error, Result};
