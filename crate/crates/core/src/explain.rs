//! Method selection and one-call explanation of a bundle.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::baselines::{ablation_cam, grad_cam, grad_cam_pp, score_cam, GradientPowers};
use crate::bundle::ExplainBundle;
use crate::cfcam::{cf_cam, CfCamParams, GradientStack};
use crate::clustering::ChannelPartition;
use crate::error::{Error, Result};
use crate::tensor::{Heatmap, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    CfCam,
    GradCam,
    GradCamPp,
    ScoreCam,
    AblationCam,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::CfCam,
        Method::GradCam,
        Method::GradCamPp,
        Method::ScoreCam,
        Method::AblationCam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::CfCam => "cf-cam",
            Method::GradCam => "grad-cam",
            Method::GradCamPp => "grad-cam-pp",
            Method::ScoreCam => "score-cam",
            Method::AblationCam => "ablation-cam",
        }
    }

    /// Whether the method reads the exported gradients (and so can be
    /// perturbed by a gradient-noise sweep).
    pub fn uses_gradients(self) -> bool {
        matches!(self, Method::CfCam | Method::GradCam | Method::GradCamPp)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::InvalidParameter(format!("unknown method {s:?}; expected one of {}", known.join(", ")))
            })
    }
}

/// Heatmap of a gradient-based method from features and gradient powers.
pub fn gradient_heatmap(
    method: Method,
    features: &Tensor,
    powers: &GradientPowers,
    params: &CfCamParams,
) -> Result<Heatmap> {
    match method {
        Method::CfCam => {
            let g = GradientStack::new(powers.g1().clone())?;
            Ok(cf_cam(features, &g, params)?.heatmap)
        }
        Method::GradCam => grad_cam(features, powers.g1()),
        Method::GradCamPp => grad_cam_pp(features, powers),
        other => Err(Error::InvalidParameter(format!(
            "{other} is not gradient-based"
        ))),
    }
}

#[derive(Debug, Clone)]
pub struct Explanation {
    pub method: Method,
    /// Map at target-layer resolution.
    pub heatmap: Heatmap,
    /// Channel partition, for CF-CAM only.
    pub partition: Option<ChannelPartition>,
    /// Wall-clock time of the explanation itself, bundle loading excluded.
    pub elapsed: Duration,
}

pub fn explain(bundle: &ExplainBundle, method: Method, params: &CfCamParams) -> Result<Explanation> {
    let class = bundle.class_index();
    let start = Instant::now();
    let (heatmap, partition) = match method {
        Method::CfCam => {
            let out = cf_cam(&bundle.features, &bundle.gradients()?, params)?;
            (out.heatmap, Some(out.partition))
        }
        Method::GradCam => (grad_cam(&bundle.features, &bundle.g1)?, None),
        Method::GradCamPp => (grad_cam_pp(&bundle.features, &bundle.powers()?)?, None),
        Method::ScoreCam => (
            score_cam(&bundle.graphs.full, &bundle.image, &bundle.features, class)?,
            None,
        ),
        Method::AblationCam => (ablation_cam(&bundle.graphs.head, &bundle.features, class)?, None),
    };
    Ok(Explanation {
        method,
        heatmap,
        partition,
        elapsed: start.elapsed(),
    })
}
