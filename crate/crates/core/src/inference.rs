//! Forward-only execution of ONNX graphs.

use std::io::Cursor;
use std::path::Path;
use std::sync::Arc;

use tract_onnx::prelude as tract;
use tract_onnx::prelude::{Framework, InferenceModelExt, IntoTensor};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Highest default-domain operator set the loader accepts.
pub const SUPPORTED_OPSET: i64 = 17;

/// Anything that maps a fixed-shape input tensor to class logits.
pub trait Classifier {
    fn input_shape(&self) -> &[usize];
    fn logits(&self, input: &Tensor) -> Result<Vec<f32>>;
}

impl<C: Classifier + ?Sized> Classifier for &C {
    fn input_shape(&self) -> &[usize] {
        (**self).input_shape()
    }

    fn logits(&self, input: &Tensor) -> Result<Vec<f32>> {
        (**self).logits(input)
    }
}

/// Softmax over logits, computed in `f64`.
pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&l| (l as f64 - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax probability of `class_idx` for one input.
pub fn forward_probs<C: Classifier + ?Sized>(model: &C, input: &Tensor, class_idx: usize) -> Result<f64> {
    let logits = model.logits(input)?;
    softmax(&logits)
        .get(class_idx)
        .copied()
        .ok_or_else(|| Error::InvalidParameter(format!(
            "class {class_idx} out of range for {} logits",
            logits.len()
        )))
}

/// [`forward_probs`] over several inputs, one forward pass each.
pub fn forward_probs_batch<C: Classifier + ?Sized>(
    model: &C,
    inputs: &[Tensor],
    class_idx: usize,
) -> Result<Vec<f64>> {
    inputs.iter().map(|x| forward_probs(model, x, class_idx)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub name: String,
    pub shape: Vec<usize>,
}

/// A loaded, optimized graph with its input and output signatures.
#[derive(Clone)]
pub struct ModelHandle {
    id: String,
    opset: i64,
    input: Signature,
    output: Signature,
    plan: Arc<tract::TypedRunnableModel>,
}

impl std::fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelHandle")
            .field("id", &self.id)
            .field("opset", &self.opset)
            .field("input", &self.input)
            .field("output", &self.output)
            .finish()
    }
}

fn inference_err(e: impl std::fmt::Display) -> Error {
    Error::Inference(format!("{e:#}"))
}

fn concrete_shape(fact: &tract::TypedFact) -> Result<Vec<usize>> {
    fact.shape
        .as_concrete()
        .map(|s| s.to_vec())
        .ok_or_else(|| Error::Inference("graph has a dynamic shape; static shapes required".into()))
}

/// Loads an ONNX file, rejecting operator sets newer than [`SUPPORTED_OPSET`].
pub fn load_model(path: &Path) -> Result<ModelHandle> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let onnx = tract_onnx::onnx();
    let proto = onnx
        .proto_model_for_read(&mut Cursor::new(bytes))
        .map_err(|e| Error::Inference(format!("{}: {e:#}", path.display())))?;
    let opset = proto
        .opset_import
        .iter()
        .filter(|o| o.domain.is_empty() || o.domain == "ai.onnx")
        .map(|o| o.version)
        .max()
        .ok_or_else(|| Error::Inference(format!("{}: no operator set declared", path.display())))?;
    if opset > SUPPORTED_OPSET {
        return Err(Error::UnsupportedOpset {
            found: opset,
            supported: SUPPORTED_OPSET,
        });
    }

    let model = onnx
        .model_for_proto_model(&proto)
        .and_then(|m| m.into_optimized())
        .map_err(|e| Error::Inference(format!("{}: {e:#}", path.display())))?;
    if model.inputs.len() != 1 || model.outputs.len() != 1 {
        return Err(Error::Inference(format!(
            "{}: expected one input and one output",
            path.display()
        )));
    }
    let input = Signature {
        name: model.node(model.inputs[0].node).name.clone(),
        shape: concrete_shape(model.input_fact(0).map_err(inference_err)?)?,
    };
    let output = Signature {
        name: model.node(model.outputs[0].node).name.clone(),
        shape: concrete_shape(model.output_fact(0).map_err(inference_err)?)?,
    };
    let plan = tract::IntoRunnable::into_runnable(model).map_err(inference_err)?;
    Ok(ModelHandle {
        id: path.display().to_string(),
        opset,
        input,
        output,
        plan,
    })
}

impl ModelHandle {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn opset(&self) -> i64 {
        self.opset
    }

    pub fn input(&self) -> &Signature {
        &self.input
    }

    pub fn output(&self) -> &Signature {
        &self.output
    }

    /// Number of values the graph emits (logits for classifiers, feature
    /// elements for a backbone).
    pub fn output_len(&self) -> usize {
        self.output.shape.iter().product()
    }

    /// Raw output tensor for one input.
    pub fn run(&self, input: &Tensor) -> Result<Tensor> {
        if input.shape() != self.input.shape.as_slice() {
            return Err(Error::ShapeMismatch {
                expected: self.input.shape.clone(),
                found: input.shape().to_vec(),
            });
        }
        let x = tract::Tensor::from_shape(input.shape(), input.data()).map_err(inference_err)?;
        let mut outputs = self
            .plan
            .run(std::iter::once(x.into()).collect())
            .map_err(inference_err)?;
        let out = outputs.remove(0).into_tensor();
        let view = out.to_plain_array_view::<f32>().map_err(inference_err)?;
        let data: Vec<f32> = view.iter().copied().collect();
        Tensor::new(view.shape().to_vec(), data)
            .map_err(|e| Error::Inference(format!("{}: {e}", self.id)))
    }
}

impl Classifier for ModelHandle {
    fn input_shape(&self) -> &[usize] {
        &self.input.shape
    }

    fn logits(&self, input: &Tensor) -> Result<Vec<f32>> {
        Ok(self.run(input)?.into_data())
    }
}

/// The three graphs of an explanation bundle.
#[derive(Debug, Clone)]
pub struct ModelBundleGraphs {
    /// image -> logits
    pub full: ModelHandle,
    /// image -> target-layer features (`1 x C x H' x W'`)
    pub backbone: ModelHandle,
    /// features -> logits
    pub head: ModelHandle,
}

impl ModelBundleGraphs {
    pub fn load(full: &Path, backbone: &Path, head: &Path) -> Result<Self> {
        Ok(ModelBundleGraphs {
            full: load_model(full)?,
            backbone: load_model(backbone)?,
            head: load_model(head)?,
        })
    }
}

/// `max |full(probe) - head(backbone(probe))|`.
pub fn compose_check(graphs: &ModelBundleGraphs, probe: &Tensor) -> Result<f64> {
    let direct = graphs.full.run(probe)?;
    let features = graphs.backbone.run(probe)?;
    let composed = graphs.head.run(&features)?;
    direct.max_abs_diff(&composed)
}
