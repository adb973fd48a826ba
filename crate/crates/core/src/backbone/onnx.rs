use std::path::Path;

use tract_onnx::prelude::*;

use super::BackboneError;
use crate::dataset::preprocess::{PreprocessedFrame, FRAME_SIZE};

type Plan = SimplePlan<TypedFact, Box<dyn TypedOp>, Graph<TypedFact, Box<dyn TypedOp>>>;

/// ONNX feature extractor with a single 1x3x224x224 input.
pub struct OnnxBackbone {
    plan: Plan,
    output_dim: usize,
}

fn model_err(e: impl std::fmt::Display) -> BackboneError {
    BackboneError::Model(e.to_string())
}

impl OnnxBackbone {
    pub fn load(path: &Path, output_dim: usize) -> Result<Self, BackboneError> {
        let plan = tract_onnx::onnx()
            .model_for_path(path)
            .and_then(|m| m.with_input_fact(0, f32::fact([1, 3, FRAME_SIZE, FRAME_SIZE]).into()))
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(model_err)?;
        let backbone = OnnxBackbone { plan, output_dim };
        // probe once so a wrong output width fails at load time
        let probe = PreprocessedFrame { data: vec![0.0; 3 * FRAME_SIZE * FRAME_SIZE] };
        let out = backbone.embed(&probe)?;
        if out.len() != output_dim {
            return Err(BackboneError::DimensionMismatch { expected: output_dim, actual: out.len() });
        }
        Ok(backbone)
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn embed(&self, frame: &PreprocessedFrame) -> Result<Vec<f32>, BackboneError> {
        let input = tract_ndarray::Array4::from_shape_vec((1, 3, FRAME_SIZE, FRAME_SIZE), frame.data.clone())
            .map_err(model_err)?;
        let outputs = self.plan.run(tvec!(Tensor::from(input).into())).map_err(model_err)?;
        let view = outputs[0].to_array_view::<f32>().map_err(model_err)?;
        Ok(view.iter().copied().collect())
    }
}
