use std::sync::Arc;

use tract_onnx::prelude::*;

use super::{check_canvas, Embedder, EmbeddingVector, ModelConfig, Preprocess};
use crate::error::{Error, Result};
use crate::raster::resize_bilinear;
use crate::stimulus::StimulusRecord;

/// Evaluates an ONNX graph up to `output_node`.
///
/// Input is a `1x3xRxR` float tensor: the stimulus resized to `R` bilinearly,
/// scaled to `[0, 1]` and normalized per channel. Rank-4 outputs are globally
/// average pooled over their spatial axes; anything else is flattened.
pub struct OnnxEmbedder {
    model_id: String,
    plan: Arc<TypedRunnableModel>,
    preprocess: Preprocess,
}

impl std::fmt::Debug for OnnxEmbedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OnnxEmbedder")
            .field("model_id", &self.model_id)
            .finish_non_exhaustive()
    }
}

impl OnnxEmbedder {
    pub fn load(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let path = config.model_path.as_ref().expect("validated");
        let node = config.output_node.as_ref().expect("validated");
        if !path.is_file() {
            return Err(Error::BackendUnavailable(format!("model file {} not found", path.display())));
        }
        let mut model = tract_onnx::onnx()
            .model_for_path(path)
            .map_err(|e| Error::BackendUnavailable(format!("{}: {e}", path.display())))?;
        model
            .select_outputs_by_name([node.as_str()])
            .map_err(|_| Error::InvalidModelConfig(format!("output node {node:?} not in {}", path.display())))?;
        let r = config.preprocess.resize as usize;
        let plan = model
            .with_input_fact(0, f32::fact([1, 3, r, r]).into())
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(|e| Error::InvalidModelConfig(format!("{}: {e:#}", config.model_id)))?;
        Ok(OnnxEmbedder {
            model_id: config.model_id.clone(),
            plan,
            preprocess: config.preprocess.clone(),
        })
    }

    fn input_tensor(&self, stimulus: &StimulusRecord) -> Tensor {
        let r = self.preprocess.resize;
        let img = if stimulus.image.dimensions() == (r, r) {
            stimulus.image.clone()
        } else {
            resize_bilinear(&stimulus.image, r, r)
        };
        let r = r as usize;
        let Preprocess { mean, std, .. } = &self.preprocess;
        tract_ndarray::Array4::from_shape_fn((1, 3, r, r), |(_, c, y, x)| {
            let v = f32::from(img.get_pixel(x as u32, y as u32).0[c]) / 255.0;
            (v - mean[c]) / std[c]
        })
        .into()
    }
}

impl Embedder for OnnxEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embed(&self, stimulus: &StimulusRecord) -> Result<EmbeddingVector> {
        check_canvas(stimulus)?;
        let fault = |e: TractError| Error::NumericalFault(format!("{}: {e:#}", self.model_id));
        let outputs = self
            .plan
            .run(tvec!(self.input_tensor(stimulus).into()))
            .map_err(fault)?;
        let out = outputs[0].to_plain_array_view::<f32>().map_err(fault)?;
        let values: Vec<f32> = if out.ndim() == 4 {
            let (c, h, w) = (out.shape()[1], out.shape()[2], out.shape()[3]);
            let n = (h * w) as f64;
            (0..c)
                .map(|ch| {
                    let s: f64 = out
                        .slice(tract_ndarray::s![0, ch, .., ..])
                        .iter()
                        .map(|&v| f64::from(v))
                        .sum();
                    (s / n) as f32
                })
                .collect()
        } else {
            out.iter().copied().collect()
        };
        let v = EmbeddingVector {
            stimulus_id: stimulus.meta.stimulus_id.clone(),
            model_id: self.model_id.clone(),
            values,
        };
        v.check_finite()?;
        Ok(v)
    }
}
