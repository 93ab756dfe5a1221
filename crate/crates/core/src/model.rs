//! A trained localizer: the relation GP plus the score weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{GpModel, GpModelDoc};
use crate::hyperfeatures::{SceneContext, WeightVector};
use crate::inference::{infer_fast, InferenceResult};
use crate::io::check_schema;
use crate::synth::SceneInstance;

pub const MODEL_SCHEMA: &str = "1.0";

#[derive(Debug, Clone)]
pub struct LocalizerModel {
    pub gp: GpModel,
    pub alpha: WeightVector,
}

impl LocalizerModel {
    pub fn new(gp: GpModel, alpha: WeightVector) -> Self {
        LocalizerModel { gp, alpha }
    }

    pub fn context(&self, scene: &SceneInstance) -> Result<SceneContext> {
        scene.validate()?;
        SceneContext::from_model(&self.gp, scene.windows.clone(), scene.features.clone())
    }

    /// Highest-scoring candidate of `scene` via early-rejection inference.
    pub fn localize(&self, scene: &SceneInstance) -> Result<InferenceResult> {
        let ctx = self.context(scene)?;
        Ok(infer_fast(&self.alpha, &ctx))
    }

    pub fn to_doc(&self, training: Option<TrainingSummary>) -> ModelDoc {
        ModelDoc {
            schema_version: MODEL_SCHEMA.to_string(),
            alpha: self.alpha,
            gp: self.gp.to_doc(),
            training,
        }
    }

    pub fn from_doc(doc: ModelDoc) -> Result<Self> {
        check_schema("model", &doc.schema_version, MODEL_SCHEMA)?;
        if !doc.alpha.as_slice().iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid("model weights are not finite".into()));
        }
        Ok(LocalizerModel {
            gp: GpModel::from_doc(doc.gp)?,
            alpha: doc.alpha,
        })
    }
}

/// Bookkeeping stored alongside a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub converged: bool,
    pub rounds: usize,
    pub objective: f64,
    pub working_set: usize,
    pub num_images: usize,
    pub kernel_log_likelihood: Option<f64>,
    pub kernel_warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub schema_version: String,
    pub alpha: WeightVector,
    pub gp: GpModelDoc,
    #[serde(default)]
    pub training: Option<TrainingSummary>,
}
