//! Object localization that scores every candidate window in the context of
//! all other windows in the image.
//!
//! The pipeline: a Gaussian process predicts, from appearance alone, how
//! each candidate relates spatially to the unseen object ([`gp`]); joint
//! hyper-features compare those predictions with the relations each
//! candidate would induce ([`hyperfeatures`]); a linear score over them is
//! maximized exactly with early rejection ([`inference`]) and its weights
//! are learned by constraint generation ([`learner`]).

pub mod error;
pub mod eval;
pub mod geometry;
pub mod gp;
pub mod hyperfeatures;
pub mod inference;
pub mod io;
pub mod learner;
pub mod model;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{intersection_area, overlap_loss, relation_descriptor, Relation, RelationTriple, Window};
pub use gp::{gp_fit, gp_predict, kernel, learn_kernel, AppearanceVector, GpModel, KernelConfig, RelationPrediction};
pub use hyperfeatures::{assemble_phi, score, HyperFeatureVector, SceneContext, WeightVector, NUM_FEATURES};
pub use inference::{infer_brute, infer_fast, upper_bound, InferenceResult};
pub use io::Dataset;
pub use learner::{best_candidate, most_violated_constraint, solve_qp, train_structured, TrainConfig, TrainingImage};
pub use model::LocalizerModel;
pub use pipeline::{train_model, FeatureSet, PipelineConfig};
pub use synth::{generate_container_scenes, generate_scene, GenConfig, Scenario, SceneInstance};
