//! End-to-end training: GP relation model, cached hyper-features for every
//! training image, and structured learning of the weights.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{relation_descriptor, RelationTriple};
use crate::gp::{gp_fit, learn_kernel, subsample_indices, AppearanceVector, GpModel, KernelConfig, KernelFit};
use crate::hyperfeatures::{assemble_all, HyperFeatureVector, SceneContext, NUM_FEATURES, S_MU, S_SIGMA};
use crate::learner::{train_structured, TrainConfig, TrainOutcome, TrainingImage};
use crate::model::{LocalizerModel, TrainingSummary};
use crate::synth::SceneInstance;

/// Which hyper-features the learner may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    #[default]
    Full,
    /// Only the window score pair (predicted overlap, std).
    ScoreOnly,
}

impl FeatureSet {
    fn apply(self, phi: &mut HyperFeatureVector) {
        if self == FeatureSet::ScoreOnly {
            for k in 0..NUM_FEATURES {
                if k != S_MU && k != S_SIGMA {
                    phi[k] = 0.0;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Initial kernel; `None` picks unit length-scales with moderate
    /// signal and noise for the data dimension.
    pub kernel_init: Option<KernelConfig>,
    pub kernel_iterations: usize,
    /// Training points used for hyperparameter search.
    pub kernel_cap: usize,
    /// Training points kept by the final GP.
    pub gp_cap: usize,
    /// Folds for out-of-fold relation predictions on training images; 1
    /// uses the final GP in-sample.
    pub folds: usize,
    pub features: FeatureSet,
    pub learner: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            kernel_init: None,
            kernel_iterations: 20,
            kernel_cap: 256,
            gp_cap: 512,
            folds: 2,
            features: FeatureSet::Full,
            learner: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gp_cap == 0 || self.kernel_cap < 2 {
            return Err(Error::InvalidConfig("gp_cap must be >= 1 and kernel_cap >= 2".into()));
        }
        if self.folds == 0 {
            return Err(Error::InvalidConfig("folds must be >= 1".into()));
        }
        if let Some(k) = &self.kernel_init {
            k.validate()?;
        }
        Ok(())
    }
}

/// Everything produced by [`train_model`].
#[derive(Debug, Clone)]
pub struct TrainedPipeline {
    pub model: LocalizerModel,
    pub outcome: TrainOutcome,
    pub kernel_fit: KernelFit,
    pub images: Vec<TrainingImage>,
}

impl TrainedPipeline {
    pub fn summary(&self) -> TrainingSummary {
        TrainingSummary {
            converged: self.outcome.converged,
            rounds: self.outcome.rounds,
            objective: self.outcome.objective,
            working_set: self.outcome.working_set.len(),
            num_images: self.images.len(),
            kernel_log_likelihood: self.kernel_fit.trace.last().copied(),
            kernel_warning: self.kernel_fit.warning.clone(),
        }
    }
}

/// GP training pairs (appearance, true relation to the ground truth) from
/// the given scenes.
fn relation_pairs<'a>(scenes: impl Iterator<Item = &'a SceneInstance>) -> (Vec<AppearanceVector>, Vec<RelationTriple>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in scenes {
        let gt = s.ground_truth.expect("checked by caller");
        for (w, x) in s.windows.iter().zip(&s.features) {
            xs.push(x.clone());
            ys.push(relation_descriptor(w, &gt));
        }
    }
    (xs, ys)
}

fn subsample(xs: &[AppearanceVector], ys: &[RelationTriple], cap: usize, rng: &mut ChaCha8Rng) -> (Vec<AppearanceVector>, Vec<RelationTriple>) {
    let idx = subsample_indices(xs.len(), cap, rng);
    (idx.iter().map(|&i| xs[i].clone()).collect(), idx.iter().map(|&i| ys[i]).collect())
}

/// Fits the relation GP: hyperparameter search on a subsample, then an
/// exact GP on a (larger) subsample.
pub fn fit_relation_gp(scenes: &[SceneInstance], cfg: &PipelineConfig) -> Result<(GpModel, KernelFit)> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::Invalid("no training scenes".into()));
    }
    if let Some(s) = scenes.iter().find(|s| s.ground_truth.is_none()) {
        return Err(Error::Invalid(format!("training scene {} has no ground truth", s.id)));
    }
    for s in scenes {
        s.validate()?;
    }
    let (xs, ys) = relation_pairs(scenes.iter());
    let dim = xs[0].len();
    let init = cfg
        .kernel_init
        .clone()
        .unwrap_or_else(|| KernelConfig::isotropic(dim, 1.0, 0.1, 0.01));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let kernel_fit = if xs.len() >= 2 {
        let (kx, ky) = subsample(&xs, &ys, cfg.kernel_cap, &mut rng);
        learn_kernel(&kx, &ky, &init, cfg.kernel_iterations)?
    } else {
        KernelFit {
            config: init,
            trace: Vec::new(),
            warning: Some("single training point; kernel not learned".into()),
        }
    };
    if let Some(w) = &kernel_fit.warning {
        log::warn!("kernel learning: {w}");
    }
    let (gx, gy) = subsample(&xs, &ys, cfg.gp_cap, &mut rng);
    let gp = gp_fit(&gx, &gy, &kernel_fit.config)?;
    Ok((gp, kernel_fit))
}

fn training_image(gp: &GpModel, scene: &SceneInstance, features: FeatureSet) -> Result<TrainingImage> {
    let ctx = SceneContext::from_model(gp, scene.windows.clone(), scene.features.clone())?;
    let mut phis = assemble_all(&ctx);
    for p in &mut phis {
        features.apply(p);
    }
    TrainingImage::new(phis, &scene.windows, &scene.ground_truth.expect("checked by caller"))
}

/// Training images with hyper-features computed from out-of-fold GP
/// predictions; scene `i` belongs to fold `i % folds`.
pub fn build_training_images(
    scenes: &[SceneInstance],
    final_gp: &GpModel,
    cfg: &PipelineConfig,
) -> Result<Vec<TrainingImage>> {
    let folds = cfg.folds.min(scenes.len()).max(1);
    let fold_gps: Vec<GpModel> = if folds == 1 {
        vec![final_gp.clone()]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xf01d);
        (0..folds)
            .map(|f| {
                let (xs, ys) = relation_pairs(scenes.iter().enumerate().filter(|(i, _)| i % folds != f).map(|(_, s)| s));
                let (gx, gy) = subsample(&xs, &ys, cfg.gp_cap, &mut rng);
                gp_fit(&gx, &gy, final_gp.kernel_config())
            })
            .collect::<Result<_>>()?
    };
    scenes
        .par_iter()
        .enumerate()
        .map(|(i, s)| training_image(&fold_gps[i % folds], s, cfg.features))
        .collect()
}

pub fn train_model(scenes: &[SceneInstance], cfg: &PipelineConfig) -> Result<TrainedPipeline> {
    let (gp, kernel_fit) = fit_relation_gp(scenes, cfg)?;
    let images = build_training_images(scenes, &gp, cfg)?;
    let outcome = train_structured(&images, &cfg.learner)?;
    Ok(TrainedPipeline {
        model: LocalizerModel::new(gp, outcome.alpha),
        outcome,
        kernel_fit,
        images,
    })
}
