//! Fixtures shared by the benchmarks.

use ctxloc::synth::generate_split;
use ctxloc::{train_model, GenConfig, LocalizerModel, PipelineConfig, SceneContext};

/// A model trained on a small default-scenario set.
pub fn trained_model() -> LocalizerModel {
    let gen = GenConfig {
        seed: 7,
        num_windows: 150,
        ..GenConfig::default()
    };
    let train = generate_split(&gen, 0, 40).expect("valid generator config");
    train_model(&train, &PipelineConfig::default()).expect("training succeeds").model
}

/// Scoring contexts for `count` fresh scenes with `n` candidates each.
pub fn contexts(model: &LocalizerModel, n: usize, count: usize) -> Vec<SceneContext> {
    let gen = GenConfig {
        seed: 7,
        num_windows: n,
        ..GenConfig::default()
    };
    generate_split(&gen, 9_000_000, count)
        .expect("valid generator config")
        .iter()
        .map(|s| model.context(s).expect("scene matches model"))
        .collect()
}
