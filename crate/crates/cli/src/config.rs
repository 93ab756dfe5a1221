//! Run configuration: a TOML file with every tunable, overridden by flags.

use std::path::Path;

use anyhow::Context;
use ctxloc::{GenConfig, PipelineConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds both the generator and training when set.
    pub seed: Option<u64>,
    /// Worker threads; unset uses one per core.
    pub threads: Option<usize>,
    pub generate: GenerateSection,
    pub train: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub train_scenes: usize,
    pub test_scenes: usize,
    /// Scene parameters; unset picks the preset of the chosen scenario.
    pub scene: Option<GenConfig>,
}

impl Default for GenerateSection {
    fn default() -> Self {
        GenerateSection {
            train_scenes: 200,
            test_scenes: 200,
            scene: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.threads == Some(0) {
            anyhow::bail!("threads must be >= 1");
        }
        if let Some(g) = &self.generate.scene {
            g.validate()?;
        }
        self.train.validate()?;
        let l = &self.train.learner;
        if !(l.gamma >= 0.0 && l.gamma.is_finite()) {
            anyhow::bail!("gamma must be a finite value >= 0");
        }
        if l.epsilon.is_nan() || l.epsilon <= 0.0 || l.max_rounds == 0 {
            anyhow::bail!("epsilon must be > 0 and max_rounds >= 1");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c: RunConfig = toml::from_str("").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn nested_sections_parse() {
        let c: RunConfig = toml::from_str(
            "seed = 3\n[generate]\ntrain_scenes = 10\n[generate.scene]\nnum_windows = 50\n[train]\nfeatures = \"score_only\"\n[train.learner]\ngamma = 2.0\nepsilon = 0.01\nmax_rounds = 5\n",
        )
        .unwrap();
        assert_eq!(c.seed, Some(3));
        assert_eq!(c.generate.train_scenes, 10);
        assert_eq!(c.generate.scene.unwrap().num_windows, 50);
        assert_eq!(c.train.learner.gamma, 2.0);
        assert_eq!(c.train.features, ctxloc::FeatureSet::ScoreOnly);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
    }
}
