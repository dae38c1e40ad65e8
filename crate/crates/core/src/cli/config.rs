use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pseudolabel::SelfTrainConfig;
use crate::recognizer::LabeledSample;
use crate::synthdata::{generate, generate_range, split, DatasetSplit, SynthConfig};

/// Pool sizes of a generated experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Samples split into labeled and unlabeled pools.
    pub pool: usize,
    pub val: usize,
    pub test: usize,
    pub label_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            pool: 1000,
            val: 200,
            test: 500,
            label_fraction: 0.1,
        }
    }
}

/// Everything needed to regenerate data and repeat a run. The master `seed`
/// is copied into `synth.seed` and `self_train.seed` by [`RunConfig::resolve`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub self_train: SelfTrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    /// Propagates the master seed and checks cross-section consistency.
    pub fn resolve(mut self) -> Result<Self> {
        self.synth.seed = self.seed;
        self.self_train.seed = self.seed;
        self.synth.validate_for(self.self_train.max_len)?;
        self.self_train.validate()?;
        let d = &self.data;
        if !(d.label_fraction > 0.0 && d.label_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "label_fraction {} outside (0, 1]",
                d.label_fraction
            )));
        }
        if d.pool == 0 || d.val == 0 || d.test == 0 {
            return Err(Error::Config("pool, val and test sizes must be >= 1".into()));
        }
        if (d.label_fraction * d.pool as f64).round() < 1.0 {
            return Err(Error::Config("label fraction leaves the labeled pool empty".into()));
        }
        Ok(self)
    }
}

/// The pools of one generated experiment. Pool ids are `0..pool`, then the
/// validation and test ids follow.
#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub split: DatasetSplit,
    pub val: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

impl Experiment {
    /// The unlabeled pool with its withheld labels re-attached.
    pub fn unlabeled_oracle(&self) -> Result<Vec<LabeledSample>> {
        self.split.heldout().attach(&self.split.unlabeled)
    }
}

impl RunConfig {
    /// Generates the experiment described by a resolved config.
    pub fn experiment(&self) -> Result<Experiment> {
        let (synth, d) = (&self.synth, &self.data);
        let pool = generate(synth, d.pool)?;
        let val = generate_range(synth, d.pool as u64, d.val)?;
        let test = generate_range(synth, (d.pool + d.val) as u64, d.test)?;
        Ok(Experiment {
            split: split(pool, d.label_fraction, self.seed)?,
            val,
            test,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_including_infinite_tau() {
        let mut c = RunConfig::default();
        c.self_train.tau = f64::INFINITY;
        c.seed = 9;
        let text = c.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert!(text.contains("tau = inf"));
    }

    #[test]
    fn partial_files_fill_defaults_and_unknown_keys_fail() {
        let c: RunConfig = toml::from_str("seed = 3\n[self_train]\nrounds = 2\n").unwrap();
        assert_eq!(c.self_train.rounds, 2);
        assert_eq!(c.data, DataConfig::default());
        let r = c.resolve().unwrap();
        assert_eq!((r.synth.seed, r.self_train.seed), (3, 3));
        assert!(toml::from_str::<RunConfig>("[self_train]\nbeam = 2\n").is_err());
    }

    #[test]
    fn resolve_rejects_inconsistent_sections() {
        let mut c = RunConfig::default();
        c.self_train.max_len = c.synth.max_len;
        assert!(matches!(c.resolve(), Err(Error::Config(_))));
        let mut c = RunConfig::default();
        c.data.label_fraction = 0.0001;
        assert!(c.resolve().is_err());
    }
}
