use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dygc::condense::CondenseConfig;
use dygc::dgnn::TrainConfig;
use dygc::graphstore::SyntheticParams;
use serde::{Deserialize, Serialize};

/// Run manifest. Every key is optional; command-line flags win over it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Overrides the seed of every stage when set.
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub pretrained: Option<PathBuf>,
    pub synthetic: SyntheticParams,
    pub train: TrainConfig,
    pub condense: CondenseConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub repeats: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { repeats: 1 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn apply_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed.or(self.seed) {
            self.seed = Some(s);
            self.synthetic.seed = s;
            self.train.seed = s;
            self.condense.seed = s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 1}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"train": {"epoch": 1}}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"train": {"epochs": 3}, "condense": {"field": {"k": 2}}}"#).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.condense.field.k, 2);
        assert_eq!(c.condense.field.alpha, 0.5);
    }

    #[test]
    fn seed_reaches_every_stage() {
        let mut c = RunConfig::default();
        c.apply_seed(Some(9));
        assert_eq!((c.synthetic.seed, c.train.seed, c.condense.seed), (9, 9, 9));
        let mut d = RunConfig {
            seed: Some(4),
            ..Default::default()
        };
        d.apply_seed(None);
        assert_eq!(d.train.seed, 4);
    }
}
