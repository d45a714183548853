//! Experiment configuration: a TOML file (sections of key = value lines),
//! command-line flags override file values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use cgbc_core::corpus::{content_hash, VulnKind};
use cgbc_core::learn::{FinetuneOptions, LossWeights, ModelDims, SceConfig};

use crate::{AppError, AppResult};

/// The ablation arms of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    /// No pretraining, no granular-ball layer, plain cross-entropy.
    Baseline,
    /// Contrastive pretraining only; plain cross-entropy fine-tuning.
    Pretrain,
    /// Granular-ball fine-tuning with SCE, from random init.
    Gb,
    /// Pretraining plus granular-ball fine-tuning with SCE.
    Full,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Baseline, Arm::Pretrain, Arm::Gb, Arm::Full];

    pub fn as_str(&self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::Pretrain => "pretrain",
            Arm::Gb => "gb",
            Arm::Full => "full",
        }
    }

    pub fn uses_pretrain(&self) -> bool {
        matches!(self, Arm::Pretrain | Arm::Full)
    }

    pub fn uses_gb(&self) -> bool {
        matches!(self, Arm::Gb | Arm::Full)
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Arm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Arm::Baseline),
            "pretrain" => Ok(Arm::Pretrain),
            "gb" => Ok(Arm::Gb),
            "full" => Ok(Arm::Full),
            other => Err(format!("unknown arm `{other}` (baseline|pretrain|gb|full)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub seeds: Vec<u64>,
    pub noise_levels: Vec<f64>,
    pub kinds: Vec<String>,
    pub arms: Vec<Arm>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            seeds: vec![1, 2, 3, 4, 5],
            noise_levels: vec![0.0, 0.1, 0.2, 0.3, 0.4],
            kinds: vec!["RE".into(), "TD".into(), "IO".into()],
            arms: Arm::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { feature_dim: 256, hidden_dim: 128, embed_dim: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    pub pur: f64,
}

impl Default for ClusterSection {
    fn default() -> Self {
        ClusterSection { pur: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub margin: f64,
    pub sce_alpha: f64,
    pub sce_beta: f64,
    pub sce_clamp: f64,
    pub w_intra: f64,
    pub w_inter: f64,
    pub w_sce: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            margin: 1.0,
            sce_alpha: 1.0,
            sce_beta: 1.0,
            sce_clamp: -4.0,
            w_intra: 1.0,
            w_inter: 1.0,
            w_sce: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub rho: f64,
    pub variants: usize,
    pub contract_level: bool,
}

impl Default for AugmentSection {
    fn default() -> Self {
        AugmentSection { rho: 0.3, variants: 5, contract_level: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub k: usize,
    pub taus: Vec<f64>,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection { k: 5, taus: vec![0.9, 0.95] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub pretrain_lr: f64,
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr: 1e-3,
            pretrain_lr: 1e-3,
            epochs: 4,
            pretrain_epochs: 4,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub use_pretrain: bool,
    pub use_gb: bool,
}

impl Default for AblationSection {
    fn default() -> Self {
        AblationSection { use_pretrain: true, use_gb: true }
    }
}

/// Everything an experiment run depends on. Serialized form doubles as
/// the canonical text the config hash is computed over.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub model: ModelSection,
    pub cluster: ClusterSection,
    pub loss: LossSection,
    pub augment: AugmentSection,
    pub verify: VerifySection,
    pub train: TrainSection,
    pub ablation: AblationSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| AppError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> AppResult<()> {
        let e = |m: String| Err(AppError::Config(m));
        if self.experiment.seeds.is_empty()
            || self.experiment.noise_levels.is_empty()
            || self.experiment.kinds.is_empty()
            || self.experiment.arms.is_empty()
        {
            return e("experiment lists must be non-empty".into());
        }
        for v in &self.experiment.noise_levels {
            if !(0.0..=1.0).contains(v) {
                return e(format!("noise level {v} outside [0, 1]"));
            }
        }
        for k in &self.experiment.kinds {
            if VulnKind::parse(k).is_none() {
                return e(format!("unknown vulnerability kind `{k}`"));
            }
        }
        if !(self.cluster.pur > 0.0 && self.cluster.pur <= 1.0) {
            return e(format!("pur {} outside (0, 1]", self.cluster.pur));
        }
        if !(self.augment.rho > 0.0 && self.augment.rho <= 1.0) {
            return e(format!("rho {} outside (0, 1]", self.augment.rho));
        }
        if self.verify.k < 2 {
            return e("k must be >= 2".into());
        }
        if self.verify.taus.is_empty() {
            return e("taus must be non-empty".into());
        }
        if self.model.feature_dim < 2 || self.model.embed_dim < 2 || self.model.hidden_dim < 1 {
            return e("model dims too small".into());
        }
        if self.train.batch_size < 2 {
            return e("batch_size must be >= 2".into());
        }
        if self.loss.sce_clamp >= 0.0 {
            return e("sce_clamp must be negative".into());
        }
        Ok(())
    }

    /// Canonical serialization; field order is fixed by the struct.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        content_hash(&self.canonical_toml())
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            feature: self.model.feature_dim,
            hidden: self.model.hidden_dim,
            embed: self.model.embed_dim,
        }
    }

    pub fn sce(&self) -> SceConfig {
        SceConfig {
            alpha: self.loss.sce_alpha,
            beta: self.loss.sce_beta,
            clamp: self.loss.sce_clamp,
        }
    }

    pub fn finetune_options(&self) -> FinetuneOptions {
        FinetuneOptions {
            pur: self.cluster.pur,
            margin: self.loss.margin,
            sce: self.sce(),
            weights: LossWeights {
                intra: self.loss.w_intra,
                inter: self.loss.w_inter,
                sce: self.loss.w_sce,
            },
            lr: self.train.lr,
        }
    }

    pub fn kinds(&self) -> Vec<VulnKind> {
        self.experiment
            .kinds
            .iter()
            .filter_map(|k| VulnKind::parse(k))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_hash_stably() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.hash(), cfg.hash());
        let mut other = cfg.clone();
        other.cluster.pur = 0.6;
        assert_ne!(cfg.hash(), other.hash());
    }

    #[test]
    fn canonical_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = cfg.canonical_toml();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = ExperimentConfig::default();
        cfg.experiment.noise_levels = vec![1.5];
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.experiment.kinds = vec!["XX".into()];
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.cluster.pur = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let text = "[cluster]\npur = 0.9\nmystery = 1\n";
        let err = toml::from_str::<ExperimentConfig>(text).unwrap_err();
        assert!(err.to_string().contains("mystery"));
    }
}
