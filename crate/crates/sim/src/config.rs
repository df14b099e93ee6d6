//! Experiment configuration file (TOML, versioned, unknown keys rejected).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use gml_core::baselines::{BaselineConfig, BaselineKind};
use gml_core::eval::Method;
use gml_core::gossip::GossipHyperparams;
use gml_core::rng::{derived_seed, Purpose};
use gml_core::synthdata::{default_site_specs, SiteSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config version {found} is not supported (expected {CONFIG_VERSION})")]
    Version { found: u32 },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Baseline settings; unset fields inherit the gossip hyperparameters so all
/// methods get the same per-site step budget.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSettings {
    pub warmup_steps: Option<usize>,
    pub rounds: Option<usize>,
    pub local_steps_per_round: Option<usize>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

fn default_seed() -> u64 {
    2023
}

fn default_output() -> PathBuf {
    PathBuf::from("gml-out")
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_version")]
    pub format_version: u32,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub gossip: GossipHyperparams,
    #[serde(default)]
    pub baselines: BaselineSettings,
    #[serde(default = "default_site_specs")]
    pub sites: Vec<SiteSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            format_version: CONFIG_VERSION,
            master_seed: default_seed(),
            output_dir: default_output(),
            methods: default_methods(),
            gossip: GossipHyperparams::default(),
            baselines: BaselineSettings::default(),
            sites: default_site_specs(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.format_version != CONFIG_VERSION {
            return Err(ConfigError::Version {
                found: self.format_version,
            });
        }
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.sites.len() < 2 {
            return invalid(format!("need at least 2 sites, got {}", self.sites.len()));
        }
        let ids: BTreeSet<u32> = self.sites.iter().map(|s| s.site_id).collect();
        if ids.len() != self.sites.len() {
            return invalid("site ids must be unique".into());
        }
        let channels = self.sites[0].grid.channels;
        for s in &self.sites {
            s.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if s.grid.channels != channels {
                return invalid(format!("site {} has {} channels, expected {channels}", s.site_id, s.grid.channels));
            }
        }
        if self.methods.is_empty() {
            return invalid("no methods selected".into());
        }
        self.gossip.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for kind in [BaselineKind::Pooled, BaselineKind::Individual, BaselineKind::FedAvg] {
            self.baseline(kind)
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    pub fn baseline(&self, kind: BaselineKind) -> BaselineConfig {
        let b = &self.baselines;
        let g = &self.gossip;
        BaselineConfig {
            kind,
            warmup_steps: b.warmup_steps.unwrap_or(g.warmup_steps),
            rounds: b.rounds.unwrap_or(g.rounds),
            local_steps_per_round: b.local_steps_per_round.unwrap_or(g.local_steps_per_round),
            lr: b.lr.unwrap_or(g.lr),
            batch: b.batch.unwrap_or(g.batch),
            seed: self.master_seed,
        }
    }

    /// Generation seed of one site, derived from the master seed.
    pub fn data_seed(&self, site_id: u32) -> u64 {
        derived_seed(self.master_seed, Purpose::Data, site_id)
    }

    /// SHA-256 over the canonical JSON form of the config. The output
    /// directory does not affect results and is left out.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(&Self {
            output_dir: PathBuf::new(),
            ..self.clone()
        })
        .expect("config serializes to JSON");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn empty_file_means_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_and_versions_are_rejected() {
        assert!(matches!(
            ExperimentConfig::from_toml("master_seed = 1\nbogus = 2\n"),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml("[gossip]\nlearning_rate = 0.1\n"),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml("format_version = 7\n"),
            Err(ConfigError::Version { found: 7 })
        ));
    }

    #[test]
    fn baselines_inherit_gossip_budget() {
        let cfg = ExperimentConfig::from_toml("[gossip]\nrounds = 12\n[baselines]\nlr = 0.2\n").unwrap();
        let b = cfg.baseline(BaselineKind::FedAvg);
        assert_eq!(b.rounds, 12);
        assert_eq!(b.local_steps_per_round, cfg.gossip.local_steps_per_round);
        assert_eq!(b.lr, 0.2);
    }

    #[test]
    fn seed_changes_hash() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            master_seed: 1,
            ..a.clone()
        };
        assert_ne!(a.hash(), b.hash());
        let moved = ExperimentConfig {
            output_dir: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.hash(), moved.hash());
    }
}
