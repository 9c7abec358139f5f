//! Experiment configuration (TOML).
//!
//! ```toml
//! seeds = [1, 2, 3, 4, 5]
//! out_dir = "out"            # overridden by --out; falls back to $HIDEPET_OUT, then "out"
//! checkpoint = "ck.bin"      # optional; pre-trained on the fly when absent
//!
//! [arch]      # layers, dim, heads, tokens, feat, pre_ln_residual
//! [pretrain]  # epochs, lr, batch_size, target_accuracy, seed, classes, per_class, tail_weight
//! [stream]    # scenario = "CIL" | "DIL" | "TIL", num_classes, num_tasks, train_per_class, ...
//! [pet]       # technique = "prompt" | "prefix" | "adapter" | "lora" | ..., prompt_len, rank, ...
//! [hide]      # epochs, head_epochs, strategy = "fsa+sl", recovery = "multi-centroid", ladder = "full", ...
//! [aka]       # lambda_ood, transfer_epochs
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aka::AkaConfig;
use crate::backbone::{Arch, PretrainConfig};
use crate::error::{Error, Result};
use crate::harness::stream::{DomainSpec, StreamConfig};
use crate::hide::HideConfig;
use crate::pet::{Proj, PetSpec, Technique};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "HIDEPET_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainSection {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub target_accuracy: f64,
    pub seed: u64,
    /// Number of pretext classes and samples per class.
    pub classes: usize,
    pub per_class: usize,
    /// Latent tail weight of the pretext domain.
    pub tail_weight: f64,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let p = PretrainConfig::default();
        Self {
            epochs: p.epochs,
            lr: p.lr,
            batch_size: p.batch_size,
            target_accuracy: p.target_accuracy,
            seed: p.seed,
            classes: 20,
            per_class: 100,
            tail_weight: 0.15,
        }
    }
}

impl PretrainSection {
    pub fn to_config(&self) -> PretrainConfig {
        PretrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            target_accuracy: self.target_accuracy,
            seed: self.seed,
        }
    }

    /// Pretext domain: the default domain with a damped latent tail.
    pub fn domain(&self) -> DomainSpec {
        DomainSpec { name: "pretext".into(), tail_weight: self.tail_weight, ..DomainSpec::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PetSection {
    pub technique: Technique,
    /// Attachment layers; technique default when absent.
    pub layers: Option<Vec<usize>>,
    pub prompt_len: usize,
    pub rank: usize,
    pub lora_scale: f64,
    pub lora_targets: Vec<Proj>,
    pub init_std: f64,
}

impl Default for PetSection {
    fn default() -> Self {
        let s = PetSpec::default();
        Self {
            technique: s.technique,
            layers: None,
            prompt_len: s.prompt_len,
            rank: s.rank,
            lora_scale: s.lora_scale,
            lora_targets: s.lora_targets,
            init_std: s.init_std,
        }
    }
}

impl PetSection {
    pub fn to_spec(&self, num_layers: usize) -> Result<PetSpec> {
        let base = PetSpec::for_technique(self.technique, num_layers);
        let spec = PetSpec {
            layers: self.layers.clone().unwrap_or(base.layers),
            prompt_len: self.prompt_len,
            rank: self.rank,
            lora_scale: self.lora_scale,
            lora_targets: self.lora_targets.clone(),
            init_std: self.init_std,
            ..base
        };
        spec.validate(num_layers)?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Report ALA with the literal `A[i-1][i]` formula.
    pub literal_ala: bool,
    pub arch: Arch,
    pub pretrain: PretrainSection,
    pub stream: StreamConfig,
    pub pet: PetSection,
    pub hide: HideConfig,
    pub aka: AkaConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: (1..=5).collect(),
            out_dir: None,
            checkpoint: None,
            literal_ala: false,
            arch: Arch::default(),
            pretrain: PretrainSection::default(),
            stream: StreamConfig::default(),
            pet: PetSection::default(),
            hide: HideConfig::default(),
            aka: AkaConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reduced benchmark that keeps full multi-seed suites within minutes on
    /// one core: 100 train and 50 test samples per class, slow shared-set
    /// rate 3e-4.
    pub fn quick() -> Self {
        let mut c = Self::default();
        c.stream.train_per_class = 100;
        c.stream.test_per_class = 50;
        c.hide.lr_small = 3e-4;
        c
    }

    /// Two-domain mixed stream for pool experiments on top of [`Self::quick`]:
    /// both domains carry a strong per-domain offset so that the calibrated
    /// threshold window contains the default `lambda_ood`.
    pub fn mixed() -> Self {
        let mut c = Self::quick();
        c.stream.domain.offset_scale = 3.0;
        c.stream.extra_domains = vec![DomainSpec { name: "B".into(), seed: 29, offset_scale: 3.0, ..Default::default() }];
        c
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.pet.to_spec(self.arch.layers)?;
        self.hide.validate()?;
        if self.stream.generator.tokens != self.arch.tokens || self.stream.generator.feat != self.arch.feat {
            return Err(Error::Config("stream samples do not match the architecture".into()));
        }
        if self.pretrain.classes > self.stream.class_offset {
            return Err(Error::Config("pretext classes overlap the downstream class range".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, ignoring output locations.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Output root: explicit argument, then the config, then `$HIDEPET_OUT`,
    /// then `out`.
    pub fn out_root(&self, explicit: Option<&Path>) -> PathBuf {
        explicit
            .map(Path::to_path_buf)
            .or_else(|| self.out_dir.clone())
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let c = ExperimentConfig::quick();
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn partial_file_takes_defaults() {
        let c = ExperimentConfig::from_toml("seeds = [3]\n[pet]\ntechnique = \"lora\"\n[hide]\nstrategy = \"sl\"\n").unwrap();
        assert_eq!(c.seeds, vec![3]);
        assert_eq!(c.pet.to_spec(4).unwrap().technique, Technique::Lora);
        assert_eq!(c.hide.strategy, crate::hide::SharedStrategy::Sl);
        assert_eq!(c.stream.num_classes, 40);
    }

    #[test]
    fn unknown_strategy_is_config_error() {
        let e = ExperimentConfig::from_toml("[hide]\nstrategy = \"bogus\"\n").unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn out_dir_does_not_change_hash() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { out_dir: Some("elsewhere".into()), ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_eq!(b.out_root(None), PathBuf::from("elsewhere"));
        assert_eq!(b.out_root(Some(Path::new("x"))), PathBuf::from("x"));
    }
}
