//! Run configuration: one JSON file drives every command, and every
//! random choice funnels through its single seed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::SynthParams;
use crate::error::{Error, Result};
use crate::filtergate::GateConfig;
use crate::policy::PolicyHyper;
use crate::trainer::A2cConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderConfig {
    /// Native hashed tf-idf encoder.
    Hashed { dim: usize },
    /// Externally computed embeddings, one table for reports and files.
    External { path: PathBuf },
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::Hashed { dim: 64 }
    }
}

/// Synthetic-corpus section; the generator seed comes from the run seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    pub n_files: usize,
    pub n_bugs: usize,
    pub relevant_per_bug: usize,
    pub vocab_size: usize,
    pub overlap: f64,
    pub noise: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let p = SynthParams::default();
        SynthSection {
            n_files: p.n_files,
            n_bugs: p.n_bugs,
            relevant_per_bug: p.relevant_per_bug,
            vocab_size: p.vocab_size,
            overlap: p.overlap,
            noise: p.noise,
        }
    }
}

/// A2C section without a seed; the run seed is used.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct A2cSection {
    pub gamma: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub learning_rate: f64,
    pub episodes: usize,
}

impl Default for A2cSection {
    fn default() -> Self {
        let c = A2cConfig::default();
        A2cSection {
            gamma: c.gamma,
            entropy_coef: c.entropy_coef,
            value_coef: c.value_coef,
            learning_rate: c.learning_rate,
            episodes: c.episodes,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GateSection {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
}

impl Default for GateSection {
    fn default() -> Self {
        let c = GateConfig::default();
        GateSection {
            n_trees: c.n_trees,
            max_depth: c.max_depth,
            learning_rate: c.learning_rate,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub corpus_dir: PathBuf,
    pub index_file: PathBuf,
    pub gate_file: PathBuf,
    pub policy_file: PathBuf,
    pub output_dir: PathBuf,
    pub k: usize,
    pub encoder: EncoderConfig,
    pub reward_m: f64,
    pub a2c: A2cSection,
    pub gate: GateSection,
    pub split_ratio: f64,
    pub seed: u64,
    pub synth: SynthSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus_dir: PathBuf::from("corpus"),
            index_file: PathBuf::from("out/index.rlix"),
            gate_file: PathBuf::from("out/gate.json"),
            policy_file: PathBuf::from("out/policy.ckpt"),
            output_dir: PathBuf::from("out"),
            k: crate::retrieval::DEFAULT_K,
            encoder: EncoderConfig::default(),
            reward_m: 3.0,
            a2c: A2cSection::default(),
            gate: GateSection::default(),
            split_ratio: 0.6,
            seed: 7,
            synth: SynthSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load with `key=value` overrides applied onto the JSON tree; keys
    /// use dotted paths like `a2c.episodes`.
    pub fn load_with_overrides(path: &Path, overrides: &[String]) -> Result<RunConfig> {
        let text = fs::read_to_string(path)?;
        let mut tree: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{item}' is not key=value")))?;
            let parsed: serde_json::Value = serde_json::from_str(value)
                .unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
            let mut node = &mut tree;
            let parts: Vec<&str> = key.split('.').collect();
            for part in &parts[..parts.len() - 1] {
                node = node
                    .as_object_mut()
                    .ok_or_else(|| Error::Config(format!("override path '{key}' invalid")))?
                    .entry(part.to_string())
                    .or_insert_with(|| serde_json::Value::Object(Default::default()));
            }
            node.as_object_mut()
                .ok_or_else(|| Error::Config(format!("override path '{key}' invalid")))?
                .insert(parts[parts.len() - 1].to_string(), parsed);
        }
        let cfg: RunConfig = serde_json::from_value(tree)
            .map_err(|e| Error::Config(format!("after overrides: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("k: must be at least 1".into()));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!(
                "split_ratio: {} not in (0,1)",
                self.split_ratio
            )));
        }
        if let EncoderConfig::Hashed { dim } = self.encoder {
            if dim < 8 || !dim.is_power_of_two() {
                return Err(Error::Config(format!(
                    "encoder.dim: {dim} must be a power of two >= 8"
                )));
            }
        }
        if self.reward_m <= 0.0 {
            return Err(Error::Config(format!(
                "reward_m: {} must be positive",
                self.reward_m
            )));
        }
        Ok(())
    }

    pub fn synth_params(&self) -> SynthParams {
        SynthParams {
            n_files: self.synth.n_files,
            n_bugs: self.synth.n_bugs,
            relevant_per_bug: self.synth.relevant_per_bug,
            vocab_size: self.synth.vocab_size,
            overlap: self.synth.overlap,
            noise: self.synth.noise,
            seed: self.seed,
        }
    }

    pub fn a2c_config(&self) -> A2cConfig {
        A2cConfig {
            gamma: self.a2c.gamma,
            entropy_coef: self.a2c.entropy_coef,
            value_coef: self.a2c.value_coef,
            learning_rate: self.a2c.learning_rate,
            episodes: self.a2c.episodes,
            seed: self.seed,
            m: self.reward_m,
        }
    }

    pub fn gate_config(&self) -> GateConfig {
        GateConfig {
            n_trees: self.gate.n_trees,
            max_depth: self.gate.max_depth,
            learning_rate: self.gate.learning_rate,
            seed: self.seed,
        }
    }

    pub fn policy_hyper(&self) -> Result<PolicyHyper> {
        let embed_dim = match &self.encoder {
            EncoderConfig::Hashed { dim } => *dim,
            EncoderConfig::External { path } => {
                let table = crate::encoder::load_external_embeddings(path)?;
                table
                    .values()
                    .next()
                    .map(|e| e.dim())
                    .ok_or_else(|| Error::Format("external embedding table is empty".into()))?
            }
        };
        Ok(PolicyHyper {
            embed_dim,
            k_max: self.k,
            ..PolicyHyper::default()
        })
    }

    /// Index file for one snapshot. Single-snapshot corpora use the
    /// configured path as-is; others get the version id inserted before
    /// the extension.
    pub fn index_path(&self, version_id: &str, n_snapshots: usize) -> PathBuf {
        if n_snapshots <= 1 {
            return self.index_file.clone();
        }
        let stem = self
            .index_file
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("index");
        let ext = self
            .index_file
            .extension()
            .and_then(|s| s.to_str())
            .unwrap_or("rlix");
        self.index_file
            .with_file_name(format!("{stem}-{version_id}.{ext}"))
    }
}
