use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use flowforge_core::augment::{AverageConfig, MtuConfig};
use flowforge_core::classifier::{FineTuneConfig, TrainConfig};
use flowforge_core::flowpic::PicSpec;
use flowforge_core::preprocess::FilterPolicy;
use flowforge_core::synth::SynthConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    #[default]
    AvgComparison,
    MtuVulnerability,
    MtuHardening,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 3] = [
        ExperimentId::AvgComparison,
        ExperimentId::MtuVulnerability,
        ExperimentId::MtuHardening,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::AvgComparison => "avg_comparison",
            ExperimentId::MtuVulnerability => "mtu_vulnerability",
            ExperimentId::MtuHardening => "mtu_hardening",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .with_context(|| format!("unknown experiment id {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineTuneSettings {
    pub head_widths: Vec<usize>,
    /// Also pretrain on the original train pics, not only the averaged ones.
    pub pretrain_include_original: bool,
}

impl Default for FineTuneSettings {
    fn default() -> Self {
        FineTuneSettings {
            head_widths: FineTuneConfig::default().head_widths,
            pretrain_include_original: false,
        }
    }
}

impl FineTuneSettings {
    pub fn head(&self) -> FineTuneConfig {
        FineTuneConfig {
            head_widths: self.head_widths.clone(),
        }
    }
}

/// Everything needed to re-run an experiment. Serialized as TOML.
///
/// `seed` is the master seed. The split, initialization, training, subset
/// sampling and MTU draws each get their own stream derived from it (mixed
/// with the component's own `seed` field). The synthetic dataset uses only
/// `synth.seed`, so a dataset stays fixed while the experiment seed varies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub id: ExperimentId,
    pub seed: u64,
    /// Flow JSONL file. When absent the `[synth]` generator is used.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub synth: SynthConfig,
    pub filter: FilterPolicy,
    pub pic: PicSpec,
    pub average: AverageConfig,
    pub mtu: MtuConfig,
    pub train: TrainConfig,
    pub finetune: FineTuneSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            id: ExperimentId::default(),
            seed: 7,
            dataset: None,
            out: None,
            synth: SynthConfig::default(),
            filter: FilterPolicy::default(),
            pic: PicSpec::default(),
            average: AverageConfig::default(),
            mtu: MtuConfig::default(),
            train: TrainConfig::default(),
            finetune: FineTuneSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn for_id(id: ExperimentId) -> Self {
        ExperimentConfig {
            id,
            ..Default::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
        // relative dataset paths are relative to the config file
        if let (Some(ds), Some(dir)) = (&cfg.dataset, path.parent()) {
            if ds.is_relative() && !ds.exists() {
                cfg.dataset = Some(dir.join(ds));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing experiment config")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            bail!("seed {} does not fit in a TOML integer", self.seed);
        }
        if let Some(path) = &self.dataset {
            if !path.exists() {
                bail!("dataset {} does not exist", path.display());
            }
        } else {
            self.synth.validate()?;
        }
        self.filter.validate()?;
        self.pic.validate()?;
        self.mtu.validate()?;
        self.train.validate()?;
        if self.average.m == 0 {
            bail!("average.m must be at least 1");
        }
        Ok(())
    }
}
