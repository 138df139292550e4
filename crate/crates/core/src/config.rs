//! Experiment configuration files.
//!
//! A config is TOML with the sections `[problem]`, `[policy]`, `[train]`
//! and `[sweep]` plus the top-level keys `name`, `seed` and `out_dir`.
//! Optional `[profile.<name>]` tables hold partial overrides that are
//! merged over the base when that profile is selected; the resolved config
//! (written next to every result) has no profile tables left.
//!
//! ```toml
//! name = "lq_fbm_default"
//! seed = 1
//!
//! [problem]
//! kind = "lq-fbm"
//! hurst = 0.3
//!
//! [policy]
//! kind = "nrde"
//! hidden = 200
//! lift_widths = [64, 64]
//! field_widths = [64, 64]
//!
//! [train]
//! batches = 300
//! train_steps = 40
//! eval_steps = 40
//!
//! [profile.smoke.train]
//! batches = 50
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policies::PolicySpec;
use crate::problems::ProblemConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Training grids as fractions of the evaluation grid.
    pub fractions: Vec<f64>,
    /// Models compared against `policy`.
    pub baselines: Vec<PolicySpec>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            fractions: vec![1.0, 0.5, 0.25, 0.125],
            baselines: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    /// Master seed; policy initialization, training and evaluation noise
    /// are all derived from it. Must fit in a signed 64-bit integer.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    pub problem: ProblemConfig,
    pub policy: PolicySpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub profile: BTreeMap<String, toml::Table>,
}

fn merge(base: &mut toml::Table, overlay: &toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

impl ExperimentConfig {
    /// Parse and resolve `profile` (if given and defined).
    pub fn from_toml(text: &str, profile: Option<&str>) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve(profile)
    }

    pub fn load(path: &Path, profile: Option<&str>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, profile).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Apply one profile's overrides and drop all profile tables.
    pub fn resolve(mut self, profile: Option<&str>) -> Result<Self> {
        let overlay = match profile {
            Some(p) => match self.profile.get(p) {
                Some(t) => Some(t.clone()),
                None if p == "full" => None,
                None => {
                    return Err(Error::Config(format!(
                        "profile `{p}` is not defined (available: {})",
                        self.profile.keys().cloned().collect::<Vec<_>>().join(", ")
                    )))
                }
            },
            None => None,
        };
        self.profile.clear();
        let cfg = match overlay {
            None => self,
            Some(o) => {
                let mut base = toml::Table::try_from(&self).map_err(|e| Error::Config(e.to_string()))?;
                merge(&mut base, &o);
                base.try_into::<ExperimentConfig>()
                    .map_err(|e| Error::Config(format!("profile `{}`: {e}", profile.unwrap_or_default())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config("`seed` must be below 2^63".into()));
        }
        self.train.validate()?;
        self.problem.build()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

pub const PRESETS: &[(&str, &str)] = &[
    ("lq_fbm_default", include_str!("../presets/lq_fbm_default.toml")),
    ("lq_fbm_markov", include_str!("../presets/lq_fbm_markov.toml")),
    ("lq_delay_default", include_str!("../presets/lq_delay_default.toml")),
    ("portfolio_default", include_str!("../presets/portfolio_default.toml")),
    ("portfolio_merton", include_str!("../presets/portfolio_merton.toml")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn preset(name: &str, profile: Option<&str>) -> Result<ExperimentConfig> {
    let text = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown preset `{name}` (known: {})",
                preset_names().join(", ")
            ))
        })?;
    ExperimentConfig::from_toml(text, profile).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("preset {name}: {m}")),
        other => other,
    })
}
