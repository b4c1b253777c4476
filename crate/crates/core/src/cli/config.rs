use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::envs::TaskFamily;
use crate::error::{Error, Result};
use crate::maml::HyperConfig;
use crate::policy::{PolicyShape, ValueShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Reference hyperparameters: horizon 150, 20 tasks per iteration, 300
    /// iterations, all three families.
    #[default]
    Paper,
    /// Desk-scale run: horizon 50, 10 tasks per iteration, 100 iterations,
    /// point_reach and hinge.
    Fast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub hyper: HyperConfig,
    pub seed: u64,
    pub families: Vec<TaskFamily>,
    pub eval_every: usize,
    pub eval_tasks: usize,
    pub checkpoint_every: usize,
    pub out_dir: PathBuf,
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => RunConfig {
                hyper: HyperConfig::default(),
                seed: 0,
                families: TaskFamily::ALL.to_vec(),
                eval_every: 10,
                eval_tasks: 20,
                checkpoint_every: 50,
                out_dir: PathBuf::from("runs/paper"),
            },
            Preset::Fast => RunConfig {
                hyper: HyperConfig {
                    horizon: 50,
                    meta_batch_tasks: 10,
                    meta_iterations: 100,
                    ..HyperConfig::default()
                },
                seed: 0,
                families: vec![TaskFamily::PointReach, TaskFamily::Hinge],
                eval_every: 10,
                eval_tasks: 20,
                checkpoint_every: 25,
                out_dir: PathBuf::from("runs/fast"),
            },
        }
    }

    /// Resolves flag > file > preset default, then validates.
    pub fn resolve(preset: Preset, file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|source| Error::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
                let json: Value = serde_json::from_str(&text).map_err(|source| Error::Json {
                    path: path.to_path_buf(),
                    source,
                })?;
                Self::merge(Self::preset(preset), &json)?
            }
            None => Self::preset(preset),
        };
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &overrides.out_dir {
            cfg.out_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies the keys of a flat JSON object on top of `base`. Unknown keys
    /// and ill-typed values are reported against the offending key.
    pub fn merge(base: RunConfig, file: &Value) -> Result<Self> {
        let Value::Object(entries) = file else {
            return Err(Error::config("<root>", "config file must hold a JSON object"));
        };
        let Value::Object(mut merged) = serde_json::to_value(&base).expect("config serializes") else {
            unreachable!("RunConfig serializes to an object")
        };
        let known: HashSet<String> = merged.keys().cloned().collect();
        for (key, value) in entries {
            if !known.contains(key) {
                return Err(Error::config(key.as_str(), "unknown key"));
            }
            merged.insert(key.clone(), value.clone());
            Self::from_map(&merged).map_err(|e| Error::config(key.as_str(), e.to_string()))?;
        }
        Self::from_map(&merged).map_err(|e| Error::config("<root>", e.to_string()))
    }

    fn from_map(map: &Map<String, Value>) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_value(Value::Object(map.clone()))
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.families.is_empty() {
            return Err(Error::config("families", "needs at least one task family"));
        }
        let unique: HashSet<_> = self.families.iter().collect();
        if unique.len() != self.families.len() {
            return Err(Error::config("families", "lists a family more than once"));
        }
        for (field, v) in [
            ("eval_every", self.eval_every),
            ("eval_tasks", self.eval_tasks),
            ("checkpoint_every", self.checkpoint_every),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.out_dir.as_os_str().is_empty() {
            return Err(Error::config("out_dir", "must not be empty"));
        }
        Ok(())
    }

    /// Policy widths that cover every configured family.
    pub fn policy_shape(&self) -> PolicyShape {
        let obs = self.families.iter().map(|f| f.obs_dim()).max().unwrap_or(0);
        let act = self.families.iter().map(|f| f.act_dim()).max().unwrap_or(0);
        PolicyShape::with_hidden(obs, act, self.hyper.policy_hidden.clone())
    }

    pub fn value_shape(&self) -> ValueShape {
        ValueShape::with_hidden(self.policy_shape().obs_dim, self.hyper.value_hidden.clone())
    }
}
