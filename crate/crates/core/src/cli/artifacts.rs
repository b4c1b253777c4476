use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::envs::TaskFamily;
use crate::error::{Error, Result};
use crate::policy::{NetShape, ParamVector, PolicyParams, PolicyShape, ValueParams};

/// Artifact format version written into manifests and checkpoints.
pub const ARTIFACT_VERSION: &str = concat!("maml-trpo/", env!("CARGO_PKG_VERSION"));

/// Scientific notation with 17 significant digits, which round-trips any
/// `f64` exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Line-oriented CSV output. Every row is flushed as soon as it is written
/// so an aborted run leaves a readable prefix.
pub struct CsvWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut w = CsvWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        w.write_fields(header.iter().map(|s| s.to_string()))?;
        Ok(w)
    }

    pub fn write_fields(&mut self, fields: impl IntoIterator<Item = String>) -> Result<()> {
        let line = fields.into_iter().collect::<Vec<_>>().join(",");
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(io_err(&self.path))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: String,
    /// Completed meta-iterations.
    pub iteration: usize,
    pub families: Vec<TaskFamily>,
    pub policy: PolicyParams,
    pub value: ValueParams,
}

fn params_json<S: NetShape + Serialize>(out: &mut String, p: &ParamVector<S>) {
    let shape = serde_json::to_string(&p.shape).expect("shape serializes");
    let _ = write!(out, "{{\"shape\":{shape},\"values\":[");
    for (i, v) in p.values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&fmt_f64(*v));
    }
    out.push_str("]}");
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let mut s = String::new();
        let families = serde_json::to_string(&self.families).expect("families serialize");
        let _ = write!(
            s,
            "{{\"version\":{},\"iteration\":{},\"families\":{families},\"policy\":",
            serde_json::to_string(&self.version).expect("string"),
            self.iteration
        );
        params_json(&mut s, &self.policy);
        s.push_str(",\"value\":");
        params_json(&mut s, &self.value);
        s.push_str("}\n");
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let shape_err = |what: &str, expected: usize, found: usize| Error::ShapeMismatch {
            expected: format!("{expected} {what} values"),
            found: format!("{found}"),
        };
        if ck.policy.values.len() != ck.policy.shape.param_count() {
            return Err(shape_err("policy", ck.policy.shape.param_count(), ck.policy.values.len()));
        }
        if ck.value.values.len() != ck.value.shape.param_count() {
            return Err(shape_err("value", ck.value.shape.param_count(), ck.value.values.len()));
        }
        Ok(ck)
    }

    /// Checks the policy is wide enough for every family in `families` and
    /// the value net reads the same observations.
    pub fn check_families(&self, families: &[TaskFamily]) -> Result<()> {
        let need_obs = families.iter().map(|f| f.obs_dim()).max().unwrap_or(0);
        let need_act = families.iter().map(|f| f.act_dim()).max().unwrap_or(0);
        let PolicyShape { obs_dim, act_dim, .. } = self.policy.shape;
        if obs_dim < need_obs || act_dim < need_act {
            return Err(Error::ShapeMismatch {
                expected: format!("policy obs_dim >= {need_obs} and act_dim >= {need_act}"),
                found: format!("obs_dim {obs_dim}, act_dim {act_dim}"),
            });
        }
        if self.value.shape.obs_dim != obs_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("value obs_dim {obs_dim}"),
                found: format!("value obs_dim {}", self.value.shape.obs_dim),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub iterations_completed: usize,
    pub accepted_steps: usize,
    pub final_loss_pre: Option<f64>,
    pub final_loss_post: Option<f64>,
    pub final_success_train: Option<f64>,
    pub final_eval_success_train: Option<f64>,
    pub final_eval_success_test: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub status: RunStatus,
    pub error: Option<String>,
    pub version: String,
    pub config: RunConfig,
    /// Unix seconds.
    pub started: u64,
    pub finished: Option<u64>,
    pub summary: RunSummary,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(io_err(path))
    }
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
