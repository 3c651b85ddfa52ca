//! Experiment configuration: a single TOML document drives every
//! subcommand. Unknown keys are rejected, every seed is explicit, and the
//! canonical JSON serialization of the config is hashed into the report.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conjugacy::VerifySpec;
use crate::error::{Error, Result};
use crate::families::{build_linear, build_nonlinearity};
use crate::hypotheses::SamplingSpec;
use crate::norms::NormFamily;
use crate::omega::{MdsKind, ShiftMds};
use crate::rds::RdsOptions;
use crate::system::{SemilinearSystem, SolverSettings};
use crate::window::TimeWindow;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    /// registered linear family name
    pub family: String,
    pub dim: usize,
    #[serde(default = "empty_table")]
    pub params: toml::Value,
    /// registered nonlinearity family name; omit for a linear system
    #[serde(default)]
    pub nonlinearity: Option<String>,
    #[serde(default = "empty_table")]
    pub nonlinearity_params: toml::Value,
    /// highest derivative order the nonlinearity is declared to have
    #[serde(default)]
    pub smoothness: usize,
}

fn empty_table() -> toml::Value {
    toml::Value::Table(toml::map::Map::new())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub t_min: i64,
    pub t_max: i64,
    #[serde(default)]
    pub tau0: Option<i64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", tag = "kind")]
pub enum NormSpec {
    Euclidean,
    Diagonal { entries: Vec<f64> },
}

impl Default for NormSpec {
    fn default() -> Self {
        NormSpec::Euclidean
    }
}

// no deny_unknown_fields here: serde cannot combine it with #[serde(flatten)]
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MdsSpec {
    #[serde(flatten)]
    pub kind: MdsKind,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModeFlags {
    pub smooth: bool,
    pub local: bool,
    pub rds: bool,
}

impl Default for ModeFlags {
    fn default() -> Self {
        ModeFlags {
            smooth: false,
            local: false,
            rds: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RdsSpec {
    pub spectrum_steps: usize,
    pub spectrum_samples: usize,
    pub verify_fibers: usize,
    pub tail_cap: f64,
    pub horizon_cap: usize,
}

impl Default for RdsSpec {
    fn default() -> Self {
        let o = RdsOptions::default();
        RdsSpec {
            spectrum_steps: o.spectrum_steps,
            spectrum_samples: o.spectrum_samples,
            verify_fibers: o.verify_fibers,
            tail_cap: o.tail_cap,
            horizon_cap: o.horizon_cap,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalSpec {
    pub target_l: f64,
    /// number of sampled fibers the cutoff radius is searched on
    pub omega_samples: u64,
}

impl Default for LocalSpec {
    fn default() -> Self {
        LocalSpec {
            target_l: 0.1,
            omega_samples: 4,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceSpec {
    pub solver_tol: f64,
    pub max_iter: usize,
}

impl Default for ToleranceSpec {
    fn default() -> Self {
        let s = SolverSettings::default();
        ToleranceSpec {
            solver_tol: s.tol,
            max_iter: s.max_iter,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: PathBuf::from("out"),
            cache_dir: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    pub window: WindowSpec,
    #[serde(default)]
    pub norm: NormSpec,
    #[serde(default)]
    pub mds: Option<MdsSpec>,
    #[serde(default)]
    pub sampling: SamplingSpec,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default)]
    pub modes: ModeFlags,
    #[serde(default)]
    pub rds: RdsSpec,
    #[serde(default)]
    pub local: LocalSpec,
    #[serde(default)]
    pub tolerances: ToleranceSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

impl ExperimentConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.system.dim == 0 {
            return Err(Error::InvalidConfig("system.dim must be positive".into()));
        }
        if self.window.t_min >= self.window.t_max {
            return Err(Error::InvalidConfig(format!(
                "window t_min = {} must be below t_max = {}",
                self.window.t_min, self.window.t_max
            )));
        }
        if self.tolerances.solver_tol <= 0.0 {
            return Err(Error::InvalidConfig("solver_tol must be positive".into()));
        }
        if let NormSpec::Diagonal { entries } = &self.norm {
            if entries.len() != self.system.dim {
                return Err(Error::InvalidConfig(format!(
                    "norm has {} entries for dimension {}",
                    entries.len(),
                    self.system.dim
                )));
            }
        }
        if (self.modes.rds || self.modes.local) && self.mds.is_none() {
            return Err(Error::InvalidConfig(
                "rds/local modes need an [mds] section".into(),
            ));
        }
        Ok(())
    }

    pub fn window(&self) -> Result<TimeWindow> {
        match self.window.tau0 {
            Some(tau0) => TimeWindow::with_tau0(self.window.t_min, self.window.t_max, tau0),
            None => TimeWindow::new(self.window.t_min, self.window.t_max),
        }
    }

    pub fn norms(&self) -> NormFamily {
        match &self.norm {
            NormSpec::Euclidean => NormFamily::euclidean(self.system.dim),
            NormSpec::Diagonal { entries } => NormFamily::diagonal(entries.clone()),
        }
    }

    pub fn build_mds(&self) -> Result<Option<ShiftMds>> {
        match &self.mds {
            Some(spec) => Ok(Some(ShiftMds::new(spec.kind.clone(), spec.seed)?)),
            None => Ok(None),
        }
    }

    pub fn build_system(&self) -> Result<SemilinearSystem> {
        let params = toml_to_json(&self.system.params);
        let linear = build_linear(&self.system.family, self.system.dim, &params)?;
        let nonlinear = match &self.system.nonlinearity {
            Some(name) => {
                let p = toml_to_json(&self.system.nonlinearity_params);
                let mut nl = build_nonlinearity(name, self.system.dim, &p)?;
                if self.system.smoothness > 0 {
                    nl = nl.with_smoothness(self.system.smoothness);
                }
                nl
            }
            None => crate::system::Nonlinearity::zero(self.system.dim),
        };
        let mut sys = SemilinearSystem::new(linear, nonlinear, self.norms(), self.window()?)?;
        sys.solver = SolverSettings {
            tol: self.tolerances.solver_tol,
            max_iter: self.tolerances.max_iter,
        };
        Ok(sys)
    }

    pub fn rds_options(&self) -> RdsOptions {
        RdsOptions {
            spectrum_steps: self.rds.spectrum_steps,
            spectrum_samples: self.rds.spectrum_samples,
            verify_fibers: self.rds.verify_fibers,
            tail_cap: self.rds.tail_cap,
            horizon_cap: self.rds.horizon_cap,
            verify: self.verify.clone(),
            sampling: self.sampling.clone(),
            smooth: self.modes.smooth,
        }
    }

    /// Hash of the canonical JSON form; identifies the run in reports and
    /// cache keys.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(canon.as_bytes());
        format!("{:x}", h.finalize())
    }
}

fn toml_to_json(v: &toml::Value) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}
