//! JSON run configuration.
//!
//! A config has one of `system` or `scenario`, plus `redesign`, `run` and
//! `output`. Matrices use `{"rows": r, "cols": c, "data": [row-major]}`.
//! Unknown keys are rejected everywhere.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use retrofit_core::classify::SaddleSteps;
use retrofit_core::linalg::{serde_matrix, serde_vector};
use retrofit_core::redesign::{BetaSchedule, Method, RedesignSpec};
use retrofit_core::scenario::{CongestionScenario, PiScenario};
use retrofit_core::simulate::{DelayConfig, EventSchedule, DEFAULT_THRESHOLDS};
use retrofit_core::{LtiSystem, Matrix, Tolerances, Vector};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

/// Environment variable holding a JSON map of tolerance overrides.
pub const TOL_ENV: &str = "RETROFIT_TOL_OVERRIDES";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioSection>,
    #[serde(default, with = "one_or_many")]
    pub redesign: Vec<RedesignSpec>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// A raw LTI system `x+ = A x + C w` (or `A x + offset`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    #[serde(with = "serde_matrix")]
    pub a: Matrix,
    #[serde(default, with = "serde_matrix::option", skip_serializing_if = "Option::is_none")]
    pub c: Option<Matrix>,
    #[serde(default, with = "serde_vector::option", skip_serializing_if = "Option::is_none")]
    pub w: Option<Vector>,
    #[serde(default, with = "serde_vector::option", skip_serializing_if = "Option::is_none")]
    pub offset: Option<Vector>,
    /// Size of the leading dual block for primal-dual systems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<usize>,
    /// Step sizes assumed when reading off a saddle problem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<SaddleSteps>,
}

impl SystemSection {
    pub fn build(&self) -> Result<LtiSystem> {
        let n = self.a.nrows();
        let sys = match (&self.c, &self.w, &self.offset) {
            (None, None, None) => LtiSystem::with_offset(self.a.clone(), Vector::zeros(n)),
            (None, None, Some(o)) => LtiSystem::with_offset(self.a.clone(), o.clone()),
            (Some(c), Some(w), None) => LtiSystem::new(self.a.clone(), c.clone(), w.clone()),
            (None, Some(w), None) => LtiSystem::with_offset(self.a.clone(), w.clone()),
            _ => {
                return Err(AppError::Config(String::from(
                    "system: give either `offset`, or `c` together with `w`",
                )))
            }
        };
        sys.map_err(AppError::stage("system"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioSection {
    Congestion(CongestionScenario),
    Pi(PiScenario),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Initial state; scenarios carry their own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay: Option<DelayConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<EventSchedule>,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    /// Fail (exit 4) when an asserted certificate check fails.
    #[serde(default)]
    pub certify: bool,
}

fn default_steps() -> usize {
    1000
}

fn default_thresholds() -> Vec<f64> {
    DEFAULT_THRESHOLDS.to_vec()
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            steps: default_steps(),
            x0: None,
            delay: None,
            events: None,
            thresholds: default_thresholds(),
            certify: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub plot: bool,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_dir(),
            plot: false,
        }
    }
}

/// Command-line overrides applied on top of a parsed config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub method: Option<Method>,
    pub beta: Option<f64>,
    pub alpha: Option<f64>,
    pub retune_step: Option<bool>,
    pub beta_schedule: Option<BetaSchedule>,
    pub steps: Option<usize>,
    pub out: Option<PathBuf>,
    pub plot: bool,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| AppError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            AppError::Config(m) => AppError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.system, &self.scenario) {
            (Some(_), Some(_)) => {
                return Err(AppError::Config(String::from(
                    "give either `system` or `scenario`, not both",
                )))
            }
            (None, None) => return Err(AppError::Config(String::from("missing `system` or `scenario`"))),
            _ => {}
        }
        if self.run.steps == 0 {
            return Err(AppError::Config(String::from("run.steps: must be positive")));
        }
        if self.run.thresholds.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(AppError::Config(String::from("run.thresholds: must be positive")));
        }
        if let Some(x0) = &self.run.x0 {
            if x0.iter().any(|v| !v.is_finite()) {
                return Err(AppError::Config(String::from("run.x0: entries must be finite")));
            }
        }
        for spec in &self.redesign {
            spec.validate().map_err(|e| AppError::Config(e.to_string()))?;
        }
        if let Some(ScenarioSection::Congestion(_)) = &self.scenario {
            if self.run.events.is_some() {
                return Err(AppError::Config(String::from(
                    "run.events: congestion scenarios carry their own `schedule`",
                )));
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(m) = o.method {
            self.redesign = vec![RedesignSpec::new(m)];
        }
        for spec in &mut self.redesign {
            if let Some(b) = o.beta {
                spec.beta = Some(b);
            }
            if let Some(a) = o.alpha {
                spec.alpha = a;
            }
            if let Some(r) = o.retune_step {
                spec.retune_step = r;
            }
            if let Some(s) = o.beta_schedule {
                spec.beta_schedule = s;
            }
        }
        if let Some(s) = o.steps {
            self.run.steps = s;
        }
        if let Some(d) = &o.out {
            self.output.dir = d.clone();
        }
        self.output.plot |= o.plot;
        self.validate()
    }
}

/// Default tolerances with overrides from [`TOL_ENV`] applied.
pub fn tolerances_from_env() -> Result<Tolerances> {
    match std::env::var(TOL_ENV) {
        Ok(text) => tolerances_with_overrides(&text),
        Err(std::env::VarError::NotPresent) => Ok(Tolerances::default()),
        Err(e) => Err(AppError::Config(format!("{TOL_ENV}: {e}"))),
    }
}

pub fn tolerances_with_overrides(json: &str) -> Result<Tolerances> {
    let map: BTreeMap<String, f64> =
        serde_json::from_str(json).map_err(|e| AppError::Config(format!("{TOL_ENV}: {e}")))?;
    let mut tol = Tolerances::default();
    for (name, value) in map {
        if !(value > 0.0 && value.is_finite()) {
            return Err(AppError::Config(format!("{TOL_ENV}: `{name}` must be positive")));
        }
        if !tol.set(&name, value) {
            return Err(AppError::Config(format!("{TOL_ENV}: unknown tolerance `{name}`")));
        }
    }
    Ok(tol)
}

mod one_or_many {
    use retrofit_core::redesign::RedesignSpec;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(RedesignSpec),
        Many(Vec<RedesignSpec>),
    }

    pub fn serialize<S: Serializer>(v: &[RedesignSpec], s: S) -> Result<S::Ok, S::Error> {
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<RedesignSpec>, D::Error> {
        Ok(match OneOrMany::deserialize(d)? {
            OneOrMany::One(s) => vec![s],
            OneOrMany::Many(v) => v,
        })
    }
}
