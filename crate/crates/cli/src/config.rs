//! Run configuration: built-in defaults, then a TOML file, then flags.

use std::path::{Path, PathBuf};

use ergogame::dirichlet::DirichletMethod;
use ergogame::model::BirthDeathParams;
use ergogame::simulate::{CostMode, ExitMode};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSource {
    /// Built-in model name; only `birth-death` exists.
    pub builtin: Option<String>,
    /// Model file (JSON); takes precedence over `builtin`.
    pub path: Option<PathBuf>,
    /// Parameters of the built-in model. Its store is always sized to the
    /// largest ladder level, so `cap` is overwritten from the radii.
    pub params: BirthDeathParams,
}

impl Default for ModelSource {
    fn default() -> Self {
        Self {
            builtin: Some("birth-death".into()),
            path: None,
            params: BirthDeathParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LadderConfig {
    pub radii: Vec<usize>,
    pub delta: f64,
    /// Convergence tolerance between the last two levels.
    pub tol_ladder: f64,
    pub method: DirichletMethod,
}

impl Default for LadderConfig {
    fn default() -> Self {
        Self {
            radii: vec![25, 50, 100, 200],
            delta: 1.0,
            tol_ladder: 1e-3,
            method: DirichletMethod::StrategyIteration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Sup-residual of the eigen-equation.
    pub eigen: f64,
    /// Fixed inner tolerance for the source problems (derived if absent).
    pub dirichlet: Option<f64>,
    /// Unilateral deviations.
    pub deviation: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            eigen: 1e-8,
            dirichlet: None,
            deviation: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub horizon: f64,
    pub paths: usize,
    pub seed: Option<u64>,
    /// Start state; the model's reference state if absent.
    pub start: Option<usize>,
    /// Extra horizons for the `1/T` extrapolation report.
    pub horizons: Vec<f64>,
    /// Number of trajectories dumped as CSV.
    pub dump: usize,
    pub cost_mode: CostMode,
    pub exit_mode: ExitMode,
    pub bootstrap: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            horizon: 50.0,
            paths: 100_000,
            seed: None,
            start: None,
            horizons: Vec::new(),
            dump: 0,
            cost_mode: CostMode::Expected,
            exit_mode: ExitMode::Kill,
            bootstrap: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub deviations: bool,
    /// Monte Carlo cross-check of the selector pair (needs a seed).
    pub mc: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            deviations: true,
            mc: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSource,
    pub ladder: LadderConfig,
    pub tolerances: Tolerances,
    pub simulation: SimulationConfig,
    pub verify: VerifyConfig,
    pub out: PathBuf,
    /// Worker threads; `--threads` wins, `ERGOGAME_THREADS` is the fallback.
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelSource::default(),
            ladder: LadderConfig::default(),
            tolerances: Tolerances::default(),
            simulation: SimulationConfig::default(),
            verify: VerifyConfig::default(),
            out: PathBuf::from("out"),
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))
    }

    pub fn check(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Input(m));
        if self.ladder.radii.is_empty() {
            return bad("ladder.radii is empty".into());
        }
        if self.ladder.radii.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("ladder.radii must be strictly increasing: {:?}", self.ladder.radii));
        }
        let positive = [
            ("ladder.delta", self.ladder.delta),
            ("ladder.tol_ladder", self.ladder.tol_ladder),
            ("tolerances.eigen", self.tolerances.eigen),
            ("tolerances.deviation", self.tolerances.deviation),
            ("simulation.horizon", self.simulation.horizon),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if let Some(d) = self.tolerances.dirichlet {
            if !(d > 0.0) {
                return bad(format!("tolerances.dirichlet must be positive, got {d}"));
            }
        }
        if self.simulation.horizons.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return bad("simulation.horizons must be positive".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        match (&self.model.path, self.model.builtin.as_deref()) {
            (Some(_), _) | (None, Some("birth-death")) => Ok(()),
            (None, Some(other)) => bad(format!("unknown builtin model {other:?}")),
            (None, None) => bad("no model: give --model or --builtin".into()),
        }
    }

    /// The built-in chain starts at state 0, so the largest level `[0, r]`
    /// covers the store exactly when `cap = r + 1`.
    pub fn size_builtin_store(&mut self) {
        if self.model.path.is_none() {
            if let Some(&r) = self.ladder.radii.last() {
                self.model.params.cap = r + 1;
            }
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        // toml integers are i64, so a seed above i64::MAX cannot be written
        toml::to_string(self).map_err(|e| CliError::Input(format!("cannot write the resolved config: {e}")))
    }
}
