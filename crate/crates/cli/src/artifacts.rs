//! On-disk artifacts. JSON goes through `format::to_json_string`, so every
//! real carries 17 significant digits and reruns are byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ergogame::domain::Domain;
use ergogame::eigen::{EigenSolution, LadderResult, LevelReport, Normalization, SelectorPair, SolutionDomain};
use ergogame::format::{fmt_f64, to_json_string};
use ergogame::model::GameModel;
use ergogame::strategy::{Player, StationaryStrategy};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const RHO_LADDER: &str = "rho_ladder.csv";
pub const PSI: &str = "psi.json";
pub const SELECTORS: &str = "selectors.json";
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";
pub const RUN_META: &str = "run_meta.json";
pub const MODEL_CHECK: &str = "model_check.json";
pub const VERIFY_REPORT: &str = "verify_report.json";
pub const DEVIATIONS: &str = "deviations.csv";
pub const ESTIMATE: &str = "estimate.json";

pub type Labeled = BTreeMap<usize, BTreeMap<String, f64>>;

/// `psi.json`: the ladder-limit eigenpair plus the ladder diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiFile {
    pub rho: f64,
    pub normalization: Normalization,
    pub residual: f64,
    pub delta_used: f64,
    pub domain: SolutionDomain,
    /// Support only; zero elsewhere.
    pub psi: BTreeMap<usize, f64>,
    pub ladder_trace: Vec<(usize, f64)>,
    pub levels: Vec<LevelReport>,
    pub core_window: Domain,
    pub rho_gap: f64,
    pub psi_gap: f64,
    pub converged: bool,
}

impl PsiFile {
    pub fn from_ladder(r: &LadderResult) -> Self {
        let s = &r.solution;
        Self {
            rho: s.rho,
            normalization: s.normalization,
            residual: s.residual,
            delta_used: s.delta_used,
            domain: s.domain.clone(),
            psi: s.domain.support().states().iter().map(|&i| (i, s.psi[i])).collect(),
            ladder_trace: s.ladder_trace.clone(),
            levels: r.reports.clone(),
            core_window: r.core_window.clone(),
            rho_gap: r.rho_gap,
            psi_gap: r.psi_gap,
            converged: r.converged,
        }
    }

    /// Back to a full-length solution on `model`'s store.
    pub fn to_solution(&self, model: &GameModel) -> Result<EigenSolution, CliError> {
        let n = model.states();
        let mut psi = vec![0.0; n];
        for (&i, &v) in &self.psi {
            if i >= n {
                return Err(CliError::Input(format!(
                    "{PSI}: state {i} is outside the model's {n} states"
                )));
            }
            psi[i] = v;
        }
        if self.domain.support().max_state() >= n {
            return Err(CliError::Input(format!("{PSI}: domain exceeds the model's {n} states")));
        }
        Ok(EigenSolution {
            domain: self.domain.clone(),
            rho: self.rho,
            psi,
            normalization: self.normalization,
            residual: self.residual,
            delta_used: self.delta_used,
            ladder_trace: self.ladder_trace.clone(),
            iterations: 0,
        })
    }
}

/// `selectors.json`: per-state mixed actions keyed by action label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorsFile {
    pub pi1: Labeled,
    pub pi2: Labeled,
    /// Isaacs game value at every state.
    pub values: BTreeMap<usize, f64>,
    pub max_duality_gap: f64,
}

impl SelectorsFile {
    pub fn new(model: &GameModel, sel: &SelectorPair) -> Self {
        Self {
            pi1: sel.pi1.to_labeled(model, Player::One),
            pi2: sel.pi2.to_labeled(model, Player::Two),
            values: sel.values.clone(),
            max_duality_gap: sel.max_duality_gap,
        }
    }

    pub fn strategies(&self, model: &GameModel) -> Result<(StationaryStrategy, StationaryStrategy), CliError> {
        let bad = |e| CliError::Input(format!("{SELECTORS}: {e}"));
        Ok((
            StationaryStrategy::from_labeled(model, Player::One, &self.pi1).map_err(bad)?,
            StationaryStrategy::from_labeled(model, Player::Two, &self.pi2).map_err(bad)?,
        ))
    }
}

/// Timestamps live here and nowhere else.
#[derive(Debug, Clone, Serialize)]
pub struct RunMeta {
    pub command: String,
    pub version: &'static str,
    pub started_unix_ms: u128,
    pub wall_seconds: f64,
    pub threads: usize,
}

pub fn write_ladder_csv(path: &Path, reports: &[LevelReport]) -> Result<(), CliError> {
    let mut s = String::from("n,radius,rho_n,residual,theta_n,touch_state\n");
    for r in reports {
        let radius = r.radius.map(|x| x.to_string()).unwrap_or_default();
        s += &format!(
            "{},{},{},{},{},{}\n",
            r.n,
            radius,
            fmt_f64(r.rho),
            fmt_f64(r.residual),
            fmt_f64(r.theta),
            r.touch_state
        );
    }
    write_text(path, &s)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = to_json_string(value).map_err(|e| CliError::Input(format!("serializing {}: {e}", path.display())))?;
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut f = fs::File::create(path).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    f.write_all(text.as_bytes())
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("missing or unreadable artifact {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("malformed artifact {}: {e}", path.display())))
}

pub fn ensure_dir(dir: &Path) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir.to_path_buf())
}
