//! The game model: a countable state space cut at an explicit cap, finite
//! action sets per state for both players, sparse transition-rate rows and a
//! nonnegative cost rate.
//!
//! Player 1 (rows of every matrix game) maximizes; player 2 minimizes. The
//! cost `c(i,a,b)` is paid by player 2 to player 1.

mod birth_death;
mod drift;
mod file;
mod validate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use birth_death::{build_birth_death, BirthDeathParams};
pub use drift::{check_drift, DriftReport, StateDrift};
pub use file::{load_model, model_from_json, model_to_json, save_model, ModelFile};
pub use validate::{validate_model, ValidationReport, Violation};

/// Row-sum tolerance for conservativeness, relative to the row's magnitude.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed model: {0}")]
    Shape(String),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("row (i={i}, a={a}, b={b}) is not conservative: sum of rates = {sum:e}")]
    NotConservative { i: usize, a: usize, b: usize, sum: f64 },
    #[error("parameter constraint violated: {0}")]
    Parameter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One transition-rate row `q(.|i,a,b)`: the diagonal and the sorted
/// off-diagonal entries. Targets `j >= states` are allowed only for
/// conceptually infinite models and mean "leaves the stored truncation".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub diag: f64,
    pub off: Vec<(usize, f64)>,
}

impl RateRow {
    /// Builds a row whose diagonal balances the off-diagonal mass.
    pub fn balanced(mut off: Vec<(usize, f64)>) -> Self {
        off.sort_by_key(|&(j, _)| j);
        let diag = -off.iter().map(|&(_, q)| q).sum::<f64>();
        Self { diag, off }
    }

    /// Total exit rate `q(i,a,b) = -q(i|i,a,b)`.
    pub fn exit_rate(&self) -> f64 {
        -self.diag
    }

    pub fn row_sum(&self) -> f64 {
        self.diag + self.off.iter().map(|&(_, q)| q).sum::<f64>()
    }

    pub fn magnitude(&self) -> f64 {
        self.diag.abs().max(self.off.iter().map(|&(_, q)| q.abs()).sum::<f64>())
    }
}

/// Countable-state, finite-action two-player continuous-time game.
#[derive(Debug, Clone, PartialEq)]
pub struct GameModel {
    pub name: String,
    pub reference_state: usize,
    pub conceptually_infinite: bool,
    actions_a: Vec<Vec<String>>,
    actions_b: Vec<Vec<String>>,
    // rows[i][a * |B(i)| + b]
    rows: Vec<Vec<RateRow>>,
    cost: Vec<Vec<f64>>,
}

impl GameModel {
    /// Assembles a model after checking that all per-state tables agree in
    /// shape. Invariants on the numbers themselves are `validate_model`'s job.
    pub fn new(
        name: impl Into<String>,
        reference_state: usize,
        conceptually_infinite: bool,
        actions_a: Vec<Vec<String>>,
        actions_b: Vec<Vec<String>>,
        rows: Vec<Vec<RateRow>>,
        cost: Vec<Vec<f64>>,
    ) -> Result<Self, ModelError> {
        let states = actions_a.len();
        if states == 0 {
            return Err(ModelError::Shape("model has no states".into()));
        }
        if actions_b.len() != states || rows.len() != states || cost.len() != states {
            return Err(ModelError::Shape(format!(
                "per-state tables disagree: actions_a {}, actions_b {}, rates {}, cost {}",
                states,
                actions_b.len(),
                rows.len(),
                cost.len()
            )));
        }
        if reference_state >= states {
            return Err(ModelError::Shape(format!(
                "reference state {reference_state} outside 0..{states}"
            )));
        }
        for i in 0..states {
            let pairs = actions_a[i].len() * actions_b[i].len();
            if rows[i].len() != pairs || cost[i].len() != pairs {
                return Err(ModelError::Shape(format!(
                    "state {i}: expected {pairs} action pairs, got {} rate rows and {} costs",
                    rows[i].len(),
                    cost[i].len()
                )));
            }
            for row in &rows[i] {
                for &(j, _) in &row.off {
                    if j == i {
                        return Err(ModelError::Shape(format!(
                            "state {i}: diagonal listed among off-diagonal entries"
                        )));
                    }
                    if j >= states && !conceptually_infinite {
                        return Err(ModelError::Shape(format!(
                            "state {i}: target {j} outside a finite model of {states} states"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            name: name.into(),
            reference_state,
            conceptually_infinite,
            actions_a,
            actions_b,
            rows,
            cost,
        })
    }

    pub fn states(&self) -> usize {
        self.actions_a.len()
    }

    pub fn n_a(&self, i: usize) -> usize {
        self.actions_a[i].len()
    }

    pub fn n_b(&self, i: usize) -> usize {
        self.actions_b[i].len()
    }

    pub fn actions_a(&self, i: usize) -> &[String] {
        &self.actions_a[i]
    }

    pub fn actions_b(&self, i: usize) -> &[String] {
        &self.actions_b[i]
    }

    #[inline]
    pub fn row(&self, i: usize, a: usize, b: usize) -> &RateRow {
        &self.rows[i][a * self.actions_b[i].len() + b]
    }

    #[inline]
    pub fn cost(&self, i: usize, a: usize, b: usize) -> f64 {
        self.cost[i][a * self.actions_b[i].len() + b]
    }

    /// `q*(i) = max_{a,b} q(i,a,b)`.
    pub fn q_star(&self, i: usize) -> f64 {
        self.rows[i]
            .iter()
            .map(RateRow::exit_rate)
            .fold(0.0, f64::max)
    }

    pub fn max_cost(&self, i: usize) -> f64 {
        self.cost[i].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Returns the same model with every cost replaced by `f(i, a, b, c)`.
    pub fn map_cost(&self, f: impl Fn(usize, usize, usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.states() {
            let nb = self.n_b(i);
            for (k, c) in out.cost[i].iter_mut().enumerate() {
                *c = f(i, k / nb, k % nb, *c);
            }
        }
        out
    }

    /// Rate row and cost under mixed actions `mu` over `A(i)` and `nu` over `B(i)`.
    /// The returned off-diagonal entries are sorted and merged by target.
    pub fn mixed(&self, i: usize, mu: &[f64], nu: &[f64]) -> (RateRow, f64) {
        let nb = self.n_b(i);
        let mut diag = 0.0;
        let mut cost = 0.0;
        let mut off: Vec<(usize, f64)> = Vec::new();
        for (a, &pa) in mu.iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for (b, &pb) in nu.iter().enumerate() {
                let w = pa * pb;
                if w == 0.0 {
                    continue;
                }
                let row = &self.rows[i][a * nb + b];
                diag += w * row.diag;
                cost += w * self.cost[i][a * nb + b];
                off.extend(row.off.iter().map(|&(j, q)| (j, w * q)));
            }
        }
        off.sort_by_key(|&(j, _)| j);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(off.len());
        for (j, q) in off {
            match merged.last_mut() {
                Some((lj, lq)) if *lj == j => *lq += q,
                _ => merged.push((j, q)),
            }
        }
        (RateRow { diag, off: merged }, cost)
    }
}

/// Which drift inequality the Lyapunov data certifies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    /// Bounded cost: rate `gamma_hat > max c`.
    Bounded { gamma_hat: f64 },
    /// Unbounded cost: per-state norm-like rate `lhat(i)`.
    Unbounded { lhat: Vec<f64> },
}

/// Lyapunov functions and constants for the stability and non-explosion
/// conditions. `v` and `v_tilde` are indexed by stored state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovData {
    pub v: Vec<f64>,
    pub mode: DriftMode,
    pub c: f64,
    pub k_hat: Vec<usize>,
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub v_tilde: Vec<f64>,
}

impl LyapunovData {
    /// Drift rate at `i`: `lhat(i)` or `gamma_hat`.
    pub fn rate(&self, i: usize) -> f64 {
        match &self.mode {
            DriftMode::Bounded { gamma_hat } => *gamma_hat,
            DriftMode::Unbounded { lhat } => lhat[i],
        }
    }

    pub fn in_k_hat(&self, i: usize) -> bool {
        self.k_hat.contains(&i)
    }

    /// Structural invariants: `V, Ṽ >= 1`, lengths, and `gamma_hat > max c`
    /// in bounded mode. Returns the list of failures.
    pub fn check(&self, model: &GameModel) -> Vec<String> {
        let mut out = Vec::new();
        let n = model.states();
        if self.v.len() != n || self.v_tilde.len() != n {
            out.push(format!(
                "V has {} and V_tilde {} entries for {n} states",
                self.v.len(),
                self.v_tilde.len()
            ));
        }
        if let Some(i) = self.v.iter().position(|&x| !(x >= 1.0)) {
            out.push(format!("V({i}) < 1"));
        }
        if let Some(i) = self.v_tilde.iter().position(|&x| !(x >= 1.0)) {
            out.push(format!("V_tilde({i}) < 1"));
        }
        if !(self.c > 0.0) {
            out.push(format!("C = {} is not positive", self.c));
        }
        match &self.mode {
            DriftMode::Bounded { gamma_hat } => {
                let cmax = (0..n).map(|i| model.max_cost(i)).fold(f64::NEG_INFINITY, f64::max);
                if !(*gamma_hat > cmax) {
                    out.push(format!("gamma_hat = {gamma_hat} does not exceed max cost {cmax}"));
                }
            }
            DriftMode::Unbounded { lhat } => {
                if lhat.len() != n {
                    out.push(format!("lhat has {} entries for {n} states", lhat.len()));
                }
            }
        }
        out
    }
}
