//! Principal eigenpairs of the Isaacs operator
//!
//! ```text
//! rho psi(i) = sup_mu inf_nu [ sum_j psi(j) q(j|i,mu,nu) + c(i,mu,nu) psi(i) ]
//! ```
//!
//! on Dirichlet truncations (nonlinear power iteration on the solution map
//! of the shifted source problem), their Lyapunov-scaled ladder limit, and
//! the mini-max selectors read off the eigenfunction.

mod ladder;
mod selectors;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dirichlet::{dirichlet_solve_from, DirichletError, DirichletMethod, DirichletOptions, DirichletProblem};
use crate::domain::{Domain, DomainError};
use crate::matrix_game::{game_value, GameMatrix, MatrixGameError};
use crate::model::{DriftMode, GameModel, LyapunovData};

pub use ladder::{ladder_limit, LadderOptions, LadderResult, LevelReport};
pub use selectors::{extract_selectors, SelectorPair};

#[derive(Debug, Error)]
pub enum EigenError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Dirichlet(#[from] DirichletError),
    #[error(transparent)]
    Game(#[from] MatrixGameError),
    #[error("reference state {0} is not in the domain")]
    ReferenceNotInDomain(usize),
    /// `trace` holds the residuals of the last (at most) 64 iterations.
    #[error("power iteration stagnated after {iterations} iterations at residual {residual:e}")]
    Stagnation { iterations: usize, residual: f64, trace: Vec<f64> },
    #[error("iterate vanished at the reference state (iteration {0}); check reachability from the reference state")]
    VanishingReference(usize),
    #[error("eigenfunction is identically zero on the domain")]
    ZeroPsi,
    #[error("eigenfunction is not positive at state {state}: {value}")]
    NotPositive { state: usize, value: f64 },
    #[error("ladder exhausted without convergence: |drho| = {:e}, psi gap = {:e}", .0.rho_gap, .0.psi_gap)]
    LadderNotConverged(Box<LadderResult>),
    #[error("state {state}: game value {value} differs from rho*psi = {expected}")]
    SelectorResidual { state: usize, value: f64, expected: f64 },
    #[error("ladder needs at least one level")]
    EmptyLadder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    #[serde(rename = "psi(i0)=1")]
    ReferenceOne,
    #[serde(rename = "touches V")]
    TouchesV,
}

/// Where an eigenpair lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SolutionDomain {
    /// Zero outside the listed states.
    Dirichlet { states: Domain },
    /// Ladder limit; `psi` is defined on the largest level and the residual
    /// is measured on `residual_states` only.
    WholeSpace { largest: Domain, residual_states: Domain },
}

impl SolutionDomain {
    /// States carrying `psi`.
    pub fn support(&self) -> &Domain {
        match self {
            SolutionDomain::Dirichlet { states } => states,
            SolutionDomain::WholeSpace { largest, .. } => largest,
        }
    }

    /// States on which the residual is certified.
    pub fn checked(&self) -> &Domain {
        match self {
            SolutionDomain::Dirichlet { states } => states,
            SolutionDomain::WholeSpace { residual_states, .. } => residual_states,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSolution {
    pub domain: SolutionDomain,
    pub rho: f64,
    /// Indexed by stored state; zero off the support.
    pub psi: Vec<f64>,
    pub normalization: Normalization,
    /// `sup_i |H(psi)(i) - rho psi(i)|` over the checked states.
    pub residual: f64,
    pub delta_used: f64,
    /// `(level, rho_n)` for ladder solutions.
    pub ladder_trace: Vec<(usize, f64)>,
    /// Power-iteration steps (Dirichlet solutions).
    pub iterations: usize,
}

const TRACE_KEEP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    pub delta: f64,
    /// Target sup-residual of the eigen-equation.
    pub tol: f64,
    pub max_iter: usize,
    /// Stagnation: no 1% improvement of the best residual within this many steps.
    pub stall_window: usize,
    pub method: DirichletMethod,
    /// Fixed tolerance for the inner source problems; by default it is
    /// derived from `tol` at every step.
    pub inner_tol: Option<f64>,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            delta: 1.0,
            tol: 1e-8,
            max_iter: 20_000,
            stall_window: 500,
            method: DirichletMethod::StrategyIteration,
            inner_tol: None,
        }
    }
}

/// The Isaacs matrix game at state `i` for a function `psi` on the stored
/// states (targets off the store count as zero).
pub fn isaacs_game(model: &GameModel, psi: &[f64], i: usize) -> Result<GameMatrix, MatrixGameError> {
    let (na, nb) = (model.n_a(i), model.n_b(i));
    let mut data = Vec::with_capacity(na * nb);
    for a in 0..na {
        for b in 0..nb {
            let row = model.row(i, a, b);
            let mut s = (row.diag + model.cost(i, a, b)) * psi[i];
            for &(j, q) in &row.off {
                if let Some(&p) = psi.get(j) {
                    s += p * q;
                }
            }
            data.push(s);
        }
    }
    GameMatrix::new(na, nb, data)
}

/// Per-state residual `val[...](i) - rho psi(i)` over `states`.
pub fn hji_residual(model: &GameModel, psi: &[f64], rho: f64, states: &[usize]) -> Result<Vec<f64>, MatrixGameError> {
    states
        .par_iter()
        .map(|&i| Ok(game_value(&isaacs_game(model, psi, i)?)? - rho * psi[i]))
        .collect()
}

fn sup_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Principal eigenpair on the Dirichlet truncation `domain`, normalized by
/// `psi(i0) = 1`. `init`, if given, is a nonnegative guess indexed by stored
/// state.
///
/// With `c~ = c - sup_D c - delta`, power iteration runs on the solution map
/// `g -> phi` of the source problem; if `phi = lambda psi` then
/// `rho = sup_D c + delta - 1/lambda`.
pub fn dirichlet_eigenpair(
    model: &GameModel,
    domain: &Domain,
    opts: &EigenOptions,
    init: Option<&[f64]>,
) -> Result<EigenSolution, EigenError> {
    let i0 = model.reference_state;
    let k0 = domain.index_of(i0).ok_or(EigenError::ReferenceNotInDomain(i0))?;
    let mut problem = DirichletProblem::new(model, domain, opts.delta)?;
    let shift = problem.shift();
    let states = domain.states();

    let mut g: Vec<f64> = match init {
        Some(v) => states.iter().map(|&i| v.get(i).copied().unwrap_or(0.0).max(0.0)).collect(),
        None => vec![1.0; states.len()],
    };
    if !(g[k0] > 0.0) {
        g = vec![1.0; states.len()];
    }
    let g0 = g[k0];
    g.iter_mut().for_each(|x| *x /= g0);

    // rho >= val q(i0|i0,.,.) >= -q*(i0), so lambda >= 1/(shift + q*(i0))
    let mut lambda = 1.0 / (shift + model.q_star(i0));
    let mut psi_full = vec![0.0; model.states()];
    let mut trace = Vec::new();
    let mut best = f64::INFINITY;
    let mut best_at = 0;
    for it in 1..=opts.max_iter {
        problem.set_source(g.clone())?;
        // |R| <= tol_d * min(-c~) <= tol_d * shift keeps the induced eigen
        // residual (|R| / lambda) two decades under tol
        let dopts = DirichletOptions {
            method: opts.method,
            tol: opts.inner_tol.unwrap_or(1e-2 * opts.tol * lambda / shift),
            max_iter: 10_000,
        };
        let warm: Vec<f64> = g.iter().map(|x| lambda * x).collect();
        let sol = dirichlet_solve_from(&problem, warm, &dopts)?;
        let phi = sol.phi;
        lambda = phi[k0];
        if !(lambda > 0.0) {
            return Err(EigenError::VanishingReference(it));
        }
        for (k, &i) in states.iter().enumerate() {
            psi_full[i] = phi[k] / lambda;
        }
        psi_full[i0] = 1.0;
        let rho = shift - 1.0 / lambda;
        let residual = sup_abs(&hji_residual(model, &psi_full, rho, states)?);
        if trace.len() == TRACE_KEEP {
            trace.remove(0);
        }
        trace.push(residual);
        if residual <= opts.tol {
            return Ok(EigenSolution {
                domain: SolutionDomain::Dirichlet { states: domain.clone() },
                rho,
                psi: psi_full,
                normalization: Normalization::ReferenceOne,
                residual,
                delta_used: opts.delta,
                ladder_trace: Vec::new(),
                iterations: it,
            });
        }
        if residual < 0.99 * best {
            best = residual;
            best_at = it;
        } else if it - best_at >= opts.stall_window {
            return Err(EigenError::Stagnation {
                iterations: it,
                residual,
                trace,
            });
        }
        g = states.iter().map(|&i| psi_full[i]).collect();
    }
    Err(EigenError::Stagnation {
        iterations: opts.max_iter,
        residual: trace.last().copied().unwrap_or(f64::NAN),
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub rho: f64,
    /// `sup_mu inf_nu q(i0|i0,mu,nu)`.
    pub lower: f64,
    /// `C + k1` in unbounded-cost mode.
    pub upper: Option<f64>,
    /// `max_i (max_ab c(i,a,b) - lhat(i))`, clamped below at zero.
    pub k1: Option<f64>,
    pub lower_ok: bool,
    pub upper_ok: bool,
    pub passed: bool,
}

/// Checks `rho >= sup_mu inf_nu q(i0|i0,mu,nu)` and, with unbounded-cost
/// Lyapunov data, `rho <= C + k1`.
pub fn eigen_bounds_check(
    solution: &EigenSolution,
    model: &GameModel,
    lyap: Option<&LyapunovData>,
) -> Result<BoundsReport, EigenError> {
    let i0 = model.reference_state;
    let (na, nb) = (model.n_a(i0), model.n_b(i0));
    let data = (0..na)
        .flat_map(|a| (0..nb).map(move |b| (a, b)))
        .map(|(a, b)| model.row(i0, a, b).diag)
        .collect();
    let lower = game_value(&GameMatrix::new(na, nb, data)?)?;
    let (upper, k1) = match lyap.map(|l| (&l.mode, l.c)) {
        Some((DriftMode::Unbounded { lhat }, c)) => {
            let k1 = (0..model.states())
                .map(|i| model.max_cost(i) - lhat[i])
                .fold(0.0, f64::max);
            (Some(c + k1), Some(k1))
        }
        _ => (None, None),
    };
    let lower_ok = solution.rho >= lower;
    let upper_ok = upper.map_or(true, |u| solution.rho <= u);
    Ok(BoundsReport {
        rho: solution.rho,
        lower,
        upper,
        k1,
        lower_ok,
        upper_ok,
        passed: lower_ok && upper_ok,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleInfo {
    /// `min V(i) / psi(i)` over the support where `psi > 0`.
    pub theta: f64,
    /// Smallest state attaining the minimum.
    pub touch_state: usize,
}

/// Scales `psi` by `theta = min V/psi` so that it touches `V` from below.
pub fn lyapunov_scale(solution: &EigenSolution, lyap: &LyapunovData) -> Result<(EigenSolution, ScaleInfo), EigenError> {
    let mut theta = f64::INFINITY;
    let mut touch = None;
    for &i in solution.domain.support().states() {
        let p = solution.psi[i];
        if p > 0.0 {
            let r = lyap.v[i] / p;
            if r < theta {
                theta = r;
                touch = Some(i);
            }
        }
    }
    let touch_state = touch.ok_or(EigenError::ZeroPsi)?;
    let mut out = solution.clone();
    out.psi.iter_mut().for_each(|x| *x *= theta);
    out.residual *= theta;
    out.normalization = Normalization::TouchesV;
    Ok((out, ScaleInfo { theta, touch_state }))
}
