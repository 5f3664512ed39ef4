use serde::{Deserialize, Serialize};

use super::{
    dirichlet_eigenpair, hji_residual, lyapunov_scale, sup_abs, EigenError, EigenOptions, EigenSolution,
    Normalization, SolutionDomain,
};
use crate::domain::{Domain, TruncationLadder};
use crate::model::{GameModel, LyapunovData};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LadderOptions {
    pub eigen: EigenOptions,
    /// Convergence tolerance between the last two levels, for both
    /// `|rho_n - rho_{n-1}|` and `max_W |psî_n - psî_{n-1}| / V`.
    pub tol_ladder: f64,
}

impl Default for LadderOptions {
    fn default() -> Self {
        Self {
            eigen: EigenOptions::default(),
            tol_ladder: 1e-3,
        }
    }
}

/// One row of the ladder trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    /// 1-based level index.
    pub n: usize,
    pub radius: Option<usize>,
    pub states: usize,
    pub rho: f64,
    pub residual: f64,
    pub theta: f64,
    pub touch_state: usize,
    pub touch_in_core: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderResult {
    /// Whole-space pair, `psi*(i0) = 1`.
    pub solution: EigenSolution,
    /// Dirichlet pair of every level, `psi_n(i0) = 1`.
    pub levels: Vec<EigenSolution>,
    /// `theta_n psi_n`, touching `V` from below.
    pub scaled: Vec<Vec<f64>>,
    pub reports: Vec<LevelReport>,
    pub core_window: Domain,
    pub rho_gap: f64,
    pub psi_gap: f64,
    pub converged: bool,
}

/// Runs every level of the ladder (each seeded with the previous scaled
/// eigenfunction, extended by `V`) and judges convergence on the last two.
/// Non-convergence is an error that still carries the full result.
pub fn ladder_limit(
    model: &GameModel,
    lyap: &LyapunovData,
    ladder: &TruncationLadder,
    opts: &LadderOptions,
) -> Result<LadderResult, EigenError> {
    if ladder.is_empty() {
        return Err(EigenError::EmptyLadder);
    }
    let core = ladder.core_window().clone();
    let mut levels = Vec::with_capacity(ladder.len());
    let mut scaled = Vec::with_capacity(ladder.len());
    let mut reports = Vec::with_capacity(ladder.len());
    let mut init: Option<Vec<f64>> = None;
    for (n, d) in ladder.domains.iter().enumerate() {
        let sol = dirichlet_eigenpair(model, d, &opts.eigen, init.as_deref())?;
        let (sc, info) = lyapunov_scale(&sol, lyap)?;
        reports.push(LevelReport {
            n: n + 1,
            radius: ladder.radii.as_ref().map(|r| r[n]),
            states: d.len(),
            rho: sol.rho,
            residual: sol.residual,
            theta: info.theta,
            touch_state: info.touch_state,
            touch_in_core: core.contains(info.touch_state),
            iterations: sol.iterations,
        });
        let mut next = lyap.v.clone();
        for &i in d.states() {
            next[i] = sc.psi[i];
        }
        init = Some(next);
        scaled.push(sc.psi);
        levels.push(sol);
    }

    let nl = levels.len();
    let (rho_gap, psi_gap) = if nl >= 2 {
        let rg = (levels[nl - 1].rho - levels[nl - 2].rho).abs();
        let pg = core
            .states()
            .iter()
            .map(|&i| (scaled[nl - 1][i] - scaled[nl - 2][i]).abs() / lyap.v[i])
            .fold(0.0, f64::max);
        (rg, pg)
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    let converged = rho_gap <= opts.tol_ladder && psi_gap <= opts.tol_ladder;

    let last = &levels[nl - 1];
    let largest = ladder.largest().clone();
    for &i in core.states() {
        if !(last.psi[i] > 0.0) {
            return Err(EigenError::NotPositive {
                state: i,
                value: last.psi[i],
            });
        }
    }
    let inner: Vec<usize> = largest
        .states()
        .iter()
        .copied()
        .filter(|&i| {
            (0..model.n_a(i)).all(|a| {
                (0..model.n_b(i)).all(|b| model.row(i, a, b).off.iter().all(|&(j, _)| largest.contains(j)))
            })
        })
        .collect();
    let residual = if inner.is_empty() {
        0.0
    } else {
        sup_abs(&hji_residual(model, &last.psi, last.rho, &inner)?)
    };
    let residual_states = if inner.is_empty() { core.clone() } else { Domain::new(inner)? };
    let solution = EigenSolution {
        domain: SolutionDomain::WholeSpace {
            largest,
            residual_states,
        },
        rho: last.rho,
        psi: last.psi.clone(),
        normalization: Normalization::ReferenceOne,
        residual,
        delta_used: opts.eigen.delta,
        ladder_trace: reports.iter().map(|r| (r.n, r.rho)).collect(),
        iterations: levels.iter().map(|l| l.iterations).sum(),
    };
    let result = LadderResult {
        solution,
        levels,
        scaled,
        reports,
        core_window: core,
        rho_gap,
        psi_gap,
        converged,
    };
    if converged {
        Ok(result)
    } else {
        Err(EigenError::LadderNotConverged(Box::new(result)))
    }
}
