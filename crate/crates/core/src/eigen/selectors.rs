use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{isaacs_game, EigenError, EigenSolution};
use crate::matrix_game::{solve_matrix_game, DEFAULT_TOL};
use crate::model::GameModel;
use crate::strategy::StationaryStrategy;

/// Mini-max selectors read off an eigenfunction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorPair {
    pub pi1: StationaryStrategy,
    pub pi2: StationaryStrategy,
    /// Per-state game value of the Isaacs operator at `psi`.
    pub values: BTreeMap<usize, f64>,
    /// Largest matrix-game duality gap over the states.
    pub max_duality_gap: f64,
}

/// Solves the Isaacs game at every state of the solution's support and
/// returns both optimal mixed actions. Fails if, on a certified state, the
/// game value is off `rho psi(i)` by more than `tol * max(1, psi(i))`.
pub fn extract_selectors(model: &GameModel, solution: &EigenSolution, tol: f64) -> Result<SelectorPair, EigenError> {
    let checked = solution.domain.checked();
    let states = solution.domain.support().states();
    let solved = states
        .par_iter()
        .map(|&i| {
            let s = solve_matrix_game(&isaacs_game(model, &solution.psi, i)?, DEFAULT_TOL)?;
            let expected = solution.rho * solution.psi[i];
            if checked.contains(i) && (s.value - expected).abs() > tol * solution.psi[i].max(1.0) {
                return Err(EigenError::SelectorResidual {
                    state: i,
                    value: s.value,
                    expected,
                });
            }
            Ok((i, s))
        })
        .collect::<Result<Vec<_>, EigenError>>()?;
    let mut out = SelectorPair {
        pi1: StationaryStrategy::new(),
        pi2: StationaryStrategy::new(),
        values: BTreeMap::new(),
        max_duality_gap: 0.0,
    };
    for (i, s) in solved {
        out.max_duality_gap = out.max_duality_gap.max(s.duality_gap);
        out.values.insert(i, s.value);
        out.pi1.insert(i, s.row_strategy);
        out.pi2.insert(i, s.col_strategy);
    }
    Ok(out)
}
