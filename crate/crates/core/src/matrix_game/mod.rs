//! Finite two-player zero-sum matrix games over mixed strategies.
//!
//! The row player maximizes, the column player minimizes. Solutions come from
//! the linear-programming formulation after shifting all entries to be at
//! least one; among optimal strategies the lexicographically smallest vector
//! is returned so that selectors are reproducible.

mod oracle;
mod simplex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use oracle::game_value_oracle;
use simplex::{solve_lp, Constraint, LpResult, Rel};

/// Default solver tolerance.
pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatrixGameError {
    #[error("matrix game needs at least one row and one column")]
    Empty,
    #[error("row {row} has {got} entries, expected {expected}")]
    Ragged { row: usize, got: usize, expected: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("{rows}x{cols} exceeds the oracle limit of 12x12")]
    TooLarge { rows: usize, cols: usize },
    #[error("linear program failed: {0}")]
    Lp(&'static str),
}

/// Dense row-major payoff matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GameMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl GameMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, MatrixGameError> {
        if rows == 0 || cols == 0 {
            return Err(MatrixGameError::Empty);
        }
        if data.len() != rows * cols {
            return Err(MatrixGameError::Ragged {
                row: data.len() / cols,
                got: data.len() % cols,
                expected: cols,
            });
        }
        if let Some(k) = data.iter().position(|x| !x.is_finite()) {
            return Err(MatrixGameError::NonFinite {
                row: k / cols,
                col: k % cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MatrixGameError> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(m * n);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(MatrixGameError::Ragged {
                    row: r,
                    got: row.len(),
                    expected: n,
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(m, n, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `(x^T M)_j`, the payoff of column `j` against row strategy `x`.
    pub fn row_payoffs(&self, x: &[f64]) -> Vec<f64> {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| x[i] * self.get(i, j)).sum())
            .collect()
    }

    /// `(M y)_i`, the payoff of row `i` against column strategy `y`.
    pub fn col_payoffs(&self, y: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j) * y[j]).sum())
            .collect()
    }

    /// `x^T M y`.
    pub fn payoff(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(self.col_payoffs(y)).map(|(a, b)| a * b).sum()
    }

    /// Best pure-row response against `y` minus best pure-column response
    /// against `x`. Nonnegative up to rounding; zero exactly at a saddle point.
    pub fn duality_gap(&self, x: &[f64], y: &[f64]) -> f64 {
        let hi = self.col_payoffs(y).into_iter().fold(f64::NEG_INFINITY, f64::max);
        let lo = self.row_payoffs(x).into_iter().fold(f64::INFINITY, f64::min);
        hi - lo
    }

    /// `(max_i min_j, min_j max_i)` over pure strategies.
    fn pure_bounds(&self) -> (f64, f64) {
        let maximin = (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j)).fold(f64::INFINITY, f64::min))
            .fold(f64::NEG_INFINITY, f64::max);
        let minimax = (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.get(i, j)).fold(f64::NEG_INFINITY, f64::max))
            .fold(f64::INFINITY, f64::min);
        (maximin, minimax)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixGameSolution {
    pub value: f64,
    /// Maximizer's mixed strategy over rows.
    pub row_strategy: Vec<f64>,
    /// Minimizer's mixed strategy over columns.
    pub col_strategy: Vec<f64>,
    pub duality_gap: f64,
}

/// Value only. Pure saddle points and 2x2 games are settled in closed form;
/// everything else goes through one linear program.
pub fn game_value(m: &GameMatrix) -> Result<f64, MatrixGameError> {
    let (lo, hi) = m.pure_bounds();
    if lo == hi {
        return Ok(lo);
    }
    if m.rows == 2 && m.cols == 2 {
        // no pure saddle: both players mix fully
        let (a, b, c, d) = (m.get(0, 0), m.get(0, 1), m.get(1, 0), m.get(1, 1));
        let v = (a * d - b * c) / (a + d - b - c);
        return Ok(v.clamp(lo, hi));
    }
    let shift = 1.0 - m.min();
    let (w, _) = column_lp(m, shift)?;
    let s: f64 = w.iter().sum();
    Ok((1.0 / s - shift).clamp(lo, hi))
}

/// Some optimal strategy pair, without the lexicographic tie rule. Pure
/// saddle points are found directly; otherwise two linear programs.
pub fn saddle_point(m: &GameMatrix) -> Result<MatrixGameSolution, MatrixGameError> {
    let (lo, hi) = m.pure_bounds();
    if lo == hi {
        for i in 0..m.rows {
            let rmin = (0..m.cols).map(|j| m.get(i, j)).fold(f64::INFINITY, f64::min);
            if rmin != lo {
                continue;
            }
            for j in 0..m.cols {
                let cmax = (0..m.rows).map(|k| m.get(k, j)).fold(f64::NEG_INFINITY, f64::max);
                if cmax == hi && m.get(i, j) == lo {
                    let mut x = vec![0.0; m.rows];
                    let mut y = vec![0.0; m.cols];
                    x[i] = 1.0;
                    y[j] = 1.0;
                    return Ok(MatrixGameSolution {
                        value: lo,
                        row_strategy: x,
                        col_strategy: y,
                        duality_gap: 0.0,
                    });
                }
            }
        }
    }
    let shift = 1.0 - m.min();
    let (w, sw) = column_lp(m, shift)?;
    let x = normalized(row_lp(m, shift)?);
    let y = normalized(w);
    Ok(MatrixGameSolution {
        value: (1.0 / sw - shift).clamp(lo, hi),
        duality_gap: m.duality_gap(&x, &y),
        row_strategy: x,
        col_strategy: y,
    })
}

/// max sum(w) s.t. (M + shift) w <= 1, w >= 0; the column strategy is w / sum(w).
fn column_lp(m: &GameMatrix, shift: f64) -> Result<(Vec<f64>, f64), MatrixGameError> {
    let c = vec![-1.0; m.cols];
    let cons: Vec<Constraint> = (0..m.rows)
        .map(|i| Constraint {
            coef: (0..m.cols).map(|j| m.get(i, j) + shift).collect(),
            rel: Rel::Le,
            rhs: 1.0,
        })
        .collect();
    match solve_lp(&c, &cons) {
        LpResult::Optimal { x, objective } => Ok((x, -objective)),
        LpResult::Infeasible => Err(MatrixGameError::Lp("column program infeasible")),
        LpResult::Unbounded => Err(MatrixGameError::Lp("column program unbounded")),
    }
}

/// min sum(u) s.t. (M + shift)^T u >= 1, u >= 0; the row strategy is u / sum(u).
fn row_lp(m: &GameMatrix, shift: f64) -> Result<Vec<f64>, MatrixGameError> {
    let c = vec![1.0; m.rows];
    let cons: Vec<Constraint> = (0..m.cols)
        .map(|j| Constraint {
            coef: (0..m.rows).map(|i| m.get(i, j) + shift).collect(),
            rel: Rel::Ge,
            rhs: 1.0,
        })
        .collect();
    match solve_lp(&c, &cons) {
        LpResult::Optimal { x, .. } => Ok(x),
        LpResult::Infeasible => Err(MatrixGameError::Lp("row program infeasible")),
        LpResult::Unbounded => Err(MatrixGameError::Lp("row program unbounded")),
    }
}

fn normalized(mut p: Vec<f64>) -> Vec<f64> {
    for v in p.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let s: f64 = p.iter().sum();
    for v in p.iter_mut() {
        *v /= s;
    }
    p
}

/// Lexicographically smallest probability vector `p` over `k` coordinates
/// subject to `sign * (payoff_j(p) - bound) >= 0` for every opposing pure
/// strategy `j`. `payoff[j][l]` is the payoff of `j` against coordinate `l`.
/// Returns `None` if a stage loses feasibility to rounding.
fn lexmin(payoff: &[Vec<f64>], bound: f64, sign: f64) -> Option<Vec<f64>> {
    let k = payoff[0].len();
    let mut cons: Vec<Constraint> = payoff
        .iter()
        .map(|row| Constraint {
            coef: row.iter().map(|v| sign * v).collect(),
            rel: Rel::Ge,
            rhs: sign * bound,
        })
        .collect();
    cons.push(Constraint {
        coef: vec![1.0; k],
        rel: Rel::Eq,
        rhs: 1.0,
    });
    let mut last = None;
    for l in 0..k {
        let mut c = vec![0.0; k];
        c[l] = 1.0;
        match solve_lp(&c, &cons) {
            LpResult::Optimal { x, .. } => {
                let mut coef = vec![0.0; k];
                coef[l] = 1.0;
                cons.push(Constraint {
                    coef,
                    rel: Rel::Le,
                    rhs: x[l],
                });
                last = Some(x);
            }
            _ => return None,
        }
        if l + 2 == k {
            // the last coordinate is pinned by the simplex constraint
            break;
        }
    }
    last.or_else(|| Some(vec![1.0]))
}

/// Solves the game to tolerance `tol`: the returned strategies guarantee
/// `min_j (x^T M)_j >= v - tol` and `max_i (M y)_i <= v + tol`, with `tol`
/// read relative to `max(1, max |M|)`.
///
/// ```
/// use ergogame::matrix_game::{solve_matrix_game, GameMatrix};
/// let m = GameMatrix::from_rows(&[vec![3.0, 1.0], vec![0.0, 2.0]]).unwrap();
/// let s = solve_matrix_game(&m, 1e-10).unwrap();
/// assert!((s.value - 1.5).abs() < 1e-12);
/// assert!((s.col_strategy[0] - 0.25).abs() < 1e-12);
/// ```
pub fn solve_matrix_game(m: &GameMatrix, tol: f64) -> Result<MatrixGameSolution, MatrixGameError> {
    let scale = m.min().abs().max(m.max().abs()).max(1.0);
    if m.rows == 1 || m.cols == 1 {
        return Ok(degenerate(m));
    }
    let shift = 1.0 - m.min();
    let (w, sw) = column_lp(m, shift)?;
    let u = row_lp(m, shift)?;
    let vprime = 1.0 / sw;
    let y0 = normalized(w);
    let x0 = normalized(u);

    // Exact bounds in the refinement: phase one absorbs rounding-level
    // infeasibility and the filters reject anything that drifted past `tol`.
    // optimal rows: (x^T M)_j >= v for all j
    let by_col: Vec<Vec<f64>> = (0..m.cols)
        .map(|j| (0..m.rows).map(|i| m.get(i, j) + shift).collect())
        .collect();
    let by_row: Vec<Vec<f64>> = (0..m.rows)
        .map(|i| (0..m.cols).map(|j| m.get(i, j) + shift).collect())
        .collect();
    let x = lexmin(&by_col, vprime, 1.0)
        .map(normalized)
        .filter(|x| m.row_payoffs(x).iter().all(|&p| p + shift >= vprime - tol * scale))
        .unwrap_or(x0);
    let y = lexmin(&by_row, vprime, -1.0)
        .map(normalized)
        .filter(|y| m.col_payoffs(y).iter().all(|&p| p + shift <= vprime + tol * scale))
        .unwrap_or(y0);

    let (lo, hi) = m.pure_bounds();
    let value = (vprime - shift).clamp(lo, hi);
    let duality_gap = m.duality_gap(&x, &y);
    Ok(MatrixGameSolution {
        value,
        row_strategy: x,
        col_strategy: y,
        duality_gap,
    })
}

/// One row or one column: the other side plays a pure best response. Ties go
/// to the last index, which is the lexicographically smallest pure vector.
fn degenerate(m: &GameMatrix) -> MatrixGameSolution {
    let mut x = vec![0.0; m.rows];
    let mut y = vec![0.0; m.cols];
    if m.rows == 1 {
        x[0] = 1.0;
        let v = m.min();
        let j = (0..m.cols).rev().find(|&j| m.get(0, j) == v).unwrap();
        y[j] = 1.0;
    } else {
        y[0] = 1.0;
        let v = m.max();
        let i = (0..m.rows).rev().find(|&i| m.get(i, 0) == v).unwrap();
        x[i] = 1.0;
    }
    let value = m.payoff(&x, &y);
    MatrixGameSolution {
        value,
        duality_gap: m.duality_gap(&x, &y),
        row_strategy: x,
        col_strategy: y,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gm(rows: &[&[f64]]) -> GameMatrix {
        GameMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn single_entry() {
        let s = solve_matrix_game(&gm(&[&[5.0]]), DEFAULT_TOL).unwrap();
        assert_eq!(s.value, 5.0);
        assert_eq!(s.row_strategy, vec![1.0]);
        assert_eq!(s.col_strategy, vec![1.0]);
        assert_eq!(game_value(&gm(&[&[5.0]])).unwrap(), 5.0);
    }

    #[test]
    fn matching_pennies() {
        let m = gm(&[&[1.0, -1.0], &[-1.0, 1.0]]);
        let s = solve_matrix_game(&m, DEFAULT_TOL).unwrap();
        assert!(s.value.abs() < 1e-14);
        assert!(close(&s.row_strategy, &[0.5, 0.5], 1e-12));
        assert!(close(&s.col_strategy, &[0.5, 0.5], 1e-12));
        assert_eq!(game_value(&m).unwrap(), 0.0);
    }

    #[test]
    fn two_by_two_indifference() {
        let m = gm(&[&[3.0, 1.0], &[0.0, 2.0]]);
        let s = solve_matrix_game(&m, DEFAULT_TOL).unwrap();
        assert!((s.value - 1.5).abs() < 1e-13);
        assert!(close(&s.row_strategy, &[0.5, 0.5], 1e-12));
        assert!(close(&s.col_strategy, &[0.25, 0.75], 1e-12));
        assert!(s.duality_gap.abs() < 1e-12);
        assert_eq!(game_value(&m).unwrap(), 1.5);
    }

    #[test]
    fn ties_pick_lexicographically_smallest() {
        // every row is optimal; lexicographic minimum puts all mass on the last row
        let m = gm(&[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]]);
        let s = solve_matrix_game(&m, DEFAULT_TOL).unwrap();
        assert!(close(&s.row_strategy, &[0.0, 0.0, 1.0], 1e-12));
        assert!(close(&s.col_strategy, &[0.0, 1.0], 1e-12));
        // twice the same
        assert_eq!(s, solve_matrix_game(&m, DEFAULT_TOL).unwrap());
    }

    #[test]
    fn non_finite_rejected() {
        assert_eq!(
            GameMatrix::from_rows(&[vec![1.0, f64::NAN]]).unwrap_err(),
            MatrixGameError::NonFinite { row: 0, col: 1 }
        );
        assert_eq!(GameMatrix::from_rows(&[]).unwrap_err(), MatrixGameError::Empty);
    }

    fn matrix() -> impl Strategy<Value = GameMatrix> {
        (1usize..=5, 1usize..=5).prop_flat_map(|(m, n)| {
            proptest::collection::vec(-10.0f64..10.0, m * n)
                .prop_map(move |d| GameMatrix::new(m, n, d).unwrap())
        })
    }

    fn check(m: &GameMatrix, s: &MatrixGameSolution, tol: f64) {
        let eps = tol * 10.0;
        assert!((s.row_strategy.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((s.col_strategy.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(s.row_strategy.iter().chain(&s.col_strategy).all(|&p| p >= 0.0));
        assert!(m.row_payoffs(&s.row_strategy).iter().all(|&p| p >= s.value - eps));
        assert!(m.col_payoffs(&s.col_strategy).iter().all(|&p| p <= s.value + eps));
        assert!(s.duality_gap <= eps && s.duality_gap >= -1e-9);
    }

    proptest! {
        #[test]
        fn solution_is_a_saddle_point(m in matrix()) {
            let s = solve_matrix_game(&m, DEFAULT_TOL).unwrap();
            check(&m, &s, DEFAULT_TOL);
            prop_assert!(s.value >= m.min() && s.value <= m.max());
            prop_assert!((game_value(&m).unwrap() - s.value).abs() < 1e-9);
            let any = saddle_point(&m).unwrap();
            check(&m, &any, DEFAULT_TOL);
        }

        #[test]
        fn affine_equivariance(m in matrix(), a in 0.1f64..5.0, b in -5.0f64..5.0) {
            let s = solve_matrix_game(&m, DEFAULT_TOL).unwrap();
            let data: Vec<f64> = (0..m.rows()).flat_map(|i| (0..m.cols()).map(move |j| (i, j)))
                .map(|(i, j)| a * m.get(i, j) + b).collect();
            let t = solve_matrix_game(&GameMatrix::new(m.rows(), m.cols(), data).unwrap(), DEFAULT_TOL).unwrap();
            prop_assert!((t.value - (a * s.value + b)).abs() < 1e-8);
            // same optimal set, same lexicographic pick
            prop_assert!(close(&s.row_strategy, &t.row_strategy, 1e-6), "{:?} {:?}", s, t);
            prop_assert!(close(&s.col_strategy, &t.col_strategy, 1e-6), "{:?} {:?}", s, t);
        }

        #[test]
        fn transpose_antisymmetry(m in matrix()) {
            let v = game_value(&m).unwrap();
            let data: Vec<f64> = (0..m.cols()).flat_map(|j| (0..m.rows()).map(move |i| (i, j)))
                .map(|(i, j)| -m.get(i, j)).collect();
            let t = GameMatrix::new(m.cols(), m.rows(), data).unwrap();
            prop_assert!((game_value(&t).unwrap() + v).abs() < 2e-9);
        }

        #[test]
        fn monotone_in_entries(m in matrix(), bump in proptest::collection::vec(0.0f64..3.0, 25)) {
            let data: Vec<f64> = (0..m.rows() * m.cols()).map(|k| m.data[k] + bump[k]).collect();
            let up = GameMatrix::new(m.rows(), m.cols(), data).unwrap();
            prop_assert!(game_value(&m).unwrap() <= game_value(&up).unwrap() + 2e-10);
        }
    }
}
