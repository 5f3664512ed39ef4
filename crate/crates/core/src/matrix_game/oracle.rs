//! Independent value oracle by exhaustive enumeration of square kernels.
//!
//! Every optimal strategy pair has a square submatrix on which both players
//! equalize. For each pair of equal-size row/column subsets we solve the
//! bordered system `x_I^T M_IJ = v 1, sum x_I = 1`; any nonnegative solution
//! is a probability vector whose guaranteed payoff is a lower bound on the
//! value, and the best of these bounds is the value itself.

use nalgebra::{DMatrix, DVector};

use super::{GameMatrix, MatrixGameError};

const LIMIT: usize = 12;

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for s in start..n {
            cur.push(s);
            rec(s + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Solves `sum_{l in L} p_l A[l][r] = v` for r in R, `sum p = 1`; returns p (full length).
fn equalizer(get: impl Fn(usize, usize) -> f64, len: usize, l_set: &[usize], r_set: &[usize]) -> Option<Vec<f64>> {
    let k = l_set.len();
    let mut a = DMatrix::<f64>::zeros(k + 1, k + 1);
    let mut rhs = DVector::<f64>::zeros(k + 1);
    for (row, &r) in r_set.iter().enumerate() {
        for (col, &l) in l_set.iter().enumerate() {
            a[(row, col)] = get(l, r);
        }
        a[(row, k)] = -1.0;
    }
    for col in 0..k {
        a[(k, col)] = 1.0;
    }
    rhs[k] = 1.0;
    let sol = a.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    if (0..k).any(|c| sol[c] < -1e-12) {
        return None;
    }
    let mut p = vec![0.0; len];
    for (c, &l) in l_set.iter().enumerate() {
        p[l] = sol[c].max(0.0);
    }
    let s: f64 = p.iter().sum();
    if !(s > 0.0) {
        return None;
    }
    p.iter_mut().for_each(|v| *v /= s);
    Some(p)
}

/// Game value by vertex enumeration, for matrices up to 12x12. Used as a
/// reference in tests; exponential in the dimension.
pub fn game_value_oracle(m: &GameMatrix) -> Result<f64, MatrixGameError> {
    let (rows, cols) = (m.rows(), m.cols());
    if rows > LIMIT || cols > LIMIT {
        return Err(MatrixGameError::TooLarge { rows, cols });
    }
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::INFINITY;
    for k in 1..=rows.min(cols) {
        let rs = subsets(rows, k);
        let cs = subsets(cols, k);
        for i_set in &rs {
            for j_set in &cs {
                if let Some(x) = equalizer(|i, j| m.get(i, j), rows, i_set, j_set) {
                    let g = m.row_payoffs(&x).into_iter().fold(f64::INFINITY, f64::min);
                    lower = lower.max(g);
                }
                if let Some(y) = equalizer(|j, i| m.get(i, j), cols, j_set, i_set) {
                    let g = m.col_payoffs(&y).into_iter().fold(f64::NEG_INFINITY, f64::max);
                    upper = upper.min(g);
                }
            }
        }
    }
    debug_assert!(
        upper - lower <= 1e-8 * (1.0 + lower.abs()),
        "oracle bounds disagree: {lower} vs {upper}"
    );
    Ok(lower)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_cases() {
        let one = GameMatrix::from_rows(&[vec![5.0]]).unwrap();
        assert_eq!(game_value_oracle(&one).unwrap(), 5.0);
        let pennies = GameMatrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        assert!(game_value_oracle(&pennies).unwrap().abs() < 1e-15);
        let d = GameMatrix::from_rows(&[vec![3.0, 1.0], vec![0.0, 2.0]]).unwrap();
        assert!((game_value_oracle(&d).unwrap() - 1.5).abs() < 1e-14);
    }

    #[test]
    fn rock_paper_scissors() {
        let m = GameMatrix::from_rows(&[
            vec![0.0, -1.0, 1.0],
            vec![1.0, 0.0, -1.0],
            vec![-1.0, 1.0, 0.0],
        ])
        .unwrap();
        assert!(game_value_oracle(&m).unwrap().abs() < 1e-14);
    }

    #[test]
    fn too_large() {
        let m = GameMatrix::new(13, 1, vec![0.0; 13]).unwrap();
        assert!(matches!(game_value_oracle(&m), Err(MatrixGameError::TooLarge { .. })));
    }
}
