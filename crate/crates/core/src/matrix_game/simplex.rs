//! Small dense two-phase simplex with Bland's rule. Sized for the matrix
//! games that appear at every state (a handful of actions per player).

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Rel {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub(crate) struct Constraint {
    pub coef: Vec<f64>,
    pub rel: Rel,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LpResult {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

const PIVOT_EPS: f64 = 1e-12;
const MAX_PIVOTS: usize = 10_000;

struct Tableau {
    // rows of [coefficients | rhs]
    t: Vec<Vec<f64>>,
    // objective row (reduced costs | -objective value)
    z: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn width(&self) -> usize {
        self.z.len() - 1
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        let prow = self.t[r].clone();
        for (k, row) in self.t.iter_mut().enumerate() {
            if k == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, &pv) in row.iter_mut().zip(&prow) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        let f = self.z[c];
        if f != 0.0 {
            for (v, &pv) in self.z.iter_mut().zip(&prow) {
                *v -= f * pv;
            }
            self.z[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Minimizes over columns `< allowed`. Returns false if unbounded.
    fn optimize(&mut self, allowed: usize) -> bool {
        let w = self.width();
        for _ in 0..MAX_PIVOTS {
            // Bland: lowest-index improving column
            let Some(c) = (0..allowed).find(|&j| self.z[j] < -PIVOT_EPS) else {
                return true;
            };
            let mut best: Option<(usize, f64)> = None;
            for (r, row) in self.t.iter().enumerate() {
                if row[c] > PIVOT_EPS {
                    let ratio = row[w] / row[c];
                    best = match best {
                        None => Some((r, ratio)),
                        Some((br, bratio)) => {
                            if ratio < bratio - 1e-15 * bratio.abs().max(1.0)
                                || (ratio <= bratio + 1e-15 * bratio.abs().max(1.0)
                                    && self.basis[r] < self.basis[br])
                            {
                                Some((r, ratio))
                            } else {
                                Some((br, bratio))
                            }
                        }
                    };
                }
            }
            match best {
                None => return false,
                Some((r, _)) => self.pivot(r, c),
            }
        }
        true
    }
}

/// Minimizes `c.x` subject to the constraints and `x >= 0`.
pub(crate) fn solve_lp(c: &[f64], constraints: &[Constraint]) -> LpResult {
    let n = c.len();
    let m = constraints.len();
    // normalize to rhs >= 0
    let rows: Vec<(Vec<f64>, Rel, f64)> = constraints
        .iter()
        .map(|k| {
            if k.rhs < 0.0 {
                let rel = match k.rel {
                    Rel::Le => Rel::Ge,
                    Rel::Ge => Rel::Le,
                    Rel::Eq => Rel::Eq,
                };
                (k.coef.iter().map(|v| -v).collect(), rel, -k.rhs)
            } else {
                (k.coef.clone(), k.rel, k.rhs)
            }
        })
        .collect();
    let n_slack = rows.iter().filter(|r| r.1 != Rel::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Rel::Le).count();
    let width = n + n_slack + n_art;
    let art_start = n + n_slack;

    let mut t = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    let (mut s, mut a) = (n, art_start);
    for (coef, rel, rhs) in &rows {
        let mut row = vec![0.0; width + 1];
        row[..n].copy_from_slice(coef);
        row[width] = *rhs;
        match rel {
            Rel::Le => {
                row[s] = 1.0;
                basis.push(s);
                s += 1;
            }
            Rel::Ge => {
                row[s] = -1.0;
                s += 1;
                row[a] = 1.0;
                basis.push(a);
                a += 1;
            }
            Rel::Eq => {
                row[a] = 1.0;
                basis.push(a);
                a += 1;
            }
        }
        t.push(row);
    }

    let mut tab = Tableau {
        t,
        z: vec![0.0; width + 1],
        basis,
    };

    if n_art > 0 {
        // phase 1: minimize the sum of artificials
        for j in art_start..width {
            tab.z[j] = 1.0;
        }
        for r in 0..m {
            if tab.basis[r] >= art_start {
                let row = tab.t[r].clone();
                for (v, rv) in tab.z.iter_mut().zip(&row) {
                    *v -= rv;
                }
            }
        }
        tab.optimize(width);
        let infeas = -tab.z[width];
        let scale = rows.iter().map(|r| r.2).fold(1.0, f64::max);
        if infeas > 1e-9 * scale {
            return LpResult::Infeasible;
        }
        // drive artificials out of the basis, dropping redundant rows
        let mut r = 0;
        while r < tab.t.len() {
            if tab.basis[r] >= art_start {
                if let Some(c) = (0..art_start).find(|&j| tab.t[r][j].abs() > 1e-9) {
                    tab.pivot(r, c);
                } else {
                    tab.t.remove(r);
                    tab.basis.remove(r);
                    continue;
                }
            }
            r += 1;
        }
    }

    // phase 2
    tab.z = vec![0.0; width + 1];
    tab.z[..n].copy_from_slice(c);
    for r in 0..tab.t.len() {
        let bc = tab.basis[r];
        let f = tab.z[bc];
        if f != 0.0 {
            let row = tab.t[r].clone();
            for (v, rv) in tab.z.iter_mut().zip(&row) {
                *v -= f * rv;
            }
        }
    }
    if !tab.optimize(art_start) {
        return LpResult::Unbounded;
    }
    let mut x = vec![0.0; n];
    for (r, &bc) in tab.basis.iter().enumerate() {
        if bc < n {
            x[bc] = tab.t[r][width].max(0.0);
        }
    }
    let objective = c.iter().zip(&x).map(|(a, b)| a * b).sum();
    LpResult::Optimal { x, objective }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn le(coef: &[f64], rhs: f64) -> Constraint {
        Constraint {
            coef: coef.to_vec(),
            rel: Rel::Le,
            rhs,
        }
    }

    #[test]
    fn textbook_max() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18  -> (2, 6), 36
        let r = solve_lp(
            &[-3.0, -5.0],
            &[le(&[1.0, 0.0], 4.0), le(&[0.0, 2.0], 12.0), le(&[3.0, 2.0], 18.0)],
        );
        match r {
            LpResult::Optimal { x, objective } => {
                assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 6.0).abs() < 1e-12);
                assert!((objective + 36.0).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn equality_and_ge() {
        // min x + 2y s.t. x + y = 1, x >= 0.25 (as x - 0 >= .25)
        let r = solve_lp(
            &[1.0, 2.0],
            &[
                Constraint {
                    coef: vec![1.0, 1.0],
                    rel: Rel::Eq,
                    rhs: 1.0,
                },
                Constraint {
                    coef: vec![1.0, 0.0],
                    rel: Rel::Ge,
                    rhs: 0.25,
                },
            ],
        );
        match r {
            LpResult::Optimal { x, .. } => assert!((x[0] - 1.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn infeasible_and_unbounded() {
        let r = solve_lp(
            &[1.0],
            &[
                Constraint {
                    coef: vec![1.0],
                    rel: Rel::Ge,
                    rhs: 2.0,
                },
                le(&[1.0], 1.0),
            ],
        );
        assert_eq!(r, LpResult::Infeasible);
        let r = solve_lp(&[-1.0], &[le(&[-1.0], 1.0)]);
        assert_eq!(r, LpResult::Unbounded);
    }
}
