//! Controlled birth-death game: player 1 shifts the arrival rate, player 2
//! the departure rate, player 1 owns the system and collects a fee per
//! customer. State 0 can jump to any `j >= 1` at rate `alpha / (j+3)^4`.
//!
//! The store is cut at `cap` states. The jump kernel out of state 0 is kept
//! exactly for every stored target and its diagonal balances the stored mass;
//! arrivals are switched off in the last stored state, so the stored model is
//! conservative and closed. Dirichlet truncations strictly inside the store
//! still see the killing at their boundary.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{DriftMode, GameModel, LyapunovData, ModelError, RateRow};

/// `sum_{j >= 1} (j+3)^-4 = pi^4/90 - 1 - 1/16 - 1/81`.
pub(crate) fn tail_sum_inv4() -> f64 {
    PI.powi(4) / 90.0 - 1.0 - 1.0 / 16.0 - 1.0 / 81.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BirthDeathParams {
    /// Natural departure scale (multiplies `(i+3)^2`).
    pub lambda_hat: f64,
    /// Natural arrival rate per customer.
    pub mu_hat: f64,
    /// Fee per customer per unit time, `< 1`.
    pub p_hat: f64,
    /// Jump intensity out of state 0.
    pub alpha: f64,
    /// Number of stored states.
    pub cap: usize,
    /// Grid sizes for player 1 and player 2 actions.
    pub grid_a: usize,
    pub grid_b: usize,
    /// Quadratic control-cost weights.
    pub eps_a: f64,
    pub eps_b: f64,
    /// Keeps arrivals strictly positive at `i = 1`.
    pub eps_margin: f64,
    /// Replace every cost by zero (the recurrent, cost-free variant).
    pub zero_cost: bool,
}

impl Default for BirthDeathParams {
    fn default() -> Self {
        Self {
            lambda_hat: 2.0,
            mu_hat: 1.0,
            p_hat: 0.5,
            alpha: 420.0,
            cap: 201,
            grid_a: 3,
            grid_b: 3,
            eps_a: 0.1,
            eps_b: 0.1,
            eps_margin: 1e-3,
            zero_cost: false,
        }
    }
}

impl BirthDeathParams {
    pub fn with_cap(cap: usize) -> Self {
        Self {
            cap,
            ..Self::default()
        }
    }

    /// Player-1 arrival shifts `h1(i, a) = a` on `(lo, mu_hat]`.
    fn grid_a(&self, i: usize) -> Vec<f64> {
        let hi = self.mu_hat;
        let lo = if i == 0 {
            0.0
        } else {
            (-self.mu_hat).max(-self.mu_hat * i as f64 + self.eps_margin)
        };
        let k = self.grid_a;
        (1..=k).map(|m| lo + (hi - lo) * m as f64 / k as f64).collect()
    }

    /// Player-2 departure shifts `h2(i, b) = b` on `[-lambda_hat, lambda_hat]`, `{0}` at 0.
    fn grid_b(&self, i: usize) -> Vec<f64> {
        if i == 0 {
            return vec![0.0];
        }
        let k = self.grid_b;
        if k == 1 {
            return vec![0.0];
        }
        (0..k)
            .map(|m| -self.lambda_hat + 2.0 * self.lambda_hat * m as f64 / (k - 1) as f64)
            .collect()
    }

    fn c1(&self, i: usize, a: f64) -> f64 {
        0.5 * self.p_hat * i as f64 + self.eps_a * (a / self.mu_hat).powi(2)
    }

    fn c2(&self, _i: usize, b: f64) -> f64 {
        self.eps_a + self.eps_b * (b / self.lambda_hat).powi(2)
    }

    fn check(&self) -> Result<(), ModelError> {
        let fail = |s: &str| Err(ModelError::Parameter(s.to_string()));
        if !(self.mu_hat > 0.0) {
            return fail("mu_hat > 0");
        }
        if !(self.lambda_hat >= self.mu_hat.max(2.0)) {
            return fail("(I): lambda_hat >= max{mu_hat, 2}");
        }
        if !(self.p_hat > 0.0 && self.p_hat < 1.0) {
            return fail("(II): 0 < p_hat < 1");
        }
        if !(self.alpha > 0.0) {
            return fail("alpha > 0");
        }
        if self.cap < 2 {
            return fail("cap >= 2");
        }
        if self.grid_a == 0 || self.grid_b == 0 {
            return fail("action grids must be nonempty");
        }
        if !(self.eps_a >= 0.0 && self.eps_b >= 0.0) {
            return fail("eps_a, eps_b >= 0");
        }
        if !(self.eps_margin > 0.0 && self.eps_margin < self.mu_hat) {
            return fail("0 < eps_margin < mu_hat");
        }
        Ok(())
    }
}

/// Builds the birth-death game and its Lyapunov certificate
/// (`V = (i+3)^2`, `lhat = i+3`, `K = {0}`, `C = alpha pi^2 / 6`).
pub fn build_birth_death(p: &BirthDeathParams) -> Result<(GameModel, LyapunovData), ModelError> {
    p.check()?;
    let n = p.cap;
    let mut actions_a = Vec::with_capacity(n);
    let mut actions_b = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    let mut cost = Vec::with_capacity(n);

    let zero_row = RateRow::balanced((1..n).map(|j| (j, p.alpha / ((j + 3) as f64).powi(4))).collect());
    if !(zero_row.diag <= -3.0) {
        return Err(ModelError::Parameter(format!(
            "q(0|0,a,b) <= -3 fails on the stored row: q(0|0) = {}",
            zero_row.diag
        )));
    }

    for i in 0..n {
        let ga = p.grid_a(i);
        let gb = p.grid_b(i);
        let fi = i as f64;
        for &a in &ga {
            let ok = if i == 0 { a > 0.0 } else { p.mu_hat * fi + a > 0.0 };
            if !ok {
                return Err(ModelError::Parameter(format!(
                    "(I): mu_hat*i + h1(i,a) > 0 fails at i={i}, a={a}"
                )));
            }
        }
        for &b in &gb {
            if i > 0 && !(p.lambda_hat * (fi + 3.0).powi(2) + b > 0.0) {
                return Err(ModelError::Parameter(format!(
                    "(I): lambda_hat*(i+3)^2 + h2(i,b) > 0 fails at i={i}, b={b}"
                )));
            }
        }
        let mut r = Vec::with_capacity(ga.len() * gb.len());
        let mut c = Vec::with_capacity(ga.len() * gb.len());
        for &a in &ga {
            for &b in &gb {
                let row = if i == 0 {
                    zero_row.clone()
                } else {
                    let death = p.lambda_hat * (fi + 3.0).powi(2) + b;
                    let birth = p.mu_hat * fi + a;
                    let mut off = vec![(i - 1, death)];
                    if i + 1 < n {
                        off.push((i + 1, birth));
                    }
                    RateRow::balanced(off)
                };
                r.push(row);
                let cc = if p.zero_cost {
                    0.0
                } else {
                    p.p_hat * fi - p.c1(i, a) + p.c2(i, b)
                };
                if cc < 0.0 {
                    return Err(ModelError::Parameter(format!(
                        "(II): p_hat*i - c1 + c2 >= 0 fails at i={i}, a={a}, b={b}"
                    )));
                }
                c.push(cc);
            }
        }
        actions_a.push(ga.iter().map(|a| format!("h1={a:.6}")).collect());
        actions_b.push(gb.iter().map(|b| format!("h2={b:.6}")).collect());
        rows.push(r);
        cost.push(c);
    }

    let name = if p.zero_cost { "birth-death-zero-cost" } else { "birth-death" };
    let model = GameModel::new(name, 0, true, actions_a, actions_b, rows, cost)?;

    let v: Vec<f64> = (0..n).map(|i| ((i + 3) as f64).powi(2)).collect();
    let c_const = p.alpha * PI * PI / 6.0;
    let lyap = LyapunovData {
        v: v.clone(),
        mode: DriftMode::Unbounded {
            lhat: (0..n).map(|i| (i + 3) as f64).collect(),
        },
        c: c_const,
        k_hat: vec![0],
        b0: 1.0,
        b1: c_const,
        b2: (2.0 * p.lambda_hat).max(p.alpha * tail_sum_inv4()),
        v_tilde: v,
    };
    Ok((model, lyap))
}

#[cfg(test)]
mod tests {
    use super::super::{validate_model, ROW_SUM_TOL};
    use super::*;

    #[test]
    fn defaults_satisfy_condition_on_state_zero() {
        let (m, _) = build_birth_death(&BirthDeathParams::default()).unwrap();
        assert!(m.row(0, 0, 0).diag <= -3.0);
        // no departure control at 0
        assert_eq!(m.n_b(0), 1);
        assert_eq!(m.actions_b(0), &["h2=0.000000".to_string()]);
        assert_eq!(m.row(0, 0, 0).off.len(), m.states() - 1);
    }

    #[test]
    fn row_one_matches_display() {
        let p = BirthDeathParams::with_cap(10);
        let (m, _) = build_birth_death(&p).unwrap();
        let ga = p.grid_a(1);
        let gb = p.grid_b(1);
        for (a, &ha) in ga.iter().enumerate() {
            for (b, &hb) in gb.iter().enumerate() {
                let row = m.row(1, a, b);
                assert_eq!(row.off, vec![(0, 2.0 * 16.0 + hb), (2, 1.0 + ha)]);
                assert_eq!(row.diag, -(2.0 * 16.0 + hb + 1.0 + ha));
            }
        }
    }

    #[test]
    fn lyapunov_constants() {
        let p = BirthDeathParams::default();
        let (m, l) = build_birth_death(&p).unwrap();
        assert_eq!(l.v[7], 100.0);
        assert_eq!(l.rate(7), 10.0);
        assert_eq!(l.c, p.alpha * PI * PI / 6.0);
        assert_eq!(l.b1, l.c);
        assert_eq!(l.b2, (2.0 * p.lambda_hat).max(p.alpha * tail_sum_inv4()));
        assert!(l.check(&m).is_empty());
        // q*(i) <= 2 lambda (i+3)^2
        for i in 1..m.states() {
            assert!(m.q_star(i) <= 2.0 * p.lambda_hat * ((i + 3) as f64).powi(2));
        }
    }

    #[test]
    fn truncated_defaults_validate() {
        let (m, _) = build_birth_death(&BirthDeathParams::with_cap(200)).unwrap();
        let rep = validate_model(&m, ROW_SUM_TOL);
        assert!(rep.is_ok(), "{:?}", rep.violations);
    }

    #[test]
    fn parameter_errors_name_the_condition() {
        let p = BirthDeathParams {
            lambda_hat: 1.5,
            ..Default::default()
        };
        let e = build_birth_death(&p).unwrap_err().to_string();
        assert!(e.contains("lambda_hat >= max{mu_hat, 2}"), "{e}");
        let p = BirthDeathParams {
            alpha: 100.0,
            ..Default::default()
        };
        let e = build_birth_death(&p).unwrap_err().to_string();
        assert!(e.contains("q(0|0,a,b) <= -3"), "{e}");
        let p = BirthDeathParams {
            p_hat: 1.0,
            ..Default::default()
        };
        assert!(build_birth_death(&p).is_err());
    }

    #[test]
    fn costs_nonnegative_and_zero_variant() {
        let (m, _) = build_birth_death(&BirthDeathParams::with_cap(30)).unwrap();
        for i in 0..m.states() {
            for a in 0..m.n_a(i) {
                for b in 0..m.n_b(i) {
                    assert!(m.cost(i, a, b) >= 0.0);
                }
            }
        }
        let p = BirthDeathParams {
            zero_cost: true,
            cap: 30,
            ..Default::default()
        };
        let (z, _) = build_birth_death(&p).unwrap();
        assert_eq!(z.max_cost(12), 0.0);
    }
}
