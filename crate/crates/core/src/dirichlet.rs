//! Dirichlet source problems on a finite domain `D`:
//!
//! ```text
//! sup_mu inf_nu [ sum_j phi(j) q(j|i,mu,nu) + c~(i,mu,nu) phi(i) ] = -g(i),  i in D,
//! phi = 0 outside D,
//! ```
//!
//! with a shifted cost `c~ <= -delta`. Each coordinate is a strictly
//! decreasing scalar equation `F(x) = -g(i)`; iterating those coordinate
//! solves is a contraction.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Domain;
use crate::matrix_game::{game_value, saddle_point, GameMatrix, MatrixGameError};
use crate::model::GameModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DirichletError {
    #[error("delta must be positive, got {0}")]
    Delta(f64),
    #[error("domain state {state} is outside the stored model (0..{states})")]
    OutOfRange { state: usize, states: usize },
    #[error("state {0} is not in the domain")]
    NotInDomain(usize),
    #[error("shifted cost at ({i},{a},{b}) is {value}, not below -delta = {}", -delta)]
    ShiftTooSmall {
        i: usize,
        a: usize,
        b: usize,
        value: f64,
        delta: f64,
    },
    #[error("vector has {got} entries for a domain of {expected} states")]
    Length { expected: usize, got: usize },
    #[error("F does not change sign at state {i} on [{lo}, {hi}]")]
    Bracket { i: usize, lo: f64, hi: f64 },
    #[error("no convergence after {iterations} iterations, residual {residual:e}")]
    IterationCap { iterations: usize, residual: f64 },
    #[error("singular linear system in strategy iteration")]
    Singular,
    #[error(transparent)]
    Game(#[from] MatrixGameError),
}

#[derive(Debug, Clone)]
struct LocalPair {
    // q(i|i,a,b) + c~(i,a,b)
    slope: f64,
    // (local index, q) for targets inside the domain
    off: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
struct LocalState {
    state: usize,
    na: usize,
    nb: usize,
    pairs: Vec<LocalPair>,
}

/// A Dirichlet problem on a finite domain. Vectors "on the domain" are
/// indexed by position in [`Domain::states`].
#[derive(Debug, Clone)]
pub struct DirichletProblem {
    domain: Domain,
    local: Vec<LocalState>,
    shift: f64,
    delta: f64,
    alpha1: f64,
    // min over the domain of -c~
    min_neg_ctilde: f64,
    g: Vec<f64>,
}

impl DirichletProblem {
    /// Uses the canonical shift `c~ = c - sup_D c - delta` and source `g = 0`.
    pub fn new(model: &GameModel, domain: &Domain, delta: f64) -> Result<Self, DirichletError> {
        let sup = domain
            .states()
            .iter()
            .filter(|&&i| i < model.states())
            .map(|&i| model.max_cost(i))
            .fold(f64::NEG_INFINITY, f64::max);
        Self::with_shift(model, domain, sup + delta, delta)
    }

    /// `c~ = c - shift`; fails unless `c~ <= -delta` everywhere on the domain.
    pub fn with_shift(model: &GameModel, domain: &Domain, shift: f64, delta: f64) -> Result<Self, DirichletError> {
        if !(delta > 0.0) {
            return Err(DirichletError::Delta(delta));
        }
        if domain.max_state() >= model.states() {
            return Err(DirichletError::OutOfRange {
                state: domain.max_state(),
                states: model.states(),
            });
        }
        let mut alpha1: f64 = 0.0;
        let mut min_neg_ctilde = f64::INFINITY;
        let mut local = Vec::with_capacity(domain.len());
        for &i in domain.states() {
            let (na, nb) = (model.n_a(i), model.n_b(i));
            let mut pairs = Vec::with_capacity(na * nb);
            for a in 0..na {
                for b in 0..nb {
                    let c = model.cost(i, a, b);
                    let ct = c - shift;
                    // c - (sup c + delta) can land a few ulps above -delta
                    let ulps = 4.0 * f64::EPSILON * (c.abs() + shift.abs());
                    if !(ct <= -delta + ulps) {
                        return Err(DirichletError::ShiftTooSmall { i, a, b, value: ct, delta });
                    }
                    let row = model.row(i, a, b);
                    let exit = -row.diag;
                    alpha1 = alpha1.max(exit / (exit - ct));
                    min_neg_ctilde = min_neg_ctilde.min(-ct);
                    let off = row
                        .off
                        .iter()
                        .filter_map(|&(j, q)| domain.index_of(j).map(|l| (l, q)))
                        .collect();
                    pairs.push(LocalPair {
                        slope: row.diag + ct,
                        off,
                    });
                }
            }
            local.push(LocalState { state: i, na, nb, pairs });
        }
        Ok(Self {
            g: vec![0.0; domain.len()],
            domain: domain.clone(),
            local,
            shift,
            delta,
            alpha1,
            min_neg_ctilde,
        })
    }

    pub fn with_source(mut self, g: Vec<f64>) -> Result<Self, DirichletError> {
        self.set_source(g)?;
        Ok(self)
    }

    pub fn set_source(&mut self, g: Vec<f64>) -> Result<(), DirichletError> {
        self.check_len(&g)?;
        self.g = g;
        Ok(())
    }

    pub fn source(&self) -> &[f64] {
        &self.g
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// `sup_D c + delta` for the canonical construction.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// A-priori contraction constant `max (-q(i|i,a,b)) / (-q(i|i,a,b) - c~(i,a,b))`.
    pub fn alpha1(&self) -> f64 {
        self.alpha1
    }

    fn check_len(&self, v: &[f64]) -> Result<(), DirichletError> {
        if v.len() != self.domain.len() {
            return Err(DirichletError::Length {
                expected: self.domain.len(),
                got: v.len(),
            });
        }
        Ok(())
    }

    fn local_index(&self, i: usize) -> Result<usize, DirichletError> {
        self.domain.index_of(i).ok_or(DirichletError::NotInDomain(i))
    }

    /// Entries `sum_{j != i} y_j q(j|i,a,b)` of the off-diagonal part.
    fn offdiag_payoffs(&self, k: usize, y: &[f64]) -> Vec<f64> {
        self.local[k]
            .pairs
            .iter()
            .map(|p| p.off.iter().map(|&(l, q)| y[l] * q).sum())
            .collect()
    }

    /// The game at `k` of the left-hand side of the equation at `phi`
    /// (diagonal included).
    fn equation_game(&self, k: usize, phi: &[f64]) -> Result<GameMatrix, DirichletError> {
        let st = &self.local[k];
        let a = self.offdiag_payoffs(k, phi);
        let data = a
            .iter()
            .zip(&st.pairs)
            .map(|(&v, p)| v + p.slope * phi[k])
            .collect();
        Ok(GameMatrix::new(st.na, st.nb, data)?)
    }
}

/// Root of `F(x) = target` at state `i`, where
/// `F(x) = val[ sum_{j != i, j in D} y_j q(j|i,a,b) + (q(i|i,a,b) + c~(i,a,b)) x ]`.
/// Returns `x` with `|F(x) - target| <= tol`, or the best point of a bracket
/// that has shrunk to a few ulps.
pub fn solve_f(problem: &DirichletProblem, i: usize, y: &[f64], target: f64, tol: f64) -> Result<f64, DirichletError> {
    problem.check_len(y)?;
    let k = problem.local_index(i)?;
    solve_f_local(problem, k, y, target, tol)
}

fn solve_f_local(p: &DirichletProblem, k: usize, y: &[f64], target: f64, tol: f64) -> Result<f64, DirichletError> {
    let st = &p.local[k];
    let a = p.offdiag_payoffs(k, y);
    let slopes: Vec<f64> = st.pairs.iter().map(|q| q.slope).collect();
    let f = |x: f64| -> Result<f64, DirichletError> {
        let data = a.iter().zip(&slopes).map(|(&v, &s)| v + s * x).collect();
        Ok(game_value(&GameMatrix::new(st.na, st.nb, data)?)? - target)
    };
    let va = game_value(&GameMatrix::new(st.na, st.nb, a.clone())?)?;
    let d = va - target;
    if d == 0.0 {
        return Ok(0.0);
    }
    let smin = slopes.iter().copied().fold(f64::INFINITY, f64::min);
    let smax = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if smin == smax {
        // F is affine
        return Ok(-d / smin);
    }
    // val(A) + x*smin <= F(x) <= val(A) + x*smax for x >= 0 (reversed for x < 0)
    let (x1, x2) = (-d / smin, -d / smax);
    let (mut lo, mut hi) = (x1.min(x2), x1.max(x2));
    let mut flo = f(lo)?;
    let mut fhi = f(hi)?;
    // rounding in the bounds: widen slightly if needed
    for _ in 0..8 {
        if flo >= 0.0 && fhi <= 0.0 {
            break;
        }
        let w = (hi - lo).max(f64::EPSILON * lo.abs().max(hi.abs()).max(1.0));
        if flo < 0.0 {
            lo -= w;
            flo = f(lo)?;
        }
        if fhi > 0.0 {
            hi += w;
            fhi = f(hi)?;
        }
    }
    if !(flo >= 0.0 && fhi <= 0.0) {
        return Err(DirichletError::Bracket { i: st.state, lo, hi });
    }
    if flo.abs() <= tol {
        return Ok(lo);
    }
    if fhi.abs() <= tol {
        return Ok(hi);
    }
    // Illinois regula falsi, with bisection when the bracket stalls
    let mut side = 0i8;
    for it in 0..400 {
        let width = hi - lo;
        let mut x = if it % 4 == 3 {
            0.5 * (lo + hi)
        } else {
            hi - fhi * (hi - lo) / (fhi - flo)
        };
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        if !(x > lo && x < hi) {
            // bracket is down to adjacent floats
            return Ok(if flo.abs() <= fhi.abs() { lo } else { hi });
        }
        let fx = f(x)?;
        if fx.abs() <= tol {
            return Ok(x);
        }
        if fx > 0.0 {
            lo = x;
            flo = fx;
            if side == 1 {
                fhi *= 0.5;
            }
            side = 1;
        } else {
            hi = x;
            fhi = fx;
            if side == -1 {
                flo *= 0.5;
            }
            side = -1;
        }
        if hi - lo >= width {
            side = 0;
        }
    }
    Ok(if flo.abs() <= fhi.abs() { lo } else { hi })
}

/// `T̂ phi`: every coordinate solves its scalar equation with the other
/// coordinates frozen at `phi` and target `-g(i)`.
pub fn apply_t_hat(problem: &DirichletProblem, phi: &[f64], tol: f64) -> Result<Vec<f64>, DirichletError> {
    problem.check_len(phi)?;
    (0..problem.local.len())
        .into_par_iter()
        .map(|k| solve_f_local(problem, k, phi, -problem.g[k], tol))
        .collect()
}

/// Residual of the equation itself, `val[...] + g(i)`, per domain state.
pub fn equation_residual(problem: &DirichletProblem, phi: &[f64]) -> Result<Vec<f64>, DirichletError> {
    problem.check_len(phi)?;
    (0..problem.local.len())
        .into_par_iter()
        .map(|k| Ok(game_value(&problem.equation_game(k, phi)?)? + problem.g[k]))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirichletMethod {
    /// `phi <- T̂ phi`, all coordinates from the previous iterate.
    Jacobi,
    /// Coordinates updated in place in ascending state order.
    GaussSeidel,
    /// Newton steps on the piecewise-linear equation: fix the saddle
    /// strategies at the current iterate, solve the resulting linear system,
    /// accept if the equation residual halves (backtracking otherwise).
    StrategyIteration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirichletOptions {
    pub method: DirichletMethod,
    /// Target distance to the fixed point (sup norm over the domain).
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DirichletOptions {
    fn default() -> Self {
        Self {
            method: DirichletMethod::Jacobi,
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirichletStats {
    pub method: DirichletMethod,
    pub iterations: usize,
    /// A-priori contraction bound.
    pub alpha1: f64,
    /// `max_k |phi_{k+1} - phi_k| / |phi_k - phi_{k-1}|` over steps large
    /// enough for root-finding noise not to matter. Fixed-point methods only.
    pub measured_ratio: Option<f64>,
    /// `|T̂ phi - phi|` at the returned iterate (an upper bound for
    /// strategy iteration, derived from the equation residual).
    pub residual: f64,
    /// Upper bound on the distance from the returned iterate to the fixed point.
    pub distance_bound: f64,
    pub linear_solves: usize,
    pub fallback_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirichletSolution {
    /// Indexed by domain position.
    pub phi: Vec<f64>,
    pub stats: DirichletStats,
}

/// Solves the problem starting from `phi = 0`.
pub fn dirichlet_solve(problem: &DirichletProblem, opts: &DirichletOptions) -> Result<DirichletSolution, DirichletError> {
    dirichlet_solve_from(problem, vec![0.0; problem.domain.len()], opts)
}

/// Solves the problem from an initial iterate.
pub fn dirichlet_solve_from(
    problem: &DirichletProblem,
    init: Vec<f64>,
    opts: &DirichletOptions,
) -> Result<DirichletSolution, DirichletError> {
    problem.check_len(&init)?;
    match opts.method {
        DirichletMethod::Jacobi | DirichletMethod::GaussSeidel => fixed_point(problem, init, opts),
        DirichletMethod::StrategyIteration => strategy_iteration(problem, init, opts),
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn min_abs_slope(p: &DirichletProblem) -> f64 {
    p.local
        .iter()
        .flat_map(|s| s.pairs.iter().map(|q| -q.slope))
        .fold(f64::INFINITY, f64::min)
}

fn fixed_point(p: &DirichletProblem, mut phi: Vec<f64>, opts: &DirichletOptions) -> Result<DirichletSolution, DirichletError> {
    let a1 = p.alpha1;
    let step_tol = if a1 > 0.0 { opts.tol * (1.0 - a1) / a1 } else { opts.tol };
    // root accuracy in x is |F - target| / min|slope|
    let slope = min_abs_slope(p);
    let f_tol = 1e-6 * step_tol * slope;
    let root_err = f_tol / slope;
    let mut measured: Option<f64> = None;
    let mut prev_step: Option<f64> = None;
    for it in 1..=opts.max_iter {
        let next = match opts.method {
            DirichletMethod::GaussSeidel => {
                let mut cur = phi.clone();
                for k in 0..cur.len() {
                    cur[k] = solve_f_local(p, k, &cur, -p.g[k], f_tol)?;
                }
                cur
            }
            _ => apply_t_hat(p, &phi, f_tol)?,
        };
        let step = sup_dist(&next, &phi);
        if let Some(ps) = prev_step {
            if ps >= 1e7 * root_err && ps > 0.0 {
                let r = step / ps;
                measured = Some(measured.map_or(r, |m: f64| m.max(r)));
            }
        }
        phi = next;
        if step <= step_tol {
            let check = match opts.method {
                DirichletMethod::GaussSeidel => {
                    let mut cur = phi.clone();
                    for k in 0..cur.len() {
                        cur[k] = solve_f_local(p, k, &cur, -p.g[k], f_tol)?;
                    }
                    cur
                }
                _ => apply_t_hat(p, &phi, f_tol)?,
            };
            let residual = sup_dist(&check, &phi);
            let distance_bound = if a1 < 1.0 { residual / (1.0 - a1) } else { f64::INFINITY };
            return Ok(DirichletSolution {
                phi,
                stats: DirichletStats {
                    method: opts.method,
                    iterations: it,
                    alpha1: a1,
                    measured_ratio: measured,
                    residual,
                    distance_bound,
                    linear_solves: 0,
                    fallback_steps: 0,
                },
            });
        }
        prev_step = Some(step);
    }
    Err(DirichletError::IterationCap {
        iterations: opts.max_iter,
        residual: prev_step.unwrap_or(f64::NAN),
    })
}

struct Linearization {
    residual: Vec<f64>,
    mu: Vec<Vec<f64>>,
    nu: Vec<Vec<f64>>,
}

fn linearize(p: &DirichletProblem, phi: &[f64]) -> Result<Linearization, DirichletError> {
    let parts: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..p.local.len())
        .into_par_iter()
        .map(|k| {
            let s = saddle_point(&p.equation_game(k, phi)?)?;
            Ok((s.value + p.g[k], s.row_strategy, s.col_strategy))
        })
        .collect::<Result<_, DirichletError>>()?;
    let mut lin = Linearization {
        residual: Vec::with_capacity(parts.len()),
        mu: Vec::with_capacity(parts.len()),
        nu: Vec::with_capacity(parts.len()),
    };
    for (r, mu, nu) in parts {
        lin.residual.push(r);
        lin.mu.push(mu);
        lin.nu.push(nu);
    }
    Ok(lin)
}

fn newton_candidate(p: &DirichletProblem, lin: &Linearization) -> Result<Vec<f64>, DirichletError> {
    let n = p.local.len();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for (k, st) in p.local.iter().enumerate() {
        for a in 0..st.na {
            let wa = lin.mu[k][a];
            if wa == 0.0 {
                continue;
            }
            for b in 0..st.nb {
                let w = wa * lin.nu[k][b];
                if w == 0.0 {
                    continue;
                }
                let pair = &st.pairs[a * st.nb + b];
                l[(k, k)] += w * pair.slope;
                for &(j, q) in &pair.off {
                    l[(k, j)] += w * q;
                }
            }
        }
    }
    let rhs = DVector::from_iterator(n, p.g.iter().map(|g| -g));
    let x = l.lu().solve(&rhs).ok_or(DirichletError::Singular)?;
    Ok(x.iter().copied().collect())
}

fn strategy_iteration(
    p: &DirichletProblem,
    mut phi: Vec<f64>,
    opts: &DirichletOptions,
) -> Result<DirichletSolution, DirichletError> {
    // |phi - phi*| <= |R(phi)| / min(-c~); |T̂phi - phi| <= |R(phi)| / min|slope|
    let target = opts.tol * p.min_neg_ctilde;
    let slope = min_abs_slope(p);
    let mut lin = linearize(p, &phi)?;
    let mut r = sup_norm(&lin.residual);
    let (mut solves, mut fallbacks) = (0, 0);
    let mut it = 0;
    while r > target {
        if it == opts.max_iter {
            return Err(DirichletError::IterationCap {
                iterations: it,
                residual: r / slope,
            });
        }
        it += 1;
        let cand = newton_candidate(p, &lin)?;
        solves += 1;
        let cl = linearize(p, &cand)?;
        let cr = sup_norm(&cl.residual);
        if cl.mu == lin.mu && cl.nu == lin.nu {
            // the candidate solves the system built from its own saddle
            // strategies: it is the solution up to rounding
            phi = cand;
            r = cr;
            break;
        }
        let mut accepted = false;
        if cr <= 0.5 * r || cr <= target {
            phi = cand.clone();
            lin = cl;
            r = cr;
            accepted = true;
        }
        let mut t = 0.5;
        for _ in 0..12 {
            if accepted {
                break;
            }
            let trial: Vec<f64> = phi.iter().zip(&cand).map(|(x, c)| x + t * (c - x)).collect();
            let tl = linearize(p, &trial)?;
            let tr = sup_norm(&tl.residual);
            if tr <= 0.5 * r || tr <= target {
                phi = trial;
                lin = tl;
                r = tr;
                accepted = true;
            }
            t *= 0.5;
        }
        if !accepted {
            fallbacks += 1;
            let f_tol = 1e-3 * target;
            phi = apply_t_hat(p, &phi, f_tol)?;
            lin = linearize(p, &phi)?;
            r = sup_norm(&lin.residual);
        }
    }
    Ok(DirichletSolution {
        phi,
        stats: DirichletStats {
            method: opts.method,
            iterations: it,
            alpha1: p.alpha1,
            measured_ratio: None,
            residual: r / slope,
            distance_bound: r / p.min_neg_ctilde,
            linear_solves: solves,
            fallback_steps: fallbacks,
        },
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::test_models::{labels, uncontrolled};
    use crate::model::RateRow;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random controlled model on `n` states with up to `k` actions each.
    pub fn random_model(rng: &mut ChaCha8Rng, n: usize, k: usize) -> GameModel {
        let mut aa = Vec::new();
        let mut bb = Vec::new();
        let mut rows = Vec::new();
        let mut cost = Vec::new();
        for i in 0..n {
            let na = rng.gen_range(1..=k);
            let nb = rng.gen_range(1..=k);
            aa.push(labels(na, "a"));
            bb.push(labels(nb, "b"));
            let mut r = Vec::new();
            let mut c = Vec::new();
            for _ in 0..na * nb {
                let mut off = Vec::new();
                for j in 0..n {
                    if j != i && rng.gen_bool(0.5) {
                        off.push((j, rng.gen_range(0.0..2.0)));
                    }
                }
                r.push(RateRow::balanced(off));
                c.push(rng.gen_range(0.0..3.0));
            }
            rows.push(r);
            cost.push(c);
        }
        GameModel::new("random", 0, false, aa, bb, rows, cost).unwrap()
    }

    fn single(q: f64, c: f64) -> GameModel {
        GameModel::new(
            "single",
            0,
            false,
            vec![labels(1, "a"); 2],
            vec![labels(1, "b"); 2],
            vec![
                vec![RateRow::balanced(vec![(1, q)])],
                vec![RateRow::balanced(vec![(0, 1.0)])],
            ],
            vec![vec![c], vec![0.0]],
        )
        .unwrap()
    }

    #[test]
    fn linear_one_action_root() {
        // F(x) = (q(i|i) + c~) x = -3x
        let m = single(2.0, 0.0);
        let d = Domain::range(0, 0);
        let p = DirichletProblem::with_shift(&m, &d, 1.0, 0.5).unwrap();
        assert_eq!(solve_f(&p, 0, &[0.0], -3.0, 1e-14).unwrap(), 1.0);
        assert_eq!(solve_f(&p, 0, &[0.0], 0.0, 1e-14).unwrap(), 0.0);
        assert!(matches!(solve_f(&p, 1, &[0.0], 0.0, 1e-14), Err(DirichletError::NotInDomain(1))));
    }

    #[test]
    fn single_state_closed_form() {
        // q = 2, c~ = -1, g = 3: phi = g / (q - c~) = 1
        let m = single(2.0, 0.0);
        let d = Domain::range(0, 0);
        let p = DirichletProblem::with_shift(&m, &d, 1.0, 0.5)
            .unwrap()
            .with_source(vec![3.0])
            .unwrap();
        for phi in [0.0, 5.0, -7.0] {
            assert!((apply_t_hat(&p, &[phi], 1e-14).unwrap()[0] - 1.0).abs() < 1e-15);
        }
        let s = dirichlet_solve(&p, &DirichletOptions::default()).unwrap();
        assert!((s.phi[0] - 1.0).abs() < 1e-12);
        assert!((p.alpha1() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_source_zero_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_model(&mut rng, 6, 3);
        let d = Domain::range(0, 4);
        let p = DirichletProblem::new(&m, &d, 0.5).unwrap();
        assert!(apply_t_hat(&p, &[0.0; 5], 1e-14).unwrap().iter().all(|&x| x == 0.0));
        for method in [DirichletMethod::Jacobi, DirichletMethod::StrategyIteration] {
            let s = dirichlet_solve(&p, &DirichletOptions { method, ..Default::default() }).unwrap();
            assert!(s.phi.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn uncontrolled_two_state_matches_linear_solve() {
        let m = uncontrolled(&[vec![-1.0, 1.0], vec![2.0, -2.0]], &[0.5, 1.0]);
        let d = Domain::range(0, 1);
        let p = DirichletProblem::new(&m, &d, 1.0)
            .unwrap()
            .with_source(vec![1.0, 2.0])
            .unwrap();
        // (Q + diag(c - 2)) phi = -g
        let l = DMatrix::from_row_slice(2, 2, &[-1.0 - 1.5, 1.0, 2.0, -2.0 - 1.0]);
        let want = l.lu().solve(&DVector::from_vec(vec![-1.0, -2.0])).unwrap();
        for method in [
            DirichletMethod::Jacobi,
            DirichletMethod::GaussSeidel,
            DirichletMethod::StrategyIteration,
        ] {
            let s = dirichlet_solve(&p, &DirichletOptions { method, ..Default::default() }).unwrap();
            assert!((s.phi[0] - want[0]).abs() < 1e-10, "{method:?}");
            assert!((s.phi[1] - want[1]).abs() < 1e-10, "{method:?}");
        }
    }

    #[test]
    fn solve_f_matches_grid_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let m = random_model(&mut rng, 4, 2);
            let d = Domain::range(0, 3);
            let p = DirichletProblem::new(&m, &d, 0.5).unwrap();
            let y: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let target = rng.gen_range(-2.0..2.0);
            let x = solve_f(&p, 2, &y, target, 1e-13).unwrap();
            // scan F on a grid, refine around the sign change
            let st = &p.local[2];
            let a = p.offdiag_payoffs(2, &y);
            let f = |x: f64| {
                let data = a.iter().zip(&st.pairs).map(|(&v, q)| v + q.slope * x).collect();
                game_value(&GameMatrix::new(st.na, st.nb, data).unwrap()).unwrap() - target
            };
            let (mut lo, mut hi) = (-100.0, 100.0);
            for _ in 0..6 {
                let h = (hi - lo) / 1000.0;
                let k = (0..1000).find(|&k| f(lo + (k + 1) as f64 * h) <= 0.0).unwrap();
                let nlo = lo + k as f64 * h;
                hi = nlo + h;
                lo = nlo;
            }
            assert!((x - 0.5 * (lo + hi)).abs() < 1e-8, "{x} vs [{lo}, {hi}]");
        }
    }

    #[test]
    fn shift_violation_rejected() {
        let m = single(2.0, 1.0);
        let d = Domain::range(0, 0);
        assert!(matches!(
            DirichletProblem::with_shift(&m, &d, 1.2, 0.5),
            Err(DirichletError::ShiftTooSmall { i: 0, .. })
        ));
        assert!(matches!(DirichletProblem::new(&m, &d, 0.0), Err(DirichletError::Delta(_))));
    }

    #[test]
    fn canonical_shift_survives_rounding() {
        // with delta = 0.1, c~ at the maximizing pair used to land a few ulps
        // above -delta
        let (m, _) = crate::model::build_birth_death(&crate::model::BirthDeathParams::with_cap(31)).unwrap();
        let d = Domain::range(0, 30);
        for delta in [0.1, 0.3, 1.0, 1e-3] {
            assert!(DirichletProblem::new(&m, &d, delta).is_ok(), "delta {delta}");
        }
    }

    #[test]
    fn f_strictly_decreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_model(&mut rng, 5, 3);
        let d = Domain::range(0, 4);
        let delta = 0.5;
        let p = DirichletProblem::new(&m, &d, delta).unwrap();
        let y = vec![0.3, -0.2, 1.0, 0.0, 2.0];
        for k in 0..5 {
            let a = p.offdiag_payoffs(k, &y);
            let st = &p.local[k];
            let f = |x: f64| {
                let data = a.iter().zip(&st.pairs).map(|(&v, q)| v + q.slope * x).collect();
                game_value(&GameMatrix::new(st.na, st.nb, data).unwrap()).unwrap()
            };
            for _ in 0..50 {
                let x1 = rng.gen_range(-5.0..5.0);
                let x2 = x1 + rng.gen_range(0.0..3.0);
                assert!(f(x1) - f(x2) >= delta * (x2 - x1) - 1e-12);
            }
        }
    }

    #[test]
    fn order_preserving_and_homogeneous() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let m = random_model(&mut rng, 6, 3);
            let d = Domain::range(0, 5);
            let g1: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..2.0)).collect();
            let g2: Vec<f64> = g1.iter().map(|g| g - rng.gen_range(0.0..1.0)).collect();
            let opts = DirichletOptions::default();
            let base = DirichletProblem::new(&m, &d, 0.5).unwrap();
            let s1 = dirichlet_solve(&base.clone().with_source(g1.clone()).unwrap(), &opts).unwrap();
            let s2 = dirichlet_solve(&base.clone().with_source(g2).unwrap(), &opts).unwrap();
            assert!(s1.phi.iter().zip(&s2.phi).all(|(a, b)| *a >= b - 1e-10));
            let lam = 3.7;
            let g3: Vec<f64> = g1.iter().map(|g| lam * g).collect();
            let s3 = dirichlet_solve(&base.clone().with_source(g3).unwrap(), &opts).unwrap();
            assert!(s1.phi.iter().zip(&s3.phi).all(|(a, b)| (lam * a - b).abs() <= 1e-10 * lam));
        }
    }

    #[test]
    fn methods_agree_and_ratio_honors_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let m = random_model(&mut rng, 12, 3);
            let d = Domain::range(0, 9);
            let g: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..2.0)).collect();
            let p = DirichletProblem::new(&m, &d, 0.5).unwrap().with_source(g).unwrap();
            let mut sols = Vec::new();
            for method in [
                DirichletMethod::Jacobi,
                DirichletMethod::GaussSeidel,
                DirichletMethod::StrategyIteration,
            ] {
                let s = dirichlet_solve(&p, &DirichletOptions { method, ..Default::default() }).unwrap();
                assert!(s.stats.residual <= 1e-10, "{method:?}: {:?}", s.stats);
                if let Some(r) = s.stats.measured_ratio {
                    assert!(r <= s.stats.alpha1 + 1e-6, "{:?}", s.stats);
                }
                sols.push(s.phi);
            }
            assert!(sup_dist(&sols[0], &sols[1]) < 1e-9);
            assert!(sup_dist(&sols[0], &sols[2]) < 1e-9);
        }
    }
}
