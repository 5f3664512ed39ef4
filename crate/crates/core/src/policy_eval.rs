//! Fixed strategy pairs: the Perron eigenpair of the twisted generator
//! `Q^pi + diag(c^pi)` on a Dirichlet truncation, single-state deviation
//! sweeps certifying a saddle point, and a Monte Carlo spot check of the
//! exit-time bound `E exp(int_0^tau lhat) V(xi_tau) <= V(i)`.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Domain;
use crate::format::fmt_f64;
use crate::model::{GameModel, LyapunovData};
use crate::simulate::{trajectory_rng, MixedChain, SimError, MAX_EXIT_FRACTION};
use crate::strategy::{Player, StationaryStrategy, StrategyError};

/// Default tolerance for unilateral deviations.
pub const DEFAULT_TOL_DEV: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("support graph of the pair is reducible on the domain; components: {components:?}")]
    Reducible { components: Vec<Vec<usize>> },
    #[error("Perron iteration stopped after {iterations} iterations at residual {residual:e}")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("spot check: {0}")]
    Spot(String),
}

/// Which iteration produced the Perron pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerronMethod {
    /// Inverse iteration shifted at the Collatz-Wielandt upper bound (Noda).
    ShiftedInverse,
    /// Power iteration on `M + sI`, `s = 1.05 max q*`.
    Power,
}

/// Dense `M = Q^pi + diag(c^pi)` restricted to a domain; mass leaving the
/// domain is dropped (killing).
#[derive(Debug, Clone)]
pub struct TwistedGenerator {
    domain: Domain,
    m: DMatrix<f64>,
    shift: f64,
}

impl TwistedGenerator {
    pub fn new(
        model: &GameModel,
        pi1: &StationaryStrategy,
        pi2: &StationaryStrategy,
        domain: &Domain,
    ) -> Result<Self, PolicyError> {
        pi1.check(model, Player::One, domain)?;
        pi2.check(model, Player::Two, domain)?;
        let n = domain.len();
        let mut g = Self {
            domain: domain.clone(),
            m: DMatrix::zeros(n, n),
            shift: 1.05 * domain.states().iter().map(|&i| model.q_star(i)).fold(0.0, f64::max),
        };
        for (k, &i) in domain.states().iter().enumerate() {
            g.set_row(model, k, i, pi1.get(i).expect("checked"), pi2.get(i).expect("checked"));
        }
        Ok(g)
    }

    fn set_row(&mut self, model: &GameModel, k: usize, i: usize, mu: &[f64], nu: &[f64]) {
        let (row, c) = model.mixed(i, mu, nu);
        self.m.row_mut(k).fill(0.0);
        self.m[(k, k)] = row.diag + c;
        for (j, q) in row.off {
            if let Some(l) = self.domain.index_of(j) {
                self.m[(k, l)] += q;
            }
        }
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// Strongly connected components of the off-diagonal support, as states.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.domain.len();
        let mut g = DiGraph::<(), ()>::with_capacity(n, 0);
        let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
        for k in 0..n {
            for l in 0..n {
                if k != l && self.m[(k, l)] > 0.0 {
                    g.add_edge(nodes[k], nodes[l], ());
                }
            }
        }
        let st = self.domain.states();
        let mut comps: Vec<Vec<usize>> = tarjan_scc(&g)
            .into_iter()
            .map(|c| {
                let mut v: Vec<usize> = c.into_iter().map(|x| st[x.index()]).collect();
                v.sort_unstable();
                v
            })
            .collect();
        comps.sort();
        comps
    }

    // Collatz-Wielandt bounds of a positive vector and the residual at their midpoint.
    fn bounds(&self, x: &DVector<f64>) -> (f64, f64, f64) {
        let r = &self.m * x;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for k in 0..x.len() {
            let q = r[k] / x[k];
            lo = lo.min(q);
            hi = hi.max(q);
        }
        let rho = 0.5 * (lo + hi);
        let xmax = x.amax();
        let res = (0..x.len()).map(|k| (r[k] - rho * x[k]).abs()).fold(0.0, f64::max) / xmax;
        (lo, hi, res)
    }

    /// Perron root and vector. Tries the shifted inverse iteration first and
    /// falls back to plain power iteration on `M + sI`. `init` (indexed by
    /// domain position) must be positive to be used.
    pub fn perron(&self, tol: f64, init: Option<&[f64]>) -> Result<PerronPair, PolicyError> {
        let n = self.domain.len();
        let mut x = match init {
            Some(v) if v.len() == n && v.iter().all(|&e| e > 0.0 && e.is_finite()) => DVector::from_column_slice(v),
            _ => DVector::from_element(n, 1.0),
        };
        let mut iterations = 0;
        for _ in 0..100 {
            let (lo, hi, res) = self.bounds(&x);
            if res <= tol {
                return Ok(self.pair(x, lo, hi, res, iterations, PerronMethod::ShiftedInverse));
            }
            iterations += 1;
            let a = DMatrix::from_diagonal_element(n, n, hi) - &self.m;
            let Some(y) = a.lu().solve(&x) else { break };
            if !y.iter().all(|&e| e > 0.0 && e.is_finite()) {
                break;
            }
            let ymax = y.amax();
            let next = y / ymax;
            if next == x {
                break;
            }
            x = next;
        }
        self.power(tol, x, iterations, 2_000_000)
    }

    fn power(&self, tol: f64, mut x: DVector<f64>, done: usize, max_iter: usize) -> Result<PerronPair, PolicyError> {
        if !x.iter().all(|&e| e > 0.0) {
            x = DVector::from_element(x.len(), 1.0);
        }
        let a = &self.m + DMatrix::from_diagonal_element(x.len(), x.len(), self.shift);
        let mut res = f64::INFINITY;
        for it in 0..max_iter {
            if it % 16 == 0 {
                let (lo, hi, r) = self.bounds(&x);
                res = r;
                if r <= tol {
                    return Ok(self.pair(x, lo, hi, r, done + it, PerronMethod::Power));
                }
            }
            let y = &a * &x;
            let ymax = y.amax();
            if !(ymax > 0.0) {
                break;
            }
            x = y / ymax;
        }
        if !x.iter().all(|&e| e > 0.0) {
            return Err(PolicyError::Reducible {
                components: self.components(),
            });
        }
        Err(PolicyError::NotConverged {
            iterations: done + max_iter,
            residual: res,
        })
    }

    fn pair(&self, x: DVector<f64>, lo: f64, hi: f64, residual: f64, iterations: usize, method: PerronMethod) -> PerronPair {
        PerronPair {
            rho: 0.5 * (lo + hi),
            rho_bounds: (lo, hi),
            psi: x.iter().copied().collect(),
            residual,
            iterations,
            method,
        }
    }

    /// Gershgorin enclosure of the spectrum of `M`.
    pub fn gershgorin(&self) -> (f64, f64) {
        let n = self.domain.len();
        (0..n).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), k| {
            let off: f64 = (0..n).filter(|&l| l != k).map(|l| self.m[(k, l)].abs()).sum();
            let d = self.m[(k, k)];
            (lo.min(d - off), hi.max(d + off))
        })
    }
}

/// Domain-indexed Perron pair, `max psi = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerronPair {
    pub rho: f64,
    /// Collatz-Wielandt bracket `[min (M psi)/psi, max (M psi)/psi]`.
    pub rho_bounds: (f64, f64),
    pub psi: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub method: PerronMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    pub domain: Domain,
    pub rho_pi: f64,
    /// Indexed by stored state, zero off the domain; `psi(i0) = 1` when
    /// `i0` is in the domain, else `max psi = 1`.
    pub psi_pi: Vec<f64>,
    /// `|M psi - rho psi|_inf / |psi|_inf`.
    pub residual: f64,
    pub rho_bounds: (f64, f64),
    pub gershgorin: (f64, f64),
    pub iterations: usize,
    pub method: PerronMethod,
}

/// Perron eigenpair of `Q^pi + diag(c^pi)` on `domain` with killing outside.
/// Rows are mixed bilinearly under `(pi1(i), pi2(i))`. Errors if the support
/// graph is not strongly connected on the domain.
pub fn evaluate_pair(
    model: &GameModel,
    pi1: &StationaryStrategy,
    pi2: &StationaryStrategy,
    domain: &Domain,
    tol: f64,
) -> Result<PolicyEvaluation, PolicyError> {
    let g = TwistedGenerator::new(model, pi1, pi2, domain)?;
    let comps = g.components();
    if comps.len() > 1 {
        return Err(PolicyError::Reducible { components: comps });
    }
    let p = g.perron(tol, None)?;
    Ok(finish(model, &g, p))
}

fn finish(model: &GameModel, g: &TwistedGenerator, p: PerronPair) -> PolicyEvaluation {
    let d = g.domain();
    let norm = d.index_of(model.reference_state).map_or(1.0, |k| p.psi[k]);
    let mut psi = vec![0.0; model.states()];
    for (k, &i) in d.states().iter().enumerate() {
        psi[i] = p.psi[k] / norm;
    }
    PolicyEvaluation {
        domain: d.clone(),
        rho_pi: p.rho,
        psi_pi: psi,
        residual: p.residual,
        rho_bounds: p.rho_bounds,
        gershgorin: g.gershgorin(),
        iterations: p.iterations,
        method: p.method,
    }
}

/// One tested unilateral deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub state: usize,
    pub player: u8,
    pub action: usize,
    pub label: String,
    pub rho_deviated: f64,
    /// `rho - rho_dev` for player 1, `rho_dev - rho` for player 2; a
    /// deviation violates the saddle property when `slack < -tol_dev`.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub domain: Domain,
    pub rho: f64,
    pub tol_dev: f64,
    pub tested: usize,
    pub deviations: Vec<Deviation>,
    pub violations: Vec<Deviation>,
    /// Smallest slack per player (`+inf` when nothing was tested).
    pub worst_slack_player1: f64,
    pub worst_slack_player2: f64,
    /// Deviations whose evaluation failed, with the reason.
    pub failures: Vec<(usize, u8, usize, String)>,
    pub passed: bool,
}

impl DeviationReport {
    /// CSV with columns `state,player,action,rho_deviated,slack`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "state,player,action,rho_deviated,slack")?;
        for d in &self.deviations {
            writeln!(
                w,
                "{},{},{},{},{}",
                d.state,
                d.player,
                d.label,
                fmt_f64(d.rho_deviated),
                fmt_f64(d.slack)
            )?;
        }
        Ok(())
    }
}

/// Replaces the pair's action at one state by each pure action in turn, for
/// both players, and re-evaluates. Player 1 (maximizer) must not gain more
/// than `tol_dev`, player 2 must not lower `rho` by more than `tol_dev`.
pub fn deviation_sweep(
    model: &GameModel,
    pi1: &StationaryStrategy,
    pi2: &StationaryStrategy,
    domain: &Domain,
    tol: f64,
    tol_dev: f64,
) -> Result<DeviationReport, PolicyError> {
    let base_gen = TwistedGenerator::new(model, pi1, pi2, domain)?;
    let comps = base_gen.components();
    if comps.len() > 1 {
        return Err(PolicyError::Reducible { components: comps });
    }
    let base = base_gen.perron(tol, None)?;
    let mut jobs = Vec::new();
    for (k, &i) in domain.states().iter().enumerate() {
        if model.n_a(i) > 1 {
            jobs.extend((0..model.n_a(i)).map(|a| (k, i, Player::One, a)));
        }
        if model.n_b(i) > 1 {
            jobs.extend((0..model.n_b(i)).map(|b| (k, i, Player::Two, b)));
        }
    }
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(k, i, player, action)| {
            let mut g = base_gen.clone();
            let mut pure = vec![0.0; player.actions(model, i)];
            pure[action] = 1.0;
            match player {
                Player::One => g.set_row(model, k, i, &pure, pi2.get(i).expect("checked")),
                Player::Two => g.set_row(model, k, i, pi1.get(i).expect("checked"), &pure),
            }
            (k, i, player, action, g.perron(tol, Some(&base.psi)))
        })
        .collect();

    let mut report = DeviationReport {
        domain: domain.clone(),
        rho: base.rho,
        tol_dev,
        tested: 0,
        deviations: Vec::new(),
        violations: Vec::new(),
        worst_slack_player1: f64::INFINITY,
        worst_slack_player2: f64::INFINITY,
        failures: Vec::new(),
        passed: true,
    };
    for (_, i, player, action, r) in results {
        report.tested += 1;
        match r {
            Ok(p) => {
                let slack = match player {
                    Player::One => base.rho - p.rho,
                    Player::Two => p.rho - base.rho,
                };
                let d = Deviation {
                    state: i,
                    player: player.number(),
                    action,
                    label: player.labels(model, i)[action].clone(),
                    rho_deviated: p.rho,
                    slack,
                };
                match player {
                    Player::One => report.worst_slack_player1 = report.worst_slack_player1.min(slack),
                    Player::Two => report.worst_slack_player2 = report.worst_slack_player2.min(slack),
                }
                if slack < -tol_dev {
                    report.violations.push(d.clone());
                }
                report.deviations.push(d);
            }
            Err(e) => report.failures.push((i, player.number(), action, e.to_string())),
        }
    }
    report
        .violations
        .sort_by(|a, b| a.slack.total_cmp(&b.slack).then(a.state.cmp(&b.state)));
    report.passed = report.violations.is_empty() && report.failures.is_empty();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotEntry {
    pub state: usize,
    pub v: f64,
    pub estimate: f64,
    pub se: f64,
    /// `V(i) (1 + 3 se / estimate)`.
    pub bound: f64,
    pub passed: bool,
    /// Trajectories that ran out of jumps or left the strategies' region
    /// before reaching the target set.
    pub exhausted_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotReport {
    pub target_set: Domain,
    pub trajectories: usize,
    pub seed: u64,
    pub entries: Vec<SpotEntry>,
    pub passed: bool,
    pub caveat: String,
}

/// Monte Carlo estimate of `E_i exp(int_0^tau r(xi_s) ds) V(xi_tau)`, `tau`
/// the hitting time of `target`, `r = lhat` (or `gamma_hat`), for every start
/// state. Passes when the estimate is below `V(i)(1 + 3 SE_rel)`.
#[allow(clippy::too_many_arguments)]
pub fn exit_bound_spotcheck(
    model: &GameModel,
    lyap: &LyapunovData,
    pi1: &StationaryStrategy,
    pi2: &StationaryStrategy,
    target: &Domain,
    starts: &[usize],
    n: usize,
    seed: u64,
    max_jumps: usize,
) -> Result<SpotReport, PolicyError> {
    if let Some(k) = lyap.k_hat.iter().find(|&&k| !target.contains(k)) {
        return Err(PolicyError::Spot(format!("K_hat state {k} is not in the target set")));
    }
    if n < 2 {
        return Err(PolicyError::Sim(SimError::TooFew(n)));
    }
    let chain = MixedChain::new(model, pi1, pi2, None)?;
    let mut entries = Vec::new();
    for (s, &i) in starts.iter().enumerate() {
        if target.contains(i) {
            return Err(PolicyError::Spot(format!("start state {i} lies in the target set")));
        }
        if !chain.contains(i) {
            return Err(PolicyError::Sim(SimError::BadStart(i)));
        }
        // one stream block per start state
        let logs: Vec<Option<f64>> = (0..n)
            .into_par_iter()
            .map(|k| {
                let mut rng = trajectory_rng(seed, ((s as u64) << 40) | k as u64);
                let (mut x, mut acc) = (i, 0.0);
                for _ in 0..max_jumps {
                    let (h, j) = chain.draw_jump(x, &mut rng)?;
                    acc += lyap.rate(x) * h;
                    if target.contains(j) {
                        return Some(acc + lyap.v[j].ln());
                    }
                    if !chain.contains(j) {
                        return None;
                    }
                    x = j;
                }
                None
            })
            .collect();
        let done: Vec<f64> = logs.iter().flatten().copied().collect();
        let exhausted = (n - done.len()) as f64 / n as f64;
        if exhausted > MAX_EXIT_FRACTION || done.len() < 2 {
            return Err(PolicyError::Spot(format!(
                "start {i}: {:.2}% of trajectories did not reach the target set",
                100.0 * exhausted
            )));
        }
        let m = done.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = done.iter().map(|l| (l - m).exp()).collect();
        // unreached trajectories count as zero, which only lowers the estimate
        let mean_w = w.iter().sum::<f64>() / n as f64;
        let var_w = (w.iter().map(|x| (x - mean_w).powi(2)).sum::<f64>()
            + (n - done.len()) as f64 * mean_w * mean_w)
            / (n - 1) as f64;
        let estimate = m.exp() * mean_w;
        let se = m.exp() * (var_w / n as f64).sqrt();
        let v = lyap.v[i];
        let bound = v * (1.0 + 3.0 * se / estimate);
        entries.push(SpotEntry {
            state: i,
            v,
            estimate,
            se,
            bound,
            passed: estimate <= bound,
            exhausted_fraction: exhausted,
        });
    }
    Ok(SpotReport {
        target_set: target.clone(),
        trajectories: n,
        seed,
        passed: entries.iter().all(|e| e.passed),
        entries,
        caveat: "the functional can be heavy-tailed when lhat grows; the deterministic drift check is binding".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_models::uncontrolled;
    use crate::model::{build_birth_death, BirthDeathParams, DriftMode};

    fn trivial(model: &GameModel) -> (StationaryStrategy, StationaryStrategy, Domain) {
        let d = Domain::range(0, model.states() - 1);
        (
            StationaryStrategy::uniform(model, Player::One, &d),
            StationaryStrategy::uniform(model, Player::Two, &d),
            d,
        )
    }

    #[test]
    fn single_state() {
        // killing at rate 2 to a state outside the domain
        let m = uncontrolled(&[vec![-2.0, 2.0], vec![0.0, 0.0]], &[1.0, 0.0]);
        let d = Domain::new(vec![0]).unwrap();
        let p1 = StationaryStrategy::uniform(&m, Player::One, &d);
        let p2 = StationaryStrategy::uniform(&m, Player::Two, &d);
        let e = evaluate_pair(&m, &p1, &p2, &d, 1e-12).unwrap();
        assert_eq!(e.rho_pi, -1.0);
        assert_eq!(e.psi_pi, vec![1.0, 0.0]);
    }

    #[test]
    fn two_state_closed_form() {
        // M = [[-1, 1], [1, 1]]: rho = sqrt 2
        let m = uncontrolled(&[vec![-1.0, 1.0], vec![1.0, -1.0]], &[0.0, 2.0]);
        let (p1, p2, d) = trivial(&m);
        let e = evaluate_pair(&m, &p1, &p2, &d, 1e-13).unwrap();
        assert!((e.rho_pi - 2f64.sqrt()).abs() < 1e-12, "{}", e.rho_pi);
        assert!((e.psi_pi[1] - (1.0 + 2f64.sqrt())).abs() < 1e-11);
        assert!(e.gershgorin.0 <= e.rho_pi && e.rho_pi <= e.gershgorin.1);
        // the plain power iteration agrees
        let g = TwistedGenerator::new(&m, &p1, &p2, &d).unwrap();
        let p = g.power(1e-12, DVector::from_element(2, 1.0), 0, 1_000_000).unwrap();
        assert_eq!(p.method, PerronMethod::Power);
        assert!((p.rho - 2f64.sqrt()).abs() < 1e-11);
    }

    #[test]
    fn reducible_pair_reports_components() {
        let m = uncontrolled(&[vec![-1.0, 1.0, 0.0], vec![0.0, -1.0, 1.0], vec![0.0, 0.0, 0.0]], &[1.0; 3]);
        let (p1, p2, d) = trivial(&m);
        match evaluate_pair(&m, &p1, &p2, &d, 1e-10) {
            Err(PolicyError::Reducible { components }) => assert_eq!(components, vec![vec![0], vec![1], vec![2]]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn raising_cost_never_lowers_rho() {
        let (m, _) = build_birth_death(&BirthDeathParams::with_cap(15)).unwrap();
        let (p1, p2, d) = trivial(&m);
        let base = evaluate_pair(&m, &p1, &p2, &d, 1e-10).unwrap();
        for s in 0..5u64 {
            let bumped = m.map_cost(|i, a, b, c| c + 0.1 * (((i * 7 + a * 3 + b + s as usize) % 5) as f64));
            let e = evaluate_pair(&bumped, &p1, &p2, &d, 1e-10).unwrap();
            assert!(e.rho_pi >= base.rho_pi - 1e-9);
        }
    }

    #[test]
    fn uncontrolled_sweep_is_empty() {
        let m = uncontrolled(&[vec![-1.0, 1.0], vec![1.0, -1.0]], &[0.0, 2.0]);
        let (p1, p2, d) = trivial(&m);
        let r = deviation_sweep(&m, &p1, &p2, &d, 1e-12, DEFAULT_TOL_DEV).unwrap();
        assert_eq!(r.tested, 0);
        assert!(r.passed);
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "state,player,action,rho_deviated,slack\n");
    }

    #[test]
    fn degenerate_spotcheck_is_exactly_one() {
        let m = uncontrolled(&[vec![-1.0, 1.0], vec![1.0, -1.0]], &[0.0, 0.0]);
        let (p1, p2, _) = trivial(&m);
        let lyap = LyapunovData {
            v: vec![1.0; 2],
            mode: DriftMode::Unbounded { lhat: vec![0.0; 2] },
            c: 1.0,
            k_hat: vec![0],
            b0: 1.0,
            b1: 1.0,
            b2: 1.0,
            v_tilde: vec![1.0; 2],
        };
        let target = Domain::new(vec![0]).unwrap();
        let r = exit_bound_spotcheck(&m, &lyap, &p1, &p2, &target, &[1], 100, 3, 1000).unwrap();
        assert_eq!(r.entries[0].estimate, 1.0);
        assert_eq!(r.entries[0].se, 0.0);
        assert!(r.passed);
        assert!(exit_bound_spotcheck(&m, &lyap, &p1, &p2, &target, &[0], 100, 3, 1000).is_err());
    }
}
