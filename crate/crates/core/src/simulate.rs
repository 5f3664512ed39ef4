//! Jump-chain simulation under stationary strategy pairs and the Monte Carlo
//! estimator of the risk-sensitive ergodic cost `(1/T) ln E exp(int_0^T c)`.
//!
//! Every trajectory `k` draws from its own ChaCha8 stream (`seed`, stream
//! `k`), so results do not depend on how trajectories are scheduled across
//! threads. Aggregation sorts the exponents before summing.

use std::io::{self, Write};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Domain;
use crate::format::fmt_f64;
use crate::model::GameModel;
use crate::strategy::{Player, StationaryStrategy, StrategyError};

/// Largest tolerated fraction of trajectories leaving the simulated region.
pub const MAX_EXIT_FRACTION: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error("start state {0} is not in the simulated region")]
    BadStart(usize),
    #[error("horizon must be positive and finite, got {0}")]
    Horizon(f64),
    #[error("need at least 2 trajectories, got {0}")]
    TooFew(usize),
    #[error("{exited} of {total} trajectories left the simulated region (limit {limit}); estimate refused")]
    ExitFraction { exited: usize, total: usize, limit: f64 },
    #[error("per-trajectory jump budget of {0} exhausted")]
    JumpBudget(usize),
}

/// How cost accrues along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostMode {
    /// `c(i, mu_i, nu_i)`, the mixed cost rate; matches the twisted generator.
    #[default]
    Expected,
    /// `c(i, a_k, b_k)` for actions drawn afresh at every jump epoch.
    Realized,
}

/// What happens to a trajectory that leaves the simulated region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitMode {
    /// The trajectory is killed: it contributes zero to `E exp(...)`.
    #[default]
    Kill,
    /// The trajectory sits at the boundary accruing zero cost until `T`.
    Absorb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub cost_mode: CostMode,
    pub exit_mode: ExitMode,
    /// Restricts the simulated region further than the strategies do.
    pub region: Option<Domain>,
    /// Guard against explosive chains.
    pub max_jumps: usize,
    /// Bootstrap replicates for the standard error.
    pub bootstrap: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            cost_mode: CostMode::Expected,
            exit_mode: ExitMode::Kill,
            region: None,
            max_jumps: 100_000_000,
            bootstrap: 200,
        }
    }
}

struct StateLaw {
    exit_rate: f64,
    targets: Vec<usize>,
    jump: Option<WeightedIndex<f64>>,
    mixed_cost: f64,
    a: WeightedIndex<f64>,
    b: WeightedIndex<f64>,
}

/// The chain induced by a stationary pair: per-state mixed rates, cached.
pub struct MixedChain<'m> {
    model: &'m GameModel,
    laws: Vec<Option<StateLaw>>,
    base_rate: f64,
}

impl<'m> MixedChain<'m> {
    /// The region is the set of states where both strategies are defined
    /// (intersected with `region` if given).
    pub fn new(
        model: &'m GameModel,
        pi1: &StationaryStrategy,
        pi2: &StationaryStrategy,
        region: Option<&Domain>,
    ) -> Result<Self, SimError> {
        let mut laws: Vec<Option<StateLaw>> = (0..model.states()).map(|_| None).collect();
        let mut states = Vec::new();
        for (&i, mu) in &pi1.0 {
            if i >= model.states() || region.is_some_and(|d| !d.contains(i)) {
                continue;
            }
            let Some(nu) = pi2.get(i) else { continue };
            states.push(i);
            let d = Domain::new(vec![i]).expect("one state");
            pi1.check(model, Player::One, &d)?;
            pi2.check(model, Player::Two, &d)?;
            let (row, mixed_cost) = model.mixed(i, mu, nu);
            let targets: Vec<usize> = row.off.iter().filter(|e| e.1 > 0.0).map(|e| e.0).collect();
            let weights: Vec<f64> = row.off.iter().filter(|e| e.1 > 0.0).map(|e| e.1).collect();
            let jump = if weights.is_empty() {
                None
            } else {
                WeightedIndex::new(&weights).ok()
            };
            let not_distribution = |p: u8| StrategyError::NotDistribution {
                player: p,
                state: i,
                sum: f64::NAN,
            };
            laws[i] = Some(StateLaw {
                exit_rate: if jump.is_some() { weights.iter().sum() } else { 0.0 },
                targets,
                jump,
                mixed_cost,
                a: WeightedIndex::new(mu).map_err(|_| not_distribution(1))?,
                b: WeightedIndex::new(nu).map_err(|_| not_distribution(2))?,
            });
        }
        // cost rates are measured from the smallest one, which keeps constant
        // costs exact and the exponents small
        let base_rate = states
            .iter()
            .map(|&i| {
                let (na, nb) = (model.n_a(i), model.n_b(i));
                let realized = (0..na)
                    .flat_map(|a| (0..nb).map(move |b| (a, b)))
                    .map(|(a, b)| model.cost(i, a, b))
                    .fold(f64::INFINITY, f64::min);
                laws[i].as_ref().map_or(f64::INFINITY, |l| l.mixed_cost.min(realized))
            })
            .fold(f64::INFINITY, f64::min);
        Ok(Self {
            model,
            laws,
            base_rate: if base_rate.is_finite() { base_rate } else { 0.0 },
        })
    }

    pub fn contains(&self, i: usize) -> bool {
        self.laws.get(i).is_some_and(Option::is_some)
    }

    pub fn model(&self) -> &GameModel {
        self.model
    }

    /// Lower bound on every cost rate along a path; exponents are stored
    /// relative to `base_rate * t`.
    pub fn base_rate(&self) -> f64 {
        self.base_rate
    }

    /// Total exit rate of the mixed row at `i`.
    pub fn exit_rate(&self, i: usize) -> f64 {
        self.laws[i].as_ref().map_or(0.0, |l| l.exit_rate)
    }

    /// Draws `(a, b)` from the pair's mixed actions at `i`.
    pub fn draw_actions(&self, i: usize, rng: &mut ChaCha8Rng) -> (usize, usize) {
        let l = self.laws[i].as_ref().expect("state in region");
        (l.a.sample(rng), l.b.sample(rng))
    }

    /// Holding time at `i` and the next state, or `None` if `i` is absorbing.
    pub fn draw_jump(&self, i: usize, rng: &mut ChaCha8Rng) -> Option<(f64, usize)> {
        let l = self.laws[i].as_ref().expect("state in region");
        let jump = l.jump.as_ref()?;
        let e: f64 = Exp1.sample(rng);
        Some((e / l.exit_rate, l.targets[jump.sample(rng)]))
    }

    fn cost_rate(&self, i: usize, actions: Option<(usize, usize)>) -> f64 {
        match actions {
            Some((a, b)) => self.model.cost(i, a, b),
            None => self.laws[i].as_ref().expect("state in region").mixed_cost,
        }
    }
}

/// The random stream of trajectory `index` under `seed`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One sampled path on `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Jump epochs, starting at 0.
    pub times: Vec<f64>,
    pub states: Vec<usize>,
    /// Realized actions per segment (absent in expected-cost mode).
    pub actions: Vec<Option<(usize, usize)>>,
    pub cost_rates: Vec<f64>,
    /// Cost accrued on each segment.
    pub segment_costs: Vec<f64>,
    pub horizon: f64,
    /// Left the simulated region before `horizon`; the jump target is the last state.
    pub exited: bool,
}

impl Trajectory {
    pub fn total_cost(&self) -> f64 {
        self.segment_costs.iter().sum()
    }

    /// CSV with columns `t,state,a_label,b_label,cost_rate`; one row per segment.
    pub fn write_csv<W: Write>(&self, model: &GameModel, mut w: W) -> io::Result<()> {
        writeln!(w, "t,state,a_label,b_label,cost_rate")?;
        for k in 0..self.segment_costs.len() {
            let i = self.states[k];
            let (al, bl) = match self.actions[k] {
                Some((a, b)) => (model.actions_a(i)[a].as_str(), model.actions_b(i)[b].as_str()),
                None => ("mixed", "mixed"),
            };
            writeln!(
                w,
                "{},{},{},{},{}",
                fmt_f64(self.times[k]),
                i,
                al,
                bl,
                fmt_f64(self.cost_rates[k])
            )?;
        }
        Ok(())
    }
}

struct PathSummary {
    // int_0^T (c - base) dt
    excess: f64,
    total: f64,
    exited: bool,
    jumps: usize,
}

/// The single stepping routine behind both the recorded and the bare paths,
/// so both consume the random stream identically.
fn run_path(
    chain: &MixedChain,
    i0: usize,
    horizon: f64,
    mode: CostMode,
    max_jumps: usize,
    rng: &mut ChaCha8Rng,
    mut record: impl FnMut(f64, usize, Option<(usize, usize)>, f64, f64),
) -> Result<PathSummary, SimError> {
    let base = chain.base_rate;
    let (mut t, mut i) = (0.0, i0);
    let mut out = PathSummary {
        excess: 0.0,
        total: 0.0,
        exited: false,
        jumps: 0,
    };
    loop {
        let actions = match mode {
            CostMode::Realized => Some(chain.draw_actions(i, rng)),
            CostMode::Expected => None,
        };
        let c = chain.cost_rate(i, actions);
        let step = chain.draw_jump(i, rng);
        let (dt, next) = match step {
            Some((h, j)) if t + h < horizon => (h, Some(j)),
            _ => (horizon - t, None),
        };
        out.excess += (c - base) * dt;
        out.total += c * dt;
        record(t, i, actions, c, c * dt);
        match next {
            None => return Ok(out),
            Some(j) => {
                t += dt;
                out.jumps += 1;
                if out.jumps > max_jumps {
                    return Err(SimError::JumpBudget(max_jumps));
                }
                if !chain.contains(j) {
                    out.exited = true;
                    // the exit epoch opens a segment of zero cost up to T
                    out.excess -= base * (horizon - t);
                    record(t, j, None, 0.0, 0.0);
                    return Ok(out);
                }
                i = j;
            }
        }
    }
}

fn check_inputs(chain: &MixedChain, i0: usize, horizon: f64) -> Result<(), SimError> {
    if !chain.contains(i0) {
        return Err(SimError::BadStart(i0));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(SimError::Horizon(horizon));
    }
    Ok(())
}

/// Samples one trajectory from `i0` up to `horizon`, or until it leaves the
/// region where the strategies are defined.
pub fn sample_trajectory(
    chain: &MixedChain,
    i0: usize,
    horizon: f64,
    mode: CostMode,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory, SimError> {
    check_inputs(chain, i0, horizon)?;
    let mut tr = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        actions: Vec::new(),
        cost_rates: Vec::new(),
        segment_costs: Vec::new(),
        horizon,
        exited: false,
    };
    let s = run_path(chain, i0, horizon, mode, usize::MAX, rng, |t, i, a, c, seg| {
        tr.times.push(t);
        tr.states.push(i);
        tr.actions.push(a);
        tr.cost_rates.push(c);
        tr.segment_costs.push(seg);
    })?;
    tr.exited = s.exited;
    Ok(tr)
}

/// Output of [`estimate_j`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSensitiveEstimate {
    pub j_hat: f64,
    pub horizon: f64,
    pub trajectories: usize,
    pub seed: u64,
    pub start_state: usize,
    pub cost_mode: CostMode,
    pub exit_mode: ExitMode,
    /// Largest exponent `int_0^T c dt` over the surviving trajectories.
    pub max_exponent: f64,
    /// `(sum w)^2 / sum w^2` for the weights `exp(exponent - max)`.
    pub effective_sample_size: f64,
    pub bootstrap_se: f64,
    pub bootstrap_replicates: usize,
    pub exit_fraction: f64,
    /// `(1/T) mean int_0^T c dt`; Jensen puts it below `j_hat`.
    pub mean_cost_rate: f64,
    pub mean_jumps: f64,
}

/// `ln sum_k exp(x_k)` over the finite entries, summed in ascending order so
/// the result does not depend on the order of `x`.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let mut v: Vec<f64> = x.iter().copied().filter(|e| e.is_finite()).collect();
    if v.is_empty() {
        return f64::NEG_INFINITY;
    }
    v.sort_by(f64::total_cmp);
    let m = *v.last().expect("nonempty");
    m + v.iter().map(|e| (e - m).exp()).sum::<f64>().ln()
}

/// Monte Carlo estimate of `(1/T) ln E_{i0} exp(int_0^T c(xi_t, ...) dt)` from
/// `n` trajectories. Deterministic in `seed`; refuses when more than 1% of
/// the trajectories leave the region.
pub fn estimate_j(
    chain: &MixedChain,
    i0: usize,
    horizon: f64,
    n: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<RiskSensitiveEstimate, SimError> {
    check_inputs(chain, i0, horizon)?;
    if n < 2 {
        return Err(SimError::TooFew(n));
    }
    let paths = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = trajectory_rng(seed, k as u64);
            run_path(chain, i0, horizon, opts.cost_mode, opts.max_jumps, &mut rng, |_, _, _, _, _| {})
        })
        .collect::<Result<Vec<_>, _>>()?;

    let exited = paths.iter().filter(|p| p.exited).count();
    let exit_fraction = exited as f64 / n as f64;
    if exit_fraction > MAX_EXIT_FRACTION || exited == n {
        return Err(SimError::ExitFraction {
            exited,
            total: n,
            limit: MAX_EXIT_FRACTION,
        });
    }
    let excess: Vec<f64> = paths
        .iter()
        .map(|p| match (p.exited, opts.exit_mode) {
            (true, ExitMode::Kill) => f64::NEG_INFINITY,
            _ => p.excess,
        })
        .collect();
    let base = chain.base_rate;
    let ln_n = (n as f64).ln();
    let j_of = |lse: f64| base + (lse - ln_n) / horizon;
    let j_hat = j_of(log_sum_exp(&excess));

    let m = excess.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (s1, s2) = excess.iter().fold((0.0, 0.0), |(a, b), &e| {
        let w = (e - m).exp();
        (a + w, b + w * w)
    });
    let ess = if s2 > 0.0 { s1 * s1 / s2 } else { 0.0 };

    // bootstrap over trajectories; its own stream past every trajectory's
    let mut rng = trajectory_rng(seed, u64::MAX);
    let reps: Vec<f64> = (0..opts.bootstrap)
        .map(|_| {
            let sample: Vec<f64> = (0..n).map(|_| excess[rng.gen_range(0..n)]).collect();
            j_of(log_sum_exp(&sample))
        })
        .collect();
    let se = if reps.len() >= 2 {
        // shifted-data variance: exactly zero when every replicate agrees
        let k = reps.len() as f64;
        let (s1, s2) = reps.iter().fold((0.0, 0.0), |(a, b), r| {
            let d = r - reps[0];
            (a + d, b + d * d)
        });
        ((s2 - s1 * s1 / k).max(0.0) / (k - 1.0)).sqrt()
    } else {
        f64::NAN
    };

    Ok(RiskSensitiveEstimate {
        j_hat,
        horizon,
        trajectories: n,
        seed,
        start_state: i0,
        cost_mode: opts.cost_mode,
        exit_mode: opts.exit_mode,
        max_exponent: m + base * horizon,
        effective_sample_size: ess,
        bootstrap_se: se,
        bootstrap_replicates: opts.bootstrap,
        exit_fraction,
        mean_cost_rate: paths.iter().map(|p| p.total).sum::<f64>() / (n as f64 * horizon),
        mean_jumps: paths.iter().map(|p| p.jumps as f64).sum::<f64>() / n as f64,
    })
}

/// `J(T)` at several horizons with a first-order extrapolation in `1/T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonScan {
    pub estimates: Vec<RiskSensitiveEstimate>,
    /// Least-squares slope of `J(T)` against `1/T`.
    pub slope: f64,
    /// Intercept of that fit: the `T -> infinity` extrapolation.
    pub extrapolated: f64,
}

/// Runs [`estimate_j`] at every horizon (same seed) and fits `J(T) = a + b/T`.
/// The fit is reported, never used as the estimate.
pub fn horizon_scan(
    chain: &MixedChain,
    i0: usize,
    horizons: &[f64],
    n: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<HorizonScan, SimError> {
    let estimates = horizons
        .iter()
        .map(|&t| estimate_j(chain, i0, t, n, seed, opts))
        .collect::<Result<Vec<_>, _>>()?;
    let pts: Vec<(f64, f64)> = estimates.iter().map(|e| (1.0 / e.horizon, e.j_hat)).collect();
    let k = pts.len() as f64;
    let (mx, my) = (
        pts.iter().map(|p| p.0).sum::<f64>() / k,
        pts.iter().map(|p| p.1).sum::<f64>() / k,
    );
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    Ok(HorizonScan {
        estimates,
        slope,
        extrapolated: my - slope * mx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_models::uncontrolled;

    fn trivial(model: &GameModel) -> (StationaryStrategy, StationaryStrategy) {
        let d = Domain::range(0, model.states() - 1);
        (
            StationaryStrategy::uniform(model, Player::One, &d),
            StationaryStrategy::uniform(model, Player::Two, &d),
        )
    }

    #[test]
    fn absorbing_state_accrues_cost_to_horizon() {
        let m = uncontrolled(&[vec![0.0]], &[2.5]);
        let (p1, p2) = trivial(&m);
        let chain = MixedChain::new(&m, &p1, &p2, None).unwrap();
        let tr = sample_trajectory(&chain, 0, 4.0, CostMode::Expected, &mut trajectory_rng(1, 0)).unwrap();
        assert_eq!(tr.segment_costs.len(), 1);
        assert_eq!(tr.total_cost(), 10.0);
        assert!(!tr.exited);
    }

    #[test]
    fn two_cycle_jump_count_is_poisson() {
        let m = uncontrolled(&[vec![-1.0, 1.0], vec![1.0, -1.0]], &[0.0, 1.0]);
        let (p1, p2) = trivial(&m);
        let chain = MixedChain::new(&m, &p1, &p2, None).unwrap();
        let t = 400.0;
        let tr = sample_trajectory(&chain, 0, t, CostMode::Realized, &mut trajectory_rng(7, 3)).unwrap();
        let jumps = (tr.times.len() - 1) as f64;
        assert!((jumps - t).abs() <= 3.0 * t.sqrt(), "{jumps}");
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn constant_cost_is_exact() {
        let m = uncontrolled(&[vec![-1.0, 1.0], vec![3.0, -3.0]], &[0.7, 0.7]);
        let (p1, p2) = trivial(&m);
        let chain = MixedChain::new(&m, &p1, &p2, None).unwrap();
        let e = estimate_j(&chain, 0, 13.0, 50, 5, &SimOptions::default()).unwrap();
        assert_eq!(e.j_hat, 0.7);
        assert_eq!(e.bootstrap_se, 0.0);
        assert_eq!(e.effective_sample_size, 50.0);
    }

    #[test]
    fn deterministic_and_jensen() {
        let m = uncontrolled(&[vec![-1.0, 1.0], vec![2.0, -2.0]], &[0.0, 1.5]);
        let (p1, p2) = trivial(&m);
        let chain = MixedChain::new(&m, &p1, &p2, None).unwrap();
        let o = SimOptions::default();
        let a = estimate_j(&chain, 0, 5.0, 400, 11, &o).unwrap();
        let b = estimate_j(&chain, 0, 5.0, 400, 11, &o).unwrap();
        assert_eq!(a, b);
        assert!(a.j_hat >= a.mean_cost_rate - 1e-12);
        assert!(a.j_hat >= -1e-12);
        assert!(a.effective_sample_size > 0.0 && a.effective_sample_size <= 400.0);
    }

    #[test]
    fn log_sum_exp_is_order_free() {
        let x = [3.0, -1.0, 700.0, 2.5, 699.5];
        let mut y = x;
        y.reverse();
        assert_eq!(log_sum_exp(&x).to_bits(), log_sum_exp(&y).to_bits());
        assert!(log_sum_exp(&x).is_finite());
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn leaving_the_region_is_flagged_and_refused() {
        let m = uncontrolled(&[vec![-1.0, 1.0], vec![1.0, -1.0]], &[1.0, 1.0]);
        let (p1, p2) = trivial(&m);
        let region = Domain::new(vec![0]).unwrap();
        let chain = MixedChain::new(&m, &p1, &p2, Some(&region)).unwrap();
        let tr = sample_trajectory(&chain, 0, 50.0, CostMode::Expected, &mut trajectory_rng(2, 0)).unwrap();
        assert!(tr.exited);
        assert_eq!(*tr.states.last().unwrap(), 1);
        assert!(matches!(
            estimate_j(&chain, 0, 50.0, 20, 2, &SimOptions::default()),
            Err(SimError::ExitFraction { .. })
        ));
    }
}
