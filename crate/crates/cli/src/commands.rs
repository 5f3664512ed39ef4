use std::fs;
use std::io::BufWriter;
use std::path::Path;

use ergogame::domain::{Domain, TruncationLadder};
use ergogame::eigen::{
    eigen_bounds_check, extract_selectors, hji_residual, isaacs_game, ladder_limit, BoundsReport, EigenError,
    EigenOptions, LadderOptions, LevelReport,
};
use ergogame::format::fmt_f64;
use ergogame::matrix_game::{solve_matrix_game, DEFAULT_TOL};
use ergogame::model::{
    build_birth_death, check_drift, load_model, validate_model, DriftReport, GameModel, LyapunovData,
    ValidationReport,
};
use ergogame::policy_eval::{deviation_sweep, evaluate_pair, Deviation, PerronMethod};
use ergogame::simulate::{
    estimate_j, horizon_scan, sample_trajectory, trajectory_rng, HorizonScan, MixedChain, RiskSensitiveEstimate,
    SimError, SimOptions,
};
use ergogame::strategy::StationaryStrategy;
use serde::Serialize;

use crate::artifacts::{self, PsiFile, SelectorsFile};
use crate::config::RunConfig;
use crate::error::CliError;

/// Row sums and similar identities are checked to this tolerance.
const MODEL_TOL: f64 = 1e-9;

fn load(cfg: &RunConfig) -> Result<(GameModel, Option<LyapunovData>), CliError> {
    match &cfg.model.path {
        Some(p) => load_model(p).map_err(|e| CliError::Input(format!("model {}: {e}", p.display()))),
        None => {
            let (m, l) = build_birth_death(&cfg.model.params)
                .map_err(|e| CliError::Input(format!("builtin birth-death: {e}")))?;
            Ok((m, Some(l)))
        }
    }
}

/// Fatal on any violation; the report goes to `model_check.json`.
fn validated(cfg: &RunConfig) -> Result<(GameModel, Option<LyapunovData>), CliError> {
    let (model, lyap) = load(cfg)?;
    let report = validate_model(&model, MODEL_TOL);
    if !report.is_ok() {
        let path = cfg.out.join(artifacts::MODEL_CHECK);
        artifacts::write_json(&path, &report)?;
        return Err(CliError::Input(format!(
            "model has {} violation(s); report written to {}",
            report.violations.len(),
            path.display()
        )));
    }
    Ok((model, lyap))
}

fn perron_tol(cfg: &RunConfig) -> f64 {
    (cfg.tolerances.eigen * 1e-2).max(1e-14)
}

// ---------------------------------------------------------------- solve

pub fn solve(cfg: &RunConfig) -> Result<(), CliError> {
    let (model, lyap) = validated(cfg)?;
    let lyap = lyap.ok_or_else(|| {
        CliError::Input("solve needs Lyapunov data (the model file has no \"lyapunov\" block)".into())
    })?;
    let ladder = TruncationLadder::from_radii(&cfg.ladder.radii, model.reference_state, model.states())
        .map_err(|e| CliError::Input(format!("ladder: {e}")))?;
    let opts = LadderOptions {
        eigen: EigenOptions {
            delta: cfg.ladder.delta,
            tol: cfg.tolerances.eigen,
            method: cfg.ladder.method,
            inner_tol: cfg.tolerances.dirichlet,
            ..EigenOptions::default()
        },
        tol_ladder: cfg.ladder.tol_ladder,
    };
    let csv = cfg.out.join(artifacts::RHO_LADDER);
    let result = match ladder_limit(&model, &lyap, &ladder, &opts) {
        Ok(r) => r,
        Err(EigenError::LadderNotConverged(r)) => {
            artifacts::write_ladder_csv(&csv, &r.reports)?;
            print_trace(&r.reports);
            return Err(CliError::NotConverged(format!(
                "ladder exhausted without convergence (|drho| = {:e}, psi gap = {:e}, tol {:e}); trace in {}",
                r.rho_gap,
                r.psi_gap,
                cfg.ladder.tol_ladder,
                csv.display()
            )));
        }
        Err(EigenError::Stagnation {
            iterations,
            residual,
            trace,
        }) => {
            println!("residual trace (last {} iterations):", trace.len());
            for r in &trace {
                println!("  {}", fmt_f64(*r));
            }
            return Err(CliError::NotConverged(format!(
                "power iteration stagnated after {iterations} iterations at residual {residual:e}"
            )));
        }
        Err(e @ (EigenError::Domain(_) | EigenError::ReferenceNotInDomain(_) | EigenError::EmptyLadder)) => {
            return Err(CliError::Input(e.to_string()))
        }
        Err(e) => return Err(CliError::NotConverged(e.to_string())),
    };
    artifacts::write_ladder_csv(&csv, &result.reports)?;
    print_trace(&result.reports);

    let sel = extract_selectors(&model, &result.solution, 2.0 * cfg.tolerances.eigen)
        .map_err(|e| CliError::NotConverged(format!("selector extraction: {e}")))?;
    artifacts::write_json(&cfg.out.join(artifacts::PSI), &PsiFile::from_ladder(&result))?;
    artifacts::write_json(&cfg.out.join(artifacts::SELECTORS), &SelectorsFile::new(&model, &sel))?;
    println!(
        "rho = {}  residual = {:e}  levels = {}  max duality gap = {:e}",
        fmt_f64(result.solution.rho),
        result.solution.residual,
        result.reports.len(),
        sel.max_duality_gap
    );
    println!("artifacts in {}", cfg.out.display());
    Ok(())
}

fn print_trace(reports: &[LevelReport]) {
    println!("{:>3} {:>7} {:>24} {:>24} {:>24} {:>6}", "n", "radius", "rho_n", "residual", "theta_n", "touch");
    for r in reports {
        println!(
            "{:>3} {:>7} {:>24} {:>24} {:>24} {:>6}",
            r.n,
            r.radius.map(|x| x.to_string()).unwrap_or_default(),
            fmt_f64(r.rho),
            fmt_f64(r.residual),
            fmt_f64(r.theta),
            r.touch_state
        );
    }
}

// ---------------------------------------------------------------- verify

#[derive(Debug, Serialize)]
struct Check {
    value: f64,
    tol: f64,
    passed: bool,
}

#[derive(Debug, Serialize)]
struct MinimaxCheck {
    /// Largest per-state gap between sup-inf and inf-sup of the Isaacs game.
    max_interchange_gap: f64,
    /// Largest duality gap of the file selectors in the Isaacs games,
    /// relative to `max(1, |value|)`.
    max_selector_gap: f64,
    worst_state: Option<usize>,
    tol: f64,
    passed: bool,
}

#[derive(Debug, Serialize)]
struct EvaluationCheck {
    rho_pi: Option<f64>,
    difference: Option<f64>,
    tol: f64,
    residual: Option<f64>,
    method: Option<PerronMethod>,
    error: Option<String>,
    passed: bool,
}

#[derive(Debug, Serialize)]
struct DeviationSummary {
    tested: usize,
    violations: Vec<Deviation>,
    worst_slack_player1: f64,
    worst_slack_player2: f64,
    failures: Vec<(usize, u8, usize, String)>,
    tol_dev: f64,
    error: Option<String>,
    passed: bool,
}

#[derive(Debug, Serialize)]
struct McCheck {
    estimate: Option<RiskSensitiveEstimate>,
    z: Option<f64>,
    error: Option<String>,
    passed: bool,
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    rho: f64,
    states: usize,
    residual: Check,
    positivity: bool,
    bounds: BoundsReport,
    minimax: MinimaxCheck,
    evaluation: EvaluationCheck,
    deviations: Option<DeviationSummary>,
    monte_carlo: Option<McCheck>,
    passed: bool,
}

pub fn verify(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let (model, lyap) = validated(cfg)?;
    let psi_file: PsiFile = artifacts::read_json(&dir.join(artifacts::PSI))?;
    let sel_file: SelectorsFile = artifacts::read_json(&dir.join(artifacts::SELECTORS))?;
    let sol = psi_file.to_solution(&model)?;
    let (pi1, pi2) = sel_file.strategies(&model)?;
    let support = sol.domain.support().clone();
    let tol = cfg.tolerances.eigen;
    let game = |e: ergogame::matrix_game::MatrixGameError| CliError::Input(format!("Isaacs game: {e}"));

    let res = hji_residual(&model, &sol.psi, sol.rho, sol.domain.checked().states()).map_err(game)?;
    let res = res.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
    let residual = Check {
        value: res,
        tol,
        passed: res <= tol,
    };
    let positivity = support.states().iter().all(|&i| sol.psi[i] > 0.0);
    let bounds = eigen_bounds_check(&sol, &model, lyap.as_ref()).map_err(|e| CliError::Input(e.to_string()))?;
    let minimax = minimax_check(&model, &sol.psi, &support, &pi1, &pi2, cfg.tolerances.deviation)?;

    let ptol = perron_tol(cfg);
    let eval_tol = 5.0 * tol;
    let evaluation = match evaluate_pair(&model, &pi1, &pi2, &support, ptol) {
        Ok(e) => EvaluationCheck {
            rho_pi: Some(e.rho_pi),
            difference: Some(e.rho_pi - sol.rho),
            tol: eval_tol,
            residual: Some(e.residual),
            method: Some(e.method),
            error: None,
            passed: (e.rho_pi - sol.rho).abs() <= eval_tol,
        },
        Err(e) => EvaluationCheck {
            rho_pi: None,
            difference: None,
            tol: eval_tol,
            residual: None,
            method: None,
            error: Some(e.to_string()),
            passed: false,
        },
    };

    let deviations = if cfg.verify.deviations {
        let tol_dev = cfg.tolerances.deviation;
        Some(match deviation_sweep(&model, &pi1, &pi2, &support, ptol, tol_dev) {
            Ok(r) => {
                let path = cfg.out.join(artifacts::DEVIATIONS);
                let f = fs::File::create(&path)
                    .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
                r.write_csv(BufWriter::new(f))
                    .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
                DeviationSummary {
                    tested: r.tested,
                    violations: r.violations,
                    worst_slack_player1: r.worst_slack_player1,
                    worst_slack_player2: r.worst_slack_player2,
                    failures: r.failures,
                    tol_dev,
                    error: None,
                    passed: r.passed,
                }
            }
            Err(e) => DeviationSummary {
                tested: 0,
                violations: Vec::new(),
                worst_slack_player1: f64::NAN,
                worst_slack_player2: f64::NAN,
                failures: Vec::new(),
                tol_dev,
                error: Some(e.to_string()),
                passed: false,
            },
        })
    } else {
        None
    };

    let monte_carlo = if cfg.verify.mc {
        let seed = cfg
            .simulation
            .seed
            .ok_or_else(|| CliError::Input("the Monte Carlo check needs a seed (--seed)".into()))?;
        Some(mc_check(cfg, &model, &pi1, &pi2, seed, evaluation.rho_pi))
    } else {
        None
    };

    let passed = residual.passed
        && positivity
        && bounds.passed
        && minimax.passed
        && evaluation.passed
        && deviations.as_ref().is_none_or(|d| d.passed)
        && monte_carlo.as_ref().is_none_or(|m| m.passed);
    let report = VerifyReport {
        rho: sol.rho,
        states: support.len(),
        residual,
        positivity,
        bounds,
        minimax,
        evaluation,
        deviations,
        monte_carlo,
        passed,
    };
    artifacts::write_json(&cfg.out.join(artifacts::VERIFY_REPORT), &report)?;
    print_verify(&report);
    if passed {
        Ok(())
    } else {
        Err(CliError::Certificate(format!(
            "certificate failed; see {}",
            cfg.out.join(artifacts::VERIFY_REPORT).display()
        )))
    }
}

fn minimax_check(
    model: &GameModel,
    psi: &[f64],
    support: &Domain,
    pi1: &StationaryStrategy,
    pi2: &StationaryStrategy,
    tol: f64,
) -> Result<MinimaxCheck, CliError> {
    let mut out = MinimaxCheck {
        max_interchange_gap: 0.0,
        max_selector_gap: 0.0,
        worst_state: None,
        tol,
        passed: true,
    };
    let game = |e: ergogame::matrix_game::MatrixGameError| CliError::Input(format!("Isaacs game: {e}"));
    for &i in support.states() {
        let (Some(x), Some(y)) = (pi1.get(i), pi2.get(i)) else {
            return Err(CliError::Input(format!("{}: no selector at state {i}", artifacts::SELECTORS)));
        };
        let g = isaacs_game(model, psi, i).map_err(game)?;
        let s = solve_matrix_game(&g, DEFAULT_TOL).map_err(game)?;
        out.max_interchange_gap = out.max_interchange_gap.max(s.duality_gap);
        let rel = g.duality_gap(x, y) / s.value.abs().max(1.0);
        if rel > out.max_selector_gap || out.worst_state.is_none() {
            out.max_selector_gap = out.max_selector_gap.max(rel);
            out.worst_state = Some(i);
        }
    }
    out.passed = out.max_selector_gap <= tol;
    Ok(out)
}

fn mc_check(
    cfg: &RunConfig,
    model: &GameModel,
    pi1: &StationaryStrategy,
    pi2: &StationaryStrategy,
    seed: u64,
    rho_pi: Option<f64>,
) -> McCheck {
    let fail = |e: String| McCheck {
        estimate: None,
        z: None,
        error: Some(e),
        passed: false,
    };
    let chain = match MixedChain::new(model, pi1, pi2, None) {
        Ok(c) => c,
        Err(e) => return fail(e.to_string()),
    };
    let start = cfg.simulation.start.unwrap_or(model.reference_state);
    let est = match estimate_j(
        &chain,
        start,
        cfg.simulation.horizon,
        cfg.simulation.paths,
        seed,
        &sim_options(cfg),
    ) {
        Ok(e) => e,
        Err(e) => return fail(e.to_string()),
    };
    let z = rho_pi.map(|r| z_score(est.j_hat, r, est.bootstrap_se));
    let passed = z.is_some_and(|z| z.abs() <= 3.0);
    McCheck {
        estimate: Some(est),
        z,
        error: rho_pi.is_none().then(|| "no policy-evaluation value to compare against".to_string()),
        passed,
    }
}

fn print_verify(r: &VerifyReport) {
    let mark = |b: bool| if b { "ok" } else { "FAILED" };
    println!("residual        {:e} (tol {:e}) {}", r.residual.value, r.residual.tol, mark(r.residual.passed));
    println!("positivity      {}", mark(r.positivity));
    println!(
        "bounds          {} >= {}{} {}",
        fmt_f64(r.rho),
        fmt_f64(r.bounds.lower),
        r.bounds.upper.map(|u| format!(", <= {}", fmt_f64(u))).unwrap_or_default(),
        mark(r.bounds.passed)
    );
    println!(
        "minimax         interchange gap {:e}, selector gap {:e} {}",
        r.minimax.max_interchange_gap,
        r.minimax.max_selector_gap,
        mark(r.minimax.passed)
    );
    match (&r.evaluation.difference, &r.evaluation.error) {
        (Some(d), _) => println!("evaluation      rho_pi - rho = {d:e} {}", mark(r.evaluation.passed)),
        (None, Some(e)) => println!("evaluation      {e} FAILED"),
        _ => {}
    }
    if let Some(d) = &r.deviations {
        println!(
            "deviations      {} tested, {} violation(s) {}",
            d.tested,
            d.violations.len(),
            mark(d.passed)
        );
        for v in &d.violations {
            println!(
                "  state {} player {} action {}: rho_dev = {}, slack = {:e}",
                v.state,
                v.player,
                v.label,
                fmt_f64(v.rho_deviated),
                v.slack
            );
        }
        if let Some(e) = &d.error {
            println!("  {e}");
        }
    }
    if let Some(m) = &r.monte_carlo {
        match (&m.estimate, m.z) {
            (Some(e), Some(z)) => println!(
                "monte carlo     J = {}, SE = {:e}, z = {z:.3} {}",
                fmt_f64(e.j_hat),
                e.bootstrap_se,
                mark(m.passed)
            ),
            _ => println!("monte carlo     {} FAILED", m.error.as_deref().unwrap_or("no estimate")),
        }
    }
    println!("verify          {}", mark(r.passed));
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Serialize)]
struct EstimateFile {
    estimate: RiskSensitiveEstimate,
    horizon_scan: Option<HorizonScan>,
    /// `given` (flag) or `policy-evaluation`.
    rho_source: Option<&'static str>,
    rho: Option<f64>,
    z: Option<f64>,
    rho_error: Option<String>,
}

fn sim_options(cfg: &RunConfig) -> SimOptions {
    SimOptions {
        cost_mode: cfg.simulation.cost_mode,
        exit_mode: cfg.simulation.exit_mode,
        bootstrap: cfg.simulation.bootstrap,
        ..SimOptions::default()
    }
}

/// With a zero standard error (deterministic cost) only a rounding-level
/// difference counts as agreement.
fn z_score(j: f64, rho: f64, se: f64) -> f64 {
    if se == 0.0 && (j - rho).abs() <= 1e-12 * rho.abs().max(1.0) {
        0.0
    } else {
        (j - rho) / se
    }
}

fn sim_error(e: SimError) -> CliError {
    match e {
        SimError::ExitFraction { .. } => CliError::Refused(e.to_string()),
        e => CliError::Input(e.to_string()),
    }
}

pub fn simulate(cfg: &RunConfig, strategies: &Path, rho: Option<f64>) -> Result<(), CliError> {
    let seed = cfg
        .simulation
        .seed
        .ok_or_else(|| CliError::Input("simulate needs a seed (--seed or simulation.seed)".into()))?;
    let (model, _) = validated(cfg)?;
    let sel: SelectorsFile = artifacts::read_json(strategies)?;
    let (pi1, pi2) = sel.strategies(&model)?;
    let chain = MixedChain::new(&model, &pi1, &pi2, None).map_err(sim_error)?;
    let start = cfg.simulation.start.unwrap_or(model.reference_state);
    let opts = sim_options(cfg);
    let horizon = cfg.simulation.horizon;

    let estimate = estimate_j(&chain, start, horizon, cfg.simulation.paths, seed, &opts).map_err(sim_error)?;
    let scan = if cfg.simulation.horizons.is_empty() {
        None
    } else {
        Some(
            horizon_scan(&chain, start, &cfg.simulation.horizons, cfg.simulation.paths, seed, &opts)
                .map_err(sim_error)?,
        )
    };

    let (rho_source, rho, rho_error) = match rho {
        Some(r) => (Some("given"), Some(r), None),
        None => {
            let region = Domain::new(pi1.0.keys().copied().filter(|i| pi2.get(*i).is_some()).collect())
                .map_err(|e| CliError::Input(format!("strategies: {e}")))?;
            match evaluate_pair(&model, &pi1, &pi2, &region, perron_tol(cfg)) {
                Ok(e) => (Some("policy-evaluation"), Some(e.rho_pi), None),
                Err(e) => (None, None, Some(e.to_string())),
            }
        }
    };
    let z = rho.map(|r| z_score(estimate.j_hat, r, estimate.bootstrap_se));

    for k in 0..cfg.simulation.dump {
        let mut rng = trajectory_rng(seed, k as u64);
        let tr = sample_trajectory(&chain, start, horizon, cfg.simulation.cost_mode, &mut rng).map_err(sim_error)?;
        let path = cfg.out.join(format!("trajectory_{k}.csv"));
        let f = fs::File::create(&path).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
        tr.write_csv(&model, BufWriter::new(f))
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    }

    println!("J_hat = {}", fmt_f64(estimate.j_hat));
    println!("SE    = {}", fmt_f64(estimate.bootstrap_se));
    if let Some(r) = rho {
        println!("rho   = {} ({})", fmt_f64(r), rho_source.unwrap_or(""));
    }
    if let Some(z) = z {
        println!("z     = {z:.4}");
    }
    if let Some(s) = &scan {
        println!("1/T extrapolation = {} (slope {:e})", fmt_f64(s.extrapolated), s.slope);
    }
    println!("exit fraction = {}", estimate.exit_fraction);
    let file = EstimateFile {
        estimate,
        horizon_scan: scan,
        rho_source,
        rho,
        z,
        rho_error,
    };
    artifacts::write_json(&cfg.out.join(artifacts::ESTIMATE), &file)
}

// ---------------------------------------------------------------- model check

#[derive(Debug, Serialize)]
struct ModelCheck {
    states: usize,
    reference_state: usize,
    validation: ValidationReport,
    lyapunov_issues: Option<Vec<String>>,
    drift: Option<DriftReport>,
    passed: bool,
}

pub fn model_check(cfg: &RunConfig) -> Result<(), CliError> {
    let (model, lyap) = load(cfg)?;
    let validation = validate_model(&model, MODEL_TOL);
    let n = model.states();
    let (lyapunov_issues, drift) = match &lyap {
        Some(l) => (Some(l.check(&model)), Some(check_drift(&model, l, 1.min(n - 1)..=n - 1))),
        None => (None, None),
    };
    let passed = validation.is_ok()
        && lyapunov_issues.as_ref().is_none_or(|v| v.is_empty())
        && drift.as_ref().is_none_or(|d| d.passed);
    let report = ModelCheck {
        states: n,
        reference_state: model.reference_state,
        validation,
        lyapunov_issues,
        drift,
        passed,
    };
    let path = cfg.out.join(artifacts::MODEL_CHECK);
    artifacts::write_json(&path, &report)?;
    println!("states          {n}");
    println!("violations      {}", report.validation.violations.len());
    for v in &report.validation.violations {
        println!("  {v:?}");
    }
    match &report.lyapunov_issues {
        Some(issues) => {
            for s in issues {
                println!("  lyapunov: {s}");
            }
        }
        None => println!("lyapunov        none supplied"),
    }
    if let Some(d) = &report.drift {
        println!(
            "drift           stability {:e}, nonexplosion {:e}, rate bound {:e} {}",
            d.worst_stability_slack,
            d.worst_nonexplosion_slack,
            d.worst_rate_bound_slack,
            if d.passed { "ok" } else { "FAILED" }
        );
    }
    println!("report          {}", path.display());
    if passed {
        Ok(())
    } else {
        Err(CliError::Input(format!("model check failed; see {}", path.display())))
    }
}
