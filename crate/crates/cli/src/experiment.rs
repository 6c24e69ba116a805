//! Single runs, batch-size sweeps and grid prediction.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use mbgp_core::problems::{sample_collocation, ProblemKind};
use mbgp_core::reference::{self, ColeHopf, ErrorReport, EvalGrid};
use mbgp_core::solver::{
    self, assemble_full, final_solve, spatial_index, Clock, Discretization, FullSystem, NoClock, PredictStrategy,
    RunHistory, SolverConfig,
};
use serde::Serialize;

use crate::config::{ExperimentConfig, PredictName};
use crate::error::{CliError, CliResult};

/// Milliseconds since construction.
pub struct WallClock(Instant);

impl WallClock {
    pub fn start() -> Self {
        WallClock(Instant::now())
    }
}

impl Clock for WallClock {
    fn now_ms(&self) -> Option<f64> {
        Some(self.0.elapsed().as_secs_f64() * 1e3)
    }
}

pub fn discretization(cfg: &ExperimentConfig, collocation_seed: u64) -> CliResult<Discretization> {
    let problem = cfg.problem_spec();
    let colloc = sample_collocation(&problem, cfg.problem.n_total, cfg.problem.n_interior, collocation_seed)?;
    Ok(Discretization::new(problem, colloc, cfg.kernel_spec())?)
}

/// The evaluation grid over the problem domain.
pub fn eval_grid(cfg: &ExperimentConfig) -> CliResult<EvalGrid> {
    let d = cfg.problem_spec().domain;
    Ok(EvalGrid::new(
        [d[0].0, d[1].0],
        [d[0].1, d[1].1],
        cfg.output.grid_resolution,
    )?)
}

/// Exact solution values on `points`.
pub fn true_values(cfg: &ExperimentConfig, points: &[[f64; 2]]) -> CliResult<Vec<f64>> {
    match cfg.kind() {
        ProblemKind::Elliptic => Ok(points.iter().map(|p| reference::elliptic_true(p)).collect()),
        ProblemKind::Linear => Ok(points
            .iter()
            .map(|p| mbgp_core::problems::ProblemSpec::linear_target(p))
            .collect()),
        ProblemKind::Burgers => {
            let ch = ColeHopf::new(cfg.problem.nu, cfg.output.quad_nodes)?;
            points.iter().map(|p| Ok(ch.eval(p[0], p[1])?)).collect()
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridRow {
    pub x: [f64; 2],
    pub u_true: f64,
    pub u_num: f64,
    pub abs_err: f64,
}

/// Identifies one run of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RunKey {
    pub batch_size: usize,
    pub realization: usize,
    pub seed: u64,
    pub collocation_seed: u64,
}

/// Everything one run produces.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub key: RunKey,
    pub history: Option<RunHistory>,
    pub grid: Vec<GridRow>,
    pub errors: Option<ErrorReport>,
    /// The full system could not be factorized, so ψ was not recorded.
    pub loss_unavailable: bool,
    pub final_gn_converged: Option<bool>,
    pub warning: Option<String>,
    pub failure: Option<String>,
}

impl RunResult {
    pub fn initial_psi(&self) -> Option<f64> {
        self.history.as_ref()?.initial_psi.map(|(q, m)| q + m)
    }

    /// ψ at the last recorded iteration.
    pub fn final_psi(&self) -> Option<(f64, f64)> {
        let rec = self.history.as_ref()?.records.last()?;
        Some((rec.psi_quadratic?, rec.psi_misfit?))
    }

    pub fn nonconverged_steps(&self) -> usize {
        self.history
            .as_ref()
            .map_or(0, |h| h.records.iter().filter(|r| !r.gn_converged).count())
    }
}

/// Collocation-dependent data shared by runs on the same set.
pub struct Prepared {
    pub disc: Discretization,
    pub full: Option<FullSystem>,
    pub full_error: Option<String>,
}

pub fn prepare(cfg: &ExperimentConfig, collocation_seed: u64, need_full: bool) -> CliResult<Prepared> {
    let disc = discretization(cfg, collocation_seed)?;
    let (full, full_error) = if need_full {
        match assemble_full(&disc, &cfg.solver_config(cfg.solver.batch_size)) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, None)
    };
    Ok(Prepared { disc, full, full_error })
}

/// Solver run plus (optionally) the final solve and the error grid.
pub fn execute(cfg: &ExperimentConfig, prep: &Prepared, key: RunKey, record_loss: bool, evaluate: bool) -> RunResult {
    let mut result = RunResult {
        key,
        history: None,
        grid: Vec::new(),
        errors: None,
        loss_unavailable: record_loss && prep.full.is_none(),
        final_gn_converged: None,
        warning: prep.full_error.clone(),
        failure: None,
    };
    let mut sc = cfg.solver_config(key.batch_size);
    sc.seed = key.seed;
    let clock: Box<dyn Clock> = if cfg.output.timings {
        Box::new(WallClock::start())
    } else {
        Box::new(NoClock)
    };
    let history = match solver::run_with(
        &prep.disc,
        &sc,
        prep.full.as_ref().filter(|_| record_loss),
        clock.as_ref(),
        |_| {},
    ) {
        Ok(h) => h,
        Err(e) => {
            result.failure = Some(e.to_string());
            return result;
        }
    };
    if evaluate {
        match evaluate_grid(cfg, prep, &sc, &history) {
            Ok((grid, errors, converged)) => {
                result.grid = grid;
                result.errors = Some(errors);
                result.final_gn_converged = converged;
            }
            Err(e) => result.failure = Some(e.to_string()),
        }
    }
    result.history = Some(history);
    result
}

fn evaluate_grid(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    sc: &SolverConfig,
    history: &RunHistory,
) -> CliResult<(Vec<GridRow>, ErrorReport, Option<bool>)> {
    let points = eval_grid(cfg)?.points();
    let truth = true_values(cfg, &points)?;
    let state = &history.final_state;
    let rho = cfg.solver.rho;
    let (u_num, converged) = match cfg.output.predict {
        PredictName::Full => {
            let full = match &prep.full {
                Some(f) => f,
                None => return Err(CliError::RunFailed("full prediction needs the full system".into())),
            };
            let sol = final_solve(&prep.disc, full, state, rho, sc)?;
            let u: Vec<f64> = points
                .iter()
                .map(|p| solver::predict_full(&prep.disc, &sol.coefficients, p))
                .collect::<Result<_, _>>()?;
            (u, Some(sol.converged))
        }
        PredictName::Neighborhood => {
            let index = spatial_index(&prep.disc, sc)?;
            let u: Vec<f64> = points
                .iter()
                .map(|p| {
                    solver::predict(
                        &prep.disc,
                        p,
                        state,
                        sc,
                        PredictStrategy::Neighborhood,
                        None,
                        Some(&index),
                        rho,
                    )
                })
                .collect::<Result<_, _>>()?;
            (u, None)
        }
    };
    let report = reference::error_report(&u_num, &truth)?;
    let grid = points
        .iter()
        .zip(&truth)
        .zip(&u_num)
        .zip(&report.abs_err)
        .map(|(((x, t), u), e)| GridRow {
            x: *x,
            u_true: *t,
            u_num: *u,
            abs_err: *e,
        })
        .collect();
    Ok((grid, report, converged))
}

/// One run with the configured batch size. With `record_loss` false ψ is
/// not tracked and the full system is built only if the prediction needs it.
pub fn run_single(cfg: &ExperimentConfig, record_loss: bool) -> CliResult<RunResult> {
    let need_full = record_loss || (cfg.output.error_grid && cfg.output.predict == PredictName::Full);
    let prep = prepare(cfg, cfg.problem.collocation_seed, need_full)?;
    let key = RunKey {
        batch_size: cfg.solver.batch_size,
        realization: 0,
        seed: cfg.solver.seed,
        collocation_seed: cfg.problem.collocation_seed,
    };
    Ok(execute(cfg, &prep, key, record_loss, cfg.output.error_grid))
}

/// Runs every (batch size, realization) pair on up to `threads` workers.
/// Realization `r` uses solver seed `seed + r` and, when collocation is
/// resampled, collocation seed `collocation_seed + r`. Results come back in
/// (batch size, realization) order regardless of scheduling.
pub fn run_sweep(cfg: &ExperimentConfig, threads: usize) -> CliResult<Vec<RunResult>> {
    let sweep = cfg.sweep.as_ref().expect("sweep section present");
    let evaluate = cfg.output.error_grid;
    let shared = if sweep.resample_collocation {
        None
    } else {
        Some(prepare(cfg, cfg.problem.collocation_seed, true)?)
    };
    let mut jobs = Vec::new();
    for &m in &sweep.batch_sizes {
        for r in 0..sweep.realizations {
            jobs.push(RunKey {
                batch_size: m,
                realization: r,
                seed: cfg.solver.seed.wrapping_add(r as u64),
                collocation_seed: if sweep.resample_collocation {
                    cfg.problem.collocation_seed.wrapping_add(r as u64)
                } else {
                    cfg.problem.collocation_seed
                },
            });
        }
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<RunResult>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let work = || loop {
        let j = next.fetch_add(1, Ordering::Relaxed);
        let Some(&key) = jobs.get(j) else { break };
        let result = match &shared {
            Some(prep) => execute(cfg, prep, key, true, evaluate),
            None => match prepare(cfg, key.collocation_seed, true) {
                Ok(prep) => execute(cfg, &prep, key, true, evaluate),
                Err(e) => failed(key, e.to_string()),
            },
        };
        *slots[j].lock().unwrap() = Some(result);
    };
    std::thread::scope(|s| {
        for _ in 1..threads.max(1) {
            s.spawn(work);
        }
        work();
    });
    Ok(slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every job ran"))
        .collect())
}

fn failed(key: RunKey, msg: String) -> RunResult {
    RunResult {
        key,
        history: None,
        grid: Vec::new(),
        errors: None,
        loss_unavailable: true,
        final_gn_converged: None,
        warning: None,
        failure: Some(msg),
    }
}
