//! The mini-batch proximal iteration and its full-batch companions.

mod config;
mod gauss_newton;
mod stability;
mod system;

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{DiagnosticsConfig, Mode, Sampler, SolverConfig};
pub use gauss_newton::{GnOutcome, ObjectiveParts, ProxObjective};
pub use stability::{stability_probe, swap_gap, StabilityPoint, StabilityReport};
pub use system::{
    assemble_batch, assemble_batch_with_retry, assemble_full, nugget_scaling, BatchSystem, Discretization, FullSystem,
};

use crate::batching::{sample_batch, uniform_batch, Batch, SpatialIndex};
use crate::error::{invalid, Result};
use crate::kernels;
use crate::linalg::dot;
use crate::problems;

/// The global latent vector and the iteration counter.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub z: Vec<f64>,
    pub k: usize,
}

impl LatentState {
    /// Free unknowns at zero, boundary blocks at their data, eliminated
    /// entries derived. In penalty mode every entry starts at zero.
    pub fn initial(disc: &Discretization, mode: Mode) -> Self {
        let mut z = alloc::vec![0.0; disc.layout.total()];
        if mode == Mode::Elimination {
            for i in 0..disc.n_points() {
                let zero = alloc::vec![0.0; disc.free_width(i, mode)];
                let block = disc.expand(i, mode, &zero).block;
                z[disc.layout.range(i)].copy_from_slice(&block);
            }
        }
        LatentState { z, k: 1 }
    }
}

/// Monotonic wall clock in milliseconds, supplied by the caller.
pub trait Clock {
    fn now_ms(&self) -> Option<f64>;
}

/// A clock that reports nothing; keeps runs free of timing data.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now_ms(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    /// `λ/2 zᵀA⁻¹z` over the full system, when recorded this iteration.
    pub psi_quadratic: Option<f64>,
    /// `1/(2N) Σ |f_i(z_i) - y_i|²`; identically zero in elimination mode.
    pub psi_misfit: Option<f64>,
    /// Subproblem objective at the accepted iterate.
    pub batch_objective: f64,
    pub gn_iters: usize,
    pub gn_converged: bool,
    /// Nugget used by the batch system (differs from the configured value after a retry).
    pub eta_used: f64,
    pub wall_ms: Option<f64>,
}

impl IterationRecord {
    pub fn psi(&self) -> Option<f64> {
        Some(self.psi_quadratic? + self.psi_misfit?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunHistory {
    pub records: Vec<IterationRecord>,
    /// `ψ` at the initial state, split as (quadratic, misfit).
    pub initial_psi: Option<(f64, f64)>,
    pub final_state: LatentState,
}

/// Result of one proximal step.
#[derive(Debug, Clone)]
pub struct StepInfo {
    pub objective: ObjectiveParts,
    pub gn_iters: usize,
    pub converged: bool,
}

fn misfit_weight(config: &SolverConfig, n_points: usize) -> f64 {
    match config.mode {
        Mode::Elimination => 0.0,
        Mode::Penalty => 1.0 / n_points as f64,
    }
}

/// Solves the proximal subproblem on the batch `system.points` centered at
/// `state` and writes the new blocks back; other entries are untouched.
pub fn proximal_step(
    disc: &Discretization,
    state: &LatentState,
    system: &BatchSystem,
    config: &SolverConfig,
) -> Result<(LatentState, StepInfo)> {
    let center = disc.extract_all(&system.points, config.mode, &state.z);
    let objective = ProxObjective::new(disc, system, config.mode, config.lambda, center.clone())
        .with_misfit(misfit_weight(config, system.points.len()))
        .with_prox(config.gamma)
        .with_clamp(config.clamp_bound);
    let out = objective.gauss_newton(center, config.gn_tol, config.gn_max_iters)?;
    let mut z = state.z.clone();
    let mut off = 0;
    for &i in &system.points {
        let r = disc.layout.range(i);
        let len = r.len();
        z[r].copy_from_slice(&out.w[off..off + len]);
        off += len;
    }
    Ok((
        LatentState { z, k: state.k + 1 },
        StepInfo {
            objective: out.objective,
            gn_iters: out.iterations,
            converged: out.converged,
        },
    ))
}

/// `ψ(z)` over the full system, as (quadratic, misfit).
pub fn full_loss(disc: &Discretization, full: &FullSystem, z: &[f64], config: &SolverConfig) -> (f64, f64) {
    let quadratic = 0.5 * config.lambda * full.quad_form(z);
    let misfit = match config.mode {
        Mode::Elimination => 0.0,
        Mode::Penalty => {
            let s: f64 = (0..disc.n_points())
                .map(|i| {
                    let r = problems::residual(&disc.problem, &disc.colloc, i, &z[disc.layout.range(i)])
                        .expect("layout widths");
                    r * r
                })
                .sum();
            0.5 * s / disc.n_points() as f64
        }
    };
    (quadratic, misfit)
}

pub fn spatial_index(disc: &Discretization, config: &SolverConfig) -> Result<SpatialIndex> {
    if config.metric_scaling {
        let d = disc.kernel.dimension();
        let ls = disc.kernel.lengthscales();
        let scale: Vec<f64> = (0..d).map(|a| 1.0 / ls[a.min(ls.len() - 1)]).collect();
        SpatialIndex::build_scaled(&disc.colloc.points, Some(&scale))
    } else {
        SpatialIndex::build(&disc.colloc.points)
    }
}

/// Runs `config.iterations` mini-batch proximal steps from [`LatentState::initial`].
///
/// `observer` sees every state after its step; `full` enables loss recording.
pub fn run_with(
    disc: &Discretization,
    config: &SolverConfig,
    full: Option<&FullSystem>,
    clock: &dyn Clock,
    mut observer: impl FnMut(&LatentState),
) -> Result<RunHistory> {
    config.validate(disc.n_points())?;
    let index = match config.sampler {
        Sampler::Neighborhood => Some(spatial_index(disc, config)?),
        Sampler::Uniform => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = LatentState::initial(disc, config.mode);
    let initial_psi = full.map(|f| full_loss(disc, f, &state.z, config));
    let start = clock.now_ms();
    let mut records = Vec::with_capacity(config.iterations);
    for k in 1..=config.iterations {
        let batch: Batch = match &index {
            Some(idx) => sample_batch(idx, &mut rng, config.batch_size)?,
            None => uniform_batch(&mut rng, disc.n_points(), config.batch_size)?,
        };
        let system = assemble_batch_with_retry(disc, &batch.indices, config)?;
        let (next, info) = proximal_step(disc, &state, &system, config)?;
        state = next;
        observer(&state);
        let record_now = k % config.record_every == 0 || k == config.iterations;
        let psi = full
            .filter(|_| record_now)
            .map(|f| full_loss(disc, f, &state.z, config));
        records.push(IterationRecord {
            k,
            psi_quadratic: psi.map(|p| p.0),
            psi_misfit: psi.map(|p| p.1),
            batch_objective: info.objective.total(),
            gn_iters: info.gn_iters,
            gn_converged: info.converged,
            eta_used: system.eta,
            wall_ms: clock.now_ms().zip(start).map(|(now, s)| now - s),
        });
    }
    Ok(RunHistory {
        records,
        initial_psi,
        final_state: state,
    })
}

pub fn run(disc: &Discretization, config: &SolverConfig, full: Option<&FullSystem>) -> Result<RunHistory> {
    run_with(disc, config, full, &NoClock, |_| {})
}

/// Output of the full-batch proximal solve.
#[derive(Debug, Clone)]
pub struct FinalSolution {
    /// Representer coefficients `A⁻¹ ẑ`.
    pub coefficients: Vec<f64>,
    pub state: LatentState,
    /// Free unknowns of the minimizer.
    pub free: Vec<f64>,
    /// `ψ(ẑ) + ρ/2 |ẑ - z̄|²`, the Moreau envelope value at the center.
    pub envelope: f64,
    pub gn_iters: usize,
    pub converged: bool,
}

/// Minimizes `ψ(z) + ρ/2 |z - z̄|²` over all points with Gauss–Newton,
/// starting from the center. With `ρ = 0` this is the plain full GP solve.
pub fn final_solve(
    disc: &Discretization,
    full: &FullSystem,
    center: &LatentState,
    rho: f64,
    config: &SolverConfig,
) -> Result<FinalSolution> {
    final_solve_tol(disc, full, center, rho, config, config.gn_tol, config.gn_max_iters)
}

/// [`final_solve`] with explicit Gauss–Newton stopping parameters.
pub fn final_solve_tol(
    disc: &Discretization,
    full: &FullSystem,
    center: &LatentState,
    rho: f64,
    config: &SolverConfig,
    tol: f64,
    max_iters: usize,
) -> Result<FinalSolution> {
    if center.z.len() != disc.layout.total() {
        return Err(invalid("state does not match the latent layout"));
    }
    let v_bar = disc.extract_all(&full.points, config.mode, &center.z);
    let objective = ProxObjective::new(disc, full, config.mode, config.lambda, v_bar.clone())
        .with_misfit(misfit_weight(config, disc.n_points()))
        .with_prox(rho)
        .with_clamp(config.clamp_bound);
    let out = objective.gauss_newton(v_bar, tol, max_iters)?;
    let coefficients = full.solve(&out.w);
    Ok(FinalSolution {
        coefficients,
        state: LatentState { z: out.w, k: center.k },
        free: out.v,
        envelope: out.objective.total(),
        gn_iters: out.iterations,
        converged: out.converged,
    })
}

/// How to evaluate the solution away from the collocation points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictStrategy {
    /// `κ(x, φ) c` with the coefficients of a full solve.
    Full,
    /// One proximal solve on the `M` training points nearest to `x`.
    Neighborhood,
}

/// `κ(x, φ)·c` with coefficients `c` from [`final_solve`].
pub fn predict_full(disc: &Discretization, coefficients: &[f64], x: &[f64]) -> Result<f64> {
    let row = kernels::cross_row(&disc.kernel, x, &disc.functionals)?;
    Ok(dot(&row, coefficients))
}

/// Evaluates the representer of a proximal solve (weight `rho`, centered at
/// `state`) on the `config.batch_size` training points nearest to `x`.
pub fn predict_neighborhood(
    disc: &Discretization,
    index: &SpatialIndex,
    state: &LatentState,
    rho: f64,
    config: &SolverConfig,
    x: &[f64],
) -> Result<f64> {
    let points = index.knn(x, config.batch_size);
    let system = assemble_batch_with_retry(disc, &points, config)?;
    let v_bar = disc.extract_all(&points, config.mode, &state.z);
    let objective = ProxObjective::new(disc, &system, config.mode, config.lambda, v_bar.clone())
        .with_misfit(misfit_weight(config, points.len()))
        .with_prox(rho)
        .with_clamp(config.clamp_bound);
    let out = objective.gauss_newton(v_bar, config.gn_tol, config.gn_max_iters)?;
    let c = system.solve(&out.w);
    let row = kernels::cross_row(&disc.kernel, x, &system.functionals)?;
    Ok(dot(&row, &c))
}

/// Dispatches on `strategy`. `Full` requires the coefficients of a final solve.
#[allow(clippy::too_many_arguments)]
pub fn predict(
    disc: &Discretization,
    x: &[f64],
    state: &LatentState,
    config: &SolverConfig,
    strategy: PredictStrategy,
    coefficients: Option<&[f64]>,
    index: Option<&SpatialIndex>,
    rho: f64,
) -> Result<f64> {
    match strategy {
        PredictStrategy::Full => {
            let c = coefficients.ok_or_else(|| invalid("full prediction needs final-solve coefficients"))?;
            predict_full(disc, c, x)
        }
        PredictStrategy::Neighborhood => {
            let owned;
            let idx = match index {
                Some(i) => i,
                None => {
                    owned = spatial_index(disc, config)?;
                    &owned
                }
            };
            predict_neighborhood(disc, idx, state, rho, config, x)
        }
    }
}

/// `ρ (z̄ - ẑ)` in free-unknown coordinates, with `ẑ` the full proximal point.
pub fn moreau_gradient(
    disc: &Discretization,
    full: &FullSystem,
    state: &LatentState,
    rho: f64,
    config: &SolverConfig,
) -> Result<Vec<f64>> {
    if !(rho > 0.0) {
        return Err(invalid("the Moreau gradient needs rho > 0"));
    }
    let sol = final_solve(disc, full, state, rho, config)?;
    let v_bar = disc.extract_all(&full.points, config.mode, &state.z);
    Ok(v_bar.iter().zip(&sol.free).map(|(a, b)| rho * (a - b)).collect())
}

/// Draws one batch with the configured sampler; exposed for tooling.
pub fn draw_batch<R: Rng + ?Sized>(
    disc: &Discretization,
    index: Option<&SpatialIndex>,
    rng: &mut R,
    m: usize,
) -> Result<Batch> {
    match index {
        Some(idx) => sample_batch(idx, rng, m),
        None => uniform_batch(rng, disc.n_points(), m),
    }
}
