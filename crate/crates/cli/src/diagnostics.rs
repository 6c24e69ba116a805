//! Self-checks on a small instance: matrix identities, finite differences,
//! the Moreau gradient, swap-one stability and the gradient-vs-K study.

use mbgp_core::kernels::{eval_op_k, DiffOp, KernelSpec};
use mbgp_core::linalg::{Cholesky, Matrix};
use mbgp_core::problems;
use mbgp_core::solver::{self, assemble_full, moreau_gradient, stability_probe, LatentState, Mode, NoClock, Sampler};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::experiment::discretization;
use crate::output::DiagnosticRow;

/// Largest collocation set accepted by [`run_diagnostics`].
pub const MAX_DIAGNOSTIC_POINTS: usize = 256;
pub const STABILITY_SIZES: [usize; 5] = [4, 8, 16, 32, 64];
pub const STABILITY_TRIALS: usize = 200;
pub const GRADIENT_CHECKPOINTS: [usize; 3] = [10, 100, 1000];

fn row(name: impl Into<String>, measured: f64, threshold: f64, pass: bool) -> DiagnosticRow {
    DiagnosticRow {
        name: name.into(),
        measured,
        threshold,
        pass,
    }
}

fn at_most(name: &str, measured: f64, threshold: f64) -> DiagnosticRow {
    row(name, measured, threshold, measured <= threshold)
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let mut b = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] = rng.random::<f64>() * 2.0 - 1.0;
        }
    }
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            k[(i, j)] = (0..n).map(|l| b[(i, l)] * b[(j, l)]).sum::<f64>() / n as f64;
        }
        k[(i, i)] += 1e-3;
    }
    k
}

/// Max-norm of `I - K(K+γI)⁻¹ - γ(K+γI)⁻¹` over random SPD `K`.
pub fn resolvent_identity(seed: u64, cases: usize, gammas: &[f64]) -> CliResult<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.random_range(1..=20);
        let k = random_spd(&mut rng, n);
        for &g in gammas {
            let mut a = k.clone();
            a.add_diagonal(&vec![g; n]);
            let inv = Cholesky::factor(a)
                .map_err(|pivot| mbgp_core::Error::Conditioning { pivot, eta: g })?
                .inverse();
            for i in 0..n {
                for j in 0..n {
                    let kinv: f64 = (0..n).map(|l| k[(i, l)] * inv[(l, j)]).sum();
                    let lhs = if i == j { 1.0 } else { 0.0 } - kinv;
                    worst = worst.max((lhs - g * inv[(i, j)]).abs());
                }
            }
        }
    }
    Ok(worst)
}

/// Worst relative error of first- and second-order operator entries against
/// central differences of lower-order entries, in plain f64.
pub fn kernel_fd(spec: &KernelSpec, seed: u64, samples: usize) -> CliResult<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.dimension();
    let scale = spec.lengthscales().iter().cloned().fold(f64::INFINITY, f64::min);
    let h = 1e-3 * scale;
    let mut worst: f64 = 0.0;
    let shift = |x: &[f64], a: usize, t: f64| {
        let mut y = x.to_vec();
        y[a] += t;
        y
    };
    for _ in 0..samples {
        let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| v + (rng.random::<f64>() - 0.5) * 2.0 * scale)
            .collect();
        let a = rng.random_range(0..d);
        let b = rng.random_range(0..d);
        let mut checks: Vec<(f64, f64)> = Vec::new();
        // ∂_a on the left from the identity entry.
        let exact = eval_op_k(spec, DiffOp::FirstDeriv(a), &x, DiffOp::Identity, &y)?;
        let fd = (eval_op_k(spec, DiffOp::Identity, &shift(&x, a, h), DiffOp::Identity, &y)?
            - eval_op_k(spec, DiffOp::Identity, &shift(&x, a, -h), DiffOp::Identity, &y)?)
            / (2.0 * h);
        checks.push((exact, fd));
        // ∂_b on the right of ∂_a.
        let exact = eval_op_k(spec, DiffOp::FirstDeriv(a), &x, DiffOp::FirstDeriv(b), &y)?;
        let fd = (eval_op_k(spec, DiffOp::FirstDeriv(a), &x, DiffOp::Identity, &shift(&y, b, h))?
            - eval_op_k(spec, DiffOp::FirstDeriv(a), &x, DiffOp::Identity, &shift(&y, b, -h))?)
            / (2.0 * h);
        checks.push((exact, fd));
        // ∂_a² on the left from the first derivative.
        let exact = eval_op_k(spec, DiffOp::SecondDeriv(a), &x, DiffOp::Identity, &y)?;
        let fd = (eval_op_k(spec, DiffOp::FirstDeriv(a), &shift(&x, a, h), DiffOp::Identity, &y)?
            - eval_op_k(spec, DiffOp::FirstDeriv(a), &shift(&x, a, -h), DiffOp::Identity, &y)?)
            / (2.0 * h);
        checks.push((exact, fd));
        // The Laplacian as the sum of second derivatives.
        let exact = eval_op_k(spec, DiffOp::Laplacian, &x, DiffOp::Identity, &y)?;
        let mut sum = 0.0;
        for ax in 0..d {
            sum += eval_op_k(spec, DiffOp::SecondDeriv(ax), &x, DiffOp::Identity, &y)?;
        }
        checks.push((exact, sum));
        // Entries are compared relative to the kernel scale k(x, x) = 1 at worst.
        for (e, f) in checks {
            worst = worst.max((e - f).abs() / f.abs().max(e.abs()).max(1.0));
        }
    }
    Ok(worst)
}

/// Worst relative error of the residual Jacobian against central differences.
pub fn jacobian_fd(cfg: &ExperimentConfig, seed: u64) -> CliResult<f64> {
    let problem = cfg.problem_spec();
    let disc = discretization(cfg, cfg.problem.collocation_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..disc.n_points() {
        let w = disc.layout.width(i);
        let z: Vec<f64> = (0..w).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let jac = problems::residual_jacobian(&problem, &disc.colloc, i, &z)?;
        for q in 0..w {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[q] += h;
            zm[q] -= h;
            let fd = (problems::residual(&problem, &disc.colloc, i, &zp)?
                - problems::residual(&problem, &disc.colloc, i, &zm)?)
                / (2.0 * h);
            worst = worst.max((jac[q] - fd).abs() / jac[q].abs().max(1.0));
        }
    }
    Ok(worst)
}

fn state_from_free(disc: &solver::Discretization, mode: Mode, v: &[f64]) -> LatentState {
    let mut z = vec![0.0; disc.layout.total()];
    let mut off = 0;
    for i in 0..disc.n_points() {
        let f = disc.free_width(i, mode);
        let block = disc.expand(i, mode, &v[off..off + f]).block;
        z[disc.layout.range(i)].copy_from_slice(&block);
        off += f;
    }
    LatentState { z, k: 1 }
}

/// Worst relative mismatch between central differences of the Moreau
/// envelope and `⟨ρ(z̄ - ẑ), d⟩` over random unit directions.
pub fn moreau_fd(cfg: &ExperimentConfig, seed: u64, directions: usize) -> CliResult<f64> {
    let disc = discretization(cfg, cfg.problem.collocation_seed)?;
    let sc = cfg.solver_config(cfg.solver.batch_size);
    let rho = if cfg.solver.rho > 0.0 { cfg.solver.rho } else { 1.0 };
    let full = assemble_full(&disc, &sc)?;
    let nf: usize = (0..disc.n_points()).map(|i| disc.free_width(i, sc.mode)).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..nf).map(|_| 0.1 * (rng.random::<f64>() * 2.0 - 1.0)).collect();
    let center = state_from_free(&disc, sc.mode, &v);
    let grad = moreau_gradient(&disc, &full, &center, rho, &sc)?;
    let envelope = |v: &[f64]| -> CliResult<f64> {
        let s = state_from_free(&disc, sc.mode, v);
        Ok(solver::final_solve_tol(&disc, &full, &s, rho, &sc, 1e-12, 200)?.envelope)
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let mut d: Vec<f64> = (0..nf).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        d.iter_mut().for_each(|x| *x /= norm);
        let plus: Vec<f64> = v.iter().zip(&d).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = v.iter().zip(&d).map(|(a, b)| a - h * b).collect();
        let fd = (envelope(&plus)? - envelope(&minus)?) / (2.0 * h);
        let exact: f64 = grad.iter().zip(&d).map(|(a, b)| a * b).sum();
        let gnorm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
        worst = worst.max((fd - exact).abs() / exact.abs().max(1e-3 * gnorm).max(1e-12));
    }
    Ok(worst)
}

/// Mean squared Moreau-gradient norm at every iterate of one run.
pub fn gradient_trace(cfg: &ExperimentConfig, iterations: usize) -> CliResult<Vec<f64>> {
    let disc = discretization(cfg, cfg.problem.collocation_seed)?;
    let mut sc = cfg.solver_config(cfg.solver.batch_size);
    sc.iterations = iterations;
    let rho = if cfg.solver.rho > 0.0 { cfg.solver.rho } else { 1.0 };
    let full = assemble_full(&disc, &sc)?;
    let mut trace = Vec::with_capacity(iterations);
    let mut failure = None;
    solver::run_with(&disc, &sc, None, &NoClock, |s| {
        if failure.is_some() {
            return;
        }
        match moreau_gradient(&disc, &full, s, rho, &sc) {
            Ok(g) => trace.push(g.iter().map(|x| x * x).sum()),
            Err(e) => failure = Some(e),
        }
    })?;
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(trace),
    }
}

pub fn run_diagnostics(cfg: &ExperimentConfig) -> CliResult<Vec<DiagnosticRow>> {
    if cfg.problem.n_total > MAX_DIAGNOSTIC_POINTS {
        return Err(CliError::Config(format!(
            "problem.n_total: diagnostics need at most {MAX_DIAGNOSTIC_POINTS} points, got {}",
            cfg.problem.n_total
        )));
    }
    let seed = cfg.solver.seed;
    let mut rows = vec![
        at_most(
            "resolvent_identity",
            resolvent_identity(seed, 50, &[1e-3, 1.0, 1e3])?,
            1e-8,
        ),
        at_most("kernel_fd", kernel_fd(&cfg.kernel_spec(), seed, 200)?, 1e-4),
        at_most("residual_jacobian_fd", jacobian_fd(cfg, seed)?, 1e-6),
        at_most("moreau_gradient_fd", moreau_fd(cfg, seed, 10)?, 1e-4),
    ];

    let n = cfg.problem.n_total;
    let ms: Vec<usize> = STABILITY_SIZES.iter().copied().filter(|&m| m < n).collect();
    if cfg.solver.mode == crate::config::ModeName::Penalty && ms.len() >= 2 {
        let disc = discretization(cfg, cfg.problem.collocation_seed)?;
        let mut sc = cfg.solver_config(cfg.solver.batch_size);
        sc.sampler = Sampler::Uniform;
        sc.nugget_substitution = false;
        let center = LatentState::initial(&disc, sc.mode);
        let report = stability_probe(&disc, &sc, &center, &ms, STABILITY_TRIALS, seed)?;
        for p in &report.points {
            rows.push(row(
                format!("stability_gap_m{}", p.m),
                p.mean_gap,
                f64::INFINITY,
                p.mean_gap.is_finite(),
            ));
        }
        let s = report.slope;
        rows.push(row("stability_slope", s, -0.5, (-1.5..=-0.5).contains(&s)));
    }

    let kmax = *GRADIENT_CHECKPOINTS.last().unwrap();
    let trace = gradient_trace(cfg, kmax)?;
    let mut previous = f64::INFINITY;
    for &k in &GRADIENT_CHECKPOINTS {
        let running_min = trace[..k].iter().cloned().fold(f64::INFINITY, f64::min);
        rows.push(row(
            format!("moreau_grad_min_k{k}"),
            running_min,
            previous,
            running_min <= previous,
        ));
        previous = running_min;
        // E|∇φ|² at an iterate drawn uniformly from the first k.
        let mean = trace[..k].iter().sum::<f64>() / k as f64;
        rows.push(row(
            format!("moreau_grad_mean_k{k}"),
            mean,
            f64::INFINITY,
            mean.is_finite(),
        ));
    }
    Ok(rows)
}
