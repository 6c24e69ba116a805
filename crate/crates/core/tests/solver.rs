#![allow(clippy::needless_range_loop)]

mod common;

use common::oracle::Oracle;
use mbgp_core::kernels::{gram, DiffOp, KernelSpec};
use mbgp_core::linalg::Matrix;
use mbgp_core::problems::{self, sample_collocation, CollocationSet, ProblemSpec};
use mbgp_core::reference::elliptic_true;
use mbgp_core::solver::*;
use proptest::prelude::*;
use rand::SeedableRng;

fn kernel() -> KernelSpec {
    KernelSpec::isotropic(0.2, 2).unwrap()
}

/// Three interior points and two boundary points, well separated.
fn elliptic_toy() -> Discretization {
    let p = ProblemSpec::elliptic();
    let c = CollocationSet::from_points(
        &p,
        vec![vec![0.3, 0.3], vec![0.7, 0.4], vec![0.5, 0.75]],
        vec![vec![0.0, 0.5], vec![1.0, 0.2]],
    )
    .unwrap();
    Discretization::new(p, c, kernel()).unwrap()
}

fn toy_config() -> SolverConfig {
    SolverConfig {
        eta: 1e-4,
        gn_tol: 1e-12,
        gn_max_iters: 200,
        ..SolverConfig::elliptic()
    }
}

/// Interior unknowns near the true solution, boundary blocks at their data.
fn toy_state(disc: &Discretization, mode: Mode, shift: f64) -> LatentState {
    let mut z = vec![0.0; disc.layout.total()];
    for i in 0..disc.n_points() {
        let free: Vec<f64> = match (mode, disc.colloc.is_interior(i)) {
            (Mode::Elimination, true) => vec![elliptic_true(&disc.colloc.points[i]) + shift * (i as f64 + 1.0)],
            (Mode::Elimination, false) => vec![],
            (Mode::Penalty, _) => (0..disc.layout.width(i)).map(|k| shift * (i + k) as f64).collect(),
        };
        let block = disc.expand(i, mode, &free).block;
        z[disc.layout.range(i)].copy_from_slice(&block);
    }
    LatentState { z, k: 1 }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn linear_disc(n: usize, seed: u64) -> Discretization {
    let p = ProblemSpec::linear();
    let c = sample_collocation(&p, n, n, seed).unwrap();
    Discretization::new(p, c, kernel()).unwrap()
}

#[test]
fn scalar_proximal_step_halves_the_datum() {
    let p = ProblemSpec::linear();
    let c = CollocationSet {
        points: vec![vec![0.5, 0.5]],
        n_interior: 1,
        y: vec![1.0],
    };
    let disc = Discretization::new(p, c, kernel()).unwrap();
    let config = SolverConfig {
        eta: 0.0,
        gamma: 0.0,
        mode: Mode::Penalty,
        batch_size: 1,
        ..toy_config()
    };
    let system = assemble_batch(&disc, &[0], &config).unwrap();
    assert_eq!(system.inverse.as_slice(), &[1.0]);
    let state = LatentState { z: vec![0.0], k: 1 };
    let (next, info) = proximal_step(&disc, &state, &system, &config).unwrap();
    assert!((next.z[0] - 0.5).abs() < 1e-14);
    assert_eq!(next.k, 2);
    assert_eq!(info.gn_iters, 1);
}

#[test]
fn huge_prox_weight_freezes_the_state() {
    let disc = elliptic_toy();
    let config = SolverConfig {
        gamma: 1e12,
        ..toy_config()
    };
    let state = toy_state(&disc, Mode::Elimination, 0.3);
    let system = assemble_batch(&disc, &[0, 1, 3], &config).unwrap();
    let (next, _) = proximal_step(&disc, &state, &system, &config).unwrap();
    assert!(max_diff(&next.z, &state.z) <= 1e-6 * (1.0 + state.z.iter().map(|v| v.abs()).fold(0.0, f64::max)));
    let full = assemble_full(&disc, &config).unwrap();
    let sol = final_solve(&disc, &full, &state, 1e12, &config).unwrap();
    let free = disc.extract_all(&full.points, Mode::Elimination, &state.z);
    assert!(max_diff(&sol.free, &free) <= 1e-6);
}

#[test]
fn proximal_step_matches_gradient_descent_oracle() {
    let disc = elliptic_toy();
    let config = toy_config();
    let state = toy_state(&disc, Mode::Elimination, 0.2);
    let batch = [0, 1, 3];
    let system = assemble_batch(&disc, &batch, &config).unwrap();
    let (next, _) = proximal_step(&disc, &state, &system, &config).unwrap();
    let center = disc.extract_all(&batch, Mode::Elimination, &state.z);
    let oracle = Oracle::new(
        &disc.problem,
        &disc.colloc,
        &disc.kernel,
        &batch,
        config.eta,
        true,
        0.0,
        config.gamma,
        center.clone(),
    );
    let v = oracle.minimize(&center, 1e-11, 20_000);
    let got = disc.extract_all(&batch, Mode::Elimination, &next.z);
    assert!(max_diff(&got, &v) <= 1e-6, "{got:?} vs {v:?}");
}

#[test]
fn full_solve_without_prox_matches_gradient_descent_oracle() {
    let disc = elliptic_toy();
    let config = toy_config();
    let state = toy_state(&disc, Mode::Elimination, 0.05);
    let full = assemble_full(&disc, &config).unwrap();
    let sol = final_solve(&disc, &full, &state, 0.0, &config).unwrap();
    assert!(sol.converged);
    let points: Vec<usize> = (0..disc.n_points()).collect();
    let center = disc.extract_all(&points, Mode::Elimination, &state.z);
    let oracle = Oracle::new(
        &disc.problem,
        &disc.colloc,
        &disc.kernel,
        &points,
        config.eta,
        true,
        0.0,
        0.0,
        center.clone(),
    );
    let v = oracle.minimize(&sol.free, 1e-11, 20_000);
    assert!(max_diff(&sol.free, &v) <= 1e-6, "{:?} vs {v:?}", sol.free);
    // and the oracle objective is stationary at the solver's answer
    let g = oracle.gradient(&sol.free);
    assert!(g.iter().all(|x| x.abs() < 1e-6));
}

#[test]
fn penalty_step_matches_gradient_descent_oracle() {
    let disc = elliptic_toy();
    let config = SolverConfig {
        mode: Mode::Penalty,
        ..toy_config()
    };
    let state = toy_state(&disc, Mode::Penalty, 0.1);
    let batch = [2, 4, 0];
    let system = assemble_batch(&disc, &batch, &config).unwrap();
    let (next, _) = proximal_step(&disc, &state, &system, &config).unwrap();
    let center = disc.extract_all(&batch, Mode::Penalty, &state.z);
    let oracle = Oracle::new(
        &disc.problem,
        &disc.colloc,
        &disc.kernel,
        &batch,
        config.eta,
        false,
        1.0 / 3.0,
        config.gamma,
        center.clone(),
    );
    let v = oracle.minimize(&center, 1e-11, 20_000);
    let got = disc.extract_all(&batch, Mode::Penalty, &next.z);
    assert!(
        max_diff(&got, &v) <= 1e-6,
        "{got:?} vs {v:?} J {} vs {}",
        oracle.value(&got),
        oracle.value(&v)
    );
}

#[test]
fn single_point_step_matches_bisection() {
    let p = ProblemSpec::elliptic();
    let c = CollocationSet::from_points(&p, vec![vec![0.4, 0.6]], vec![]).unwrap();
    let disc = Discretization::new(p, c, kernel()).unwrap();
    let config = SolverConfig {
        eta: 1e-2,
        ..toy_config()
    };
    let system = assemble_batch(&disc, &[0], &config).unwrap();
    let ubar = 0.3;
    let state = LatentState {
        z: disc.expand(0, Mode::Elimination, &[ubar]).block,
        k: 1,
    };
    let (next, _) = proximal_step(&disc, &state, &system, &config).unwrap();
    let oracle = Oracle::new(
        &disc.problem,
        &disc.colloc,
        &disc.kernel,
        &[0],
        config.eta,
        true,
        0.0,
        config.gamma,
        vec![ubar],
    );
    // bisection on the stationarity condition, bracketing the solver's root
    let got = next.z[0];
    let dj = |u: f64| oracle.gradient(&[u])[0];
    let (mut lo, mut hi) = (got - 0.5, got + 0.5);
    assert!(dj(lo) < 0.0 && dj(hi) > 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dj(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    assert!((got - 0.5 * (lo + hi)).abs() <= 1e-8);
}

#[test]
fn linear_full_solve_is_ridge_regression() {
    let disc = linear_disc(10, 4);
    let config = SolverConfig {
        mode: Mode::Penalty,
        eta: 1e-3,
        ..toy_config()
    };
    let full = assemble_full(&disc, &config).unwrap();
    let center = LatentState { z: vec![0.0; 10], k: 1 };
    let sol = final_solve(&disc, &full, &center, 0.0, &config).unwrap();
    assert_eq!(sol.gn_iters, 1);
    // z = A (A + λN I)⁻¹ y
    let a = oracle_matrix(&disc, &(0..10).collect::<Vec<_>>(), config.eta);
    let mut shifted = a.clone();
    shifted.add_diagonal(&[10.0 * config.lambda; 10]);
    let z = a.matvec(&common::gauss_jordan_inverse(&shifted).matvec(&disc.colloc.y));
    assert!(max_diff(&sol.state.z, &z) <= 1e-8);
}

#[test]
fn linear_proximal_step_is_a_linear_solve() {
    let disc = linear_disc(10, 5);
    let config = SolverConfig {
        mode: Mode::Penalty,
        eta: 1e-3,
        gamma: 0.7,
        ..toy_config()
    };
    let batch = [1, 4, 7, 8, 2];
    let state = LatentState {
        z: (0..10).map(|i| (i as f64 * 0.37).sin()).collect(),
        k: 1,
    };
    let system = assemble_batch(&disc, &batch, &config).unwrap();
    let (next, _) = proximal_step(&disc, &state, &system, &config).unwrap();
    // (λ A⁻¹ + (1/M + γ) I) z = y/M + γ z̄
    let ainv = common::gauss_jordan_inverse(&oracle_matrix(&disc, &batch, config.eta));
    let m = batch.len() as f64;
    let lhs = Matrix::from_fn(5, 5, |i, j| {
        ainv[(i, j)] + if i == j { 1.0 / m + config.gamma } else { 0.0 }
    });
    let rhs: Vec<f64> = batch
        .iter()
        .map(|&i| disc.colloc.y[i] / m + config.gamma * state.z[i])
        .collect();
    let z = common::gauss_jordan_inverse(&lhs).matvec(&rhs);
    let got: Vec<f64> = batch.iter().map(|&i| next.z[i]).collect();
    assert!(max_diff(&got, &z) <= 1e-8);
}

fn oracle_matrix(disc: &Discretization, points: &[usize], eta: f64) -> Matrix {
    let fs = disc.batch_functionals(points);
    let mut a = gram(&disc.kernel, &fs).unwrap();
    let r = common::oracle::group_means(&fs, &a);
    a.add_diagonal(&r.iter().map(|v| eta * v).collect::<Vec<_>>());
    a
}

#[test]
fn affine_problems_converge_in_one_iteration() {
    let disc = linear_disc(8, 1);
    let config = SolverConfig {
        mode: Mode::Penalty,
        eta: 1e-3,
        ..toy_config()
    };
    let system = assemble_batch(&disc, &[0, 1, 2], &config).unwrap();
    let state = LatentState { z: vec![0.3; 8], k: 1 };
    let (next, info) = proximal_step(&disc, &state, &system, &config).unwrap();
    assert!(info.converged);
    assert_eq!(info.gn_iters, 1);
    // from the optimum, one iteration with a step below tolerance
    let center = disc.extract_all(&[0, 1, 2], Mode::Penalty, &next.z);
    let objective = ProxObjective::new(&disc, &system, Mode::Penalty, 1.0, center.clone())
        .with_misfit(1.0 / 3.0)
        .with_prox(config.gamma);
    let out = objective.gauss_newton(center.clone(), 1e-10, 10).unwrap();
    let out2 = ProxObjective::new(&disc, &system, Mode::Penalty, 1.0, center.clone())
        .with_misfit(1.0 / 3.0)
        .with_prox(config.gamma)
        .gauss_newton(out.v.clone(), 1e-10, 10)
        .unwrap();
    assert_eq!(out2.iterations, 1);
    assert!(max_diff(&out2.v, &out.v) < 1e-10);
}

#[test]
fn assembled_system_is_gram_plus_grouped_nugget() {
    let disc = elliptic_toy();
    let config = toy_config();
    let pts = [0, 3, 1];
    let system = assemble_batch(&disc, &pts, &config).unwrap();
    let fs = disc.batch_functionals(&pts);
    assert_eq!(system.dim(), 5);
    let g = gram(&disc.kernel, &fs).unwrap();
    // groups: identity rows share one scale, Laplacian rows another
    let id = system.regularizer[0];
    let lap = system.regularizer[1];
    for (j, f) in fs.iter().enumerate() {
        let want = if f.op == DiffOp::Identity { id } else { lap };
        assert_eq!(system.regularizer[j], want);
    }
    assert!((lap - config.eta * 8.0 / 0.2f64.powi(4)).abs() < 1e-12);
    assert!((id - config.eta).abs() < 1e-18);
    let a = common::gauss_jordan_inverse(&system.inverse);
    for i in 0..5 {
        for j in 0..5 {
            let nug = if i == j { system.regularizer[i] } else { 0.0 };
            assert!((a[(i, j)] - nug - g[(i, j)]).abs() < 1e-6);
        }
    }
    let single = Discretization::new(
        ProblemSpec::elliptic(),
        CollocationSet::from_points(&ProblemSpec::elliptic(), vec![], vec![vec![0.0, 0.3]]).unwrap(),
        kernel(),
    )
    .unwrap();
    let s = assemble_batch(&single, &[0], &SolverConfig::elliptic()).unwrap();
    assert_eq!(s.regularizer, vec![1e-13]);
    assert!(assemble_batch(&disc, &[9], &config).is_err());
}

#[test]
fn elliptic_batches_of_twelve_have_twelve_to_twenty_four_rows() {
    let p = ProblemSpec::elliptic();
    let c = sample_collocation(&p, 1200, 900, 2).unwrap();
    let disc = Discretization::new(p, c, kernel()).unwrap();
    let config = SolverConfig::elliptic();
    let index = spatial_index(&disc, &config).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let b = draw_batch(&disc, Some(&index), &mut rng, 12).unwrap();
        let s = assemble_batch_with_retry(&disc, &b.indices, &config).unwrap();
        assert!((12..=24).contains(&s.dim()));
    }
}

#[test]
fn full_loss_examples() {
    let disc = linear_disc(6, 2);
    let config = SolverConfig {
        mode: Mode::Penalty,
        ..toy_config()
    };
    let full = assemble_full(&disc, &config).unwrap();
    let (q, m) = full_loss(&disc, &full, &[0.0; 6], &config);
    assert_eq!(q, 0.0);
    let want: f64 = disc.colloc.y.iter().map(|y| y * y).sum::<f64>() / 12.0;
    assert!((m - want).abs() < 1e-15);

    let one = Discretization::new(
        ProblemSpec::linear(),
        CollocationSet {
            points: vec![vec![0.5, 0.5]],
            n_interior: 1,
            y: vec![2.0],
        },
        kernel(),
    )
    .unwrap();
    let cfg = SolverConfig {
        eta: 0.0,
        ..config.clone()
    };
    let sys = assemble_full(&one, &cfg).unwrap();
    let (q, m) = full_loss(&one, &sys, &[2.0], &cfg);
    assert_eq!(q + m, 2.0);

    let e = elliptic_toy();
    let cfg = toy_config();
    let sys = assemble_full(&e, &cfg).unwrap();
    let (_, m) = full_loss(&e, &sys, &toy_state(&e, Mode::Elimination, 0.4).z, &cfg);
    assert_eq!(m, 0.0);
}

#[test]
fn representer_reproduces_the_latent_values() {
    let disc = elliptic_toy();
    let config = SolverConfig {
        eta: 1e-8,
        ..toy_config()
    };
    let full = assemble_full(&disc, &config).unwrap();
    let sol = final_solve(&disc, &full, &toy_state(&disc, Mode::Elimination, 0.0), 0.0, &config).unwrap();
    let g = gram(&disc.kernel, &disc.functionals).unwrap();
    let kc = g.matvec(&sol.coefficients);
    for j in 0..kc.len() {
        let gap = sol.state.z[j] - kc[j];
        let nug = full.regularizer[j] * sol.coefficients[j];
        assert!((gap - nug).abs() <= 1e-6 * sol.state.z[j].abs().max(1.0));
        assert!(gap.abs() <= 1e-6 * sol.state.z[j].abs().max(1.0) + nug.abs());
    }
    // point evaluation of the representer agrees with the identity entries
    for i in 0..disc.n_points() {
        let u = predict_full(&disc, &sol.coefficients, &disc.colloc.points[i]).unwrap();
        assert!((u - sol.state.z[disc.layout.offset(i)]).abs() < 1e-5);
    }
    assert_eq!(predict_full(&disc, &vec![0.0; kc.len()], &[0.2, 0.2]).unwrap(), 0.0);
}

#[test]
fn moreau_gradient_matches_envelope_differences() {
    let disc = elliptic_toy();
    let config = toy_config();
    let full = assemble_full(&disc, &config).unwrap();
    let rho = 2.0;
    let base = toy_state(&disc, Mode::Elimination, 0.3);
    let vbar = disc.extract_all(&full.points, Mode::Elimination, &base.z);
    let grad = moreau_gradient(&disc, &full, &base, rho, &config).unwrap();
    let state_at = |v: &[f64]| {
        let mut z = base.z.clone();
        let mut off = 0;
        for i in 0..disc.n_points() {
            let f = disc.free_width(i, Mode::Elimination);
            z[disc.layout.range(i)].copy_from_slice(&disc.expand(i, Mode::Elimination, &v[off..off + f]).block);
            off += f;
        }
        LatentState { z, k: 1 }
    };
    let env = |v: &[f64]| {
        final_solve_tol(&disc, &full, &state_at(v), rho, &config, 1e-13, 500)
            .unwrap()
            .envelope
    };
    let h = 1e-5;
    for k in 0..10 {
        let d: Vec<f64> = (0..vbar.len()).map(|j| ((k * 7 + j * 3) as f64).sin()).collect();
        let plus: Vec<f64> = vbar.iter().zip(&d).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = vbar.iter().zip(&d).map(|(a, b)| a - h * b).collect();
        let fd = (env(&plus) - env(&minus)) / (2.0 * h);
        let an: f64 = grad.iter().zip(&d).map(|(a, b)| a * b).sum();
        assert!(
            (fd - an).abs() <= 1e-4 * an.abs().max(1e-8),
            "direction {k}: fd {fd} vs {an}"
        );
    }
}

#[test]
fn moreau_gradient_vanishes_at_the_minimizer() {
    let disc = elliptic_toy();
    let config = toy_config();
    let full = assemble_full(&disc, &config).unwrap();
    let sol = final_solve(&disc, &full, &toy_state(&disc, Mode::Elimination, 0.0), 0.0, &config).unwrap();
    for rho in [0.5, 1.0, 10.0] {
        let g = moreau_gradient(&disc, &full, &sol.state, rho, &config).unwrap();
        assert!(g.iter().map(|x| x * x).sum::<f64>().sqrt() <= 1e-6);
    }
    assert!(moreau_gradient(&disc, &full, &sol.state, 0.0, &config).is_err());
}

#[test]
fn weak_convexity_of_the_cubic_residual() {
    let bound = 1.5;
    for c in [-3.0, -0.5, 0.0, 1.0, 3.0] {
        let dc = DiagnosticsConfig::cubic_box(bound, 3.0);
        let f = |z: f64| 0.5 * (z * z * z - c).powi(2) + 0.5 * dc.mu * z * z;
        let h = 1e-3;
        let n = (2.0 * bound / h) as i64;
        for k in 1..n {
            let z = -bound + k as f64 * h;
            let second = f(z + h) - 2.0 * f(z) + f(z - h);
            assert!(second >= -1e-9, "c={c} z={z} second={second}");
        }
    }
}

#[test]
fn k_one_with_the_full_batch_is_one_proximal_solve() {
    let disc = elliptic_toy();
    let config = SolverConfig {
        iterations: 1,
        batch_size: 5,
        ..toy_config()
    };
    let full = assemble_full(&disc, &config).unwrap();
    let h = run(&disc, &config, Some(&full)).unwrap();
    assert_eq!(h.records.len(), 1);
    let sol = final_solve(
        &disc,
        &full,
        &LatentState::initial(&disc, Mode::Elimination),
        config.gamma,
        &config,
    )
    .unwrap();
    assert!(
        max_diff(&h.final_state.z, &sol.state.z)
            <= 1e-8 * (1.0 + sol.state.z.iter().map(|v| v.abs()).fold(0.0, f64::max))
    );
    assert!(run(
        &disc,
        &SolverConfig {
            iterations: 0,
            ..config.clone()
        },
        None
    )
    .is_err());
}

#[test]
fn both_prediction_strategies_agree_when_the_batch_is_everything() {
    let disc = elliptic_toy();
    let config = SolverConfig {
        batch_size: 5,
        gn_tol: 1e-14,
        gn_max_iters: 500,
        ..toy_config()
    };
    let full = assemble_full(&disc, &config).unwrap();
    let state = toy_state(&disc, Mode::Elimination, 0.1);
    let sol = final_solve(&disc, &full, &state, config.rho, &config).unwrap();
    let index = spatial_index(&disc, &config).unwrap();
    for x in [[0.5, 0.5], [0.1, 0.9], [0.33, 0.2]] {
        let a = predict(
            &disc,
            &x,
            &state,
            &config,
            PredictStrategy::Full,
            Some(&sol.coefficients),
            None,
            config.rho,
        )
        .unwrap();
        let b = predict(
            &disc,
            &x,
            &state,
            &config,
            PredictStrategy::Neighborhood,
            None,
            Some(&index),
            config.rho,
        )
        .unwrap();
        assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn runs_are_deterministic_and_respect_the_partition() {
    let p = ProblemSpec::elliptic();
    let c = sample_collocation(&p, 60, 45, 6).unwrap();
    let disc = Discretization::new(p, c, kernel()).unwrap();
    let config = SolverConfig {
        iterations: 25,
        batch_size: 6,
        eta: 1e-8,
        seed: 9,
        ..SolverConfig::elliptic()
    };
    let full = assemble_full(&disc, &config).unwrap();
    let mut states = vec![LatentState::initial(&disc, Mode::Elimination)];
    let a = run_with(&disc, &config, Some(&full), &NoClock, |s| states.push(s.clone())).unwrap();
    let b = run(&disc, &config, Some(&full)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.records.len(), 25);
    assert!(a
        .records
        .iter()
        .all(|r| r.wall_ms.is_none() && r.psi_misfit == Some(0.0)));
    for s in &states {
        for i in 0..disc.n_points() {
            let r = problems::residual(&disc.problem, &disc.colloc, i, &s.z[disc.layout.range(i)]).unwrap();
            assert!(r.abs() <= 1e-10 * (1.0 + s.z[disc.layout.range(i)].iter().map(|v| v.abs()).fold(0.0, f64::max)));
        }
    }
    let other = run(
        &disc,
        &SolverConfig {
            seed: 10,
            ..config.clone()
        },
        Some(&full),
    )
    .unwrap();
    assert_ne!(other.final_state, a.final_state);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn step_touches_only_the_batch_and_never_increases_its_objective(
        batch in prop::sample::subsequence((0..5usize).collect::<Vec<_>>(), 1..=5),
        shift in -0.3f64..0.3,
        penalty in any::<bool>(),
    ) {
        let disc = elliptic_toy();
        let mode = if penalty { Mode::Penalty } else { Mode::Elimination };
        let config = SolverConfig { mode, gn_tol: 1e-8, gn_max_iters: 30, ..toy_config() };
        let state = toy_state(&disc, mode, shift);
        let system = assemble_batch(&disc, &batch, &config).unwrap();
        let (next, info) = proximal_step(&disc, &state, &system, &config).unwrap();
        for i in 0..disc.n_points() {
            if !batch.contains(&i) {
                for j in disc.layout.range(i) {
                    prop_assert_eq!(next.z[j].to_bits(), state.z[j].to_bits());
                }
            }
        }
        let center = disc.extract_all(&batch, mode, &state.z);
        let objective = ProxObjective::new(&disc, &system, mode, 1.0, center.clone())
            .with_misfit(if penalty { 1.0 / batch.len() as f64 } else { 0.0 })
            .with_prox(config.gamma);
        let before = objective.value(&center).total();
        prop_assert!(info.objective.total() <= before + 1e-10 * before.abs().max(1.0));
    }
}

#[test]
fn clamp_keeps_free_unknowns_in_the_box() {
    let disc = elliptic_toy();
    let config = SolverConfig {
        clamp_bound: Some(0.5),
        ..toy_config()
    };
    let full = assemble_full(&disc, &config).unwrap();
    let sol = final_solve(
        &disc,
        &full,
        &LatentState::initial(&disc, Mode::Elimination),
        0.0,
        &config,
    )
    .unwrap();
    assert!(sol.free.iter().all(|v| v.abs() <= 0.5));
}

#[test]
fn swapping_an_index_for_itself_gives_no_gap() {
    let disc = linear_disc(40, 3);
    let config = SolverConfig {
        mode: Mode::Penalty,
        sampler: Sampler::Uniform,
        nugget_substitution: false,
        ..toy_config()
    };
    let center = LatentState::initial(&disc, Mode::Penalty);
    let gap = swap_gap(&disc, &center, &[3, 9, 12], 1, 9, &config).unwrap();
    assert_eq!(gap, 0.0);
}

#[test]
fn strong_prox_shrinks_stability_gaps() {
    let disc = linear_disc(64, 3);
    let base = SolverConfig {
        mode: Mode::Penalty,
        sampler: Sampler::Uniform,
        nugget_substitution: false,
        ..toy_config()
    };
    let center = LatentState::initial(&disc, Mode::Penalty);
    let weak = stability_probe(&disc, &base, &center, &[4, 8], 40, 1).unwrap();
    let strong = stability_probe(
        &disc,
        &SolverConfig {
            gamma: 100.0,
            ..base.clone()
        },
        &center,
        &[4, 8],
        40,
        1,
    )
    .unwrap();
    for (a, b) in weak.points.iter().zip(&strong.points) {
        assert!(b.mean_gap < a.mean_gap);
    }
    assert!(stability_probe(
        &disc,
        &SolverConfig {
            mode: Mode::Elimination,
            ..base
        },
        &center,
        &[4],
        1,
        1
    )
    .is_err());
}
