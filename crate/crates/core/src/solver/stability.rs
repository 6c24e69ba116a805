use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Mode, SolverConfig};
use super::gauss_newton::ProxObjective;
use super::system::{assemble_batch, BatchSystem, Discretization};
use super::LatentState;
use crate::batching::uniform_batch;
use crate::error::{invalid, Result};
use crate::kernels;
use crate::linalg::dot;
use crate::problems;

/// Mean swap-one gap for one batch size.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityPoint {
    pub m: usize,
    pub mean_gap: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub points: Vec<StabilityPoint>,
    /// Least-squares slope of `log(mean_gap)` against `log(m)`.
    pub slope: f64,
}

/// The solution of one proximal subproblem in representer form.
struct ProxSolution {
    system: BatchSystem,
    /// Stacked latent blocks of the batch.
    w: Vec<f64>,
    /// `A⁻¹ w`.
    c: Vec<f64>,
}

fn solve_prox(
    disc: &Discretization,
    center: &LatentState,
    points: &[usize],
    config: &SolverConfig,
) -> Result<ProxSolution> {
    let system = assemble_batch(disc, points, config)?;
    let v_bar = disc.extract_all(points, config.mode, &center.z);
    let out = ProxObjective::new(disc, &system, config.mode, config.lambda, v_bar.clone())
        .with_misfit(1.0 / points.len() as f64)
        .with_prox(config.gamma)
        .with_clamp(config.clamp_bound)
        .gauss_newton(v_bar, config.gn_tol, config.gn_max_iters)?;
    let c = system.solve(&out.w);
    Ok(ProxSolution { system, w: out.w, c })
}

/// `λ/2 |u|² + β/2 |[φ_ξ, u] - z_ξ|² + 1/2 |f_ξ(z_ξ) - y_ξ|²` for the
/// representer `u` of `sol` and the latent vector it induces.
fn single_sample_objective(
    disc: &Discretization,
    center: &LatentState,
    sol: &ProxSolution,
    xi: usize,
    config: &SolverConfig,
) -> Result<f64> {
    // |u|² = cᵀ κ c = cᵀ (A c - diag c) = wᵀc - Σ reg_j c_j².
    let reg: f64 = sol.system.regularizer.iter().zip(&sol.c).map(|(r, c)| r * c * c).sum();
    let norm2 = dot(&sol.w, &sol.c) - reg;
    let fx = disc.point_functionals(xi);
    let cross = kernels::cross_gram(&disc.kernel, fx, &sol.system.functionals)?;
    let z_xi: Vec<f64> = match sol.system.points.iter().position(|&p| p == xi) {
        Some(pos) => {
            let off: usize = sol.system.points[..pos].iter().map(|&p| disc.layout.width(p)).sum();
            sol.w[off..off + fx.len()].to_vec()
        }
        None => center.z[disc.layout.range(xi)].to_vec(),
    };
    let mut fit = 0.0;
    for (j, zj) in z_xi.iter().enumerate() {
        let d = dot(cross.row(j), &sol.c) - zj;
        fit += d * d;
    }
    let r = problems::residual(&disc.problem, &disc.colloc, xi, &z_xi)?;
    Ok(0.5 * config.lambda * norm2 + 0.5 * config.beta * fit + 0.5 * r * r)
}

/// `|φ(û_I, ẑ_I; ξ′) - φ(û_(i), ẑ_(i); ξ′)|` where `I_(i)` replaces `batch[pos]` by `replacement = ξ′`.
pub fn swap_gap(
    disc: &Discretization,
    center: &LatentState,
    batch: &[usize],
    pos: usize,
    replacement: usize,
    config: &SolverConfig,
) -> Result<f64> {
    if pos >= batch.len() || replacement >= disc.n_points() {
        return Err(invalid("swap position or replacement out of range"));
    }
    let mut swapped = batch.to_vec();
    swapped[pos] = replacement;
    let a = solve_prox(disc, center, batch, config)?;
    let b = solve_prox(disc, center, &swapped, config)?;
    let fa = single_sample_objective(disc, center, &a, replacement, config)?;
    let fb = single_sample_objective(disc, center, &b, replacement, config)?;
    Ok(libm::fabs(fa - fb))
}

/// Mean swap-one gaps over `trials` uniform batches for each size in `ms`,
/// all from the same center, plus the fitted log-log slope.
///
/// Intended for penalty mode with the uniform sampler; the replacement is
/// drawn from the points outside the batch.
pub fn stability_probe(
    disc: &Discretization,
    config: &SolverConfig,
    center: &LatentState,
    ms: &[usize],
    trials: usize,
    seed: u64,
) -> Result<StabilityReport> {
    if config.mode != Mode::Penalty {
        return Err(invalid("the stability probe addresses penalty mode"));
    }
    if trials == 0 || ms.is_empty() {
        return Err(invalid("need at least one batch size and one trial"));
    }
    let n = disc.n_points();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(ms.len());
    for &m in ms {
        if m == 0 || m >= n {
            return Err(invalid(alloc::format!("batch size {m} must lie in 1..{n}")));
        }
        let mut total = 0.0;
        for _ in 0..trials {
            let batch = uniform_batch(&mut rng, n, m)?.indices;
            let pos = rng.random_range(0..m);
            let replacement = loop {
                let c = rng.random_range(0..n);
                if !batch.contains(&c) {
                    break c;
                }
            };
            total += swap_gap(disc, center, &batch, pos, replacement, config)?;
        }
        points.push(StabilityPoint {
            m,
            mean_gap: total / trials as f64,
            trials,
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| libm::log(p.m as f64)).collect();
    let ys: Vec<f64> = points.iter().map(|p| libm::log(p.mean_gap)).collect();
    Ok(StabilityReport {
        slope: least_squares_slope(&xs, &ys),
        points,
    })
}

pub(crate) fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
