use crate::error::{invalid, Result};

/// How PDE constraints enter each subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dependent latent entries are solved for exactly; only free unknowns move.
    Elimination,
    /// Every latent entry is free and the residuals enter as a squared misfit.
    Penalty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampler {
    /// A uniform anchor plus its nearest neighbors.
    Neighborhood,
    /// Distinct indices drawn uniformly without replacement.
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Nugget magnitude.
    pub eta: f64,
    /// Proximal weight of every mini-batch step.
    pub gamma: f64,
    /// Proximal weight of the final full-batch solve.
    pub rho: f64,
    pub lambda: f64,
    /// Relaxation weight; only used when nugget substitution is off.
    pub beta: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub gn_tol: f64,
    pub gn_max_iters: usize,
    pub mode: Mode,
    pub sampler: Sampler,
    /// Radius of the optional ∞-norm box on the free unknowns.
    pub clamp_bound: Option<f64>,
    pub seed: u64,
    /// The full loss is evaluated on every `record_every`-th iteration and the last.
    pub record_every: usize,
    /// Replace `λM/β · I` by the block nugget `η ℛ`.
    pub nugget_substitution: bool,
    /// Rescale axes by inverse kernel lengthscales before neighbor search.
    pub metric_scaling: bool,
}

impl SolverConfig {
    pub fn elliptic() -> Self {
        SolverConfig {
            eta: 1e-13,
            gamma: 1.0,
            rho: 1.0,
            lambda: 1.0,
            beta: 1.0,
            iterations: 3000,
            batch_size: 12,
            gn_tol: 1e-5,
            gn_max_iters: 30,
            mode: Mode::Elimination,
            sampler: Sampler::Neighborhood,
            clamp_bound: None,
            seed: 0,
            record_every: 1,
            nugget_substitution: true,
            metric_scaling: false,
        }
    }

    pub fn burgers() -> Self {
        SolverConfig {
            eta: 1e-10,
            iterations: 1000,
            batch_size: 75,
            gn_max_iters: 100,
            record_every: 10,
            ..Self::elliptic()
        }
    }

    pub fn validate(&self, n_points: usize) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.eta) {
            return Err(invalid("eta must be positive"));
        }
        if !positive(self.gamma) {
            return Err(invalid("gamma must be positive"));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(invalid("rho must be nonnegative"));
        }
        if !positive(self.lambda) || !positive(self.beta) {
            return Err(invalid("lambda and beta must be positive"));
        }
        if self.iterations == 0 {
            return Err(invalid("iterations must be at least 1"));
        }
        if self.batch_size == 0 || self.batch_size > n_points {
            return Err(invalid(alloc::format!(
                "batch size {} outside 1..={n_points}",
                self.batch_size
            )));
        }
        if !positive(self.gn_tol) || self.gn_max_iters == 0 {
            return Err(invalid("Gauss-Newton tolerance and iteration cap must be positive"));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every must be at least 1"));
        }
        if let Some(b) = self.clamp_bound {
            if !positive(b) {
                return Err(invalid("clamp bound must be positive"));
            }
        }
        Ok(())
    }
}

/// Constants of the weak-convexity analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsConfig {
    /// Weak-convexity modulus `u_bound * hessian_bound`.
    pub mu: f64,
    /// Bound on `|f_i(z) - y_i|` over the box.
    pub u_bound: f64,
    /// Bound on the second derivative of `f_i` over the box.
    pub hessian_bound: f64,
    pub domain_diameter: f64,
}

impl DiagnosticsConfig {
    /// Constants for `f(z) = z^3 - c` with `|z| <= bound` and `|c| <= c_max`.
    pub fn cubic_box(bound: f64, c_max: f64) -> Self {
        let u_bound = bound * bound * bound + c_max;
        let hessian_bound = 6.0 * bound;
        DiagnosticsConfig {
            mu: u_bound * hessian_bound,
            u_bound,
            hessian_bound,
            domain_diameter: 2.0 * bound,
        }
    }
}
