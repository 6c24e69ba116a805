use alloc::vec;
use alloc::vec::Vec;

use super::config::Mode;
use super::system::{BatchSystem, Discretization};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm2, Cholesky, Matrix};
use crate::problems;

/// Step halvings tried before a Gauss–Newton step is rejected.
const MAX_HALVINGS: usize = 20;

#[derive(Debug, Clone, Copy)]
struct Block {
    point: usize,
    /// Offset in the stacked latent vector `w`.
    w_off: usize,
    width: usize,
    /// Offset in the free-variable vector `v`.
    v_off: usize,
    free: usize,
}

/// Value of the proximal subproblem split into its addends.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveParts {
    /// `λ/2 wᵀA⁻¹w`.
    pub quadratic: f64,
    /// `misfit_weight/2 Σ |f_i(w_i) - y_i|²`.
    pub misfit: f64,
    /// `prox_weight/2 |v - v̄|²`.
    pub prox: f64,
}

impl ObjectiveParts {
    pub fn total(&self) -> f64 {
        self.quadratic + self.misfit + self.prox
    }
}

/// The reduced proximal subproblem over the free unknowns of a set of points:
///
/// `J(v) = λ/2 w(v)ᵀA⁻¹w(v) + c/2 Σ_i |f_i(w_i(v)) - y_i|² + ρ/2 |v - v̄|²`
///
/// with `c = 0` in elimination mode.
pub struct ProxObjective<'a> {
    disc: &'a Discretization,
    system: &'a BatchSystem,
    blocks: Vec<Block>,
    n_free: usize,
    pub mode: Mode,
    pub lambda: f64,
    pub misfit_weight: f64,
    pub prox_weight: f64,
    pub center: Vec<f64>,
    pub clamp: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GnOutcome {
    pub v: Vec<f64>,
    /// Stacked latent blocks for `v`.
    pub w: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub objective: ObjectiveParts,
}

struct Expansion {
    w: Vec<f64>,
    jacobians: Vec<Vec<f64>>,
}

impl<'a> ProxObjective<'a> {
    pub fn new(disc: &'a Discretization, system: &'a BatchSystem, mode: Mode, lambda: f64, center: Vec<f64>) -> Self {
        let mut blocks = Vec::with_capacity(system.points.len());
        let (mut w_off, mut v_off) = (0, 0);
        for &point in &system.points {
            let width = disc.layout.width(point);
            let free = disc.free_width(point, mode);
            blocks.push(Block {
                point,
                w_off,
                width,
                v_off,
                free,
            });
            w_off += width;
            v_off += free;
        }
        assert_eq!(center.len(), v_off, "prox center has the wrong length");
        ProxObjective {
            disc,
            system,
            blocks,
            n_free: v_off,
            mode,
            lambda,
            misfit_weight: 0.0,
            prox_weight: 0.0,
            center,
            clamp: None,
        }
    }

    pub fn with_misfit(mut self, weight: f64) -> Self {
        self.misfit_weight = weight;
        self
    }

    pub fn with_prox(mut self, weight: f64) -> Self {
        self.prox_weight = weight;
        self
    }

    pub fn with_clamp(mut self, bound: Option<f64>) -> Self {
        self.clamp = bound;
        self
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    fn project(&self, v: &mut [f64]) {
        if let Some(b) = self.clamp {
            for x in v {
                *x = x.clamp(-b, b);
            }
        }
    }

    fn expand(&self, v: &[f64]) -> Expansion {
        let mut w = Vec::with_capacity(self.system.dim());
        let mut jacobians = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let e = self.disc.expand(b.point, self.mode, &v[b.v_off..b.v_off + b.free]);
            w.extend_from_slice(&e.block);
            jacobians.push(e.jacobian);
        }
        Expansion { w, jacobians }
    }

    /// Stacked latent blocks for free unknowns `v`.
    pub fn latent(&self, v: &[f64]) -> Vec<f64> {
        self.expand(v).w
    }

    fn residual(&self, b: &Block, w: &[f64]) -> f64 {
        problems::residual(
            &self.disc.problem,
            &self.disc.colloc,
            b.point,
            &w[b.w_off..b.w_off + b.width],
        )
        .expect("block widths follow the layout")
    }

    fn parts_at(&self, v: &[f64], w: &[f64]) -> ObjectiveParts {
        let quadratic = 0.5 * self.lambda * self.system.quad_form(w);
        let misfit = if self.misfit_weight > 0.0 {
            let s: f64 = self
                .blocks
                .iter()
                .map(|b| {
                    let r = self.residual(b, w);
                    r * r
                })
                .sum();
            0.5 * self.misfit_weight * s
        } else {
            0.0
        };
        let prox = if self.prox_weight > 0.0 {
            let d: f64 = v.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum();
            0.5 * self.prox_weight * d
        } else {
            0.0
        };
        ObjectiveParts {
            quadratic,
            misfit,
            prox,
        }
    }

    pub fn value(&self, v: &[f64]) -> ObjectiveParts {
        self.parts_at(v, &self.expand(v).w)
    }

    /// Gauss–Newton normal equations `(H, g)` at `v`.
    fn normal_equations(&self, v: &[f64], ex: &Expansion) -> (Matrix, Vec<f64>) {
        let n = self.system.dim();
        let nf = self.n_free;
        let ainv = &self.system.inverse;
        // Cᵀ = (A⁻¹ W)ᵀ, one row per free unknown.
        let mut ct = Matrix::zeros(nf, n);
        for (b, jac) in self.blocks.iter().zip(&ex.jacobians) {
            for c in 0..b.free {
                for r in 0..b.width {
                    let coef = jac[r * b.free + c];
                    if coef != 0.0 {
                        axpy(coef, ainv.row(b.w_off + r), ct.row_mut(b.v_off + c));
                    }
                }
            }
        }
        let mut h = Matrix::zeros(nf, nf);
        let mut g = vec![0.0; nf];
        for j in 0..nf {
            let row = ct.row(j);
            g[j] = self.lambda * dot(row, &ex.w);
            for (b, jac) in self.blocks.iter().zip(&ex.jacobians) {
                for c in 0..b.free {
                    let mut s = 0.0;
                    for r in 0..b.width {
                        s += row[b.w_off + r] * jac[r * b.free + c];
                    }
                    h[(j, b.v_off + c)] = self.lambda * s;
                }
            }
        }
        if self.misfit_weight > 0.0 {
            for (b, jac) in self.blocks.iter().zip(&ex.jacobians) {
                let wb = &ex.w[b.w_off..b.w_off + b.width];
                let r = self.residual(b, &ex.w);
                let gr = problems::residual_jacobian(&self.disc.problem, &self.disc.colloc, b.point, wb)
                    .expect("block widths follow the layout");
                // a = W_bᵀ ∇f_b
                let a: Vec<f64> = (0..b.free)
                    .map(|c| (0..b.width).map(|q| jac[q * b.free + c] * gr[q]).sum())
                    .collect();
                for p in 0..b.free {
                    g[b.v_off + p] += self.misfit_weight * r * a[p];
                    for q in 0..b.free {
                        h[(b.v_off + p, b.v_off + q)] += self.misfit_weight * a[p] * a[q];
                    }
                }
            }
        }
        for j in 0..nf {
            h[(j, j)] += self.prox_weight;
            g[j] += self.prox_weight * (v[j] - self.center[j]);
        }
        for i in 0..nf {
            for j in 0..i {
                let s = 0.5 * (h[(i, j)] + h[(j, i)]);
                h[(i, j)] = s;
                h[(j, i)] = s;
            }
        }
        (h, g)
    }

    /// Undamped Gauss–Newton from `v0` with a step-halving safeguard. Stops
    /// when a step is shorter than `tol` or after `max_iters` linearizations.
    ///
    /// The reported count excludes a final confirming linearization whose
    /// step fell below `tol`, unless it was the only one.
    pub fn gauss_newton(&self, v0: Vec<f64>, tol: f64, max_iters: usize) -> Result<GnOutcome> {
        let mut v = v0;
        self.project(&mut v);
        let mut ex = self.expand(&v);
        let mut current = self.parts_at(&v, &ex.w);
        let mut iterations = 0;
        let mut converged = false;
        if self.n_free == 0 {
            return Ok(GnOutcome {
                v,
                w: ex.w,
                iterations: 0,
                converged: true,
                objective: current,
            });
        }
        while iterations < max_iters {
            iterations += 1;
            let (h, mut g) = self.normal_equations(&v, &ex);
            let chol = Cholesky::factor(h).map_err(|pivot| Error::SingularNormalEquations { pivot })?;
            chol.solve_in_place(&mut g);
            let delta: Vec<f64> = g.iter().map(|x| -x).collect();
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let mut trial: Vec<f64> = v.iter().zip(&delta).map(|(a, d)| a + t * d).collect();
                self.project(&mut trial);
                let tex = self.expand(&trial);
                let parts = self.parts_at(&trial, &tex.w);
                if parts.total() <= current.total() {
                    accepted = Some((trial, tex, parts));
                    break;
                }
                t *= 0.5;
            }
            let Some((trial, tex, parts)) = accepted else {
                // No decrease along the step: stationary up to rounding if the step is short.
                converged = norm2(&delta) < tol;
                break;
            };
            let step: f64 = libm::sqrt(trial.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
            v = trial;
            ex = tex;
            current = parts;
            if step < tol {
                converged = true;
                break;
            }
        }
        let reported = if converged && iterations > 1 {
            iterations - 1
        } else {
            iterations
        };
        Ok(GnOutcome {
            v,
            w: ex.w,
            iterations: reported,
            converged,
            objective: current,
        })
    }
}
