use alloc::vec::Vec;

use super::config::{Mode, SolverConfig};
use crate::error::{invalid, Error, Result};
use crate::kernels::{self, DiffOp, Functional, KernelSpec};
use crate::linalg::{Cholesky, Matrix};
use crate::problems::{self, CollocationSet, EliminatedBlock, LatentLayout, ProblemSpec};

/// A problem together with its collocation set and kernel; everything the
/// solver needs that does not change during a run.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub problem: ProblemSpec,
    pub colloc: CollocationSet,
    pub kernel: KernelSpec,
    pub layout: LatentLayout,
    pub functionals: Vec<Functional>,
}

impl Discretization {
    pub fn new(problem: ProblemSpec, colloc: CollocationSet, kernel: KernelSpec) -> Result<Self> {
        if kernel.dimension() != problem.dimension() {
            return Err(invalid("kernel and problem dimensions differ"));
        }
        let layout = LatentLayout::new(&problem, &colloc);
        let functionals = problems::build_functionals(&problem, &colloc);
        Ok(Discretization {
            problem,
            colloc,
            kernel,
            layout,
            functionals,
        })
    }

    pub fn n_points(&self) -> usize {
        self.colloc.len()
    }

    pub fn point_functionals(&self, i: usize) -> &[Functional] {
        &self.functionals[self.layout.range(i)]
    }

    pub fn batch_functionals(&self, points: &[usize]) -> Vec<Functional> {
        points
            .iter()
            .flat_map(|&i| self.point_functionals(i).iter().cloned())
            .collect()
    }

    /// Number of unknowns the optimizer moves at point `i`.
    pub fn free_width(&self, i: usize, mode: Mode) -> usize {
        match mode {
            Mode::Elimination => problems::reduced_width(&self.problem, &self.colloc, i),
            Mode::Penalty => self.layout.width(i),
        }
    }

    /// Latent block and its Jacobian for free unknowns `v`.
    pub fn expand(&self, i: usize, mode: Mode, v: &[f64]) -> EliminatedBlock {
        match mode {
            Mode::Elimination => problems::eliminate(&self.problem, &self.colloc, i, v)
                .expect("free width always matches the reduced width"),
            Mode::Penalty => {
                let w = v.len();
                let mut jacobian = alloc::vec![0.0; w * w];
                for r in 0..w {
                    jacobian[r * w + r] = 1.0;
                }
                EliminatedBlock {
                    block: v.to_vec(),
                    jacobian,
                }
            }
        }
    }

    /// Free unknowns of a latent block.
    pub fn extract(&self, i: usize, mode: Mode, block: &[f64]) -> Vec<f64> {
        match mode {
            Mode::Elimination => problems::reduce(&self.problem, &self.colloc, i, block),
            Mode::Penalty => block.to_vec(),
        }
    }

    /// Free unknowns of the given points, concatenated.
    pub fn extract_all(&self, points: &[usize], mode: Mode, z: &[f64]) -> Vec<f64> {
        points
            .iter()
            .flat_map(|&i| self.extract(i, mode, &z[self.layout.range(i)]))
            .collect()
    }
}

/// Nugget scaling `ℛ`: every functional gets the mean Gram diagonal of its operator group.
pub fn nugget_scaling(functionals: &[Functional], gram: &Matrix) -> Vec<f64> {
    let mut groups: Vec<(DiffOp, f64, usize)> = Vec::new();
    for (j, f) in functionals.iter().enumerate() {
        let d = gram[(j, j)];
        match groups.iter_mut().find(|g| g.0 == f.op) {
            Some(g) => {
                g.1 += d;
                g.2 += 1;
            }
            None => groups.push((f.op, d, 1)),
        }
    }
    functionals
        .iter()
        .map(|f| {
            let g = groups.iter().find(|g| g.0 == f.op).unwrap();
            g.1 / g.2 as f64
        })
        .collect()
}

/// The regularized Gram matrix of a set of points with its factorization.
#[derive(Debug, Clone)]
pub struct BatchSystem {
    pub points: Vec<usize>,
    pub functionals: Vec<Functional>,
    /// Diagonal that was added to the Gram matrix.
    pub regularizer: Vec<f64>,
    /// Nugget magnitude actually used (after any retry).
    pub eta: f64,
    pub chol: Option<Cholesky>,
    pub inverse: Matrix,
}

impl BatchSystem {
    pub fn dim(&self) -> usize {
        self.functionals.len()
    }

    /// `wᵀ A⁻¹ w`.
    pub fn quad_form(&self, w: &[f64]) -> f64 {
        match &self.chol {
            Some(c) => c.quad_form(w),
            None => crate::linalg::dot(w, &self.inverse.matvec(w)),
        }
    }

    /// `A⁻¹ w`.
    pub fn solve(&self, w: &[f64]) -> Vec<f64> {
        match &self.chol {
            Some(c) => c.solve(w),
            None => self.inverse.matvec(w),
        }
    }
}

/// Systems above this size keep only the explicit inverse to save memory.
const KEEP_FACTOR_LIMIT: usize = 4096;

fn build_system(disc: &Discretization, points: Vec<usize>, config: &SolverConfig, eta: f64) -> Result<BatchSystem> {
    let functionals = disc.batch_functionals(&points);
    let mut a = kernels::gram(&disc.kernel, &functionals)?;
    let regularizer: Vec<f64> = if config.nugget_substitution {
        nugget_scaling(&functionals, &a).into_iter().map(|r| eta * r).collect()
    } else {
        let m = points.len() as f64;
        alloc::vec![config.lambda * m / config.beta; functionals.len()]
    };
    a.add_diagonal(&regularizer);
    let chol = Cholesky::factor(a).map_err(|pivot| Error::Conditioning { pivot, eta })?;
    let inverse = chol.inverse();
    let chol = (functionals.len() <= KEEP_FACTOR_LIMIT).then_some(chol);
    Ok(BatchSystem {
        points,
        functionals,
        regularizer,
        eta,
        chol,
        inverse,
    })
}

/// `A = κ(φ_I, φ_I) + ηℛ` (or `+ λM/β I` without nugget substitution) for a batch.
pub fn assemble_batch(disc: &Discretization, points: &[usize], config: &SolverConfig) -> Result<BatchSystem> {
    if points.is_empty() || points.iter().any(|&i| i >= disc.n_points()) {
        return Err(invalid("batch indices out of range"));
    }
    build_system(disc, points.to_vec(), config, config.eta)
}

/// [`assemble_batch`] with one retry at `10η` on a conditioning failure.
pub fn assemble_batch_with_retry(
    disc: &Discretization,
    points: &[usize],
    config: &SolverConfig,
) -> Result<BatchSystem> {
    match assemble_batch(disc, points, config) {
        Err(Error::Conditioning { .. }) if config.nugget_substitution => {
            build_system(disc, points.to_vec(), config, 10.0 * config.eta)
        }
        other => other,
    }
}

/// The full-batch system over every collocation point, built once per set.
pub type FullSystem = BatchSystem;

pub fn assemble_full(disc: &Discretization, config: &SolverConfig) -> Result<FullSystem> {
    let points: Vec<usize> = (0..disc.n_points()).collect();
    assemble_batch_with_retry(disc, &points, config)
}
