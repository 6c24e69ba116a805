//! PDE problems encoded as collocation data.
//!
//! Points are stored interior first, then boundary. Each point owns a
//! contiguous block of the latent vector, one entry per functional attached
//! to it, so `z` and the flattened functional list index identically.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::kernels::{DiffOp, Functional};
use crate::reference;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    /// `-Δu + u^3 = f` on the unit square, `u = 0` on the boundary.
    Elliptic,
    /// `u_t + u u_x - nu u_xx = 0` on `(t, x) ∈ [0,1] x [-1,1]`.
    Burgers,
    /// Direct observations `u(x) = y(x)` of a smooth target on the unit square.
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    /// Closed box, one `(lo, hi)` pair per axis.
    pub domain: Vec<(f64, f64)>,
    /// Burgers viscosity; unused by the other problems.
    pub nu: f64,
    pub interior_ops: Vec<DiffOp>,
    pub boundary_ops: Vec<DiffOp>,
}

impl ProblemSpec {
    pub fn elliptic() -> Self {
        ProblemSpec {
            kind: ProblemKind::Elliptic,
            domain: vec![(0.0, 1.0), (0.0, 1.0)],
            nu: 0.0,
            interior_ops: vec![DiffOp::Identity, DiffOp::Laplacian],
            boundary_ops: vec![DiffOp::Identity],
        }
    }

    /// Axis 0 is time, axis 1 is space.
    pub fn burgers(nu: f64) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(invalid("viscosity must be positive"));
        }
        Ok(ProblemSpec {
            kind: ProblemKind::Burgers,
            domain: vec![(0.0, 1.0), (-1.0, 1.0)],
            nu,
            interior_ops: vec![
                DiffOp::Identity,
                DiffOp::FirstDeriv(0),
                DiffOp::FirstDeriv(1),
                DiffOp::SecondDeriv(1),
            ],
            boundary_ops: vec![DiffOp::Identity],
        })
    }

    /// Synthetic problem whose every point carries one identity functional and
    /// the residual `z - y(x)`. Intended for all-interior collocation sets.
    pub fn linear() -> Self {
        ProblemSpec {
            kind: ProblemKind::Linear,
            domain: vec![(0.0, 1.0), (0.0, 1.0)],
            nu: 0.0,
            interior_ops: vec![DiffOp::Identity],
            boundary_ops: vec![DiffOp::Identity],
        }
    }

    pub fn dimension(&self) -> usize {
        self.domain.len()
    }

    /// Target of the linear problem.
    pub fn linear_target(x: &[f64]) -> f64 {
        libm::sin(2.0 * PI * x[0]) * libm::cos(PI * x[1]) + 0.5 * x[0]
    }

    /// Data `g` on the boundary (initial condition included for Burgers).
    fn boundary_datum(&self, x: &[f64]) -> f64 {
        match self.kind {
            ProblemKind::Elliptic => 0.0,
            ProblemKind::Burgers => {
                if x[0] == 0.0 && libm::fabs(x[1]) < 1.0 {
                    -libm::sin(PI * x[1])
                } else {
                    0.0
                }
            }
            ProblemKind::Linear => Self::linear_target(x),
        }
    }

    /// Right-hand side at an interior point.
    fn interior_datum(&self, x: &[f64]) -> f64 {
        match self.kind {
            ProblemKind::Elliptic => reference::elliptic_forcing(x),
            ProblemKind::Burgers => 0.0,
            ProblemKind::Linear => Self::linear_target(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollocationSet {
    /// Interior points followed by boundary points.
    pub points: Vec<Vec<f64>>,
    pub n_interior: usize,
    /// One datum per point: forcing inside, boundary value on the boundary.
    pub y: Vec<f64>,
}

impl CollocationSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_interior(&self, i: usize) -> bool {
        i < self.n_interior
    }

    pub fn interior_points(&self) -> &[Vec<f64>] {
        &self.points[..self.n_interior]
    }

    pub fn boundary_points(&self) -> &[Vec<f64>] {
        &self.points[self.n_interior..]
    }

    /// Builds a set from explicit points and fills in the data.
    pub fn from_points(problem: &ProblemSpec, interior: Vec<Vec<f64>>, boundary: Vec<Vec<f64>>) -> Result<Self> {
        let dim = problem.dimension();
        if interior.iter().chain(&boundary).any(|p| p.len() != dim) {
            return Err(invalid("collocation point has the wrong dimension"));
        }
        let n_interior = interior.len();
        let mut points = interior;
        points.extend(boundary);
        if points.is_empty() {
            return Err(invalid("collocation set is empty"));
        }
        let y = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if i < n_interior {
                    problem.interior_datum(p)
                } else {
                    problem.boundary_datum(p)
                }
            })
            .collect();
        Ok(CollocationSet { points, n_interior, y })
    }
}

/// Offset and width of each point's latent block.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentLayout {
    offsets: Vec<usize>,
    total: usize,
}

impl LatentLayout {
    pub fn new(problem: &ProblemSpec, colloc: &CollocationSet) -> Self {
        let mut offsets = Vec::with_capacity(colloc.len() + 1);
        let mut total = 0;
        for i in 0..colloc.len() {
            offsets.push(total);
            total += ops_for(problem, colloc, i).len();
        }
        offsets.push(total);
        LatentLayout { offsets, total }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn n_points(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    pub fn width(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn range(&self, i: usize) -> core::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }
}

pub fn ops_for<'a>(problem: &'a ProblemSpec, colloc: &CollocationSet, i: usize) -> &'a [DiffOp] {
    if colloc.is_interior(i) {
        &problem.interior_ops
    } else {
        &problem.boundary_ops
    }
}

fn uniform_in(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    loop {
        let v = lo + (hi - lo) * rng.random::<f64>();
        if v > lo && v < hi {
            return v;
        }
    }
}

/// A uniformly distributed point on the boundary components that carry data.
fn boundary_sample(problem: &ProblemSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let s = 4.0 * rng.random::<f64>();
    match problem.kind {
        ProblemKind::Elliptic | ProblemKind::Linear => {
            let side = (s as usize).min(3);
            let u = s - side as f64;
            match side {
                0 => vec![u, 0.0],
                1 => vec![1.0, u],
                2 => vec![1.0 - u, 1.0],
                _ => vec![0.0, 1.0 - u],
            }
        }
        // {t=0} x [-1,1] has length 2, the lines x = ±1 have length 1 each.
        ProblemKind::Burgers => {
            if s < 2.0 {
                vec![0.0, s - 1.0]
            } else if s < 3.0 {
                vec![s - 2.0, -1.0]
            } else {
                vec![s - 3.0, 1.0]
            }
        }
    }
}

/// Uniform i.i.d. interior points in the open box and uniform boundary points.
pub fn sample_collocation(
    problem: &ProblemSpec,
    n_total: usize,
    n_interior: usize,
    seed: u64,
) -> Result<CollocationSet> {
    if n_interior == 0 || n_interior > n_total {
        return Err(invalid(alloc::format!(
            "need 1 <= n_interior <= n_total, got n_interior={n_interior}, n_total={n_total}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let interior: Vec<Vec<f64>> = (0..n_interior)
        .map(|_| {
            problem
                .domain
                .iter()
                .map(|&(lo, hi)| uniform_in(&mut rng, lo, hi))
                .collect()
        })
        .collect();
    let boundary = (n_interior..n_total)
        .map(|_| boundary_sample(problem, &mut rng))
        .collect();
    CollocationSet::from_points(problem, interior, boundary)
}

/// The flattened functional list, aligned with [`LatentLayout`].
pub fn build_functionals(problem: &ProblemSpec, colloc: &CollocationSet) -> Vec<Functional> {
    (0..colloc.len())
        .flat_map(|i| point_functionals(problem, colloc, i))
        .collect()
}

pub fn point_functionals(problem: &ProblemSpec, colloc: &CollocationSet, i: usize) -> Vec<Functional> {
    ops_for(problem, colloc, i)
        .iter()
        .map(|&op| Functional::new(colloc.points[i].clone(), op))
        .collect()
}

fn check_width(got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(invalid(alloc::format!("latent block has width {got}, expected {want}")));
    }
    Ok(())
}

/// `f_i(z_i) - y_i`.
pub fn residual(problem: &ProblemSpec, colloc: &CollocationSet, i: usize, z: &[f64]) -> Result<f64> {
    check_width(z.len(), ops_for(problem, colloc, i).len())?;
    let y = colloc.y[i];
    if !colloc.is_interior(i) {
        return Ok(z[0] - y);
    }
    Ok(match problem.kind {
        ProblemKind::Elliptic => -z[1] + z[0] * z[0] * z[0] - y,
        ProblemKind::Burgers => z[1] + z[0] * z[2] - problem.nu * z[3],
        ProblemKind::Linear => z[0] - y,
    })
}

/// Gradient of [`residual`] with respect to `z_i`.
pub fn residual_jacobian(problem: &ProblemSpec, colloc: &CollocationSet, i: usize, z: &[f64]) -> Result<Vec<f64>> {
    check_width(z.len(), ops_for(problem, colloc, i).len())?;
    if !colloc.is_interior(i) {
        return Ok(vec![1.0]);
    }
    Ok(match problem.kind {
        ProblemKind::Elliptic => vec![3.0 * z[0] * z[0], -1.0],
        ProblemKind::Burgers => vec![z[2], 1.0, z[0], -problem.nu],
        ProblemKind::Linear => vec![1.0],
    })
}

/// Number of free unknowns left at point `i` after elimination.
pub fn reduced_width(problem: &ProblemSpec, colloc: &CollocationSet, i: usize) -> usize {
    if !colloc.is_interior(i) {
        return 0;
    }
    match problem.kind {
        ProblemKind::Elliptic => 1,
        ProblemKind::Burgers => 3,
        ProblemKind::Linear => 0,
    }
}

/// A full latent block reconstructed from its free unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct EliminatedBlock {
    pub block: Vec<f64>,
    /// `width x reduced_width`, row-major.
    pub jacobian: Vec<f64>,
}

/// Completes a block so that its residual vanishes.
pub fn eliminate(problem: &ProblemSpec, colloc: &CollocationSet, i: usize, reduced: &[f64]) -> Result<EliminatedBlock> {
    check_width(reduced.len(), reduced_width(problem, colloc, i))?;
    let y = colloc.y[i];
    if !colloc.is_interior(i) || problem.kind == ProblemKind::Linear {
        return Ok(EliminatedBlock {
            block: vec![y],
            jacobian: Vec::new(),
        });
    }
    Ok(match problem.kind {
        ProblemKind::Elliptic => {
            let u = reduced[0];
            EliminatedBlock {
                block: vec![u, u * u * u - y],
                jacobian: vec![1.0, 3.0 * u * u],
            }
        }
        ProblemKind::Burgers => {
            let (u, ux, uxx) = (reduced[0], reduced[1], reduced[2]);
            let nu = problem.nu;
            EliminatedBlock {
                block: vec![u, nu * uxx - u * ux, ux, uxx],
                #[rustfmt::skip]
                jacobian: vec![
                    1.0, 0.0, 0.0,
                    -ux, -u, nu,
                    0.0, 1.0, 0.0,
                    0.0, 0.0, 1.0,
                ],
            }
        }
        ProblemKind::Linear => unreachable!(),
    })
}

/// Extracts the free unknowns from a full block; inverse of [`eliminate`].
pub fn reduce(problem: &ProblemSpec, colloc: &CollocationSet, i: usize, block: &[f64]) -> Vec<f64> {
    match reduced_width(problem, colloc, i) {
        0 => Vec::new(),
        1 => vec![block[0]],
        _ => vec![block[0], block[2], block[3]],
    }
}
