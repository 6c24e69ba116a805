//! Exact solutions used to measure errors: the manufactured elliptic solution
//! and the Cole–Hopf representation of viscous Burgers.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{invalid, Result};

fn sin(x: f64) -> f64 {
    libm::sin(x)
}

/// `sin(pi x1) sin(pi x2) + 4 sin(4 pi x1) sin(4 pi x2)`.
pub fn elliptic_true(x: &[f64]) -> f64 {
    sin(PI * x[0]) * sin(PI * x[1]) + 4.0 * sin(4.0 * PI * x[0]) * sin(4.0 * PI * x[1])
}

/// Closed-form Laplacian of [`elliptic_true`].
pub fn elliptic_laplacian(x: &[f64]) -> f64 {
    -2.0 * PI * PI * sin(PI * x[0]) * sin(PI * x[1]) - 128.0 * PI * PI * sin(4.0 * PI * x[0]) * sin(4.0 * PI * x[1])
}

/// Right-hand side `-Δu + u^3` for the manufactured solution.
pub fn elliptic_forcing(x: &[f64]) -> f64 {
    let u = elliptic_true(x);
    -elliptic_laplacian(x) + u * u * u
}

/// Default node count for the Cole–Hopf quadrature.
pub const DEFAULT_QUAD_NODES: usize = 128;

/// Number of eigenvalues of the Hermite Jacobi matrix below `lambda` (Sturm count).
fn sturm_count(n: usize, lambda: f64) -> usize {
    let mut count = 0;
    let mut q = -lambda;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..n {
        if q == 0.0 {
            q = -1e-300;
        }
        q = -lambda - (i as f64 / 2.0) / q;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Orthonormal Hermite recurrence at `z`: returns `(p_n(z), p_n'(z))` up to the
/// common factor `exp(-z^2/2)`.
fn hermite_pair(n: usize, z: f64) -> (f64, f64) {
    let pim4 = 0.751_125_544_464_942_5; // pi^(-1/4)
    let mut p1 = pim4;
    let mut p2 = 0.0;
    for j in 0..n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * libm::sqrt(2.0 / (jf + 1.0)) * p2 - libm::sqrt(jf / (jf + 1.0)) * p3;
    }
    (p1, libm::sqrt(2.0 * n as f64) * p2)
}

/// Gauss–Hermite nodes and weights for `∫ exp(-s^2) g(s) ds`, ascending nodes.
///
/// Nodes are bracketed by bisection on the Jacobi matrix and polished by Newton.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    let bound = libm::sqrt(2.0 * n as f64) + 1.0;
    let mut x = alloc::vec![0.0; n];
    let mut w = alloc::vec![0.0; n];
    for k in 0..n {
        // the k-th smallest eigenvalue lies where the count steps from k to k + 1
        let (mut lo, mut hi) = (-bound, bound);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if sturm_count(n, mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-12 * hi.abs().max(1.0) {
                break;
            }
        }
        let mut z = 0.5 * (lo + hi);
        let mut pp = hermite_pair(n, z).1;
        for _ in 0..10 {
            let (p, dp) = hermite_pair(n, z);
            pp = dp;
            let step = p / dp;
            z -= step;
            if libm::fabs(step) <= 1e-15 * libm::fabs(z).max(1.0) {
                pp = hermite_pair(n, z).1;
                break;
            }
        }
        x[k] = z;
        w[k] = 2.0 / (pp * pp);
    }
    // exact symmetry about the origin
    for k in 0..n / 2 {
        let (a, b) = (x[n - 1 - k], w[n - 1 - k]);
        x[k] = -a;
        w[k] = b;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// Cached quadrature rule for repeated Cole–Hopf evaluations.
#[derive(Debug, Clone)]
pub struct ColeHopf {
    nu: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl ColeHopf {
    pub fn new(nu: f64, quad_nodes: usize) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(invalid("viscosity must be positive"));
        }
        if quad_nodes == 0 {
            return Err(invalid("quadrature needs at least one node"));
        }
        let (nodes, weights) = gauss_hermite(quad_nodes);
        Ok(ColeHopf { nu, nodes, weights })
    }

    /// `u(t, x)` for the initial condition `-sin(pi x)`.
    pub fn eval(&self, t: f64, x: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(invalid("time must be nonnegative"));
        }
        if t == 0.0 {
            return Ok(-sin(PI * x));
        }
        let scale = libm::sqrt(4.0 * self.nu * t);
        let c = 1.0 / (2.0 * PI * self.nu);
        let mut num = 0.0;
        let mut den = 0.0;
        for (&s, &w) in self.nodes.iter().zip(&self.weights) {
            let arg = PI * (x - scale * s);
            // exp(-cos/(2 pi nu)) shifted by its maximum so it never overflows.
            let g = w * libm::exp(-c * (1.0 + libm::cos(arg)));
            num += libm::sin(arg) * g;
            den += g;
        }
        Ok(-num / den)
    }
}

/// Cole–Hopf solution of `u_t + u u_x - nu u_xx = 0`, `u(0, x) = -sin(pi x)`.
pub fn burgers_true(t: f64, x: f64, nu: f64, quad_nodes: usize) -> Result<f64> {
    ColeHopf::new(nu, quad_nodes)?.eval(t, x)
}

/// Tensor grid over a box; points are ordered with the first axis outermost.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalGrid {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub resolution: [usize; 2],
}

impl EvalGrid {
    pub fn new(lo: [f64; 2], hi: [f64; 2], resolution: [usize; 2]) -> Result<Self> {
        if resolution.iter().any(|&r| r < 2) {
            return Err(invalid("grid resolution must be at least 2 per axis"));
        }
        if (0..2).any(|a| !(hi[a] > lo[a])) {
            return Err(invalid("grid box must have positive extent"));
        }
        Ok(EvalGrid { lo, hi, resolution })
    }

    /// 100 x 100 grid.
    pub fn default_for(lo: [f64; 2], hi: [f64; 2]) -> Self {
        EvalGrid {
            lo,
            hi,
            resolution: [100, 100],
        }
    }

    pub fn len(&self) -> usize {
        self.resolution[0] * self.resolution[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> Vec<[f64; 2]> {
        let coord =
            |a: usize, i: usize| self.lo[a] + (self.hi[a] - self.lo[a]) * i as f64 / (self.resolution[a] - 1) as f64;
        let mut pts = Vec::with_capacity(self.len());
        for i in 0..self.resolution[0] {
            for j in 0..self.resolution[1] {
                pts.push([coord(0, i), coord(1, j)]);
            }
        }
        pts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub linf: f64,
    /// `|u_num - u_true|_2 / |u_true|_2`; the plain norm of the difference when `u_true` is zero.
    pub rel_l2: f64,
    pub abs_err: Vec<f64>,
}

pub fn error_report(u_numeric: &[f64], u_true: &[f64]) -> Result<ErrorReport> {
    if u_numeric.len() != u_true.len() {
        return Err(invalid(alloc::format!(
            "grid sizes differ: {} numeric vs {} true values",
            u_numeric.len(),
            u_true.len()
        )));
    }
    let abs_err: Vec<f64> = u_numeric.iter().zip(u_true).map(|(a, b)| libm::fabs(a - b)).collect();
    let linf = abs_err.iter().fold(0.0, |m: f64, &e| m.max(e));
    let diff = libm::sqrt(abs_err.iter().map(|e| e * e).sum::<f64>());
    let norm = libm::sqrt(u_true.iter().map(|v| v * v).sum::<f64>());
    let rel_l2 = if norm > 0.0 { diff / norm } else { diff };
    Ok(ErrorReport { linf, rel_l2, abs_err })
}
