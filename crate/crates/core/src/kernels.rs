//! Gaussian kernels and their closed-form operator derivatives.
//!
//! Both families are products of one-dimensional Gaussians
//! `exp(-c_a (x_a - y_a)^2)`, so every mixed derivative factors per axis.
//! With `s_a = sqrt(c_a)` and `d = x - y`,
//!
//! ```text
//! d^l/dx_a^l d^r/dy_a^r exp(-c_a d_a^2) = (-1)^l s_a^(l+r) H_(l+r)(s_a d_a) exp(-c_a d_a^2)
//! ```
//!
//! where `H_n` is the physicists' Hermite polynomial.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;

/// Highest per-axis derivative order reachable with the supported operators.
const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    /// `exp(-|x - y|^2 / (2 sigma^2))`.
    GaussianIsotropic,
    /// `exp(-sum_a (x_a - y_a)^2 / sigma_a^2)`; note there is no factor 1/2.
    GaussianAnisotropic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    lengthscales: Vec<f64>,
    dimension: usize,
    /// Per-axis `s_a`, the square root of the exponent coefficient.
    scale: Vec<f64>,
}

impl KernelSpec {
    pub fn isotropic(sigma: f64, dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(invalid("kernel dimension must be positive"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid("lengthscale must be positive and finite"));
        }
        let s = libm::sqrt(1.0 / (2.0 * sigma * sigma));
        Ok(KernelSpec {
            family: KernelFamily::GaussianIsotropic,
            lengthscales: alloc::vec![sigma],
            dimension,
            scale: alloc::vec![s; dimension],
        })
    }

    /// One lengthscale per axis; the dimension is the number of lengthscales.
    pub fn anisotropic(lengthscales: &[f64]) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(invalid("anisotropic kernel needs at least one lengthscale"));
        }
        if lengthscales.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(invalid("lengthscales must be positive and finite"));
        }
        Ok(KernelSpec {
            family: KernelFamily::GaussianAnisotropic,
            lengthscales: lengthscales.to_vec(),
            dimension: lengthscales.len(),
            scale: lengthscales.iter().map(|&l| 1.0 / l).collect(),
        })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dimension {
            return Err(invalid(alloc::format!(
                "point has dimension {} but the kernel expects {}",
                x.len(),
                self.dimension
            )));
        }
        Ok(())
    }

    fn check_op(&self, op: DiffOp) -> Result<()> {
        match op.axis() {
            Some(a) if a >= self.dimension => Err(Error::UnsupportedOperator(alloc::format!(
                "{op:?} on a {}-dimensional kernel",
                self.dimension
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiffOp {
    Identity,
    FirstDeriv(usize),
    SecondDeriv(usize),
    Laplacian,
}

impl DiffOp {
    fn axis(self) -> Option<usize> {
        match self {
            DiffOp::FirstDeriv(a) | DiffOp::SecondDeriv(a) => Some(a),
            _ => None,
        }
    }

    fn rank(self) -> (u8, usize) {
        match self {
            DiffOp::Identity => (0, 0),
            DiffOp::FirstDeriv(a) => (1, a),
            DiffOp::SecondDeriv(a) => (2, a),
            DiffOp::Laplacian => (3, 0),
        }
    }

    /// Short stable name, used for grouping and file output.
    pub fn label(self) -> alloc::string::String {
        match self {
            DiffOp::Identity => "id".into(),
            DiffOp::FirstDeriv(a) => alloc::format!("d{a}"),
            DiffOp::SecondDeriv(a) => alloc::format!("dd{a}"),
            DiffOp::Laplacian => "lap".into(),
        }
    }
}

/// A point evaluation composed with a differential operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Functional {
    pub point: Vec<f64>,
    pub op: DiffOp,
}

impl Functional {
    pub fn new(point: Vec<f64>, op: DiffOp) -> Self {
        Functional { point, op }
    }
}

pub fn eval_k(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.check_point(x)?;
    spec.check_point(y)?;
    Ok(eval_unchecked(spec, DiffOp::Identity, x, DiffOp::Identity, y))
}

/// `(L_x ⊗ R_y) k(x, y)`.
pub fn eval_op_k(spec: &KernelSpec, op_l: DiffOp, x: &[f64], op_r: DiffOp, y: &[f64]) -> Result<f64> {
    spec.check_point(x)?;
    spec.check_point(y)?;
    spec.check_op(op_l)?;
    spec.check_op(op_r)?;
    Ok(eval_unchecked(spec, op_l, x, op_r, y))
}

fn canonical_order(op_l: DiffOp, x: &[f64], op_r: DiffOp, y: &[f64]) -> Ordering {
    op_l.rank().cmp(&op_r.rank()).then_with(|| {
        x.iter()
            .zip(y)
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Evaluates with arguments put in a canonical order first, so swapping
/// `(op_l, x)` and `(op_r, y)` gives bit-identical results.
pub(crate) fn eval_unchecked(spec: &KernelSpec, op_l: DiffOp, x: &[f64], op_r: DiffOp, y: &[f64]) -> f64 {
    if canonical_order(op_l, x, op_r, y) == Ordering::Greater {
        eval_ordered(spec, op_r, y, op_l, x)
    } else {
        eval_ordered(spec, op_l, x, op_r, y)
    }
}

/// `s^n H_n(s d)`.
#[inline]
fn scaled_hermite(s: f64, d: f64, n: usize) -> f64 {
    let u = s * d;
    let u2 = u * u;
    match n {
        0 => 1.0,
        1 => s * (2.0 * u),
        2 => s * s * (4.0 * u2 - 2.0),
        3 => s * s * s * (8.0 * u2 * u - 12.0 * u),
        4 => (s * s) * (s * s) * (16.0 * u2 * u2 - 48.0 * u2 + 12.0),
        _ => unreachable!("derivative order above {MAX_ORDER}"),
    }
}

/// A single-axis term of an operator: derivative of `order` along `axis`.
#[derive(Clone, Copy)]
struct Term {
    axis: usize,
    order: usize,
}

fn for_each_term(op: DiffOp, dim: usize, mut f: impl FnMut(Option<Term>)) {
    match op {
        DiffOp::Identity => f(None),
        DiffOp::FirstDeriv(a) => f(Some(Term { axis: a, order: 1 })),
        DiffOp::SecondDeriv(a) => f(Some(Term { axis: a, order: 2 })),
        DiffOp::Laplacian => {
            for a in 0..dim {
                f(Some(Term { axis: a, order: 2 }));
            }
        }
    }
}

fn eval_ordered(spec: &KernelSpec, op_l: DiffOp, x: &[f64], op_r: DiffOp, y: &[f64]) -> f64 {
    let dim = spec.dimension;
    let mut exponent = 0.0;
    for a in 0..dim {
        let u = spec.scale[a] * (x[a] - y[a]);
        exponent += u * u;
    }
    let k = libm::exp(-exponent);
    if op_l == DiffOp::Identity && op_r == DiffOp::Identity {
        return k;
    }
    let mut sum = 0.0;
    for_each_term(op_l, dim, |tl| {
        for_each_term(op_r, dim, |tr| {
            sum += term_pair(spec, x, y, tl, tr);
        });
    });
    k * sum
}

fn term_pair(spec: &KernelSpec, x: &[f64], y: &[f64], tl: Option<Term>, tr: Option<Term>) -> f64 {
    let factor = |axis: usize, n: usize| scaled_hermite(spec.scale[axis], x[axis] - y[axis], n);
    let sign = |t: Option<Term>| match t {
        Some(Term { order, .. }) if order % 2 == 1 => -1.0,
        _ => 1.0,
    };
    let s = sign(tl);
    match (tl, tr) {
        (None, None) => 1.0,
        (Some(t), None) | (None, Some(t)) => s * factor(t.axis, t.order),
        (Some(l), Some(r)) if l.axis == r.axis => s * factor(l.axis, l.order + r.order),
        (Some(l), Some(r)) => s * factor(l.axis, l.order) * factor(r.axis, r.order),
    }
}

fn validate_functionals(spec: &KernelSpec, functionals: &[Functional]) -> Result<()> {
    for f in functionals {
        spec.check_point(&f.point)?;
        spec.check_op(f.op)?;
    }
    Ok(())
}

/// The Gram matrix of `functionals`; each entry is computed once and mirrored.
pub fn gram(spec: &KernelSpec, functionals: &[Functional]) -> Result<Matrix> {
    if functionals.is_empty() {
        return Err(invalid("gram needs at least one functional"));
    }
    validate_functionals(spec, functionals)?;
    let n = functionals.len();
    let mut g = Matrix::zeros(n, n);
    for i in 0..n {
        let fi = &functionals[i];
        for j in 0..=i {
            let fj = &functionals[j];
            g[(i, j)] = eval_unchecked(spec, fi.op, &fi.point, fj.op, &fj.point);
        }
    }
    g.mirror_lower();
    Ok(g)
}

/// Rows `κ(a_i, b_j)` for two functional lists.
pub fn cross_gram(spec: &KernelSpec, rows: &[Functional], cols: &[Functional]) -> Result<Matrix> {
    validate_functionals(spec, rows)?;
    validate_functionals(spec, cols)?;
    Ok(Matrix::from_fn(rows.len(), cols.len(), |i, j| {
        eval_unchecked(spec, rows[i].op, &rows[i].point, cols[j].op, &cols[j].point)
    }))
}

/// `κ(x, φ_j)` for each functional, i.e. the point value of each basis function.
pub fn cross_row(spec: &KernelSpec, x: &[f64], functionals: &[Functional]) -> Result<Vec<f64>> {
    spec.check_point(x)?;
    validate_functionals(spec, functionals)?;
    Ok(functionals
        .iter()
        .map(|f| eval_unchecked(spec, DiffOp::Identity, x, f.op, &f.point))
        .collect())
}
