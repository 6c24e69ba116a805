#![allow(dead_code, clippy::needless_range_loop)]

pub mod dd;
pub mod oracle;

use mbgp_core::kernels::{DiffOp, KernelSpec};
use mbgp_core::linalg::Matrix;

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(a: &Matrix) -> Matrix {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = a.row(i).to_vec();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&p, &q| m[p][col].abs().total_cmp(&m[q][col].abs()))
            .unwrap();
        m.swap(col, piv);
        let d = m[col][col];
        for v in m[col].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    Matrix::from_fn(n, n, |i, j| m[i][n + j])
}

pub fn quad(b: &Matrix, w: &[f64]) -> f64 {
    let bw = b.matvec(w);
    w.iter().zip(&bw).map(|(a, b)| a * b).sum()
}

/// Exponent coefficients `c_a` of a Gaussian kernel in `exp(-sum c_a d_a^2)`.
pub fn exponent_coefficients(spec: &KernelSpec) -> Vec<f64> {
    let ls = spec.lengthscales();
    match spec.family() {
        mbgp_core::kernels::KernelFamily::GaussianIsotropic => {
            vec![1.0 / (2.0 * ls[0] * ls[0]); spec.dimension()]
        }
        mbgp_core::kernels::KernelFamily::GaussianAnisotropic => ls.iter().map(|s| 1.0 / (s * s)).collect(),
    }
}

/// Central-difference stencil of an operator: (axis offsets in units of h, weight in units of h^-order).
pub fn stencil(op: DiffOp, dim: usize) -> Vec<(Vec<i32>, f64, i32)> {
    let unit = |a: usize, k: i32| {
        let mut v = vec![0; dim];
        v[a] = k;
        v
    };
    match op {
        DiffOp::Identity => vec![(vec![0; dim], 1.0, 0)],
        DiffOp::FirstDeriv(a) => vec![(unit(a, 1), 0.5, 1), (unit(a, -1), -0.5, 1)],
        DiffOp::SecondDeriv(a) => vec![(unit(a, 1), 1.0, 2), (vec![0; dim], -2.0, 2), (unit(a, -1), 1.0, 2)],
        DiffOp::Laplacian => (0..dim).flat_map(|a| stencil(DiffOp::SecondDeriv(a), dim)).collect(),
    }
}

/// `L_x R_y k(x, y)` by nested central differences of the kernel evaluated in
/// double-double arithmetic, step `h` (a power of two).
pub fn fd_entry(spec: &KernelSpec, op_l: DiffOp, x: &[f64], op_r: DiffOp, y: &[f64], h: f64) -> f64 {
    use dd::Dd;
    let dim = spec.dimension();
    let c: Vec<Dd> = exponent_coefficients(spec).into_iter().map(Dd::from).collect();
    let d: Vec<Dd> = x.iter().zip(y).map(|(a, b)| Dd::from(*a).sub(Dd::from(*b))).collect();
    let k = |shift: &[i32]| {
        let mut e = Dd::ZERO;
        for a in 0..dim {
            let da = d[a].add(Dd::from(shift[a] as f64 * h));
            e = e.add(c[a].mul(da).mul(da));
        }
        e.neg().exp()
    };
    let mut acc = Dd::ZERO;
    for (ol, wl, pl) in stencil(op_l, dim) {
        for (or, wr, pr) in stencil(op_r, dim) {
            // derivatives in y act on d = x - y with the opposite shift
            let shift: Vec<i32> = ol.iter().zip(&or).map(|(a, b)| a - b).collect();
            let w = wl * wr / h.powi(pl + pr);
            acc = acc.add(k(&shift).scale(w));
        }
    }
    acc.to_f64()
}
