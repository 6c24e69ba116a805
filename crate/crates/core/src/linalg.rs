//! Dense row-major matrices and Cholesky-based solves.
//!
//! Everything here is written for symmetric positive definite Gram matrices of
//! a few thousand rows. The level-3 routines pack operands into panels and run
//! a small register-tiled kernel, which is enough to keep the blocked Cholesky
//! and the explicit inverse compute-bound on a single core.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Wraps row-major data. Panics if the length does not match.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data has the wrong length");
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(
            &mut out.data,
            other.cols,
            (0, 0),
            (self.rows, other.cols, self.cols),
            1.0,
            Operand::normal(Source::Other(&self.data), self.cols),
            Operand::normal(Source::Other(&other.data), other.cols),
            Mask::Full,
        );
        out
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| f64::max(m, libm::fabs(a - b)))
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && (0..self.rows).all(|i| (0..i).all(|j| self[(i, j)] == self[(j, i)]))
    }

    /// Copies the strict lower triangle onto the upper one.
    pub fn mirror_lower(&mut self) {
        let n = self.rows;
        for i in 0..n {
            for j in 0..i {
                self.data[j * n + i] = self.data[i * n + j];
            }
        }
    }

    pub fn add_diagonal(&mut self, diag: &[f64]) {
        assert_eq!(diag.len(), self.rows.min(self.cols));
        for (i, d) in diag.iter().enumerate() {
            self.data[i * self.cols + i] += d;
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Dot product with four independent accumulators.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    libm::sqrt(dot(x, x))
}

// ---------------------------------------------------------------------------
// Packed GEMM
// ---------------------------------------------------------------------------

const MR: usize = 4;
const NR: usize = 8;
const MC: usize = 128;
const KC: usize = 256;
const NC: usize = 512;
const NB: usize = 64;

#[derive(Clone, Copy)]
enum Source<'a> {
    /// The operand lives in the destination buffer (disjoint region).
    Dst,
    Other(&'a [f64]),
}

/// A logical matrix operand: element `(i, k)` sits at `data[(r0 + i) * ld + c0 + k]`,
/// or at `data[(r0 + k) * ld + c0 + i]` when transposed.
#[derive(Clone, Copy)]
struct Operand<'a> {
    src: Source<'a>,
    r0: usize,
    c0: usize,
    ld: usize,
    trans: bool,
}

impl<'a> Operand<'a> {
    fn normal(src: Source<'a>, ld: usize) -> Self {
        Operand {
            src,
            r0: 0,
            c0: 0,
            ld,
            trans: false,
        }
    }

    fn at(self, r0: usize, c0: usize) -> Self {
        Operand { r0, c0, ..self }
    }

    fn transposed(self) -> Self {
        Operand { trans: true, ..self }
    }

    fn resolve<'b>(&self, dst: &'b [f64]) -> &'b [f64]
    where
        'a: 'b,
    {
        match self.src {
            Source::Dst => dst,
            Source::Other(s) => s,
        }
    }

    #[inline]
    fn get(&self, data: &[f64], i: usize, k: usize) -> f64 {
        if self.trans {
            data[(self.r0 + k) * self.ld + self.c0 + i]
        } else {
            data[(self.r0 + i) * self.ld + self.c0 + k]
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Mask {
    Full,
    /// Only write entries with local column <= local row.
    Lower,
}

/// Packs rows `i0..i0+m` x cols `k0..k0+kc` of `a` into MR-interleaved slivers.
fn pack_a(op: &Operand, data: &[f64], i0: usize, m: usize, k0: usize, kc: usize, out: &mut Vec<f64>) {
    let slivers = m.div_ceil(MR);
    out.clear();
    out.resize(slivers * MR * kc, 0.0);
    for s in 0..slivers {
        let base = s * MR * kc;
        for r in 0..MR {
            let i = s * MR + r;
            if i >= m {
                break;
            }
            for k in 0..kc {
                out[base + k * MR + r] = op.get(data, i0 + i, k0 + k);
            }
        }
    }
}

/// Packs B(k, j) for `k0..k0+kc`, `j0..j0+n` into NR-interleaved slivers.
fn pack_b(op: &Operand, data: &[f64], k0: usize, kc: usize, j0: usize, n: usize, out: &mut Vec<f64>) {
    let slivers = n.div_ceil(NR);
    out.clear();
    out.resize(slivers * NR * kc, 0.0);
    for s in 0..slivers {
        let base = s * NR * kc;
        for c in 0..NR {
            let j = s * NR + c;
            if j >= n {
                break;
            }
            // B(k, j) is stored as op element (j, k) when transposed, (k, j) otherwise.
            for k in 0..kc {
                out[base + k * NR + c] = if op.trans {
                    data[(op.r0 + j0 + j) * op.ld + op.c0 + k0 + k]
                } else {
                    data[(op.r0 + k0 + k) * op.ld + op.c0 + j0 + j]
                };
            }
        }
    }
}

#[inline(always)]
fn micro_kernel(kc: usize, ap: &[f64], bp: &[f64]) -> [[f64; NR]; MR] {
    let mut acc = [[0.0f64; NR]; MR];
    for (a, b) in ap.chunks_exact(MR).zip(bp.chunks_exact(NR)).take(kc) {
        for r in 0..MR {
            let ar = a[r];
            for c in 0..NR {
                acc[r][c] += ar * b[c];
            }
        }
    }
    acc
}

/// `C(m x n) += alpha * A(m x k) * B(k x n)` where `C` starts at `c_origin` in `dst`.
///
/// With `Mask::Lower` only entries on or below the local diagonal are touched.
/// Operands sourced from `dst` must not overlap the written region of `C`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    dst: &mut [f64],
    ldc: usize,
    c_origin: (usize, usize),
    (m, n, k): (usize, usize, usize),
    alpha: f64,
    a: Operand,
    b: Operand,
    mask: Mask,
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let mut ap = Vec::new();
    let mut bp = Vec::new();
    for jc in (0..n).step_by(NC) {
        let nc = NC.min(n - jc);
        for pc in (0..k).step_by(KC) {
            let kc = KC.min(k - pc);
            pack_b(&b, b.resolve(dst), pc, kc, jc, nc, &mut bp);
            for ic in (0..m).step_by(MC) {
                let mc = MC.min(m - ic);
                if mask == Mask::Lower && jc >= ic + mc {
                    continue;
                }
                pack_a(&a, a.resolve(dst), ic, mc, pc, kc, &mut ap);
                for js in 0..nc.div_ceil(NR) {
                    let j_first = jc + js * NR;
                    let bsl = &bp[js * NR * kc..(js + 1) * NR * kc];
                    for is in 0..mc.div_ceil(MR) {
                        let i_first = ic + is * MR;
                        if mask == Mask::Lower && j_first > i_first + MR - 1 {
                            continue;
                        }
                        let asl = &ap[is * MR * kc..(is + 1) * MR * kc];
                        let acc = micro_kernel(kc, asl, bsl);
                        for (r, acc_r) in acc.iter().enumerate() {
                            let i = i_first + r;
                            if i >= ic + mc {
                                break;
                            }
                            let row = (c_origin.0 + i) * ldc + c_origin.1;
                            for (c, v) in acc_r.iter().enumerate() {
                                let j = j_first + c;
                                if j >= jc + nc || (mask == Mask::Lower && j > i) {
                                    break;
                                }
                                dst[row + j] += alpha * v;
                            }
                        }
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Cholesky
// ---------------------------------------------------------------------------

/// Lower Cholesky factor `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    /// Factors a symmetric positive definite matrix. Only the lower triangle
    /// of `a` is read. On failure returns the index of the offending pivot.
    pub fn factor(a: Matrix) -> core::result::Result<Self, usize> {
        assert_eq!(a.rows, a.cols, "Cholesky needs a square matrix");
        let n = a.rows;
        let mut data = a.data;
        for jb in (0..n).step_by(NB) {
            let je = (jb + NB).min(n);
            if jb > 0 {
                let l_op = Operand::normal(Source::Dst, n);
                gemm(
                    &mut data,
                    n,
                    (jb, jb),
                    (n - jb, je - jb, jb),
                    -1.0,
                    l_op.at(jb, 0),
                    l_op.at(jb, 0).transposed(),
                    Mask::Lower,
                );
            }
            for j in jb..je {
                let s = {
                    let rj = &data[j * n + jb..j * n + j];
                    data[j * n + j] - dot(rj, rj)
                };
                if !(s > 0.0) || !s.is_finite() {
                    return Err(j);
                }
                let d = libm::sqrt(s);
                data[j * n + j] = d;
                for i in j + 1..n {
                    let s = data[i * n + j] - dot(&data[i * n + jb..i * n + j], &data[j * n + jb..j * n + j]);
                    data[i * n + j] = s / d;
                }
            }
        }
        for i in 0..n {
            for v in &mut data[i * n + i + 1..(i + 1) * n] {
                *v = 0.0;
            }
        }
        Ok(Cholesky {
            l: Matrix { rows: n, cols: n, data },
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.l.rows
    }

    pub fn factor_matrix(&self) -> &Matrix {
        &self.l
    }

    /// Solves `L y = b` in place.
    pub fn forward_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        assert_eq!(b.len(), n);
        for i in 0..n {
            let row = self.l.row(i);
            let s = b[i] - dot(&row[..i], &b[..i]);
            b[i] = s / row[i];
        }
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn backward_in_place(&self, y: &mut [f64]) {
        let n = self.dim();
        assert_eq!(y.len(), n);
        for i in (0..n).rev() {
            let row = self.l.row(i);
            let xi = y[i] / row[i];
            y[i] = xi;
            axpy(-xi, &row[..i], &mut y[..i]);
        }
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        self.forward_in_place(b);
        self.backward_in_place(b);
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// `zᵀ A⁻¹ z`, computed as `|L⁻¹ z|²`.
    pub fn quad_form(&self, z: &[f64]) -> f64 {
        let mut y = z.to_vec();
        self.forward_in_place(&mut y);
        dot(&y, &y)
    }

    /// `L⁻¹` as a dense lower-triangular matrix.
    pub fn inverse_factor(&self) -> Matrix {
        let n = self.dim();
        let l = &self.l.data;
        let mut x = vec![0.0; n * n];
        for ib in (0..n).step_by(NB) {
            let ie = (ib + NB).min(n);
            let m = ie - ib;
            if ib > 0 {
                // X[I, 0..ib] = L[I, 0..ib] · X[0..ib, 0..ib]
                gemm(
                    &mut x,
                    n,
                    (ib, 0),
                    (m, ib, ib),
                    1.0,
                    Operand::normal(Source::Other(l), n).at(ib, 0),
                    Operand::normal(Source::Dst, n),
                    Mask::Full,
                );
            }
            // Forward-substitute the diagonal block: X[I, :] = L_II⁻¹ (E_I - X[I, :]).
            for r in 0..m {
                let i = ib + r;
                for j in 0..ib {
                    x[i * n + j] = -x[i * n + j];
                }
                x[i * n + i] = 1.0;
                for q in 0..r {
                    let coef = l[i * n + ib + q];
                    if coef != 0.0 {
                        let (head, tail) = x.split_at_mut(i * n);
                        let src = &head[(ib + q) * n..(ib + q) * n + ib + q + 1];
                        axpy(-coef, src, &mut tail[..ib + q + 1]);
                    }
                }
                let d = l[i * n + i];
                for v in &mut x[i * n..i * n + i + 1] {
                    *v /= d;
                }
            }
        }
        Matrix {
            rows: n,
            cols: n,
            data: x,
        }
    }

    /// Dense `A⁻¹ = L⁻ᵀ L⁻¹`, exactly symmetric.
    pub fn inverse(&self) -> Matrix {
        let n = self.dim();
        let x = self.inverse_factor();
        let mut out = vec![0.0; n * n];
        for ib in (0..n).step_by(NB) {
            let ie = (ib + NB).min(n);
            // out[I, 0..ie] = Σ_{k ≥ ib} X[k, I]ᵀ X[k, 0..ie]
            gemm(
                &mut out,
                n,
                (ib, 0),
                (ie - ib, ie, n - ib),
                1.0,
                Operand::normal(Source::Other(&x.data), n).at(ib, ib).transposed(),
                Operand::normal(Source::Other(&x.data), n).at(ib, 0),
                Mask::Full,
            );
        }
        let mut out = Matrix {
            rows: n,
            cols: n,
            data: out,
        };
        out.mirror_lower();
        out
    }
}
