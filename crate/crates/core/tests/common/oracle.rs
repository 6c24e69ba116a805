//! Independent dense evaluation of the proximal subproblem for elliptic and
//! linear toys, minimized by damped gradient descent.

use mbgp_core::kernels::{gram, DiffOp, Functional, KernelSpec};
use mbgp_core::linalg::Matrix;
use mbgp_core::problems::{CollocationSet, ProblemKind, ProblemSpec};

use super::gauss_jordan_inverse;

pub struct Oracle {
    /// `(κ + η ℛ)⁻¹` by Gauss-Jordan.
    pub b: Matrix,
    /// Per batch point: (is_interior, datum, eliminated).
    blocks: Vec<(bool, f64)>,
    kind: ProblemKind,
    pub eliminate: bool,
    pub lambda: f64,
    pub misfit: f64,
    pub rho: f64,
    pub center: Vec<f64>,
}

fn ops(kind: ProblemKind, interior: bool) -> Vec<DiffOp> {
    match (kind, interior) {
        (ProblemKind::Elliptic, true) => vec![DiffOp::Identity, DiffOp::Laplacian],
        _ => vec![DiffOp::Identity],
    }
}

/// Mean Gram diagonal per operator.
pub fn group_means(fs: &[Functional], g: &Matrix) -> Vec<f64> {
    fs.iter()
        .map(|f| {
            let idx: Vec<usize> = (0..fs.len()).filter(|&j| fs[j].op == f.op).collect();
            idx.iter().map(|&j| g[(j, j)]).sum::<f64>() / idx.len() as f64
        })
        .collect()
}

impl Oracle {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        problem: &ProblemSpec,
        colloc: &CollocationSet,
        kernel: &KernelSpec,
        points: &[usize],
        eta: f64,
        eliminate: bool,
        misfit: f64,
        rho: f64,
        center: Vec<f64>,
    ) -> Self {
        let mut fs = Vec::new();
        let mut blocks = Vec::new();
        for &i in points {
            let interior = i < colloc.n_interior;
            for op in ops(problem.kind, interior) {
                fs.push(Functional::new(colloc.points[i].clone(), op));
            }
            blocks.push((interior, colloc.y[i]));
        }
        let mut a = gram(kernel, &fs).unwrap();
        let r = group_means(&fs, &a);
        a.add_diagonal(&r.iter().map(|v| eta * v).collect::<Vec<_>>());
        Oracle {
            b: gauss_jordan_inverse(&a),
            blocks,
            kind: problem.kind,
            eliminate,
            lambda: 1.0,
            misfit,
            rho,
            center,
        }
    }

    fn width(&self, interior: bool) -> usize {
        ops(self.kind, interior).len()
    }

    fn free(&self, interior: bool) -> usize {
        if !self.eliminate {
            self.width(interior)
        } else if interior && self.kind == ProblemKind::Elliptic {
            1
        } else {
            0
        }
    }

    pub fn n_free(&self) -> usize {
        self.blocks.iter().map(|b| self.free(b.0)).sum()
    }

    /// Latent vector, its Jacobian (rows = latent, cols = free), residuals and
    /// their gradients with respect to the latent entries.
    #[allow(clippy::type_complexity)]
    fn expand(&self, v: &[f64]) -> (Vec<f64>, Matrix, Vec<(usize, usize, f64, Vec<f64>)>) {
        let n: usize = self.blocks.iter().map(|b| self.width(b.0)).sum();
        let mut w = Vec::with_capacity(n);
        let mut jac = Matrix::zeros(n, v.len());
        let mut res = Vec::new();
        let mut vo = 0;
        for &(interior, y) in &self.blocks {
            let wo = w.len();
            let nf = self.free(interior);
            let elliptic_interior = interior && self.kind == ProblemKind::Elliptic;
            if self.eliminate {
                if elliptic_interior {
                    let u = v[vo];
                    w.extend([u, u * u * u - y]);
                    jac.row_mut(wo)[vo] = 1.0;
                    jac.row_mut(wo + 1)[vo] = 3.0 * u * u;
                } else {
                    w.push(y);
                }
            } else {
                for k in 0..nf {
                    w.push(v[vo + k]);
                    jac.row_mut(wo + k)[vo + k] = 1.0;
                }
                if elliptic_interior {
                    let (u, lap) = (w[wo], w[wo + 1]);
                    res.push((wo, 2, -lap + u * u * u - y, vec![3.0 * u * u, -1.0]));
                } else {
                    res.push((wo, 1, w[wo] - y, vec![1.0]));
                }
            }
            vo += nf;
        }
        (w, jac, res)
    }

    pub fn value(&self, v: &[f64]) -> f64 {
        let (w, _, res) = self.expand(v);
        let q = super::quad(&self.b, &w);
        let m: f64 = res.iter().map(|r| r.2 * r.2).sum();
        let p: f64 = v.iter().zip(&self.center).map(|(a, b)| (a - b).powi(2)).sum();
        0.5 * self.lambda * q + 0.5 * self.misfit * m + 0.5 * self.rho * p
    }

    pub fn gradient(&self, v: &[f64]) -> Vec<f64> {
        let (w, jac, res) = self.expand(v);
        let bw = self.b.matvec(&w);
        let mut dw: Vec<f64> = bw.iter().map(|x| self.lambda * x).collect();
        for (off, len, r, g) in &res {
            for k in 0..*len {
                dw[off + k] += self.misfit * r * g[k];
            }
        }
        (0..v.len())
            .map(|c| (0..w.len()).map(|r| jac[(r, c)] * dw[r]).sum::<f64>() + self.rho * (v[c] - self.center[c]))
            .collect()
    }

    /// Damped gradient descent from `v0`, then Newton steps on a
    /// finite-difference Hessian until the gradient norm is below `gtol`.
    pub fn minimize(&self, v0: &[f64], gtol: f64, max_iters: usize) -> Vec<f64> {
        let mut v = self.descend(v0, gtol, max_iters);
        for _ in 0..100 {
            let g = self.gradient(&v);
            if g.iter().map(|x| x * x).sum::<f64>().sqrt() < gtol {
                break;
            }
            let n = v.len();
            let h = 1e-6;
            let mut hess = Matrix::zeros(n, n);
            for c in 0..n {
                let mut p = v.clone();
                let mut m = v.clone();
                p[c] += h;
                m[c] -= h;
                let (gp, gm) = (self.gradient(&p), self.gradient(&m));
                for r in 0..n {
                    hess.row_mut(r)[c] = (gp[r] - gm[r]) / (2.0 * h);
                }
            }
            let sym = Matrix::from_fn(n, n, |i, j| 0.5 * (hess[(i, j)] + hess[(j, i)]));
            let step = gauss_jordan_inverse(&sym).matvec(&g);
            let f0 = self.value(&v);
            let mut t = 1.0;
            while t > 1e-12 {
                let trial: Vec<f64> = v.iter().zip(&step).map(|(a, b)| a - t * b).collect();
                if self.value(&trial) <= f0 {
                    v = trial;
                    break;
                }
                t *= 0.5;
            }
            if t <= 1e-12 {
                break;
            }
        }
        v
    }

    /// Gradient descent with Armijo backtracking until the gradient norm is below `gtol`.
    pub fn descend(&self, v0: &[f64], gtol: f64, max_iters: usize) -> Vec<f64> {
        let mut v = v0.to_vec();
        let mut f = self.value(&v);
        let mut step = 1.0;
        for _ in 0..max_iters {
            let g = self.gradient(&v);
            let gn2: f64 = g.iter().map(|x| x * x).sum();
            if gn2.sqrt() < gtol {
                break;
            }
            step *= 2.0;
            loop {
                let trial: Vec<f64> = v.iter().zip(&g).map(|(a, b)| a - step * b).collect();
                let ft = self.value(&trial);
                if ft <= f - 0.25 * step * gn2 || step < 1e-30 {
                    v = trial;
                    f = ft;
                    break;
                }
                step *= 0.5;
            }
        }
        v
    }
}
