//! Deterministic Krylov solvers: Jacobi-preconditioned conjugate gradients
//! for symmetric positive definite systems, and conjugate-orthogonal CG
//! (unconjugated inner products) for the complex symmetric systems arising
//! from impedance boundary conditions.
//!
//! All reductions use the fixed-order chunked sums from [`crate::parallel`],
//! so iteration counts and solutions are bit-identical across thread counts
//! and across the parallel/sequential feature.

use crate::error::{Error, Result};
use crate::parallel;
use num_complex::Complex64;

/// A real linear operator given by its action; `diagonal` feeds the Jacobi
/// preconditioner.
pub trait LinearOp: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn diagonal(&self) -> Vec<f64>;
}

/// A complex linear operator; COCG additionally assumes it is symmetric
/// (`A^T = A`, not Hermitian).
pub trait ComplexOp: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[Complex64], y: &mut [Complex64]);
    fn diagonal(&self) -> Vec<Complex64>;
}

/// Convergence record of an iterative solve.
#[derive(Clone, Copy, Debug)]
pub struct SolveReport {
    pub iters: usize,
    /// Final `||b - A x|| / ||b||` (recurrence residual).
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for SPD systems.
///
/// `x` is the initial guess on entry (warm starts are allowed) and the
/// solution on exit; converges when the residual drops below `tol * ||b||`.
pub fn solve_cg(op: &impl LinearOp, b: &[f64], x: &mut [f64], tol: f64, max_iters: usize) -> Result<SolveReport> {
    let n = op.dim();
    assert_eq!(b.len(), n);
    assert_eq!(x.len(), n);
    let norm_b = parallel::dot(b, b).sqrt();
    if norm_b == 0.0 {
        x.fill(0.0);
        return Ok(SolveReport { iters: 0, relative_residual: 0.0 });
    }
    let inv_diag: Vec<f64> = op.diagonal().iter().map(|&d| 1.0 / d).collect();
    let mut r = vec![0.0; n];
    op.apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = (0..n).map(|i| r[i] * inv_diag[i]).collect();
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = parallel::dot(&r, &z);
    let mut res = parallel::dot(&r, &r).sqrt() / norm_b;
    if res <= tol {
        return Ok(SolveReport { iters: 0, relative_residual: res });
    }
    for it in 1..=max_iters {
        op.apply(&p, &mut q);
        let pq = parallel::dot(&p, &q);
        if !(pq > 0.0) {
            return Err(Error::NoConvergence { residual: res, iters: it });
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        res = parallel::dot(&r, &r).sqrt() / norm_b;
        if res <= tol {
            return Ok(SolveReport { iters: it, relative_residual: res });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = parallel::dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NoConvergence { residual: res, iters: max_iters })
}

/// Unconjugated (bilinear) dot product `sum_i x_i y_i`, fixed order.
fn bilinear(xs: &[Complex64], ys: &[Complex64]) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (chunk_x, chunk_y) in xs.chunks(parallel::CHUNK).zip(ys.chunks(parallel::CHUNK)) {
        let mut part = Complex64::new(0.0, 0.0);
        for (x, y) in chunk_x.iter().zip(chunk_y) {
            part += x * y;
        }
        acc += part;
    }
    acc
}

fn norm_sq(xs: &[Complex64]) -> f64 {
    let mut acc = 0.0;
    for chunk in xs.chunks(parallel::CHUNK) {
        let mut part = 0.0;
        for x in chunk {
            part += x.norm_sqr();
        }
        acc += part;
    }
    acc
}

/// Conjugate-orthogonal conjugate gradients (COCG) for complex symmetric
/// systems. Same recurrence as CG with the unconjugated bilinear form in
/// place of the Hermitian inner product; convergence is still measured in the
/// true Euclidean norm.
pub fn solve_cocg(
    op: &impl ComplexOp,
    b: &[Complex64],
    x: &mut [Complex64],
    tol: f64,
    max_iters: usize,
) -> Result<SolveReport> {
    let n = op.dim();
    assert_eq!(b.len(), n);
    assert_eq!(x.len(), n);
    let norm_b = norm_sq(b).sqrt();
    if norm_b == 0.0 {
        x.fill(Complex64::new(0.0, 0.0));
        return Ok(SolveReport { iters: 0, relative_residual: 0.0 });
    }
    let inv_diag: Vec<Complex64> = op.diagonal().iter().map(|&d| d.finv()).collect();
    let mut r = vec![Complex64::new(0.0, 0.0); n];
    op.apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<Complex64> = (0..n).map(|i| r[i] * inv_diag[i]).collect();
    let mut p = z.clone();
    let mut q = vec![Complex64::new(0.0, 0.0); n];
    let mut rz = bilinear(&r, &z);
    let mut res = norm_sq(&r).sqrt() / norm_b;
    if res <= tol {
        return Ok(SolveReport { iters: 0, relative_residual: res });
    }
    for it in 1..=max_iters {
        op.apply(&p, &mut q);
        let pq = bilinear(&p, &q);
        if pq.norm() < 1e-300 {
            return Err(Error::NoConvergence { residual: res, iters: it });
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        res = norm_sq(&r).sqrt() / norm_b;
        if res <= tol {
            return Ok(SolveReport { iters: it, relative_residual: res });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = bilinear(&r, &z);
        if rz.norm() < 1e-300 {
            return Err(Error::NoConvergence { residual: res, iters: it });
        }
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NoConvergence { residual: res, iters: max_iters })
}
