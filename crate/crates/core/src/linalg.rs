//! Thin wrappers over faer: sequential dense products, the unitary
//! eigensolver and eigenvector re-orthonormalization.
//!
//! All factorizations run with `Par::Seq` so that numerics never depend on
//! the thread count; parallelism lives one level up, over independent tasks.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::evd::{self, ComputeEigenvectors};
use faer::linalg::matmul::matmul;
use faer::diag::Diag;
use faer::traits::Conjugate;
use faer::{c64, Accum, Mat, MatMut, MatRef, Par};

pub(crate) fn seq() -> Par {
    faer::set_global_parallelism(Par::Seq);
    Par::Seq
}

/// `dst = lhs * rhs`.
pub(crate) fn gemm<L, R>(dst: MatMut<'_, c64>, lhs: MatRef<'_, L>, rhs: MatRef<'_, R>)
where
    L: Conjugate<Canonical = c64>,
    R: Conjugate<Canonical = c64>,
{
    matmul(dst, Accum::Replace, lhs, rhs, c64::new(1.0, 0.0), Par::Seq);
}

pub(crate) fn gemm_real(dst: MatMut<'_, f64>, lhs: MatRef<'_, f64>, rhs: MatRef<'_, f64>) {
    matmul(dst, Accum::Replace, lhs, rhs, 1.0, Par::Seq);
}

/// max |(M^dag M - 1)_ij|.
pub fn unitarity_residual(m: MatRef<'_, c64>) -> f64 {
    let n = m.ncols();
    let mut g = Mat::<c64>::zeros(n, n);
    gemm(g.as_mut(), m.adjoint(), m);
    max_identity_deviation(g.as_ref())
}

pub(crate) fn max_identity_deviation(g: MatRef<'_, c64>) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..g.ncols() {
        for i in 0..g.nrows() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - c64::new(target, 0.0)).norm());
        }
    }
    worst
}

/// Eigenvalues and right eigenvectors of a square complex matrix.
pub(crate) fn eig(a: MatRef<'_, c64>) -> Result<(Vec<c64>, Mat<c64>), String> {
    let n = a.nrows();
    let par = seq();
    let params = Default::default();
    let req = evd::evd_scratch::<c64>(n, ComputeEigenvectors::No, ComputeEigenvectors::Yes, par, params);
    let mut mem = MemBuffer::new(req);
    let stack = MemStack::new(&mut mem);
    let mut s = Diag::<c64>::zeros(n);
    let mut u = Mat::<c64>::zeros(n, n);
    evd::evd_cplx(a, s.as_mut(), None, Some(u.as_mut()), par, stack, params)
        .map_err(|e| format!("{e:?}"))?;
    let values = (0..n).map(|i| s[i]).collect();
    Ok((values, u))
}

/// One Newton-Schulz (Lowdin) step V <- V (3 - V^dag V)/2, which removes the
/// O(eps/gap) non-orthogonality left by the eigensolver for close eigenphases.
/// Returns the deviation from orthonormality before the step.
pub(crate) fn orthonormalize(v: &mut Mat<c64>) -> f64 {
    let n = v.ncols();
    let mut g = Mat::<c64>::zeros(n, n);
    gemm(g.as_mut(), v.adjoint(), v.as_ref());
    let before = max_identity_deviation(g.as_ref());
    if before < 1e-15 {
        return before;
    }
    // correction E = G - 1, applied as V <- V - V E / 2
    let mut entries: Vec<(usize, usize, c64)> = Vec::new();
    let mut dense = false;
    'scan: for j in 0..n {
        for i in 0..n {
            let e = g[(i, j)] - if i == j { c64::new(1.0, 0.0) } else { c64::new(0.0, 0.0) };
            if e.norm() > 1e-17 {
                entries.push((i, j, e));
                if entries.len() > n * n / 8 {
                    dense = true;
                    break 'scan;
                }
            }
        }
    }
    if dense {
        for j in 0..n {
            for i in 0..n {
                let d = if i == j { 1.5 } else { 0.0 };
                g[(i, j)] = c64::new(d, 0.0) - g[(i, j)] * 0.5;
            }
        }
        let mut out = Mat::<c64>::zeros(v.nrows(), n);
        gemm(out.as_mut(), v.as_ref(), g.as_ref());
        *v = out;
    } else {
        let old = v.clone();
        let m = v.nrows();
        for &(i, j, e) in &entries {
            let f = e * 0.5;
            for r in 0..m {
                let x = old[(r, i)] * f;
                v[(r, j)] -= x;
            }
        }
    }
    before
}
