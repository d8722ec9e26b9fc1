//! Power iteration for top singular pairs and symmetric top eigenvalues.

use nalgebra::{DMatrix, DVector};

use crate::rng;

/// Relative residual at which power iteration declares convergence.
pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 10_000;
const POWER_SEED: u64 = 0x5EED_0F_70_9A1B;

#[derive(Clone, Debug)]
pub struct SingularPair {
    pub sigma: f64,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Top singular triple of `a` by power iteration on `A^T A`.
///
/// Stops when `||A^T u - sigma v|| <= tol * sigma`, falling back to a dense SVD
/// after `max_iter` steps. For a zero matrix returns
/// `sigma = 0` with unit basis vectors as the pair.
pub fn top_singular_pair(a: &DMatrix<f64>, tol: f64, max_iter: usize) -> SingularPair {
    let (m, n) = a.shape();
    let e = |k: usize| {
        let mut x = DVector::zeros(k);
        if k > 0 {
            x[0] = 1.0;
        }
        x
    };
    let scale = a.amax();
    if scale == 0.0 || m == 0 || n == 0 {
        return SingularPair { sigma: 0.0, u: e(m), v: e(n), iterations: 0, converged: true };
    }
    // Work on a rescaled copy so tiny or huge aggregates do not under/overflow.
    let a_s = a / scale;
    let mut r = rng::rng(POWER_SEED);
    let mut v = rng::unit_vec(&mut r, n);
    let mut u = DVector::zeros(m);
    let mut sigma = 0.0;
    for it in 1..=max_iter {
        let av = &a_s * &v;
        let s = av.norm();
        if s == 0.0 {
            // Start vector in the null space; reseed deterministically.
            v = rng::unit_vec(&mut r, n);
            continue;
        }
        u = av / s;
        let atu = a_s.tr_mul(&u);
        sigma = atu.norm();
        let resid = (&atu - &v * sigma).norm();
        v = atu / sigma;
        if resid <= tol * sigma {
            return SingularPair { sigma: sigma * scale, u, v, iterations: it, converged: true };
        }
    }
    // Clustered top singular values stall the vector residual; fall back to a
    // dense SVD, which is exact regardless of the gap.
    match dense_top_pair(&a_s) {
        Some((s, u, v)) => SingularPair { sigma: s * scale, u, v, iterations: max_iter, converged: true },
        None => SingularPair { sigma: sigma * scale, u, v, iterations: max_iter, converged: false },
    }
}

fn dense_top_pair(a: &DMatrix<f64>) -> Option<(f64, DVector<f64>, DVector<f64>)> {
    let svd = a.clone().try_svd(true, true, f64::EPSILON, 0)?;
    let k = svd.singular_values.imax();
    let u = svd.u?.column(k).into_owned();
    let v = svd.v_t?.row(k).transpose();
    Some((svd.singular_values[k], u, v))
}

pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    top_singular_pair(a, POWER_TOL, POWER_MAX_ITER).sigma
}

/// Largest eigenvalue of a positive semidefinite operator given by its action.
pub fn top_eigenvalue_psd<F>(apply: F, dim: usize, tol: f64, max_iter: usize) -> (f64, bool)
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if dim == 0 {
        return (0.0, true);
    }
    let mut r = rng::rng(POWER_SEED ^ 1);
    let mut x = rng::unit_vec(&mut r, dim);
    let mut lam = 0.0;
    for _ in 0..max_iter {
        let y = apply(&x);
        let ny = y.norm();
        if ny == 0.0 {
            return (0.0, true);
        }
        let new_lam = x.dot(&y);
        let resid = (&y - &x * new_lam).norm();
        x = y / ny;
        lam = new_lam;
        if resid <= tol * new_lam.abs() {
            return (lam, true);
        }
    }
    (lam, false)
}

/// `||a||_*` via dense SVD.
pub fn nuclear_norm_svd(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().svd(false, false).singular_values.sum()
}
