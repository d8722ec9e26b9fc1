//! Polar of the induced regularizer at `-(1/lambda) grad loss`, per family,
//! and the optimality verdicts derived from it.
//!
//! With `r_i = y_i - yhat_i` the polar is
//! `sup_{theta(W) <= 1} (1/(N lambda)) sum_i <r_i, phi(W)(X_i)>`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{top_singular_pair, POWER_MAX_ITER, POWER_TOL};
use crate::model::{residual_aggregate, Dataset, FactorParams, ParallelModel};
use crate::rng;
use crate::zoo::{self, Family, GaugeSpec};

pub use crate::model::residuals;

pub const DEFAULT_TAU: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolarMethod {
    Exact,
    Search,
    UpperBound,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    CertifiedGlobal,
    HeuristicStationaryGlobal,
    NotOptimal,
    Indeterminate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarCertificate {
    pub value: f64,
    pub method: PolarMethod,
    /// Feasible factor (`theta <= 1`) attaining `witness_value`.
    pub witness: FactorParams,
    pub verdict: Verdict,
    pub tolerance: f64,
    /// Best value found by a search, when `value` is an upper bound.
    pub lower_bound: Option<f64>,
    /// Cauchy-Schwarz bound, when one is available alongside a search.
    pub upper_bound: Option<f64>,
    /// False when power iteration hit its cap.
    pub converged: bool,
}

impl PolarCertificate {
    /// Polar value attained by the witness; the quantity growth acts on.
    pub fn witness_value(&self) -> f64 {
        match self.method {
            PolarMethod::UpperBound => self.lower_bound.unwrap_or(0.0),
            _ => self.value,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub tau: f64,
    pub seed: u64,
}

impl Default for PolarOptions {
    fn default() -> Self {
        PolarOptions { restarts: 32, max_iter: 500, tau: DEFAULT_TAU, seed: 0x9047 }
    }
}

pub fn certify(cert: &PolarCertificate, tau: f64) -> Verdict {
    let thr = 1.0 + tau;
    match cert.method {
        PolarMethod::Exact if !cert.converged => Verdict::Indeterminate,
        PolarMethod::Exact if cert.value <= thr => Verdict::CertifiedGlobal,
        PolarMethod::Search if cert.value <= thr => Verdict::HeuristicStationaryGlobal,
        PolarMethod::Exact | PolarMethod::Search => Verdict::NotOptimal,
        PolarMethod::UpperBound => {
            if cert.value <= thr {
                Verdict::HeuristicStationaryGlobal
            } else if cert.lower_bound.is_some_and(|lb| lb > thr) {
                Verdict::NotOptimal
            } else {
                Verdict::Indeterminate
            }
        }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda > 0.0 {
        Ok(())
    } else {
        Err(Error::Argument(format!("lambda must be positive, got {lambda}")))
    }
}

fn finish(mut cert: PolarCertificate) -> PolarCertificate {
    cert.verdict = certify(&cert, cert.tolerance);
    cert
}

/// Exact polar `||A||_2 / lambda` of a residual aggregate.
pub fn polar_exact_from_aggregate(a: &DMatrix<f64>, lambda: f64, tau: f64) -> PolarCertificate {
    let p = top_singular_pair(a, POWER_TOL, POWER_MAX_ITER);
    finish(PolarCertificate {
        value: p.sigma / lambda,
        method: PolarMethod::Exact,
        witness: FactorParams::Pair { u: p.u, v: p.v },
        verdict: Verdict::Indeterminate,
        tolerance: tau,
        lower_bound: None,
        upper_bound: None,
        converged: p.converged,
    })
}

/// Matrix sensing and two-layer linear networks.
pub fn polar_exact_sensing(ds: &Dataset, model: &ParallelModel, lambda: f64) -> Result<PolarCertificate> {
    polar_exact_sensing_tau(ds, model, lambda, DEFAULT_TAU)
}

pub fn polar_exact_sensing_tau(ds: &Dataset, model: &ParallelModel, lambda: f64, tau: f64) -> Result<PolarCertificate> {
    check_lambda(lambda)?;
    if !matches!(model.family, Family::MatrixSensing | Family::TwoLayerLinear) {
        return Err(Error::Argument(format!("exact polar is not available for {}", model.family.name())));
    }
    let r = residuals(ds, model)?;
    Ok(polar_exact_from_aggregate(&residual_aggregate(ds, &r), lambda, tau))
}

/// Linear maximizer of `<g, u>` over `{||u||_2 <= 1, ||u||_1 <= s}`: soft-threshold
/// at the smallest level meeting the l1 budget, then normalize.
pub fn sparse_ball_lmo(g: &DVector<f64>, s: f64) -> DVector<f64> {
    let n = g.norm();
    if n == 0.0 {
        return DVector::zeros(g.len());
    }
    let soft = |tau: f64| {
        let x = g.map(|gi| zoo::sign0(gi) * (gi.abs() - tau).max(0.0));
        let nx = x.norm();
        x / nx
    };
    let x0 = g / n;
    if x0.lp_norm(1) <= s {
        return x0;
    }
    // Bisection on the threshold; the top entry never vanishes below amax.
    let (mut lo, mut hi) = (0.0, g.amax());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if soft(mid).lp_norm(1) > s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    soft(hi)
}

/// Maximize `||A^T u||` over the gauge ball by conditional-gradient ascent.
/// Each step maximizes the linearization, which never decreases a convex objective.
fn sparse_ball_search(a: &DMatrix<f64>, s: f64, opts: &PolarOptions) -> (f64, DVector<f64>) {
    let m = a.nrows();
    let aat = a * a.transpose();
    let run = |start: DVector<f64>| {
        let mut u = sparse_ball_lmo(&start, s);
        let mut val = a.tr_mul(&u).norm();
        for _ in 0..opts.max_iter {
            let next = sparse_ball_lmo(&(&aat * &u), s);
            let nv = a.tr_mul(&next).norm();
            if nv <= val * (1.0 + 1e-14) {
                if nv > val {
                    u = next;
                    val = nv;
                }
                break;
            }
            u = next;
            val = nv;
        }
        (val, u)
    };
    let top = top_singular_pair(a, POWER_TOL, POWER_MAX_ITER).u;
    let mut starts = vec![top];
    let mut r = rng::rng(opts.seed);
    starts.extend((0..opts.restarts).map(|_| rng::unit_vec(&mut r, m)));
    best_of(starts.into_par_iter().map(run).collect())
}

fn best_of<T>(results: Vec<(f64, T)>) -> (f64, T) {
    let mut best: Option<(f64, T)> = None;
    for (v, w) in results {
        if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
            best = Some((v, w));
        }
    }
    best.expect("at least one start")
}

/// Structured sensing: value `K_2 ||A||_2 / lambda` (an upper bound), with the
/// best gauge-feasible search value as `lower_bound`. Reduces to the exact
/// polar when `K_2 = 1`.
pub fn polar_structured(ds: &Dataset, model: &ParallelModel, lambda: f64, spec: GaugeSpec) -> Result<PolarCertificate> {
    polar_structured_opts(ds, model, lambda, spec, &PolarOptions::default())
}

pub fn polar_structured_opts(ds: &Dataset, model: &ParallelModel, lambda: f64, spec: GaugeSpec, opts: &PolarOptions) -> Result<PolarCertificate> {
    check_lambda(lambda)?;
    if !matches!(model.family, Family::StructuredMatrixSensing { .. }) {
        return Err(Error::Argument(format!("structured polar is not available for {}", model.family.name())));
    }
    let r = residuals(ds, model)?;
    let a = residual_aggregate(ds, &r);
    let k2 = zoo::gauge_k2(spec, ds.dims.m);
    if k2 <= 1.0 {
        return Ok(polar_exact_from_aggregate(&a, lambda, opts.tau));
    }
    let s = match spec {
        GaugeSpec::SparseBall { s } => s,
        GaugeSpec::Euclidean => unreachable!("euclidean gauge has K_2 = 1"),
    };
    let sigma = top_singular_pair(&a, POWER_TOL, POWER_MAX_ITER);
    let (val, u) = sparse_ball_search(&a, s, opts);
    let atu = a.tr_mul(&u);
    let v = if val > 0.0 { atu / val } else { unit(ds.dims.n) };
    let u = if val > 0.0 { u } else { unit(ds.dims.m) };
    Ok(finish(PolarCertificate {
        value: k2 * sigma.sigma / lambda,
        method: PolarMethod::UpperBound,
        witness: FactorParams::Pair { u, v },
        verdict: Verdict::Indeterminate,
        tolerance: opts.tau,
        lower_bound: Some(val / lambda),
        upper_bound: None,
        converged: sigma.converged,
    }))
}

fn unit(n: usize) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[0] = 1.0;
    e
}

/// `(1/(N lambda)) sum_i ||r_i|| ||X_i||_2`, with `||X_i||_2` the vector norm for
/// vector inputs and the spectral norm for token matrices.
pub fn polar_upper_bound(ds: &Dataset, model: &ParallelModel, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if !matches!(model.family, Family::TwoLayerRelu | Family::TwoLayerLinear | Family::MultiHeadAttention { .. }) {
        return Err(Error::Argument(format!("Cauchy-Schwarz polar bound is not available for {}", model.family.name())));
    }
    let r = residuals(ds, model)?;
    let total: f64 = ds
        .inputs
        .iter()
        .zip(&r)
        .map(|(x, ri)| {
            let xn = if x.ncols() == 1 { x.norm() } else { crate::linalg::spectral_norm(x) };
            ri.norm() * xn
        })
        .sum();
    Ok(total / (ds.len() as f64 * lambda))
}

/// `s(v) = sum_i r_i [v^T x_i]_+`.
fn relu_sum(xs: &[DVector<f64>], r: &[DVector<f64>], v: &DVector<f64>, m: usize) -> DVector<f64> {
    let mut s = DVector::zeros(m);
    for (x, ri) in xs.iter().zip(r) {
        let a = v.dot(x);
        if a > 0.0 {
            s.axpy(a, ri, 1.0);
        }
    }
    s
}

/// Projected ascent of `||s(v)||` on the unit sphere from one start.
fn relu_ascent(xs: &[DVector<f64>], r: &[DVector<f64>], start: DVector<f64>, m: usize, max_iter: usize) -> (f64, DVector<f64>) {
    let normalize = |x: DVector<f64>| {
        let n = x.norm();
        if n > 0.0 {
            Some(x / n)
        } else {
            None
        }
    };
    let Some(mut v) = normalize(start) else {
        return (0.0, unit(xs[0].len()));
    };
    let mut s = relu_sum(xs, r, &v, m);
    let mut val = s.norm();
    for _ in 0..max_iter {
        // Gradient of ||s||^2 / 2 is sum_i 1[a_i > 0] (r_i^T s) x_i.
        let mut g = DVector::zeros(v.len());
        for (x, ri) in xs.iter().zip(r) {
            if v.dot(x) > 0.0 {
                g.axpy(ri.dot(&s), x, 1.0);
            }
        }
        let gn = g.norm();
        if gn == 0.0 {
            break;
        }
        let g = g / gn;
        // Full power-style step first, then shorter steps along the sphere.
        let mut improved = None;
        let mut eta = f64::INFINITY;
        for _ in 0..40 {
            let cand = if eta.is_infinite() { Some(g.clone()) } else { normalize(&v + &g * eta) };
            if let Some(c) = cand {
                let cs = relu_sum(xs, r, &c, m);
                let cv = cs.norm();
                if cv > val {
                    improved = Some((cv, c, cs));
                    break;
                }
            }
            eta = if eta.is_infinite() { 1.0 } else { eta * 0.5 };
        }
        match improved {
            Some((cv, c, cs)) => {
                let rel = (cv - val) / cv;
                v = c;
                s = cs;
                val = cv;
                if rel < 1e-13 {
                    break;
                }
            }
            None => break,
        }
    }
    (val, v)
}

/// Two-layer ReLU polar by multi-start ascent over `v`; `u` is the normalized
/// weighted residual sum.
pub fn polar_search_relu(ds: &Dataset, model: &ParallelModel, lambda: f64, restarts: usize) -> Result<PolarCertificate> {
    polar_search_relu_opts(ds, model, lambda, &PolarOptions { restarts, ..PolarOptions::default() })
}

pub fn polar_search_relu_opts(ds: &Dataset, model: &ParallelModel, lambda: f64, opts: &PolarOptions) -> Result<PolarCertificate> {
    check_lambda(lambda)?;
    if model.family != Family::TwoLayerRelu {
        return Err(Error::Argument(format!("ReLU polar search is not available for {}", model.family.name())));
    }
    if opts.restarts == 0 {
        return Err(Error::Argument("at least one restart is required".into()));
    }
    let r = residuals(ds, model)?;
    let xs: Vec<DVector<f64>> = ds.inputs.iter().map(|x| x.column(0).into_owned()).collect();
    let (m, n) = (ds.dims.m, ds.dims.n);
    let nl = ds.len() as f64 * lambda;

    let mut starts: Vec<DVector<f64>> = Vec::new();
    let mut g = rng::rng(opts.seed);
    starts.extend((0..opts.restarts).map(|_| rng::unit_vec(&mut g, n)));
    // Data-driven starts at the samples with the largest ||r_i|| ||x_i||.
    let mut order: Vec<usize> = (0..xs.len()).filter(|&i| xs[i].norm() > 0.0).collect();
    order.sort_by(|&a, &b| (r[b].norm() * xs[b].norm()).total_cmp(&(r[a].norm() * xs[a].norm())).then(a.cmp(&b)));
    starts.extend(order.iter().take(64).map(|&i| &xs[i] / xs[i].norm()));

    let (val, v) = best_of(starts.into_par_iter().map(|s0| relu_ascent(&xs, &r, s0, m, opts.max_iter)).collect());
    let s = relu_sum(&xs, &r, &v, m);
    let u = if val > 0.0 { s / val } else { unit(m) };
    let ub = polar_upper_bound(ds, model, lambda)?;
    Ok(finish(PolarCertificate {
        value: val / nl,
        method: PolarMethod::Search,
        witness: FactorParams::Pair { u, v },
        verdict: Verdict::Indeterminate,
        tolerance: opts.tau,
        lower_bound: None,
        upper_bound: Some(ub),
        converged: true,
    }))
}

/// `G(z) = sum_i r_i (X_i softmax_t(X_i^T z))^T`.
fn attention_g(xs: &[DMatrix<f64>], r: &[DVector<f64>], z: &DVector<f64>, t: f64, m: usize) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(m, z.len());
    for (x, ri) in xs.iter().zip(r) {
        let h = x * zoo::softmax(&x.tr_mul(z), t);
        g.ger(1.0, ri, &h, 1.0);
    }
    g
}

fn project_ball(z: DVector<f64>) -> DVector<f64> {
    let n = z.norm();
    if n > 1.0 {
        z / n
    } else {
        z
    }
}

fn attention_ascent(xs: &[DMatrix<f64>], r: &[DVector<f64>], start: DVector<f64>, t: f64, m: usize, max_iter: usize) -> (f64, DVector<f64>) {
    let mut z = project_ball(start);
    let mut gm = attention_g(xs, r, &z, t, m);
    let mut val = gm.norm();
    let mut step = 1.0;
    for _ in 0..max_iter {
        let mut grad = DVector::zeros(z.len());
        for (x, ri) in xs.iter().zip(r) {
            let p = zoo::softmax(&x.tr_mul(&z), t);
            let w = x.tr_mul(&gm.tr_mul(ri));
            let pw = p.dot(&w);
            let s = p.zip_map(&w, |pk, wk| t * pk * (wk - pw));
            grad.gemv(1.0, x, &s, 1.0);
        }
        let gn = grad.norm();
        if gn == 0.0 {
            break;
        }
        let dir = grad / gn;
        let mut accepted = None;
        let mut eta = step * 2.0;
        for _ in 0..40 {
            let cand = project_ball(&z + &dir * eta);
            let cg = attention_g(xs, r, &cand, t, m);
            let cv = cg.norm();
            if cv > val {
                accepted = Some((cv, cand, cg, eta));
                break;
            }
            eta *= 0.5;
        }
        match accepted {
            Some((cv, c, cg, eta)) => {
                let rel = (cv - val) / cv;
                let moved = (&c - &z).norm();
                z = c;
                gm = cg;
                val = cv;
                step = eta.min(2.0);
                if rel < 1e-13 || moved < 1e-12 {
                    break;
                }
            }
            None => break,
        }
    }
    (val, z)
}

/// Multi-head attention polar by projected ascent over `||z|| <= 1`; the
/// `V` supremum is closed-form, `V = G(z) / ||G(z)||_F`.
pub fn polar_search_attention(ds: &Dataset, model: &ParallelModel, lambda: f64, restarts: usize) -> Result<PolarCertificate> {
    polar_search_attention_opts(ds, model, lambda, &PolarOptions { restarts, ..PolarOptions::default() })
}

pub fn polar_search_attention_opts(ds: &Dataset, model: &ParallelModel, lambda: f64, opts: &PolarOptions) -> Result<PolarCertificate> {
    check_lambda(lambda)?;
    let Family::MultiHeadAttention { temperature: t, .. } = model.family else {
        return Err(Error::Argument(format!("attention polar search is not available for {}", model.family.name())));
    };
    if opts.restarts == 0 {
        return Err(Error::Argument("at least one restart is required".into()));
    }
    let r = residuals(ds, model)?;
    let (m, n) = (ds.dims.m, ds.dims.n);
    let nl = ds.len() as f64 * lambda;
    let mut g = rng::rng(opts.seed);
    let mut starts = vec![DVector::zeros(n)];
    starts.extend((0..opts.restarts).map(|k| rng::unit_vec(&mut g, n) * if k % 2 == 0 { 1.0 } else { 0.5 }));
    let (val, z) = best_of(starts.into_par_iter().map(|s0| attention_ascent(&ds.inputs, &r, s0, t, m, opts.max_iter)).collect());
    let gm = attention_g(&ds.inputs, &r, &z, t, m);
    let v = if val > 0.0 {
        gm / val
    } else {
        let mut e = DMatrix::zeros(m, n);
        e[(0, 0)] = 1.0;
        e
    };
    let ub = polar_upper_bound(ds, model, lambda)?;
    Ok(finish(PolarCertificate {
        value: val / nl,
        method: PolarMethod::Search,
        witness: FactorParams::Head { v, z },
        verdict: Verdict::Indeterminate,
        tolerance: opts.tau,
        lower_bound: None,
        upper_bound: Some(ub),
        converged: true,
    }))
}

/// Family dispatch used by the meta-trainer and the CLI.
pub fn polar(ds: &Dataset, model: &ParallelModel, opts: &PolarOptions) -> Result<PolarCertificate> {
    let lambda = model.lambda;
    match model.family {
        Family::MatrixSensing | Family::TwoLayerLinear => polar_exact_sensing_tau(ds, model, lambda, opts.tau),
        Family::StructuredMatrixSensing { gauge } => polar_structured_opts(ds, model, lambda, gauge, opts),
        Family::TwoLayerRelu => polar_search_relu_opts(ds, model, lambda, opts),
        Family::MultiHeadAttention { .. } => polar_search_attention_opts(ds, model, lambda, opts),
    }
}
