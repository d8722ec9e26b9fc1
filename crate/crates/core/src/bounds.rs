//! Generalization-bound constants, per-family ledgers and the bound report.
//!
//! The universal constants hidden by `≲` are set to 1; reports are labeled
//! accordingly and are order-of-magnitude statements.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, nuclear_norm_svd, spectral_norm};
use crate::model::{self, Dataset, FactorParams, ParallelModel};
use crate::polar::PolarCertificate;
use crate::rng;
use crate::zoo::{self, Dims, Family, TeacherBlocks, TeacherSpec};

pub const DEFAULT_BERNSTEIN_C: f64 = 0.125;
pub const REPORT_LABEL: &str = "up to universal constants";

/// Bounds describing the hypothesis class `F_W`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisBounds {
    pub width: usize,
    /// `B_u`; unused by attention.
    pub b_u: f64,
    /// `B_v`, or `B_V` (Frobenius bound per head) for attention.
    pub b_v: f64,
    /// `C_UV` or `C_V`; `gamma = C * Omega_up`.
    pub c_mult: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsLedger {
    pub family: String,
    pub gamma: f64,
    pub sigma_x: f64,
    pub sigma_y_given_x: f64,
    pub g_lip: f64,
    pub l_smooth: f64,
    pub alpha: f64,
    pub omega_up: f64,
    pub l_phi: f64,
    pub r_theta: f64,
    pub b_phi: f64,
    pub b_ell: f64,
    pub lt_phi_big: f64,
    pub lt_phi_small: f64,
    pub eps0: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub g_radius: f64,
    pub delta_c: f64,
    pub b_of_c: f64,
    pub width: usize,
    pub dim_w: usize,
    pub b_u: f64,
    pub b_v: f64,
    pub c_mult: f64,
    pub n_x: usize,
    pub n_y: usize,
    /// Dimension entering the Bernstein tail for `delta_C`.
    pub n_concentration: usize,
    pub tokens: usize,
    pub bernstein_c: f64,
    /// `||M*||_F`, `||U* V*^T||_2` or `||A*||_2`, whichever the family's `B(C)` uses.
    pub teacher_norm_a: f64,
    /// `||U*||_F ||V*||_F` for ReLU; zero elsewhere.
    pub teacher_norm_b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub family: String,
    #[serde(rename = "N")]
    pub n_samples: usize,
    pub delta: f64,
    pub ledger: ConstantsLedger,
    pub optimization_error: f64,
    pub statistical_error: f64,
    pub total: f64,
    /// `n_Y`, the output normalization the bound applies to.
    pub normalization: usize,
    pub label: String,
}

/// `16 gamma^2 sigma_X^2 * op{1, (L/4)[1 + (||g||^2/gamma^2)(1 + sigma_{Y|X}^2/sigma_X^2)]}`.
fn eps_core(gamma: f64, sigma_x: f64, l: f64, g_lip: f64, sigma_yx: f64) -> (f64, f64) {
    let inner = l / 4.0 * (1.0 + (g_lip * g_lip / (gamma * gamma)) * (1.0 + sigma_yx * sigma_yx / (sigma_x * sigma_x)));
    let base = 16.0 * gamma * gamma * sigma_x * sigma_x;
    (base * inner.min(1.0), base * inner.max(1.0))
}

pub fn eps0(gamma: f64, sigma_x: f64, l: f64, g_lip: f64, sigma_yx: f64) -> f64 {
    eps_core(gamma, sigma_x, l, g_lip, sigma_yx).0
}

pub fn eps1(gamma: f64, sigma_x: f64, l: f64, g_lip: f64, sigma_yx: f64) -> f64 {
    eps_core(gamma, sigma_x, l, g_lip, sigma_yx).1
}

pub fn eps2(lt_big: f64, b_phi: f64, l: f64, b_ell: f64, omega: f64, lt_small: f64) -> f64 {
    let terms = [1.0, 2.0 * l + 2.0 * b_ell / b_phi, 8.0 * omega * b_ell * lt_small / (lt_big * b_phi), 8.0 * l * omega];
    4.0 * lt_big * b_phi * terms.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Gaussian projection tail `g exp(-g^2/2) norm`, valid for `g >= 1`.
pub fn projection_tail(g: f64, norm: f64) -> Result<f64> {
    if !(g >= 1.0) {
        return Err(Error::Constraint(format!("projection tail needs g >= 1, got {g}")));
    }
    Ok(g * (-0.5 * g * g).exp() * norm)
}

/// `2N exp(-c n_X (g - 1)^2)`.
pub fn delta_c(n_samples: usize, n_x: usize, g: f64, c: f64) -> Result<f64> {
    if !(g >= 1.0) || !(c > 0.0) {
        return Err(Error::Constraint(format!("delta_C needs g >= 1 and c > 0, got g = {g}, c = {c}")));
    }
    Ok(2.0 * n_samples as f64 * (-c * n_x as f64 * (g - 1.0).powi(2)).exp())
}

/// Family closed form of `B(C)`, reading teacher norms and bounds from the ledger.
pub fn b_of_c(family: &Family, g: f64, l: &ConstantsLedger) -> Result<f64> {
    if !(g >= 1.0) {
        return Err(Error::Constraint(format!("B(C) needs g >= 1, got {g}")));
    }
    let r = l.width as f64;
    let tail = g * (-0.5 * g * g).exp();
    Ok(match family {
        Family::MatrixSensing | Family::StructuredMatrixSensing { .. } => 4.0 * tail * (l.teacher_norm_a + r * l.b_u * l.b_v).powi(2),
        Family::TwoLayerLinear => tail * (1.0 + l.gamma) * (l.teacher_norm_a + l.gamma),
        Family::TwoLayerRelu => 4.0 * r * tail * l.gamma * (l.teacher_norm_b + l.gamma),
        Family::MultiHeadAttention { tokens, .. } => {
            let t = *tokens as f64;
            4.0 * r * (t.ln() / t.powi(5)).sqrt() * g * (-g * g).exp() * l.gamma * (l.teacher_norm_a + l.gamma)
        }
    })
}

/// Upper bound on the induced regularizer at the population optimum.
pub fn omega_upper(teacher: &TeacherSpec) -> f64 {
    match (&teacher.family, &teacher.blocks) {
        (Family::StructuredMatrixSensing { gauge }, TeacherBlocks::Factored { u, v }) => {
            (0..u.ncols()).map(|j| zoo::gauge_value(*gauge, &u.column(j).into_owned()) * v.column(j).norm()).sum()
        }
        (Family::TwoLayerLinear | Family::TwoLayerRelu, TeacherBlocks::Factored { u, v }) => 0.5 * (u.norm_squared() + v.norm_squared()),
        (_, TeacherBlocks::Attention { a, .. }) => a.norm(),
        _ => nuclear_norm_svd(&teacher.matrix().expect("matrix teacher")),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuclearVariational {
    pub value: f64,
    /// Certified lower bound `<M, E> / ||E||_2` on `||M||_*`.
    pub lower_bound: f64,
    /// Certified upper bound `sum_j ||u_j|| ||v_j|| + sqrt(k) ||E||_F`.
    pub upper_bound: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Variational value of `inf sum_j ||u_j|| ||v_j||` over width-`R` factorizations
/// of `M`, by alternating ridge solves on
/// `F_mu(U, V) = (||U||^2 + ||V||^2)/2 + ||M - U V^T||^2 / (2 mu)`
/// with `mu` driven to zero by continuation. The reported value is
/// `sum_j ||u_j|| ||v_j||` at the final factors; for `R >= rank(M)` it tends to
/// `||M||_*`. For smaller `R` the factors cannot fit `M` and the bounds separate.
pub fn nuclear_variational(m: &DMatrix<f64>, width: usize, iters: usize) -> Result<NuclearVariational> {
    if width == 0 {
        return Err(Error::Argument("width must be at least 1".into()));
    }
    if !m.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite { what: "matrix entry", sample: None });
    }
    let scale = m.norm();
    if scale == 0.0 {
        return Ok(NuclearVariational { value: 0.0, lower_bound: 0.0, upper_bound: 0.0, gap: 0.0, iterations: 0, converged: true });
    }
    let a = m / scale;
    let (rows, cols) = a.shape();
    let k = rows.min(cols) as f64;
    let mut r = rng::rng(0xA15);
    let mut v = rng::gaussian_mat(&mut r, cols, width, 1.0 / (cols as f64).sqrt());
    let mut u = DMatrix::zeros(rows, width);
    let eye = DMatrix::<f64>::identity(width, width);
    let ridge = |b: &DMatrix<f64>, gram: DMatrix<f64>| -> DMatrix<f64> {
        // b (gram)^{-1}; gram is SPD because of the ridge.
        let chol = gram.cholesky().expect("ridge Gram matrix is positive definite");
        chol.solve(&b.transpose()).transpose()
    };
    let f_mu = |u: &DMatrix<f64>, v: &DMatrix<f64>, mu: f64| {
        let e = &a - u * v.transpose();
        0.5 * (u.norm_squared() + v.norm_squared()) + e.norm_squared() / (2.0 * mu)
    };

    let mut mu = 1.0;
    let mu_min = 1e-9;
    let mut total = 0;
    let mut value;
    let (mut lower, mut upper) = (0.0f64, f64::INFINITY);
    let per_stage = iters.max(1);
    loop {
        let mut prev = f64::INFINITY;
        for _ in 0..per_stage {
            u = ridge(&(&a * &v), v.tr_mul(&v) + &eye * mu);
            v = ridge(&(a.tr_mul(&u)), u.tr_mul(&u) + &eye * mu);
            total += 1;
            let f = f_mu(&u, &v, mu);
            if prev - f <= 1e-15 * f {
                break;
            }
            prev = f;
        }
        let e = &a - &u * v.transpose();
        let en2 = linalg::spectral_norm(&e);
        if en2 > 0.0 {
            lower = lower.max(a.dot(&e) / en2);
        }
        let theta: f64 = (0..width).map(|j| u.column(j).norm() * v.column(j).norm()).sum();
        value = theta;
        upper = upper.min(theta + k.sqrt() * e.norm());
        if mu <= mu_min {
            break;
        }
        mu = (mu / 10.0).max(mu_min);
    }
    let gap = (upper - lower) / upper.max(f64::MIN_POSITIVE);
    Ok(NuclearVariational {
        value: value * scale,
        lower_bound: lower * scale,
        upper_bound: upper * scale,
        gap,
        iterations: total,
        converged: gap <= 1e-4,
    })
}

/// Default `g` schedule from the per-family proofs.
pub fn default_g_radius(family: &Family, n_samples: usize, width: usize, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Argument(format!("delta must lie in (0, 1], got {delta}")));
    }
    let ln_n = (n_samples.max(1) as f64).ln();
    let ln_r = (width.max(1) as f64).ln();
    let ln_d = (1.0 / delta).ln();
    let inner = match family {
        Family::MatrixSensing | Family::StructuredMatrixSensing { .. } => 0.5 * ln_n + 50.0 * ln_r + ln_d,
        Family::TwoLayerLinear => ln_n + ln_d,
        Family::TwoLayerRelu => ln_n + ln_r + ln_d,
        Family::MultiHeadAttention { tokens, .. } => *tokens as f64 * (ln_n + ln_d),
    };
    Ok(1.0 + inner.sqrt())
}

struct FamilyTerms {
    g_lip: f64,
    r_theta: f64,
    b_phi: f64,
    b_ell: f64,
    lt_big: f64,
    lt_small: f64,
    teacher_a: f64,
    teacher_b: f64,
    n_concentration: usize,
}

fn family_terms(teacher: &TeacherSpec, hyp: &HypothesisBounds, gamma: f64, g: f64) -> FamilyTerms {
    let r = hyp.width as f64;
    let (bu, bv) = (hyp.b_u, hyp.b_v);
    let buv = (bu * bu + bv * bv).sqrt();
    let dims = teacher.dims;
    match (&teacher.family, &teacher.blocks) {
        (Family::MultiHeadAttention { tokens, .. }, TeacherBlocks::Attention { a, .. }) => {
            let st = (*tokens as f64).sqrt();
            let af = a.norm();
            FamilyTerms {
                g_lip: af,
                r_theta: std::f64::consts::SQRT_2,
                b_phi: g * r * bv / st,
                b_ell: g * (r * bv + af) / st,
                lt_big: g * r * (bv * bv + 1.0).sqrt() / st,
                lt_small: g * (bv * bv + 1.0).sqrt() / st,
                teacher_a: spectral_norm(a),
                teacher_b: 0.0,
                n_concentration: dims.n,
            }
        }
        (Family::TwoLayerLinear, _) => {
            let uv = spectral_norm(&teacher.matrix().expect("factored teacher"));
            FamilyTerms {
                g_lip: uv,
                r_theta: std::f64::consts::FRAC_1_SQRT_2,
                b_phi: g * gamma,
                b_ell: g * (uv + gamma),
                lt_big: g * buv * r,
                lt_small: g * buv,
                teacher_a: uv,
                teacher_b: 0.0,
                n_concentration: dims.n,
            }
        }
        (Family::TwoLayerRelu, TeacherBlocks::Factored { u, v }) => FamilyTerms {
            g_lip: spectral_norm(u) * spectral_norm(v),
            r_theta: std::f64::consts::FRAC_1_SQRT_2,
            b_phi: g * gamma,
            b_ell: 2.0 * g * gamma,
            lt_big: g * buv * r,
            lt_small: g * buv,
            teacher_a: 0.0,
            teacher_b: u.norm() * v.norm(),
            n_concentration: dims.n,
        },
        _ => {
            let ms = teacher.matrix().expect("matrix teacher");
            let mf = ms.norm();
            FamilyTerms {
                g_lip: spectral_norm(&ms),
                r_theta: std::f64::consts::FRAC_1_SQRT_2,
                b_phi: g * bu * bv * r,
                b_ell: g * (mf + bu * bv * r),
                lt_big: g * buv * r,
                lt_small: g * buv,
                teacher_a: mf,
                teacher_b: 0.0,
                n_concentration: dims.m * dims.n,
            }
        }
    }
}

/// Every constant of the master bound for one family.
pub fn master_constants(
    family: &Family,
    dims: Dims,
    teacher: &TeacherSpec,
    hyp: &HypothesisBounds,
    g: f64,
    n_samples: usize,
    sigma_x: f64,
) -> Result<ConstantsLedger> {
    family.validate()?;
    teacher.validate()?;
    if teacher.family != *family || teacher.dims != dims {
        return Err(Error::Dimension("teacher does not match family dims".into()));
    }
    if !(hyp.c_mult >= 1.0) {
        return Err(Error::Constraint(format!("gamma >= Omega_up * L_phi requires C >= 1, got C = {}", hyp.c_mult)));
    }
    if hyp.width == 0 || !(hyp.b_v > 0.0) || (!matches!(family, Family::MultiHeadAttention { .. }) && !(hyp.b_u > 0.0)) {
        return Err(Error::Constraint("hypothesis bounds need R >= 1 and positive factor norms".into()));
    }
    if !(g >= 1.0) {
        return Err(Error::Constraint(format!("g-radius must be at least 1, got {g}")));
    }
    if !(sigma_x > 0.0) {
        return Err(Error::Constraint(format!("sigma_X must be positive, got {sigma_x}")));
    }
    let omega = omega_upper(teacher);
    if !(omega > 0.0) {
        return Err(Error::Constraint("Omega upper bound of the teacher is zero".into()));
    }
    let l_phi = 1.0;
    let l = 1.0;
    let gamma = hyp.c_mult * omega;
    let ft = family_terms(teacher, hyp, gamma, g);
    let sigma_yx = teacher.sigma;
    let (e0, e1) = eps_core(gamma, sigma_x, l, ft.g_lip, sigma_yx);
    let e2 = eps2(ft.lt_big, ft.b_phi, l, ft.b_ell, omega, ft.lt_small);
    let bern = DEFAULT_BERNSTEIN_C;
    let tokens = match family {
        Family::MultiHeadAttention { tokens, .. } => *tokens,
        _ => 1,
    };
    let mut ledger = ConstantsLedger {
        family: family.name().to_string(),
        gamma,
        sigma_x,
        sigma_y_given_x: sigma_yx,
        g_lip: ft.g_lip,
        l_smooth: l,
        alpha: 0.0,
        omega_up: omega,
        l_phi,
        r_theta: ft.r_theta,
        b_phi: ft.b_phi,
        b_ell: ft.b_ell,
        lt_phi_big: ft.lt_big,
        lt_phi_small: ft.lt_small,
        eps0: e0,
        eps1: e1,
        eps2: e2,
        g_radius: g,
        delta_c: delta_c(n_samples, ft.n_concentration, g, bern)?,
        b_of_c: 0.0,
        width: hyp.width,
        dim_w: family.factor_dim(dims),
        b_u: hyp.b_u,
        b_v: hyp.b_v,
        c_mult: hyp.c_mult,
        n_x: family.input_dim(dims),
        n_y: family.output_dim(dims),
        n_concentration: ft.n_concentration,
        tokens,
        bernstein_c: bern,
        teacher_norm_a: ft.teacher_a,
        teacher_norm_b: ft.teacher_b,
    };
    ledger.b_of_c = b_of_c(family, g, &ledger)?;
    let finite = [ledger.eps0, ledger.eps1, ledger.eps2, ledger.b_of_c, ledger.delta_c, ledger.b_phi, ledger.b_ell];
    if finite.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { what: "ledger constant", sample: None });
    }
    Ok(ledger)
}

/// `(1 + alpha) eps1 sqrt((R dim(W) log(gamma eps2 r_theta / L_phi) log N + log(1/delta)) / N)`.
pub fn statistical_error(l: &ConstantsLedger, n_samples: usize, delta: f64) -> Result<f64> {
    if n_samples < 2 {
        return Err(Error::Argument(format!("statistical error needs N >= 2, got {n_samples}")));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Argument(format!("delta must lie in (0, 1], got {delta}")));
    }
    let arg = l.gamma * l.eps2 * l.r_theta / l.l_phi;
    if !(arg > 1.0) {
        return Err(Error::Constraint(format!("log argument gamma eps2 r_theta / L_phi = {arg} must exceed 1")));
    }
    let n = n_samples as f64;
    let inner = (l.width * l.dim_w) as f64 * arg.ln() * n.ln() + (1.0 / delta).ln();
    Ok((1.0 + l.alpha) * l.eps1 * (inner / n).sqrt())
}

/// Hypothesis bounds read off a trained model. Factor-norm bounds also cover the
/// balanced teacher factors so that the class contains both maps.
pub fn hypothesis_bounds(model: &ParallelModel, teacher: &TeacherSpec) -> Result<HypothesisBounds> {
    let omega = omega_upper(teacher);
    if !(omega > 0.0) {
        return Err(Error::Constraint("Omega upper bound of the teacher is zero".into()));
    }
    let width = model.width().max(1);
    match (&teacher.blocks, model.family) {
        (TeacherBlocks::Attention { a, .. }, _) => {
            let heads: Vec<f64> = model.factors.iter().map(|f| if let FactorParams::Head { v, .. } = f { v.norm() } else { 0.0 }).collect();
            let b_v = heads.iter().copied().fold(a.norm(), f64::max);
            let c = (heads.iter().sum::<f64>() / omega).max(1.0);
            Ok(HypothesisBounds { width, b_u: 1.0, b_v, c_mult: c })
        }
        (blocks, family) => {
            let (mut b_u, mut b_v) = match blocks {
                TeacherBlocks::Factored { u, v } if family != Family::MatrixSensing => {
                    let cu = (0..u.ncols()).map(|j| u.column(j).norm()).fold(0.0, f64::max);
                    let cv = (0..v.ncols()).map(|j| v.column(j).norm()).fold(0.0, f64::max);
                    (cu, cv)
                }
                _ => {
                    let s = spectral_norm(&teacher.matrix().expect("matrix teacher")).sqrt();
                    (s, s)
                }
            };
            for f in &model.factors {
                if let FactorParams::Pair { u, v } = f {
                    b_u = b_u.max(u.norm());
                    b_v = b_v.max(v.norm());
                }
            }
            let lip = if family.is_sensing() || family == Family::TwoLayerLinear {
                // The class constraint is on ||U V^T||_2.
                let (u, v) = zoo::stack_pairs(model);
                spectral_norm(&(u * v.transpose()))
            } else {
                zoo::lipschitz_upper_bound(model)
            };
            let c = (lip / omega).max(1.0);
            Ok(HypothesisBounds { width, b_u, b_v, c_mult: c })
        }
    }
}

/// Optimization and statistical error for a trained model and its certificate.
pub fn bound_report(
    family: &Family,
    ds: &Dataset,
    model: &ParallelModel,
    cert: &PolarCertificate,
    delta: f64,
    g_radius: Option<f64>,
) -> Result<BoundReport> {
    if model.family != *family || ds.family != *family {
        return Err(Error::Argument("family of dataset, model and report must agree".into()));
    }
    let teacher = ds.meta.teacher.as_ref().ok_or_else(|| Error::Argument("dataset carries no teacher spec".into()))?;
    if model.width() > 0 {
        let rho = model::stationarity_residuals(ds, model)?;
        let worst = rho.iter().copied().fold(0.0, f64::max);
        if worst > 1e-3 {
            return Err(Error::Constraint(format!("model is not stationary: max residual {worst:.3e} > 1e-3")));
        }
    }
    let hyp = hypothesis_bounds(model, teacher)?;
    let n = ds.len();
    let g = match g_radius {
        Some(g) => g,
        None => default_g_radius(family, n, hyp.width, delta)?,
    };
    let ledger = master_constants(family, ds.dims, teacher, &hyp, g, n, ds.meta.sigma_x)?;
    let n_y = ledger.n_y;
    let optimization_error = model.lambda / n_y as f64 * ledger.omega_up * (cert.value - 1.0);
    let statistical_error = statistical_error(&ledger, n, delta)?;
    Ok(BoundReport {
        family: family.name().to_string(),
        n_samples: n,
        delta,
        total: optimization_error.max(0.0) + statistical_error,
        optimization_error,
        statistical_error,
        normalization: n_y,
        label: REPORT_LABEL.to_string(),
        ledger,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eps1_examples() {
        assert_eq!(eps1(1.0, 1.0, 1.0, 0.0, 0.0), 16.0);
        assert_relative_eq!(eps1(2.0, 1.0, 1.0, 0.0, 0.0), 4.0 * eps1(1.0, 1.0, 1.0, 0.0, 0.0), max_relative = 1e-15);
        assert!(eps1(1.3, 1.0, 1.0, 2.0, 0.5) >= eps0(1.3, 1.0, 1.0, 2.0, 0.5));
    }

    #[test]
    fn tail_examples() {
        assert_relative_eq!(projection_tail(1.0, 1.0).unwrap(), (-0.5f64).exp(), max_relative = 1e-15);
        assert_eq!(projection_tail(2.0, 0.0).unwrap(), 0.0);
        assert!(projection_tail(0.5, 1.0).is_err());
        assert!(projection_tail(3.0, 1.0).unwrap() < projection_tail(2.0, 1.0).unwrap());
        assert_eq!(delta_c(10, 5, 1.0, 0.125).unwrap(), 20.0);
    }

    #[test]
    fn omega_examples() {
        let d = Dims::new(2, 2);
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 4.0]));
        let t = TeacherSpec::new(Family::MatrixSensing, d, 2, TeacherBlocks::LowRank { m_star: m }, 0.0).unwrap();
        assert_relative_eq!(omega_upper(&t), 7.0, max_relative = 1e-12);
        let relu = TeacherSpec::new(Family::TwoLayerRelu, d, 2, TeacherBlocks::Factored { u: DMatrix::identity(2, 2), v: DMatrix::identity(2, 2) }, 0.0).unwrap();
        assert_eq!(omega_upper(&relu), 2.0);
        let zero = TeacherSpec::new(Family::MatrixSensing, d, 0, TeacherBlocks::LowRank { m_star: DMatrix::zeros(2, 2) }, 0.0).unwrap();
        assert_eq!(omega_upper(&zero), 0.0);
    }

    #[test]
    fn nuclear_variational_small() {
        assert_eq!(nuclear_variational(&DMatrix::zeros(3, 3), 2, 100).unwrap().value, 0.0);
        let mut r = rng::rng(12);
        let a = rng::gaussian_mat(&mut r, 5, 3, 1.0) * rng::gaussian_mat(&mut r, 3, 4, 1.0);
        let nv = nuclear_variational(&a, 4, 2000).unwrap();
        let want = nuclear_norm_svd(&a);
        assert_relative_eq!(nv.value, want, max_relative = 1e-6);
        assert!(nv.converged);
        let short = nuclear_variational(&a, 2, 2000).unwrap();
        // Rank 3 cannot be factored at width 2; only the certified bracket holds.
        assert!(short.lower_bound <= want && short.upper_bound >= want);
        assert!(!short.converged);
    }

    #[test]
    fn constraint_on_c() {
        let t = TeacherSpec::random(Family::MatrixSensing, Dims::new(3, 3), 1, 0.0, 1).unwrap();
        let hyp = HypothesisBounds { width: 1, b_u: 1.0, b_v: 1.0, c_mult: 0.5 };
        let err = master_constants(&Family::MatrixSensing, Dims::new(3, 3), &t, &hyp, 2.0, 100, 1.0).unwrap_err();
        assert!(matches!(err, Error::Constraint(_)));
    }
}
