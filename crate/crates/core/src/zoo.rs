//! The five concrete families: factor maps `phi`, regularizers `theta`,
//! gauges, teachers and Lipschitz bounds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::spectral_norm;
use crate::model::{FactorParams, ParallelModel};
use crate::rng;

/// Slack on `||z||_2 <= 1` absorbing rounding from the projection.
pub const BALL_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GaugeSpec {
    /// `gamma(u) = ||u||_2`.
    Euclidean,
    /// Unit ball `{||u||_2 <= 1} ∩ {||u||_1 <= s}`, so `gamma(u) = max(||u||_2, ||u||_1 / s)`.
    SparseBall { s: f64 },
}

impl Default for GaugeSpec {
    fn default() -> Self {
        GaugeSpec::SparseBall { s: 2.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Family {
    MatrixSensing,
    StructuredMatrixSensing { gauge: GaugeSpec },
    TwoLayerLinear,
    TwoLayerRelu,
    MultiHeadAttention { temperature: f64, tokens: usize },
}

/// Output dimension `m` and input dimension `n`. Sensing inputs are `m x n`
/// matrices; network inputs are vectors in `R^n`; attention inputs are `n x T`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub m: usize,
    pub n: usize,
}

impl Dims {
    pub fn new(m: usize, n: usize) -> Self {
        Dims { m, n }
    }
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::MatrixSensing => "matrix-sensing",
            Family::StructuredMatrixSensing { .. } => "structured-matrix-sensing",
            Family::TwoLayerLinear => "two-layer-linear",
            Family::TwoLayerRelu => "two-layer-relu",
            Family::MultiHeadAttention { .. } => "multi-head-attention",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Family::MultiHeadAttention { temperature, tokens } => {
                if !(temperature.is_finite() && temperature > 0.0) {
                    return Err(Error::Argument(format!("temperature must be finite and positive, got {temperature}")));
                }
                if tokens == 0 {
                    return Err(Error::Argument("token count must be at least 1".into()));
                }
            }
            Family::StructuredMatrixSensing { gauge: GaugeSpec::SparseBall { s } } => {
                if !(s.is_finite() && s > 0.0) {
                    return Err(Error::Argument(format!("gauge sparsity must be positive, got {s}")));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn is_sensing(&self) -> bool {
        matches!(self, Family::MatrixSensing | Family::StructuredMatrixSensing { .. })
    }

    /// Shape of one input tensor.
    pub fn input_shape(&self, dims: Dims) -> (usize, usize) {
        match *self {
            Family::MatrixSensing | Family::StructuredMatrixSensing { .. } => (dims.m, dims.n),
            Family::TwoLayerLinear | Family::TwoLayerRelu => (dims.n, 1),
            Family::MultiHeadAttention { tokens, .. } => (dims.n, tokens),
        }
    }

    /// `n_Y`.
    pub fn output_dim(&self, dims: Dims) -> usize {
        if self.is_sensing() {
            1
        } else {
            dims.m
        }
    }

    /// `n_X`, the number of scalar input coordinates.
    pub fn input_dim(&self, dims: Dims) -> usize {
        let (r, c) = self.input_shape(dims);
        r * c
    }

    /// Number of scalar parameters in one factor, `dim(W)`.
    pub fn factor_dim(&self, dims: Dims) -> usize {
        match self {
            Family::MultiHeadAttention { .. } => dims.m * dims.n + dims.n,
            _ => dims.m + dims.n,
        }
    }

    /// Degree of positive homogeneity of the designated sub-block.
    pub fn homogeneity_degree(&self) -> u32 {
        match self {
            Family::MultiHeadAttention { .. } => 1,
            _ => 2,
        }
    }

    pub fn gauge(&self) -> Option<GaugeSpec> {
        match *self {
            Family::StructuredMatrixSensing { gauge } => Some(gauge),
            _ => None,
        }
    }
}

pub fn gauge_value(spec: GaugeSpec, u: &DVector<f64>) -> f64 {
    match spec {
        GaugeSpec::Euclidean => u.norm(),
        GaugeSpec::SparseBall { s } => u.norm().max(u.lp_norm(1) / s),
    }
}

/// `K_2 = sup_{||u||_2 <= 1} gamma(u)`.
pub fn gauge_k2(spec: GaugeSpec, n: usize) -> f64 {
    match spec {
        GaugeSpec::Euclidean => 1.0,
        GaugeSpec::SparseBall { s } => 1f64.max((n as f64).sqrt() / s),
    }
}

/// An element of the subdifferential of the gauge; zero at `u = 0`.
pub fn gauge_subgradient(spec: GaugeSpec, u: &DVector<f64>) -> DVector<f64> {
    let l2 = u.norm();
    if l2 == 0.0 {
        return DVector::zeros(u.len());
    }
    match spec {
        GaugeSpec::Euclidean => u / l2,
        GaugeSpec::SparseBall { s } => {
            if l2 >= u.lp_norm(1) / s {
                u / l2
            } else {
                u.map(|x| sign0(x) / s)
            }
        }
    }
}

pub(crate) fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Temperature softmax `exp(t u_k) / sum_l exp(t u_l)`, shifted for stability.
pub fn softmax(u: &DVector<f64>, t: f64) -> DVector<f64> {
    let mx = u.max();
    let e = u.map(|x| (t * (x - mx)).exp());
    let s = e.sum();
    e / s
}

/// One factor's prediction `phi(W)(X)`.
pub fn factor_output(family: &Family, w: &FactorParams, x: &DMatrix<f64>) -> DVector<f64> {
    match (family, w) {
        (Family::MatrixSensing | Family::StructuredMatrixSensing { .. }, FactorParams::Pair { u, v }) => {
            DVector::from_element(1, u.dot(&(x * v)))
        }
        (Family::TwoLayerLinear, FactorParams::Pair { u, v }) => u * v.dot(&x.column(0)),
        (Family::TwoLayerRelu, FactorParams::Pair { u, v }) => u * v.dot(&x.column(0)).max(0.0),
        (Family::MultiHeadAttention { temperature, .. }, FactorParams::Head { v, z }) => {
            let p = softmax(&x.tr_mul(z), *temperature);
            v * (x * p)
        }
        _ => panic!("factor block kind does not match family {}", family.name()),
    }
}

/// `theta(W)`. Errors when an attention head leaves the unit ball.
pub fn factor_theta(family: &Family, w: &FactorParams) -> Result<f64> {
    Ok(match (family, w) {
        (Family::MatrixSensing, FactorParams::Pair { u, v }) => u.norm() * v.norm(),
        (Family::StructuredMatrixSensing { gauge }, FactorParams::Pair { u, v }) => gauge_value(*gauge, u) * v.norm(),
        (Family::TwoLayerLinear | Family::TwoLayerRelu, FactorParams::Pair { u, v }) => {
            0.5 * (u.norm_squared() + v.norm_squared())
        }
        (Family::MultiHeadAttention { .. }, FactorParams::Head { v, z }) => {
            let zn = z.norm();
            if zn > 1.0 + BALL_SLACK {
                return Err(Error::InfeasibleRegularizer(format!("attention head has ||z||_2 = {zn} > 1")));
            }
            v.norm()
        }
        _ => panic!("factor block kind does not match family {}", family.name()),
    })
}

/// Multiply the homogeneous sub-block by `beta`; prediction and theta scale by `beta^p`.
pub fn scale_homogeneous(w: &FactorParams, beta: f64) -> FactorParams {
    match w {
        FactorParams::Pair { u, v } => FactorParams::Pair { u: u * beta, v: v * beta },
        FactorParams::Head { v, z } => FactorParams::Head { v: v * beta, z: z.clone() },
    }
}

/// Rescale so `theta` equals `target`. A factor with zero theta is returned as is.
pub fn rescale_to_theta(family: &Family, w: &FactorParams, target: f64) -> Result<FactorParams> {
    let th = factor_theta(family, w)?;
    if th == 0.0 {
        return Ok(w.clone());
    }
    let ratio = target / th;
    let beta = match family.homogeneity_degree() {
        1 => ratio,
        _ => ratio.sqrt(),
    };
    Ok(scale_homogeneous(w, beta))
}

/// A random model whose factors each have `theta = init_scale`.
pub fn make_model(family: Family, dims: Dims, width: usize, init_scale: f64, lambda: f64, seed: u64) -> Result<ParallelModel> {
    family.validate()?;
    if !(init_scale.is_finite() && init_scale > 0.0) {
        return Err(Error::Argument(format!("init scale must be positive, got {init_scale}")));
    }
    let mut r = rng::rng(seed);
    let mut factors = Vec::with_capacity(width);
    for _ in 0..width {
        let w = random_factor(&family, dims, &mut r);
        factors.push(rescale_to_theta(&family, &w, init_scale)?);
    }
    ParallelModel::new(family, dims, factors, lambda)
}

pub(crate) fn random_factor(family: &Family, dims: Dims, r: &mut rng::Rng64) -> FactorParams {
    match family {
        Family::MultiHeadAttention { .. } => FactorParams::Head {
            v: rng::gaussian_mat(r, dims.m, dims.n, 1.0),
            z: rng::unit_vec(r, dims.n) * 0.5,
        },
        _ => FactorParams::Pair { u: rng::gaussian_vec(r, dims.m, 1.0), v: rng::gaussian_vec(r, dims.n, 1.0) },
    }
}

/// Stack pair factors into `U = [u_1 ... u_r]`, `V = [v_1 ... v_r]`.
pub fn stack_pairs(model: &ParallelModel) -> (DMatrix<f64>, DMatrix<f64>) {
    let r = model.width();
    let mut u = DMatrix::zeros(model.dims.m, r);
    let mut v = DMatrix::zeros(model.dims.n, r);
    for (j, f) in model.factors.iter().enumerate() {
        if let FactorParams::Pair { u: uj, v: vj } = f {
            u.set_column(j, uj);
            v.set_column(j, vj);
        }
    }
    (u, v)
}

/// Family-specific upper bound on the Lipschitz constant of the learned map.
pub fn lipschitz_upper_bound(model: &ParallelModel) -> f64 {
    if model.width() == 0 {
        return 0.0;
    }
    match model.family {
        Family::MatrixSensing | Family::StructuredMatrixSensing { .. } => {
            let (u, v) = stack_pairs(model);
            spectral_norm(&(u * v.transpose()))
        }
        Family::TwoLayerLinear | Family::TwoLayerRelu => {
            let (u, v) = stack_pairs(model);
            spectral_norm(&u) * spectral_norm(&v)
        }
        Family::MultiHeadAttention { .. } => model
            .factors
            .iter()
            .map(|f| match f {
                FactorParams::Head { v, .. } => spectral_norm(v),
                FactorParams::Pair { .. } => 0.0,
            })
            .sum(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TeacherBlocks {
    LowRank {
        #[serde(with = "crate::serde_util::matrix")]
        m_star: DMatrix<f64>,
    },
    /// Columns are the teacher factors `u*_j`, `v*_j`.
    Factored {
        #[serde(with = "crate::serde_util::matrix")]
        u: DMatrix<f64>,
        #[serde(with = "crate::serde_util::matrix")]
        v: DMatrix<f64>,
    },
    Attention {
        #[serde(with = "crate::serde_util::matrix")]
        a: DMatrix<f64>,
        #[serde(with = "crate::serde_util::vector")]
        b: DVector<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherSpec {
    pub family: Family,
    pub dims: Dims,
    pub rank: usize,
    pub blocks: TeacherBlocks,
    /// Noise scale `sigma`; vector outputs get per-coordinate variance `sigma^2 / m`.
    pub sigma: f64,
}

impl TeacherSpec {
    pub fn new(family: Family, dims: Dims, rank: usize, blocks: TeacherBlocks, sigma: f64) -> Result<Self> {
        family.validate()?;
        let t = TeacherSpec { family, dims, rank, blocks, sigma };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, n) = (self.dims.m, self.dims.n);
        let bad = |what: &str| Err(Error::Dimension(format!("teacher {what} inconsistent with {} dims {m}x{n}", self.family.name())));
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::Argument(format!("noise scale must be non-negative, got {}", self.sigma)));
        }
        match (&self.family, &self.blocks) {
            (Family::MatrixSensing, TeacherBlocks::LowRank { m_star }) => {
                if m_star.shape() != (m, n) {
                    return bad("M*");
                }
            }
            (
                Family::MatrixSensing | Family::StructuredMatrixSensing { .. } | Family::TwoLayerLinear | Family::TwoLayerRelu,
                TeacherBlocks::Factored { u, v },
            ) => {
                if u.nrows() != m || v.nrows() != n || u.ncols() != v.ncols() {
                    return bad("(U*, V*)");
                }
            }
            (Family::MultiHeadAttention { tokens, .. }, TeacherBlocks::Attention { a, b }) => {
                if a.shape() != (m, n) || b.len() != *tokens {
                    return bad("(A*, b*)");
                }
                if (b.norm() - 1.0).abs() > 1e-9 {
                    return Err(Error::Argument(format!("teacher b* must be a unit vector, got norm {}", b.norm())));
                }
            }
            _ => return bad("block kind"),
        }
        Ok(())
    }

    /// Gaussian teacher with `N(0, 1)` factor entries and a uniform unit `b*`.
    pub fn random(family: Family, dims: Dims, rank: usize, sigma: f64, seed: u64) -> Result<Self> {
        family.validate()?;
        let mut r = rng::rng(seed);
        let blocks = match family {
            Family::MatrixSensing => {
                let u = rng::gaussian_mat(&mut r, dims.m, rank, 1.0);
                let v = rng::gaussian_mat(&mut r, dims.n, rank, 1.0);
                TeacherBlocks::LowRank { m_star: u * v.transpose() }
            }
            Family::StructuredMatrixSensing { .. } | Family::TwoLayerLinear | Family::TwoLayerRelu => TeacherBlocks::Factored {
                u: rng::gaussian_mat(&mut r, dims.m, rank, 1.0),
                v: rng::gaussian_mat(&mut r, dims.n, rank, 1.0),
            },
            Family::MultiHeadAttention { tokens, .. } => TeacherBlocks::Attention {
                a: rng::gaussian_mat(&mut r, dims.m, dims.n, 1.0),
                b: rng::unit_vec(&mut r, tokens),
            },
        };
        TeacherSpec::new(family, dims, rank, blocks, sigma)
    }

    /// `M* = U* V*^T` for the matrix-valued teachers.
    pub fn matrix(&self) -> Option<DMatrix<f64>> {
        match &self.blocks {
            TeacherBlocks::LowRank { m_star } => Some(m_star.clone()),
            TeacherBlocks::Factored { u, v } => Some(u * v.transpose()),
            TeacherBlocks::Attention { .. } => None,
        }
    }

    /// Noise-free teacher map.
    pub fn apply(&self, x: &DMatrix<f64>) -> DVector<f64> {
        match (&self.family, &self.blocks) {
            (Family::TwoLayerRelu, TeacherBlocks::Factored { u, v }) => {
                let a = v.tr_mul(&x.column(0)).map(|t| t.max(0.0));
                u * a
            }
            (Family::TwoLayerLinear, TeacherBlocks::Factored { u, v }) => u * v.tr_mul(&x.column(0)),
            (_, TeacherBlocks::Attention { a, b }) => a * (x * b),
            _ => {
                let m = self.matrix().expect("matrix teacher");
                DVector::from_element(1, m.dot(x))
            }
        }
    }

    /// Lipschitz bound of the teacher map, on the same footing as
    /// [`lipschitz_upper_bound`] for trained models.
    pub fn lipschitz_bound(&self) -> f64 {
        match (&self.family, &self.blocks) {
            (Family::TwoLayerLinear | Family::TwoLayerRelu, TeacherBlocks::Factored { u, v }) => spectral_norm(u) * spectral_norm(v),
            (_, TeacherBlocks::Attention { a, .. }) => spectral_norm(a),
            _ => spectral_norm(&self.matrix().expect("matrix teacher")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn e(n: usize, k: usize) -> DVector<f64> {
        let mut x = DVector::zeros(n);
        x[k] = 1.0;
        x
    }

    #[test]
    fn gauge_examples() {
        let g = GaugeSpec::SparseBall { s: 1.0 };
        assert_eq!(gauge_value(g, &DVector::zeros(3)), 0.0);
        assert_eq!(gauge_value(g, &e(4, 0)), 1.0);
        assert_eq!(gauge_k2(g, 4), 2.0);
        assert_eq!(gauge_k2(GaugeSpec::Euclidean, 9), 1.0);
    }

    #[test]
    fn gauge_dominates_l2_and_is_homogeneous() {
        let g = GaugeSpec::SparseBall { s: 1.5 };
        let mut r = rng::rng(5);
        for _ in 0..20 {
            let u = rng::gaussian_vec(&mut r, 6, 1.0);
            assert!(gauge_value(g, &u) >= u.norm());
            assert_relative_eq!(gauge_value(g, &(&u * 2.5)), 2.5 * gauge_value(g, &u), max_relative = 1e-14);
        }
    }

    #[test]
    fn make_model_scales_theta() {
        let m = make_model(Family::MatrixSensing, Dims::new(4, 3), 3, 1e-3, 0.1, 9).unwrap();
        for f in &m.factors {
            let th = factor_theta(&m.family, f).unwrap();
            assert!((th - 1e-3).abs() <= 1e-12);
        }
        assert_eq!(make_model(Family::MatrixSensing, Dims::new(4, 3), 0, 1e-3, 0.1, 9).unwrap().width(), 0);
        let again = make_model(Family::MatrixSensing, Dims::new(4, 3), 3, 1e-3, 0.1, 9).unwrap();
        assert_eq!(m.factors, again.factors);
    }

    #[test]
    fn lipschitz_examples() {
        let f = FactorParams::Pair { u: e(3, 0), v: e(3, 1) };
        let m = ParallelModel::new(Family::MatrixSensing, Dims::new(3, 3), vec![f], 1.0).unwrap();
        assert_relative_eq!(lipschitz_upper_bound(&m), 1.0, max_relative = 1e-12);

        let relu = ParallelModel::new(
            Family::TwoLayerRelu,
            Dims::new(2, 2),
            vec![FactorParams::Pair { u: e(2, 0), v: e(2, 0) }, FactorParams::Pair { u: e(2, 1), v: e(2, 1) }],
            1.0,
        )
        .unwrap();
        assert_relative_eq!(lipschitz_upper_bound(&relu), 1.0, max_relative = 1e-12);

        let zero = ParallelModel::new(
            Family::TwoLayerRelu,
            Dims::new(2, 2),
            vec![FactorParams::Pair { u: DVector::zeros(2), v: DVector::zeros(2) }],
            1.0,
        )
        .unwrap();
        assert_eq!(lipschitz_upper_bound(&zero), 0.0);
    }

    #[test]
    fn theta_examples() {
        let s = FactorParams::Pair { u: e(2, 0) * 3.0, v: e(2, 1) * 4.0 };
        assert_eq!(factor_theta(&Family::MatrixSensing, &s).unwrap(), 12.0);
        let r = FactorParams::Pair { u: e(2, 0), v: DVector::from_vec(vec![1.0, 2f64.sqrt()]) };
        assert_relative_eq!(factor_theta(&Family::TwoLayerRelu, &r).unwrap(), 2.0, max_relative = 1e-15);
        let fam = Family::MultiHeadAttention { temperature: 1.0, tokens: 2 };
        let bad = FactorParams::Head { v: DMatrix::identity(2, 2), z: DVector::from_vec(vec![1.0, 1.0]) };
        assert!(matches!(factor_theta(&fam, &bad), Err(Error::InfeasibleRegularizer(_))));
    }

    #[test]
    fn teacher_shapes_checked() {
        let bad = TeacherSpec::new(
            Family::MatrixSensing,
            Dims::new(3, 3),
            1,
            TeacherBlocks::LowRank { m_star: DMatrix::zeros(2, 3) },
            0.0,
        );
        assert!(matches!(bad, Err(Error::Dimension(_))));
        let t = TeacherSpec::random(Family::MultiHeadAttention { temperature: 1.0, tokens: 4 }, Dims::new(2, 3), 1, 0.1, 1).unwrap();
        if let TeacherBlocks::Attention { b, .. } = &t.blocks {
            assert_relative_eq!(b.norm(), 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn family_json_round_trip() {
        for f in [
            Family::MatrixSensing,
            Family::StructuredMatrixSensing { gauge: GaugeSpec::SparseBall { s: 2.0 } },
            Family::TwoLayerLinear,
            Family::TwoLayerRelu,
            Family::MultiHeadAttention { temperature: 0.5, tokens: 3 },
        ] {
            let s = serde_json::to_string(&f).unwrap();
            assert_eq!(serde_json::from_str::<Family>(&s).unwrap(), f);
        }
    }
}
