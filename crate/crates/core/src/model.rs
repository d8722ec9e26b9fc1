//! Parallel models, datasets and the regularized empirical objective
//! `(1/2N) sum_i ||y_i - sum_j phi(W_j)(X_i)||^2 + lambda sum_j theta(W_j)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::zoo::{self, Dims, Family, TeacherSpec};

/// Parameters of one parallel unit. Sensing, linear and ReLU factors are a
/// pair `(u in R^m, v in R^n)`; attention heads are `(V in R^{m x n}, z in R^n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FactorParams {
    Pair {
        #[serde(with = "crate::serde_util::vector")]
        u: DVector<f64>,
        #[serde(with = "crate::serde_util::vector")]
        v: DVector<f64>,
    },
    Head {
        #[serde(with = "crate::serde_util::matrix")]
        v: DMatrix<f64>,
        #[serde(with = "crate::serde_util::vector")]
        z: DVector<f64>,
    },
}

impl FactorParams {
    pub fn zeros_like(&self) -> Self {
        match self {
            FactorParams::Pair { u, v } => FactorParams::Pair { u: DVector::zeros(u.len()), v: DVector::zeros(v.len()) },
            FactorParams::Head { v, z } => FactorParams::Head { v: DMatrix::zeros(v.nrows(), v.ncols()), z: DVector::zeros(z.len()) },
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        match (self, other) {
            (FactorParams::Pair { u, v }, FactorParams::Pair { u: a, v: b }) => u.dot(a) + v.dot(b),
            (FactorParams::Head { v, z }, FactorParams::Head { v: a, z: b }) => v.dot(a) + z.dot(b),
            _ => panic!("mismatched factor kinds"),
        }
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    /// `self + alpha * dir`.
    pub fn add_scaled(&self, alpha: f64, dir: &Self) -> Self {
        match (self, dir) {
            (FactorParams::Pair { u, v }, FactorParams::Pair { u: a, v: b }) => FactorParams::Pair { u: u + a * alpha, v: v + b * alpha },
            (FactorParams::Head { v, z }, FactorParams::Head { v: a, z: b }) => FactorParams::Head { v: v + a * alpha, z: z + b * alpha },
            _ => panic!("mismatched factor kinds"),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            FactorParams::Pair { u, v } => u.iter().chain(v.iter()).all(|x| x.is_finite()),
            FactorParams::Head { v, z } => v.iter().chain(z.iter()).all(|x| x.is_finite()),
        }
    }

    /// Project an attention head's `z` onto the unit ball; pairs are unchanged.
    pub fn project(self) -> Self {
        match self {
            FactorParams::Head { v, z } => {
                let n = z.norm();
                let z = if n > 1.0 { z / n } else { z };
                FactorParams::Head { v, z }
            }
            p => p,
        }
    }

    fn check_shape(&self, family: &Family, dims: Dims) -> Result<()> {
        let ok = match (family, self) {
            (Family::MultiHeadAttention { .. }, FactorParams::Head { v, z }) => v.shape() == (dims.m, dims.n) && z.len() == dims.n,
            (Family::MultiHeadAttention { .. }, _) => false,
            (_, FactorParams::Pair { u, v }) => u.len() == dims.m && v.len() == dims.n,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!("factor blocks do not match {} dims {}x{}", family.name(), dims.m, dims.n)))
        }
    }
}

/// Sum-of-blocks inner product over a factor list.
pub fn blocks_dot(a: &[FactorParams], b: &[FactorParams]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParallelModel {
    pub family: Family,
    pub dims: Dims,
    pub factors: Vec<FactorParams>,
    pub lambda: f64,
}

impl ParallelModel {
    pub fn new(family: Family, dims: Dims, factors: Vec<FactorParams>, lambda: f64) -> Result<Self> {
        let m = ParallelModel { family, dims, factors, lambda };
        m.validate()?;
        Ok(m)
    }

    pub fn empty(family: Family, dims: Dims, lambda: f64) -> Result<Self> {
        Self::new(family, dims, Vec::new(), lambda)
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::Argument(format!("lambda must be positive, got {}", self.lambda)));
        }
        for f in &self.factors {
            f.check_shape(&self.family, self.dims)?;
            if !f.is_finite() {
                return Err(Error::NonFinite { what: "factor entry", sample: None });
            }
            if let FactorParams::Head { z, .. } = f {
                if z.norm() > 1.0 + zoo::BALL_SLACK {
                    return Err(Error::InfeasibleRegularizer(format!("attention head has ||z||_2 = {} > 1", z.norm())));
                }
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.factors.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn with_factors(&self, factors: Vec<FactorParams>) -> Self {
        ParallelModel { family: self.family, dims: self.dims, factors, lambda: self.lambda }
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        let want = self.family.input_shape(self.dims);
        if x.shape() != want {
            return Err(Error::Dimension(format!("input shape {:?}, expected {:?}", x.shape(), want)));
        }
        Ok(())
    }
}

/// Sampling record carried along with a dataset for the bound calculators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingMeta {
    pub sigma_x: f64,
    pub sigma_noise: f64,
    pub teacher: Option<TeacherSpec>,
    pub seed: Option<u64>,
}

impl Default for SamplingMeta {
    fn default() -> Self {
        SamplingMeta { sigma_x: 1.0, sigma_noise: 0.0, teacher: None, seed: None }
    }
}

/// Inputs are stored as matrices throughout: sensing `m x n`, vector inputs
/// as `n x 1` columns, attention `n x T`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub family: Family,
    pub dims: Dims,
    pub inputs: Vec<DMatrix<f64>>,
    pub targets: Vec<DVector<f64>>,
    pub meta: SamplingMeta,
}

impl Dataset {
    pub fn new(family: Family, dims: Dims, inputs: Vec<DMatrix<f64>>, targets: Vec<DVector<f64>>, meta: SamplingMeta) -> Result<Self> {
        family.validate()?;
        if inputs.is_empty() {
            return Err(Error::Argument("dataset must contain at least one sample".into()));
        }
        if inputs.len() != targets.len() {
            return Err(Error::Dimension(format!("{} inputs but {} targets", inputs.len(), targets.len())));
        }
        let shape = family.input_shape(dims);
        let ny = family.output_dim(dims);
        for (i, (x, y)) in inputs.iter().zip(&targets).enumerate() {
            if x.shape() != shape || y.len() != ny {
                return Err(Error::Dimension(format!("sample {i} has input {:?} / target {}, expected {shape:?} / {ny}", x.shape(), y.len())));
            }
        }
        Ok(Dataset { family, dims, inputs, targets, meta })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn check_model(&self, model: &ParallelModel) -> Result<()> {
        if self.family != model.family || self.dims != model.dims {
            return Err(Error::Dimension(format!(
                "dataset is {} {}x{}, model is {} {}x{}",
                self.family.name(),
                self.dims.m,
                self.dims.n,
                model.family.name(),
                model.dims.m,
                model.dims.n
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub max_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthEvent {
    pub iteration: usize,
    pub width: usize,
    pub polar: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub iterates: Vec<TraceRow>,
    pub width_events: Vec<WidthEvent>,
    pub hit_iteration_cap: bool,
    pub hit_width_cap: bool,
}

impl TrainTrace {
    pub fn last_iteration(&self) -> Option<usize> {
        self.iterates.last().map(|r| r.iteration)
    }
}

pub fn predict(model: &ParallelModel, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    model.check_input(x)?;
    Ok(predict_unchecked(model, x))
}

fn predict_unchecked(model: &ParallelModel, x: &DMatrix<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(model.family.output_dim(model.dims));
    for f in &model.factors {
        out += zoo::factor_output(&model.family, f, x);
    }
    out
}

/// `y_i - yhat_i` for every sample.
pub fn residuals(ds: &Dataset, model: &ParallelModel) -> Result<Vec<DVector<f64>>> {
    ds.check_model(model)?;
    ds.inputs
        .iter()
        .zip(&ds.targets)
        .enumerate()
        .map(|(i, (x, y))| {
            let r = y - predict_unchecked(model, x);
            if r.iter().all(|v| v.is_finite()) {
                Ok(r)
            } else {
                Err(Error::NonFinite { what: "prediction", sample: Some(i) })
            }
        })
        .collect()
}

/// Data term `(1/2N) sum_i ||r_i||^2`.
pub fn loss(ds: &Dataset, model: &ParallelModel) -> Result<f64> {
    let r = residuals(ds, model)?;
    Ok(loss_from_residuals(&r))
}

pub(crate) fn loss_from_residuals(r: &[DVector<f64>]) -> f64 {
    r.iter().map(|x| x.norm_squared()).sum::<f64>() / (2.0 * r.len() as f64)
}

pub fn theta_total(model: &ParallelModel) -> Result<f64> {
    model.factors.iter().map(|f| zoo::factor_theta(&model.family, f)).sum()
}

pub fn objective(ds: &Dataset, model: &ParallelModel) -> Result<f64> {
    let l = loss(ds, model)?;
    let v = l + model.lambda * theta_total(model)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { what: "objective", sample: None })
    }
}

/// `(1/N) sum_i w_i X_i` for sensing and `(1/N) sum_i w_i x_i^T` for vector
/// inputs. The weights are per-sample output vectors.
pub fn residual_aggregate(ds: &Dataset, w: &[DVector<f64>]) -> DMatrix<f64> {
    let n = ds.len() as f64;
    let (m, k) = (ds.dims.m, ds.dims.n);
    let mut g = DMatrix::zeros(m, k);
    if ds.family.is_sensing() {
        for (x, wi) in ds.inputs.iter().zip(w) {
            g += x * (wi[0] / n);
        }
    } else {
        for (x, wi) in ds.inputs.iter().zip(w) {
            g.ger(1.0 / n, wi, &x.column(0), 1.0);
        }
    }
    g
}

/// Gradient of the data term alone, given `e_i = yhat_i - y_i`.
fn loss_gradient(ds: &Dataset, model: &ParallelModel, err: &[DVector<f64>]) -> Vec<FactorParams> {
    let n = ds.len() as f64;
    match model.family {
        Family::MatrixSensing | Family::StructuredMatrixSensing { .. } | Family::TwoLayerLinear => {
            let g = residual_aggregate(ds, err);
            model
                .factors
                .iter()
                .map(|f| match f {
                    FactorParams::Pair { u, v } => FactorParams::Pair { u: &g * v, v: g.tr_mul(u) },
                    _ => unreachable!(),
                })
                .collect()
        }
        Family::TwoLayerRelu => model
            .factors
            .iter()
            .map(|f| {
                let FactorParams::Pair { u, v } = f else { unreachable!() };
                let mut gu = DVector::zeros(u.len());
                let mut gv = DVector::zeros(v.len());
                for (x, e) in ds.inputs.iter().zip(err) {
                    let x = x.column(0);
                    let a = v.dot(&x);
                    if a > 0.0 {
                        gu.axpy(a / n, e, 1.0);
                        gv.axpy(u.dot(e) / n, &x, 1.0);
                    }
                }
                FactorParams::Pair { u: gu, v: gv }
            })
            .collect(),
        Family::MultiHeadAttention { temperature: t, .. } => model
            .factors
            .iter()
            .map(|f| {
                let FactorParams::Head { v, z } = f else { unreachable!() };
                let mut gv = DMatrix::zeros(v.nrows(), v.ncols());
                let mut gz = DVector::zeros(z.len());
                for (x, e) in ds.inputs.iter().zip(err) {
                    let p = zoo::softmax(&x.tr_mul(z), t);
                    let h = x * &p;
                    gv.ger(1.0 / n, e, &h, 1.0);
                    let w = x.tr_mul(&v.tr_mul(e));
                    let pw = p.dot(&w);
                    let s = p.zip_map(&w, |pk, wk| t * pk * (wk - pw));
                    gz.gemv(1.0 / n, x, &s, 1.0);
                }
                FactorParams::Head { v: gv, z: gz }
            })
            .collect(),
    }
}

/// Gradient (a subgradient at the non-smooth points) of `theta`.
pub fn theta_gradient(family: &Family, w: &FactorParams) -> FactorParams {
    let unit = |x: &DVector<f64>| {
        let n = x.norm();
        if n > 0.0 {
            x / n
        } else {
            DVector::zeros(x.len())
        }
    };
    match (family, w) {
        (Family::MatrixSensing, FactorParams::Pair { u, v }) => {
            let (nu, nv) = (u.norm(), v.norm());
            if nu == 0.0 || nv == 0.0 {
                return w.zeros_like();
            }
            FactorParams::Pair { u: unit(u) * nv, v: unit(v) * nu }
        }
        (Family::StructuredMatrixSensing { gauge }, FactorParams::Pair { u, v }) => {
            let (gu, nv) = (zoo::gauge_value(*gauge, u), v.norm());
            if gu == 0.0 || nv == 0.0 {
                return w.zeros_like();
            }
            FactorParams::Pair { u: zoo::gauge_subgradient(*gauge, u) * nv, v: unit(v) * gu }
        }
        (Family::TwoLayerLinear | Family::TwoLayerRelu, FactorParams::Pair { .. }) => w.clone(),
        (Family::MultiHeadAttention { .. }, FactorParams::Head { v, z }) => {
            let nv = v.norm();
            let gv = if nv > 0.0 { v / nv } else { DMatrix::zeros(v.nrows(), v.ncols()) };
            FactorParams::Head { v: gv, z: DVector::zeros(z.len()) }
        }
        _ => panic!("factor block kind does not match family {}", family.name()),
    }
}

fn check_finite_blocks(g: &[FactorParams]) -> Result<()> {
    if g.iter().all(FactorParams::is_finite) {
        Ok(())
    } else {
        Err(Error::NonFinite { what: "gradient", sample: None })
    }
}

/// Objective value and gradient blocks shaped like the factors.
pub fn objective_and_gradient(ds: &Dataset, model: &ParallelModel) -> Result<(f64, Vec<FactorParams>)> {
    evaluate(ds, model).map(|(f, g, _)| (f, g))
}

/// Objective, gradient and the residuals `r_i` they were computed from.
pub(crate) fn evaluate(ds: &Dataset, model: &ParallelModel) -> Result<(f64, Vec<FactorParams>, Vec<DVector<f64>>)> {
    let r = residuals(ds, model)?;
    let value = loss_from_residuals(&r) + model.lambda * theta_total(model)?;
    if !value.is_finite() {
        return Err(Error::NonFinite { what: "objective", sample: None });
    }
    let err: Vec<DVector<f64>> = r.iter().map(|x| -x).collect();
    let mut g = loss_gradient(ds, model, &err);
    for (gj, w) in g.iter_mut().zip(&model.factors) {
        *gj = gj.add_scaled(model.lambda, &theta_gradient(&model.family, w));
    }
    check_finite_blocks(&g)?;
    Ok((value, g, r))
}

pub fn gradient(ds: &Dataset, model: &ParallelModel) -> Result<Vec<FactorParams>> {
    objective_and_gradient(ds, model).map(|(_, g)| g)
}

/// Per-factor `|(1/(N lambda)) sum_i <r_i, phi(W_j)(X_i)> - theta(W_j)|`.
pub fn stationarity_residuals(ds: &Dataset, model: &ParallelModel) -> Result<Vec<f64>> {
    let r = residuals(ds, model)?;
    stationarity_from_residuals(ds, model, &r)
}

pub(crate) fn stationarity_from_residuals(ds: &Dataset, model: &ParallelModel, r: &[DVector<f64>]) -> Result<Vec<f64>> {
    let scale = 1.0 / (ds.len() as f64 * model.lambda);
    model
        .factors
        .iter()
        .map(|f| {
            let corr: f64 = ds.inputs.iter().zip(r).map(|(x, ri)| ri.dot(&zoo::factor_output(&model.family, f, x))).sum();
            let rho = (scale * corr - zoo::factor_theta(&model.family, f)?).abs();
            if rho.is_finite() {
                Ok(rho)
            } else {
                Err(Error::NonFinite { what: "stationarity residual", sample: None })
            }
        })
        .collect()
}
