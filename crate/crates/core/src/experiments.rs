//! Teacher data, Monte-Carlo generalization gaps, the convex nuclear-norm
//! oracle, the sandwich check and the width / sample-size sweeps.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds;
use crate::error::{Error, Result};
use crate::linalg::{self, nuclear_norm_svd};
use crate::model::{self, Dataset, ParallelModel, SamplingMeta};
use crate::polar::{self, Verdict};
use crate::rng::{self, Rng64};
use crate::trainer::{self, TrainOptions};
use crate::zoo::{self, Dims, Family, TeacherSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub family: Family,
    pub dims: Dims,
    pub teacher: TeacherSpec,
    #[serde(rename = "N")]
    pub n_samples: usize,
    /// Held-out sample count; `None` means `max(10 N, 1e5)` capped at `1e6`.
    pub heldout: Option<usize>,
    pub lambda: f64,
    pub delta: f64,
    pub seed: u64,
    pub widths: Vec<usize>,
    pub n_grid: Vec<usize>,
    pub repetitions: usize,
    pub train: TrainOptions,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.teacher.validate()?;
        if self.teacher.family != self.family || self.teacher.dims != self.dims {
            return Err(Error::Argument("teacher does not match the configured family and dims".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Argument("repetitions must be at least 1".into()));
        }
        if let Some(m) = self.heldout {
            if m < self.n_samples {
                return Err(Error::Argument(format!("held-out size {m} is below N = {}", self.n_samples)));
            }
        }
        if !(self.lambda > 0.0) {
            return Err(Error::Argument(format!("lambda must be positive, got {}", self.lambda)));
        }
        self.train.validate()
    }

    pub fn heldout_size(&self, n: usize) -> usize {
        self.heldout.unwrap_or_else(|| (10 * n).clamp(100_000, 1_000_000)).max(n)
    }
}

/// Draw one `(X, y)` pair from the teacher.
fn sample_pair(teacher: &TeacherSpec, r: &mut Rng64) -> (DMatrix<f64>, DVector<f64>) {
    let dims = teacher.dims;
    let fam = teacher.family;
    let (rows, cols) = fam.input_shape(dims);
    let x_std = (1.0 / (rows * cols) as f64).sqrt();
    let x = rng::gaussian_mat(r, rows, cols, x_std);
    let ny = fam.output_dim(dims);
    let noise_std = if fam.is_sensing() { teacher.sigma } else { teacher.sigma / (ny as f64).sqrt() };
    let y = teacher.apply(&x) + rng::gaussian_vec(r, ny, noise_std);
    (x, y)
}

/// `N` Gaussian samples with unit-second-moment inputs and teacher targets.
pub fn generate(family: &Family, teacher: &TeacherSpec, n: usize, seed: u64) -> Result<Dataset> {
    teacher.validate()?;
    if teacher.family != *family {
        return Err(Error::Argument(format!("teacher is {}, requested {}", teacher.family.name(), family.name())));
    }
    let mut r = rng::rng(seed);
    let (inputs, targets): (Vec<_>, Vec<_>) = (0..n).map(|_| sample_pair(teacher, &mut r)).unzip();
    let meta = SamplingMeta { sigma_x: 1.0, sigma_noise: teacher.sigma, teacher: Some(teacher.clone()), seed: Some(seed) };
    Dataset::new(*family, teacher.dims, inputs, targets, meta)
}

/// Data term of the objective on `count` fresh samples, streamed without storing them.
pub fn heldout_loss(teacher: &TeacherSpec, model: &ParallelModel, count: usize, seed: u64) -> Result<f64> {
    if count == 0 {
        return Err(Error::Argument("held-out size must be positive".into()));
    }
    let mut r = rng::rng(seed);
    let mut acc = 0.0;
    for i in 0..count {
        let (x, y) = sample_pair(teacher, &mut r);
        let e = y - model::predict(model, &x)?;
        let s = e.norm_squared();
        if !s.is_finite() {
            return Err(Error::NonFinite { what: "held-out prediction", sample: Some(i) });
        }
        acc += s;
    }
    Ok(acc / (2.0 * count as f64))
}

/// `|loss(heldout) - loss(train)|` for explicit data sets.
pub fn gap_against(train: &Dataset, heldout: &Dataset, model: &ParallelModel) -> Result<f64> {
    Ok((model::loss(heldout, model)? - model::loss(train, model)?).abs())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    pub gap: f64,
    pub std_error: f64,
    pub train_loss: f64,
    pub heldout_loss: f64,
    pub heldout_size: usize,
    pub repetitions: usize,
    pub bound_total: Option<f64>,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Held-out estimate of the generalization gap, repeated over fresh draws.
/// The regularizer is common to both objectives and cancels.
pub fn monte_carlo_gap(config: &ExperimentConfig, train: &Dataset, model: &ParallelModel) -> Result<GapEstimate> {
    config.validate()?;
    let train_loss = model::loss(train, model)?;
    let m = config.heldout_size(train.len());
    let losses: Vec<f64> = (0..config.repetitions)
        .into_par_iter()
        .map(|k| heldout_loss(&config.teacher, model, m, rng::derive_seed(config.seed, 0x4E1D_0000 + k as u64)))
        .collect::<Result<_>>()?;
    let gaps: Vec<f64> = losses.iter().map(|l| (l - train_loss).abs()).collect();
    let (gap, std_error) = mean_se(&gaps);
    let (heldout_loss, _) = mean_se(&losses);
    Ok(GapEstimate { gap, std_error, train_loss, heldout_loss, heldout_size: m, repetitions: config.repetitions, bound_total: None })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexOracle {
    pub value: f64,
    #[serde(with = "crate::serde_util::matrix")]
    pub m_hat: DMatrix<f64>,
    pub nuclear_norm: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Singular-value soft thresholding at level `tau`.
pub fn svt(a: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let s = svd.singular_values.map(|x| (x - tau).max(0.0));
    let u = svd.u.expect("left vectors requested");
    let vt = svd.v_t.expect("right vectors requested");
    &u * DMatrix::from_diagonal(&s) * vt
}

/// Proximal gradient on `(1/2N) sum_i (y_i - <M, X_i>)^2 + lambda ||M||_*` with
/// step `1 / L`, `L` the top eigenvalue of `M -> (1/N) sum_i <M, X_i> X_i`.
pub fn convex_oracle_sensing(ds: &Dataset, lambda: f64, iters: usize) -> Result<ConvexOracle> {
    if ds.family != Family::MatrixSensing {
        return Err(Error::Argument(format!("convex oracle is only available for matrix sensing, got {}", ds.family.name())));
    }
    if !(lambda > 0.0) {
        return Err(Error::Argument(format!("lambda must be positive, got {lambda}")));
    }
    let (m, n) = (ds.dims.m, ds.dims.n);
    let nn = ds.len() as f64;
    let ys: Vec<f64> = ds.targets.iter().map(|y| y[0]).collect();
    let grad = |mm: &DMatrix<f64>| {
        let mut g = DMatrix::zeros(m, n);
        for (x, y) in ds.inputs.iter().zip(&ys) {
            g += x * ((mm.dot(x) - y) / nn);
        }
        g
    };
    let (l_hat, _) = linalg::top_eigenvalue_psd(
        |v| {
            let mm = DMatrix::from_column_slice(m, n, v.as_slice());
            let mut out = DMatrix::zeros(m, n);
            for x in &ds.inputs {
                out += x * (mm.dot(x) / nn);
            }
            DVector::from_column_slice(out.as_slice())
        },
        m * n,
        1e-12,
        100_000,
    );
    if !(l_hat > 0.0) {
        return Err(Error::NonFinite { what: "measurement operator norm", sample: None });
    }
    let step = 1.0 / (l_hat * (1.0 + 1e-6));
    let mut mm = DMatrix::zeros(m, n);
    let mut residual = f64::INFINITY;
    let mut it = 0;
    while it < iters {
        it += 1;
        let next = svt(&(&mm - grad(&mm) * step), step * lambda);
        residual = (&next - &mm).norm() / mm.norm().max(1.0);
        mm = next;
        if residual <= 1e-8 {
            break;
        }
    }
    let loss: f64 = ds.inputs.iter().zip(&ys).map(|(x, y)| (y - mm.dot(x)).powi(2)).sum::<f64>() / (2.0 * nn);
    let nuc = nuclear_norm_svd(&mm);
    Ok(ConvexOracle { value: loss + lambda * nuc, m_hat: mm, nuclear_norm: nuc, residual, iterations: it, converged: residual <= 1e-6 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub convex_value: f64,
    pub objective: f64,
    pub upper: f64,
    pub polar: f64,
    pub omega: f64,
    pub slack: f64,
    pub lower_holds: bool,
    pub upper_holds: bool,
    pub oracle_converged: bool,
}

impl SandwichReport {
    pub fn passed(&self) -> bool {
        self.lower_holds && self.upper_holds
    }
}

/// `C(f*) <= NC(model) <= C(f*) + lambda Omega(f*) (polar - 1)_+`, up to slack
/// `1e-4 (1 + |NC|)`.
pub fn sandwich_check(ds: &Dataset, model: &ParallelModel, lambda: f64) -> Result<SandwichReport> {
    if model.family != Family::MatrixSensing {
        return Err(Error::Argument("sandwich check is only available for matrix sensing".into()));
    }
    if model.width() == 0 {
        return Err(Error::Argument("sandwich check needs a stationary model of width at least 1".into()));
    }
    if lambda != model.lambda {
        return Err(Error::Argument(format!("lambda {lambda} differs from the model's training lambda {}", model.lambda)));
    }
    let worst = model::stationarity_residuals(ds, model)?.into_iter().fold(0.0, f64::max);
    if worst > 1e-3 {
        return Err(Error::Constraint(format!("model is not stationary: max residual {worst:.3e} > 1e-3")));
    }
    let oracle = convex_oracle_sensing(ds, lambda, 200_000)?;
    let nc = model::objective(ds, model)?;
    let cert = polar::polar_exact_sensing(ds, model, lambda)?;
    let upper = oracle.value + lambda * oracle.nuclear_norm * (cert.value - 1.0).max(0.0);
    let slack = 1e-4 * (1.0 + nc.abs());
    let report = SandwichReport {
        convex_value: oracle.value,
        objective: nc,
        upper,
        polar: cert.value,
        omega: oracle.nuclear_norm,
        slack,
        lower_holds: oracle.value <= nc + slack,
        upper_holds: nc <= upper + slack,
        oracle_converged: oracle.converged,
    };
    if report.passed() {
        Ok(report)
    } else {
        Err(Error::SandwichViolated(Box::new(report)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzRow {
    pub width: usize,
    pub lipschitz_bound: f64,
    pub teacher_bound: f64,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub error: Option<String>,
}

/// Fixed-width training at each width on one shared dataset; records the
/// Lipschitz upper bound of the converged model.
pub fn lipschitz_sweep(family: &Family, teacher: &TeacherSpec, widths: &[usize], seed: u64, n_samples: usize, lambda: f64, opts: &TrainOptions) -> Result<Vec<LipschitzRow>> {
    if widths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument("widths must be strictly ascending".into()));
    }
    let ds = generate(family, teacher, n_samples, seed)?;
    let teacher_bound = teacher.lipschitz_bound();
    let rows = widths
        .par_iter()
        .enumerate()
        .map(|(k, &w)| {
            let o = TrainOptions { seed: rng::derive_seed(seed, k as u64 + 1), ..*opts };
            match trainer::train_fixed_width(&ds, *family, teacher.dims, w, lambda, &o) {
                Ok((m, t)) => {
                    let last = t.iterates.last().expect("trace has an initial row");
                    LipschitzRow {
                        width: w,
                        lipschitz_bound: zoo::lipschitz_upper_bound(&m),
                        teacher_bound,
                        objective: last.objective,
                        grad_norm: last.grad_norm,
                        iterations: last.iteration,
                        error: t.hit_iteration_cap.then(|| "iteration cap".to_string()),
                    }
                }
                Err(e) => LipschitzRow {
                    width: w,
                    lipschitz_bound: f64::NAN,
                    teacher_bound,
                    objective: f64::NAN,
                    grad_norm: f64::NAN,
                    iterations: 0,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    #[serde(rename = "N")]
    pub n_samples: usize,
    pub mean_gap: f64,
    pub std_error: f64,
    pub bound_total: f64,
    pub mean_width: f64,
    pub certified: usize,
    pub failed: usize,
}

struct RateCell {
    gap: f64,
    bound: f64,
    width: usize,
    certified: bool,
}

fn rate_cell(config: &ExperimentConfig, n: usize, seed: u64) -> Result<RateCell> {
    let ds = generate(&config.family, &config.teacher, n, seed)?;
    let opts = TrainOptions { seed, ..config.train };
    let (model, cert, _) = trainer::meta_train(&ds, config.family, config.dims, config.lambda, &opts)?;
    let train_loss = model::loss(&ds, &model)?;
    let held = heldout_loss(&config.teacher, &model, config.heldout_size(n), rng::derive_seed(seed, 0x4E1D))?;
    let report = bounds::bound_report(&config.family, &ds, &model, &cert, config.delta, None)?;
    let n_y = config.family.output_dim(config.dims) as f64;
    Ok(RateCell {
        gap: (held - train_loss).abs() / n_y,
        bound: report.total,
        width: model.width(),
        certified: matches!(cert.verdict, Verdict::CertifiedGlobal | Verdict::HeuristicStationaryGlobal),
    })
}

/// Per sample size: fresh data, meta-training, held-out gap and bound, averaged
/// over repetitions. Gaps are divided by `n_Y` to match the bound's normalization.
pub fn rate_sweep(config: &ExperimentConfig) -> Result<Vec<RateRow>> {
    config.validate()?;
    let grid = &config.n_grid;
    if grid.len() < 4 || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument("N grid must be strictly ascending with at least 4 points".into()));
    }
    let cells: Vec<(usize, usize)> = grid.iter().enumerate().flat_map(|(i, _)| (0..config.repetitions).map(move |r| (i, r))).collect();
    let results: Vec<Result<RateCell>> = cells
        .par_iter()
        .map(|&(i, r)| rate_cell(config, grid[i], rng::derive_seed(config.seed, (i * 1000 + r) as u64)))
        .collect();
    let mut rows = Vec::with_capacity(grid.len());
    for (i, &n) in grid.iter().enumerate() {
        let ok: Vec<&RateCell> = cells.iter().zip(&results).filter(|((ci, _), _)| *ci == i).filter_map(|(_, r)| r.as_ref().ok()).collect();
        let failed = config.repetitions - ok.len();
        let gaps: Vec<f64> = ok.iter().map(|c| c.gap).collect();
        let (mean_gap, std_error) = if gaps.is_empty() { (f64::NAN, f64::NAN) } else { mean_se(&gaps) };
        let k = ok.len().max(1) as f64;
        rows.push(RateRow {
            n_samples: n,
            mean_gap,
            std_error,
            bound_total: if ok.is_empty() { f64::NAN } else { ok.iter().map(|c| c.bound).sum::<f64>() / k },
            mean_width: if ok.is_empty() { f64::NAN } else { ok.iter().map(|c| c.width as f64).sum::<f64>() / k },
            certified: ok.iter().filter(|c| c.certified).count(),
            failed,
        });
    }
    Ok(rows)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// 17 significant digits, so every value round-trips.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub const LIPSCHITZ_HEADER: [&str; 7] = ["width", "lipschitz_bound", "teacher_bound", "objective", "grad_norm", "iterations", "error"];
pub const RATE_HEADER: [&str; 7] = ["N", "mean_gap", "std_error", "bound_total", "mean_width", "certified", "failed"];

pub fn write_lipschitz_csv<W: Write>(w: W, rows: &[LipschitzRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(LIPSCHITZ_HEADER)?;
    for r in rows {
        out.write_record([
            r.width.to_string(),
            fmt_f64(r.lipschitz_bound),
            fmt_f64(r.teacher_bound),
            fmt_f64(r.objective),
            fmt_f64(r.grad_norm),
            r.iterations.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_rate_csv<W: Write>(w: W, rows: &[RateRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RATE_HEADER)?;
    for r in rows {
        out.write_record([
            r.n_samples.to_string(),
            fmt_f64(r.mean_gap),
            fmt_f64(r.std_error),
            fmt_f64(r.bound_total),
            fmt_f64(r.mean_width),
            r.certified.to_string(),
            r.failed.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_csv_file<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(std::fs::File) -> Result<()>,
{
    write(std::fs::File::create(path)?)
}
