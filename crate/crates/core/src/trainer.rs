//! Gradient descent to first-order points and the width-growing meta-trainer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, blocks_dot, Dataset, FactorParams, ParallelModel, TraceRow, TrainTrace, WidthEvent};
use crate::polar::{self, PolarCertificate, PolarOptions, Verdict};
use crate::zoo::{self, Dims, Family};

const MAX_HALVINGS: usize = 60;
const STEP_MIN: f64 = 1e-12;
const STEP_MAX: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub max_iterations: usize,
    pub grad_tol: f64,
    pub initial_step: f64,
    pub backtrack: f64,
    pub armijo: f64,
    pub max_width: usize,
    pub polar_tau: f64,
    /// `theta` of a factor appended during growth.
    pub growth_scale: f64,
    /// `theta` of each factor of the initial random model.
    pub init_scale: f64,
    pub seed: u64,
    pub polar_restarts: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            max_iterations: 20_000,
            grad_tol: 1e-9,
            initial_step: 1.0,
            backtrack: 0.5,
            armijo: 1e-4,
            max_width: 8,
            polar_tau: polar::DEFAULT_TAU,
            growth_scale: 1e-4,
            init_scale: 1e-4,
            seed: 0,
            polar_restarts: 32,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("grad_tol", self.grad_tol),
            ("initial_step", self.initial_step),
            ("armijo", self.armijo),
            ("polar_tau", self.polar_tau),
            ("growth_scale", self.growth_scale),
            ("init_scale", self.init_scale),
        ];
        for (name, v) in pos {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Argument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::Argument(format!("backtrack factor must lie in (0, 1), got {}", self.backtrack)));
        }
        if self.max_width == 0 {
            return Err(Error::Argument("max width must be at least 1".into()));
        }
        Ok(())
    }

    pub fn polar_options(&self) -> PolarOptions {
        PolarOptions { restarts: self.polar_restarts.max(1), tau: self.polar_tau, seed: self.seed ^ 0x501A, ..PolarOptions::default() }
    }
}

fn project_all(x: Vec<FactorParams>) -> Vec<FactorParams> {
    x.into_iter().map(FactorParams::project).collect()
}

/// Norm of the projected-gradient map; the plain gradient norm for pair factors.
fn stationarity_norm(x: &[FactorParams], g: &[FactorParams]) -> f64 {
    x.iter()
        .zip(g)
        .map(|(w, gw)| match (w, gw) {
            (FactorParams::Head { z, .. }, FactorParams::Head { v: gv, z: gz }) => {
                let zp = FactorParams::Head { v: gv.clone(), z: z - gz }.project();
                let FactorParams::Head { z: zp, .. } = zp else { unreachable!() };
                gv.norm_squared() + (z - zp).norm_squared()
            }
            _ => gw.norm_squared(),
        })
        .sum::<f64>()
        .sqrt()
}

fn max_or_zero(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

/// Gradient descent with Armijo backtracking from a Barzilai-Borwein trial step.
/// Attention `z` blocks are projected onto the unit ball after every step.
pub fn descend(ds: &Dataset, model: &ParallelModel, opts: &TrainOptions) -> Result<(ParallelModel, TrainTrace)> {
    opts.validate()?;
    if model.width() == 0 {
        return Err(Error::Argument("descent needs a model of width at least 1".into()));
    }
    let mut cur = model.with_factors(project_all(model.factors.clone()));
    let (mut f, mut g, mut r) = model::evaluate(ds, &cur)?;
    let mut gnorm = stationarity_norm(&cur.factors, &g);
    let mut trace = TrainTrace::default();
    let resid = |m: &ParallelModel, r: &[nalgebra::DVector<f64>]| model::stationarity_from_residuals(ds, m, r).map(|v| max_or_zero(&v));
    trace.iterates.push(TraceRow { iteration: 0, objective: f, grad_norm: gnorm, max_residual: resid(&cur, &r)? });

    let mut step = opts.initial_step;
    for k in 1..=opts.max_iterations {
        if gnorm <= opts.grad_tol {
            return Ok((cur, trace));
        }
        let mut t = step;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<FactorParams> = cur.factors.iter().zip(&g).map(|(w, gw)| w.add_scaled(-t, gw).project()).collect();
            let moved: Vec<FactorParams> = cur.factors.iter().zip(&trial).map(|(w, wt)| w.add_scaled(-1.0, wt)).collect();
            let decrease = blocks_dot(&g, &moved);
            let cand = cur.with_factors(trial);
            // Evaluation errors on a trial point (e.g. overflow) count as a failed trial.
            if let Ok(fc) = model::objective(ds, &cand) {
                if fc <= f - opts.armijo * decrease + 4.0 * f64::EPSILON * f.abs() {
                    accepted = Some((cand, fc));
                    break;
                }
            }
            t *= opts.backtrack;
        }
        let Some((next, _)) = accepted else {
            return Err(Error::StalledDescent { iteration: k, halvings: MAX_HALVINGS, trace: Box::new(trace) });
        };
        let (fn_, gn, rn) = model::evaluate(ds, &next)?;
        let s: Vec<FactorParams> = next.factors.iter().zip(&cur.factors).map(|(a, b)| a.add_scaled(-1.0, b)).collect();
        let y: Vec<FactorParams> = gn.iter().zip(&g).map(|(a, b)| a.add_scaled(-1.0, b)).collect();
        let sy = blocks_dot(&s, &y);
        let ss = blocks_dot(&s, &s);
        step = if sy > 0.0 { (ss / sy).clamp(STEP_MIN, STEP_MAX) } else { (2.0 * t).clamp(STEP_MIN, STEP_MAX) };

        cur = next;
        f = fn_;
        g = gn;
        r = rn;
        gnorm = stationarity_norm(&cur.factors, &g);
        trace.iterates.push(TraceRow { iteration: k, objective: f, grad_norm: gnorm, max_residual: resid(&cur, &r)? });
    }
    trace.hit_iteration_cap = gnorm > opts.grad_tol;
    Ok((cur, trace))
}

/// Append `witness` rescaled to `theta = scale`.
pub fn grow_width(model: &ParallelModel, witness: &FactorParams, scale: f64) -> Result<ParallelModel> {
    if !(scale.is_finite() && scale >= 0.0) {
        return Err(Error::Argument(format!("growth scale must be non-negative, got {scale}")));
    }
    let th = zoo::factor_theta(&model.family, witness).map_err(|e| Error::Argument(format!("infeasible witness: {e}")))?;
    if th > 1.0 + 1e-9 {
        return Err(Error::Argument(format!("witness has theta = {th} > 1")));
    }
    let born = if scale == 0.0 { zoo::scale_homogeneous(witness, 0.0) } else { zoo::rescale_to_theta(&model.family, witness, scale)? };
    let mut factors = model.factors.clone();
    factors.push(born);
    ParallelModel::new(model.family, model.dims, factors, model.lambda)
}

/// Descend, evaluate the polar, grow with its witness while the witness is a
/// descent direction, stop at `max_width`.
pub fn meta_train(ds: &Dataset, family: Family, dims: Dims, lambda: f64, opts: &TrainOptions) -> Result<(ParallelModel, PolarCertificate, TrainTrace)> {
    opts.validate()?;
    let popts = opts.polar_options();
    let mut model = zoo::make_model(family, dims, 1, opts.init_scale, lambda, opts.seed)?;
    let mut trace = TrainTrace::default();
    let mut offset = 0;
    loop {
        let (next, t) = descend(ds, &model, opts)?;
        model = next;
        for mut row in t.iterates {
            row.iteration += offset;
            trace.iterates.push(row);
        }
        trace.hit_iteration_cap |= t.hit_iteration_cap;
        let last = trace.last_iteration().unwrap_or(0);
        offset = last + 1;

        let cert = polar::polar(ds, &model, &popts)?;
        if cert.verdict != Verdict::NotOptimal || cert.witness_value() <= 1.0 + opts.polar_tau {
            return Ok((model, cert, trace));
        }
        if model.width() >= opts.max_width {
            trace.hit_width_cap = true;
            return Ok((model, cert, trace));
        }
        model = grow_width(&model, &cert.witness, opts.growth_scale)?;
        trace.width_events.push(WidthEvent { iteration: last, width: model.width(), polar: cert.value });
    }
}

/// Fixed-width descent from a small random start, no growth.
pub fn train_fixed_width(ds: &Dataset, family: Family, dims: Dims, width: usize, lambda: f64, opts: &TrainOptions) -> Result<(ParallelModel, TrainTrace)> {
    let model = zoo::make_model(family, dims, width, opts.init_scale, lambda, opts.seed)?;
    descend(ds, &model, opts)
}
