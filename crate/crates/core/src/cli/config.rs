//! Flat dotted-key run configuration. Resolution order: built-in defaults,
//! then the JSON file, then command-line flags; the seed falls back to
//! `HOMOGNET_SEED` when neither file nor flag sets it.

use std::path::Path;

use serde_json::{Map, Value};

use crate::experiments::ExperimentConfig;
use crate::trainer::TrainOptions;
use crate::zoo::{Dims, Family, GaugeSpec, TeacherSpec};
use crate::rng;

pub const SEED_ENV: &str = "HOMOGNET_SEED";

/// Bad user input; maps to exit status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub family: String,
    pub m: usize,
    pub n: usize,
    pub rank: usize,
    pub n_samples: usize,
    pub lambda: f64,
    pub seed: Option<u64>,
    pub sigma: f64,
    pub tokens: usize,
    pub temperature: f64,
    pub gauge_s: f64,
    pub delta: f64,
    pub g_radius: Option<f64>,
    pub width_max: usize,
    pub max_iterations: usize,
    pub grad_tol: f64,
    pub polar_tau: f64,
    pub growth_scale: f64,
    pub init_scale: f64,
    pub polar_restarts: usize,
    pub widths: Vec<usize>,
    pub n_grid: Vec<usize>,
    pub repetitions: usize,
    pub heldout: Option<usize>,
    pub out: String,
    pub threads: Option<usize>,
    pub model: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainOptions::default();
        RunConfig {
            family: "matrix-sensing".into(),
            m: 6,
            n: 6,
            rank: 2,
            n_samples: 120,
            lambda: 1e-3,
            seed: None,
            sigma: 0.0,
            tokens: 4,
            temperature: 1.0,
            gauge_s: 2.0,
            delta: 0.05,
            g_radius: None,
            width_max: t.max_width,
            max_iterations: t.max_iterations,
            grad_tol: t.grad_tol,
            polar_tau: t.polar_tau,
            growth_scale: t.growth_scale,
            init_scale: t.init_scale,
            polar_restarts: t.polar_restarts,
            widths: vec![1, 2, 4, 8, 16, 32],
            n_grid: vec![250, 500, 1000, 2000, 4000],
            repetitions: 5,
            heldout: None,
            out: "out".into(),
            threads: None,
            model: None,
        }
    }
}

fn want_usize(key: &str, v: &Value) -> Result<usize, UsageError> {
    v.as_u64().map(|x| x as usize).ok_or_else(|| UsageError(format!("config key `{key}` must be a non-negative integer")))
}

fn want_f64(key: &str, v: &Value) -> Result<f64, UsageError> {
    v.as_f64().ok_or_else(|| UsageError(format!("config key `{key}` must be a number")))
}

fn want_list(key: &str, v: &Value) -> Result<Vec<usize>, UsageError> {
    v.as_array()
        .ok_or_else(|| UsageError(format!("config key `{key}` must be a list of integers")))?
        .iter()
        .map(|x| want_usize(key, x))
        .collect()
}

fn opt<T>(v: &Value, f: impl FnOnce(&Value) -> Result<T, UsageError>) -> Result<Option<T>, UsageError> {
    if v.is_null() {
        Ok(None)
    } else {
        f(v).map(Some)
    }
}

impl RunConfig {
    /// Apply one flat key; unknown keys are a usage error.
    pub fn set(&mut self, key: &str, v: &Value) -> Result<(), UsageError> {
        match key {
            "family" => self.family = v.as_str().ok_or_else(|| UsageError("config key `family` must be a string".into()))?.to_string(),
            "m" => self.m = want_usize(key, v)?,
            "n" => self.n = want_usize(key, v)?,
            "rank" => self.rank = want_usize(key, v)?,
            "N" => self.n_samples = want_usize(key, v)?,
            "lambda" => self.lambda = want_f64(key, v)?,
            "seed" => self.seed = opt(v, |x| x.as_u64().ok_or_else(|| UsageError("config key `seed` must be a non-negative integer".into())))?,
            "sigma" => self.sigma = want_f64(key, v)?,
            "tokens" => self.tokens = want_usize(key, v)?,
            "temperature" => self.temperature = want_f64(key, v)?,
            "gauge.s" => self.gauge_s = want_f64(key, v)?,
            "delta" => self.delta = want_f64(key, v)?,
            "g_radius" => self.g_radius = opt(v, |x| want_f64(key, x))?,
            "train.width_max" => self.width_max = want_usize(key, v)?,
            "train.max_iterations" => self.max_iterations = want_usize(key, v)?,
            "train.grad_tol" => self.grad_tol = want_f64(key, v)?,
            "train.polar_tau" => self.polar_tau = want_f64(key, v)?,
            "train.growth_scale" => self.growth_scale = want_f64(key, v)?,
            "train.init_scale" => self.init_scale = want_f64(key, v)?,
            "train.polar_restarts" => self.polar_restarts = want_usize(key, v)?,
            "sweep.widths" => self.widths = want_list(key, v)?,
            "sweep.n_grid" => self.n_grid = want_list(key, v)?,
            "sweep.repetitions" => self.repetitions = want_usize(key, v)?,
            "sweep.heldout" => self.heldout = opt(v, |x| want_usize(key, x))?,
            "out" => self.out = v.as_str().ok_or_else(|| UsageError("config key `out` must be a string".into()))?.to_string(),
            "threads" => self.threads = opt(v, |x| want_usize(key, x))?,
            "model" => self.model = opt(v, |x| x.as_str().map(str::to_string).ok_or_else(|| UsageError("config key `model` must be a string".into())))?,
            other => return Err(UsageError(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn apply_map(&mut self, map: &Map<String, Value>) -> Result<(), UsageError> {
        for (k, v) in map {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), UsageError> {
        let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let v: Value = serde_json::from_str(&text).map_err(|e| UsageError(format!("config {} is not valid JSON: {e}", path.display())))?;
        let map = v.as_object().ok_or_else(|| UsageError(format!("config {} must be a JSON object", path.display())))?;
        self.apply_map(map)
    }

    /// Flat map with every resolved value, defaults included.
    pub fn to_map(&self) -> Map<String, Value> {
        let mut m = Map::new();
        let mut put = |k: &str, v: Value| {
            m.insert(k.to_string(), v);
        };
        put("family", self.family.clone().into());
        put("m", self.m.into());
        put("n", self.n.into());
        put("rank", self.rank.into());
        put("N", self.n_samples.into());
        put("lambda", self.lambda.into());
        put("seed", self.seed.into());
        put("sigma", self.sigma.into());
        put("tokens", self.tokens.into());
        put("temperature", self.temperature.into());
        put("gauge.s", self.gauge_s.into());
        put("delta", self.delta.into());
        put("g_radius", self.g_radius.into());
        put("train.width_max", self.width_max.into());
        put("train.max_iterations", self.max_iterations.into());
        put("train.grad_tol", self.grad_tol.into());
        put("train.polar_tau", self.polar_tau.into());
        put("train.growth_scale", self.growth_scale.into());
        put("train.init_scale", self.init_scale.into());
        put("train.polar_restarts", self.polar_restarts.into());
        put("sweep.widths", self.widths.clone().into());
        put("sweep.n_grid", self.n_grid.clone().into());
        put("sweep.repetitions", self.repetitions.into());
        put("sweep.heldout", self.heldout.into());
        put("out", self.out.clone().into());
        put("threads", self.threads.into());
        put("model", self.model.clone().into());
        m
    }

    /// The keys that affect results; output location and thread count are left
    /// out so result files do not depend on where or how a run executed.
    pub fn result_map(&self) -> Map<String, Value> {
        let mut m = self.to_map();
        for k in ["out", "threads", "model"] {
            m.remove(k);
        }
        m
    }

    /// Fill the seed from the environment if still unset.
    pub fn resolve_seed(&mut self) -> Result<u64, UsageError> {
        if self.seed.is_none() {
            if let Ok(s) = std::env::var(SEED_ENV) {
                let v = s.trim().parse::<u64>().map_err(|_| UsageError(format!("{SEED_ENV} must be a non-negative integer, got `{s}`")))?;
                self.seed = Some(v);
            }
        }
        Ok(*self.seed.get_or_insert(0))
    }

    pub fn family(&self) -> Result<Family, UsageError> {
        let f = match self.family.as_str() {
            "matrix-sensing" => Family::MatrixSensing,
            "structured-matrix-sensing" => Family::StructuredMatrixSensing { gauge: GaugeSpec::SparseBall { s: self.gauge_s } },
            "two-layer-linear" => Family::TwoLayerLinear,
            "two-layer-relu" => Family::TwoLayerRelu,
            "multi-head-attention" => Family::MultiHeadAttention { temperature: self.temperature, tokens: self.tokens },
            other => return Err(UsageError(format!("unknown family `{other}`"))),
        };
        f.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(f)
    }

    pub fn dims(&self) -> Result<Dims, UsageError> {
        if self.m == 0 || self.n == 0 {
            return Err(UsageError("dimensions m and n must be positive".into()));
        }
        Ok(Dims::new(self.m, self.n))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            max_iterations: self.max_iterations,
            grad_tol: self.grad_tol,
            max_width: self.width_max,
            polar_tau: self.polar_tau,
            growth_scale: self.growth_scale,
            init_scale: self.init_scale,
            polar_restarts: self.polar_restarts,
            seed: self.seed(),
            ..TrainOptions::default()
        }
    }

    pub fn teacher_seed(&self) -> u64 {
        rng::derive_seed(self.seed(), 1)
    }

    pub fn data_seed(&self) -> u64 {
        rng::derive_seed(self.seed(), 2)
    }

    pub fn teacher(&self) -> crate::Result<TeacherSpec> {
        let fam = self.family().map_err(|e| crate::Error::Argument(e.0))?;
        let dims = self.dims().map_err(|e| crate::Error::Argument(e.0))?;
        TeacherSpec::random(fam, dims, self.rank, self.sigma, self.teacher_seed())
    }

    pub fn experiment(&self) -> crate::Result<ExperimentConfig> {
        let family = self.family().map_err(|e| crate::Error::Argument(e.0))?;
        let dims = self.dims().map_err(|e| crate::Error::Argument(e.0))?;
        Ok(ExperimentConfig {
            family,
            dims,
            teacher: self.teacher()?,
            n_samples: self.n_samples,
            heldout: self.heldout,
            lambda: self.lambda,
            delta: self.delta,
            seed: self.seed(),
            widths: self.widths.clone(),
            n_grid: self.n_grid.clone(),
            repetitions: self.repetitions,
            train: self.train_options(),
        })
    }
}
