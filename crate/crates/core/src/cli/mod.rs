//! `homognet` command line: train, certify, bound, sandwich and the two sweeps.
//!
//! Exit status 0 on success, 1 on numeric failure (with `error.json` written to
//! the output directory), 2 on usage errors (nothing written).

pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::bounds;
use crate::error::{Error, Result};
use crate::experiments;
use crate::model::{ParallelModel, TrainTrace};
use crate::polar::{self, PolarCertificate};
use crate::trainer;
use crate::zoo::TeacherSpec;
use config::{RunConfig, UsageError};

#[derive(Parser, Debug)]
#[command(name = "homognet", version, about = "Train, certify and bound parallel positively homogeneous networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Meta-train on teacher data; writes model.json, trace.csv, width_events.csv, certificate.json.
    Train(Common),
    /// Recompute the polar certificate of a trained model; writes certificate.json.
    Certify(Common),
    /// Generalization bound report for a trained model; writes bound.json.
    Bound(Common),
    /// Convex-oracle sandwich check for a matrix-sensing model; writes sandwich.json.
    Sandwich(Common),
    /// Lipschitz bound against width; writes lipschitz.csv.
    SweepLipschitz(Common),
    /// Generalization gap and bound against N; writes rate.csv.
    SweepRate(Common),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Certify(_) => "certify",
            Command::Bound(_) => "bound",
            Command::Sandwich(_) => "sandwich",
            Command::SweepLipschitz(_) => "sweep-lipschitz",
            Command::SweepRate(_) => "sweep-rate",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Train(c) | Command::Certify(c) | Command::Bound(c) | Command::Sandwich(c) | Command::SweepLipschitz(c) | Command::SweepRate(c) => c,
        }
    }
}

#[derive(Args, Debug, Default)]
pub struct Common {
    /// JSON file with flat dotted keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long = "N")]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub tokens: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long = "width-max")]
    pub width_max: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long = "g-radius")]
    pub g_radius: Option<f64>,
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// model.json written by `train`.
    #[arg(long)]
    pub model: Option<String>,
}

impl Common {
    fn overrides(&self) -> Map<String, Value> {
        let mut m = Map::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put("family", self.family.clone().map(Value::from));
        put("m", self.m.map(Value::from));
        put("n", self.n.map(Value::from));
        put("rank", self.rank.map(Value::from));
        put("N", self.n_samples.map(Value::from));
        put("lambda", self.lambda.map(Value::from));
        put("seed", self.seed.map(Value::from));
        put("sigma", self.sigma.map(Value::from));
        put("tokens", self.tokens.map(Value::from));
        put("temperature", self.temperature.map(Value::from));
        put("train.width_max", self.width_max.map(Value::from));
        put("delta", self.delta.map(Value::from));
        put("g_radius", self.g_radius.map(Value::from));
        put("out", self.out.clone().map(Value::from));
        put("threads", self.threads.map(Value::from));
        put("model", self.model.clone().map(Value::from));
        m
    }
}

/// On-disk model: the resolved config it was trained with, the teacher and the factors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub config: Map<String, Value>,
    pub teacher: TeacherSpec,
    pub model: ParallelModel,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config: &'a Map<String, Value>,
    outputs: Vec<String>,
    wall_clock_seconds: f64,
    finished_unix_seconds: u64,
    version: &'static str,
    seed: u64,
}

enum Failure {
    Usage(UsageError),
    Numeric(Error),
}

impl From<UsageError> for Failure {
    fn from(e: UsageError) -> Self {
        Failure::Usage(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Numeric(e)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

fn resolve(cmd: &Command) -> std::result::Result<RunConfig, UsageError> {
    let common = cmd.common();
    let mut cfg = RunConfig::default();
    // certify / bound / sandwich start from the config embedded in the model file.
    let model_path = common.model.clone();
    if let Some(path) = &model_path {
        if !matches!(cmd, Command::Train(_) | Command::SweepLipschitz(_) | Command::SweepRate(_)) {
            let mf = load_model_file(Path::new(path))?;
            cfg.apply_map(&mf.config)?;
        }
    }
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    cfg.apply_map(&common.overrides())?;
    cfg.resolve_seed()?;
    cfg.family()?;
    cfg.dims()?;
    if matches!(cmd, Command::Certify(_) | Command::Bound(_) | Command::Sandwich(_)) && cfg.model.is_none() {
        return Err(UsageError(format!("`{}` needs --model", cmd.name())));
    }
    Ok(cfg)
}

fn load_model_file(path: &Path) -> std::result::Result<ModelFile, UsageError> {
    let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read model {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| UsageError(format!("model {} is malformed: {e}", path.display())))
}

fn write_trace_csv(path: &Path, trace: &TrainTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "objective", "grad_norm", "max_residual"])?;
    for r in &trace.iterates {
        w.write_record([r.iteration.to_string(), experiments::fmt_f64(r.objective), experiments::fmt_f64(r.grad_norm), experiments::fmt_f64(r.max_residual)])?;
    }
    w.flush()?;
    Ok(())
}

fn write_width_csv(path: &Path, trace: &TrainTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "width", "polar"])?;
    for e in &trace.width_events {
        w.write_record([e.iteration.to_string(), e.width.to_string(), experiments::fmt_f64(e.polar)])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CertificateFile<'a> {
    certificate: &'a PolarCertificate,
    width: usize,
    hit_width_cap: bool,
    hit_iteration_cap: bool,
}

fn execute(cmd: &Command, cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let family = cfg.family().map_err(|e| Error::Argument(e.0))?;
    let dims = cfg.dims().map_err(|e| Error::Argument(e.0))?;
    let popts = cfg.train_options().polar_options();
    let load = || -> Result<(ModelFile, crate::model::Dataset)> {
        let path = cfg.model.as_ref().expect("checked during resolution");
        let mf: ModelFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        mf.model.validate()?;
        let ds = experiments::generate(&family, &mf.teacher, cfg.n_samples, cfg.data_seed())?;
        Ok((mf, ds))
    };
    match cmd {
        Command::Train(_) => {
            let teacher = cfg.teacher()?;
            let ds = experiments::generate(&family, &teacher, cfg.n_samples, cfg.data_seed())?;
            let (model, cert, trace) = trainer::meta_train(&ds, family, dims, cfg.lambda, &cfg.train_options())?;
            let mf = ModelFile { config: cfg.result_map(), teacher, model };
            let p = out.join("model.json");
            write_json(&p, &mf)?;
            written.push(p);
            let p = out.join("trace.csv");
            write_trace_csv(&p, &trace)?;
            written.push(p);
            let p = out.join("width_events.csv");
            write_width_csv(&p, &trace)?;
            written.push(p);
            let p = out.join("certificate.json");
            write_json(&p, &CertificateFile { certificate: &cert, width: mf.model.width(), hit_width_cap: trace.hit_width_cap, hit_iteration_cap: trace.hit_iteration_cap })?;
            written.push(p);
        }
        Command::Certify(_) => {
            let (mf, ds) = load()?;
            let cert = polar::polar(&ds, &mf.model, &popts)?;
            let p = out.join("certificate.json");
            write_json(&p, &json!({ "certificate": cert, "width": mf.model.width() }))?;
            written.push(p);
        }
        Command::Bound(_) => {
            let (mf, ds) = load()?;
            let cert = polar::polar(&ds, &mf.model, &popts)?;
            let report = bounds::bound_report(&family, &ds, &mf.model, &cert, cfg.delta, cfg.g_radius)?;
            let p = out.join("bound.json");
            write_json(&p, &report)?;
            written.push(p);
        }
        Command::Sandwich(_) => {
            let (mf, ds) = load()?;
            let report = experiments::sandwich_check(&ds, &mf.model, cfg.lambda)?;
            let p = out.join("sandwich.json");
            write_json(&p, &report)?;
            written.push(p);
        }
        Command::SweepLipschitz(_) => {
            let teacher = cfg.teacher()?;
            let rows = experiments::lipschitz_sweep(&family, &teacher, &cfg.widths, cfg.seed(), cfg.n_samples, cfg.lambda, &cfg.train_options())?;
            let p = out.join("lipschitz.csv");
            experiments::write_csv_file(&p, |f| experiments::write_lipschitz_csv(f, &rows))?;
            written.push(p);
        }
        Command::SweepRate(_) => {
            let rows = experiments::rate_sweep(&cfg.experiment()?)?;
            let p = out.join("rate.csv");
            experiments::write_csv_file(&p, |f| experiments::write_rate_csv(f, &rows))?;
            written.push(p);
        }
    }
    Ok(written)
}

fn run_command(cmd: &Command) -> std::result::Result<(), Failure> {
    let start = Instant::now();
    let cfg = resolve(cmd)?;
    if let Some(t) = cfg.threads {
        // A second initialization in the same process is harmless; keep the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
    }
    let out = PathBuf::from(&cfg.out);
    std::fs::create_dir_all(&out).map_err(Error::from)?;
    let written = match execute(cmd, &cfg, &out) {
        Ok(w) => w,
        Err(e) => {
            let mut record = json!({ "command": cmd.name(), "error": e.kind(), "message": e.to_string() });
            if let Error::SandwichViolated(r) = &e {
                record["report"] = serde_json::to_value(r).unwrap_or(Value::Null);
            }
            let _ = write_json(&out.join("error.json"), &record);
            return Err(Failure::Numeric(e));
        }
    };
    let manifest = Manifest {
        command: cmd.name(),
        config: &cfg.to_map(),
        outputs: written.iter().map(|p| p.display().to_string()).collect(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        finished_unix_seconds: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed(),
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(())
}

/// Parse arguments and run; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run_command(&cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(e)) => {
            eprintln!("{}", json!({ "error": "usage", "message": e.0 }));
            2
        }
        Err(Failure::Numeric(e)) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            1
        }
    }
}
