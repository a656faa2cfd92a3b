//! Batch front end: JSON configuration, experiment dispatch and report files.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::collocation::{
    build_matrix_with_limit, dense_invert, neumann_inverse, spectral_diagnostics, CoefficientVector,
    CollocationError, CollocationMatrix, DEFAULT_MAX_NODES,
};
use crate::decay::{
    default_fit_window, envelope_of, fit_exponent, power_bound_check, inverse_bound_ratio, DecayError, DecayFit,
    LagKind, MAX_POWER,
};
use crate::export::{write_csv, write_json, write_matrix, write_pairs, Cell, ExportError};
use crate::fundamental::{
    bound_plateau, fundamental_envelope, grid, make_fundamental, FundamentalError, FundamentalSet, MIN_SAMPLES,
};
use crate::interp::{lebesgue_function, lp_stability_all, make_interpolant, EvalPath, InterpError, PNorm};
use crate::kernel::{KernelError, KernelParams};
use crate::nodes::{Core, NodeWindow, NodesError};

pub const MAX_ORDER: u32 = 32;
pub const ENV_MAX_NODES: &str = "IMQ_MAX_NODES";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Cardinality,
    DecayInverse,
    DecayFundamental,
    Neumann,
    Lemma2,
    Interpolate,
    Lebesgue,
    Stability,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::Cardinality,
        Experiment::DecayInverse,
        Experiment::DecayFundamental,
        Experiment::Neumann,
        Experiment::Lemma2,
        Experiment::Interpolate,
        Experiment::Lebesgue,
        Experiment::Stability,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Cardinality => "cardinality",
            Experiment::DecayInverse => "decay-inverse",
            Experiment::DecayFundamental => "decay-fundamental",
            Experiment::Neumann => "neumann",
            Experiment::Lemma2 => "lemma2",
            Experiment::Interpolate => "interpolate",
            Experiment::Lebesgue => "lebesgue",
            Experiment::Stability => "stability",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == name)
    }

    /// Experiments that compare a window against one of twice the half-width.
    fn doubles(self) -> bool {
        matches!(self, Experiment::Lemma2 | Experiment::Lebesgue | Experiment::Stability)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeSpec {
    Lattice,
    Jitter { delta: f64, seed: u64 },
    /// Path as written in the config.
    File(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Rhs {
    /// Seeded uniform values in `[-1, 1]`, keyed by logical index.
    Random,
    /// `|j|^(2k-2)`.
    Growing,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub alpha: f64,
    pub k: u32,
    #[serde(rename = "N")]
    pub n: usize,
    pub nodes: NodeSpec,
    pub margin: usize,
    pub seed: u64,
    pub center: i64,
    pub lag_lo: f64,
    pub lag_hi: f64,
    pub plateau_near: [f64; 2],
    pub plateau_far: [f64; 2],
    pub plateau_factor: f64,
    pub exponent_slack: f64,
    pub samples: usize,
    pub grid_step: f64,
    pub p: Vec<PNorm>,
    pub n_terms: Vec<usize>,
    pub power: u32,
    pub trials: usize,
    pub points: usize,
    pub rhs: Rhs,
    pub tol: f64,
    pub path_tol: f64,
    pub drift_tol: f64,
    pub dump_matrix: bool,
    pub max_nodes: usize,
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
    #[serde(skip)]
    node_file: Option<PathBuf>,
}

const KNOWN_KEYS: &[&str] = &[
    "experiment",
    "alpha",
    "k",
    "N",
    "nodes",
    "margin",
    "seed",
    "center",
    "lag_lo",
    "lag_hi",
    "plateau_near",
    "plateau_far",
    "plateau_factor",
    "exponent_slack",
    "samples",
    "grid_step",
    "p",
    "n_terms",
    "power",
    "trials",
    "points",
    "rhs",
    "tol",
    "path_tol",
    "drift_tol",
    "dump_matrix",
    "out_dir",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config is not valid JSON: {0}")]
    Syntax(String),
    #[error("config must be a JSON object")]
    NotObject,
    #[error("unknown config keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("field `{field}` has the wrong type: expected {expected}")]
    Type { field: String, expected: &'static str },
    #[error("field `{field}` out of range: {bound}")]
    Range { field: String, bound: String },
    #[error("node file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("cannot read config {}: {reason}", .path.display())]
    Read { path: PathBuf, reason: String },
    #[error("experiment `{cli}` on the command line but `{file}` in the config")]
    ExperimentMismatch { cli: String, file: String },
    #[error("no experiment given")]
    NoExperiment,
    #[error("{ENV_MAX_NODES} must be a positive integer, got `{0}`")]
    MaxNodes(String),
    #[error(transparent)]
    Nodes(#[from] NodesError),
}

/// Command-line values that take precedence over the config document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub experiment: Option<Experiment>,
    pub alpha: Option<f64>,
    pub k: Option<u32>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub max_nodes: Option<usize>,
}

fn range(field: &str, bound: impl Into<String>) -> ConfigError {
    ConfigError::Range { field: field.to_string(), bound: bound.into() }
}

fn wrong(field: &str, expected: &'static str) -> ConfigError {
    ConfigError::Type { field: field.to_string(), expected }
}

struct Fields<'a>(&'a Map<String, Value>);

impl Fields<'_> {
    fn real(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.0.get(key).map(|v| v.as_f64().ok_or_else(|| wrong(key, "number"))).transpose()
    }

    fn uint(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        self.0.get(key).map(|v| v.as_u64().ok_or_else(|| wrong(key, "non-negative integer"))).transpose()
    }

    fn int(&self, key: &str) -> Result<Option<i64>, ConfigError> {
        self.0.get(key).map(|v| v.as_i64().ok_or_else(|| wrong(key, "integer"))).transpose()
    }

    fn boolean(&self, key: &str) -> Result<Option<bool>, ConfigError> {
        self.0.get(key).map(|v| v.as_bool().ok_or_else(|| wrong(key, "boolean"))).transpose()
    }

    fn string(&self, key: &str) -> Result<Option<&str>, ConfigError> {
        self.0.get(key).map(|v| v.as_str().ok_or_else(|| wrong(key, "string"))).transpose()
    }

    fn pair(&self, key: &str) -> Result<Option<[f64; 2]>, ConfigError> {
        let Some(v) = self.0.get(key) else { return Ok(None) };
        match v.as_array().map(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<_>>>()) {
            Some(Some(a)) if a.len() == 2 => Ok(Some([a[0], a[1]])),
            _ => Err(wrong(key, "array of two numbers")),
        }
    }
}

fn to_u32(field: &str, v: u64) -> Result<u32, ConfigError> {
    u32::try_from(v).map_err(|_| range(field, format!("must fit in 32 bits, got {v}")))
}

fn to_usize(field: &str, v: u64) -> Result<usize, ConfigError> {
    usize::try_from(v).map_err(|_| range(field, format!("too large: {v}")))
}

fn parse_nodes(v: &Value, seed: u64) -> Result<NodeSpec, ConfigError> {
    const EXPECTED: &str = "\"lattice\", {\"jitter\": {\"delta\", \"seed\"}} or {\"file\": path}";
    match v {
        Value::String(s) if s == "lattice" => Ok(NodeSpec::Lattice),
        Value::Object(o) if o.len() == 1 => {
            if let Some(j) = o.get("jitter") {
                let j = j.as_object().ok_or_else(|| wrong("nodes.jitter", "object"))?;
                let unknown: Vec<String> =
                    j.keys().filter(|k| *k != "delta" && *k != "seed").map(|k| format!("nodes.jitter.{k}")).collect();
                if !unknown.is_empty() {
                    return Err(ConfigError::UnknownKeys(unknown));
                }
                let f = Fields(j);
                let delta = f.real("delta")?.ok_or_else(|| wrong("nodes.jitter.delta", "number"))?;
                if !(0.0..0.5).contains(&delta) {
                    return Err(range("nodes.jitter.delta", format!("must lie in [0, 0.5), got {delta}")));
                }
                Ok(NodeSpec::Jitter { delta, seed: f.uint("seed")?.unwrap_or(seed) })
            } else if let Some(p) = o.get("file") {
                Ok(NodeSpec::File(p.as_str().ok_or_else(|| wrong("nodes.file", "string"))?.to_string()))
            } else {
                Err(ConfigError::UnknownKeys(o.keys().map(|k| format!("nodes.{k}")).collect()))
            }
        }
        _ => Err(wrong("nodes", EXPECTED)),
    }
}

fn parse_p(v: &Value) -> Result<Vec<PNorm>, ConfigError> {
    let items = v.as_array().ok_or_else(|| wrong("p", "array of 1, 2, \"inf\""))?;
    let mut out = Vec::new();
    for item in items {
        let p = match item {
            Value::Number(n) if n.as_u64() == Some(1) => PNorm::One,
            Value::Number(n) if n.as_u64() == Some(2) => PNorm::Two,
            Value::String(s) if s == "1" => PNorm::One,
            Value::String(s) if s == "2" => PNorm::Two,
            Value::String(s) if s == "inf" || s == "infinity" => PNorm::Infinity,
            other => return Err(range("p", format!("each entry must be 1, 2 or \"inf\", got {other}"))),
        };
        if !out.contains(&p) {
            out.push(p);
        }
    }
    if out.is_empty() {
        return Err(range("p", "must not be empty"));
    }
    Ok(out)
}

/// Parses and validates a config document. Relative node-file paths resolve
/// against `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path, ov: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let map = doc.as_object().ok_or(ConfigError::NotObject)?;
    let unknown: Vec<String> = map.keys().filter(|k| !KNOWN_KEYS.contains(&k.as_str())).cloned().collect();
    if !unknown.is_empty() {
        return Err(ConfigError::UnknownKeys(unknown));
    }
    let f = Fields(map);

    let file_experiment = match f.string("experiment")? {
        Some(name) => Some(Experiment::from_name(name).ok_or_else(|| {
            let names: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
            range("experiment", format!("must be one of {}, got `{name}`", names.join(", ")))
        })?),
        None => None,
    };
    let experiment = match (ov.experiment, file_experiment) {
        (Some(c), Some(d)) if c != d => {
            return Err(ConfigError::ExperimentMismatch { cli: c.to_string(), file: d.to_string() })
        }
        (Some(e), _) | (None, Some(e)) => e,
        (None, None) => return Err(ConfigError::NoExperiment),
    };

    let alpha = ov.alpha.or(f.real("alpha")?).unwrap_or(2.0);
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(range("alpha", format!("must be a positive finite number, got {alpha}")));
    }
    let k = match ov.k {
        Some(k) => k,
        None => f.uint("k")?.map(|v| to_u32("k", v)).transpose()?.unwrap_or(2),
    };
    if k == 0 || k > MAX_ORDER {
        return Err(range("k", format!("must lie in [1, {MAX_ORDER}], got {k}")));
    }
    let seed = ov.seed.or(f.uint("seed")?).unwrap_or(0);
    let mut nodes = match map.get("nodes") {
        Some(v) => parse_nodes(v, seed)?,
        None => NodeSpec::Lattice,
    };
    if let (Some(s), NodeSpec::Jitter { seed, .. }) = (ov.seed, &mut nodes) {
        *seed = s;
    }

    let max_nodes = ov.max_nodes.unwrap_or(DEFAULT_MAX_NODES);
    let mut node_file = None;
    let mut n = match ov.n {
        Some(n) => n,
        None => f.uint("N")?.map(|v| to_usize("N", v)).transpose()?.unwrap_or(100),
    };
    let mut sep_min = 1.0;
    match &nodes {
        NodeSpec::File(p) => {
            let path = base_dir.join(p);
            if !path.is_file() {
                return Err(ConfigError::MissingFile(path));
            }
            let w = NodeWindow::<f64>::from_file(&path)?;
            n = w.half_width();
            sep_min = w.sep_min();
            node_file = Some(path);
            if experiment.doubles() {
                return Err(range("nodes", format!("experiment `{experiment}` needs generated nodes (lattice or jitter)")));
            }
        }
        NodeSpec::Jitter { delta, .. } => sep_min = 1.0 - 2.0 * delta,
        NodeSpec::Lattice => {}
    }
    if n == 0 {
        return Err(range("N", "must be at least 1"));
    }
    let needed = if experiment.doubles() { 4 * n + 1 } else { 2 * n + 1 };
    if needed > max_nodes {
        return Err(range("N", format!("needs {needed} nodes, limit is {max_nodes} (set {ENV_MAX_NODES} to raise it)")));
    }

    let margin = f.uint("margin")?.map(|v| to_usize("margin", v)).transpose()?.unwrap_or(n / 4);
    if margin > n {
        return Err(range("margin", format!("must not exceed N = {n}, got {margin}")));
    }
    let center = f.int("center")?.unwrap_or(0);
    let core_hi = (n - margin) as i64;
    if center.abs() > core_hi {
        return Err(range("center", format!("must lie in the core [-{core_hi}, {core_hi}], got {center}")));
    }

    let (lag_lo_default, lag_hi_default) = match experiment {
        Experiment::DecayFundamental => (10.0, 60.0),
        _ => default_fit_window(n, margin),
    };
    let lag_lo = f.real("lag_lo")?.unwrap_or(lag_lo_default);
    let lag_hi = f.real("lag_hi")?.unwrap_or(lag_hi_default);
    let decay = matches!(experiment, Experiment::DecayInverse | Experiment::DecayFundamental);
    if decay && !(lag_lo > 0.0 && lag_lo.is_finite()) {
        return Err(range("lag_lo", format!("must be positive, got {lag_lo}")));
    }
    if decay && !(lag_hi > lag_lo && lag_hi.is_finite()) {
        return Err(range("lag_hi", format!("must exceed lag_lo = {lag_lo}, got {lag_hi}")));
    }
    let plateau_near = f.pair("plateau_near")?.unwrap_or([5.0, 10.0]);
    let plateau_far = f.pair("plateau_far")?.unwrap_or([5.0, 50.0]);
    for (name, [a, b]) in [("plateau_near", plateau_near), ("plateau_far", plateau_far)] {
        if !(a >= 0.0 && b > a && b.is_finite()) {
            return Err(range(name, format!("needs 0 <= lo < hi, got [{a}, {b}]")));
        }
    }

    let samples_default = match experiment {
        Experiment::DecayFundamental => ((lag_hi - lag_lo) * 100.0).ceil() as usize + 1,
        Experiment::Lebesgue => 201,
        _ => 1001,
    };
    let samples = f.uint("samples")?.map(|v| to_usize("samples", v)).transpose()?.unwrap_or(samples_default);
    if samples < MIN_SAMPLES {
        return Err(range("samples", format!("must be at least {MIN_SAMPLES}, got {samples}")));
    }
    let grid_step = f.real("grid_step")?.unwrap_or(sep_min / 20.0);
    if !(grid_step > 0.0 && grid_step <= sep_min / 10.0) {
        return Err(range("grid_step", format!("must lie in (0, sep_min/10 = {}], got {grid_step}", sep_min / 10.0)));
    }
    let p = match map.get("p") {
        Some(v) => parse_p(v)?,
        None => PNorm::ALL.to_vec(),
    };
    let n_terms = match map.get("n_terms") {
        Some(v) => {
            let items = v.as_array().ok_or_else(|| wrong("n_terms", "array of positive integers"))?;
            let terms: Vec<usize> = items
                .iter()
                .map(|t| t.as_u64().and_then(|t| usize::try_from(t).ok()).filter(|&t| t > 0))
                .collect::<Option<_>>()
                .ok_or_else(|| range("n_terms", "entries must be positive integers"))?;
            if terms.is_empty() {
                return Err(range("n_terms", "must not be empty"));
            }
            terms
        }
        None => vec![5, 10, 20],
    };
    let power = f.uint("power")?.map(|v| to_u32("power", v)).transpose()?.unwrap_or(2);
    if power == 0 || power > MAX_POWER {
        return Err(range("power", format!("must lie in [1, {MAX_POWER}], got {power}")));
    }
    let trials = f.uint("trials")?.map(|v| to_usize("trials", v)).transpose()?.unwrap_or(50);
    if trials == 0 {
        return Err(range("trials", "must be at least 1"));
    }
    let points = f.uint("points")?.map(|v| to_usize("points", v)).transpose()?.unwrap_or(100);
    if points == 0 {
        return Err(range("points", "must be at least 1"));
    }
    let rhs = match f.string("rhs")? {
        None | Some("random") => Rhs::Random,
        Some("growing") => Rhs::Growing,
        Some(other) => return Err(range("rhs", format!("must be \"random\" or \"growing\", got `{other}`"))),
    };
    let positive = |key: &str, default: f64| -> Result<f64, ConfigError> {
        let v = f.real(key)?.unwrap_or(default);
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(range(key, format!("must be positive, got {v}")))
        }
    };
    let tol = positive("tol", 1e-8)?;
    let path_tol = positive("path_tol", 1e-10)?;
    let drift_tol = positive("drift_tol", if experiment == Experiment::Lemma2 { 0.10 } else { 0.05 })?;
    let plateau_factor = positive("plateau_factor", 2.0)?;
    let exponent_slack = f.real("exponent_slack")?.unwrap_or(0.5);
    if !exponent_slack.is_finite() {
        return Err(range("exponent_slack", "must be finite"));
    }
    let dump_matrix = f.boolean("dump_matrix")?.unwrap_or(false);
    let out_dir = ov.out_dir.clone().or(f.string("out_dir")?.map(|p| base_dir.join(p)));

    Ok(ExperimentConfig {
        experiment,
        alpha,
        k,
        n,
        nodes,
        margin,
        seed,
        center,
        lag_lo,
        lag_hi,
        plateau_near,
        plateau_far,
        plateau_factor,
        exponent_slack,
        samples,
        grid_step,
        p,
        n_terms,
        power,
        trials,
        points,
        rhs,
        tol,
        path_tol,
        drift_tol,
        dump_matrix,
        max_nodes,
        out_dir,
        node_file,
    })
}

pub fn load_config(path: &Path, ov: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ConfigError::Read { path: path.to_path_buf(), reason: e.to_string() })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&text, &base, ov)
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("nodes: {0}")]
    Nodes(#[from] NodesError),
    #[error("kernel: {0}")]
    Kernel(#[from] KernelError),
    #[error("collocation: {0}")]
    Collocation(#[from] CollocationError),
    #[error("decay: {0}")]
    Decay(#[from] DecayError),
    #[error("fundamental: {0}")]
    Fundamental(#[from] FundamentalError),
    #[error("interp: {0}")]
    Interp(#[from] InterpError),
    #[error("export: {0}")]
    Export(#[from] ExportError),
    #[error("export: cannot create {}: {reason}", .path.display())]
    OutDir { path: PathBuf, reason: String },
}

/// A file produced alongside `report.json`.
#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    Pairs { name: &'static str, header: [&'static str; 2], pairs: Vec<(f64, f64)> },
    Table { name: &'static str, header: Vec<&'static str>, rows: Vec<Vec<Cell>> },
    Json { name: &'static str, value: Value },
    Matrix { name: &'static str, matrix: crate::linalg::DenseMatrix<f64> },
}

impl Artifact {
    pub fn name(&self) -> &'static str {
        match self {
            Artifact::Pairs { name, .. }
            | Artifact::Table { name, .. }
            | Artifact::Json { name, .. }
            | Artifact::Matrix { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub config: ExperimentConfig,
    pub pass: bool,
    pub results: Value,
    pub artifacts: Vec<Artifact>,
}

impl Report {
    pub fn to_value(&self) -> Value {
        json!({
            "experiment": self.config.experiment,
            "config": self.config,
            "pass": self.pass,
            "results": self.results,
            "artifacts": self.artifacts.iter().map(Artifact::name).collect::<Vec<_>>(),
        })
    }

    pub fn result(&self, key: &str) -> Option<&Value> {
        self.results.get(key)
    }

    pub fn result_f64(&self, key: &str) -> Option<f64> {
        self.result(key).and_then(Value::as_f64)
    }
}

fn window_for(cfg: &ExperimentConfig, n: usize) -> Result<NodeWindow<f64>, CliError> {
    Ok(match (&cfg.nodes, &cfg.node_file) {
        (NodeSpec::Lattice, _) => NodeWindow::lattice(n),
        (NodeSpec::Jitter { delta, seed }, _) => NodeWindow::jittered(n, *delta, *seed)?,
        (NodeSpec::File(_), Some(path)) => NodeWindow::from_file(path)?,
        (NodeSpec::File(p), None) => return Err(ConfigError::MissingFile(PathBuf::from(p)).into()),
    })
}

fn matrix_for(cfg: &ExperimentConfig, n: usize) -> Result<CollocationMatrix<f64>, CliError> {
    let params = KernelParams::new(cfg.alpha, cfg.k)?;
    Ok(build_matrix_with_limit(params, Arc::new(window_for(cfg, n)?), cfg.max_nodes)?)
}

/// Deterministic data value at logical index `j` for trial `trial`; windows of
/// different sizes see the same value at shared indices.
pub fn data_value(seed: u64, trial: u64, j: i64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    let slot = if j >= 0 { 2 * j as u128 } else { 2 * (-j) as u128 - 1 };
    rng.set_word_pos(2 * slot);
    rng.gen_range(-1.0..=1.0)
}

fn fit_value(fit: &DecayFit<f64>) -> Value {
    json!({
        "exponent": fit.exponent,
        "log_prefactor": fit.log_prefactor,
        "residual_rms": fit.residual_rms,
        "lag_lo": fit.lag_lo,
        "lag_hi": fit.lag_hi,
    })
}

fn relative_drift(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (b - a).abs() / a.abs().max(f64::MIN_POSITIVE)
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    match cfg.experiment {
        Experiment::Cardinality => run_cardinality(cfg),
        Experiment::DecayInverse => run_decay_inverse(cfg),
        Experiment::DecayFundamental => run_decay_fundamental(cfg),
        Experiment::Neumann => run_neumann(cfg),
        Experiment::Lemma2 => run_lemma2(cfg),
        Experiment::Interpolate => run_interpolate(cfg),
        Experiment::Lebesgue => run_lebesgue(cfg),
        Experiment::Stability => run_stability(cfg),
    }
}

fn report(cfg: &ExperimentConfig, pass: bool, results: Value, artifacts: Vec<Artifact>) -> Report {
    Report { config: cfg.clone(), pass, results, artifacts }
}

fn run_cardinality(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    use rayon::prelude::*;
    let matrix = matrix_for(cfg, cfg.n)?;
    let set = FundamentalSet::from_matrix(&matrix)?;
    let w = matrix.window();
    let core = w.core(cfg.margin);
    let core_store: Vec<usize> = core.indices().filter_map(|j| w.storage(j)).collect();
    // For each core node x_j: worst |L_m(x_j) − δ_jm| over core centers m.
    let per_node: Vec<(i64, f64, i64)> = core
        .indices()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&j| {
            let l = set.values_at(w.at(j));
            let mut worst = (0.0, j);
            for &s in &core_store {
                let m = w.logical(s);
                let dev = (l[s] - if m == j { 1.0 } else { 0.0 }).abs();
                if dev > worst.0 {
                    worst = (dev, m);
                }
            }
            (j, worst.0, worst.1)
        })
        .collect();
    let (mut dev, mut node, mut center) = (0.0, 0, 0);
    for &(j, d, m) in &per_node {
        if d > dev {
            (dev, node, center) = (d, j, m);
        }
    }
    let pass = dev <= cfg.tol;
    let results = json!({
        "max_abs_deviation": dev,
        "argmax_node": node,
        "argmax_center": center,
        "core_lo": core.lo,
        "core_hi": core.hi,
        "inverse_residual": set.inverse().residual_norm,
        "tol": cfg.tol,
    });
    let rows = per_node.iter().map(|&(j, d, _)| vec![Cell::Int(j), Cell::Real(d)]).collect();
    let mut artifacts = vec![Artifact::Table { name: "residuals.csv", header: vec!["node", "max_abs_deviation"], rows }];
    if cfg.dump_matrix {
        artifacts.push(Artifact::Matrix { name: "inverse.csv", matrix: set.inverse().entries.clone() });
    }
    Ok(report(cfg, pass, results, artifacts))
}

fn run_decay_inverse(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let matrix = matrix_for(cfg, cfg.n)?;
    let w = matrix.window();
    let core = w.core(cfg.margin);
    let inverse = dense_invert(&matrix)?;
    let env = envelope_of(&inverse.entries, w, cfg.center, core, LagKind::IndexDistance)?;
    let fit = fit_exponent(&env, cfg.lag_lo, cfg.lag_hi)?;
    let bound = inverse_bound_ratio(&inverse, matrix.params(), w, core)?;
    let spectral = spectral_diagnostics(&matrix)?;
    let target = -2.0 * f64::from(cfg.k) + cfg.exponent_slack;
    let pass = fit.exponent <= target;
    let results = json!({
        "exponent": fit.exponent,
        "exponent_target": target,
        "fit": fit_value(&fit),
        "points_used": fit.points_used,
        "zeros_skipped": fit.zeros_skipped,
        "bound_ratio": bound.max_ratio,
        "bound_argmax": [bound.argmax_pair.0, bound.argmax_pair.1],
        "inverse_residual": inverse.residual_norm,
        "spectral": spectral,
    });
    let mut artifacts = vec![
        Artifact::Pairs { name: "envelope.csv", header: ["lag", "magnitude"], pairs: env.pairs.clone() },
        Artifact::Json { name: "fit.json", value: fit_value(&fit) },
    ];
    if cfg.dump_matrix {
        artifacts.push(Artifact::Matrix { name: "inverse.csv", matrix: inverse.entries });
    }
    Ok(report(cfg, pass, results, artifacts))
}

fn run_decay_fundamental(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let matrix = matrix_for(cfg, cfg.n)?;
    let core = matrix.window().core(cfg.margin);
    let l = make_fundamental(&matrix, cfg.center)?;
    let env = fundamental_envelope(&l, cfg.lag_lo, cfg.lag_hi, cfg.samples, core)?;
    let fit = fit_exponent(&env, cfg.lag_lo, cfg.lag_hi)?;
    let near = (cfg.plateau_near[0], cfg.plateau_near[1]);
    let far = (cfg.plateau_far[0], cfg.plateau_far[1]);
    let plateau = bound_plateau(&l, near, far, 0.01);
    let target = -2.0 * f64::from(cfg.k) + cfg.exponent_slack;
    let pass = fit.exponent <= target && plateau.ratio <= cfg.plateau_factor;
    let results = json!({
        "exponent": fit.exponent,
        "exponent_target": target,
        "fit": fit_value(&fit),
        "points_used": fit.points_used,
        "plateau": plateau,
        "plateau_factor": cfg.plateau_factor,
    });
    let artifacts = vec![
        Artifact::Pairs { name: "envelope.csv", header: ["lag", "magnitude"], pairs: env.pairs.clone() },
        Artifact::Json { name: "fit.json", value: fit_value(&fit) },
    ];
    Ok(report(cfg, pass, results, artifacts))
}

fn run_neumann(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let matrix = matrix_for(cfg, cfg.n)?;
    let spectral = spectral_diagnostics(&matrix)?;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    let mut direct = None;
    let mut pass = true;
    let mut last_error = f64::INFINITY;
    for &n in &cfg.n_terms {
        let (approx, state) = neumann_inverse(&matrix, n)?;
        if !state.convergent {
            pass = false;
            records.push(json!({"n_terms": n, "state": state}));
            continue;
        }
        if direct.is_none() {
            direct = Some(dense_invert(&matrix)?);
        }
        let error = approx.entries.max_abs_diff(&direct.as_ref().expect("set above").entries);
        pass &= error <= state.remainder_bound && error < last_error;
        last_error = error;
        rows.push(vec![Cell::from(n), Cell::Real(error), Cell::Real(state.remainder_bound)]);
        records.push(json!({"n_terms": n, "error": error, "state": state}));
    }
    let convergent = records.iter().all(|r| r["state"]["convergent"] == json!(true));
    let results = json!({
        "spectral": spectral,
        "convergent": convergent,
        "terms": records,
    });
    let artifacts =
        vec![Artifact::Table { name: "neumann.csv", header: vec!["n_terms", "error", "remainder_bound"], rows }];
    Ok(report(cfg, pass, results, artifacts))
}

fn run_lemma2(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let mut ratios = Vec::new();
    for scale in [1, 2] {
        let matrix = matrix_for(cfg, scale * cfg.n)?;
        let w = matrix.window();
        let rep = power_bound_check(matrix.entries(), cfg.power, matrix.params(), w, w.core(scale * cfg.margin))?;
        ratios.push(json!({
            "N": scale * cfg.n,
            "max_ratio": rep.max_ratio,
            "argmax_pair": [rep.argmax_pair.0, rep.argmax_pair.1],
        }));
    }
    let (a, b) = (ratios[0]["max_ratio"].as_f64().unwrap_or(0.0), ratios[1]["max_ratio"].as_f64().unwrap_or(0.0));
    let drift = relative_drift(a, b);
    let results = json!({"power": cfg.power, "windows": ratios, "drift": drift, "drift_tol": cfg.drift_tol});
    Ok(report(cfg, drift <= cfg.drift_tol, results, Vec::new()))
}

fn interp_data(cfg: &ExperimentConfig, window: &NodeWindow<f64>, trial: u64) -> CoefficientVector<f64> {
    let values = (0..window.len())
        .map(|s| {
            let j = window.logical(s);
            match cfg.rhs {
                Rhs::Random => data_value(cfg.seed, trial, j),
                Rhs::Growing => (j.unsigned_abs() as f64).powi(2 * cfg.k as i32 - 2),
            }
        })
        .collect();
    CoefficientVector(values)
}

fn run_interpolate(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let matrix = matrix_for(cfg, cfg.n)?;
    let w = matrix.window().clone();
    let core = w.core(cfg.margin);
    let set = Arc::new(FundamentalSet::from_matrix(&matrix)?);
    let y = interp_data(cfg, &w, 0);
    let scale = core.indices().map(|j| y[w.storage(j).expect("core")].abs()).fold(1.0, f64::max);
    let interp = make_interpolant(&matrix, y)?.with_fundamentals(set)?;
    let node_residual = interp.node_residual(core);

    let (lo, hi) = w.hull(core);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    let mut path_gap: f64 = 0.0;
    for _ in 0..cfg.points {
        let x = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let d = interp.eval(x, EvalPath::Direct)?;
        let v = interp.eval(x, EvalPath::ViaFundamentals)?;
        path_gap = path_gap.max((d - v).abs());
    }
    let samples: Vec<(f64, f64)> = grid(lo, hi, cfg.samples)
        .into_iter()
        .map(|x| Ok((x, interp.eval(x, EvalPath::Direct)?)))
        .collect::<Result<_, InterpError>>()?;
    let pass = node_residual <= cfg.tol * scale && path_gap <= cfg.path_tol * scale;
    let results = json!({
        "node_residual": node_residual,
        "path_gap": path_gap,
        "data_scale": scale,
        "tol": cfg.tol,
        "path_tol": cfg.path_tol,
    });
    let artifacts = vec![Artifact::Pairs { name: "samples.csv", header: ["x", "value"], pairs: samples }];
    Ok(report(cfg, pass, results, artifacts))
}

/// Lebesgue function on the cell `[x_0, x_1]` and its deviation from 1 at core nodes.
pub fn lebesgue_summary(set: &FundamentalSet<f64>, core: Core, samples: usize) -> (f64, f64, Vec<(f64, f64)>) {
    use rayon::prelude::*;
    let w = set.window();
    let (a, b) = (w.at(0), w.at(1.min(w.last_index())));
    let curve: Vec<(f64, f64)> = grid(a, b, samples).par_iter().map(|&x| (x, lebesgue_function(set, x))).collect();
    let sup = curve.iter().fold(0.0, |m: f64, p| m.max(p.1));
    let node_dev = core
        .indices()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&j| (lebesgue_function(set, w.at(j)) - 1.0).abs())
        .reduce(|| 0.0, f64::max);
    (sup, node_dev, curve)
}

fn run_lebesgue(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let mut windows = Vec::new();
    let mut curve0 = Vec::new();
    let mut sups = Vec::new();
    let mut worst_node = 0.0f64;
    for scale in [1, 2] {
        let matrix = matrix_for(cfg, scale * cfg.n)?;
        let set = FundamentalSet::from_matrix(&matrix)?;
        let core = matrix.window().core(scale * cfg.margin);
        let (sup, node_dev, curve) = lebesgue_summary(&set, core, cfg.samples);
        if scale == 1 {
            curve0 = curve;
        }
        worst_node = worst_node.max(node_dev);
        sups.push(sup);
        windows.push(json!({"N": scale * cfg.n, "cell_sup": sup, "node_deviation": node_dev}));
    }
    let drift = relative_drift(sups[0], sups[1]);
    let pass = drift <= cfg.drift_tol && worst_node <= cfg.tol;
    let results = json!({
        "windows": windows,
        "drift": drift,
        "drift_tol": cfg.drift_tol,
        "node_deviation": worst_node,
        "tol": cfg.tol,
    });
    let artifacts = vec![Artifact::Pairs { name: "lebesgue.csv", header: ["x", "value"], pairs: curve0 }];
    Ok(report(cfg, pass, results, artifacts))
}

fn run_stability(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let mut per_scale: Vec<Vec<(f64, Value, u64, f64)>> = Vec::new();
    for scale in [1, 2] {
        let n = scale * cfg.n;
        let matrix = matrix_for(cfg, n)?;
        let w = matrix.window().clone();
        // Both windows are measured on the same logical core, that of the smaller one.
        let core = w.core(cfg.margin + (scale - 1) * cfg.n);
        let mut best: Vec<(f64, Value, u64, f64)> = vec![(-1.0, Value::Null, 0, 0.0); cfg.p.len()];
        for trial in 0..cfg.trials as u64 {
            let mut y = interp_data(cfg, &w, trial);
            if cfg.rhs == Rhs::Random {
                y.0[w.center_index()] = 1.0;
            }
            let interp = make_interpolant(&matrix, y)?;
            for (slot, rep) in lp_stability_all(&interp, &cfg.p, cfg.grid_step, core)?.into_iter().enumerate() {
                if rep.ratio > best[slot].0 {
                    best[slot] = (
                        rep.ratio,
                        json!({
                            "p": rep.p,
                            "norm_Ip": rep.norm_ip,
                            "norm_yp": rep.norm_yp,
                            "ratio": rep.ratio,
                            "grid_step": rep.grid_step,
                            "N": n,
                            "alpha": cfg.alpha,
                            "k": cfg.k,
                        }),
                        trial,
                        rep.tail_bound,
                    );
                }
            }
        }
        per_scale.push(best);
    }
    let mut pass = true;
    let mut summary = Vec::new();
    let mut records = Vec::new();
    for (slot, p) in cfg.p.iter().enumerate() {
        let (a, b) = (per_scale[0][slot].0, per_scale[1][slot].0);
        let drift = relative_drift(a, b);
        pass &= drift <= cfg.drift_tol;
        summary.push(json!({
            "p": p,
            "max_ratio": a,
            "max_ratio_doubled": b,
            "drift": drift,
            "argmax_trial": per_scale[0][slot].2,
            "tail_bound": per_scale[0][slot].3,
        }));
        records.push(per_scale[0][slot].1.clone());
        records.push(per_scale[1][slot].1.clone());
    }
    let results = json!({"norms": summary, "drift_tol": cfg.drift_tol, "trials": cfg.trials});
    let artifacts = vec![Artifact::Json { name: "stability.json", value: Value::Array(records) }];
    Ok(report(cfg, pass, results, artifacts))
}

/// Writes `report.json` and every artifact into `out_dir`, returning the paths written.
pub fn emit_report(rep: &Report, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(out_dir).map_err(|e| CliError::OutDir { path: out_dir.to_path_buf(), reason: e.to_string() })?;
    let mut written = Vec::new();
    let path = out_dir.join("report.json");
    write_json(&path, &rep.to_value())?;
    written.push(path);
    for art in &rep.artifacts {
        let path = out_dir.join(art.name());
        match art {
            Artifact::Pairs { header, pairs, .. } => write_pairs(&path, *header, pairs)?,
            Artifact::Table { header, rows, .. } => write_csv(&path, header, rows)?,
            Artifact::Json { value, .. } => write_json(&path, value)?,
            Artifact::Matrix { matrix, .. } => write_matrix(&path, matrix)?,
        }
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Parser)]
#[command(name = "imq", version, about = "Cardinal interpolation experiments with inverse multiquadric kernels")]
pub struct Args {
    pub experiment: Experiment,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub k: Option<u32>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub const EXIT_PASS: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAIL: i32 = 2;

fn max_nodes_from_env() -> Result<Option<usize>, ConfigError> {
    match std::env::var(ENV_MAX_NODES) {
        Ok(v) => v.trim().parse::<usize>().ok().filter(|&m| m > 0).map(Some).ok_or(ConfigError::MaxNodes(v)),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(std::env::VarError::NotUnicode(v)) => Err(ConfigError::MaxNodes(v.to_string_lossy().into_owned())),
    }
}

fn execute(args: Args) -> Result<Report, CliError> {
    let ov = Overrides {
        experiment: Some(args.experiment),
        alpha: args.alpha,
        k: args.k,
        n: args.n,
        seed: args.seed,
        out_dir: args.out,
        max_nodes: max_nodes_from_env()?,
    };
    let cfg = load_config(&args.config, &ov)?;
    let rep = run_experiment(&cfg)?;
    let out = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("imq-out"));
    emit_report(&rep, &out)?;
    println!("{}: {} ({})", cfg.experiment, if rep.pass { "pass" } else { "FAIL" }, out.join("report.json").display());
    Ok(rep)
}

/// Runs the command line and returns the process exit code.
pub fn main_with<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    match execute(args) {
        Ok(rep) if rep.pass => EXIT_PASS,
        Ok(_) => EXIT_FAIL,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
