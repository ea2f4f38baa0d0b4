//! Experiment configuration, end-to-end pipelines and reports.
//!
//! A configuration is a flat `key = value` text file. The keys `model`,
//! `n_samples`, `weights_k`, `seed`, `replicas`, `output_path` and `id` are
//! common; every other key is a model parameter:
//!
//! | model      | keys (defaults)                                                                  |
//! |------------|----------------------------------------------------------------------------------|
//! | `fbm`      | `hurst`, `n`, `c_h` (1), `c` (1)                                                 |
//! | `rgg`      | `t`, `r`, `dim` (2), `pattern` (edge), `outer` (2000), `inner` (200), `pilot` (100000), `v` (1), `c` (1) |
//! | `two_runs` | `m` or `weights` (comma list), `mode` (enumerate / mc), `bound` (poincare / norm), `b_replicas` (100000), `c` (1) |
//! | `er`       | `n`, `p`, `pattern` (triangle), `mode` (mc / enumerate), `bound` (er_scale / poincare), `pilot` (100000), `b_replicas` (100000), `c` (1) |
//! | `custom`   | `samples_path` (a [`SampleBatch`] file), `bound_kind`, `bound_value`              |
//!
//! `replicas` is the number of independent random streams a run is split
//! into; results depend on it but not on the number of threads.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::empirical::{
    dkw_band, fit_rate, ks_distance, law_weighted_ks, tail_prob, weighted_ks, RateFit, SampleBatch,
};
use crate::error::{domain, Error, Result};
use crate::gaussian_chaos::{diagnostics, gauss_tail_bound, simulate_statistic, FbmSpec};
use crate::graph::PatternGraph;
use crate::poisson_geom::{
    concentration_c_rgg, estimate_poincare_terms, fitted_v, poisson_tail_bound, uniform_bound_poisson, RggSpec, Window,
};
use crate::rademacher::{
    enumerate_distribution, er_bound_scale, estimate_b_terms, two_runs_norm_bound, uniform_bound_rademacher, BMode,
    ErSpec, ExactLaw, RademacherFunctional, RademacherSpec, TwoRunsSpec, MAX_ENUM_SUPPORT,
};

/// Tail arguments reported in every row.
pub const TAIL_Z: [f64; 3] = [1.0, 2.0, 3.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Fbm,
    Rgg,
    TwoRuns,
    Er,
    Custom,
}

impl Model {
    pub fn as_str(self) -> &'static str {
        match self {
            Model::Fbm => "fbm",
            Model::Rgg => "rgg",
            Model::TwoRuns => "two_runs",
            Model::Er => "er",
            Model::Custom => "custom",
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fbm" => Model::Fbm,
            "rgg" => Model::Rgg,
            "two_runs" | "runs2" => Model::TwoRuns,
            "er" => Model::Er,
            "custom" => Model::Custom,
            other => return Err(config_err("model", format!("unknown model `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    FourthMoment,
    PoincarePoisson,
    PoincareRademacher,
    NormRatio,
    ErScale,
}

impl FromStr for BoundKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string()))
            .map_err(|_| config_err("bound_kind", format!("unknown bound kind `{s}`")))
    }
}

fn config_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

/// One experiment: model, parameters and Monte Carlo settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub model: Model,
    pub model_params: BTreeMap<String, String>,
    pub n_samples: usize,
    pub weights_k: Vec<u32>,
    pub seed: u64,
    pub replicas: usize,
    pub output_path: String,
    pub id: Option<String>,
}

impl ExperimentSpec {
    pub fn new(model: Model) -> Self {
        Self {
            model,
            model_params: BTreeMap::new(),
            n_samples: 100_000,
            weights_k: vec![1, 2, 3],
            seed: 0,
            replicas: 64,
            output_path: String::new(),
            id: None,
        }
    }

    /// Builder-style [`ExperimentSpec::set`].
    pub fn with(mut self, key: &str, value: impl ToString) -> Result<Self> {
        self.set(key, &value.to_string())?;
        Ok(self)
    }

    /// Sets a common key or a model parameter.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "model" => self.model = value.parse()?,
            "n_samples" => self.n_samples = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "replicas" => self.replicas = parse_num(key, value)?,
            "output_path" => self.output_path = value.to_string(),
            "id" => self.id = Some(value.to_string()),
            "weights_k" => {
                self.weights_k = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse_num(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            _ => {
                self.model_params.insert(key.to_string(), value.to_string());
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec: Option<Self> = None;
        let mut pending = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err(line, format!("line {} is not `key = value`", no + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "model" {
                spec = Some(Self::new(v.parse()?));
            } else {
                pending.push((k.to_string(), v.to_string()));
            }
        }
        let mut spec = spec.ok_or_else(|| config_err("model", "missing"))?;
        for (k, v) in pending {
            spec.set(&k, &v)?;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 1 {
            return Err(config_err("n_samples", "must be >= 1"));
        }
        if self.weights_k.is_empty() {
            return Err(config_err("weights_k", "must be non-empty"));
        }
        if self.replicas < 1 {
            return Err(config_err("replicas", "must be >= 1"));
        }
        Ok(())
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .model_params
            .get(key)
            .ok_or_else(|| config_err(key, format!("required for model {}", self.model)))?;
        parse_num(key, raw)
    }

    fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.model_params.get(key) {
            Some(raw) => parse_num(key, raw),
            None => Ok(default),
        }
    }

    fn text_or(&self, key: &str, default: &str) -> String {
        self.model_params
            .get(key)
            .cloned()
            .unwrap_or_else(|| default.to_string())
    }
}

fn parse_num<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| config_err(key, format!("cannot parse `{raw}`")))
}

/// One line of a report. Field names are the CSV header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment_id: String,
    pub model: Model,
    pub param_1: String,
    pub param_2: String,
    pub param_3: String,
    pub param_4: String,
    pub n_samples: usize,
    pub seed: u64,
    pub ks_uniform: f64,
    pub ks_w1: Option<f64>,
    pub ks_w2: Option<f64>,
    pub ks_w3: Option<f64>,
    pub bound_kind: BoundKind,
    pub bound_value: f64,
    pub ratio: f64,
    pub tail_z1: f64,
    pub tail_emp1: f64,
    pub tail_bound1: Option<f64>,
    pub tail_z2: f64,
    pub tail_emp2: f64,
    pub tail_bound2: Option<f64>,
    pub tail_z3: f64,
    pub tail_emp3: f64,
    pub tail_bound3: Option<f64>,
}

/// CSV header in column order.
pub const CSV_HEADER: [&str; 24] = [
    "experiment_id",
    "model",
    "param_1",
    "param_2",
    "param_3",
    "param_4",
    "n_samples",
    "seed",
    "ks_uniform",
    "ks_w1",
    "ks_w2",
    "ks_w3",
    "bound_kind",
    "bound_value",
    "ratio",
    "tail_z1",
    "tail_emp1",
    "tail_bound1",
    "tail_z2",
    "tail_emp2",
    "tail_bound2",
    "tail_z3",
    "tail_emp3",
    "tail_bound3",
];

impl ReportRow {
    /// The numeric value of `param_1` (`key=value`), the row's size parameter.
    pub fn size(&self) -> Option<f64> {
        self.param_1.split_once('=').and_then(|(_, v)| v.parse().ok())
    }

    pub fn ks_weighted(&self, k: u32) -> Option<f64> {
        match k {
            1 => self.ks_w1,
            2 => self.ks_w2,
            3 => self.ks_w3,
            _ => None,
        }
    }

    pub fn tails(&self) -> [(f64, f64, Option<f64>); 3] {
        [
            (self.tail_z1, self.tail_emp1, self.tail_bound1),
            (self.tail_z2, self.tail_emp2, self.tail_bound2),
            (self.tail_z3, self.tail_emp3, self.tail_bound3),
        ]
    }
}

/// A row plus model-specific details (diagnostics, Poincaré terms, …).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub row: ReportRow,
    pub details: Value,
}

/// Distances and tails of a standardized statistic, from samples or an exact law.
enum Observed {
    Samples(SampleBatch),
    // Law and the number of enumerated states.
    Law(ExactLaw, usize),
}

impl Observed {
    fn n_samples(&self) -> usize {
        match self {
            Observed::Samples(b) => b.n_samples(),
            Observed::Law(_, states) => *states,
        }
    }

    fn ks(&self) -> Result<f64> {
        match self {
            Observed::Samples(b) => ks_distance(b),
            Observed::Law(l, _) => l.ks_distance(),
        }
    }

    fn weighted(&self, k: u32) -> Result<f64> {
        Ok(match self {
            Observed::Samples(b) => weighted_ks(b, k)?.0,
            Observed::Law(l, _) => law_weighted_ks(l.atoms(), k)?.0,
        })
    }

    fn tail(&self, z: f64) -> f64 {
        match self {
            Observed::Samples(b) => tail_prob(b, z, true),
            Observed::Law(l, _) => l.atoms().iter().filter(|(v, _)| v.abs() >= z).map(|a| a.1).sum(),
        }
    }
}

struct Assembly<'a> {
    spec: &'a ExperimentSpec,
    params: [String; 4],
    observed: Observed,
    bound_kind: BoundKind,
    bound_value: f64,
    tail_bound: Option<Box<dyn Fn(f64) -> Result<f64> + 'a>>,
    details: Value,
}

fn assemble(a: Assembly<'_>) -> Result<ExperimentOutput> {
    let spec = a.spec;
    let ks_uniform = a.observed.ks()?;
    let mut weighted = BTreeMap::new();
    for &k in &spec.weights_k {
        weighted.insert(k, a.observed.weighted(k)?);
    }
    let mut tails = Vec::new();
    for z in TAIL_Z {
        let bound = match &a.tail_bound {
            Some(f) => Some(f(z)?),
            None => None,
        };
        tails.push((z, a.observed.tail(z), bound));
    }
    let [p1, p2, p3, p4] = a.params;
    let experiment_id = spec
        .id
        .clone()
        .unwrap_or_else(|| format!("{}-{}-s{}", spec.model, p1.replace('=', ""), spec.seed));
    let row = ReportRow {
        experiment_id,
        model: spec.model,
        param_1: p1,
        param_2: p2,
        param_3: p3,
        param_4: p4,
        n_samples: a.observed.n_samples(),
        seed: spec.seed,
        ks_uniform,
        ks_w1: weighted.get(&1).copied(),
        ks_w2: weighted.get(&2).copied(),
        ks_w3: weighted.get(&3).copied(),
        bound_kind: a.bound_kind,
        bound_value: a.bound_value,
        ratio: ks_uniform / a.bound_value,
        tail_z1: tails[0].0,
        tail_emp1: tails[0].1,
        tail_bound1: tails[0].2,
        tail_z2: tails[1].0,
        tail_emp2: tails[1].1,
        tail_bound2: tails[1].2,
        tail_z3: tails[2].0,
        tail_emp3: tails[2].1,
        tail_bound3: tails[2].2,
    };
    let mut details = a.details;
    if let Value::Object(map) = &mut details {
        map.insert("weighted_ks".into(), json!(weighted));
        if let Observed::Samples(b) = &a.observed {
            map.insert("dkw_band_1e-3".into(), json!(dkw_band(b.n_samples(), 1e-3)?));
        }
    }
    Ok(ExperimentOutput { row, details })
}

fn batch(values: Vec<f64>, spec: &ExperimentSpec) -> Result<SampleBatch> {
    SampleBatch::new(values, spec.seed, spec.model.as_str())
}

fn run_fbm(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    let hurst: f64 = spec.get("hurst")?;
    let n: usize = spec.get("n")?;
    let c_h: f64 = spec.get_or("c_h", 1.0)?;
    let c: f64 = spec.get_or("c", 1.0)?;
    let fbm = FbmSpec::new(hurst, n)?;
    let diag = diagnostics(fbm);
    let values = simulate_statistic(fbm, spec.n_samples, spec.seed, spec.replicas)?;
    let c_n = diag.c_n;
    assemble(Assembly {
        spec,
        params: [
            format!("n={n}"),
            format!("hurst={hurst}"),
            format!("c_h={c_h}"),
            format!("c={c}"),
        ],
        observed: Observed::Samples(batch(values, spec)?),
        bound_kind: BoundKind::FourthMoment,
        bound_value: diag.fm_bound,
        tail_bound: Some(Box::new(move |z| gauss_tail_bound(z, 2, c_n))),
        details: json!({
            "diagnostics": diag,
            "a_n": diag.rate_an.map(|r| r * c_h),
        }),
    })
}

fn run_rgg(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    let t: f64 = spec.get("t")?;
    let r: f64 = spec.get("r")?;
    let dim: usize = spec.get_or("dim", 2)?;
    let pattern_name = spec.text_or("pattern", "edge");
    let pattern = PatternGraph::by_name(&pattern_name)?;
    let outer: usize = spec.get_or("outer", 2000)?;
    let inner: usize = spec.get_or("inner", 200)?;
    let pilot: usize = spec.get_or("pilot", 100_000)?;
    let v: f64 = spec.get_or("v", 1.0)?;
    let c: f64 = spec.get_or("c", 1.0)?;
    let window = Window::unit(dim)?;
    let volume = window.volume();
    let (rgg, pilot_meta) =
        RggSpec::new(window, t, r, &pattern, v)?.standardize_pilot(pilot, spec.seed, spec.replicas)?;
    let values = rgg.simulate(spec.n_samples, spec.seed, spec.replicas)?;
    let mut terms = estimate_poincare_terms(&rgg, outer, inner, spec.seed)?;
    terms.mc_meta.pilot = Some(pilot_meta);
    let bound = uniform_bound_poisson(&terms)?;
    let q = pattern.n_vertices() as u32;
    let c_rgg = concentration_c_rgg(q, v, t, r, dim, volume)?;
    assemble(Assembly {
        spec,
        params: [
            format!("t={t}"),
            format!("r={r}"),
            format!("dim={dim};pattern={pattern_name}"),
            format!("v={v};c={c}"),
        ],
        observed: Observed::Samples(batch(values, spec)?),
        bound_kind: BoundKind::PoincarePoisson,
        bound_value: bound,
        tail_bound: Some(Box::new(move |z| poisson_tail_bound(z, q, c_rgg))),
        details: json!({
            "terms": terms,
            "bound_stderr": terms.bound_stderr(),
            "concentration_c": c_rgg,
            "fitted_v": fitted_v(pilot_meta.variance, q, t, r, dim)?,
        }),
    })
}

fn b_terms_details<F: RademacherFunctional + ?Sized>(
    spec: &ExperimentSpec,
    rs: &RademacherSpec,
    f: &F,
) -> Result<(f64, Value)> {
    let terms = if rs.support() <= MAX_ENUM_SUPPORT {
        estimate_b_terms(rs, f, BMode::Enumerate, 0, spec.seed)?
    } else {
        let reps: usize = spec.get_or("b_replicas", 100_000)?;
        estimate_b_terms(rs, f, BMode::MonteCarlo, reps, spec.seed)?
    };
    let bound = uniform_bound_rademacher(&terms)?;
    Ok((bound, json!({ "terms": terms, "bound_stderr": terms.bound_stderr() })))
}

fn parse_weights(spec: &ExperimentSpec) -> Result<(Vec<f64>, String)> {
    if let Some(w) = spec.model_params.get("weights") {
        let weights = w
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| parse_num("weights", s))
            .collect::<Result<Vec<f64>>>()?;
        return Ok((weights, "weights=custom".into()));
    }
    let m: usize = spec.get("m")?;
    Ok((vec![1.0; m], "weights=uniform".into()))
}

fn observe<F: RademacherFunctional + ?Sized>(
    spec: &ExperimentSpec,
    rs: &RademacherSpec,
    f: &F,
    simulate: impl FnOnce() -> Vec<f64>,
) -> Result<(Observed, String)> {
    let mode = spec.text_or("mode", "mc");
    match mode.as_str() {
        "enumerate" => Ok((Observed::Law(enumerate_distribution(rs, f)?, 1 << rs.support()), mode)),
        "mc" => Ok((Observed::Samples(batch(simulate(), spec)?), mode)),
        other => Err(config_err("mode", format!("expected enumerate or mc, got `{other}`"))),
    }
}

fn run_two_runs(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    let (weights, wdesc) = parse_weights(spec)?;
    let c: f64 = spec.get_or("c", 1.0)?;
    let m = weights.len();
    let tr = TwoRunsSpec::standardized(weights)?;
    let rs = tr.rademacher_spec();
    let (observed, mode) = observe(spec, &rs, &tr, || tr.simulate(spec.n_samples, spec.seed, spec.replicas))?;
    let default_bound = if tr.n_bits() <= MAX_ENUM_SUPPORT {
        "poincare"
    } else {
        "norm"
    };
    let norm = two_runs_norm_bound(&tr.weights)?;
    let (kind, bound, mut details) = match spec.text_or("bound", default_bound).as_str() {
        "poincare" => {
            let (b, d) = b_terms_details(spec, &rs, &tr)?;
            (BoundKind::PoincareRademacher, b, d)
        }
        "norm" => (BoundKind::NormRatio, norm, json!({})),
        other => return Err(config_err("bound", format!("expected poincare or norm, got `{other}`"))),
    };
    details["norm_bound"] = json!(norm);
    details["mean"] = json!(tr.mean);
    details["std_dev"] = json!(tr.std_dev);
    assemble(Assembly {
        spec,
        params: [format!("m={m}"), format!("mode={mode}"), wdesc, format!("c={c}")],
        observed,
        bound_kind: kind,
        bound_value: bound,
        tail_bound: None,
        details,
    })
}

fn run_er(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    let n: usize = spec.get("n")?;
    let p: f64 = spec.get("p")?;
    let pattern_name = spec.text_or("pattern", "triangle");
    let pattern = PatternGraph::by_name(&pattern_name)?;
    let pilot: usize = spec.get_or("pilot", 100_000)?;
    let c: f64 = spec.get_or("c", 1.0)?;
    let (er, how) = ErSpec::standardized(n, p, &pattern, pilot, spec.seed)?;
    let rs = er.rademacher_spec();
    let (observed, _) = observe(spec, &rs, &er, || er.simulate(spec.n_samples, spec.seed, spec.replicas))?;
    let scale = er_bound_scale(n, p, &pattern)?;
    let (kind, bound, mut details) = match spec.text_or("bound", "er_scale").as_str() {
        "er_scale" => (BoundKind::ErScale, scale, json!({})),
        "poincare" => {
            let (b, d) = b_terms_details(spec, &rs, &er)?;
            (BoundKind::PoincareRademacher, b, d)
        }
        other => {
            return Err(config_err(
                "bound",
                format!("expected er_scale or poincare, got `{other}`"),
            ))
        }
    };
    details["er_scale"] = json!(scale);
    details["standardization"] = json!(how);
    details["mean"] = json!(er.mean);
    details["std_dev"] = json!(er.std_dev);
    assemble(Assembly {
        spec,
        params: [
            format!("n={n}"),
            format!("p={p}"),
            format!("pattern={pattern_name}"),
            format!("c={c}"),
        ],
        observed,
        bound_kind: kind,
        bound_value: bound,
        tail_bound: None,
        details,
    })
}

fn run_custom(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    let path = spec.text_or("samples_path", "");
    if path.is_empty() {
        return Err(config_err("samples_path", "required for model custom"));
    }
    let b = SampleBatch::read(Path::new(&path))?;
    let kind: BoundKind = spec.text_or("bound_kind", "fourth_moment").parse()?;
    let bound: f64 = spec.get("bound_value")?;
    assemble(Assembly {
        spec,
        params: [
            format!("n={}", b.n_samples()),
            format!("samples={path}"),
            String::new(),
            String::new(),
        ],
        observed: Observed::Samples(b),
        bound_kind: kind,
        bound_value: bound,
        tail_bound: None,
        details: json!({}),
    })
}

/// Runs one experiment; deterministic in `(spec, seed)` for any thread count.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ReportRow> {
    Ok(run_experiment_detailed(spec)?.row)
}

pub fn run_experiment_detailed(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    match spec.model {
        Model::Fbm => run_fbm(spec),
        Model::Rgg => run_rgg(spec),
        Model::TwoRuns => run_two_runs(spec),
        Model::Er => run_er(spec),
        Model::Custom => run_custom(spec),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(config_err("format", format!("expected csv or json, got `{other}`"))),
        }
    }
}

/// Rows ordered by model, then size parameter, then id.
pub fn sort_rows(rows: &mut [ReportRow]) {
    rows.sort_by(|a, b| {
        a.model
            .cmp(&b.model)
            .then(a.size().unwrap_or(f64::NAN).total_cmp(&b.size().unwrap_or(f64::NAN)))
            .then(a.experiment_id.cmp(&b.experiment_id))
    });
}

/// Serializes sorted rows.
pub fn render_report(rows: &[ReportRow], format: Format) -> Result<String> {
    if rows.is_empty() {
        return domain("report needs at least one row");
    }
    let mut rows = rows.to_vec();
    sort_rows(&mut rows);
    match format {
        Format::Json => Ok(serde_json::to_string_pretty(&rows)? + "\n"),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in &rows {
                w.serialize(r).map_err(csv_err)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config {
            key: "csv".into(),
            message: format!("{other:?}"),
        },
    }
}

/// Writes sorted rows to `path`.
pub fn emit_report(rows: &[ReportRow], format: Format, path: &Path) -> Result<()> {
    std::fs::write(path, render_report(rows, format)?)?;
    Ok(())
}

/// Reads a report written by [`emit_report`]; the format follows the extension
/// (`.json`, anything else is CSV).
pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    if path.extension().is_some_and(|e| e == "json") {
        return Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?);
    }
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

/// Slope fit of `ln ks_uniform` against `ln size` and its comparison to an exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub model: Model,
    pub fit: RateFit,
    pub expected: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Default slope tolerance of [`rate_report`].
pub const RATE_TOLERANCE: f64 = 0.15;

pub fn rate_report(rows: &[ReportRow], expected: f64) -> Result<RateReport> {
    let Some(first) = rows.first() else {
        return domain("rate_report needs rows");
    };
    if rows.iter().any(|r| r.model != first.model) {
        return domain("rate_report rows mix several models");
    }
    let points = rows
        .iter()
        .map(|r| {
            r.size()
                .map(|n| (n, r.ks_uniform))
                .ok_or_else(|| Error::Domain(format!("row {} has no numeric size parameter", r.experiment_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sizes: Vec<f64> = points.iter().map(|p| p.0).collect();
    sizes.sort_by(f64::total_cmp);
    sizes.dedup();
    if sizes.len() < 3 {
        return domain(format!("rate_report needs >= 3 distinct sizes, got {}", sizes.len()));
    }
    let fit = fit_rate(&points)?;
    Ok(RateReport {
        model: first.model,
        fit,
        expected,
        tolerance: RATE_TOLERANCE,
        pass: (fit.slope - expected).abs() <= RATE_TOLERANCE,
    })
}
