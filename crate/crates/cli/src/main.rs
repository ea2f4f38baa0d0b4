use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use steinkit::harness::{
    emit_report, rate_report, read_report, render_report, run_experiment_detailed, ExperimentOutput, ExperimentSpec,
    Format, Model,
};
use steinkit::stein::SteinEval;

#[derive(Parser)]
#[command(
    name = "steinkit",
    version,
    about = "Normal-approximation experiments with explicit Berry-Esseen bounds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stein kernel utilities.
    Stein {
        #[command(subcommand)]
        action: SteinAction,
    },
    /// Quadratic variation of fractional Brownian motion.
    Fbm(FbmArgs),
    /// Subgraph counts in a random geometric graph on the unit cube.
    Rgg(RggArgs),
    /// Weighted 2-runs.
    Runs2(Runs2Args),
    /// Subgraph counts in an Erdős–Rényi graph.
    Er(ErArgs),
    /// Runs an experiment from a key = value config file.
    Run(RunArgs),
    /// Summarizes a report, optionally fitting the distance rate.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum SteinAction {
    /// Prints f_z(w), f_z'(w) and the Stein identity residual as JSON.
    Eval {
        #[arg(long, allow_hyphen_values = true)]
        z: f64,
        #[arg(long, allow_hyphen_values = true)]
        w: f64,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Independent random streams the run is split into.
    #[arg(long, default_value_t = 64)]
    replicas: usize,
    /// Weights k of the weighted distances.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    k: Vec<u32>,
    /// Report path; `.json` selects JSON, anything else CSV. Details go to `<out>.details.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `key=value` parameters.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct FbmArgs {
    #[arg(long)]
    hurst: f64,
    #[arg(long)]
    n: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum RggPattern {
    Edge,
    Triangle,
    Path3,
}

#[derive(Args)]
struct RggArgs {
    #[arg(long)]
    t: f64,
    #[arg(long)]
    r: f64,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, value_enum, default_value = "edge")]
    pattern: RggPattern,
    #[arg(long, default_value_t = 2000)]
    outer: usize,
    #[arg(long, default_value_t = 200)]
    inner: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Enumerate,
    Mc,
}

#[derive(Args)]
struct Runs2Args {
    /// File of weights separated by commas or whitespace.
    #[arg(long, conflicts_with = "uniform", required_unless_present = "uniform")]
    weights: Option<PathBuf>,
    /// Number of unit weights.
    #[arg(long)]
    uniform: Option<usize>,
    #[arg(long, value_enum, default_value = "mc")]
    mode: Mode,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ErArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: f64,
    #[arg(long, default_value = "triangle")]
    pattern: String,
    #[arg(long, value_enum, default_value = "mc")]
    mode: Mode,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    fit_rate: bool,
    /// Theoretical exponent for the rate verdict.
    #[arg(long, allow_hyphen_values = true)]
    exponent: Option<f64>,
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Enumerate => "enumerate",
        Mode::Mc => "mc",
    }
}

fn apply_overrides(spec: &mut ExperimentSpec, pairs: &[String]) -> steinkit::Result<()> {
    for pair in pairs {
        let (k, v) = pair.split_once('=').ok_or_else(|| steinkit::Error::Config {
            key: pair.clone(),
            message: "expected KEY=VALUE".into(),
        })?;
        spec.set(k.trim(), v)?;
    }
    Ok(())
}

fn base_spec(model: Model, c: &Common) -> steinkit::Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::new(model);
    spec.n_samples = c.samples;
    spec.seed = c.seed;
    spec.replicas = c.replicas;
    spec.weights_k = c.k.clone();
    if let Some(out) = &c.out {
        spec.output_path = out.display().to_string();
    }
    apply_overrides(&mut spec, &c.set)?;
    Ok(spec)
}

fn read_weights(path: &Path) -> steinkit::Result<String> {
    let text = std::fs::read_to_string(path)?;
    let parts: Vec<&str> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .collect();
    Ok(parts.join(","))
}

fn write_output(out: &ExperimentOutput, path: Option<&Path>) -> steinkit::Result<()> {
    let rows = std::slice::from_ref(&out.row);
    match path {
        Some(p) => {
            let format = if p.extension().is_some_and(|e| e == "json") {
                Format::Json
            } else {
                Format::Csv
            };
            emit_report(rows, format, p)?;
            let mut side = p.as_os_str().to_owned();
            side.push(".details.json");
            std::fs::write(PathBuf::from(side), serde_json::to_string_pretty(&out.details)? + "\n")?;
        }
        None => print!("{}", render_report(rows, Format::Csv)?),
    }
    Ok(())
}

fn run(cli: Cli) -> steinkit::Result<()> {
    let (spec, out) = match cli.command {
        Command::Stein {
            action: SteinAction::Eval { z, w },
        } => {
            let e = SteinEval::new(z, w)?;
            let v = serde_json::json!({
                "z": e.z,
                "w": e.w,
                "f": e.f,
                "f_prime": e.f_prime,
                "residual": e.identity_residual(),
            });
            println!("{}", serde_json::to_string_pretty(&v)?);
            return Ok(());
        }
        Command::Report(args) => {
            let rows = read_report(&args.input)?;
            print!("{}", render_report(&rows, Format::Csv)?);
            if args.fit_rate {
                let exponent = args.exponent.ok_or_else(|| steinkit::Error::Config {
                    key: "exponent".into(),
                    message: "required with --fit-rate".into(),
                })?;
                let rep = rate_report(&rows, exponent)?;
                println!("{}", serde_json::to_string_pretty(&rep)?);
                println!("verdict: {}", if rep.pass { "pass" } else { "fail" });
            }
            return Ok(());
        }
        Command::Fbm(a) => {
            let spec = base_spec(Model::Fbm, &a.common)?
                .with("hurst", a.hurst)?
                .with("n", a.n)?;
            (spec, a.common.out)
        }
        Command::Rgg(a) => {
            let pattern = match a.pattern {
                RggPattern::Edge => "edge",
                RggPattern::Triangle => "triangle",
                RggPattern::Path3 => "path3",
            };
            let spec = base_spec(Model::Rgg, &a.common)?
                .with("t", a.t)?
                .with("r", a.r)?
                .with("dim", a.dim)?
                .with("pattern", pattern)?
                .with("outer", a.outer)?
                .with("inner", a.inner)?;
            (spec, a.common.out)
        }
        Command::Runs2(a) => {
            let mut spec = base_spec(Model::TwoRuns, &a.common)?.with("mode", mode_name(a.mode))?;
            match (a.uniform, &a.weights) {
                (Some(m), _) => spec.set("m", &m.to_string())?,
                (None, Some(path)) => spec.set("weights", &read_weights(path)?)?,
                (None, None) => unreachable!("clap requires one of --weights, --uniform"),
            }
            (spec, a.common.out)
        }
        Command::Er(a) => {
            let spec = base_spec(Model::Er, &a.common)?
                .with("n", a.n)?
                .with("p", a.p)?
                .with("pattern", &a.pattern)?
                .with("mode", mode_name(a.mode))?;
            (spec, a.common.out)
        }
        Command::Run(a) => {
            let mut spec = ExperimentSpec::from_file(&a.config)?;
            apply_overrides(&mut spec, &a.set)?;
            let out = a
                .out
                .or_else(|| (!spec.output_path.is_empty()).then(|| PathBuf::from(&spec.output_path)));
            (spec, out)
        }
    };
    let output = run_experiment_detailed(&spec)?;
    write_output(&output, out.as_deref())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
