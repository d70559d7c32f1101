//! The `lamplighter` command-line tool.
//!
//! Every scalar option is a flag. `--config FILE` may supply the same keys
//! (flag names without the leading dashes) as a JSON object; a key that is
//! also given on the command line with a different value is an error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;
use thiserror::Error;

use lamplighter::constructions::mu_alpha;
use lamplighter::diagnostics::{
    entropy_rate_alpha, invariance_test, stabilization, tau_survival, theorem2_report,
    theorem3_report, to_json, ReportParams, StabilizationReport,
};
use lamplighter::measures::{budget_from_env, pushforward, AnyMeasure, Hom};
use lamplighter::selfcheck::{run_selfcheck, LampLaw, SelfCheckReport, StandardLaw};
use lamplighter::walks::{run_path, write_path_csv, Projection, SemiDiagModel};
use lamplighter::{AlphaSpec, Configuration, CouplingSpec, WalkModel, DEFAULT_SEED};

pub mod exit {
    pub const OK: i32 = 0;
    pub const SELFCHECK_FAILED: i32 = 1;
    pub const INVALID_CONFIG: i32 = 2;
    pub const BUDGET_EXCEEDED: i32 = 3;
    pub const IO: i32 = 4;
}

/// Coupling used by the semi-diagonal commands unless one is given.
pub const DEFAULT_COUPLING: &str = "transposition@1+diagonal";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("self-check failed: first failing invariant is {0}")]
    SelfCheck(&'static str),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::INVALID_CONFIG,
            CliError::Budget(_) => exit::BUDGET_EXCEEDED,
            CliError::SelfCheck(_) => exit::SELFCHECK_FAILED,
            CliError::Io { .. } => exit::IO,
        }
    }
}

fn lib_err<E: Into<lamplighter::Error>>(e: E) -> CliError {
    let e = e.into();
    if e.is_budget() {
        CliError::Budget(e.to_string())
    } else {
        CliError::Config(e.to_string())
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "lamplighter",
    version,
    about = "Random walks on the lamplighter group: exact convolution, entropy, couplings and stabilization experiments"
)]
struct Cli {
    /// Maximum number of worker threads. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Randomized self-test of the group laws, homomorphisms and measure operations
    Selfcheck(SelfcheckArgs),
    /// Exact entropies H(mu^{*t}) for a finitely supported alpha
    Entropy(EntropyArgs),
    /// Monte Carlo survival P{tau > t0} of the stopping time
    Tau(TauArgs),
    /// Exact |phi lambda_t - lambda_t| against the coupling bound 2 P{tau > t}
    Invariance(InvarianceArgs),
    /// Window stabilization of lamp configurations
    Stabilize(StabilizeArgs),
    /// One-sided Liouville report: mu Liouville, reflected measure not
    Theorem2(OneSidedArgs),
    /// Semi-diagonal report: non-Liouville measure with Liouville marginals
    Theorem3(SemiDiagArgs),
    /// Convolution powers, reflections and pushforwards of explicit measures
    Convolve(ConvolveArgs),
}

#[derive(ValueEnum, Serialize, Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Json,
}

#[derive(ValueEnum, Serialize, Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum Walk {
    Base,
    Reflected,
    Pi,
    Piprime,
    Pibar,
}

#[derive(ValueEnum, Serialize, Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum PushHom {
    Pi,
    Piprime,
    Pibar,
    Embed,
    Omega,
    Inversion,
}

fn parse_seed(text: &str) -> Result<u64, String> {
    let t = text.trim();
    let parsed = match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => t.parse(),
    };
    parsed.map_err(|_| format!("{text:?} is not a decimal or 0x-prefixed hexadecimal u64"))
}

fn seed_from_json<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Number(u64),
        Text(String),
    }
    match Option::<Raw>::deserialize(d)? {
        None => Ok(None),
        Some(Raw::Number(n)) => Ok(Some(n)),
        Some(Raw::Text(s)) => parse_seed(&s).map(Some).map_err(serde::de::Error::custom),
    }
}

/// Options shared by every experiment.
#[derive(Args, Serialize, Deserialize, Debug, Default)]
#[serde(rename_all = "kebab-case")]
struct Common {
    /// Master seed, decimal or 0x-prefixed hex (default 0xC0FFEE)
    #[arg(long, value_parser = parse_seed)]
    #[serde(default, deserialize_with = "seed_from_json")]
    seed: Option<u64>,
    /// Output file (standard output when omitted). CSV runs with several
    /// tables write the others next to it as <stem>_<table>.csv
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format (default csv; json for the theorem reports)
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// JSON file with further options; conflicts with flags are errors
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

impl Common {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }
}

#[derive(Args, Serialize, Deserialize, Debug)]
#[serde(rename_all = "kebab-case")]
struct SelfcheckArgs {
    /// Random instances per check (default 10000)
    #[arg(long)]
    samples: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Serialize, Deserialize, Debug)]
#[serde(rename_all = "kebab-case")]
struct EntropyArgs {
    /// Weight sequence: finite:w1,w2,...
    #[arg(long)]
    alpha: Option<String>,
    /// Largest convolution power (default 10)
    #[arg(long)]
    t_max: Option<u32>,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Serialize, Deserialize, Debug)]
#[serde(rename_all = "kebab-case")]
struct TauArgs {
    /// Weight sequence: finite:w1,..., geometric or zeta2
    #[arg(long)]
    alpha: Option<String>,
    /// Range |phi| of the test configuration (default 1)
    #[arg(long)]
    phi_range: Option<u64>,
    /// Comma-separated times t0 (default 10,100,1000,10000)
    #[arg(long)]
    t0: Option<String>,
    /// Number of sample paths (default 100000)
    #[arg(long)]
    paths: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Serialize, Deserialize, Debug)]
#[serde(rename_all = "kebab-case")]
struct InvarianceArgs {
    /// Weight sequence: finite:w1,..., geometric or zeta2
    #[arg(long)]
    alpha: Option<String>,
    /// Truncation level for infinitely supported alpha (default 12)
    #[arg(long)]
    truncate: Option<u32>,
    /// Test configuration, e.g. "{0}" (default {0})
    #[arg(long, allow_hyphen_values = true)]
    phi: Option<String>,
    /// Largest time t (default 8)
    #[arg(long)]
    t_max: Option<u32>,
    /// Monte Carlo paths for the bound (default 100000)
    #[arg(long)]
    paths: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Serialize, Deserialize, Debug)]
#[serde(rename_all = "kebab-case")]
struct WindowArgs {
    /// Leftmost lamp of the window
    #[arg(long, allow_negative_numbers = true)]
    window_lo: Option<i64>,
    /// Rightmost lamp of the window
    #[arg(long, allow_negative_numbers = true)]
    window_hi: Option<i64>,
    /// Number of steps per path (default 200)
    #[arg(long)]
    horizon: Option<u64>,
    /// Flips after this time are counted as late (default 40)
    #[arg(long)]
    cutoff: Option<u64>,
    /// Number of sample paths (default 10000)
    #[arg(long)]
    paths: Option<u64>,
}

#[derive(Args, Serialize, Deserialize, Debug)]
#[serde(rename_all = "kebab-case")]
struct StabilizeArgs {
    /// Which walk to simulate (default base)
    #[arg(long, value_enum)]
    walk: Option<Walk>,
    /// Weight sequence: finite:w1,..., geometric or zeta2
    #[arg(long)]
    alpha: Option<String>,
    /// Coupling recipe for the projected walks (default transposition@1+diagonal)
    #[arg(long)]
    coupling: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    window: WindowArgs,
    /// Also write the full first sample path as CSV to this file
    #[arg(long)]
    dump_path: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Serialize, Deserialize, Debug)]
#[serde(rename_all = "kebab-case")]
struct ReportArgs {
    /// Weight sequence (default zeta2)
    #[arg(long)]
    alpha: Option<String>,
    /// Truncation level for exact sub-computations (default 12)
    #[arg(long)]
    truncate: Option<u32>,
    /// Range |phi| for the tau survival section (default 1)
    #[arg(long)]
    tau_range: Option<u64>,
    /// Comma-separated times t0 for the tau survival section
    #[arg(long)]
    tau_t0: Option<String>,
    /// Paths for the tau survival section (default 100000)
    #[arg(long)]
    tau_paths: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    window: WindowArgs,
}

#[derive(Args, Serialize, Deserialize, Debug)]
#[serde(rename_all = "kebab-case")]
struct OneSidedArgs {
    #[command(flatten)]
    #[serde(flatten)]
    report: ReportArgs,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Serialize, Deserialize, Debug)]
#[serde(rename_all = "kebab-case")]
struct SemiDiagArgs {
    #[command(flatten)]
    #[serde(flatten)]
    report: ReportArgs,
    /// Coupling recipe (default transposition@1+diagonal)
    #[arg(long)]
    coupling: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Serialize, Deserialize, Debug)]
#[serde(rename_all = "kebab-case")]
struct ConvolveArgs {
    /// Measure CSV file (element,mass rows); alternative to --alpha
    #[arg(long)]
    input: Option<PathBuf>,
    /// Build mu_alpha from this weight sequence instead of reading --input
    #[arg(long)]
    alpha: Option<String>,
    /// Truncation level for infinitely supported alpha
    #[arg(long)]
    truncate: Option<u32>,
    /// Reflect the measure (g -> g^-1) before anything else
    #[arg(long)]
    reflect: bool,
    /// Push the measure forward through a homomorphism
    #[arg(long, value_enum)]
    push: Option<PushHom>,
    /// Convolution power (default 1)
    #[arg(long)]
    t: Option<u32>,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

/// Fills unset options from the `--config` file, refusing conflicts and
/// unknown keys.
fn merge_config<T: Serialize + DeserializeOwned>(
    args: T,
    config: Option<&Path>,
) -> Result<T, CliError> {
    let Some(path) = config else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let shown = path.display();
    let cfg: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{shown}: {e}")))?;
    let Value::Object(cfg) = cfg else {
        return Err(CliError::Config(format!("{shown}: expected a JSON object")));
    };
    let mut current = serde_json::to_value(&args).expect("arguments serialize");
    let flags = current.as_object_mut().expect("arguments form an object");
    for (key, value) in cfg {
        match flags.get(&key) {
            None => return Err(CliError::Config(format!("{shown}: unknown option {key:?}"))),
            Some(Value::Null) | Some(Value::Bool(false)) => {
                flags.insert(key, value);
            }
            Some(given) if *given == value => {}
            Some(given) => {
                return Err(CliError::Config(format!(
                    "--{key} is {given} on the command line but {value} in {shown}"
                )))
            }
        }
    }
    serde_json::from_value(current).map_err(|e| CliError::Config(format!("{shown}: {e}")))
}

fn require<'a>(value: &'a Option<String>, flag: &str) -> Result<&'a str, CliError> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Config(format!("--{flag} is required")))
}

fn parse_alpha(text: &str) -> Result<AlphaSpec, CliError> {
    text.parse().map_err(lib_err)
}

fn parse_coupling(text: &str) -> Result<CouplingSpec, CliError> {
    text.parse().map_err(lib_err)
}

fn parse_list(text: &str, flag: &str) -> Result<Vec<u64>, CliError> {
    text.split(',')
        .map(|x| {
            x.trim().parse().map_err(|_| {
                CliError::Config(format!("--{flag}: {x:?} is not a non-negative integer"))
            })
        })
        .collect()
}

fn positive(value: u64, flag: &str) -> Result<u64, CliError> {
    if value == 0 {
        return Err(CliError::Config(format!("--{flag} must be positive")));
    }
    Ok(value)
}

/// Writes to `path`, or to standard output when there is none.
fn emit<F>(path: Option<&Path>, write: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    match path {
        Some(p) => {
            let file = File::create(p).map_err(io_err(p))?;
            let mut w = BufWriter::new(file);
            write(&mut w).and_then(|_| w.flush()).map_err(io_err(p))
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)
                .and_then(|_| lock.flush())
                .map_err(io_err(Path::new("<stdout>")))
        }
    }
}

/// `<dir>/<stem>_<table>.csv` next to `out`.
fn sibling(out: &Path, table: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    out.with_file_name(format!("{stem}_{table}.csv"))
}

fn measure_io(e: lamplighter::MeasureError) -> std::io::Error {
    match e {
        lamplighter::MeasureError::Io(e) => e,
        other => std::io::Error::other(other.to_string()),
    }
}

/// A named CSV table of a report.
type Table<'a> = (
    &'static str,
    Box<dyn Fn(&mut dyn Write) -> Result<(), lamplighter::MeasureError> + 'a>,
);

/// Writes a JSON report, or its CSV tables: the first to `--out`, the rest
/// next to it (only when `--out` names a file).
fn write_report<T: Serialize>(
    common: &Common,
    default: Format,
    report: &T,
    tables: Vec<Table<'_>>,
) -> Result<(), CliError> {
    match common.format.unwrap_or(default) {
        Format::Json => emit(common.out.as_deref(), |w| {
            w.write_all(to_json(report).as_bytes())
        }),
        Format::Csv => {
            let mut tables = tables.into_iter();
            let (_, first) = tables.next().expect("every report has a table");
            emit(common.out.as_deref(), |w| first(w).map_err(measure_io))?;
            if let Some(out) = &common.out {
                for (name, table) in tables {
                    emit(Some(&sibling(out, name)), |w| table(w).map_err(measure_io))?;
                }
            }
            Ok(())
        }
    }
}

fn with_config<T: Serialize + DeserializeOwned>(
    args: T,
    common: impl Fn(&T) -> &Common,
) -> Result<T, CliError> {
    let path = common(&args).config.clone();
    merge_config(args, path.as_deref())
}

/// Runs the self-check with the given law and reports to `stdout`.
pub fn selfcheck_with<L: LampLaw>(
    law: &L,
    samples: u64,
    seed: u64,
    stdout: &mut dyn Write,
) -> Result<SelfCheckReport, CliError> {
    let report = run_selfcheck(law, samples, seed);
    let io = io_err(Path::new("<stdout>"));
    for c in &report.checks {
        let status = if c.passed { "ok" } else { "FAILED" };
        writeln!(stdout, "{status:6} {:28} {} cases", c.name, c.cases).map_err(&io)?;
    }
    writeln!(
        stdout,
        "{} checks, {} cases, {} failed",
        report.checks.len(),
        report.total_cases(),
        report.checks.iter().filter(|c| !c.passed).count()
    )
    .map_err(&io)?;
    Ok(report)
}

fn cmd_selfcheck(args: SelfcheckArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let args = with_config(args, |a| &a.common)?;
    let samples = positive(args.samples.unwrap_or(10_000), "samples")?;
    let report = selfcheck_with(&StandardLaw, samples, args.common.seed(), stdout)?;
    if args.common.out.is_some() {
        emit(args.common.out.as_deref(), |w| {
            w.write_all(to_json(&report).as_bytes())
        })?;
    }
    match report.first_failure() {
        Some(name) => Err(CliError::SelfCheck(name)),
        None => Ok(()),
    }
}

fn cmd_entropy(args: EntropyArgs) -> Result<(), CliError> {
    let args = with_config(args, |a| &a.common)?;
    let alpha = parse_alpha(require(&args.alpha, "alpha")?)?;
    let t_max = positive(u64::from(args.t_max.unwrap_or(10)), "t-max")? as u32;
    let report = entropy_rate_alpha(&alpha, t_max, budget_from_env()).map_err(lib_err)?;
    write_report(
        &args.common,
        Format::Csv,
        &report,
        vec![("entropy", Box::new(|w| report.write_csv(w)))],
    )?;
    match &report.budget_note {
        Some(note) => Err(CliError::Budget(note.clone())),
        None => Ok(()),
    }
}

fn cmd_tau(args: TauArgs) -> Result<(), CliError> {
    let args = with_config(args, |a| &a.common)?;
    let alpha = parse_alpha(require(&args.alpha, "alpha")?)?;
    let t0 = parse_list(args.t0.as_deref().unwrap_or("10,100,1000,10000"), "t0")?;
    let paths = positive(args.paths.unwrap_or(100_000), "paths")?;
    let report = tau_survival(
        &alpha,
        args.phi_range.unwrap_or(1),
        &t0,
        paths,
        args.common.seed(),
    )
    .map_err(lib_err)?;
    write_report(
        &args.common,
        Format::Csv,
        &report,
        vec![("tau", Box::new(|w| report.write_csv(w)))],
    )
}

fn cmd_invariance(args: InvarianceArgs) -> Result<(), CliError> {
    let args = with_config(args, |a| &a.common)?;
    let alpha = parse_alpha(require(&args.alpha, "alpha")?)?;
    let phi: Configuration = args
        .phi
        .as_deref()
        .unwrap_or("{0}")
        .parse()
        .map_err(lib_err)?;
    let t_max = positive(u64::from(args.t_max.unwrap_or(8)), "t-max")? as u32;
    let paths = positive(args.paths.unwrap_or(100_000), "paths")?;
    let report = invariance_test(
        &alpha,
        Some(args.truncate.unwrap_or(12)),
        &phi,
        t_max,
        paths,
        args.common.seed(),
        budget_from_env(),
    )
    .map_err(lib_err)?;
    write_report(
        &args.common,
        Format::Csv,
        &report,
        vec![("invariance", Box::new(|w| report.write_csv(w)))],
    )
}

struct WindowParams {
    window: (i64, i64),
    horizon: u64,
    cutoff: u64,
    paths: u64,
}

impl WindowArgs {
    fn resolve(&self, default_window: Option<(i64, i64)>) -> Result<WindowParams, CliError> {
        let window = match (self.window_lo, self.window_hi, default_window) {
            (Some(lo), Some(hi), _) => (lo, hi),
            (None, None, Some(w)) => w,
            (lo, hi, Some(w)) => (lo.unwrap_or(w.0), hi.unwrap_or(w.1)),
            _ => {
                return Err(CliError::Config(
                    "--window-lo and --window-hi are required".into(),
                ))
            }
        };
        if window.1 < window.0 {
            return Err(CliError::Config(format!(
                "window [{}..{}] is empty",
                window.0, window.1
            )));
        }
        Ok(WindowParams {
            window,
            horizon: self.horizon.unwrap_or(200),
            cutoff: self.cutoff.unwrap_or(40),
            paths: positive(self.paths.unwrap_or(10_000), "paths")?,
        })
    }
}

fn stabilization_tables(report: &StabilizationReport) -> Vec<Table<'_>> {
    vec![
        ("positions", Box::new(|w| report.write_positions_csv(w))),
        ("limit", Box::new(|w| report.write_limit_csv(w))),
    ]
}

fn cmd_stabilize(args: StabilizeArgs) -> Result<(), CliError> {
    let args = with_config(args, |a| &a.common)?;
    let alpha = parse_alpha(require(&args.alpha, "alpha")?)?;
    let semi = || -> Result<SemiDiagModel, CliError> {
        Ok(SemiDiagModel {
            alpha: alpha.clone(),
            coupling: parse_coupling(args.coupling.as_deref().unwrap_or(DEFAULT_COUPLING))?,
        })
    };
    let model = match args.walk.unwrap_or(Walk::Base) {
        Walk::Base => WalkModel::Base(alpha.clone()),
        Walk::Reflected => WalkModel::Reflected(alpha.clone()),
        Walk::Pi => WalkModel::Projected(semi()?, Projection::Pi),
        Walk::Piprime => WalkModel::Projected(semi()?, Projection::PiPrime),
        Walk::Pibar => WalkModel::Projected(semi()?, Projection::PiBar),
    };
    let p = args.window.resolve(None)?;
    let seed = args.common.seed();
    let report =
        stabilization(&model, p.window, p.horizon, p.paths, p.cutoff, seed).map_err(lib_err)?;
    if let Some(warning) = &report.warning {
        eprintln!("warning: {warning}");
    }
    if let Some(dump) = &args.dump_path {
        let path = run_path(&model, p.horizon, seed).map_err(lib_err)?;
        emit(Some(dump), |w| write_path_csv(&path, w))?;
    }
    write_report(
        &args.common,
        Format::Csv,
        &report,
        stabilization_tables(&report),
    )
}

impl ReportArgs {
    fn params(&self, defaults: ReportParams) -> Result<ReportParams, CliError> {
        let w = self.window.resolve(Some(defaults.window))?;
        Ok(ReportParams {
            truncate: self.truncate.unwrap_or(defaults.truncate),
            tau_range: self.tau_range.unwrap_or(defaults.tau_range),
            tau_t0: match &self.tau_t0 {
                Some(list) => parse_list(list, "tau-t0")?,
                None => defaults.tau_t0,
            },
            tau_paths: positive(self.tau_paths.unwrap_or(defaults.tau_paths), "tau-paths")?,
            window: w.window,
            cutoff: self.window.cutoff.unwrap_or(defaults.cutoff),
            horizon: self.window.horizon.unwrap_or(defaults.horizon),
            paths: positive(self.window.paths.unwrap_or(defaults.paths), "paths")?,
            ..defaults
        })
    }

    fn alpha(&self) -> Result<AlphaSpec, CliError> {
        parse_alpha(self.alpha.as_deref().unwrap_or("zeta2"))
    }
}

fn cmd_theorem2(args: OneSidedArgs) -> Result<(), CliError> {
    let args = with_config(args, |a| &a.common)?;
    let alpha = args.report.alpha()?;
    let params = args
        .report
        .params(ReportParams::one_sided_defaults(args.common.seed()))?;
    let report = theorem2_report(&alpha, &params).map_err(lib_err)?;
    let entropy = |w: &mut dyn Write| -> Result<(), lamplighter::MeasureError> {
        writeln!(w, "truncate,partial_entropy,defect")?;
        for row in &report.entropy_divergence {
            writeln!(
                w,
                "{},{:.16e},{:.16e}",
                row.truncate, row.partial_entropy, row.defect
            )?;
        }
        Ok(())
    };
    let mut tables: Vec<Table<'_>> = vec![
        ("tau", Box::new(|w| report.liouville_evidence.write_csv(w))),
        ("entropy", Box::new(entropy)),
    ];
    tables.extend(stabilization_tables(&report.reflected_stabilization));
    write_report(&args.common, Format::Json, &report, tables)
}

fn cmd_theorem3(args: SemiDiagArgs) -> Result<(), CliError> {
    let args = with_config(args, |a| &a.common)?;
    let alpha = args.report.alpha()?;
    let coupling = parse_coupling(args.coupling.as_deref().unwrap_or(DEFAULT_COUPLING))?;
    let params = args
        .report
        .params(ReportParams::semidiag_defaults(args.common.seed()))?;
    let report = theorem3_report(&alpha, &coupling, &params, budget_from_env()).map_err(lib_err)?;
    let mut tables: Vec<Table<'_>> =
        vec![("tau", Box::new(|w| report.marginal_evidence.write_csv(w)))];
    tables.extend(stabilization_tables(&report.difference_stabilization));
    write_report(&args.common, Format::Json, &report, tables)
}

#[derive(Serialize)]
struct MeasureDoc {
    kind: &'static str,
    atoms: usize,
    defect: f64,
    entropy: Option<f64>,
    entries: Vec<(String, f64)>,
}

fn measure_doc(mu: &AnyMeasure) -> MeasureDoc {
    fn rows<E: lamplighter::GroupElement>(m: &lamplighter::SparseMeasure<E>) -> Vec<(String, f64)> {
        m.iter().map(|(g, x)| (g.to_string(), x)).collect()
    }
    let entries = match mu {
        AnyMeasure::Config(m) => rows(m),
        AnyMeasure::Lamp(m) => rows(m),
        AnyMeasure::SemiDiag(m) => rows(m),
        AnyMeasure::ConfigPair(m) => rows(m),
        AnyMeasure::LampPair(m) => rows(m),
    };
    MeasureDoc {
        kind: mu.kind(),
        atoms: mu.len(),
        defect: mu.defect(),
        entropy: mu.entropy().ok(),
        entries,
    }
}

fn cmd_convolve(args: ConvolveArgs) -> Result<(), CliError> {
    let args = with_config(args, |a| &a.common)?;
    let mut mu = match (&args.input, &args.alpha) {
        (Some(path), None) => {
            let file = File::open(path).map_err(io_err(path))?;
            AnyMeasure::read_csv(BufReader::new(file)).map_err(lib_err)?
        }
        (None, Some(alpha)) => {
            AnyMeasure::Lamp(mu_alpha(&parse_alpha(alpha)?, args.truncate).map_err(lib_err)?)
        }
        _ => {
            return Err(CliError::Config(
                "exactly one of --input and --alpha is required".into(),
            ))
        }
    };
    if args.reflect {
        mu = mu.reflect().map_err(lib_err)?;
    }
    if let Some(hom) = args.push {
        let hom = match hom {
            PushHom::Pi => Hom::Pi,
            PushHom::Piprime => Hom::PiPrime,
            PushHom::Pibar => Hom::PiBar,
            PushHom::Embed => Hom::Embed,
            PushHom::Omega => Hom::Omega,
            PushHom::Inversion => Hom::Inversion,
        };
        mu = pushforward(hom, &mu).map_err(lib_err)?;
    }
    let t = positive(u64::from(args.t.unwrap_or(1)), "t")? as u32;
    if t > 1 {
        mu = mu.convolve_power(t, budget_from_env()).map_err(lib_err)?;
    }
    match args.common.format.unwrap_or(Format::Csv) {
        Format::Csv => emit(args.common.out.as_deref(), |w| {
            mu.write_csv(w).map_err(measure_io)
        }),
        Format::Json => emit(args.common.out.as_deref(), |w| {
            w.write_all(to_json(&measure_doc(&mu)).as_bytes())
        }),
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Selfcheck(a) => cmd_selfcheck(a, &mut std::io::stdout()),
        Command::Entropy(a) => cmd_entropy(a),
        Command::Tau(a) => cmd_tau(a),
        Command::Invariance(a) => cmd_invariance(a),
        Command::Stabilize(a) => cmd_stabilize(a),
        Command::Theorem2(a) => cmd_theorem2(a),
        Command::Theorem3(a) => cmd_theorem3(a),
        Command::Convolve(a) => cmd_convolve(a),
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                exit::INVALID_CONFIG
            } else {
                exit::OK
            };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
    {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return exit::IO;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs the self-check with `law` and returns the exit code the
/// `selfcheck` command would use, reporting to `stdout`.
pub fn selfcheck_exit_code<L: LampLaw>(
    law: &L,
    samples: u64,
    seed: u64,
    stdout: &mut dyn Write,
) -> i32 {
    let outcome = selfcheck_with(law, samples, seed, stdout).and_then(|report| {
        match report.first_failure() {
            Some(name) => Err(CliError::SelfCheck(name)),
            None => Ok(()),
        }
    });
    match outcome {
        Ok(()) => exit::OK,
        Err(e) => {
            let _ = writeln!(stdout, "error: {e}");
            e.exit_code()
        }
    }
}
