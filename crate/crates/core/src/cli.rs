//! Command-line front end: `validate`, `run` and `compare`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::control::Policy;
use crate::sim::{diagnose, parse_scenario, run_scenario, Diagnostic, MetricsReport, RunOutput, ScenarioConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "flowmesh", version, about = "Simulate a multi-tenant LLM workflow fabric")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a scenario file without running it.
    Validate {
        config: PathBuf,
        /// Override a field, e.g. `--set tuning.tick_s=0.5`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run a scenario and write report.json, report.csv, events.log and manifest.json.
    Run {
        config: PathBuf,
        /// A seed, or an inclusive range `a..b` (one subdirectory per seed).
        #[arg(long)]
        seed: Option<SeedSpec>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run several policies on the same workload and tabulate them.
    Compare {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "flowmesh,mf_first_fit,ds_static,dr_round_robin")]
        policies: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

/// `--seed` value: one seed or an inclusive range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedSpec {
    One(u64),
    Range(u64, u64),
}

impl SeedSpec {
    pub fn seeds(self) -> Vec<u64> {
        match self {
            SeedSpec::One(s) => vec![s],
            SeedSpec::Range(a, b) => (a..=b).collect(),
        }
    }
}

impl FromStr for SeedSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let num = |t: &str| t.trim().parse::<u64>().map_err(|_| format!("`{t}` is not a seed"));
        match s.split_once("..") {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(format!("empty seed range {a}..{b}"));
                }
                Ok(SeedSpec::Range(a, b))
            }
            None => Ok(SeedSpec::One(num(s)?)),
        }
    }
}

/// Record of one invocation's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config: String,
    pub seeds: Vec<u64>,
    pub out_dir: String,
    pub files: Vec<String>,
    pub tool_version: String,
    pub started_at_unix_s: f64,
    pub finished_at_unix_s: f64,
}

/// A failed command: message plus exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn invalid(diags: &[Diagnostic], path: &Path) -> Self {
        let mut message = String::new();
        for d in diags {
            let _ = writeln!(message, "{}:{d}", path.display());
        }
        CliError { code: EXIT_INVALID, message: message.trim_end().to_string() }
    }

    fn runtime(message: impl Into<String>) -> Self {
        CliError { code: EXIT_RUNTIME, message: message.into() }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::runtime(format!("{}: {e}", path.display()))
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Write through a temporary sibling and rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

/// Read, parse and statically check a scenario.
pub fn load_scenario(path: &Path, set: &[String]) -> Result<ScenarioConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError { code: EXIT_INVALID, message: format!("{}: {e}", path.display()) })?;
    let cfg = parse_scenario(&text, set).map_err(|d| CliError::invalid(&d, path))?;
    let diags = diagnose(&cfg);
    if !diags.is_empty() {
        return Err(CliError::invalid(&diags, path));
    }
    Ok(cfg)
}

pub fn cmd_validate(config: &Path, set: &[String]) -> Result<String, CliError> {
    load_scenario(config, set)?;
    Ok("OK".into())
}

fn run_one(cfg: &ScenarioConfig) -> Result<RunOutput, CliError> {
    log::info!("running `{}` policy={} seed={}", cfg.name, cfg.policy, cfg.seed);
    run_scenario(cfg).map_err(|e| CliError::runtime(format!("scenario `{}` seed {}: {e}", cfg.name, cfg.seed)))
}

/// Write the four per-run files into `dir`; report.json goes last.
fn write_run(dir: &Path, config: &Path, out: &RunOutput, started: f64) -> Result<RunManifest, CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_atomic(&dir.join("events.log"), out.log.to_ndjson().as_bytes())?;
    write_atomic(&dir.join("report.csv"), out.report.to_csv().as_bytes())?;
    write_atomic(&dir.join("report.json"), out.report.to_json().as_bytes())?;
    let manifest = RunManifest {
        config: config.display().to_string(),
        seeds: vec![out.report.seed],
        out_dir: dir.display().to_string(),
        files: ["report.json", "report.csv", "events.log", "manifest.json"].map(String::from).to_vec(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started_at_unix_s: started,
        finished_at_unix_s: unix_now(),
    };
    write_atomic(&dir.join("manifest.json"), to_pretty(&manifest).as_bytes())?;
    Ok(manifest)
}

fn to_pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn summary(r: &MetricsReport) -> String {
    format!(
        "{} seed {}: {}/{} workflows, cost ${:.4}, energy {:.0} J, avg latency {}",
        r.policy,
        r.seed,
        r.workflows_completed,
        r.workflows_submitted,
        r.total_cost,
        r.total_energy_j,
        r.avg_latency_s.map_or("n/a".into(), |l| format!("{l:.2} s"))
    )
}

pub fn cmd_run(config: &Path, seed: Option<SeedSpec>, out: &Path, set: &[String]) -> Result<Vec<RunManifest>, CliError> {
    let base = load_scenario(config, set)?;
    let mut manifests = Vec::new();
    match seed {
        Some(SeedSpec::Range(a, b)) => {
            for s in a..=b {
                let started = unix_now();
                let cfg = ScenarioConfig { seed: s, ..base.clone() };
                let result = run_one(&cfg)?;
                println!("{}", summary(&result.report));
                manifests.push(write_run(&out.join(format!("seed-{s}")), config, &result, started)?);
            }
        }
        single => {
            let started = unix_now();
            let cfg = ScenarioConfig { seed: single.map_or(base.seed, |s| s.seeds()[0]), ..base };
            let result = run_one(&cfg)?;
            println!("{}", summary(&result.report));
            manifests.push(write_run(out, config, &result, started)?);
        }
    }
    Ok(manifests)
}

/// One line of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub row: String,
    pub cost: f64,
    pub energy_j: f64,
    pub avg_latency_s: Option<f64>,
    pub cdp: Option<f64>,
    pub edp: Option<f64>,
    pub throughput_per_min: Option<f64>,
}

impl ComparisonRow {
    fn of(r: &MetricsReport) -> Self {
        ComparisonRow {
            row: r.policy.clone(),
            cost: r.total_cost,
            energy_j: r.total_energy_j,
            avg_latency_s: r.avg_latency_s,
            cdp: r.cdp,
            edp: r.edp,
            throughput_per_min: r.throughput_per_min,
        }
    }

    /// `self ÷ base`, field by field.
    fn ratio(&self, base: &ComparisonRow) -> Self {
        let div = |a: Option<f64>, b: Option<f64>| Some(a? / b?);
        ComparisonRow {
            row: format!("{}/{}", self.row, base.row),
            cost: self.cost / base.cost,
            energy_j: self.energy_j / base.energy_j,
            avg_latency_s: div(self.avg_latency_s, base.avg_latency_s),
            cdp: div(self.cdp, base.cdp),
            edp: div(self.edp, base.edp),
            throughput_per_min: div(self.throughput_per_min, base.throughput_per_min),
        }
    }
}

/// Policy rows followed by `baseline/flowmesh` ratio rows.
pub fn comparison_rows(reports: &[MetricsReport]) -> Vec<ComparisonRow> {
    let rows: Vec<ComparisonRow> = reports.iter().map(ComparisonRow::of).collect();
    let mut out = rows.clone();
    if let Some(fm) = rows.iter().find(|r| r.row == Policy::FlowMesh.to_string()) {
        out.extend(rows.iter().filter(|r| r.row != fm.row).map(|r| r.ratio(fm)));
    }
    out
}

fn csv_of<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("csv row");
    }
    w.into_inner().expect("in-memory writer")
}

fn render_table(rows: &[ComparisonRow]) -> String {
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    let mut s = format!("{:<32} {:>10} {:>14} {:>10} {:>12} {:>14} {:>10}\n", "row", "cost", "energy_j", "latency", "cdp", "edp", "thr/min");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<32} {:>10.4} {:>14.4} {:>10} {:>12} {:>14} {:>10}",
            r.row,
            r.cost,
            r.energy_j,
            opt(r.avg_latency_s),
            opt(r.cdp),
            opt(r.edp),
            opt(r.throughput_per_min)
        );
    }
    s
}

pub fn cmd_compare(config: &Path, policies: &[String], seed: Option<u64>, out: &Path, set: &[String]) -> Result<Vec<ComparisonRow>, CliError> {
    let started = unix_now();
    let base = load_scenario(config, set)?;
    let mut parsed = Vec::new();
    for p in policies {
        let policy: Policy = p.parse().map_err(|e: String| CliError { code: EXIT_INVALID, message: e })?;
        parsed.push(policy);
    }
    if parsed.is_empty() {
        return Err(CliError { code: EXIT_INVALID, message: "no policies given".into() });
    }
    let seed = seed.unwrap_or(base.seed);
    let mut reports = Vec::new();
    let mut files = Vec::new();
    for policy in parsed {
        let cfg = ScenarioConfig { policy, seed, ..base.clone() };
        let t0 = unix_now();
        let result = run_one(&cfg)?;
        write_run(&out.join(policy.to_string()), config, &result, t0)?;
        files.extend(["report.json", "report.csv", "events.log", "manifest.json"].map(|f| format!("{policy}/{f}")));
        reports.push(result.report);
    }

    let rows = comparison_rows(&reports);
    write_atomic(&out.join("comparison.csv"), &csv_of(&rows))?;
    #[derive(Serialize)]
    struct Active<'a> {
        policy: &'a str,
        t_s: f64,
        active_workers: usize,
    }
    #[derive(Serialize)]
    struct Cdf<'a> {
        policy: &'a str,
        latency_s: f64,
        fraction: f64,
    }
    let active = reports.iter().flat_map(|r| r.active_workers.iter().map(|&(t_s, active_workers)| Active { policy: &r.policy, t_s, active_workers }));
    write_atomic(&out.join("active_workers.csv"), &csv_of(active))?;
    let cdf = reports.iter().flat_map(|r| {
        let mut l = r.latencies_s.clone();
        l.sort_by(f64::total_cmp);
        let n = l.len() as f64;
        l.into_iter().enumerate().map(move |(i, latency_s)| Cdf { policy: &r.policy, latency_s, fraction: (i + 1) as f64 / n })
    });
    write_atomic(&out.join("latency_cdf.csv"), &csv_of(cdf))?;
    files.extend(["comparison.csv", "active_workers.csv", "latency_cdf.csv", "manifest.json"].map(String::from));
    let manifest = RunManifest {
        config: config.display().to_string(),
        seeds: vec![seed],
        out_dir: out.display().to_string(),
        files,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started_at_unix_s: started,
        finished_at_unix_s: unix_now(),
    };
    write_atomic(&out.join("manifest.json"), to_pretty(&manifest).as_bytes())?;
    print!("{}", render_table(&rows));
    Ok(rows)
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("FLOWMESH_LOG_LEVEL", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parse arguments, dispatch, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Validate { config, set } => cmd_validate(config, set).map(|msg| println!("{msg}")),
        Command::Run { config, seed, out, set } => cmd_run(config, *seed, out, set).map(drop),
        Command::Compare { config, policies, seed, out, set } => cmd_compare(config, policies, *seed, out, set).map(drop),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
