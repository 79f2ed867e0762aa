//! `sojd` command-line interface.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sojd::config::ExperimentConfig;
use sojd::estimators::{self, FourthMoment, GridOptions};
use sojd::generator::{self, McOptions};
use sojd::harness::{self, ExperimentReport};
use sojd::io;
use sojd::kernels::{Bandwidth, KernelSpec};
use sojd::par::{self, Execution};
use sojd::presets::{Preset, PresetParams};
use sojd::simulator::{self, SimConfig};
use sojd::{Error, Result};

const EXIT_VALIDATION: u8 = 1;
const EXIT_NUMERIC: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "sojd", version, about = "Simulate and estimate second-order jump-diffusions observed through their integral")]
struct Cli {
    /// Worker threads [count]; 0 uses all cores. Results do not depend on it.
    #[arg(long, global = true, env = "SOJD_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Command {
    /// Simulate a fine path of (X, Y) and optionally its sampled observations.
    Simulate(SimulateArgs),
    /// Evaluate p̂, â and b̂ on a grid from integrated observations.
    Estimate(EstimateArgs),
    /// Monte Carlo check of a conditional-moment relation.
    Verify(VerifyArgs),
    /// Run a replicated consistency/normality experiment.
    Experiment(ExperimentArgs),
    /// Merge experiment reports and evaluate the checks.
    Summarize(SummarizeArgs),
    /// Re-run the command recorded in a manifest and compare outputs.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
struct ModelArgs {
    /// Model preset: ou-jump or cir-jump.
    #[arg(long, default_value = "ou-jump")]
    model: Preset,
    /// Mean-reversion speed of ou-jump [1/time].
    #[arg(long)]
    theta: Option<f64>,
    /// Diffusion scale [state/sqrt(time)].
    #[arg(long)]
    s: Option<f64>,
    /// Jump intensity λ [jumps/time]; 0 disables jumps.
    #[arg(long)]
    lambda: Option<f64>,
    /// Standard deviation of normal jump marks [state].
    #[arg(long)]
    eta: Option<f64>,
    /// Mean-reversion speed of cir-jump [1/time].
    #[arg(long)]
    kappa: Option<f64>,
    /// Long-run level of cir-jump [state].
    #[arg(long)]
    alpha: Option<f64>,
}

impl ModelArgs {
    fn params(&self) -> Result<PresetParams> {
        let mut p = PresetParams::new(self.model);
        for (key, v) in [
            ("theta", self.theta),
            ("s", self.s),
            ("lambda", self.lambda),
            ("eta", self.eta),
            ("kappa", self.kappa),
            ("alpha", self.alpha),
        ] {
            if let Some(v) = v {
                p.set(key, v)?;
            }
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Time horizon [time units].
    #[arg(long = "T", default_value_t = 10.0)]
    horizon: f64,
    /// Fine Euler step δ [time units].
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Initial state X_0 [state]; defaults to the preset's long-run level.
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<f64>,
    /// Initial integral Y_0 [state·time].
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    y0: f64,
    /// RNG seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output CSV of the fine path, columns t,x,y.
    #[arg(long)]
    out: PathBuf,
    /// Sampling step Δ [time units], an integer multiple of --dt.
    #[arg(long, requires = "obs_out")]
    delta: Option<f64>,
    /// Output CSV of observations, columns i,t,y_obs,x_tilde,x_true.
    #[arg(long, requires = "delta")]
    obs_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
struct EstimateArgs {
    /// Observation CSV with a time column t and Y column y_obs or y.
    #[arg(long)]
    input: PathBuf,
    /// Evaluation grid lo:hi:count [state].
    #[arg(long, allow_hyphen_values = true)]
    grid: String,
    /// Kernel: gaussian or quartic.
    #[arg(long, default_value = "gaussian")]
    kernel: String,
    /// Bandwidth h [state], or "auto" for h = Δ^(2/11).
    #[arg(long, default_value = "auto", allow_hyphen_values = true)]
    bandwidth: String,
    /// Output CSV, columns x,p_hat,a_hat,b_hat,se_a,se_b,n_eff.
    #[arg(long)]
    output: PathBuf,
    /// ∫c⁴f [state⁴/time] for the standard error of b̂.
    #[arg(long, conflicts_with = "model")]
    fourth_moment: Option<f64>,
    /// Take ∫c⁴f for se_b from this preset (with default parameters).
    #[arg(long)]
    model: Option<Preset>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
enum Relation {
    #[value(name = "33")]
    Drift,
    #[value(name = "34")]
    Second,
    Appendix,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
struct VerifyArgs {
    /// 33 (drift), 34 (second moment) or appendix (term decomposition).
    #[arg(long, value_enum)]
    relation: Relation,
    #[command(flatten)]
    model: ModelArgs,
    /// Conditioning state X_0 = x [state].
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    x: f64,
    /// Sampling step Δ [time units].
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    /// Monte Carlo replicates [count].
    #[arg(long, default_value_t = 100_000)]
    reps: usize,
    /// RNG seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Fine Euler steps per Δ [count].
    #[arg(long, default_value_t = 100)]
    substeps: usize,
    /// Additive tolerance on top of 3 standard errors [same units as the statistic].
    #[arg(long, default_value_t = 0.05)]
    slack: f64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
struct ExperimentArgs {
    /// Flat key = value experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for report.csv, zscores.csv and summary.txt.
    #[arg(long)]
    out: PathBuf,
    /// Exit with status 3 when a summary check fails.
    #[arg(long)]
    check: bool,
    /// Cache directory for the density oracle [default: system temp dir].
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
struct SummarizeArgs {
    /// report.csv files to merge.
    #[arg(long, num_args = 1.., required = true)]
    reports: Vec<PathBuf>,
    /// Output directory for the merged report.csv and summary.txt.
    #[arg(long)]
    out: PathBuf,
    /// Exit with status 3 when a check fails.
    #[arg(long)]
    check: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
struct ReplayArgs {
    /// Manifest JSON written next to an output.
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FileDigest {
    path: PathBuf,
    sha256: String,
}

/// Everything needed to re-run a command and check its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunManifest {
    tool: String,
    version: String,
    subcommand: String,
    command: Command,
    seed: Option<u64>,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    /// Seconds since the Unix epoch.
    started: f64,
    finished: f64,
    wall_time_secs: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn digests(paths: &[PathBuf]) -> Result<Vec<FileDigest>> {
    paths
        .iter()
        .map(|p| {
            Ok(FileDigest {
                path: p.clone(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Estimate(_) => "estimate",
            Command::Verify(_) => "verify",
            Command::Experiment(_) => "experiment",
            Command::Summarize(_) => "summarize",
            Command::Replay(_) => "replay",
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Command::Simulate(a) => Some(a.seed),
            Command::Verify(a) => Some(a.seed),
            _ => None,
        }
    }

    fn inputs(&self) -> Vec<PathBuf> {
        match self {
            Command::Estimate(a) => vec![a.input.clone()],
            Command::Experiment(a) => vec![a.config.clone()],
            Command::Summarize(a) => a.reports.clone(),
            _ => Vec::new(),
        }
    }

    /// Same command with every output redirected into `dir`.
    fn redirected(&self, dir: &Path) -> Command {
        let into = |p: &Path| dir.join(p.file_name().unwrap_or_default());
        let mut c = self.clone();
        match &mut c {
            Command::Simulate(a) => {
                a.out = into(&a.out);
                a.obs_out = a.obs_out.as_deref().map(into);
            }
            Command::Estimate(a) => a.output = into(&a.output),
            Command::Verify(a) => a.out = a.out.as_deref().map(into),
            Command::Experiment(a) => a.out = dir.to_path_buf(),
            Command::Summarize(a) => a.out = dir.to_path_buf(),
            Command::Replay(_) => {}
        }
        c
    }
}

/// Result of a subcommand: files written, manifest location, and whether
/// its checks passed.
struct Outcome {
    outputs: Vec<PathBuf>,
    manifest: Option<PathBuf>,
    checks_pass: bool,
    warnings: Vec<String>,
}

impl Outcome {
    fn files(outputs: Vec<PathBuf>, manifest: PathBuf) -> Self {
        Self {
            outputs,
            manifest: Some(manifest),
            checks_pass: true,
            warnings: Vec::new(),
        }
    }
}

fn execute(cmd: &Command, exec: Execution) -> Result<Outcome> {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a, exec),
        Command::Verify(a) => verify(a, exec),
        Command::Experiment(a) => experiment(a, exec),
        Command::Summarize(a) => summarize(a),
        Command::Replay(a) => replay(a, exec),
    }
}

fn run_and_record(cmd: &Command, exec: Execution) -> Result<Outcome> {
    let started = unix_now();
    let clock = Instant::now();
    let inputs = digests(&cmd.inputs())?;
    let outcome = execute(cmd, exec)?;
    if let Some(path) = &outcome.manifest {
        let manifest = RunManifest {
            tool: "sojd".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: cmd.name().into(),
            command: cmd.clone(),
            seed: cmd.seed(),
            inputs,
            outputs: digests(&outcome.outputs)?,
            started,
            finished: unix_now(),
            wall_time_secs: clock.elapsed().as_secs_f64(),
            warnings: outcome.warnings.clone(),
        };
        io::write_atomic(path, &serde_json::to_vec_pretty(&manifest)?)?;
    }
    Ok(outcome)
}

fn simulate(a: &SimulateArgs) -> Result<Outcome> {
    let params = a.model.params()?;
    let model = params.build()?;
    let cfg = SimConfig::new(a.dt, a.horizon, a.x0.unwrap_or(params.center()), a.y0, a.seed)?;
    let path = simulator::simulate_path(&model, &cfg)?;
    let mut outputs = Vec::new();
    let obs = match a.delta {
        Some(delta) => Some(simulator::observe(&path, delta)?),
        None => None,
    };
    io::write_atomic(&a.out, &io::path_csv(&path)?)?;
    outputs.push(a.out.clone());
    if let (Some(obs), Some(file)) = (obs, &a.obs_out) {
        io::write_atomic(file, &io::observations_csv(&obs)?)?;
        outputs.push(file.clone());
    }
    log::info!("{} fine steps, {} jumps", cfg.steps(), path.jump_count);
    Ok(Outcome::files(outputs, manifest_path(&a.out)))
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, count] = parts[..] else {
        return Err(Error::InvalidArgument(format!("grid '{s}' is not lo:hi:count")));
    };
    let lo = io::parse_f64(lo)?;
    let hi = io::parse_f64(hi)?;
    let count: usize = count
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("grid count '{count}' is not a positive integer")))?;
    if count == 0 || !(lo <= hi) || (count == 1 && lo != hi) {
        return Err(Error::InvalidArgument(format!(
            "grid '{s}' needs lo <= hi and count >= 1 (count 1 only when lo = hi)"
        )));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let step = (hi - lo) / (count - 1) as f64;
    Ok((0..count).map(|i| if i == count - 1 { hi } else { lo + i as f64 * step }).collect())
}

fn estimate(a: &EstimateArgs, exec: Execution) -> Result<Outcome> {
    let bandwidth: Bandwidth = a.bandwidth.parse()?;
    let grid = parse_grid(&a.grid)?;
    let kernel = KernelSpec::from_name(&a.kernel)?;
    let obs = io::read_observations(&a.input)?;
    let h = bandwidth.resolve(obs.sampling_step())?;
    let model = a.model.map(|p| PresetParams::new(p).build()).transpose()?;
    let fourth_moment = match (a.fourth_moment, &model) {
        (Some(v), _) if !(v >= 0.0) => {
            return Err(Error::InvalidArgument(format!("--fourth-moment must be nonnegative, got {v}")))
        }
        (Some(v), _) => Some(FourthMoment::Constant(v)),
        (None, Some(m)) => Some(FourthMoment::Model(m)),
        (None, None) => None,
    };
    let opts = GridOptions {
        fourth_moment,
        data_source: None,
        execution: exec,
    };
    let result = estimators::estimate_on_grid(&obs, &kernel, h, &grid, &opts)?;
    if result.missing() > 0 {
        log::warn!("{} of {} grid points have no nearby data", result.missing(), grid.len());
    }
    io::write_atomic(&a.output, &io::estimates_csv(&result)?)?;
    Ok(Outcome::files(vec![a.output.clone()], manifest_path(&a.output)))
}

#[derive(Serialize)]
struct VerifyReport<'a, T: Serialize> {
    #[serde(flatten)]
    result: &'a T,
    slack: f64,
    pass: bool,
}

fn verify(a: &VerifyArgs, exec: Execution) -> Result<Outcome> {
    let model = a.model.params()?.build()?;
    let opts = McOptions {
        reps: a.reps,
        seed: a.seed,
        substeps: a.substeps,
        execution: exec,
    };
    // `pass` is reported in the JSON; the exit status stays 0 either way
    let json = match a.relation {
        Relation::Drift | Relation::Second => {
            let r = if a.relation == Relation::Drift {
                generator::verify_relation_33(&model, a.x, a.delta, &opts)?
            } else {
                generator::verify_relation_34(&model, a.x, a.delta, &opts)?
            };
            let pass = r.passes(a.slack);
            let report = VerifyReport {
                result: &r,
                slack: a.slack,
                pass,
            };
            serde_json::to_vec_pretty(&report)?
        }
        Relation::Appendix => {
            let r = generator::verify_appendix_terms(&model, a.x, a.delta, &opts)?;
            let pass = r.sum_passes();
            let report = VerifyReport {
                result: &r,
                slack: a.slack,
                pass,
            };
            serde_json::to_vec_pretty(&report)?
        }
    };
    match &a.out {
        Some(path) => {
            io::write_atomic(path, &json)?;
            Ok(Outcome {
                outputs: vec![path.clone()],
                manifest: Some(manifest_path(path)),
                checks_pass: true,
                warnings: Vec::new(),
            })
        }
        None => {
            println!("{}", String::from_utf8_lossy(&json));
            Ok(Outcome {
                outputs: Vec::new(),
                manifest: None,
                checks_pass: true,
                warnings: Vec::new(),
            })
        }
    }
}

fn experiment(a: &ExperimentArgs, exec: Execution) -> Result<Outcome> {
    let text = fs::read_to_string(&a.config)
        .map_err(|e| Error::Config(format!("cannot read '{}': {e}", a.config.display())))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    cfg.execution = exec;
    cfg.cache_dir = Some(a.cache_dir.clone().unwrap_or_else(|| std::env::temp_dir().join("sojd-oracle")));
    let report = harness::run(&cfg)?;
    let summary = harness::summarize(std::slice::from_ref(&report))?;
    write_experiment(&a.out, &report, &summary.table)?;
    if !a.check {
        eprint!("{}", summary.table);
    }
    for c in summary.checks.iter().filter(|c| !c.pass) {
        log::warn!("check {} failed: {}", c.name, c.detail);
    }
    Ok(Outcome {
        outputs: ["report.csv", "zscores.csv", "summary.txt"].iter().map(|f| a.out.join(f)).collect(),
        manifest: Some(a.out.join("manifest.json")),
        checks_pass: !a.check || summary.all_pass(),
        warnings: report.warnings,
    })
}

fn write_experiment(dir: &Path, report: &ExperimentReport, table: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    io::write_atomic(&dir.join("report.csv"), &report.report_csv()?)?;
    io::write_atomic(&dir.join("zscores.csv"), &report.zscores_csv()?)?;
    io::write_atomic(&dir.join("summary.txt"), table.as_bytes())?;
    Ok(())
}

fn summarize(a: &SummarizeArgs) -> Result<Outcome> {
    let reports = a
        .reports
        .iter()
        .map(|p| ExperimentReport::read_csv(p))
        .collect::<Result<Vec<_>>>()?;
    let summary = harness::summarize(&reports)?;
    fs::create_dir_all(&a.out)?;
    let report = a.out.join("report.csv");
    let text = a.out.join("summary.txt");
    io::write_atomic(&report, &summary.report_csv()?)?;
    io::write_atomic(&text, summary.table.as_bytes())?;
    print!("{}", summary.table);
    Ok(Outcome {
        outputs: vec![report, text],
        manifest: Some(a.out.join("manifest.json")),
        checks_pass: !a.check || summary.all_pass(),
        warnings: Vec::new(),
    })
}

fn replay(a: &ReplayArgs, exec: Execution) -> Result<Outcome> {
    let text = fs::read_to_string(&a.manifest)
        .map_err(|e| Error::InvalidArgument(format!("cannot read manifest '{}': {e}", a.manifest.display())))?;
    let manifest: RunManifest = serde_json::from_str(&text)?;
    if matches!(manifest.command, Command::Replay(_)) {
        return Err(Error::InvalidArgument("a replay manifest cannot be replayed".into()));
    }
    for input in &manifest.inputs {
        let now = sha256_file(&input.path)?;
        if now != input.sha256 {
            return Err(Error::InvalidArgument(format!(
                "input '{}' changed since the manifest was written",
                input.path.display()
            )));
        }
    }
    let scratch = std::env::temp_dir().join(format!("sojd-replay-{}-{}", std::process::id(), unix_now().to_bits()));
    fs::create_dir_all(&scratch)?;
    let result = (|| -> Result<bool> {
        let cmd = manifest.command.redirected(&scratch);
        execute(&cmd, exec)?;
        let mut identical = true;
        for out in &manifest.outputs {
            let fresh = scratch.join(out.path.file_name().unwrap_or_default());
            let same = sha256_file(&fresh)? == out.sha256;
            println!("{} {}", if same { "identical" } else { "DIFFERS" }, out.path.display());
            identical &= same;
        }
        Ok(identical)
    })();
    let _ = fs::remove_dir_all(&scratch);
    let identical = result?;
    Ok(Outcome {
        outputs: Vec::new(),
        manifest: None,
        checks_pass: identical,
        warnings: Vec::new(),
    })
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_VALIDATION
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let exec = Execution::Parallel;
    match par::with_threads(cli.threads, || run_and_record(&cli.command, exec)) {
        Ok(o) if o.checks_pass => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(EXIT_CHECK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("-1:1:3").unwrap(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(parse_grid("0.5:0.5:1").unwrap(), vec![0.5]);
        assert!(parse_grid("1:0:3").is_err());
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("0:1:0").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn manifest_sits_next_to_output() {
        assert_eq!(manifest_path(Path::new("out/p.csv")), PathBuf::from("out/p.csv.manifest.json"));
    }
}
