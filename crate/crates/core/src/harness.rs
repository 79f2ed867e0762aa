//! Replicated Monte Carlo experiments over a ladder of `(n, Δ, h)` rungs.
//!
//! For each rung, `R` independent datasets are simulated and the estimators
//! are evaluated at every point. The report tabulates bias and RMSE against
//! the true coefficients and, for normality runs, sample moments and 95%
//! coverage of the standardized errors `z = √(h n Δ)(est - truth) / √V`,
//! where `V` is the asymptotic variance with the true density.
//!
//! Replicates run in parallel but are reduced in replicate order, so reports
//! do not depend on the schedule.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, ExperimentMode, OracleSettings, Rung};
use crate::error::{Error, Result};
use crate::estimators::{self, Target};
use crate::io::{csv_bytes, fmt_f64, parse_f64, read_csv};
use crate::kernels::KernelSpec;
use crate::model::ModelSpec;
use crate::par;
use crate::presets::PresetParams;
use crate::rng;
use crate::simulator::{EulerStepper, ObservationPlan};
use crate::stats::{bias_rmse, Moments};

/// Bumped whenever report columns change.
pub const SCHEMA_VERSION: u32 = 1;

/// Share of failed replicates above which a rung is invalid.
pub const MAX_FAILURE_RATE: f64 = 0.01;

const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Density,
    Drift,
    Second,
    /// Exact-data baselines.
    Density0,
    Drift0,
    Second0,
    /// `|â - â⁰|`, the distance between estimator and baseline.
    DriftGap,
}

impl Estimator {
    pub const ALL: [Estimator; 7] = [
        Estimator::Density,
        Estimator::Drift,
        Estimator::Second,
        Estimator::Density0,
        Estimator::Drift0,
        Estimator::Second0,
        Estimator::DriftGap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Density => "density",
            Estimator::Drift => "drift",
            Estimator::Second => "second",
            Estimator::Density0 => "density0",
            Estimator::Drift0 => "drift0",
            Estimator::Second0 => "second0",
            Estimator::DriftGap => "drift_gap",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown estimator '{s}'")))
    }

    fn normality_target(self) -> Option<Target> {
        match self {
            Estimator::Drift => Some(Target::Drift),
            Estimator::Second => Some(Target::Second),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Ok,
    /// More than 1% of replicates failed.
    Failed,
    /// Normality not assessed: the limit variance is zero.
    Skipped,
}

impl RowStatus {
    pub fn name(self) -> &'static str {
        match self {
            RowStatus::Ok => "ok",
            RowStatus::Failed => "failed",
            RowStatus::Skipped => "skipped",
        }
    }

    fn from_name(s: &str) -> Result<Self> {
        match s {
            "ok" => Ok(RowStatus::Ok),
            "failed" => Ok(RowStatus::Failed),
            "skipped" => Ok(RowStatus::Skipped),
            other => Err(Error::Parse(format!("unknown status '{other}'"))),
        }
    }
}

/// One `(rung, point, estimator)` line of a report. `z_*` and `coverage`
/// are NaN unless normality was assessed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub rung: usize,
    pub n: usize,
    pub delta: f64,
    pub h: f64,
    pub point: f64,
    pub estimator: Estimator,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub rmse: f64,
    /// Population variance of the estimates, so `rmse² = bias² + variance`.
    pub variance: f64,
    pub z_mean: f64,
    pub z_variance: f64,
    pub z_skewness: f64,
    pub z_excess_kurtosis: f64,
    pub coverage: f64,
    pub reps_ok: usize,
    pub reps_failed: usize,
    pub status: RowStatus,
}

pub const REPORT_HEADER: [&str; 20] = [
    "schema",
    "rung",
    "n",
    "delta",
    "h",
    "point",
    "estimator",
    "truth",
    "mean",
    "bias",
    "rmse",
    "variance",
    "z_mean",
    "z_variance",
    "z_skewness",
    "z_excess_kurtosis",
    "coverage",
    "reps_ok",
    "reps_failed",
    "status",
];

impl ReportRow {
    fn fields(&self) -> Vec<String> {
        vec![
            SCHEMA_VERSION.to_string(),
            self.rung.to_string(),
            self.n.to_string(),
            fmt_f64(self.delta),
            fmt_f64(self.h),
            fmt_f64(self.point),
            self.estimator.name().to_string(),
            fmt_f64(self.truth),
            fmt_f64(self.mean),
            fmt_f64(self.bias),
            fmt_f64(self.rmse),
            fmt_f64(self.variance),
            fmt_f64(self.z_mean),
            fmt_f64(self.z_variance),
            fmt_f64(self.z_skewness),
            fmt_f64(self.z_excess_kurtosis),
            fmt_f64(self.coverage),
            self.reps_ok.to_string(),
            self.reps_failed.to_string(),
            self.status.name().to_string(),
        ]
    }

    fn from_fields(f: &[String]) -> Result<Self> {
        if f.len() != REPORT_HEADER.len() {
            return Err(Error::Schema(format!(
                "row has {} fields, expected {}",
                f.len(),
                REPORT_HEADER.len()
            )));
        }
        if f[0] != SCHEMA_VERSION.to_string() {
            return Err(Error::Schema(format!(
                "report schema {} does not match {SCHEMA_VERSION}",
                f[0]
            )));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("'{s}' is not an integer")));
        Ok(Self {
            rung: int(&f[1])?,
            n: int(&f[2])?,
            delta: parse_f64(&f[3])?,
            h: parse_f64(&f[4])?,
            point: parse_f64(&f[5])?,
            estimator: Estimator::from_name(&f[6])?,
            truth: parse_f64(&f[7])?,
            mean: parse_f64(&f[8])?,
            bias: parse_f64(&f[9])?,
            rmse: parse_f64(&f[10])?,
            variance: parse_f64(&f[11])?,
            z_mean: parse_f64(&f[12])?,
            z_variance: parse_f64(&f[13])?,
            z_skewness: parse_f64(&f[14])?,
            z_excess_kurtosis: parse_f64(&f[15])?,
            coverage: parse_f64(&f[16])?,
            reps_ok: int(&f[17])?,
            reps_failed: int(&f[18])?,
            status: RowStatus::from_name(&f[19])?,
        })
    }
}

/// A standardized error of one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZRecord {
    pub rung: usize,
    pub point: f64,
    pub estimator: Estimator,
    pub replicate: usize,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub version: String,
    pub seed: u64,
    /// Decides which summary checks apply.
    pub mode: ExperimentMode,
    pub rows: Vec<ReportRow>,
    pub zscores: Vec<ZRecord>,
    pub warnings: Vec<String>,
    /// Not part of the CSV output, which must be reproducible.
    pub wall_time_secs: f64,
}

impl ExperimentReport {
    pub fn report_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(&REPORT_HEADER, self.rows.iter().map(ReportRow::fields))
    }

    pub fn zscores_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(
            &["rung", "point", "estimator", "replicate", "z"],
            self.zscores.iter().map(|z| {
                [
                    z.rung.to_string(),
                    fmt_f64(z.point),
                    z.estimator.name().to_string(),
                    z.replicate.to_string(),
                    fmt_f64(z.z),
                ]
            }),
        )
    }

    /// Rows of a `report.csv`; the z-scores are not reloaded. The mode is
    /// `both` if any row carries z statistics, else `consistency`.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let (header, records) = read_csv(path)?;
        if header != REPORT_HEADER {
            return Err(Error::Schema(format!(
                "'{}' does not have the report columns of schema {SCHEMA_VERSION}",
                path.display()
            )));
        }
        let rows = records.iter().map(|r| ReportRow::from_fields(r)).collect::<Result<Vec<ReportRow>>>()?;
        let mode = if rows.iter().any(|r| !r.z_variance.is_nan()) {
            ExperimentMode::Both
        } else {
            ExperimentMode::Consistency
        };
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            version: String::new(),
            seed: 0,
            mode,
            rows,
            zscores: Vec::new(),
            warnings: Vec::new(),
            wall_time_secs: 0.0,
        })
    }
}

/// True values against which a rung is scored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truth {
    pub density: f64,
    pub drift: f64,
    pub second: f64,
    pub fourth: f64,
}

impl Truth {
    fn of(self, e: Estimator) -> f64 {
        match e {
            Estimator::Density | Estimator::Density0 => self.density,
            Estimator::Drift | Estimator::Drift0 => self.drift,
            Estimator::Second | Estimator::Second0 => self.second,
            Estimator::DriftGap => 0.0,
        }
    }
}

pub fn truths(model: &ModelSpec, points: &[f64], density: &[f64]) -> Result<Vec<Truth>> {
    points
        .iter()
        .zip(density)
        .map(|(&x, &p)| {
            Ok(Truth {
                density: p,
                drift: model.drift(x),
                second: model.second_moment(x)?,
                fourth: model.jump_moment(4, x)?,
            })
        })
        .collect()
}

/// Stationary density at `points`: the closed form when the model has one,
/// otherwise a Gaussian KDE of one long simulated path. Simulated values are
/// cached under `cache_dir` keyed by a hash of everything they depend on.
pub fn oracle_density(
    params: &PresetParams,
    points: &[f64],
    settings: &OracleSettings,
    cache_dir: Option<&Path>,
) -> Result<Vec<f64>> {
    let model = params.build()?;
    if let Some(p) = model.stationary_density() {
        return Ok(points.iter().map(|&x| p.eval(x)).collect());
    }
    let key = {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&(params, settings))?);
        for x in points {
            h.update(x.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    };
    let cache_file = cache_dir.map(|d| d.join(format!("oracle-{}.json", &key[..32])));
    if let Some(file) = &cache_file {
        if let Ok(text) = fs::read_to_string(file) {
            if let Ok(bits) = serde_json::from_str::<Vec<u64>>(&text) {
                if bits.len() == points.len() {
                    log::debug!("density oracle loaded from {}", file.display());
                    return Ok(bits.into_iter().map(f64::from_bits).collect());
                }
            }
        }
    }
    let samples = long_run_samples(&model, params.center(), settings)?;
    let values = gaussian_kde(&samples, points, settings.bandwidth);
    if let Some(file) = &cache_file {
        let bits: Vec<u64> = values.iter().map(|v| v.to_bits()).collect();
        let written = fs::create_dir_all(file.parent().unwrap_or(Path::new(".")))
            .map_err(Error::from)
            .and_then(|_| crate::io::write_atomic(file, &serde_json::to_vec(&bits)?));
        if let Err(e) = written {
            log::warn!("could not cache density oracle: {e}");
        }
    }
    Ok(values)
}

fn long_run_samples(model: &ModelSpec, x0: f64, s: &OracleSettings) -> Result<Vec<f64>> {
    if !(s.horizon > 0.0 && s.fine_step > 0.0 && s.bandwidth > 0.0 && s.thin > 0) {
        return Err(Error::Config("oracle horizon, step, bandwidth and thinning must be positive".into()));
    }
    let stepper = EulerStepper::new(model, s.fine_step, x0)?;
    let mut rng = rng::stream(s.seed);
    let mut x = x0;
    for _ in 0..(s.burn_in / s.fine_step).round() as usize {
        x = stepper.step(x, &mut rng)?.0;
    }
    let steps = (s.horizon / s.fine_step).round() as usize;
    let mut out = Vec::with_capacity(steps / s.thin + 1);
    for k in 0..steps {
        x = stepper.step(x, &mut rng)?.0;
        if !x.is_finite() {
            return Err(Error::Explosion {
                time: (k + 1) as f64 * s.fine_step,
            });
        }
        if k % s.thin == 0 {
            out.push(x);
        }
    }
    Ok(out)
}

fn gaussian_kde(samples: &[f64], points: &[f64], h: f64) -> Vec<f64> {
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    points
        .iter()
        .map(|&x| {
            norm * samples
                .iter()
                .map(|&s| {
                    let u = (x - s) / h;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
        })
        .collect()
}

/// Seed of replicate `r` on rung `rung`.
pub fn replicate_seed(master: u64, rung: usize, r: usize) -> u64 {
    rng::replicate_seed(rng::replicate_seed(master, rung as u64), r as u64)
}

/// Estimates of one replicate: per point, per estimator, `None` where no
/// data fell near the point.
#[derive(Debug, Clone, PartialEq)]
pub enum ReplicateOutcome {
    Done(Vec<Vec<Option<f64>>>),
    /// Simulation failed; the message is kept for the log.
    Failed(String),
}

/// Simulates one dataset for `rung` and evaluates the estimators.
pub fn run_replicate(
    cfg: &ExperimentConfig,
    model: &ModelSpec,
    kernel: &KernelSpec,
    rung: &Rung,
    estimators: &[Estimator],
    seed: u64,
) -> Result<ReplicateOutcome> {
    let h = rung.h()?;
    let plan = ObservationPlan {
        fine_step: rung.delta / cfg.substeps as f64,
        sampling_step: rung.delta,
        observations: rung.n + 3,
        burn_in: cfg.burn_in,
    };
    let obs = match crate::simulator::simulate_observations(model, &plan, cfg.model.center(), 0.0, seed) {
        Ok(o) => o,
        Err(e) if e.is_numeric() => return Ok(ReplicateOutcome::Failed(e.to_string())),
        Err(e) => return Err(e),
    };
    let exact = obs.x_true().expect("simulated observations keep the exact series");
    let mut per_point = Vec::with_capacity(cfg.points.len());
    for &x in &cfg.points {
        let tilde = match estimators::nw_point(&obs, kernel, h, x) {
            Ok(e) => Some(e),
            Err(Error::NoDataNear { .. }) => None,
            Err(e) => return Err(e),
        };
        let base = match estimators::nw_baseline(exact, rung.delta, kernel, h, x) {
            Ok(b) => Some(b),
            Err(Error::NoDataNear { .. }) => None,
            Err(e) => return Err(e),
        };
        per_point.push(
            estimators
                .iter()
                .map(|e| match e {
                    Estimator::Density => tilde.map(|t| t.p),
                    Estimator::Drift => tilde.map(|t| t.a),
                    Estimator::Second => tilde.map(|t| t.b),
                    Estimator::Density0 => base.map(|b| b.p0),
                    Estimator::Drift0 => base.map(|b| b.a0),
                    Estimator::Second0 => base.map(|b| b.b0),
                    Estimator::DriftGap => tilde.zip(base).map(|(t, b)| (t.a - b.a0).abs()),
                })
                .collect(),
        );
    }
    Ok(ReplicateOutcome::Done(per_point))
}

fn selected_estimators(cfg: &ExperimentConfig) -> Vec<Estimator> {
    let s = cfg.estimators;
    let mut out = Vec::new();
    if s.density {
        out.push(Estimator::Density);
    }
    if s.drift {
        out.push(Estimator::Drift);
    }
    if s.second {
        out.push(Estimator::Second);
    }
    if s.baseline {
        if s.density {
            out.push(Estimator::Density0);
        }
        if s.drift {
            out.push(Estimator::Drift0);
            out.push(Estimator::DriftGap);
        }
        if s.second {
            out.push(Estimator::Second0);
        }
    }
    out
}

/// Inputs to [`aggregate`] for one `(rung, point, estimator)` cell.
#[derive(Debug, Clone, Copy)]
pub struct CellContext {
    pub rung_index: usize,
    pub rung: Rung,
    pub h: f64,
    pub point: f64,
    pub estimator: Estimator,
    pub truth: f64,
    /// `None` when normality is not assessed.
    pub normality: Option<NormalityContext>,
}

#[derive(Debug, Clone, Copy)]
pub struct NormalityContext {
    pub limit_variance: f64,
    pub k2: f64,
}

/// Reduces one cell. `values[r]` is replicate `r`'s estimate (`None` if the
/// simulation failed or no data fell near the point) and `plug_in[r]` the
/// half-width over 1.96 of its plug-in interval. Sums run in replicate order.
pub fn aggregate(ctx: &CellContext, values: &[Option<f64>], plug_in: &[Option<f64>]) -> (ReportRow, Vec<ZRecord>) {
    let ok: Vec<f64> = values.iter().flatten().copied().collect();
    let failed = values.len() - ok.len();
    let mut row = ReportRow {
        rung: ctx.rung_index,
        n: ctx.rung.n,
        delta: ctx.rung.delta,
        h: ctx.h,
        point: ctx.point,
        estimator: ctx.estimator,
        truth: ctx.truth,
        mean: f64::NAN,
        bias: f64::NAN,
        rmse: f64::NAN,
        variance: f64::NAN,
        z_mean: f64::NAN,
        z_variance: f64::NAN,
        z_skewness: f64::NAN,
        z_excess_kurtosis: f64::NAN,
        coverage: f64::NAN,
        reps_ok: ok.len(),
        reps_failed: failed,
        status: RowStatus::Ok,
    };
    if ok.is_empty() || failed as f64 > MAX_FAILURE_RATE * values.len() as f64 {
        row.status = RowStatus::Failed;
    }
    if ok.is_empty() {
        return (row, Vec::new());
    }
    let (mean, variance, rmse) = bias_rmse(&ok, ctx.truth);
    row.mean = mean;
    row.bias = mean - ctx.truth;
    row.variance = variance;
    row.rmse = rmse;

    let mut zs = Vec::new();
    if let Some(nc) = ctx.normality {
        if !(nc.limit_variance > 0.0) {
            if row.status == RowStatus::Ok {
                row.status = RowStatus::Skipped;
            }
            return (row, zs);
        }
        let scale = (ctx.h * ctx.rung.span()).sqrt();
        let sd = nc.limit_variance.sqrt();
        let mut z_values = Vec::with_capacity(ok.len());
        let mut covered = 0usize;
        for (r, (v, pi)) in values.iter().zip(plug_in).enumerate() {
            let Some(v) = v else { continue };
            let z = scale * (v - ctx.truth) / sd;
            z_values.push(z);
            zs.push(ZRecord {
                rung: ctx.rung_index,
                point: ctx.point,
                estimator: ctx.estimator,
                replicate: r,
                z,
            });
            if let Some(half) = pi {
                if (v - ctx.truth).abs() <= Z95 * half {
                    covered += 1;
                }
            }
        }
        let m = Moments::of(&z_values);
        row.z_mean = m.mean;
        row.z_variance = m.variance;
        row.z_skewness = m.skewness;
        row.z_excess_kurtosis = m.excess_kurtosis;
        row.coverage = covered as f64 / z_values.len() as f64;
    }
    (row, zs)
}

/// Runs the consistency part only (no z-scores).
pub fn run_consistency(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_with(cfg, false)
}

/// Runs with z-scores; the ladder must satisfy the normality ordering.
pub fn run_normality(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate_normality()?;
    run_with(cfg, true)
}

/// Dispatches on `cfg.mode`. In `both` mode a ladder violating the
/// normality ordering is a warning rather than an error.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    match cfg.mode {
        ExperimentMode::Consistency => run_consistency(cfg),
        ExperimentMode::Normality => run_normality(cfg),
        ExperimentMode::Both => {
            let mut report = run_with(cfg, true)?;
            if let Err(e) = cfg.validate_normality() {
                report.warnings.push(e.to_string());
            }
            Ok(report)
        }
    }
}

fn run_with(cfg: &ExperimentConfig, normality: bool) -> Result<ExperimentReport> {
    let start = Instant::now();
    let mut warnings = cfg.validate()?;
    for w in &warnings {
        log::warn!("{w}");
    }
    let model = cfg.model.build()?;
    let kernel = KernelSpec::from_name(&cfg.kernel)?;
    let estimators = selected_estimators(cfg);
    if estimators.is_empty() {
        return Err(Error::Config("no estimators selected".into()));
    }
    let density = oracle_density(&cfg.model, &cfg.points, &cfg.oracle, cfg.cache_dir.as_deref())?;
    let truths = truths(&model, &cfg.points, &density)?;

    let mut rows = Vec::new();
    let mut zscores = Vec::new();
    for (ri, rung) in cfg.ladder.iter().enumerate() {
        let h = rung.h()?;
        log::info!("rung {ri}: n = {}, Δ = {}, h = {h}, {} replicates", rung.n, rung.delta, cfg.reps);
        let outcomes = par::map_indexed(cfg.execution, cfg.reps, |r| {
            run_replicate(cfg, &model, &kernel, rung, &estimators, replicate_seed(cfg.seed, ri, r))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

        let failed_sims = outcomes
            .iter()
            .filter(|o| matches!(o, ReplicateOutcome::Failed(_)))
            .count();
        if failed_sims > 0 {
            if let Some(ReplicateOutcome::Failed(msg)) = outcomes.iter().find(|o| matches!(o, ReplicateOutcome::Failed(_))) {
                let w = format!("rung {ri}: {failed_sims} of {} replicates failed (first: {msg})", cfg.reps);
                log::warn!("{w}");
                warnings.push(w);
            }
        }
        let scale = h * rung.span();
        for (pi, &x) in cfg.points.iter().enumerate() {
            let cell = |r: usize, ei: usize| match &outcomes[r] {
                ReplicateOutcome::Done(v) => v[pi][ei],
                ReplicateOutcome::Failed(_) => None,
            };
            // p̂ of each replicate for plug-in intervals
            let p_hat: Vec<Option<f64>> = (0..cfg.reps)
                .map(|r| match &outcomes[r] {
                    ReplicateOutcome::Done(_) => {
                        let obs_p = estimators.iter().position(|e| *e == Estimator::Density);
                        obs_p.and_then(|ei| cell(r, ei))
                    }
                    ReplicateOutcome::Failed(_) => None,
                })
                .collect();
            for (ei, &est) in estimators.iter().enumerate() {
                let values: Vec<Option<f64>> = (0..cfg.reps).map(|r| cell(r, ei)).collect();
                let t = truths[pi];
                let norm = match (normality, est.normality_target()) {
                    (true, Some(target)) => {
                        let v = estimators::asymptotic_variance(&model, &kernel, x, target, t.density)?;
                        if v == 0.0 {
                            let w = format!("rung {ri}, x = {x}: {} limit variance is zero, normality skipped", est.name());
                            log::warn!("{w}");
                            warnings.push(w);
                        }
                        Some(NormalityContext {
                            limit_variance: v,
                            k2: kernel.k2(),
                        })
                    }
                    _ => None,
                };
                // plug-in half widths: drift uses b̂ in place of σ² + ∫c²f,
                // the second moment uses the true ∫c⁴f
                let half_widths: Vec<Option<f64>> = match (norm, est) {
                    (Some(nc), Estimator::Drift) => {
                        let bi = estimators.iter().position(|e| *e == Estimator::Second);
                        (0..cfg.reps)
                            .map(|r| {
                                let p = p_hat[r]?;
                                let b = bi.and_then(|bi| cell(r, bi)).unwrap_or(t.second);
                                Some((nc.k2 * b / p / scale).sqrt())
                            })
                            .collect()
                    }
                    (Some(nc), Estimator::Second) => (0..cfg.reps)
                        .map(|r| Some((nc.k2 * t.fourth / p_hat[r]? / scale).sqrt()))
                        .collect(),
                    _ => vec![None; cfg.reps],
                };
                let ctx = CellContext {
                    rung_index: ri,
                    rung: *rung,
                    h,
                    point: x,
                    estimator: est,
                    truth: t.of(est),
                    normality: norm,
                };
                let (row, z) = aggregate(&ctx, &values, &half_widths);
                rows.push(row);
                zscores.extend(z);
            }
        }
    }
    Ok(ExperimentReport {
        schema_version: SCHEMA_VERSION,
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        mode: if normality { cfg.mode } else { ExperimentMode::Consistency },
        rows,
        zscores,
        warnings,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Outcome of one summary check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// Thresholds for the normality check on the finest rung.
pub const Z_VARIANCE_RANGE: (f64, f64) = (0.7, 1.3);
pub const Z_MEAN_MAX: f64 = 0.15;
pub const Z_KURTOSIS_MAX: f64 = 1.0;
pub const COVERAGE_RANGE: (f64, f64) = (0.90, 0.98);
/// Largest allowed ratio of z variances between the top two rungs.
pub const RATE_FACTOR: f64 = 3.0;
/// Relative tolerance on the final-rung bias of `b̂`.
pub const SECOND_BIAS_TOLERANCE: f64 = 0.15;

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub rows: Vec<ReportRow>,
    pub checks: Vec<Check>,
    pub table: String,
}

impl Summary {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn report_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(&REPORT_HEADER, self.rows.iter().map(ReportRow::fields))
    }
}

/// Merges reports, stably ordered by `(n, Δ)`, and evaluates the checks.
pub fn summarize(reports: &[ExperimentReport]) -> Result<Summary> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to summarize".into()))?;
    if let Some(r) = reports.iter().find(|r| r.schema_version != first.schema_version) {
        return Err(Error::Schema(format!(
            "reports mix schema versions {} and {}",
            first.schema_version, r.schema_version
        )));
    }
    let mut rows: Vec<ReportRow> = reports.iter().flat_map(|r| r.rows.iter().copied()).collect();
    rows.sort_by(|a, b| a.n.cmp(&b.n).then(a.delta.total_cmp(&b.delta)));
    let has = |m: ExperimentMode| reports.iter().any(|r| r.mode == m || r.mode == ExperimentMode::Both);
    let scope = CheckScope {
        consistency: has(ExperimentMode::Consistency),
        normality: has(ExperimentMode::Normality),
    };
    let checks = checks(&rows, scope);
    let table = table(&rows, &checks);
    Ok(Summary { rows, checks, table })
}

fn series(rows: &[ReportRow], est: Estimator, point: f64) -> Vec<&ReportRow> {
    let mut s: Vec<&ReportRow> = rows
        .iter()
        .filter(|r| r.estimator == est && r.point.to_bits() == point.to_bits())
        .collect();
    s.sort_by_key(|r| r.rung);
    s
}

fn points(rows: &[ReportRow]) -> Vec<f64> {
    let mut p: Vec<f64> = Vec::new();
    for r in rows {
        if !p.iter().any(|q| q.to_bits() == r.point.to_bits()) {
            p.push(r.point);
        }
    }
    p
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4e}")).collect::<Vec<_>>().join(" > ")
}

/// Which families of checks to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckScope {
    /// RMSE monotonicity, final `b̂` bias, baseline gap.
    pub consistency: bool,
    /// z-score moments, coverage, equal rates.
    pub normality: bool,
}

impl CheckScope {
    pub const ALL: CheckScope = CheckScope {
        consistency: true,
        normality: true,
    };
}

/// Checks derivable from report rows; series are taken in rung order.
pub fn checks(rows: &[ReportRow], scope: CheckScope) -> Vec<Check> {
    let mut out = Vec::new();
    for x in points(rows) {
        let failed = rows
            .iter()
            .any(|r| r.point.to_bits() == x.to_bits() && r.status == RowStatus::Failed);
        if failed {
            out.push(Check {
                name: format!("rungs-valid@{x}"),
                pass: false,
                detail: "a rung exceeded the replicate failure limit".into(),
            });
        }
        for est in [Estimator::Drift, Estimator::Second, Estimator::Density] {
            let s = series(rows, est, x);
            if scope.consistency && s.len() >= 2 {
                let rmse: Vec<f64> = s.iter().map(|r| r.rmse).collect();
                out.push(Check {
                    name: format!("rmse-decreasing[{}]@{x}", est.name()),
                    pass: strictly_decreasing(&rmse),
                    detail: fmt_list(&rmse),
                });
            }
        }
        if let Some(last) = series(rows, Estimator::Second, x).last().filter(|_| scope.consistency) {
            let rel = (last.bias / last.truth).abs();
            out.push(Check {
                name: format!("second-bias@{x}"),
                pass: rel <= SECOND_BIAS_TOLERANCE,
                detail: format!("|bias| / target = {rel:.4} on rung {}", last.rung),
            });
        }
        for est in [Estimator::Drift, Estimator::Second] {
            let s = series(rows, est, x);
            let Some(last) = s.last().filter(|_| scope.normality) else { continue };
            if last.status == RowStatus::Skipped || last.z_variance.is_nan() {
                continue;
            }
            let pass = (Z_VARIANCE_RANGE.0..=Z_VARIANCE_RANGE.1).contains(&last.z_variance)
                && last.z_mean.abs() <= Z_MEAN_MAX
                && last.z_excess_kurtosis.abs() <= Z_KURTOSIS_MAX
                && (COVERAGE_RANGE.0..=COVERAGE_RANGE.1).contains(&last.coverage);
            out.push(Check {
                name: format!("normality[{}]@{x}", est.name()),
                pass,
                detail: format!(
                    "z mean {:.3}, variance {:.3}, skewness {:.3}, excess kurtosis {:.3}, coverage {:.3}",
                    last.z_mean, last.z_variance, last.z_skewness, last.z_excess_kurtosis, last.coverage
                ),
            });
        }
        let top_two = |est| {
            let s = series(rows, est, x);
            (s.len() >= 2).then(|| (s[s.len() - 2].z_variance, s[s.len() - 1].z_variance))
        };
        if let (true, Some(a), Some(b)) = (scope.normality, top_two(Estimator::Drift), top_two(Estimator::Second)) {
            if [a.0, a.1, b.0, b.1].iter().all(|v| v.is_finite()) {
                let ok = |(u, v): (f64, f64)| u > 0.0 && v > 0.0 && (u / v).max(v / u) <= RATE_FACTOR;
                out.push(Check {
                    name: format!("equal-rate@{x}"),
                    pass: ok(a) && ok(b),
                    detail: format!("z variance drift {:.3} -> {:.3}, second {:.3} -> {:.3}", a.0, a.1, b.0, b.1),
                });
            }
        }
        let gap = series(rows, Estimator::DriftGap, x);
        if scope.consistency && gap.len() >= 2 {
            let m: Vec<f64> = gap.iter().map(|r| r.mean).collect();
            out.push(Check {
                name: format!("baseline-gap@{x}"),
                pass: strictly_decreasing(&m),
                detail: fmt_list(&m),
            });
        }
    }
    out
}

fn table(rows: &[ReportRow], checks: &[Check]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>6} {:>9} {:>8} {:>8} {:<10} {:>11} {:>11} {:>11} {:>8} {:>8} {:>6} {:>6}",
        "n", "delta", "h", "x", "estimator", "truth", "bias", "rmse", "z_var", "cover", "fail", "status"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:>6} {:>9.4} {:>8.4} {:>8.3} {:<10} {:>11.4e} {:>11.3e} {:>11.3e} {:>8.3} {:>8.3} {:>6} {:>6}",
            r.n,
            r.delta,
            r.h,
            r.point,
            r.estimator.name(),
            r.truth,
            r.bias,
            r.rmse,
            r.z_variance,
            r.coverage,
            r.reps_failed,
            r.status.name()
        );
    }
    let _ = writeln!(s);
    for c in checks {
        let _ = writeln!(s, "{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    s
}
