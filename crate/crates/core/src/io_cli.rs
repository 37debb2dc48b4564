//! Run configuration, orchestration of solve/verify/oracle commands and
//! serialization of states and reports.
//!
//! Configurations are TOML documents. Tables and dotted keys are
//! interchangeable, so `grid.x_min = 1e-6` and a `[grid]` table holding
//! `x_min = 1e-6` mean the same thing.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::coefficients::{
    predicted_tau, CoagulationParams, DaughterSpec, FragmentationParams, TauPrediction, Truncation,
};
use crate::error::{Error, Result};
use crate::evolve::{
    continuation_run, epsilon_threshold, ContinuationSchedule, EvolveConfig, ReportSpec, Stage,
    SteadyReport,
};
use crate::operators::DistributionState;
use crate::sizegrid::SizeGrid;
use crate::verify::{
    constant_kernel_reference, fit_small_size_exponent, moment, solve_bernstein,
    weak_form_residual, weighted_lp, ExponentFit, TestFunction, WeakFormReport,
    DEFAULT_EXPONENTIAL_RATES,
};

/// Schema tag of solve reports.
pub const SOLVE_SCHEMA: &str = "coagfrag.solve/1";
/// Schema tag of verify reports.
pub const VERIFY_SCHEMA: &str = "coagfrag.verify/1";
/// Key of the wall-clock section, excluded from reproducibility comparisons.
pub const TIMING_KEY: &str = "timing";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub n_cells: usize,
}

impl GridConfig {
    pub fn build(&self) -> Result<SizeGrid> {
        SizeGrid::geometric(self.x_min, self.x_max, self.n_cells)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct OutputConfig {
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyConfig {
    /// Rates `s` of the exponential test functions.
    pub exponential: Vec<f64>,
    pub fit_decades: f64,
    pub moments: Vec<f64>,
    pub weighted_lp: Vec<(f64, f64)>,
}

/// A fully validated run configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub rho: f64,
    pub grid: GridConfig,
    pub coagulation: CoagulationParams,
    pub fragmentation: FragmentationParams,
    pub evolve: EvolveConfig,
    pub schedule: ContinuationSchedule,
    pub output: OutputConfig,
    pub verify: VerifyConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    rho: Option<f64>,
    grid: Option<RawGrid>,
    coagulation: Option<RawCoagulation>,
    fragmentation: Option<RawFragmentation>,
    evolve: Option<RawEvolve>,
    schedule: Option<Vec<RawStage>>,
    output: Option<RawOutput>,
    verify: Option<RawVerify>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    x_min: Option<f64>,
    x_max: Option<f64>,
    n_cells: Option<i64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCoagulation {
    #[serde(alias = "K0")]
    k0: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFragmentation {
    a0: Option<f64>,
    gamma: Option<f64>,
    p0: Option<f64>,
    daughter: Option<String>,
    nu: Option<f64>,
    table: Option<PathBuf>,
    normalize_table: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvolve {
    dt_init: Option<f64>,
    dt_max: Option<f64>,
    growth: Option<f64>,
    tol_steady: Option<f64>,
    max_steps: Option<i64>,
    mass_tol: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStage {
    epsilon: Option<f64>,
    /// Omitted means `x_max`; `inf` means no cap.
    j: Option<f64>,
    evolve: Option<RawEvolve>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    csv: Option<PathBuf>,
    json: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVerify {
    exponential: Option<Vec<f64>>,
    fit_decades: Option<f64>,
    moments: Option<Vec<f64>>,
    weighted_lp: Option<Vec<(f64, f64)>>,
}

fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Validation {
        key: key.into(),
        reason: reason.into(),
    }
}

fn required<T>(v: Option<T>, key: &str) -> Result<T> {
    v.ok_or_else(|| invalid(key, "required key is missing"))
}

/// Attaches a key path to errors raised by library constructors.
fn at_key<T>(r: Result<T>, key: &str) -> Result<T> {
    r.map_err(|e| match e {
        Error::Domain(reason) | Error::Configuration(reason) => invalid(key, reason),
        Error::Validation { key: inner, reason } => invalid(format!("{key}.{inner}"), reason),
        other => other,
    })
}

fn positive(v: f64, key: &str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(
            key,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

fn merge_evolve(base: EvolveConfig, raw: &RawEvolve, prefix: &str) -> Result<EvolveConfig> {
    let mut cfg = base;
    if let Some(v) = raw.dt_init {
        cfg.dt_init = v;
    }
    if let Some(v) = raw.dt_max {
        cfg.dt_max = v;
    }
    if let Some(v) = raw.growth {
        cfg.growth = v;
    }
    if let Some(v) = raw.tol_steady {
        cfg.tol_steady = v;
    }
    if let Some(v) = raw.max_steps {
        if v <= 0 {
            return Err(invalid(
                format!("{prefix}.max_steps"),
                format!("must be positive, got {v}"),
            ));
        }
        cfg.max_steps = v as usize;
    }
    if let Some(v) = raw.mass_tol {
        cfg.mass_tol = v;
    }
    cfg.validate().map_err(|e| match e {
        Error::Validation { key, reason } => {
            let leaf = key.rsplit('.').next().unwrap_or(&key).to_string();
            invalid(format!("{prefix}.{leaf}"), reason)
        }
        other => other,
    })?;
    if !(cfg.growth > 1.0) {
        return Err(invalid(
            format!("{prefix}.growth"),
            format!("must exceed 1, got {}", cfg.growth),
        ));
    }
    Ok(cfg)
}

fn read_table(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let (mut z, mut b) = (Vec::new(), Vec::new());
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        if rec.len() != 2 {
            return Err(Error::Parse(format!(
                "{}: row {} must have two columns (z, B)",
                path.display(),
                row + 2
            )));
        }
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("{}: row {}: {e}", path.display(), row + 2)))
        };
        z.push(num(&rec[0])?);
        b.push(num(&rec[1])?);
    }
    Ok((z, b))
}

/// Parses a configuration, resolving relative table paths against the
/// current directory.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_in(text, Path::new("."))
}

/// Reads and parses a configuration file, resolving relative table paths
/// against the file's directory.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    parse_config_in(&text, path.parent().unwrap_or(Path::new(".")))
}

pub fn parse_config_in(text: &str, base_dir: &Path) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;

    let rho = positive(required(raw.rho, "rho")?, "rho")?;

    let g = required(raw.grid, "grid")?;
    let n_cells = required(g.n_cells, "grid.n_cells")?;
    if n_cells < 2 {
        return Err(invalid(
            "grid.n_cells",
            format!("at least two cells required, got {n_cells}"),
        ));
    }
    let grid = GridConfig {
        x_min: positive(required(g.x_min, "grid.x_min")?, "grid.x_min")?,
        x_max: positive(required(g.x_max, "grid.x_max")?, "grid.x_max")?,
        n_cells: n_cells as usize,
    };
    if !(grid.x_max > grid.x_min) {
        return Err(invalid(
            "grid.x_max",
            format!("must exceed grid.x_min={}", grid.x_min),
        ));
    }

    let c = required(raw.coagulation, "coagulation")?;
    let k0 = positive(c.k0.unwrap_or(1.0), "coagulation.k0")?;
    let alpha = required(c.alpha, "coagulation.alpha")?;
    let beta = required(c.beta, "coagulation.beta")?;
    if !(alpha >= 0.0 && alpha <= beta && beta <= 1.0) {
        return Err(invalid(
            "coagulation.alpha",
            format!(
                "exponents must satisfy 0 <= alpha <= beta <= 1, got alpha={alpha}, beta={beta}"
            ),
        ));
    }
    if !(alpha + beta < 1.0) {
        return Err(invalid(
            "coagulation.beta",
            format!("alpha+beta must lie in [0,1), got {}", alpha + beta),
        ));
    }
    let coagulation = at_key(CoagulationParams::new(k0, alpha, beta), "coagulation")?;

    let f = required(raw.fragmentation, "fragmentation")?;
    let a0 = positive(f.a0.unwrap_or(1.0), "fragmentation.a0")?;
    let gamma = required(f.gamma, "fragmentation.gamma")?;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(invalid(
            "fragmentation.gamma",
            format!("gamma > 0 required, got {gamma}"),
        ));
    }
    let p0 = f.p0.unwrap_or(2.0);
    if !(p0 > 1.0) {
        return Err(invalid(
            "fragmentation.p0",
            format!("p0 > 1 required, got {p0}"),
        ));
    }
    let kind = f.daughter.as_deref().unwrap_or("power_law");
    let daughter = match kind {
        "power_law" | "parabolic" => {
            if f.table.is_some() {
                return Err(invalid(
                    "fragmentation.table",
                    format!("not used by daughter = \"{kind}\""),
                ));
            }
            let nu = f.nu.unwrap_or(if kind == "power_law" { 0.0 } else { 1.0 });
            let spec = if kind == "power_law" {
                DaughterSpec::power_law(nu, p0)
            } else {
                DaughterSpec::parabolic(nu, p0)
            };
            at_key(spec, "fragmentation.nu")?
        }
        "tabulated" => {
            if f.nu.is_some() {
                return Err(invalid(
                    "fragmentation.nu",
                    "not used by daughter = \"tabulated\"",
                ));
            }
            let rel = required(f.table, "fragmentation.table")?;
            let path = if rel.is_absolute() {
                rel
            } else {
                base_dir.join(rel)
            };
            let (z, b) = at_key(read_table(&path), "fragmentation.table")?;
            let spec = if f.normalize_table.unwrap_or(false) {
                DaughterSpec::tabulated_normalized(z, b, p0)
            } else {
                DaughterSpec::tabulated(z, b, p0)
            };
            at_key(spec, "fragmentation.table")?
        }
        other => {
            return Err(invalid(
                "fragmentation.daughter",
                format!("expected one of power_law, parabolic, tabulated, got \"{other}\""),
            ))
        }
    };
    let fragmentation = at_key(
        FragmentationParams::new(a0, gamma, daughter),
        "fragmentation",
    )?;

    let evolve = merge_evolve(
        EvolveConfig::default(),
        &raw.evolve.unwrap_or_default(),
        "evolve",
    )?;

    let schedule = match raw.schedule {
        None => at_key(
            ContinuationSchedule::default_for(Some(grid.x_max)),
            "schedule",
        )?,
        Some(stages) => {
            let mut out = Vec::with_capacity(stages.len());
            for (k, st) in stages.iter().enumerate() {
                let key = format!("schedule[{k}]");
                let eps = required(st.epsilon, &format!("{key}.epsilon"))?;
                let j = match st.j {
                    None => Some(grid.x_max),
                    Some(j) if j == f64::INFINITY => None,
                    Some(j) => Some(j),
                };
                let truncation = at_key(Truncation::new(j, eps), &key)?;
                let evolve = match &st.evolve {
                    Some(o) => Some(merge_evolve(evolve, o, &format!("{key}.evolve"))?),
                    None => None,
                };
                out.push(Stage { truncation, evolve });
            }
            at_key(ContinuationSchedule::new(out), "schedule")?
        }
    };

    let output = match raw.output {
        None => OutputConfig::default(),
        Some(o) => OutputConfig {
            csv: o.csv,
            json: o.json,
        },
    };

    let lambda = coagulation.lambda();
    let v = raw.verify;
    let verify = VerifyConfig {
        exponential: v
            .as_ref()
            .and_then(|v| v.exponential.clone())
            .unwrap_or_else(|| DEFAULT_EXPONENTIAL_RATES.to_vec()),
        fit_decades: v.as_ref().and_then(|v| v.fit_decades).unwrap_or(2.0),
        moments: v
            .as_ref()
            .and_then(|v| v.moments.clone())
            .unwrap_or_else(|| vec![lambda + 0.1, 1.0, 2.0, 2.0 + gamma]),
        weighted_lp: v
            .as_ref()
            .and_then(|v| v.weighted_lp.clone())
            .unwrap_or_default(),
    };
    for (k, s) in verify.exponential.iter().enumerate() {
        positive(*s, &format!("verify.exponential[{k}]"))?;
    }
    positive(verify.fit_decades, "verify.fit_decades")?;
    for (k, (_, p)) in verify.weighted_lp.iter().enumerate() {
        if !(*p >= 1.0) {
            return Err(invalid(
                format!("verify.weighted_lp[{k}]"),
                format!("p >= 1 required, got {p}"),
            ));
        }
    }

    Ok(RunConfig {
        rho,
        grid,
        coagulation,
        fragmentation,
        evolve,
        schedule,
        output,
        verify,
    })
}

/// Writes `x, f, cumulative_mass` with 17 significant digits.
pub fn write_solution_csv<W: Write>(out: W, s: &DistributionState) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(io::Error::other(e));
    w.write_record(["x", "f", "cumulative_mass"])
        .map_err(csv_err)?;
    let g = s.grid();
    let mut cumulative = 0.0;
    for ((x, width), f) in g.pivots().iter().zip(g.widths()).zip(s.densities()) {
        cumulative += x * f * width;
        w.write_record([fmt(*x), fmt(*f), fmt(cumulative)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Round-trip decimal representation.
pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Reads a solution CSV and checks it against `grid`.
pub fn read_solution_csv<R: Read>(input: R, grid: Arc<SizeGrid>) -> Result<DistributionState> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .clone();
    if headers.len() < 2 || &headers[0] != "x" || &headers[1] != "f" {
        return Err(Error::Parse(format!(
            "solution CSV must start with columns x,f; found {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut xs = Vec::with_capacity(grid.len());
    let mut fs = Vec::with_capacity(grid.len());
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let num = |k: usize| {
            rec.get(k)
                .ok_or_else(|| Error::Parse(format!("row {}: missing column {k}", row + 2)))?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("row {}: {e}", row + 2)))
        };
        xs.push(num(0)?);
        fs.push(num(1)?);
    }
    if xs.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "solution has {} rows but the grid has {} cells",
            xs.len(),
            grid.len()
        )));
    }
    for (k, (x, p)) in xs.iter().zip(grid.pivots()).enumerate() {
        if (x - p).abs() > 1e-12 * p {
            return Err(Error::GridMismatch(format!(
                "row {k}: x={x} does not match pivot {p}"
            )));
        }
    }
    DistributionState::new(grid, fs, 0.0)
}

/// Opens a file for writing, or standard output for `-`.
pub fn open_output(path: &Path) -> Result<Box<dyn Write>> {
    if path == Path::new("-") {
        Ok(Box::new(io::stdout().lock()))
    } else {
        let file = File::create(path)
            .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Ok(Box::new(BufWriter::new(file)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentValue {
    pub m: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightedLpValue {
    pub m: f64,
    pub p: f64,
    pub value: f64,
}

/// Quantities computed from a single state, shared by solve and verify.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Analysis {
    pub mass: f64,
    pub mass_error: f64,
    pub moments: Vec<MomentValue>,
    pub weighted_lp: Vec<WeightedLpValue>,
    pub weak_form: WeakFormReport,
    pub exponent_fit: Option<ExponentFit>,
    pub exponent_fit_error: Option<String>,
    pub tau_predicted: TauPrediction,
}

pub fn analyze(s: &DistributionState, cfg: &RunConfig) -> Result<Analysis> {
    let tests = cfg
        .verify
        .exponential
        .iter()
        .map(|&r| TestFunction::exponential(r))
        .collect::<Result<Vec<_>>>()?;
    let weak_form = weak_form_residual(
        s,
        &cfg.coagulation,
        &cfg.fragmentation,
        &Truncation::none(),
        &tests,
    )?;
    let (exponent_fit, exponent_fit_error) =
        match fit_small_size_exponent(s, cfg.verify.fit_decades) {
            Ok(fit) => (Some(fit), None),
            Err(e) => (None, Some(e.to_string())),
        };
    let mass = s.mass();
    Ok(Analysis {
        mass,
        mass_error: (mass - cfg.rho).abs() / cfg.rho,
        moments: cfg
            .verify
            .moments
            .iter()
            .map(|&m| MomentValue {
                m,
                value: moment(s, m),
            })
            .collect(),
        weighted_lp: cfg
            .verify
            .weighted_lp
            .iter()
            .map(|&(m, p)| WeightedLpValue {
                m,
                p,
                value: weighted_lp(s, m, p),
            })
            .collect(),
        weak_form,
        exponent_fit,
        exponent_fit_error,
        tau_predicted: predicted_tau(&cfg.coagulation, &cfg.fragmentation),
    })
}

/// Regularization level above which the negative-moment bound no longer
/// applies, evaluated at `m0 = m⋆/2` and `σ = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdNote {
    pub m0: f64,
    pub sigma: f64,
    pub epsilon_max: f64,
    /// Stage regularizations exceeding `epsilon_max`.
    pub stages_above: Vec<f64>,
}

fn threshold_note(cfg: &RunConfig) -> Option<ThresholdNote> {
    let m0 = 0.5 * cfg.fragmentation.daughter().m_star().value;
    let sigma = 1.0;
    let epsilon_max =
        epsilon_threshold(m0, sigma, &cfg.coagulation, &cfg.fragmentation, cfg.rho).ok()?;
    Some(ThresholdNote {
        m0,
        sigma,
        epsilon_max,
        stages_above: cfg
            .schedule
            .stages()
            .iter()
            .map(|s| s.truncation.epsilon())
            .filter(|e| *e > epsilon_max)
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub schema: &'static str,
    pub converged: bool,
    pub config: RunConfig,
    pub epsilon_threshold: Option<ThresholdNote>,
    pub stages: Vec<SteadyReport>,
    pub analysis: Analysis,
}

/// Result of a solve with the final state.
pub struct SolveOutcome {
    pub state: DistributionState,
    pub report: SolveReport,
    pub wall_clock_seconds: f64,
}

/// Runs the configured continuation and analyses the final state.
pub fn solve(cfg: &RunConfig) -> Result<SolveOutcome> {
    let started = Stopwatch::start();
    let grid = Arc::new(cfg.grid.build()?);
    let spec = ReportSpec {
        moments: cfg.verify.moments.clone(),
        weighted_lp: cfg.verify.weighted_lp.clone(),
    };
    let (state, stages) = continuation_run(
        grid,
        &cfg.coagulation,
        &cfg.fragmentation,
        &cfg.schedule,
        cfg.rho,
        &cfg.evolve,
        &spec,
        None,
    )?;
    let analysis = analyze(&state, cfg)?;
    let report = SolveReport {
        schema: SOLVE_SCHEMA,
        converged: stages.iter().all(|s| s.converged),
        config: cfg.clone(),
        epsilon_threshold: threshold_note(cfg),
        stages,
        analysis,
    };
    Ok(SolveOutcome {
        state,
        report,
        wall_clock_seconds: started.seconds(),
    })
}

/// Wall clock; reads zero on wasm32, where `Instant` is unavailable.
struct Stopwatch {
    #[cfg(not(target_arch = "wasm32"))]
    started: std::time::Instant,
}

impl Stopwatch {
    fn start() -> Self {
        Self {
            #[cfg(not(target_arch = "wasm32"))]
            started: std::time::Instant::now(),
        }
    }

    fn seconds(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.started.elapsed().as_secs_f64();
        #[cfg(target_arch = "wasm32")]
        return 0.0;
    }
}

/// Report as JSON with the wall-clock section appended last.
pub fn report_json<T: Serialize>(report: &T, wall_clock_seconds: f64) -> Result<String> {
    let mut v = serde_json::to_value(report)?;
    if let Value::Object(map) = &mut v {
        map.insert(
            TIMING_KEY.into(),
            serde_json::json!({ "wall_clock_seconds": wall_clock_seconds }),
        );
    }
    let mut text = serde_json::to_string_pretty(&v)?;
    text.push('\n');
    Ok(text)
}

/// The part of a JSON report expected to be identical across runs.
pub fn comparable_payload(json_text: &str) -> Result<String> {
    let mut v: Value = serde_json::from_str(json_text)?;
    if let Value::Object(map) = &mut v {
        map.shift_remove(TIMING_KEY);
    }
    Ok(serde_json::to_string(&v)?)
}

/// Process exit status of a command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    NotConverged,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Self::Converged => 0,
            Self::NotConverged => 2,
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut out = open_output(path)?;
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

/// Solves and writes the configured outputs. Without any output path the
/// JSON report goes to standard output.
pub fn cmd_solve(cfg: &RunConfig) -> Result<Status> {
    let outcome = solve(cfg)?;
    let json = report_json(&outcome.report, outcome.wall_clock_seconds)?;
    if let Some(path) = &cfg.output.csv {
        let mut out = open_output(path)?;
        write_solution_csv(&mut out, &outcome.state)?;
        out.flush()?;
    }
    match &cfg.output.json {
        Some(path) => write_text(path, &json)?,
        None if cfg.output.csv.is_none() => write_text(Path::new("-"), &json)?,
        None => {}
    }
    info!(
        "solve finished in {:.2}s: converged={}",
        outcome.wall_clock_seconds, outcome.report.converged
    );
    Ok(if outcome.report.converged {
        Status::Converged
    } else {
        Status::NotConverged
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub schema: &'static str,
    pub source: String,
    pub config: RunConfig,
    pub analysis: Analysis,
}

/// Recomputes the analysis of a stored solution.
pub fn verify_solution(csv_path: &Path, cfg: &RunConfig) -> Result<(VerifyReport, f64)> {
    let started = Stopwatch::start();
    let grid = Arc::new(cfg.grid.build()?);
    let file = File::open(csv_path).map_err(|e| {
        Error::Io(io::Error::new(
            e.kind(),
            format!("{}: {e}", csv_path.display()),
        ))
    })?;
    let state = read_solution_csv(file, grid)?;
    let analysis = analyze(&state, cfg)?;
    Ok((
        VerifyReport {
            schema: VERIFY_SCHEMA,
            source: csv_path.display().to_string(),
            config: cfg.clone(),
            analysis,
        },
        started.seconds(),
    ))
}

pub fn cmd_verify(csv_path: &Path, cfg: &RunConfig, json_out: &Path) -> Result<()> {
    let (report, secs) = verify_solution(csv_path, cfg)?;
    write_text(json_out, &report_json(&report, secs)?)?;
    info!(
        "verify: mass={:.6e} max weak-form residual={:.3e}",
        report.analysis.mass,
        report.analysis.weak_form.max_residual()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BernsteinSummary {
    pub oracle: &'static str,
    pub s_max: f64,
    pub n_points: usize,
    pub max_residual: f64,
    pub slope_at_zero: f64,
    pub limit: f64,
}

/// Writes `s, U, residual` and returns the summary.
pub fn cmd_oracle_bernstein(s_max: f64, n_points: usize, out: &Path) -> Result<BernsteinSummary> {
    let sol = solve_bernstein(s_max, n_points)?;
    let mut w = csv::Writer::from_writer(open_output(out)?);
    let csv_err = |e: csv::Error| Error::Io(io::Error::other(e));
    w.write_record(["s", "U", "residual"]).map_err(csv_err)?;
    for ((s, u), r) in sol.s.iter().zip(&sol.u).zip(&sol.residual) {
        w.write_record([fmt(*s), fmt(*u), fmt(*r)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(BernsteinSummary {
        oracle: "bernstein",
        s_max,
        n_points,
        max_residual: sol.max_residual,
        slope_at_zero: sol.slope_at_zero,
        limit: sol.limit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstantKernelSummary {
    pub oracle: &'static str,
    pub rho: f64,
    pub a0: f64,
    pub z: f64,
    pub number: f64,
}

/// Writes `x, phi_ref` on the pivots of `grid` and returns `z`.
pub fn cmd_oracle_constant_kernel(
    rho: f64,
    a0: f64,
    grid: &GridConfig,
    out: &Path,
) -> Result<ConstantKernelSummary> {
    let r = constant_kernel_reference(rho, a0)?;
    let g = grid.build()?;
    let mut w = csv::Writer::from_writer(open_output(out)?);
    let csv_err = |e: csv::Error| Error::Io(io::Error::other(e));
    w.write_record(["x", "phi_ref"]).map_err(csv_err)?;
    for x in g.pivots() {
        w.write_record([fmt(*x), fmt(r.density(*x))])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(ConstantKernelSummary {
        oracle: "constant-kernel",
        rho,
        a0,
        z: r.z,
        number: r.number(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "rho = 1.0\n\
        grid.x_min = 1e-4\ngrid.x_max = 1e2\ngrid.n_cells = 60\n\
        coagulation.alpha = 0.0\ncoagulation.beta = 0.0\n\
        fragmentation.gamma = 1.0\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.coagulation.k0(), 1.0);
        assert_eq!(cfg.fragmentation.a0(), 1.0);
        assert_eq!(
            cfg.fragmentation.daughter().kind(),
            &crate::coefficients::DaughterKind::PowerLaw { nu: 0.0 }
        );
        let eps: Vec<f64> = cfg
            .schedule
            .stages()
            .iter()
            .map(|s| s.truncation.epsilon())
            .collect();
        assert_eq!(eps, vec![0.1, 0.03, 0.01, 0.003, 0.001]);
        assert!(cfg
            .schedule
            .stages()
            .iter()
            .all(|s| s.truncation.j() == Some(1e2)));
    }

    fn expect_key(text: &str, key: &str) -> String {
        match parse_config(text) {
            Err(Error::Validation { key: k, reason }) => {
                assert_eq!(k, key, "{reason}");
                reason
            }
            other => panic!("expected validation error at {key}, got {other:?}"),
        }
    }

    #[test]
    fn rejects_supercritical_kernel() {
        let text = MINIMAL
            .replace("coagulation.alpha = 0.0", "coagulation.alpha = 0.6")
            .replace("coagulation.beta = 0.0", "coagulation.beta = 0.6");
        let reason = expect_key(&text, "coagulation.beta");
        assert!(reason.contains("alpha+beta must lie in [0,1)"), "{reason}");
    }

    #[test]
    fn rejects_zero_gamma() {
        let text = MINIMAL.replace("fragmentation.gamma = 1.0", "fragmentation.gamma = 0.0");
        expect_key(&text, "fragmentation.gamma");
    }

    #[test]
    fn reports_missing_and_unknown_keys() {
        expect_key(&MINIMAL.replace("rho = 1.0\n", ""), "rho");
        match parse_config(&format!("{MINIMAL}grid.cells = 3\n")) {
            Err(Error::Parse(msg)) => assert!(msg.contains("line"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schedule_stages_and_overrides() {
        let text = format!(
            "{MINIMAL}[[schedule]]\nepsilon = 0.1\nj = inf\n[[schedule]]\nepsilon = 0.0\nj = inf\nevolve.max_steps = 7\n"
        );
        let cfg = parse_config(&text).unwrap();
        let st = cfg.schedule.stages();
        assert_eq!(st.len(), 2);
        assert_eq!(st[0].truncation.j(), None);
        assert_eq!(st[1].evolve.unwrap().max_steps, 7);
        let bad = format!("{MINIMAL}[[schedule]]\nepsilon = 0.1\n[[schedule]]\nepsilon = 0.2\n");
        expect_key(&bad, "schedule");
        let bad = format!("{MINIMAL}[[schedule]]\nepsilon = 0.1\nevolve.tol_steady = 2.0\n");
        expect_key(&bad, "schedule[0].evolve.tol_steady");
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let g = Arc::new(SizeGrid::geometric(1e-3, 1e2, 40).unwrap());
        let s = DistributionState::from_fn(g.clone(), |x| (-x).exp() / 3.0 + x.sqrt()).unwrap();
        let mut buf = Vec::new();
        write_solution_csv(&mut buf, &s).unwrap();
        let back = read_solution_csv(buf.as_slice(), g).unwrap();
        assert_eq!(back.densities(), s.densities());
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,f,cumulative_mass\n"));
    }

    #[test]
    fn csv_with_wrong_rows_is_a_grid_mismatch() {
        let g = Arc::new(SizeGrid::geometric(1e-3, 1e2, 40).unwrap());
        let s = DistributionState::from_fn(g, |x| (-x).exp()).unwrap();
        let mut buf = Vec::new();
        write_solution_csv(&mut buf, &s).unwrap();
        let other = Arc::new(SizeGrid::geometric(1e-3, 1e2, 41).unwrap());
        assert!(matches!(
            read_solution_csv(buf.as_slice(), other),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn comparable_payload_drops_timing() {
        let a = report_json(&serde_json::json!({"schema": "x", "v": 1.5}), 1.0).unwrap();
        let b = report_json(&serde_json::json!({"schema": "x", "v": 1.5}), 2.0).unwrap();
        assert_ne!(a, b);
        assert_eq!(
            comparable_payload(&a).unwrap(),
            comparable_payload(&b).unwrap()
        );
        assert!(a.find("\"schema\"").unwrap() < a.find("\"v\"").unwrap());
    }
}
