//! Command-line front end.
//!
//! Configuration comes from an optional JSON file (`--config`) that flags
//! override. Rates are in MHz and times in μs throughout. Exit codes:
//! 0 success, 1 invalid configuration, 2 computation error, 3 validation
//! failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::format::sig12;
use crate::metrics::{
    fidelity_no_detection, fidelity_post_selected, target_epr, target_w_two_photon, target_w_zeta, TargetState,
};
use crate::optimizer::{self, linspace, Objective, OptimizerSettings, SweepRecord};
use crate::params::{FrequencyConvention, PhysicalParams};
use crate::protocol::{AtomLevel, Pass, ProtocolSpec};
use crate::validate::{run_validation, ValidationOptions};

/// Cavity lifetime the total interaction time is compared against.
pub const CAVITY_DECOHERENCE_TIME_S: f64 = 0.1;

const US_TO_S: f64 = 1e-6;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID_CONFIG: i32 = 1;
pub const EXIT_COMPUTATION: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "twophoton", version, about = "Two-photon cavity-QED EPR / W state generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a protocol at fixed interaction times.
    Simulate(RunArgs),
    /// Evaluate a grid of interaction times and write CSV.
    Sweep(RunArgs),
    /// Search interaction times that maximize fidelity.
    Optimize(RunArgs),
    /// Run the closed-form vs. oracle and invariant checks.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Epr,
    W,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Interaction time in cavity 1 (μs).
    #[arg(long)]
    pub t1: Option<f64>,
    #[arg(long)]
    pub t2: Option<f64>,
    #[arg(long)]
    pub t3: Option<f64>,
    /// Sweep axis, `<var>=<start>:<stop>:<points>`. Repeatable.
    #[arg(long = "grid", value_name = "VAR=START:STOP:POINTS")]
    pub grid: Vec<String>,
    /// Optimizer bound, `<var>=<lo>:<hi>`. Repeatable.
    #[arg(long = "bounds", value_name = "VAR=LO:HI")]
    pub bounds: Vec<String>,
    /// Optimize / report the fidelity with the atom left unmeasured.
    #[arg(long)]
    pub no_detection: bool,
    #[arg(long, value_parser = parse_convention)]
    pub convention: Option<FrequencyConvention>,
    #[arg(long)]
    pub min_probability: Option<f64>,
    /// Coarse grid points per axis for `optimize`.
    #[arg(long)]
    pub coarse_points: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ValidateArgs {
    #[arg(long, default_value_t = 2009)]
    pub seed: u64,
    /// Add this amount to one propagator entry in the unitarity check.
    #[arg(long, hide = true, default_value_t = 0.0)]
    pub perturb: f64,
}

fn parse_convention(s: &str) -> Result<FrequencyConvention, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

// ---------------------------------------------------------------------------
// configuration file

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g2: Option<f64>,
    /// Absolute detuning (MHz).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Detuning in units of `g1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_over_g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convention: Option<FrequencyConvention>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitProtocol {
    #[serde(default = "default_atom")]
    pub initial_atom: AtomLevel,
    pub n_cavities: usize,
    /// One-based cavity index per pass, in order.
    pub cavities: Vec<usize>,
    #[serde(default = "default_detection")]
    pub detection: Option<AtomLevel>,
}

fn default_atom() -> AtomLevel {
    AtomLevel::E
}

fn default_detection() -> Option<AtomLevel> {
    Some(AtomLevel::G)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProtocolConfig {
    Preset(Preset),
    Explicit(ExplicitProtocol),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WZetaConfig {
    pub zeta: f64,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub delta_phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetConfig {
    Named(Preset),
    WZeta { w_zeta: WZetaConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    /// `"start:stop:points"`
    Range(String),
    Values { values: Vec<f64> },
}

impl GridSpec {
    fn values(&self, var: &str) -> Result<Vec<f64>, String> {
        match self {
            GridSpec::Values { values } if !values.is_empty() => Ok(values.clone()),
            GridSpec::Values { .. } => Err(format!("grid `{var}` has no values")),
            GridSpec::Range(s) => {
                let parts: Vec<&str> = s.split(':').collect();
                let [start, stop, points] = parts.as_slice() else {
                    return Err(format!("grid `{var}={s}` is not START:STOP:POINTS"));
                };
                let start: f64 = start.trim().parse().map_err(|_| format!("bad grid start in `{s}`"))?;
                let stop: f64 = stop.trim().parse().map_err(|_| format!("bad grid stop in `{s}`"))?;
                let points: usize = points.trim().parse().map_err(|_| format!("bad grid point count in `{s}`"))?;
                if points == 0 {
                    return Err(format!("grid `{var}` needs at least one point"));
                }
                if stop < start {
                    return Err(format!("grid `{var}` has stop < start"));
                }
                Ok(linspace(start, stop, points))
            }
        }
    }
}

/// Everything a run needs. Serialized back verbatim into every output.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub params: ParamsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetConfig>,
    /// Fixed interaction times (μs) keyed `t1`, `t2`, ...
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub times: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub grid: BTreeMap<String, GridSpec>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub bounds: BTreeMap<String, [f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<Objective>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_probability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarse_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<OutputFormat>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("invalid config: {e}"))
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::from_json(&text)
    }

    /// Apply command-line flags on top of the file values.
    pub fn apply_flags(&mut self, args: &RunArgs) -> Result<(), String> {
        if let Some(p) = args.preset {
            self.protocol = Some(ProtocolConfig::Preset(p));
        }
        for (var, t) in [("t1", args.t1), ("t2", args.t2), ("t3", args.t3)] {
            if let Some(t) = t {
                self.grid.remove(var);
                self.bounds.remove(var);
                self.times.insert(var.to_string(), t);
            }
        }
        for g in &args.grid {
            let (var, spec) = g.split_once('=').ok_or_else(|| format!("--grid `{g}` is not VAR=START:STOP:POINTS"))?;
            let var = var.trim().to_string();
            self.times.remove(&var);
            self.grid.insert(var, GridSpec::Range(spec.trim().to_string()));
        }
        for b in &args.bounds {
            let (var, spec) = b.split_once('=').ok_or_else(|| format!("--bounds `{b}` is not VAR=LO:HI"))?;
            let (lo, hi) = spec.split_once(':').ok_or_else(|| format!("--bounds `{b}` is not VAR=LO:HI"))?;
            let lo: f64 = lo.trim().parse().map_err(|_| format!("bad lower bound in `{b}`"))?;
            let hi: f64 = hi.trim().parse().map_err(|_| format!("bad upper bound in `{b}`"))?;
            let var = var.trim().to_string();
            self.times.remove(&var);
            self.bounds.insert(var, [lo, hi]);
        }
        if args.no_detection {
            self.objective = Some(Objective::FidelityNoDetection);
        }
        if let Some(c) = args.convention {
            self.params.convention = Some(c);
        }
        if args.min_probability.is_some() {
            self.min_probability = args.min_probability;
        }
        if args.coarse_points.is_some() {
            self.coarse_points = args.coarse_points;
        }
        if args.out.is_some() {
            self.out = args.out.clone();
        }
        if args.format.is_some() {
            self.format = args.format;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn physical_params(&self) -> Result<PhysicalParams, String> {
        let p = &self.params;
        let convention = p.convention.unwrap_or_default();
        let explicit = p.g1.is_some() || p.g2.is_some() || p.delta.is_some() || p.delta_over_g.is_some();
        match (&p.preset, explicit) {
            (Some(_), true) => Err("params: give either a preset or explicit g1/g2/delta, not both".into()),
            (Some(name), false) if name == "nominal" => Ok(PhysicalParams::nominal(convention)),
            (Some(name), false) => Err(format!("params: unknown preset `{name}`")),
            (None, false) => Ok(PhysicalParams::nominal(convention)),
            (None, true) => {
                let g1 = p.g1.ok_or("params: g1 missing")?;
                let g2 = p.g2.ok_or("params: g2 missing")?;
                let delta = match (p.delta, p.delta_over_g) {
                    (Some(d), None) => d,
                    (None, Some(k)) => k * g1,
                    _ => return Err("params: give exactly one of delta or delta_over_g".into()),
                };
                PhysicalParams::new(g1, g2, delta, convention).map_err(|e| e.to_string())
            }
        }
    }

    pub fn protocol_spec(&self, params: PhysicalParams) -> Result<ProtocolSpec, String> {
        let spec = match self.protocol.as_ref().ok_or("no protocol given (use --preset epr|w)")? {
            ProtocolConfig::Preset(Preset::Epr) => ProtocolSpec::epr(params, 0.0, 0.0),
            ProtocolConfig::Preset(Preset::W) => ProtocolSpec::w(params, 0.0, 0.0, 0.0),
            ProtocolConfig::Explicit(e) => {
                let passes = e
                    .cavities
                    .iter()
                    .map(|&c| {
                        if c == 0 || c > e.n_cavities {
                            Err(format!("cavity {c} outside 1..={}", e.n_cavities))
                        } else {
                            Ok(Pass { cavity: c - 1, duration: 0.0 })
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                ProtocolSpec {
                    initial_atom: e.initial_atom,
                    n_cavities: e.n_cavities,
                    passes,
                    detection: e.detection,
                    params,
                }
            }
        };
        spec.validate().map_err(|e| e.to_string())?;
        if spec.passes.is_empty() {
            return Err("protocol has no passes".into());
        }
        if spec.detection.is_none() && self.objective() == Objective::Fidelity {
            return Err("post-selected fidelity needs a detection level (or use --no-detection)".into());
        }
        Ok(spec)
    }

    pub fn objective(&self) -> Objective {
        self.objective.unwrap_or_default()
    }

    pub fn target_state(&self, n_cavities: usize) -> Result<TargetState, String> {
        let named = match (&self.target, &self.protocol) {
            (Some(TargetConfig::WZeta { w_zeta }), _) => {
                return target_w_zeta(w_zeta.zeta, w_zeta.gamma, w_zeta.delta_phase)
                    .map(|t| t.to_two_photon_encoding())
                    .map_err(|e| e.to_string());
            }
            (Some(TargetConfig::Named(p)), _) => *p,
            (None, Some(ProtocolConfig::Preset(p))) => *p,
            (None, _) => match n_cavities {
                2 => Preset::Epr,
                3 => Preset::W,
                n => return Err(format!("no default target for {n} cavities")),
            },
        };
        let t = match named {
            Preset::Epr => target_epr(),
            Preset::W => target_w_two_photon(),
        };
        if t.width() != n_cavities {
            return Err(format!("target `{}` does not fit {n_cavities} cavities", t.label));
        }
        Ok(t)
    }

    fn check_variables(&self, n_passes: usize) -> Result<(), String> {
        let known = |v: &str| {
            v.strip_prefix('t').and_then(|k| k.parse::<usize>().ok()).is_some_and(|k| k >= 1 && k <= n_passes)
        };
        for v in self.times.keys().chain(self.grid.keys()).chain(self.bounds.keys()) {
            if !known(v) {
                return Err(format!("unknown time variable `{v}` (protocol has t1..t{n_passes})"));
            }
        }
        for (v, &t) in &self.times {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(format!("{v} = {t} must be a finite nonnegative time"));
            }
        }
        if let Some(p) = self.min_probability {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("min_probability {p} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

fn var(i: usize) -> String {
    format!("t{}", i + 1)
}

/// Validated inputs shared by every run command.
struct Resolved {
    config: RunConfig,
    params: PhysicalParams,
    template: ProtocolSpec,
    target: TargetState,
    objective: Objective,
}

fn resolve(args: &RunArgs) -> Result<Resolved, String> {
    let mut config = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    config.apply_flags(args)?;
    let params = config.physical_params()?;
    let template = config.protocol_spec(params)?;
    config.check_variables(template.passes.len())?;
    let target = config.target_state(template.n_cavities)?;
    let objective = config.objective();
    Ok(Resolved { config, params, template, target, objective })
}

// ---------------------------------------------------------------------------
// errors and output

#[derive(Debug)]
pub enum CliError {
    InvalidConfig(String),
    Computation(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::InvalidConfig(_) => EXIT_INVALID_CONFIG,
            CliError::Computation(_) => EXIT_COMPUTATION,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::InvalidConfig(m) | CliError::Computation(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::EmptyBranch { .. } | Error::NoFeasiblePoint(_) => CliError::Computation(e.to_string()),
            other => CliError::InvalidConfig(other.to_string()),
        }
    }
}

fn emit(out: &mut dyn Write, path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::InvalidConfig(format!("cannot write {}: {e}", p.display()))),
        None => out.write_all(text.as_bytes()).map_err(|e| CliError::InvalidConfig(format!("stdout: {e}"))),
    }
}

fn times_map(times: &[f64]) -> BTreeMap<String, f64> {
    times.iter().enumerate().map(|(i, &t)| (var(i), t)).collect()
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub protocol: String,
    pub convention: FrequencyConvention,
    pub times_us: BTreeMap<String, f64>,
    pub objective: Objective,
    pub detection: Option<AtomLevel>,
    /// `None` when the detection branch is empty.
    pub fidelity: Option<f64>,
    pub success_probability: f64,
    pub fidelity_no_detection: f64,
    pub total_interaction_time_s: f64,
    pub cavity_decoherence_time_s: f64,
    pub time_ratio: f64,
    pub config: RunConfig,
}

impl SimulateReport {
    pub fn empty_branch(&self) -> bool {
        self.objective == Objective::Fidelity && self.fidelity.is_none()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let times: Vec<String> = self.times_us.iter().map(|(k, v)| format!("{k}={}", sig12(*v))).collect();
        let _ = writeln!(s, "protocol: {}", self.protocol);
        let _ = writeln!(s, "convention: {}", self.convention);
        let _ = writeln!(s, "times_us: {}", times.join(" "));
        let _ = writeln!(s, "objective: {}", self.objective);
        if let Some(l) = self.detection {
            let _ = writeln!(s, "detection: {l}");
        }
        match self.fidelity {
            Some(f) => {
                let _ = writeln!(s, "fidelity: {}", sig12(f));
            }
            None => {
                let _ = writeln!(s, "fidelity: undefined (detection branch empty)");
            }
        }
        let _ = writeln!(s, "success_probability: {}", sig12(self.success_probability));
        let _ = writeln!(s, "fidelity_no_detection: {}", sig12(self.fidelity_no_detection));
        let _ = writeln!(s, "total_interaction_time_s: {}", sig12(self.total_interaction_time_s));
        let _ = writeln!(s, "cavity_decoherence_time_s: {}", sig12(self.cavity_decoherence_time_s));
        let _ = writeln!(s, "time_ratio: {}", sig12(self.time_ratio));
        let _ = writeln!(s, "config: {}", self.config.to_json());
        s
    }
}

fn protocol_label(config: &RunConfig, template: &ProtocolSpec) -> String {
    match &config.protocol {
        Some(ProtocolConfig::Preset(Preset::Epr)) => "epr".into(),
        Some(ProtocolConfig::Preset(Preset::W)) => "w".into(),
        _ => format!("custom ({} cavities, {} passes)", template.n_cavities, template.passes.len()),
    }
}

pub fn simulate(args: &RunArgs) -> Result<SimulateReport, CliError> {
    let r = resolve(args).map_err(CliError::InvalidConfig)?;
    if !r.config.grid.is_empty() || !r.config.bounds.is_empty() {
        return Err(CliError::InvalidConfig("simulate takes fixed times only (no --grid/--bounds)".into()));
    }
    let times = (0..r.template.passes.len())
        .map(|i| r.config.times.get(&var(i)).copied().ok_or_else(|| format!("missing fixed time {}", var(i))))
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::InvalidConfig)?;
    let spec = r.template.with_durations(&times)?;
    let state = spec.evolve()?;
    let detect = spec.detection.unwrap_or(AtomLevel::G);
    let (fidelity, success_probability) = match fidelity_post_selected(&state, detect, &r.target) {
        Ok(f) => (Some(f.fidelity), f.probability),
        Err(Error::EmptyBranch { probability, .. }) => (None, probability),
        Err(e) => return Err(e.into()),
    };
    let nd = fidelity_no_detection(&state, &r.target)?;
    let fidelity = match r.objective {
        Objective::Fidelity => fidelity,
        Objective::FidelityNoDetection => Some(nd),
    };
    let total = spec.total_interaction_time() * US_TO_S;
    Ok(SimulateReport {
        protocol: protocol_label(&r.config, &r.template),
        convention: r.params.convention(),
        times_us: times_map(&times),
        objective: r.objective,
        detection: spec.detection,
        fidelity,
        success_probability,
        fidelity_no_detection: nd,
        total_interaction_time_s: total,
        cavity_decoherence_time_s: CAVITY_DECOHERENCE_TIME_S,
        time_ratio: total / CAVITY_DECOHERENCE_TIME_S,
        config: r.config,
    })
}

pub fn cmd_simulate(args: &RunArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let report = simulate(args)?;
    let text = match report.config.format {
        Some(OutputFormat::Json) => serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
        _ => report.to_text(),
    };
    emit(out, report.config.out.as_deref(), &text)?;
    if report.empty_branch() {
        return Err(CliError::Computation("detection branch is empty at the given times".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep

/// CSV text: a `#` line with the effective config, the header, then one row
/// per grid point.
pub fn sweep_csv(result: &optimizer::SweepResult, config: &RunConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# config: {}", config.to_json());
    let header: Vec<String> = (0..result.axes.len()).map(var).collect();
    let _ = writeln!(s, "{},fidelity,probability", header.join(","));
    for rec in &result.records {
        let mut row: Vec<String> = rec.times.iter().map(|&t| sig12(t)).collect();
        row.push(rec.fidelity.map_or_else(|| "nan".to_string(), sig12));
        row.push(sig12(rec.probability));
        let _ = writeln!(s, "{}", row.join(","));
    }
    s
}

#[derive(Serialize)]
struct SweepJson<'a> {
    config: &'a RunConfig,
    objective: Objective,
    axes: &'a [Vec<f64>],
    records: &'a [SweepRecord],
    best: Option<&'a SweepRecord>,
}

pub fn sweep(args: &RunArgs) -> Result<(optimizer::SweepResult, RunConfig, Objective), CliError> {
    let r = resolve(args).map_err(CliError::InvalidConfig)?;
    if !r.config.bounds.is_empty() {
        return Err(CliError::InvalidConfig("sweep takes --grid axes, not --bounds".into()));
    }
    let mut grids = Vec::new();
    for i in 0..r.template.passes.len() {
        let v = var(i);
        let axis = match (r.config.grid.get(&v), r.config.times.get(&v)) {
            (Some(g), _) => g.values(&v).map_err(CliError::InvalidConfig)?,
            (None, Some(&t)) => vec![t],
            (None, None) => return Err(CliError::InvalidConfig(format!("{v} needs a fixed value or a --grid"))),
        };
        grids.push(axis);
    }
    let result = optimizer::sweep(&r.template, &grids, r.objective, &r.target)?;
    Ok((result, r.config, r.objective))
}

pub fn cmd_sweep(args: &RunArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (result, config, objective) = sweep(args)?;
    let text = match config.format {
        Some(OutputFormat::Json) => {
            let j = SweepJson {
                config: &config,
                objective,
                axes: &result.axes,
                records: &result.records,
                best: result.best_record(),
            };
            serde_json::to_string_pretty(&j).expect("sweep serializes") + "\n"
        }
        _ => sweep_csv(&result, &config),
    };
    emit(out, config.out.as_deref(), &text)
}

// ---------------------------------------------------------------------------
// optimize

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeRecord {
    pub times_us: BTreeMap<String, f64>,
    pub fidelity: f64,
    pub probability: f64,
    pub objective: Objective,
    pub convention: FrequencyConvention,
    pub min_probability: Option<f64>,
    pub evaluations: usize,
    pub config: RunConfig,
}

pub fn optimize(args: &RunArgs) -> Result<OptimizeRecord, CliError> {
    let r = resolve(args).map_err(CliError::InvalidConfig)?;
    if !r.config.grid.is_empty() {
        return Err(CliError::InvalidConfig("optimize takes --bounds, not --grid".into()));
    }
    let mut bounds = Vec::new();
    for i in 0..r.template.passes.len() {
        let v = var(i);
        let b = match (r.config.bounds.get(&v), r.config.times.get(&v)) {
            (Some(&[lo, hi]), _) => (lo, hi),
            (None, Some(&t)) => (t, t),
            (None, None) => return Err(CliError::InvalidConfig(format!("{v} needs a fixed value or --bounds"))),
        };
        bounds.push(b);
    }
    let mut settings = OptimizerSettings::default();
    if let Some(p) = r.config.coarse_points {
        settings.coarse_points = p;
    }
    let res = optimizer::optimize_times_with(
        &r.template,
        &bounds,
        &r.target,
        r.objective,
        r.config.min_probability,
        settings,
    )?;
    Ok(OptimizeRecord {
        times_us: times_map(&res.best.times),
        fidelity: res.best.fidelity.expect("optimizer returns feasible records"),
        probability: res.best.probability,
        objective: res.objective,
        convention: r.params.convention(),
        min_probability: res.min_probability,
        evaluations: res.evaluations,
        config: r.config,
    })
}

pub fn cmd_optimize(args: &RunArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let rec = optimize(args)?;
    let json = serde_json::to_string_pretty(&rec).expect("record serializes") + "\n";
    let times: Vec<String> = rec.times_us.iter().map(|(k, v)| format!("{k}={}", sig12(*v))).collect();
    let mut report = String::new();
    let _ = writeln!(report, "best times_us: {}", times.join(" "));
    let _ = writeln!(report, "{}: {}", rec.objective, sig12(rec.fidelity));
    let _ = writeln!(report, "success_probability: {}", sig12(rec.probability));
    let _ = writeln!(report, "convention: {}", rec.convention);
    let _ = writeln!(report, "evaluations: {}", rec.evaluations);
    match rec.config.out.as_deref() {
        Some(p) => {
            emit(out, None, &report)?;
            emit(out, Some(p), &json)
        }
        None => emit(out, None, &(report + &json)),
    }
}

// ---------------------------------------------------------------------------
// validate

pub fn cmd_validate(args: &ValidateArgs, out: &mut dyn Write) -> Result<bool, CliError> {
    let opts = ValidationOptions { seed: args.seed, perturbation: args.perturb, ..Default::default() };
    let report = run_validation(&opts)?;
    let mut s = String::new();
    for c in &report.checks {
        let _ = writeln!(
            s,
            "{} {:<28} max_residual={:.3e} tolerance={:.1e} samples={}",
            if c.passed() { "PASS" } else { "FAIL" },
            c.name,
            c.max_residual,
            c.tolerance,
            c.samples
        );
    }
    let _ = writeln!(s, "{}", if report.passed() { "all checks passed" } else { "validation FAILED" });
    emit(out, None, &s)?;
    Ok(report.passed())
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_INVALID_CONFIG,
            };
            let rendered = e.render().to_string();
            let _ = if code == EXIT_OK { out.write_all(rendered.as_bytes()) } else { err.write_all(rendered.as_bytes()) };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::Optimize(a) => cmd_optimize(a, out),
        Command::Validate(a) => match cmd_validate(a, out) {
            Ok(true) => Ok(()),
            Ok(false) => return EXIT_VALIDATION,
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("twophoton").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"protocol": "epr", "bogus": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"params": {"g": 1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"protocol": "epr", "times": {"t1": 3}}"#).is_ok());
    }

    #[test]
    fn config_round_trips() {
        let text = r#"{"params":{"g1":10,"g2":12,"delta_over_g":5,"convention":"cyclic"},
            "protocol":{"n_cavities":2,"cavities":[1,2]},"target":"epr",
            "grid":{"t2":"0:1:3","t1":{"values":[2,5]}},"objective":"fidelity_no_detection"}"#;
        let c = RunConfig::from_json(text).unwrap();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        let p = c.physical_params().unwrap();
        assert_eq!(p.delta_raw(), 50.0);
        assert_eq!(p.convention(), FrequencyConvention::Cyclic);
    }

    #[test]
    fn params_need_one_detuning() {
        let c = RunConfig::from_json(r#"{"params":{"g1":1,"g2":1,"delta":3,"delta_over_g":2}}"#).unwrap();
        assert!(c.physical_params().is_err());
        let c = RunConfig::from_json(r#"{"params":{"preset":"nominal","g1":1}}"#).unwrap();
        assert!(c.physical_params().is_err());
        let c = RunConfig::from_json(r#"{"params":{"preset":"other"}}"#).unwrap();
        assert!(c.physical_params().is_err());
    }

    #[test]
    fn flags_override_file_values() {
        let mut c = RunConfig::from_json(r#"{"protocol":"w","grid":{"t1":"0:1:2"},"times":{"t2":1}}"#).unwrap();
        let args = RunArgs { preset: Some(Preset::Epr), t1: Some(3.0), t2: Some(4.0), ..Default::default() };
        c.apply_flags(&args).unwrap();
        assert_eq!(c.protocol, Some(ProtocolConfig::Preset(Preset::Epr)));
        assert!(c.grid.is_empty());
        assert_eq!(c.times["t1"], 3.0);
        assert_eq!(c.times["t2"], 4.0);
    }

    #[test]
    fn grid_spec_parsing() {
        assert_eq!(GridSpec::Range("2:5:2".into()).values("t1").unwrap(), vec![2.0, 5.0]);
        assert!(GridSpec::Range("2:5".into()).values("t1").is_err());
        assert!(GridSpec::Range("5:2:3".into()).values("t1").is_err());
        assert!(GridSpec::Range("0:1:0".into()).values("t1").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run_args(&["simulate", "--preset", "epr", "--t1", "3"]).0, EXIT_INVALID_CONFIG);
        assert_eq!(run_args(&["simulate", "--preset", "epr", "--t1", "3", "--t2", "3", "--t3", "1"]).0, EXIT_INVALID_CONFIG);
        assert_eq!(run_args(&["simulate", "--bogus"]).0, EXIT_INVALID_CONFIG);
        assert_eq!(run_args(&["simulate", "--t1", "1", "--t2", "1"]).0, EXIT_INVALID_CONFIG);
        let (code, out, err) = run_args(&["simulate", "--preset", "epr", "--t1", "0", "--t2", "0"]);
        assert_eq!(code, EXIT_COMPUTATION);
        assert!(out.contains("detection branch empty"), "{out}");
        assert!(err.contains("empty"));
        assert_eq!(run_args(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn no_detection_at_zero_times_is_not_an_error() {
        let (code, out, _) = run_args(&["simulate", "--preset", "epr", "--t1", "0", "--t2", "0", "--no-detection"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("fidelity: 0\n"), "{out}");
    }

    #[test]
    fn simulate_text_report() {
        let (code, out, _) = run_args(&["simulate", "--preset", "epr", "--t1", "3", "--t2", "3"]);
        assert_eq!(code, 0);
        assert!(out.contains("convention: angular"));
        assert!(out.contains("total_interaction_time_s: 6e-06"));
        assert!(out.contains("time_ratio: 6e-05"));
    }

    #[test]
    fn sweep_csv_shape() {
        let (code, out, _) =
            run_args(&["sweep", "--preset", "epr", "--grid", "t1=1:2:2", "--grid", "t2=3:4:2"]);
        assert_eq!(code, 0);
        let lines: Vec<&str> = out.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(lines[0], "t1,t2,fidelity,probability");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("1,3,"));
        assert!(lines[4].starts_with("2,4,"));
    }

    #[test]
    fn sweep_needs_every_variable() {
        assert_eq!(run_args(&["sweep", "--preset", "w", "--grid", "t1=1:2:2"]).0, EXIT_INVALID_CONFIG);
        assert_eq!(run_args(&["sweep", "--preset", "epr", "--grid", "t9=1:2:2", "--t1", "1", "--t2", "1"]).0,
            EXIT_INVALID_CONFIG);
    }

    #[test]
    fn unwritable_output() {
        let (code, _, err) =
            run_args(&["sweep", "--preset", "epr", "--t1", "1", "--grid", "t2=0:1:2", "--out", "/nonexistent/dir/x.csv"]);
        assert_eq!(code, EXIT_INVALID_CONFIG);
        assert!(err.contains("cannot write"));
    }

    #[test]
    fn optimize_point_bounds_echo_simulate() {
        let rec = optimize(&RunArgs { preset: Some(Preset::Epr), t1: Some(3.0), t2: Some(3.0), ..Default::default() })
            .unwrap();
        let sim = simulate(&RunArgs { preset: Some(Preset::Epr), t1: Some(3.0), t2: Some(3.0), ..Default::default() })
            .unwrap();
        assert_eq!(Some(rec.fidelity), sim.fidelity);
        assert_eq!(rec.probability, sim.success_probability);
        assert_eq!(rec.times_us, sim.times_us);
    }

    #[test]
    fn explicit_protocol_and_zeta_target() {
        let text = r#"{"protocol":{"n_cavities":3,"cavities":[1,2,3]},
            "target":{"w_zeta":{"zeta":1}},"times":{"t1":32,"t2":32,"t3":32}}"#;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, text).unwrap();
        let zeta = simulate(&RunArgs { config: Some(path), ..Default::default() }).unwrap();
        let w = simulate(&RunArgs {
            preset: Some(Preset::W),
            t1: Some(32.0),
            t2: Some(32.0),
            t3: Some(32.0),
            ..Default::default()
        })
        .unwrap();
        assert!((zeta.fidelity.unwrap() - w.fidelity.unwrap()).abs() < 1e-12);
    }
}
