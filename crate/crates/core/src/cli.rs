//! Command-line driver. Every subcommand produces one JSON report, writes its
//! resolved [`RunConfig`] next to it, and maps its outcome to an exit code.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::energies::{
    self, auto_beta, catalog, extend_envelope_source_small_p, extend_p_ge_2, extend_theorem1_g_k, fit_growth,
    random_matrix, theorem1_schedule_with_reports, BetaProbe, EnergyError, EnergyFunction, ExtensionConfig,
};
use crate::fields::{io as field_io, Field, FieldError, PeriodicGrid};
use crate::kernels::{self, sweep, KernelError, ModelParams};
use crate::korn::{self, KornConfig, KornError, KornMode};
use crate::matrix::Matrix;
use crate::qctest::{self, DeficitReport, OptimizerSettings, QcError};
use crate::rng;

pub const SCHEMA_VERSION: u32 = 1;
const DEFAULT_GRID_N: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Parser)]
#[command(name = "qcreduce", version, about = "Quasiconvexity experiments for matrix energies")]
pub struct Cli {
    /// Run seed; every random stream derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Grid points per axis.
    #[arg(long, global = true)]
    pub grid_n: Option<usize>,
    /// Report path; the run config is written next to it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Re-run a stored run config.
    #[arg(long, global = true)]
    pub replay: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Structural constants for a given exponent.
    Constants(ConstantsArgs),
    /// Randomized sweeps of the pointwise kernel inequalities.
    VerifyLemmas(VerifyArgs),
    /// Empirical Korn-type constants.
    Korn(KornArgs),
    /// Extends a symmetric-matrix energy and tests the extension.
    Extend(ExtendArgs),
    /// Deficit searches at a set of base points.
    QcTest(QcTestArgs),
    /// Upper estimates of a quasiconvex envelope.
    Envelope(EnvelopeArgs),
    /// Penalty schedule and envelope sandwich checks.
    Sandwich(SandwichArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ConstantsArgs {
    #[arg(long)]
    pub p: f64,
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,
    #[arg(long, default_value_t = 1.0)]
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct VerifyArgs {
    #[arg(long, value_delimiter = ',')]
    pub p_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub mu_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub min_dim: Option<usize>,
    #[arg(long)]
    pub max_dim: Option<usize>,
    #[arg(long)]
    pub quad_nodes: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KornModeArg {
    Lemma1,
    Lemma5,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct KornArgs {
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,
    #[arg(long, value_enum, default_value_t = KornModeArg::Lemma1)]
    pub mode: KornModeArg,
    /// Number of random starting fields.
    #[arg(long, alias = "samples", default_value_t = 20)]
    pub restarts: usize,
    #[arg(long, default_value_t = 4)]
    pub max_wavenumber: usize,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
}

/// Optimizer budget shared by the deficit-search subcommands.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SearchArgs {
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 20)]
    pub restarts: usize,
    #[arg(long, default_value_t = 5000)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub gradient_tolerance: f64,
    #[arg(long)]
    pub max_wavenumber: Option<usize>,
}

impl SearchArgs {
    fn settings(&self, seed: u64) -> OptimizerSettings {
        OptimizerSettings {
            restarts: self.restarts,
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
            max_wavenumber: self.max_wavenumber,
            seed,
            ..OptimizerSettings::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtensionPath {
    #[value(name = "p-ge-2")]
    #[serde(rename = "p-ge-2")]
    PGe2,
    Envelope,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ExtendArgs {
    #[arg(long, default_value = "power")]
    pub energy: String,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    #[arg(long, value_enum, default_value_t = ExtensionPath::PGe2)]
    pub path: ExtensionPath,
    /// `auto` or a positive number.
    #[arg(long, default_value = "auto")]
    pub beta: String,
    #[arg(long, default_value_t = 16)]
    pub max_doublings: usize,
    #[arg(long, default_value_t = 50)]
    pub base_points: usize,
    /// Deficits at or above `−tolerance` count as no violation.
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1000)]
    pub restriction_samples: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub search: SearchArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EnergySource {
    /// Catalog name.
    #[arg(long, default_value = "power")]
    pub energy: String,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    /// Energy stored by a previous run (an `extend` report or a bare energy).
    #[arg(long)]
    pub from_extension: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct QcTestArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub source: EnergySource,
    #[arg(long, default_value_t = 20)]
    pub base_points: usize,
    /// Test against Hessians of scalar fields at symmetric base points.
    #[arg(long)]
    pub second_order: bool,
    /// Subtract the strict term using the energy's certified constant.
    #[arg(long)]
    pub strict: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub search: SearchArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvelopeSourceKind {
    /// Use the energy as given.
    AsIs,
    /// `f(A^s) + β((μ²+|A^a|²)^{p/2} − μ^p)`, for `1 < p < 2`.
    EnvelopeSource,
    /// `f(A^s) + β|A^a|^p`.
    Penalty,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EnvelopeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub source: EnergySource,
    #[arg(long, value_enum, default_value_t = EnvelopeSourceKind::AsIs)]
    pub construction: EnvelopeSourceKind,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 20)]
    pub base_points: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub search: SearchArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SandwichArgs {
    #[arg(long, default_value_t = 1.5)]
    pub p: f64,
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1u32, 2, 4, 8])]
    pub ks: Vec<u32>,
    #[arg(long, default_value_t = 1.0)]
    pub beta0: f64,
    #[arg(long, default_value_t = 20)]
    pub base_points: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub search: SearchArgs,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub grid_n: usize,
    #[serde(flatten)]
    pub command: Command,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Violation(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Violation(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 3,
        }
    }
}

impl From<KernelError> for CliError {
    fn from(e: KernelError) -> Self {
        match e {
            KernelError::InvalidParameter(_) | KernelError::Normalization(_) => CliError::Usage(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<FieldError> for CliError {
    fn from(e: FieldError) -> Self {
        match e {
            FieldError::Io(_) | FieldError::Json(_) | FieldError::Format(_) => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<KornError> for CliError {
    fn from(e: KornError) -> Self {
        match e {
            KornError::Field(f) => f.into(),
            KornError::InvalidParameter(_) => CliError::Usage(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<QcError> for CliError {
    fn from(e: QcError) -> Self {
        match e {
            QcError::Field(f) => f.into(),
            QcError::Energy(inner) => (*inner).into(),
            QcError::InvalidSettings(_) | QcError::BaseMismatch(_) | QcError::WrongDomain(_) => {
                CliError::Usage(e.to_string())
            }
            QcError::Divergence { .. } | QcError::NonFinite { .. } => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<EnergyError> for CliError {
    fn from(e: EnergyError) -> Self {
        match e {
            EnergyError::Kernel(k) => k.into(),
            EnergyError::Field(f) => f.into(),
            EnergyError::Qc(q) => (*q).into(),
            EnergyError::BetaSearchExhausted(_) => CliError::Violation(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

/// Result of a subcommand: its JSON payload and whether it certified a
/// violation or inconsistency.
pub struct Outcome {
    pub result: Value,
    pub violation: bool,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn parse_beta(s: &str) -> Result<Option<f64>, CliError> {
    if s == "auto" {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(b) if b > 0.0 && b.is_finite() => Ok(Some(b)),
        _ => Err(CliError::Usage(format!("--beta must be `auto` or a positive number, got `{s}`"))),
    }
}

fn grid_for(dim: usize, n: usize) -> Result<PeriodicGrid, CliError> {
    Ok(PeriodicGrid::new(dim, n)?)
}

fn point_summary(r: &DeficitReport) -> Value {
    json!({
        "base_point": r.base_point.row_major(),
        "deficit": r.deficit,
        "aliasing_error": r.aliasing_error,
        "replay_error": r.replay_error,
        "violation": r.violation,
        "converged_restarts": r.converged_restarts,
        "min_argument_norm": r.min_argument_norm,
        "witness_file": r.witness_file,
    })
}

/// Side outputs (witness fields) live next to the report.
struct Sink {
    out: Option<PathBuf>,
}

impl Sink {
    fn witness(&self, tag: &str, field: &Field, extra: Value) -> Result<Option<String>, CliError> {
        let Some(out) = &self.out else { return Ok(None) };
        let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "report".into());
        let path = out.with_file_name(format!("{stem}.{tag}.qcf"));
        field_io::write_field(&path, field, extra)?;
        Ok(Some(path.to_string_lossy().into_owned()))
    }
}

fn cmd_constants(a: &ConstantsArgs) -> Result<Outcome, CliError> {
    let params = ModelParams::new(a.p, a.mu, a.nu)?;
    Ok(Outcome { result: to_value(&kernels::constants_for(&params)), violation: false })
}

fn cmd_verify(a: &VerifyArgs, seed: u64) -> Result<Outcome, CliError> {
    let d = sweep::SweepConfig::default();
    let cfg = sweep::SweepConfig {
        p_grid: a.p_grid.clone().unwrap_or(d.p_grid),
        mu_grid: a.mu_grid.clone().unwrap_or(d.mu_grid),
        samples: a.samples.unwrap_or(d.samples),
        min_dim: a.min_dim.unwrap_or(d.min_dim),
        max_dim: a.max_dim.unwrap_or(d.max_dim),
        quad_nodes: a.quad_nodes.unwrap_or(d.quad_nodes),
        seed,
        ..d
    };
    let report = sweep::run_sweep(&cfg)?;
    if report.numerical_errors > 0 {
        return Err(CliError::Numerical(format!("{} checks hit numerical errors", report.numerical_errors)));
    }
    let mut result = to_value(&report);
    result["worst_by_lemma"] = to_value(&report.worst_by_lemma());
    Ok(Outcome { result, violation: report.failures > 0 })
}

fn cmd_korn(a: &KornArgs, seed: u64, grid_n: usize, sink: &Sink) -> Result<Outcome, CliError> {
    let mode = match a.mode {
        KornModeArg::Lemma1 => KornMode::Gradient,
        KornModeArg::Lemma5 => KornMode::Weighted,
    };
    let cfg = KornConfig {
        n: grid_n,
        mu: a.mu,
        samples: a.restarts,
        max_wavenumber: a.max_wavenumber,
        optimizer_steps: a.steps,
        seed,
        ..KornConfig::new(a.dim, a.p, mode)
    };
    let mut est = korn::estimate_constant(&cfg)?;
    if let Some(field) = est.best_field.take() {
        est.argmax_field = sink.witness("argmax", &Field::Vector(field), json!({ "max_ratio": est.max_ratio }))?;
    }
    Ok(Outcome { result: to_value(&est), violation: false })
}

fn restriction_error(f: &EnergyFunction, ext: &EnergyFunction, dim: usize, samples: usize, seed: u64) -> f64 {
    let mut rng = rng::stream(seed, 11);
    (0..samples)
        .map(|i| {
            let a = random_matrix(&mut rng, dim, [0.1, 1.0, 10.0, 100.0][i % 4], true);
            let fa = f.value(&a);
            (ext.value(&a) - fa).abs() / fa.abs().max(1.0)
        })
        .fold(0.0, f64::max)
}

fn cmd_extend(a: &ExtendArgs, seed: u64, grid_n: usize, sink: &Sink) -> Result<Outcome, CliError> {
    let f = catalog(&a.energy, a.p, a.mu)?;
    let beta = parse_beta(&a.beta)?;
    let grid = grid_for(a.search.dim, grid_n)?;
    let settings = a.search.settings(seed);
    match a.path {
        ExtensionPath::PGe2 => {
            let (ext, attempts, reports) = match beta {
                None => {
                    // Validate the exponent before spending any search budget.
                    extend_p_ge_2(&f, &ExtensionConfig::for_energy(&f, 1.0)?)?;
                    let probe = BetaProbe {
                        base_points: qctest::base_points(a.search.dim, a.base_points, seed, false),
                        grid,
                        settings,
                        beta0: 1.0,
                        max_doublings: a.max_doublings,
                        tolerance: a.tolerance,
                    };
                    let search = auto_beta(&f, &probe)?;
                    let ext = extend_p_ge_2(&f, &ExtensionConfig::for_energy(&f, search.beta)?)?;
                    (ext, search.attempts, search.reports)
                }
                Some(b) => {
                    let ext = extend_p_ge_2(&f, &ExtensionConfig::for_energy(&f, b)?)?;
                    let points = qctest::base_points(a.search.dim, a.base_points, seed, false);
                    let reports = qctest::sweep_base_points(&ext, &points, grid, &settings)?;
                    (ext, Vec::new(), reports)
                }
            };
            let energies::EnergyKind::Extension { lambda, beta, .. } = ext.kind else {
                unreachable!("extend_p_ge_2 builds an extension")
            };
            let mut reports = reports;
            let mut violations = 0;
            for (i, r) in reports.iter_mut().enumerate() {
                let bad = r.violation || r.deficit < -a.tolerance;
                if bad {
                    violations += 1;
                    if let Some(w) = &r.witness {
                        r.witness_file = sink.witness(&format!("witness-{i}"), w, json!({ "deficit": r.deficit }))?;
                    }
                }
            }
            let worst = reports.iter().map(|r| r.deficit).fold(0.0, f64::min);
            let closed_form_error = (f.p == 2.0 && a.energy == "power").then(|| {
                let mut rng = rng::stream(seed, 12);
                (0..a.restriction_samples.max(1))
                    .map(|i| {
                        let m = random_matrix(&mut rng, a.search.dim, [0.1, 1.0, 10.0][i % 3], false);
                        let closed = a.mu * a.mu + m.sym().norm_sq() + lambda * beta * beta * m.antisym().norm_sq();
                        (ext.value(&m) - closed).abs()
                    })
                    .fold(0.0, f64::max)
            });
            let result = json!({
                "path": "p-ge-2",
                "base_energy": to_value(&f),
                "extension": to_value(&ext),
                "beta": beta,
                "beta_mode": if a.beta == "auto" { "auto" } else { "fixed" },
                "lambda": lambda,
                "beta_attempts": to_value(&attempts),
                "probe": {
                    "base_points": reports.len(),
                    "restarts": a.search.restarts,
                    "max_iterations": a.search.max_iterations,
                    "grid_n": grid_n,
                    "dim": a.search.dim,
                },
                "worst_deficit": worst,
                "violations": violations,
                "restriction_max_error": restriction_error(&f, &ext, a.search.dim, a.restriction_samples, seed),
                "closed_form_max_error": closed_form_error,
                "growth_fit": fit_growth(&ext, a.search.dim, 2000, 1e3, seed),
                "deficits": reports.iter().map(point_summary).collect::<Vec<_>>(),
            });
            Ok(Outcome { result, violation: violations > 0 })
        }
        ExtensionPath::Envelope => {
            let b = beta.unwrap_or(1.0);
            let g = extend_envelope_source_small_p(&f, b)?;
            let points = qctest::base_points(a.search.dim, a.base_points, seed, false);
            let mut rows = Vec::with_capacity(points.len());
            let mut inconsistent = 0;
            for (i, p) in points.iter().enumerate() {
                let mut s = settings.clone();
                s.seed = seed.wrapping_add(i as u64);
                let est = qctest::quasiconvexify(&g, p, grid, &s)?;
                let sym_gap = p.is_symmetric(1e-12).then(|| (est.upper - f.value(p)).abs());
                if est.upper > est.g_value + 1e-12 * (1.0 + est.g_value.abs()) {
                    inconsistent += 1;
                }
                rows.push(json!({
                    "base_point": p.row_major(),
                    "g_value": est.g_value,
                    "upper": est.upper,
                    "symmetric_gap": sym_gap,
                    "aliasing_error": est.report.aliasing_error,
                }));
            }
            let result = json!({
                "path": "envelope",
                "base_energy": to_value(&f),
                "source": to_value(&g),
                "beta": b,
                "restriction_max_error": restriction_error(&f, &g, a.search.dim, a.restriction_samples, seed),
                "estimates": rows,
            });
            Ok(Outcome { result, violation: inconsistent > 0 })
        }
    }
}

fn load_energy(src: &EnergySource) -> Result<EnergyFunction, CliError> {
    let Some(path) = &src.from_extension else {
        return Ok(catalog(&src.energy, src.p, src.mu)?);
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let candidate = v.pointer("/result/extension").or_else(|| v.pointer("/extension")).unwrap_or(&v);
    serde_json::from_value(candidate.clone())
        .map_err(|e| CliError::Usage(format!("{} holds no energy: {e}", path.display())))
}

fn cmd_qc_test(a: &QcTestArgs, seed: u64, grid_n: usize, sink: &Sink) -> Result<Outcome, CliError> {
    let loaded = load_energy(&a.source)?;
    let grid = grid_for(a.search.dim, grid_n)?;
    let settings = a.search.settings(seed);
    let symmetric_domain = loaded.domain == energies::DomainTag::SymmetricOnly;
    let f = if !a.second_order && symmetric_domain { loaded.natural_extension() } else { loaded };
    let strict_nu = if a.strict {
        Some(f.strict_nu().ok_or_else(|| CliError::Usage(format!("`{}` has no strict certificate", f.name)))?)
    } else {
        None
    };
    let points = qctest::base_points(a.search.dim, a.base_points, seed, a.second_order);
    let dim = a.search.dim;
    let mut rows = Vec::with_capacity(points.len());
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for (i, p) in points.iter().enumerate() {
        let mut s = settings.clone();
        s.seed = seed.wrapping_add(i as u64);
        let search = if a.second_order {
            qctest::qc2_deficit(&f, p, grid, &s, strict_nu)
        } else {
            qctest::qc_deficit(&f, p, grid, &s)
        };
        let mut concave = 0;
        for r in 0..dim {
            for c in 0..dim {
                let mut u = vec![0.0; dim];
                let mut v = vec![0.0; dim];
                u[r] = 1.0;
                v[c] = 1.0;
                if !qctest::rank_one_probe(&f, p, &u, &v, (-1.0, 1.0), 21)?.convex {
                    concave += 1;
                }
            }
        }
        match search {
            Ok(mut r) => {
                worst = worst.min(r.deficit);
                if r.violation {
                    violations += 1;
                    if let Some(w) = &r.witness {
                        r.witness_file = sink.witness(&format!("witness-{i}"), w, json!({ "deficit": r.deficit }))?;
                    }
                }
                let mut row = point_summary(&r);
                row["concave_rank_one_directions"] = json!(concave);
                row["restarts"] = to_value(&r.restarts);
                rows.push(row);
            }
            // Unbounded descent exhibits test fields of arbitrarily negative deficit.
            Err(QcError::Divergence { restart, iterations, value, rescaled }) if rescaled < 0.0 => {
                violations += 1;
                worst = worst.min(value);
                rows.push(json!({
                    "base_point": p.row_major(),
                    "diverged": { "restart": restart, "iterations": iterations, "deficit": value, "per_unit_energy": rescaled },
                    "violation": true,
                    "concave_rank_one_directions": concave,
                }));
            }
            Err(e) => return Err(e.into()),
        }
    }
    let result = json!({
        "energy": to_value(&f),
        "test": if a.second_order { "qc2" } else { "qc" },
        "strict_nu": strict_nu,
        "grid_n": grid_n,
        "restarts": a.search.restarts,
        "worst_deficit": worst,
        "violations": violations,
        "points": rows,
    });
    Ok(Outcome { result, violation: violations > 0 })
}

fn cmd_envelope(a: &EnvelopeArgs, seed: u64, grid_n: usize) -> Result<Outcome, CliError> {
    let f = load_energy(&a.source)?;
    let g = match a.construction {
        EnvelopeSourceKind::AsIs if f.domain == energies::DomainTag::SymmetricOnly => f.natural_extension(),
        EnvelopeSourceKind::AsIs => f.clone(),
        EnvelopeSourceKind::EnvelopeSource => extend_envelope_source_small_p(&f, a.beta)?,
        EnvelopeSourceKind::Penalty => extend_theorem1_g_k(&f, a.beta)?,
    };
    let grid = grid_for(a.search.dim, grid_n)?;
    let points = qctest::base_points(a.search.dim, a.base_points, seed, false);
    let mut rows = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let mut s = a.search.settings(seed);
        s.seed = seed.wrapping_add(i as u64);
        let est = qctest::quasiconvexify(&g, p, grid, &s)?;
        rows.push(json!({
            "base_point": p.row_major(),
            "g_value": est.g_value,
            "upper": est.upper,
            "deficit": est.report.deficit,
            "aliasing_error": est.report.aliasing_error,
            "violation": est.report.violation,
        }));
    }
    Ok(Outcome { result: json!({ "energy": to_value(&g), "grid_n": grid_n, "estimates": rows }), violation: false })
}

/// Base points for the sandwich: half symmetric, half general.
pub fn sandwich_points(dim: usize, count: usize, seed: u64) -> Vec<Matrix> {
    let sym = qctest::base_points(dim, count.div_ceil(2), seed, true);
    let full = qctest::base_points(dim, count / 2 + 4, seed ^ 0x5a5a, false);
    sym.into_iter().chain(full.into_iter().filter(|m| !m.is_symmetric(1e-12)).take(count / 2)).collect()
}

fn cmd_sandwich(a: &SandwichArgs, seed: u64, grid_n: usize) -> Result<Outcome, CliError> {
    let f = catalog("power", a.p, a.mu)?;
    let grid = grid_for(a.search.dim, grid_n)?;
    let settings = a.search.settings(seed);
    let points = sandwich_points(a.search.dim, a.base_points, seed);
    let (schedule, reports) = theorem1_schedule_with_reports(&f, a.beta0, &a.ks, &points, grid, &settings)?;
    let mut verdicts = Vec::new();
    let mut inconsistent = 0;
    for (entry, row) in schedule.iter().zip(reports) {
        for r in row {
            let mut v = qctest::sandwich_verdict(&f, entry, r);
            if !v.consistent {
                inconsistent += 1;
            }
            v.report.restarts.clear();
            verdicts.push(json!({
                "k": v.k,
                "base_point": v.base_point.row_major(),
                "g_value": v.g_value,
                "upper": v.upper,
                "lower": v.lower,
                "gap_to_f": v.gap_to_f,
                "gap_bound": v.gap_bound,
                "consistent": v.consistent,
                "deficit": v.report.deficit,
                "aliasing_error": v.report.aliasing_error,
            }));
        }
    }
    let result = json!({
        "energy": to_value(&f),
        "schedule": to_value(&schedule),
        "grid_n": grid_n,
        "restarts": a.search.restarts,
        "inconsistent": inconsistent,
        "verdicts": verdicts,
    });
    Ok(Outcome { result, violation: inconsistent > 0 })
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Constants(_) => "constants",
        Command::VerifyLemmas(_) => "verify-lemmas",
        Command::Korn(_) => "korn",
        Command::Extend(_) => "extend",
        Command::QcTest(_) => "qc-test",
        Command::Envelope(_) => "envelope",
        Command::Sandwich(_) => "sandwich",
    }
}

/// Runs a resolved configuration and returns the full report document.
pub fn execute(cfg: &RunConfig, out: Option<&Path>) -> Result<(Value, bool), CliError> {
    let sink = Sink { out: out.map(Path::to_path_buf) };
    let (seed, n) = (cfg.seed, cfg.grid_n);
    let outcome = match &cfg.command {
        Command::Constants(a) => cmd_constants(a)?,
        Command::VerifyLemmas(a) => cmd_verify(a, seed)?,
        Command::Korn(a) => cmd_korn(a, seed, n, &sink)?,
        Command::Extend(a) => cmd_extend(a, seed, n, &sink)?,
        Command::QcTest(a) => cmd_qc_test(a, seed, n, &sink)?,
        Command::Envelope(a) => cmd_envelope(a, seed, n)?,
        Command::Sandwich(a) => cmd_sandwich(a, seed, n)?,
    };
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "command": command_name(&cfg.command),
        "status": if outcome.violation { "violation" } else { "ok" },
        "result": outcome.result,
    });
    Ok((doc, outcome.violation))
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, val) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, val, out);
            }
        }
        Value::Array(items) if items.iter().all(|x| !x.is_object() && !x.is_array()) => {
            let joined: Vec<String> = items.iter().map(|x| x.to_string()).collect();
            out.push((prefix.to_string(), joined.join(" ")));
        }
        Value::Array(items) => {
            for (i, val) in items.iter().enumerate() {
                flatten(&format!("{prefix}[{i}]"), val, out);
            }
        }
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// Renders a report document in the requested format.
pub fn render(doc: &Value, format: Format) -> String {
    match format {
        Format::Json => serde_json::to_string_pretty(doc).expect("json values serialize") + "\n",
        Format::Csv | Format::Text => {
            let mut rows = Vec::new();
            flatten("", doc, &mut rows);
            let mut s = String::new();
            if format == Format::Csv {
                s.push_str("key,value\n");
                for (k, v) in rows {
                    let v = if v.contains(',') || v.contains('"') { format!("\"{}\"", v.replace('"', "\"\"")) } else { v };
                    let _ = writeln!(s, "{k},{v}");
                }
            } else {
                let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
                for (k, v) in rows {
                    let _ = writeln!(s, "{k:<width$}  {v}");
                }
            }
            s
        }
    }
}

/// Path of the run config stored next to `out`.
pub fn config_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "report".into());
    out.with_file_name(format!("{stem}.config.json"))
}

fn resolve(cli: Cli) -> Result<(RunConfig, Option<PathBuf>, Format), CliError> {
    if let Some(path) = &cli.replay {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Usage(format!("unsupported config schema {}", cfg.schema_version)));
        }
        return Ok((cfg, cli.out, cli.format));
    }
    let command = cli.command.ok_or_else(|| CliError::Usage("a subcommand or --replay is required".into()))?;
    let cfg = RunConfig { schema_version: SCHEMA_VERSION, seed: cli.seed, grid_n: cli.grid_n.unwrap_or(DEFAULT_GRID_N), command };
    Ok((cfg, cli.out, cli.format))
}

fn run_inner(cli: Cli) -> Result<bool, CliError> {
    let (cfg, out, format) = resolve(cli)?;
    let (doc, violation) = execute(&cfg, out.as_deref())?;
    let text = render(&doc, format);
    if let Some(out) = &out {
        let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", out.display()));
        fs::write(out, &text).map_err(io)?;
        let cfg_text = serde_json::to_string_pretty(&cfg).expect("config serializes") + "\n";
        fs::write(config_path(out), cfg_text).map_err(io)?;
    }
    print!("{text}");
    Ok(violation)
}

/// Parses arguments, runs, and maps the outcome to the process exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run_inner(cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("qcreduce").chain(args.iter().copied())).unwrap()
    }

    fn run(args: &[&str]) -> Result<(Value, bool), CliError> {
        let (cfg, out, _) = resolve(parse(args))?;
        execute(&cfg, out.as_deref())
    }

    #[test]
    fn constants_report() {
        let (doc, v) = run(&["constants", "--p", "2", "--nu", "1"]).unwrap();
        assert!(!v);
        assert_eq!(doc["result"]["kappa_p"], 0.5);
        assert_eq!(doc["result"]["lambda"], 0.5);
        let err = run(&["constants", "--p", "1"]).err().unwrap();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn usage_errors_map_to_two() {
        assert_eq!(run(&["verify-lemmas", "--samples", "0"]).err().unwrap().exit_code(), 2);
        assert_eq!(run(&["extend", "--p", "1.5", "--path", "p-ge-2"]).err().unwrap().exit_code(), 2);
        assert_eq!(run(&["qc-test", "--energy", "nope"]).err().unwrap().exit_code(), 2);
        assert_eq!(run(&["extend", "--beta=-1"]).err().unwrap().exit_code(), 2);
        assert_eq!(run(&[]).err().unwrap().exit_code(), 2);
    }

    #[test]
    fn config_roundtrips_through_json() {
        let cli = parse(&["--seed", "7", "qc-test", "--energy", "det", "--restarts", "3", "--second-order"]);
        let (cfg, _, _) = resolve(cli).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.grid_n, DEFAULT_GRID_N);
    }

    #[test]
    fn render_formats() {
        let doc = json!({"a": 1, "b": {"c": [1, 2]}, "d": [{"e": "x,y"}]});
        assert!(render(&doc, Format::Csv).contains("d[0].e,\"x,y\""));
        assert!(render(&doc, Format::Text).contains("b.c"));
        let back: Value = serde_json::from_str(&render(&doc, Format::Json)).unwrap();
        assert_eq!(back, doc);
    }

    #[test]
    fn sandwich_points_mix_symmetric_and_general() {
        let pts = sandwich_points(2, 20, 0);
        assert_eq!(pts.len(), 20);
        let sym = pts.iter().filter(|m| m.is_symmetric(1e-12)).count();
        assert_eq!(sym, 10);
    }
}
