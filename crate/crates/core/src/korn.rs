//! Korn-type ratios for divergence-free periodic vector fields and
//! empirical lower bounds for the constants that dominate them.
//!
//! For `div ψ = 0` the full gradient is controlled by its antisymmetric
//! part. At `p = 2` the ratio `∫|∇ψ|² / ∫|∇ψ^a|²` equals 2 for every such
//! field, which makes a convenient exact oracle.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{
    self, antisym_part, divergence, integrate, jacobian, laplacian, row_divergence, spectral, spectral_norm,
    sym_part, FieldError, MatrixField, PeriodicGrid, RandomKind, ScalarField, VectorField,
};
use crate::kernels::weighted_sq;
use crate::matrix::Matrix;
use crate::rng;

/// Divergence tolerance (relative to the gradient size) for admissible fields.
pub const DIVERGENCE_TOLERANCE: f64 = 1e-10;
/// Residual tolerance for `Δψ = 2 div(∇ψ^a)`, relative to `‖ψ‖`.
pub const IDENTITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum KornError {
    #[error("field is not divergence free: spectral norm of div ψ = {0:e}")]
    NotDivergenceFree(f64),
    #[error("degenerate field: antisymmetric gradient vanishes")]
    Degenerate,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KornMode {
    /// `∫|∇ψ|^p ≤ γ ∫|∇ψ^a|^p`
    #[serde(rename = "lemma1")]
    Gradient,
    /// `∫(μ²+|∇ψ^s|²)^{(p−2)/2}|∇ψ^s|² ≤ τ ∫(μ²+|∇ψ^a|²)^{(p−2)/2}|∇ψ^a|²`
    #[serde(rename = "lemma5")]
    Weighted,
}

fn check_divfree(psi: &VectorField, grad: &MatrixField) -> Result<(), KornError> {
    let div = spectral_norm(&divergence(psi));
    let scale = integrate(&grad.norm_sq()).sqrt().max(1.0);
    if div > DIVERGENCE_TOLERANCE * scale {
        return Err(KornError::NotDivergenceFree(div));
    }
    Ok(())
}

fn ratio_parts(grad: &MatrixField, p: f64, mu: f64, mode: KornMode) -> (f64, f64) {
    match mode {
        KornMode::Gradient => {
            let num = integrate(&grad.map_scalar(|m| m.norm_sq().powf(0.5 * p)));
            let den = integrate(&grad.map_scalar(|m| m.antisym().norm_sq().powf(0.5 * p)));
            (num, den)
        }
        KornMode::Weighted => {
            let m2 = mu * mu;
            let num = integrate(&grad.map_scalar(|m| weighted_sq(m2, m.sym().norm_sq(), p)));
            let den = integrate(&grad.map_scalar(|m| weighted_sq(m2, m.antisym().norm_sq(), p)));
            (num, den)
        }
    }
}

fn ratio_of(num: f64, den: f64) -> Result<f64, KornError> {
    if !(den > 1e-300) || den <= 1e-14 * num {
        return Err(KornError::Degenerate);
    }
    Ok(num / den)
}

/// `∫|∇ψ|^p / ∫|∇ψ^a|^p`.
pub fn korn_ratio(psi: &VectorField, p: f64) -> Result<f64, KornError> {
    let grad = jacobian(psi);
    check_divfree(psi, &grad)?;
    let (num, den) = ratio_parts(&grad, p, 0.0, KornMode::Gradient);
    ratio_of(num, den)
}

/// Weighted ratio with the symmetric part in the numerator.
pub fn weighted_korn_ratio(psi: &VectorField, p: f64, mu: f64) -> Result<f64, KornError> {
    let grad = jacobian(psi);
    check_divfree(psi, &grad)?;
    let (num, den) = ratio_parts(&grad, p, mu, KornMode::Weighted);
    ratio_of(num, den)
}

/// `‖Δψ − 2 div(∇ψ^a)‖ / ‖ψ‖` in the spectral `L²` norm.
pub fn identity_residual(psi: &VectorField) -> f64 {
    let twice_div_a = row_divergence(&antisym_part(&jacobian(psi)));
    let mut res2 = 0.0;
    for i in 0..psi.grid.dim {
        let lap = laplacian(&psi.component(i));
        let r = ScalarField {
            grid: psi.grid,
            values: lap.values.iter().zip(&twice_div_a.comps[i]).map(|(l, d)| l - 2.0 * d).collect(),
        };
        res2 += spectral_norm(&r).powi(2);
    }
    res2.sqrt() / psi.l2_norm().max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KornConfig {
    pub dim: usize,
    pub n: usize,
    pub p: f64,
    pub mu: f64,
    pub mode: KornMode,
    pub samples: usize,
    pub max_wavenumber: usize,
    pub optimizer_steps: usize,
    pub seed: u64,
}

impl KornConfig {
    pub fn new(dim: usize, p: f64, mode: KornMode) -> Self {
        Self { dim, n: 32, p, mu: 0.0, mode, samples: 20, max_wavenumber: 4, optimizer_steps: 50, seed: 0 }
    }

    pub fn validate(&self) -> Result<PeriodicGrid, KornError> {
        let grid = PeriodicGrid::new(self.dim, self.n)?;
        grid.check_band(self.max_wavenumber)?;
        if self.samples == 0 {
            return Err(KornError::InvalidParameter("samples must be ≥ 1".into()));
        }
        if !(self.p > 1.0) {
            return Err(KornError::InvalidParameter(format!("p must exceed 1, got {}", self.p)));
        }
        if !(self.mu >= 0.0) {
            return Err(KornError::InvalidParameter(format!("mu must be ≥ 0, got {}", self.mu)));
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KornEstimate {
    pub dim: usize,
    pub p: f64,
    pub mu: f64,
    pub mode: KornMode,
    pub samples: usize,
    pub degenerate: usize,
    /// Best ratio found; a lower bound for the constant.
    pub max_ratio: f64,
    pub seed: u64,
    pub n: usize,
    pub max_wavenumber: usize,
    pub optimizer_steps: usize,
    pub argmax_sample: Option<usize>,
    /// File holding the maximizing field, when one was written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub argmax_field: Option<String>,
    /// Ratio of each sampled field before ascent (`None` if degenerate).
    pub initial_ratios: Vec<Option<f64>>,
    /// Ratio of each sample after ascent.
    pub final_ratios: Vec<Option<f64>>,
    pub max_identity_residual: f64,
    #[serde(skip)]
    pub best_field: Option<VectorField>,
}

/// Nodal gradient density for the numerator or denominator:
/// `∂/∂M` of `|M|^p` or of `(μ²+|M|²)^{(p−2)/2}|M|²`.
fn density_derivative(m: &Matrix, p: f64, mu: f64, mode: KornMode) -> Matrix {
    let t = m.norm_sq();
    if t == 0.0 {
        return Matrix::zeros(m.dim());
    }
    let c = match mode {
        KornMode::Gradient => p * t.powf(0.5 * p - 1.0),
        KornMode::Weighted => {
            let m2 = mu * mu;
            2.0 * (m2 + t).powf(0.5 * (p - 4.0)) * (m2 + 0.5 * p * t)
        }
    };
    c * *m
}

struct Objective {
    ratio: f64,
    gradient: VectorField,
}

fn band_limit_and_project(v: &VectorField, max_k: usize) -> VectorField {
    let g = v.grid;
    let band = spectral::band_index(&g);
    let comps = v
        .comps
        .iter()
        .map(|c| {
            let mut coeffs = spectral::forward(&g, c);
            for (co, b) in coeffs.iter_mut().zip(&band) {
                if *b == 0 || *b as usize > max_k {
                    *co = num_complex::Complex64::new(0.0, 0.0);
                }
            }
            spectral::inverse(&g, &coeffs)
        })
        .collect();
    fields::leray_project(&VectorField { grid: g, comps })
}

fn objective(psi: &VectorField, cfg: &KornConfig, with_gradient: bool) -> Result<Objective, KornError> {
    let grad = jacobian(psi);
    let (num, den) = ratio_parts(&grad, cfg.p, cfg.mu, cfg.mode);
    let ratio = ratio_of(num, den)?;
    if !with_gradient {
        return Ok(Objective { ratio, gradient: VectorField::zeros(psi.grid) });
    }
    let (num_part, den_part): (fn(&Matrix) -> Matrix, fn(&Matrix) -> Matrix) = match cfg.mode {
        KornMode::Gradient => (|m| *m, |m| m.antisym()),
        KornMode::Weighted => (|m| m.sym(), |m| m.antisym()),
    };
    // ∇R = (∇N − R ∇D)/D with ∇N = −div(∂N/∂(∇ψ)); projections are self-adjoint.
    let dens = grad.map(|m| {
        let dn = density_derivative(&num_part(m), cfg.p, cfg.mu, cfg.mode);
        let dd = density_derivative(&den_part(m), cfg.p, cfg.mu, cfg.mode);
        (1.0 / den) * (dn - ratio * dd)
    });
    let g = row_divergence(&dens).scale(-1.0);
    Ok(Objective { ratio, gradient: band_limit_and_project(&g, cfg.max_wavenumber) })
}

fn axpy(psi: &VectorField, t: f64, d: &VectorField) -> VectorField {
    VectorField {
        grid: psi.grid,
        comps: psi.comps.iter().zip(&d.comps).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + t * y).collect()).collect(),
    }
}

/// Projected gradient ascent on the ratio; only improving steps are taken.
fn ascend(psi0: VectorField, cfg: &KornConfig) -> Result<(f64, f64, VectorField), KornError> {
    let mut psi = psi0;
    let mut cur = objective(&psi, cfg, true)?;
    let initial = cur.ratio;
    let gnorm0 = cur.gradient.l2_norm();
    let mut step = if gnorm0 > 0.0 { 0.1 * psi.l2_norm() / gnorm0 } else { 0.0 };
    for _ in 0..cfg.optimizer_steps {
        // The ratio is scale-invariant, so stationarity is measured on
        // ‖ψ‖·‖∇R‖ relative to R.
        let gnorm = cur.gradient.l2_norm();
        if gnorm * psi.l2_norm() <= 1e-12 * cur.ratio.max(1.0) || step == 0.0 {
            break;
        }
        let mut accepted = None;
        let mut t = step;
        for _ in 0..30 {
            let trial = axpy(&psi, t, &cur.gradient);
            match objective(&trial, cfg, false) {
                Ok(o) if o.ratio > cur.ratio => {
                    accepted = Some((trial, t));
                    break;
                }
                _ => t *= 0.5,
            }
        }
        let Some((next, t)) = accepted else { break };
        psi = next;
        cur = objective(&psi, cfg, true)?;
        step = 2.0 * t;
    }
    Ok((initial, cur.ratio, psi))
}

struct SampleOutcome {
    residual: f64,
    result: Option<(f64, f64, VectorField)>,
}

fn run_sample(grid: PeriodicGrid, cfg: &KornConfig, i: usize) -> Result<SampleOutcome, KornError> {
    let mut rng = rng::stream(cfg.seed, i as u64);
    let psi = match fields::random_field_with(grid, RandomKind::DivfreeVector, cfg.max_wavenumber, &mut rng)? {
        fields::Field::Vector(v) => v,
        _ => unreachable!("vector kind requested"),
    };
    let residual = identity_residual(&psi);
    if residual >= IDENTITY_TOLERANCE {
        return Ok(SampleOutcome { residual, result: None });
    }
    match ascend(psi, cfg) {
        Ok(r) => Ok(SampleOutcome { residual, result: Some(r) }),
        Err(KornError::Degenerate) => Ok(SampleOutcome { residual, result: None }),
        Err(e) => Err(e),
    }
}

/// Maximizes the chosen ratio over random divergence-free band-limited
/// fields, each refined by projected gradient ascent. The result is a
/// running maximum over samples taken in index order.
pub fn estimate_constant(cfg: &KornConfig) -> Result<KornEstimate, KornError> {
    let grid = cfg.validate()?;
    let outcomes: Vec<Result<SampleOutcome, KornError>> =
        (0..cfg.samples).into_par_iter().map(|i| run_sample(grid, cfg, i)).collect();
    let mut est = KornEstimate {
        dim: cfg.dim,
        p: cfg.p,
        mu: cfg.mu,
        mode: cfg.mode,
        samples: cfg.samples,
        degenerate: 0,
        max_ratio: f64::NEG_INFINITY,
        seed: cfg.seed,
        n: cfg.n,
        max_wavenumber: cfg.max_wavenumber,
        optimizer_steps: cfg.optimizer_steps,
        argmax_sample: None,
        argmax_field: None,
        initial_ratios: Vec::with_capacity(cfg.samples),
        final_ratios: Vec::with_capacity(cfg.samples),
        max_identity_residual: 0.0,
        best_field: None,
    };
    for (i, outcome) in outcomes.into_iter().enumerate() {
        let o = outcome?;
        est.max_identity_residual = est.max_identity_residual.max(o.residual);
        match o.result {
            Some((initial, fin, field)) => {
                est.initial_ratios.push(Some(initial));
                est.final_ratios.push(Some(fin));
                if fin > est.max_ratio {
                    est.max_ratio = fin;
                    est.argmax_sample = Some(i);
                    est.best_field = Some(field);
                }
            }
            None => {
                est.degenerate += 1;
                est.initial_ratios.push(None);
                est.final_ratios.push(None);
            }
        }
    }
    Ok(est)
}

/// Symmetric and antisymmetric gradient energies `(∫|∇ψ^s|², ∫|∇ψ^a|²)`.
pub fn split_energies(psi: &VectorField) -> (f64, f64) {
    let grad = jacobian(psi);
    (integrate(&sym_part(&grad).norm_sq()), integrate(&antisym_part(&grad).norm_sq()))
}
