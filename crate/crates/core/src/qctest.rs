//! Numerical (2-)quasiconvexity tests.
//!
//! For an energy `F` and a base point `A` the deficit is
//! `inf_φ ∫[F(A + Dφ) − F(A)]` over periodic band-limited test fields, with
//! `Dφ = ∇φ` (vector `φ`) or `Dφ = ∇²φ` (scalar `φ`). It is searched by
//! preconditioned gradient descent on the Fourier coefficients from several
//! seeded restarts. The search only ever produces upper bounds for the
//! deficit, so a negative value with a replayable witness is a certificate of
//! non-quasiconvexity, while a zero is merely evidence.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energies::{
    extend_theorem1_g_k, random_matrix, strict_weight, DomainTag, EnergyError, EnergyFunction, ScheduleEntry,
};
use crate::fields::{
    self, hessian, integrate, jacobian, spectral, Field, FieldError, MatrixField, PeriodicGrid, RandomKind,
    ScalarField, VectorField,
};
use crate::matrix::Matrix;
use crate::rng;

/// Margin beyond the aliasing estimate required before a negative deficit is
/// reported as a violation.
pub const VIOLATION_MARGIN: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum QcError {
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
    #[error("base point does not match: {0}")]
    BaseMismatch(String),
    #[error("energy `{0}` is defined on symmetric matrices only and cannot be tested against gradients")]
    WrongDomain(String),
    #[error("energy became non-finite during the search (restart {restart})")]
    NonFinite { restart: usize },
    #[error(
        "descent diverged in restart {restart} after {iterations} iterations: deficit {value:e}, \
         {rescaled:.6} per unit test-field energy"
    )]
    Divergence { restart: usize, iterations: usize, value: f64, rescaled: f64 },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Energy(#[from] Box<EnergyError>),
}

impl From<EnergyError> for QcError {
    fn from(e: EnergyError) -> Self {
        QcError::Energy(Box::new(e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub max_iterations: usize,
    /// Gradient-norm tolerance relative to `max(1, |F(A)|, |∇F(A)|)`.
    pub gradient_tolerance: f64,
    pub armijo: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub restarts: usize,
    pub seed: u64,
    /// RMS of the initial `Dφ` relative to `max(1, |A|)`; restarts cycle
    /// through 0.1, 0.3, 1 and 3 times this value.
    pub init_scale: f64,
    /// Divergence is declared once the deficit drops below
    /// `−divergence_floor · (1 + |F(A)|)`.
    pub divergence_floor: f64,
    /// Iterations without meaningful decrease before a restart stops; also
    /// the window of the plateau rule.
    pub stall_window: usize,
    /// Band limit of the test fields; defaults to `N/3`.
    #[serde(default)]
    pub max_wavenumber: Option<usize>,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            gradient_tolerance: 1e-8,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 60,
            restarts: 20,
            seed: 0,
            init_scale: 0.5,
            divergence_floor: 1e8,
            stall_window: 50,
            max_wavenumber: None,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self, grid: &PeriodicGrid) -> Result<usize, QcError> {
        let bad = |m: &str| Err(QcError::InvalidSettings(m.into()));
        if self.restarts == 0 {
            return bad("restarts must be ≥ 1");
        }
        if !(self.gradient_tolerance > 0.0) {
            return bad("gradient tolerance must be > 0");
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0) || !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad("armijo and backtrack factors must lie in (0, 1)");
        }
        if !(self.init_scale > 0.0) || !(self.divergence_floor > 0.0) {
            return bad("init scale and divergence floor must be > 0");
        }
        let k = self.max_wavenumber.unwrap_or(grid.max_band());
        if k == 0 {
            return bad("band limit must be ≥ 1");
        }
        grid.check_band(k)?;
        Ok(k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestKind {
    /// `Dφ = ∇φ`, vector test fields.
    Qc,
    /// `Dφ = ∇²φ`, scalar test fields.
    Qc2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    MaxIterations,
    Stalled,
    /// Still positive, and the recent rate of decrease cannot reach zero
    /// within the remaining budget.
    Plateau,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub index: usize,
    pub value: f64,
    pub iterations: usize,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeficitReport {
    pub test: TestKind,
    pub energy: String,
    pub base_point: Matrix,
    pub grid: PeriodicGrid,
    pub max_wavenumber: usize,
    /// `min(0, best restart value)`; never positive.
    pub deficit: f64,
    pub restarts: Vec<RestartSummary>,
    pub converged_restarts: usize,
    /// `|E_N − E_2N|` for the witness, from spectral refinement.
    pub aliasing_error: f64,
    /// Deficit recomputed from the nodal witness through the field operators.
    pub replay_value: f64,
    pub replay_error: f64,
    pub violation: bool,
    /// Smallest `|A + Dφ|` over the witness nodes (proximity to the kink of
    /// nonsmooth energies).
    pub min_argument_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strict_nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness_file: Option<String>,
    #[serde(skip)]
    pub witness: Option<Field>,
}

/// Band-limited modes of a grid and their derivative factors.
struct Band {
    grid: PeriodicGrid,
    modes: Vec<usize>,
    k: Vec<[f64; 3]>,
    /// Inverse Sobolev weight `|2πk|^{−2·order}`.
    precond: Vec<f64>,
}

impl Band {
    fn new(grid: PeriodicGrid, max_k: usize, order: usize) -> Self {
        let bands = spectral::band_index(&grid);
        let factors = spectral::derivative_factors(&grid);
        let modes: Vec<usize> = (0..grid.nodes()).filter(|&m| bands[m] >= 1 && bands[m] as usize <= max_k).collect();
        let k: Vec<[f64; 3]> = modes.iter().map(|&m| factors[m]).collect();
        let precond = k.iter().map(|kk| (kk[0] * kk[0] + kk[1] * kk[1] + kk[2] * kk[2]).powi(-(order as i32))).collect();
        Self { grid, modes, k, precond }
    }

    fn scatter(&self, c: &[Complex64]) -> Vec<Complex64> {
        let mut full = vec![Complex64::new(0.0, 0.0); self.grid.nodes()];
        for (m, v) in self.modes.iter().zip(c) {
            full[*m] = *v;
        }
        full
    }

    fn gather(&self, full: &[Complex64]) -> Vec<Complex64> {
        self.modes.iter().map(|&m| full[m]).collect()
    }
}

type Coeffs = Vec<Vec<Complex64>>;

fn dot(a: &Coeffs, b: &Coeffs) -> f64 {
    a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y)).map(|(u, v)| u.re * v.re + u.im * v.im).sum()
}

fn axpy(a: &Coeffs, t: f64, b: &Coeffs) -> Coeffs {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + t * v).collect()).collect()
}

/// Pointwise integrand of one deficit search.
struct Problem<'a> {
    f: &'a EnergyFunction,
    a: Matrix,
    fa: f64,
    test: TestKind,
    strict_nu: Option<f64>,
    /// `μ² + |A|²`, the base of the strict weight.
    weight_base: f64,
}

impl<'a> Problem<'a> {
    fn new(f: &'a EnergyFunction, a: &Matrix, test: TestKind, strict_nu: Option<f64>) -> Self {
        Self { f, a: *a, fa: f.value(a), test, strict_nu, weight_base: f.mu * f.mu + a.norm_sq() }
    }

    fn density(&self, m: &Matrix) -> f64 {
        let mut v = self.f.value(&(self.a + *m)) - self.fa;
        if let Some(nu) = self.strict_nu {
            v -= nu * strict_weight(self.f.mu, self.a.norm_sq(), m.norm_sq(), self.f.p);
        }
        v
    }

    fn density_gradient(&self, m: &Matrix) -> Matrix {
        let x = self.a + *m;
        let mut g = match self.f.gradient(&x) {
            Some(g) => g,
            None => self.fd_gradient(&x),
        };
        if let Some(nu) = self.strict_nu {
            let p = self.f.p;
            let h2 = m.norm_sq();
            let b = self.weight_base + h2;
            if b > 0.0 {
                let s = 2.0 * b.powf(0.5 * (p - 4.0)) * (self.weight_base + 0.5 * p * h2);
                g = g - (nu * s) * *m;
            }
        }
        g
    }

    /// Central differences in matrix space; symmetric perturbations on the
    /// symmetric domain.
    fn fd_gradient(&self, x: &Matrix) -> Matrix {
        let n = x.dim();
        let h = 1e-6 * (1.0 + x.norm());
        let mut g = Matrix::zeros(n);
        let symmetric = self.f.domain == DomainTag::SymmetricOnly;
        for i in 0..n {
            for j in 0..n {
                if symmetric && j < i {
                    continue;
                }
                let mut e = Matrix::zeros(n);
                e.set(i, j, h);
                if symmetric {
                    e.set(j, i, h);
                }
                let d = (self.f.value(&(*x + e)) - self.f.value(&(*x - e))) / (2.0 * h);
                if symmetric && i != j {
                    g.set(i, j, 0.5 * d);
                    g.set(j, i, 0.5 * d);
                } else {
                    g.set(i, j, d);
                }
            }
        }
        g
    }

    fn components(&self, dim: usize) -> usize {
        match self.test {
            TestKind::Qc => dim,
            TestKind::Qc2 => 1,
        }
    }

    fn order(&self) -> usize {
        match self.test {
            TestKind::Qc => 1,
            TestKind::Qc2 => 2,
        }
    }

    /// Nodal `Dφ` from band coefficients.
    fn derivative(&self, band: &Band, c: &Coeffs) -> Vec<Matrix> {
        let g = band.grid;
        let d = g.dim;
        let mut out = vec![Matrix::zeros(d); g.nodes()];
        match self.test {
            TestKind::Qc => {
                for (i, ci) in c.iter().enumerate() {
                    for j in 0..d {
                        let dc: Vec<Complex64> =
                            ci.iter().zip(&band.k).map(|(v, kk)| v * Complex64::new(0.0, kk[j])).collect();
                        for (m, val) in out.iter_mut().zip(spectral::inverse(&g, &band.scatter(&dc))) {
                            m.set(i, j, val);
                        }
                    }
                }
            }
            TestKind::Qc2 => {
                for i in 0..d {
                    for j in i..d {
                        let dc: Vec<Complex64> = c[0].iter().zip(&band.k).map(|(v, kk)| -v * (kk[i] * kk[j])).collect();
                        for (m, val) in out.iter_mut().zip(spectral::inverse(&g, &band.scatter(&dc))) {
                            m.set(i, j, val);
                            m.set(j, i, val);
                        }
                    }
                }
            }
        }
        out
    }

    fn energy(&self, m: &[Matrix]) -> f64 {
        m.iter().map(|x| self.density(x)).sum::<f64>() / m.len() as f64
    }

    fn energy_along(&self, m: &[Matrix], dm: &[Matrix], t: f64) -> f64 {
        m.iter().zip(dm).map(|(x, y)| self.density(&(*x + t * *y))).sum::<f64>() / m.len() as f64
    }

    /// Coefficient-space gradient of the mean energy.
    fn gradient(&self, band: &Band, m: &[Matrix]) -> Coeffs {
        let g = band.grid;
        let d = g.dim;
        let dens: Vec<Matrix> = m.iter().map(|x| self.density_gradient(x)).collect();
        let entry = |i: usize, j: usize| -> Vec<Complex64> {
            let vals: Vec<f64> = dens.iter().map(|x| x.get(i, j)).collect();
            band.gather(&spectral::forward(&g, &vals))
        };
        match self.test {
            TestKind::Qc => (0..d)
                .map(|i| {
                    let mut acc = vec![Complex64::new(0.0, 0.0); band.modes.len()];
                    for j in 0..d {
                        for ((o, v), kk) in acc.iter_mut().zip(entry(i, j)).zip(&band.k) {
                            *o += v * Complex64::new(0.0, -kk[j]);
                        }
                    }
                    acc
                })
                .collect(),
            TestKind::Qc2 => {
                let mut acc = vec![Complex64::new(0.0, 0.0); band.modes.len()];
                for i in 0..d {
                    for j in 0..d {
                        for ((o, v), kk) in acc.iter_mut().zip(entry(i, j)).zip(&band.k) {
                            *o -= v * (kk[i] * kk[j]);
                        }
                    }
                }
                vec![acc]
            }
        }
    }

    /// `∫|Dφ|²` from coefficients.
    fn derivative_energy(&self, band: &Band, c: &Coeffs) -> f64 {
        let order = self.order() as i32;
        c.iter()
            .flat_map(|ci| ci.iter().zip(&band.k))
            .map(|(v, kk)| v.norm_sqr() * (kk[0] * kk[0] + kk[1] * kk[1] + kk[2] * kk[2]).powi(order))
            .sum()
    }

    fn gradient_scale(&self) -> f64 {
        let g = self.f.gradient(&self.a).map_or(0.0, |g| g.norm());
        1f64.max(self.fa.abs()).max(g)
    }
}

enum Outcome {
    Done { value: f64, iterations: usize, termination: Termination, coeffs: Coeffs },
    Diverged { iterations: usize, value: f64, rescaled: f64 },
    NonFinite,
}

fn initial_coeffs<R: Rng>(problem: &Problem, band: &Band, max_k: usize, restart: usize, s: &OptimizerSettings, rng: &mut R) -> Result<Coeffs, QcError> {
    let grid = band.grid;
    let k_init = 1 + restart % max_k;
    let comps: Vec<Vec<f64>> = match problem.test {
        TestKind::Qc => match fields::random_field_with(grid, RandomKind::Vector, k_init, rng)? {
            Field::Vector(v) => v.comps,
            _ => unreachable!("vector kind requested"),
        },
        TestKind::Qc2 => match fields::random_field_with(grid, RandomKind::Scalar, k_init, rng)? {
            Field::Scalar(v) => vec![v.values],
            _ => unreachable!("scalar kind requested"),
        },
    };
    let c: Coeffs = comps.iter().map(|v| band.gather(&spectral::forward(&grid, v))).collect();
    let rms = problem.derivative_energy(band, &c).sqrt();
    let target = s.init_scale * [0.1, 0.3, 1.0, 3.0][restart % 4] * problem.a.norm().max(1.0);
    let scale = target / rms.max(f64::MIN_POSITIVE);
    Ok(c.iter().map(|ci| ci.iter().map(|v| v * scale).collect()).collect())
}

fn warm_coeffs(band: &Band, w: &Field) -> Coeffs {
    let g = band.grid;
    match w {
        Field::Vector(v) => v.comps.iter().map(|c| band.gather(&spectral::forward(&g, c))).collect(),
        Field::Scalar(s) => vec![band.gather(&spectral::forward(&g, &s.values))],
        Field::Matrix(_) => unreachable!("witnesses are scalar or vector fields"),
    }
}

fn descend(problem: &Problem, band: &Band, mut c: Coeffs, s: &OptimizerSettings) -> Outcome {
    let mut m = problem.derivative(band, &c);
    let mut e = problem.energy(&m);
    if !e.is_finite() {
        return Outcome::NonFinite;
    }
    let mut g = problem.gradient(band, &m);
    let tol = s.gradient_tolerance * problem.gradient_scale();
    let floor = -s.divergence_floor * (1.0 + problem.fa.abs());
    let mut alpha = 1.0;
    let mut stall = 0;
    let mut window_start = e;
    let mut prev_drop = 0.0;
    let mut termination = Termination::MaxIterations;
    let mut it = 0;
    while it < s.max_iterations {
        if dot(&g, &g).sqrt() <= tol {
            termination = Termination::Converged;
            break;
        }
        let d: Coeffs = g.iter().map(|gi| gi.iter().zip(&band.precond).map(|(v, w)| -v * *w).collect()).collect();
        let slope = dot(&g, &d);
        let md = problem.derivative(band, &d);
        let mut t = alpha;
        let mut accepted = false;
        for _ in 0..s.max_backtracks {
            let et = problem.energy_along(&m, &md, t);
            if et.is_finite() && et <= e + s.armijo * t * slope {
                accepted = true;
                break;
            }
            t *= s.backtrack;
        }
        it += 1;
        if !accepted {
            termination = Termination::Stalled;
            break;
        }
        let c_new = axpy(&c, t, &d);
        let m_new = problem.derivative(band, &c_new);
        let e_new = problem.energy(&m_new);
        if !e_new.is_finite() {
            return Outcome::NonFinite;
        }
        if e_new < floor {
            let w = problem.derivative_energy(band, &c_new);
            return Outcome::Diverged { iterations: it, value: e_new, rescaled: e_new / w.max(f64::MIN_POSITIVE) };
        }
        let g_new = problem.gradient(band, &m_new);
        let step: Coeffs = d.iter().map(|di| di.iter().map(|v| v * t).collect()).collect();
        let y = axpy(&g_new, -1.0, &g);
        let sy = dot(&step, &y);
        let s_metric: f64 = step
            .iter()
            .flat_map(|si| si.iter().zip(&band.precond))
            .map(|(v, w)| v.norm_sqr() / w)
            .sum();
        alpha = if sy > 0.0 { s_metric / sy } else { 2.0 * t };
        alpha = alpha.clamp(1e-10, 1e10);
        if e - e_new <= 1e-15 * (1.0 + e.abs() + problem.fa.abs()) {
            stall += 1;
        } else {
            stall = 0;
        }
        c = c_new;
        m = m_new;
        e = e_new;
        g = g_new;
        if stall >= s.stall_window {
            termination = Termination::Stalled;
            break;
        }
        if s.stall_window > 0 && it % s.stall_window == 0 {
            // Linear extrapolation overestimates the future decrease of a
            // decelerating descent, so this only drops hopeless restarts.
            let drop = window_start - e;
            let rate = drop / s.stall_window as f64;
            // Consecutive window decreases shrinking by a ratio below one
            // bound the rest of a geometric descent; twice the tail is kept
            // as margin.
            let ratio = if prev_drop > 0.0 { drop / prev_drop } else { 1.0 };
            let tail = if ratio < 0.9 { 2.0 * drop * ratio / (1.0 - ratio) } else { f64::INFINITY };
            if e > 0.0 && (e - rate * (s.max_iterations - it) as f64 > 0.0 || e - tail > 0.0) {
                termination = Termination::Plateau;
                break;
            }
            prev_drop = drop;
            window_start = e;
        }
    }
    Outcome::Done { value: e, iterations: it, termination, coeffs: c }
}

fn check_base(f: &EnergyFunction, a: &Matrix, grid: &PeriodicGrid, test: TestKind) -> Result<(), QcError> {
    if a.dim() != grid.dim {
        return Err(QcError::BaseMismatch(format!("matrix is {0}×{0} but the grid has dimension {1}", a.dim(), grid.dim)));
    }
    match test {
        TestKind::Qc if f.domain == DomainTag::SymmetricOnly => Err(QcError::WrongDomain(f.name.clone())),
        TestKind::Qc2 if f.domain == DomainTag::SymmetricOnly && !a.is_symmetric(1e-12) => {
            Err(QcError::BaseMismatch("base point must be symmetric for a symmetric-only energy".into()))
        }
        _ => Ok(()),
    }
}

fn witness_field(problem: &Problem, band: &Band, c: &Coeffs) -> Field {
    let g = band.grid;
    let nodal: Vec<Vec<f64>> = c.iter().map(|ci| spectral::inverse(&g, &band.scatter(ci))).collect();
    match problem.test {
        TestKind::Qc => Field::Vector(VectorField { grid: g, comps: nodal }),
        TestKind::Qc2 => Field::Scalar(ScalarField { grid: g, values: nodal.into_iter().next().expect("one component") }),
    }
}

fn witness_derivative(w: &Field) -> Result<MatrixField, QcError> {
    match w {
        Field::Vector(v) => Ok(jacobian(v)),
        Field::Scalar(s) => Ok(hessian(s)),
        Field::Matrix(_) => Err(QcError::BaseMismatch("witness must be a scalar or vector field".into())),
    }
}

fn refine(w: &Field) -> Field {
    let fine = w.grid().refined();
    match w {
        Field::Vector(v) => Field::Vector(v.resample(fine)),
        Field::Scalar(s) => Field::Scalar(s.resample(fine)),
        Field::Matrix(_) => unreachable!("witnesses are scalar or vector fields"),
    }
}

/// Recomputes `∫[F(A + Dw) − F(A)]` (minus the strict term) for a stored
/// witness, using the field operators rather than the optimizer's own path.
pub fn replay_deficit(f: &EnergyFunction, a: &Matrix, witness: &Field, strict_nu: Option<f64>) -> Result<f64, QcError> {
    let test = match witness {
        Field::Vector(_) => TestKind::Qc,
        _ => TestKind::Qc2,
    };
    let problem = Problem::new(f, a, test, strict_nu);
    let dm = witness_derivative(witness)?;
    Ok(integrate(&dm.map_scalar(|m| problem.density(m))))
}

fn deficit_search(
    f: &EnergyFunction,
    a: &Matrix,
    grid: PeriodicGrid,
    s: &OptimizerSettings,
    test: TestKind,
    strict_nu: Option<f64>,
    point_index: u64,
    warm: Option<&Field>,
) -> Result<DeficitReport, QcError> {
    let max_k = s.validate(&grid)?;
    check_base(f, a, &grid, test)?;
    let problem = Problem::new(f, a, test, strict_nu);
    let band = Band::new(grid, max_k, problem.order());
    let outcomes: Vec<Result<Outcome, QcError>> = (0..s.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(s.seed, rng::substream(point_index, r as u64));
            let c0 = match warm {
                Some(w) if r == 0 => warm_coeffs(&band, w),
                _ => initial_coeffs(&problem, &band, max_k, r, s, &mut rng)?,
            };
            Ok(descend(&problem, &band, c0, s))
        })
        .collect();
    let mut restarts = Vec::with_capacity(s.restarts);
    let mut best: Option<(f64, Coeffs)> = None;
    for (r, out) in outcomes.into_iter().enumerate() {
        match out? {
            Outcome::NonFinite => return Err(QcError::NonFinite { restart: r }),
            Outcome::Diverged { iterations, value, rescaled } => {
                return Err(QcError::Divergence { restart: r, iterations, value, rescaled })
            }
            Outcome::Done { value, iterations, termination, coeffs } => {
                restarts.push(RestartSummary { index: r, value, iterations, termination });
                if best.as_ref().is_none_or(|(b, _)| value < *b) {
                    best = Some((value, coeffs));
                }
            }
        }
    }
    let (best_value, best_coeffs) = best.expect("at least one restart");
    let ncomp = problem.components(grid.dim);
    let coeffs = if best_value < 0.0 {
        best_coeffs
    } else {
        vec![vec![Complex64::new(0.0, 0.0); band.modes.len()]; ncomp]
    };
    let deficit = if best_value < 0.0 { problem.energy(&problem.derivative(&band, &coeffs)) } else { 0.0 };
    let witness = witness_field(&problem, &band, &coeffs);
    let replay_value = replay_deficit(f, a, &witness, strict_nu)?;
    let fine = replay_deficit(f, a, &refine(&witness), strict_nu)?;
    let aliasing_error = (fine - deficit).abs();
    let min_argument_norm = witness_derivative(&witness)?
        .values
        .iter()
        .map(|m| (*a + *m).norm())
        .fold(f64::INFINITY, f64::min);
    let converged_restarts = restarts.iter().filter(|r| r.termination == Termination::Converged).count();
    Ok(DeficitReport {
        test,
        energy: f.name.clone(),
        base_point: *a,
        grid,
        max_wavenumber: max_k,
        deficit,
        restarts,
        converged_restarts,
        aliasing_error,
        replay_value,
        replay_error: (replay_value - deficit).abs(),
        violation: deficit < -(aliasing_error + VIOLATION_MARGIN),
        min_argument_norm,
        strict_nu,
        witness_file: None,
        witness: Some(witness),
    })
}

/// Quasiconvexity deficit of `f` at `a` against gradients of periodic vector fields.
pub fn qc_deficit(f: &EnergyFunction, a: &Matrix, grid: PeriodicGrid, s: &OptimizerSettings) -> Result<DeficitReport, QcError> {
    deficit_search(f, a, grid, s, TestKind::Qc, None, 0, None)
}

/// 2-quasiconvexity deficit against Hessians of periodic scalar fields. With
/// `strict_nu`, the integrand is reduced by `ν(μ²+|A|²+|∇²φ|²)^{(p−2)/2}|∇²φ|²`.
pub fn qc2_deficit(
    f: &EnergyFunction,
    a: &Matrix,
    grid: PeriodicGrid,
    s: &OptimizerSettings,
    strict_nu: Option<f64>,
) -> Result<DeficitReport, QcError> {
    deficit_search(f, a, grid, s, TestKind::Qc2, strict_nu, 0, None)
}

/// Runs [`qc_deficit`] on each base point with its own random streams.
pub fn sweep_base_points(
    f: &EnergyFunction,
    points: &[Matrix],
    grid: PeriodicGrid,
    s: &OptimizerSettings,
) -> Result<Vec<DeficitReport>, QcError> {
    points
        .iter()
        .enumerate()
        .map(|(i, a)| deficit_search(f, a, grid, s, TestKind::Qc, None, i as u64 + 1, None))
        .collect()
}

/// Repeats a search on the refined grid `2N` with restart 0 started from the
/// embedded witness of `report`, so the refined deficit can only improve on
/// the coarse witness (up to its aliasing error).
pub fn refine_search(f: &EnergyFunction, report: &DeficitReport, s: &OptimizerSettings) -> Result<DeficitReport, QcError> {
    let witness = report
        .witness
        .as_ref()
        .ok_or_else(|| QcError::InvalidSettings("report carries no witness field".into()))?;
    let fine = refine(witness);
    let mut s = s.clone();
    s.max_wavenumber = Some(s.max_wavenumber.unwrap_or(report.max_wavenumber).max(report.max_wavenumber));
    deficit_search(f, &report.base_point, fine.grid(), &s, report.test, report.strict_nu, 0, Some(&fine))
}

/// Upper estimate of the quasiconvex envelope `QG(A) ≤ G(A) + deficit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeEstimate {
    pub g_value: f64,
    pub upper: f64,
    pub report: DeficitReport,
}

pub fn quasiconvexify(g: &EnergyFunction, a: &Matrix, grid: PeriodicGrid, s: &OptimizerSettings) -> Result<EnvelopeEstimate, QcError> {
    let report = qc_deficit(g, a, grid, s)?;
    let g_value = g.value(a);
    Ok(EnvelopeEstimate { g_value, upper: g_value + report.deficit, report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankOneVerdict {
    pub direction: Matrix,
    pub samples: usize,
    /// Largest `f(t) − (f(t−h) + f(t+h))/2` observed; positive means concave.
    pub worst_midpoint_defect: f64,
    pub violations: usize,
    pub convex: bool,
}

/// Convexity of `t ↦ f(A + t u⊗v)` on a uniform grid of `t`. Symmetric-only
/// energies are probed along `u⊗v + v⊗u`.
pub fn rank_one_probe(f: &EnergyFunction, a: &Matrix, u: &[f64], v: &[f64], t_range: (f64, f64), samples: usize) -> Result<RankOneVerdict, QcError> {
    if samples < 3 || !(t_range.1 > t_range.0) {
        return Err(QcError::InvalidSettings("need at least 3 samples on a nonempty interval".into()));
    }
    if u.len() != a.dim() || v.len() != a.dim() {
        return Err(QcError::BaseMismatch("direction vectors must match the matrix size".into()));
    }
    let direction = match f.domain {
        DomainTag::SymmetricOnly => Matrix::outer(u, v) + Matrix::outer(v, u),
        DomainTag::FullMatrix => Matrix::outer(u, v),
    };
    f.eval(a)?;
    let h = (t_range.1 - t_range.0) / (samples - 1) as f64;
    let vals: Vec<f64> = (0..samples).map(|i| f.value(&(*a + (t_range.0 + i as f64 * h) * direction))).collect();
    let scale = vals.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    for w in vals.windows(3) {
        let defect = w[1] - 0.5 * (w[0] + w[2]);
        worst = worst.max(defect);
        if defect > 1e-12 * scale {
            violations += 1;
        }
    }
    Ok(RankOneVerdict { direction, samples, worst_midpoint_defect: worst, violations, convex: violations == 0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichVerdict {
    pub k: u32,
    pub beta_k: f64,
    pub lambda_k: f64,
    pub base_point: Matrix,
    pub g_value: f64,
    /// Envelope upper estimate `G_k(A) + deficit`.
    pub upper: f64,
    /// `G_k(A) − (1/k)|A^s|^p − λ_k|A^a|^p − 1/k`.
    pub lower: f64,
    /// `|upper − f(A)|` and its allowance `(1/k)|A|^p + 1/k` at symmetric points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_to_f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_bound: Option<f64>,
    pub consistent: bool,
    pub report: DeficitReport,
}

/// Checks `lower ≤ QG_k(A) ≤ G_k(A)` with the estimated envelope, and at
/// symmetric `A` also the convergence of the envelope to `f(A)`.
pub fn sandwich_check_theorem1(
    f: &EnergyFunction,
    entry: &ScheduleEntry,
    a: &Matrix,
    grid: PeriodicGrid,
    s: &OptimizerSettings,
) -> Result<SandwichVerdict, QcError> {
    let g = extend_theorem1_g_k(f, entry.beta_k)?;
    let report = qc_deficit(&g, a, grid, s)?;
    Ok(sandwich_verdict(f, entry, report))
}

/// Sandwich verdict from an existing deficit search of `G_k` at the report's base point.
pub fn sandwich_verdict(f: &EnergyFunction, entry: &ScheduleEntry, report: DeficitReport) -> SandwichVerdict {
    let a = report.base_point;
    let g_value = f.value(&a.sym()) + entry.beta_k * a.antisym().norm().powf(f.p);
    let upper = g_value + report.deficit;
    let inv_k = 1.0 / entry.k as f64;
    let lower = g_value - inv_k * a.sym().norm().powf(f.p) - entry.lambda_k * a.antisym().norm().powf(f.p) - inv_k;
    let tol = report.aliasing_error + VIOLATION_MARGIN * (1.0 + g_value.abs());
    let mut consistent = upper >= lower - tol && upper <= g_value + tol;
    let (gap_to_f, gap_bound) = if a.is_symmetric(1e-12) {
        let gap = (upper - f.value(&a)).abs();
        let bound = inv_k * a.norm().powf(f.p) + inv_k;
        consistent &= gap <= bound + tol;
        (Some(gap), Some(bound))
    } else {
        (None, None)
    };
    SandwichVerdict {
        k: entry.k,
        beta_k: entry.beta_k,
        lambda_k: entry.lambda_k,
        base_point: a,
        g_value,
        upper,
        lower,
        gap_to_f,
        gap_bound,
        consistent,
        report,
    }
}

/// Deterministic base points: a few structured matrices followed by random
/// ones with norms cycling through 0.1, 1 and 10.
pub fn base_points(dim: usize, count: usize, seed: u64, symmetric: bool) -> Vec<Matrix> {
    let mut fixed = vec![Matrix::zeros(dim), Matrix::identity(dim)];
    let mut diag = Matrix::zeros(dim);
    diag.set(0, 0, 1.0);
    diag.set(1, 1, -1.0);
    fixed.push(diag);
    let mut e12 = Matrix::zeros(dim);
    e12.set(0, 1, 1.0);
    if symmetric {
        e12.set(1, 0, 1.0);
    }
    fixed.push(e12);
    if !symmetric {
        let mut rot = Matrix::identity(dim);
        rot.set(0, 1, 2.0);
        rot.set(1, 0, -2.0);
        fixed.push(rot);
    }
    fixed.push(10.0 * Matrix::identity(dim));
    let mut rng = rng::stream(seed, 7);
    let mut out: Vec<Matrix> = fixed.into_iter().take(count).collect();
    let mut i = 0;
    while out.len() < count {
        out.push(random_matrix(&mut rng, dim, [0.1, 1.0, 10.0][i % 3], symmetric));
        i += 1;
    }
    out
}
