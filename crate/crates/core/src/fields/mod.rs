//! Periodic scalar, vector and matrix fields on the unit cube `(0,1)^n`
//! sampled on a uniform `N^n` grid, with spectral differentiation, a
//! periodic Poisson solver and the Helmholtz split.
//!
//! Matrix fields built from vector fields use the row convention
//! `(∇ψ)_{ij} = ∂ψ_i/∂x_j`.

pub mod io;
pub mod spectral;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("max wavenumber {k} exceeds the dealiasing limit N/3 = {limit} for N = {n}")]
    BandLimit { k: usize, n: usize, limit: usize },
    #[error("right-hand side has nonzero mean {0:e}")]
    NonzeroMean(f64),
    #[error("field grids or shapes do not match: {0}")]
    Mismatch(String),
    #[error("malformed field file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PeriodicGrid {
    pub dim: usize,
    pub n: usize,
}

impl PeriodicGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self, FieldError> {
        if !(2..=3).contains(&dim) {
            return Err(FieldError::InvalidGrid(format!("dimension must be 2 or 3, got {dim}")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(FieldError::InvalidGrid(format!("N must be a power of two ≥ 8, got {n}")));
        }
        Ok(Self { dim, n })
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn nodes(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Largest wave number admissible for band-limited test fields.
    pub fn max_band(&self) -> usize {
        self.n / 3
    }

    pub fn multi_index(&self, mut flat: usize) -> [usize; 3] {
        let mut idx = [0usize; 3];
        for a in (0..self.dim).rev() {
            idx[a] = flat % self.n;
            flat /= self.n;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize; 3]) -> usize {
        idx[..self.dim].iter().fold(0, |acc, &i| acc * self.n + i)
    }

    /// Coordinates of node `flat` in `[0,1)^n` (unused axes are 0).
    pub fn coords(&self, flat: usize) -> [f64; 3] {
        let idx = self.multi_index(flat);
        let h = self.spacing();
        [idx[0] as f64 * h, idx[1] as f64 * h, idx[2] as f64 * h]
    }

    pub fn refined(&self) -> Self {
        Self { dim: self.dim, n: 2 * self.n }
    }

    pub fn check_band(&self, k: usize) -> Result<(), FieldError> {
        if k > self.max_band() {
            return Err(FieldError::BandLimit { k, n: self.n, limit: self.max_band() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: PeriodicGrid,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: PeriodicGrid,
    /// One sample vector per component.
    pub comps: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixField {
    pub grid: PeriodicGrid,
    pub values: Vec<Matrix>,
}

/// Complex amplitudes of a scalar field, one per flat mode index.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCoefficients {
    pub grid: PeriodicGrid,
    pub data: Vec<Complex64>,
}

impl SpectralCoefficients {
    /// `Σ|c_k|²`, equal to the grid mean of `|f|²`.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Largest deviation from `c_{−k} = conj(c_k)`.
    pub fn hermitian_defect(&self) -> f64 {
        (0..self.data.len())
            .map(|i| (self.data[i] - self.data[spectral::conjugate_index(&self.grid, i)].conj()).norm())
            .fold(0.0, f64::max)
    }

    pub fn to_field(&self) -> ScalarField {
        ScalarField { grid: self.grid, values: spectral::inverse(&self.grid, &self.data) }
    }
}

impl ScalarField {
    pub fn zeros(grid: PeriodicGrid) -> Self {
        Self { grid, values: vec![0.0; grid.nodes()] }
    }

    pub fn from_fn(grid: PeriodicGrid, f: impl Fn([f64; 3]) -> f64) -> Self {
        Self { grid, values: (0..grid.nodes()).map(|i| f(grid.coords(i))).collect() }
    }

    pub fn spectral(&self) -> SpectralCoefficients {
        SpectralCoefficients { grid: self.grid, data: spectral::forward(&self.grid, &self.values) }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn mean(&self) -> f64 {
        integrate(self)
    }

    /// Root mean square of the samples.
    pub fn rms(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Spectral resampling onto `grid` (same dimension).
    pub fn resample(&self, grid: PeriodicGrid) -> Self {
        let c = spectral::resample(&self.grid, &self.spectral().data, &grid);
        Self { grid, values: spectral::inverse(&grid, &c) }
    }
}

impl VectorField {
    pub fn zeros(grid: PeriodicGrid) -> Self {
        Self { grid, comps: vec![vec![0.0; grid.nodes()]; grid.dim] }
    }

    pub fn from_fn(grid: PeriodicGrid, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        let mut v = Self::zeros(grid);
        for node in 0..grid.nodes() {
            let val = f(grid.coords(node));
            for (c, comp) in v.comps.iter_mut().enumerate() {
                comp[node] = val[c];
            }
        }
        v
    }

    pub fn component(&self, i: usize) -> ScalarField {
        ScalarField { grid: self.grid, values: self.comps[i].clone() }
    }

    pub fn at(&self, node: usize) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (c, comp) in self.comps.iter().enumerate() {
            out[c] = comp[node];
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { grid: self.grid, comps: self.comps.iter().map(|c| c.iter().map(|v| s * v).collect()).collect() }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.grid, other.grid);
        Self {
            grid: self.grid,
            comps: self.comps.iter().zip(&other.comps).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect()).collect(),
        }
    }

    /// Pointwise `|v|²` as a scalar field.
    pub fn norm_sq(&self) -> ScalarField {
        let mut s = ScalarField::zeros(self.grid);
        for comp in &self.comps {
            for (o, v) in s.values.iter_mut().zip(comp) {
                *o += v * v;
            }
        }
        s
    }

    /// `(Σ_i ‖v_i‖²_{L²})^{1/2}` computed from spectral energy.
    pub fn l2_norm(&self) -> f64 {
        integrate(&self.norm_sq()).sqrt()
    }

    pub fn resample(&self, grid: PeriodicGrid) -> Self {
        Self { grid, comps: (0..self.grid.dim).map(|i| self.component(i).resample(grid).values).collect() }
    }
}

impl MatrixField {
    pub fn from_fn(grid: PeriodicGrid, f: impl Fn(usize) -> Matrix) -> Self {
        Self { grid, values: (0..grid.nodes()).map(f).collect() }
    }

    pub fn constant(grid: PeriodicGrid, a: Matrix) -> Self {
        Self { grid, values: vec![a; grid.nodes()] }
    }

    pub fn map(&self, f: impl Fn(&Matrix) -> Matrix) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(f).collect() }
    }

    pub fn map_scalar(&self, f: impl Fn(&Matrix) -> f64) -> ScalarField {
        ScalarField { grid: self.grid, values: self.values.iter().map(f).collect() }
    }

    /// Entry `(i, j)` as a scalar field.
    pub fn entry(&self, i: usize, j: usize) -> ScalarField {
        self.map_scalar(|m| m.get(i, j))
    }

    pub fn norm_sq(&self) -> ScalarField {
        self.map_scalar(|m| m.norm_sq())
    }
}

fn derivative_coeffs(c: &[Complex64], factors: &[[f64; 3]], axis: usize) -> Vec<Complex64> {
    c.iter().zip(factors).map(|(v, k)| v * Complex64::new(0.0, k[axis])).collect()
}

pub fn gradient(phi: &ScalarField) -> VectorField {
    let g = phi.grid;
    let c = spectral::forward(&g, &phi.values);
    let k = spectral::derivative_factors(&g);
    VectorField { grid: g, comps: (0..g.dim).map(|a| spectral::inverse(&g, &derivative_coeffs(&c, &k, a))).collect() }
}

/// `(∇ψ)_{ij} = ∂ψ_i/∂x_j`.
pub fn jacobian(v: &VectorField) -> MatrixField {
    let g = v.grid;
    let k = spectral::derivative_factors(&g);
    let mut out = MatrixField::constant(g, Matrix::zeros(g.dim));
    for i in 0..g.dim {
        let c = spectral::forward(&g, &v.comps[i]);
        for j in 0..g.dim {
            let d = spectral::inverse(&g, &derivative_coeffs(&c, &k, j));
            for (m, val) in out.values.iter_mut().zip(d) {
                m.set(i, j, val);
            }
        }
    }
    out
}

/// Symmetric by construction: each mixed partial is computed once.
pub fn hessian(phi: &ScalarField) -> MatrixField {
    let g = phi.grid;
    let c = spectral::forward(&g, &phi.values);
    let k = spectral::derivative_factors(&g);
    let mut out = MatrixField::constant(g, Matrix::zeros(g.dim));
    for i in 0..g.dim {
        let ci = derivative_coeffs(&c, &k, i);
        for j in i..g.dim {
            let d = spectral::inverse(&g, &derivative_coeffs(&ci, &k, j));
            for (m, val) in out.values.iter_mut().zip(d) {
                m.set(i, j, val);
                m.set(j, i, val);
            }
        }
    }
    out
}

/// Coefficients of `div v`.
pub fn divergence_coeffs(v: &VectorField) -> Vec<Complex64> {
    let g = v.grid;
    let k = spectral::derivative_factors(&g);
    let mut acc = vec![Complex64::new(0.0, 0.0); g.nodes()];
    for (a, comp) in v.comps.iter().enumerate() {
        let c = spectral::forward(&g, comp);
        for ((o, ci), ki) in acc.iter_mut().zip(&c).zip(&k) {
            *o += ci * Complex64::new(0.0, ki[a]);
        }
    }
    acc
}

pub fn divergence(v: &VectorField) -> ScalarField {
    ScalarField { grid: v.grid, values: spectral::inverse(&v.grid, &divergence_coeffs(v)) }
}

/// Row-wise divergence `(div M)_i = Σ_j ∂_j M_{ij}`.
pub fn row_divergence(m: &MatrixField) -> VectorField {
    let g = m.grid;
    let comps = (0..g.dim)
        .map(|i| {
            let row = VectorField { grid: g, comps: (0..g.dim).map(|j| m.entry(i, j).values).collect() };
            spectral::inverse(&g, &divergence_coeffs(&row))
        })
        .collect();
    VectorField { grid: g, comps }
}

/// Coefficients of `Σ_{ij} ∂_i ∂_j M_{ij}`.
pub fn double_divergence_coeffs(m: &MatrixField) -> Vec<Complex64> {
    let g = m.grid;
    let k = spectral::derivative_factors(&g);
    let mut acc = vec![Complex64::new(0.0, 0.0); g.nodes()];
    for i in 0..g.dim {
        for j in 0..g.dim {
            let c = spectral::forward(&g, &m.entry(i, j).values);
            for ((o, cij), kk) in acc.iter_mut().zip(&c).zip(&k) {
                *o -= cij * (kk[i] * kk[j]);
            }
        }
    }
    acc
}

pub fn laplacian(phi: &ScalarField) -> ScalarField {
    let g = phi.grid;
    let k = spectral::derivative_factors(&g);
    let c: Vec<Complex64> =
        phi.spectral().data.iter().zip(&k).map(|(v, kk)| -v * (kk[0] * kk[0] + kk[1] * kk[1] + kk[2] * kk[2])).collect();
    ScalarField { grid: g, values: spectral::inverse(&g, &c) }
}

fn invert_laplacian(grid: &PeriodicGrid, c: &mut [Complex64]) {
    let k = spectral::derivative_factors(grid);
    for (v, kk) in c.iter_mut().zip(&k) {
        let k2 = kk[0] * kk[0] + kk[1] * kk[1] + kk[2] * kk[2];
        if k2 == 0.0 {
            *v = Complex64::new(0.0, 0.0);
        } else {
            *v /= -k2;
        }
    }
}

/// Zero-mean periodic solution of `Δu = rhs`.
pub fn solve_poisson(rhs: &ScalarField) -> Result<ScalarField, FieldError> {
    let mean = rhs.mean();
    let scale = rhs.rms().max(f64::MIN_POSITIVE);
    if mean.abs() > 1e-10 * scale {
        return Err(FieldError::NonzeroMean(mean));
    }
    let mut c = rhs.spectral().data;
    invert_laplacian(&rhs.grid, &mut c);
    Ok(ScalarField { grid: rhs.grid, values: spectral::inverse(&rhs.grid, &c) })
}

/// `v = ∇u + w` with `div w = 0` and `u` of zero mean.
pub fn helmholtz(v: &VectorField) -> (ScalarField, VectorField) {
    let g = v.grid;
    let mut c = divergence_coeffs(v);
    invert_laplacian(&g, &mut c);
    let potential = ScalarField { grid: g, values: spectral::inverse(&g, &c) };
    let solenoidal = v.sub(&gradient(&potential));
    (potential, solenoidal)
}

/// Projects a vector field onto its divergence-free part (mean retained).
pub fn leray_project(v: &VectorField) -> VectorField {
    helmholtz(v).1
}

pub fn sym_part(m: &MatrixField) -> MatrixField {
    m.map(|a| a.sym())
}

pub fn antisym_part(m: &MatrixField) -> MatrixField {
    m.map(|a| a.antisym())
}

/// Grid mean, i.e. the integral over the unit cell.
pub fn integrate(f: &ScalarField) -> f64 {
    f.values.iter().sum::<f64>() / f.values.len() as f64
}

/// Spectral `L²` norm of a scalar field, `(Σ|c_k|²)^{1/2}`.
pub fn spectral_norm(f: &ScalarField) -> f64 {
    f.spectral().energy().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RandomKind {
    Scalar,
    Vector,
    DivfreeVector,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Scalar(ScalarField),
    Vector(VectorField),
    Matrix(MatrixField),
}

impl Field {
    pub fn grid(&self) -> PeriodicGrid {
        match self {
            Field::Scalar(f) => f.grid,
            Field::Vector(f) => f.grid,
            Field::Matrix(f) => f.grid,
        }
    }
}

fn random_band_coeffs<R: Rng>(grid: &PeriodicGrid, max_k: usize, rng: &mut R) -> Vec<Complex64> {
    let waves = spectral::wave_vectors(grid);
    waves
        .iter()
        .map(|k| {
            let kmax = k[..grid.dim].iter().map(|v| v.unsigned_abs()).max().unwrap_or(0);
            // Draw for every mode to keep the stream layout independent of the band.
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            if kmax == 0 || kmax as usize > max_k {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(re, im)
            }
        })
        .collect()
}

fn hermitian_symmetrize(grid: &PeriodicGrid, c: &[Complex64]) -> Vec<Complex64> {
    (0..c.len()).map(|i| 0.5 * (c[i] + c[spectral::conjugate_index(grid, i)].conj())).collect()
}

/// Band-limited random field with `∫|f|² = 1`, drawn from `rng`.
pub fn random_field_with<R: Rng>(
    grid: PeriodicGrid,
    kind: RandomKind,
    max_wavenumber: usize,
    rng: &mut R,
) -> Result<Field, FieldError> {
    grid.check_band(max_wavenumber)?;
    if max_wavenumber == 0 {
        return Err(FieldError::InvalidGrid("max wavenumber must be ≥ 1".into()));
    }
    match kind {
        RandomKind::Scalar => {
            let c = hermitian_symmetrize(&grid, &random_band_coeffs(&grid, max_wavenumber, rng));
            let e: f64 = c.iter().map(|v| v.norm_sqr()).sum();
            let c: Vec<Complex64> = c.iter().map(|v| v / e.sqrt()).collect();
            Ok(Field::Scalar(ScalarField { grid, values: spectral::inverse(&grid, &c) }))
        }
        RandomKind::Vector | RandomKind::DivfreeVector => {
            let mut comps: Vec<Vec<Complex64>> =
                (0..grid.dim).map(|_| random_band_coeffs(&grid, max_wavenumber, rng)).collect();
            if kind == RandomKind::DivfreeVector {
                let waves = spectral::wave_vectors(&grid);
                for (m, k) in waves.iter().enumerate() {
                    let k2: f64 = k[..grid.dim].iter().map(|v| (v * v) as f64).sum();
                    if k2 == 0.0 {
                        continue;
                    }
                    let dot: Complex64 = (0..grid.dim).map(|a| comps[a][m] * k[a] as f64).sum();
                    for a in 0..grid.dim {
                        let corr = dot * (k[a] as f64 / k2);
                        comps[a][m] -= corr;
                    }
                }
            }
            let comps: Vec<Vec<Complex64>> = comps.iter().map(|c| hermitian_symmetrize(&grid, c)).collect();
            let e: f64 = comps.iter().flatten().map(|v| v.norm_sqr()).sum();
            if e == 0.0 {
                return Err(FieldError::InvalidGrid("band contains no admissible modes".into()));
            }
            let s = 1.0 / e.sqrt();
            Ok(Field::Vector(VectorField {
                grid,
                comps: comps
                    .iter()
                    .map(|c| spectral::inverse(&grid, &c.iter().map(|v| v * s).collect::<Vec<_>>()))
                    .collect(),
            }))
        }
    }
}

/// Seeded variant of [`random_field_with`].
pub fn random_field(grid: PeriodicGrid, kind: RandomKind, max_wavenumber: usize, seed: u64) -> Result<Field, FieldError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_field_with(grid, kind, max_wavenumber, &mut rng)
}
