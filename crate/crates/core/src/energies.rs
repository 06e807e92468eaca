//! Matrix energies with structural certificates, and the constructions that
//! extend an energy on symmetric matrices to all square matrices.
//!
//! An [`EnergyFunction`] is a serializable expression tree ([`EnergyKind`]),
//! so any extension can be written to JSON and replayed later.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{self, integrate, Field, PeriodicGrid, RandomKind};
use crate::kernels::{self, big_k_p, big_theta_p, power_hessian_bound, theta_p, ModelParams};
use crate::matrix::Matrix;
use crate::qctest::{self, OptimizerSettings, QcError};
use crate::rng;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("unknown energy name `{0}`")]
    UnknownName(String),
    #[error("exponent out of range: {0}")]
    ExponentRange(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{0} requires a symmetric argument")]
    NotSymmetric(String),
    #[error("energy `{0}` has no analytic gradient")]
    MissingGradient(String),
    #[error("energy `{name}` lacks the {what} certificate")]
    MissingCertificate { name: String, what: String },
    #[error("energy `{0}` is defined on symmetric matrices only; build an extension first")]
    WrongDomain(String),
    #[error("no admissible β found after {0} doublings")]
    BetaSearchExhausted(usize),
    #[error(transparent)]
    Kernel(#[from] kernels::KernelError),
    #[error(transparent)]
    Field(#[from] fields::FieldError),
    #[error(transparent)]
    Qc(#[from] Box<QcError>),
}

impl From<QcError> for EnergyError {
    fn from(e: QcError) -> Self {
        EnergyError::Qc(Box::new(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainTag {
    SymmetricOnly,
    FullMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Certificate {
    /// Strict 2-quasiconvexity with constant `nu`.
    Strict2qc { nu: f64 },
    Plain2qc,
    /// `|∇f(A+B) − ∇f(A)| ≤ L (μ²+|A|²+|B|²)^{(p−2)/2}|B|`.
    GradientLipschitz { lip: f64 },
    /// `|f(A)| ≤ M(1 + |A|^p)`.
    Growth { m: f64 },
    /// `|∇²f(A)| ≤ C (μ²+|A|²)^{(p−2)/2}`.
    HessianBound { c: f64 },
    Convex,
    Quasiaffine,
}

/// Default coefficients of the catalog linear energy (row-major, read as `n × n`).
pub const LINEAR_WEIGHTS: [f64; 9] = [1.0, 0.5, -0.25, 0.5, -1.0, 0.3, -0.25, 0.3, 2.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnergyKind {
    /// `(μ² + |A|²)^{p/2}`
    Power { mu: f64, p: f64 },
    /// `|A|²`
    ConvexQuadratic,
    /// `det(A)²`
    PolyconvexMinor,
    /// `Σ w_{ij} A_{ij}`
    Linear { weights: Vec<f64> },
    Determinant,
    /// `−|A|²`
    NegQuadratic,
    /// `f(A^s) − λ(μ²+|A^s|²)^{p/2} + λ(μ²+|A^s|²+β²|A^a|²)^{p/2}`
    Extension { base: Box<EnergyKind>, lambda: f64, beta: f64, mu: f64, p: f64 },
    /// `f(A^s) + β((μ²+|A^a|²)^{p/2} − μ^p)`
    EnvelopeSource { base: Box<EnergyKind>, beta: f64, mu: f64, p: f64 },
    /// `f(A^s) + β|A^a|^p`
    AntisymPenalty { base: Box<EnergyKind>, beta: f64, p: f64 },
    /// `f(A) − λ(μ²+|A|²)^{p/2}`
    Shifted { base: Box<EnergyKind>, lambda: f64, mu: f64, p: f64 },
    /// Same values as `base` with the gradient withheld.
    ValueOnly { base: Box<EnergyKind> },
}

#[inline]
fn power_value(mu: f64, s2: f64, p: f64) -> f64 {
    (mu * mu + s2).powf(0.5 * p)
}

/// `p (μ² + s2)^{(p−2)/2}`, with the removable singularity at 0 mapped to 0.
#[inline]
fn power_slope(mu: f64, s2: f64, p: f64) -> f64 {
    let b = mu * mu + s2;
    if b == 0.0 {
        if p == 2.0 {
            2.0
        } else {
            0.0
        }
    } else {
        p * b.powf(0.5 * (p - 2.0))
    }
}

impl EnergyKind {
    pub fn value(&self, a: &Matrix) -> f64 {
        match self {
            EnergyKind::Power { mu, p } => power_value(*mu, a.norm_sq(), *p),
            EnergyKind::ConvexQuadratic => a.norm_sq(),
            EnergyKind::PolyconvexMinor => a.det().powi(2),
            EnergyKind::Linear { weights } => {
                let n = a.dim();
                (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| weights[3 * i + j] * a.get(i, j)).sum()
            }
            EnergyKind::Determinant => a.det(),
            EnergyKind::NegQuadratic => -a.norm_sq(),
            EnergyKind::Extension { base, lambda, beta, mu, p } => {
                let s = a.sym();
                let s2 = s.norm_sq();
                let a2 = a.antisym().norm_sq();
                base.value(&s) - lambda * power_value(*mu, s2, *p) + lambda * power_value(*mu, s2 + beta * beta * a2, *p)
            }
            EnergyKind::EnvelopeSource { base, beta, mu, p } => {
                let s = a.sym();
                base.value(&s) + beta * (power_value(*mu, a.antisym().norm_sq(), *p) - mu.powf(*p))
            }
            EnergyKind::AntisymPenalty { base, beta, p } => {
                base.value(&a.sym()) + beta * a.antisym().norm_sq().powf(0.5 * p)
            }
            EnergyKind::Shifted { base, lambda, mu, p } => base.value(a) - lambda * power_value(*mu, a.norm_sq(), *p),
            EnergyKind::ValueOnly { base } => base.value(a),
        }
    }

    pub fn gradient(&self, a: &Matrix) -> Option<Matrix> {
        let n = a.dim();
        Some(match self {
            EnergyKind::Power { mu, p } => power_slope(*mu, a.norm_sq(), *p) * *a,
            EnergyKind::ConvexQuadratic => 2.0 * *a,
            EnergyKind::PolyconvexMinor => (2.0 * a.det()) * a.cofactor(),
            EnergyKind::Linear { weights } => Matrix::from_fn(n, |i, j| weights[3 * i + j]),
            EnergyKind::Determinant => a.cofactor(),
            EnergyKind::NegQuadratic => -2.0 * *a,
            EnergyKind::Extension { base, lambda, beta, mu, p } => {
                let s = a.sym();
                let w = a.antisym();
                let s2 = s.norm_sq();
                let t = s2 + beta * beta * w.norm_sq();
                base.gradient(&s)?.sym() - (lambda * power_slope(*mu, s2, *p)) * s
                    + (lambda * power_slope(*mu, t, *p)) * (s + (beta * beta) * w)
            }
            EnergyKind::EnvelopeSource { base, beta, mu, p } => {
                let s = a.sym();
                let w = a.antisym();
                base.gradient(&s)?.sym() + (beta * power_slope(*mu, w.norm_sq(), *p)) * w
            }
            EnergyKind::AntisymPenalty { base, beta, p } => {
                let s = a.sym();
                let w = a.antisym();
                base.gradient(&s)?.sym() + (beta * power_slope(0.0, w.norm_sq(), *p)) * w
            }
            EnergyKind::Shifted { base, lambda, mu, p } => {
                base.gradient(a)? - (lambda * power_slope(*mu, a.norm_sq(), *p)) * *a
            }
            EnergyKind::ValueOnly { .. } => return None,
        })
    }

    pub fn has_gradient(&self) -> bool {
        match self {
            EnergyKind::ValueOnly { .. } => false,
            EnergyKind::Extension { base, .. }
            | EnergyKind::EnvelopeSource { base, .. }
            | EnergyKind::AntisymPenalty { base, .. }
            | EnergyKind::Shifted { base, .. } => base.has_gradient(),
            _ => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyFunction {
    pub name: String,
    pub domain: DomainTag,
    pub p: f64,
    pub mu: f64,
    pub kind: EnergyKind,
    pub certificates: Vec<Certificate>,
}

fn check_p_mu(p: f64, mu: f64) -> Result<(), EnergyError> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(EnergyError::ExponentRange(format!("p must exceed 1, got {p}")));
    }
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(EnergyError::InvalidParameter(format!("mu must be ≥ 0, got {mu}")));
    }
    Ok(())
}

/// Names accepted by [`catalog`].
pub const CATALOG_NAMES: [&str; 6] = ["power", "convex-quadratic", "polyconvex-minor", "linear", "det", "neg-quadratic"];

/// Named energies with their analytically known certificates.
///
/// `power`, `convex-quadratic`, `polyconvex-minor` and `linear` live on
/// symmetric matrices; `det` and `neg-quadratic` on all matrices.
pub fn catalog(name: &str, p: f64, mu: f64) -> Result<EnergyFunction, EnergyError> {
    let sym = DomainTag::SymmetricOnly;
    let f = match name {
        "power" => {
            check_p_mu(p, mu)?;
            let c = power_hessian_bound(p);
            let m = 2f64.powf((0.5 * p - 1.0).max(0.0)) * mu.powf(p).max(1.0);
            EnergyFunction {
                name: name.into(),
                domain: sym,
                p,
                mu,
                kind: EnergyKind::Power { mu, p },
                certificates: vec![
                    Certificate::Strict2qc { nu: theta_p(p) },
                    Certificate::HessianBound { c },
                    Certificate::GradientLipschitz { lip: c * big_k_p(p) },
                    Certificate::Growth { m },
                    Certificate::Convex,
                ],
            }
        }
        "convex-quadratic" => EnergyFunction {
            name: name.into(),
            domain: sym,
            p: 2.0,
            mu: 0.0,
            kind: EnergyKind::ConvexQuadratic,
            certificates: vec![
                Certificate::Strict2qc { nu: 1.0 },
                Certificate::HessianBound { c: 2.0 },
                Certificate::GradientLipschitz { lip: 2.0 },
                Certificate::Growth { m: 1.0 },
                Certificate::Convex,
            ],
        },
        "polyconvex-minor" => EnergyFunction {
            name: name.into(),
            domain: sym,
            p: 4.0,
            mu: 0.0,
            kind: EnergyKind::PolyconvexMinor,
            certificates: vec![Certificate::Plain2qc, Certificate::Growth { m: 1.0 }],
        },
        "linear" => EnergyFunction {
            name: name.into(),
            domain: sym,
            p: 2.0,
            mu: 0.0,
            kind: EnergyKind::Linear { weights: LINEAR_WEIGHTS.to_vec() },
            certificates: vec![
                Certificate::Plain2qc,
                Certificate::Growth { m: LINEAR_WEIGHTS.iter().map(|w| w * w).sum::<f64>().sqrt() },
                Certificate::Quasiaffine,
            ],
        },
        "det" => EnergyFunction {
            name: name.into(),
            domain: DomainTag::FullMatrix,
            p: 2.0,
            mu: 0.0,
            kind: EnergyKind::Determinant,
            certificates: vec![Certificate::Quasiaffine],
        },
        "neg-quadratic" => EnergyFunction {
            name: name.into(),
            domain: DomainTag::FullMatrix,
            p: 2.0,
            mu: 0.0,
            kind: EnergyKind::NegQuadratic,
            certificates: vec![],
        },
        other => return Err(EnergyError::UnknownName(other.into())),
    };
    Ok(f)
}

impl EnergyFunction {
    /// Domain-checked evaluation.
    pub fn eval(&self, a: &Matrix) -> Result<f64, EnergyError> {
        self.check_arg(a)?;
        Ok(self.kind.value(a))
    }

    /// Domain-checked gradient.
    pub fn grad(&self, a: &Matrix) -> Result<Matrix, EnergyError> {
        self.check_arg(a)?;
        self.kind.gradient(a).ok_or_else(|| EnergyError::MissingGradient(self.name.clone()))
    }

    fn check_arg(&self, a: &Matrix) -> Result<(), EnergyError> {
        if self.domain == DomainTag::SymmetricOnly && !a.is_symmetric(1e-12) {
            return Err(EnergyError::NotSymmetric(self.name.clone()));
        }
        Ok(())
    }

    /// Evaluation without the domain check (hot loops on known-symmetric data).
    #[inline]
    pub fn value(&self, a: &Matrix) -> f64 {
        self.kind.value(a)
    }

    #[inline]
    pub fn gradient(&self, a: &Matrix) -> Option<Matrix> {
        self.kind.gradient(a)
    }

    pub fn has_gradient(&self) -> bool {
        self.kind.has_gradient()
    }

    pub fn strict_nu(&self) -> Option<f64> {
        self.certificates.iter().find_map(|c| match c {
            Certificate::Strict2qc { nu } => Some(*nu),
            _ => None,
        })
    }

    pub fn growth_constant(&self) -> Option<f64> {
        self.certificates.iter().find_map(|c| match c {
            Certificate::Growth { m } => Some(*m),
            _ => None,
        })
    }

    pub fn lipschitz_constant(&self) -> Option<f64> {
        self.certificates.iter().find_map(|c| match c {
            Certificate::GradientLipschitz { lip } => Some(*lip),
            _ => None,
        })
    }

    pub fn has_certificate(&self, cert: &Certificate) -> bool {
        self.certificates.contains(cert)
    }

    /// Structural constants, available when a strict certificate exists.
    pub fn model_params(&self) -> Option<ModelParams> {
        let nu = self.strict_nu()?;
        let mut params = ModelParams::new(self.p, self.mu, nu).ok()?;
        if let Some(l) = self.lipschitz_constant() {
            if l >= nu {
                params.lip = Some(l);
            }
        }
        params.growth = self.growth_constant();
        Some(params)
    }

    /// The same formula viewed as an energy on all matrices. Only
    /// pointwise certificates (convexity, quasiaffinity) carry over.
    pub fn natural_extension(&self) -> EnergyFunction {
        EnergyFunction {
            name: format!("{}-full", self.name),
            domain: DomainTag::FullMatrix,
            p: self.p,
            mu: self.mu,
            kind: self.kind.clone(),
            certificates: self
                .certificates
                .iter()
                .copied()
                .filter(|c| matches!(c, Certificate::Convex | Certificate::Quasiaffine))
                .collect(),
        }
    }

    /// Hides the analytic gradient (exercises finite-difference fallbacks).
    pub fn without_gradient(&self) -> EnergyFunction {
        EnergyFunction {
            name: format!("{}-value-only", self.name),
            kind: EnergyKind::ValueOnly { base: Box::new(self.kind.clone()) },
            ..self.clone()
        }
    }

    fn require_symmetric(&self) -> Result<(), EnergyError> {
        if self.domain != DomainTag::SymmetricOnly {
            return Err(EnergyError::InvalidParameter(format!("`{}` must be a symmetric-only energy", self.name)));
        }
        Ok(())
    }

    fn require_strict(&self) -> Result<f64, EnergyError> {
        self.strict_nu().ok_or_else(|| EnergyError::MissingCertificate {
            name: self.name.clone(),
            what: "strict 2-quasiconvexity".into(),
        })
    }
}

/// Parameters of the extension constructions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtensionConfig {
    /// Weight of the antisymmetric penalty.
    pub beta: f64,
    /// Shift `ν/Θ_p`.
    pub lambda: f64,
    /// Increasing weights for the penalty path.
    #[serde(default)]
    pub beta_schedule: Vec<f64>,
    /// Empirical stand-in for the unspecified constant of the existence proof.
    #[serde(default)]
    pub sigma_fit: Option<f64>,
}

impl ExtensionConfig {
    pub fn for_energy(f: &EnergyFunction, beta: f64) -> Result<Self, EnergyError> {
        let nu = f.require_strict()?;
        Ok(Self { beta, lambda: nu / big_theta_p(f.p), beta_schedule: Vec::new(), sigma_fit: None })
    }

    pub fn validate(&self, f: &EnergyFunction) -> Result<(), EnergyError> {
        let nu = f.require_strict()?;
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(EnergyError::InvalidParameter(format!("beta must be > 0, got {}", self.beta)));
        }
        if (self.lambda * big_theta_p(f.p) - nu).abs() > 1e-14 * nu {
            return Err(EnergyError::InvalidParameter(format!(
                "lambda {} is not nu/Theta_p = {}",
                self.lambda,
                nu / big_theta_p(f.p)
            )));
        }
        if self.beta_schedule.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(EnergyError::InvalidParameter("beta schedule must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// Full-matrix extension for `p ≥ 2`:
/// `F(A) = f(A^s) − λ(μ²+|A^s|²)^{p/2} + λ(μ²+|A^s|²+β²|A^a|²)^{p/2}`.
pub fn extend_p_ge_2(f: &EnergyFunction, cfg: &ExtensionConfig) -> Result<EnergyFunction, EnergyError> {
    f.require_symmetric()?;
    if !(f.p >= 2.0) {
        return Err(EnergyError::ExponentRange(format!("this extension needs p ≥ 2, got {}", f.p)));
    }
    cfg.validate(f)?;
    Ok(EnergyFunction {
        name: format!("{}-extended", f.name),
        domain: DomainTag::FullMatrix,
        p: f.p,
        mu: f.mu,
        kind: EnergyKind::Extension {
            base: Box::new(f.kind.clone()),
            lambda: cfg.lambda,
            beta: cfg.beta,
            mu: f.mu,
            p: f.p,
        },
        certificates: Vec::new(),
    })
}

/// `G(A) = f(A^s) + β((μ²+|A^a|²)^{p/2} − μ^p)` for `1 < p < 2`; its
/// quasiconvex envelope is the extension on that range.
pub fn extend_envelope_source_small_p(f: &EnergyFunction, beta: f64) -> Result<EnergyFunction, EnergyError> {
    f.require_symmetric()?;
    if !(f.p > 1.0 && f.p < 2.0) {
        return Err(EnergyError::ExponentRange(format!("this construction needs 1 < p < 2, got {}", f.p)));
    }
    if !(beta > 0.0) {
        return Err(EnergyError::InvalidParameter(format!("beta must be > 0, got {beta}")));
    }
    Ok(EnergyFunction {
        name: format!("{}-envelope-source", f.name),
        domain: DomainTag::FullMatrix,
        p: f.p,
        mu: f.mu,
        kind: EnergyKind::EnvelopeSource { base: Box::new(f.kind.clone()), beta, mu: f.mu, p: f.p },
        certificates: Vec::new(),
    })
}

/// `G_k(A) = f(A^s) + β_k|A^a|^p`.
pub fn extend_theorem1_g_k(f: &EnergyFunction, beta_k: f64) -> Result<EnergyFunction, EnergyError> {
    f.require_symmetric()?;
    f.require_strict()?;
    if f.growth_constant().is_none() {
        return Err(EnergyError::MissingCertificate { name: f.name.clone(), what: "growth".into() });
    }
    if !(beta_k > 0.0) {
        return Err(EnergyError::InvalidParameter(format!("beta must be > 0, got {beta_k}")));
    }
    Ok(EnergyFunction {
        name: format!("{}-penalized", f.name),
        domain: DomainTag::FullMatrix,
        p: f.p,
        mu: f.mu,
        kind: EnergyKind::AntisymPenalty { base: Box::new(f.kind.clone()), beta: beta_k, p: f.p },
        certificates: Vec::new(),
    })
}

/// `f_λ = f − λ(μ²+|A|²)^{p/2}`, admissible for `0 ≤ λ ≤ ν/Θ_p`.
pub fn lemma11_shift(f: &EnergyFunction, lambda: f64) -> Result<EnergyFunction, EnergyError> {
    f.require_symmetric()?;
    let nu = f.require_strict()?;
    let big_theta = big_theta_p(f.p);
    let max = nu / big_theta;
    if !(lambda >= 0.0) || lambda > max * (1.0 + 1e-15) {
        return Err(EnergyError::InvalidParameter(format!("lambda must lie in [0, {max}], got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(f.clone());
    }
    let mut certificates = vec![Certificate::Plain2qc];
    let rest = nu - lambda * big_theta;
    if rest > 0.0 {
        certificates.push(Certificate::Strict2qc { nu: rest });
    }
    certificates.extend(f.certificates.iter().copied().filter(|c| matches!(c, Certificate::Growth { .. })));
    Ok(EnergyFunction {
        name: format!("{}-shifted", f.name),
        domain: DomainTag::SymmetricOnly,
        p: f.p,
        mu: f.mu,
        kind: EnergyKind::Shifted { base: Box::new(f.kind.clone()), lambda, mu: f.mu, p: f.p },
        certificates,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertifyWhich {
    Strict2qc,
    Gradlip,
    Growth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyConfig {
    pub samples: usize,
    pub dim: usize,
    pub grid_n: usize,
    pub seed: u64,
    /// Base points additionally searched by the 2-qc optimizer.
    pub optimizer_points: usize,
    pub settings: OptimizerSettings,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        let settings = OptimizerSettings { restarts: 4, max_iterations: 200, ..OptimizerSettings::default() };
        Self { samples: 200, dim: 2, grid_n: 16, seed: 0, optimizer_points: 2, settings }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyReport {
    pub which: CertifyWhich,
    pub constant: f64,
    pub samples: usize,
    pub holds: bool,
    /// Smallest `rhs − lhs` observed.
    pub worst_margin: f64,
    /// Smallest `deficit / (ν · weight)` (strict 2-qc only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worst_ratio: Option<f64>,
}

/// Random matrix with Frobenius norm `norm` (symmetric if requested).
pub fn random_matrix<R: Rng>(rng: &mut R, dim: usize, norm: f64, symmetric: bool) -> Matrix {
    let entries: Vec<f64> = (0..dim * dim).map(|_| StandardNormal.sample(rng)).collect();
    let m = Matrix::from_row_major(dim, &entries);
    let m = if symmetric { m.sym() } else { m };
    let n = m.norm();
    if n == 0.0 {
        return m;
    }
    (norm / n) * m
}

/// Random matrix with log-uniform norm in `range`.
pub fn random_matrix_in<R: Rng>(rng: &mut R, dim: usize, range: (f64, f64), symmetric: bool) -> Matrix {
    let norm = log_uniform(rng, range.0, range.1);
    random_matrix(rng, dim, norm, symmetric)
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// Strict 2-qc integrand `(μ²+|A|²+|H|²)^{(p−2)/2}|H|²`.
pub fn strict_weight(mu: f64, a2: f64, h2: f64, p: f64) -> f64 {
    kernels::weighted_sq(mu * mu + a2, h2, p)
}

/// Checks a structural certificate on random samples. The strict 2-qc check
/// combines random test fields with an optimizer search on a few base points.
pub fn certify(f: &EnergyFunction, which: CertifyWhich, cfg: &CertifyConfig) -> Result<CertifyReport, EnergyError> {
    if cfg.samples == 0 {
        return Err(EnergyError::InvalidParameter("samples must be ≥ 1".into()));
    }
    let symmetric = f.domain == DomainTag::SymmetricOnly;
    let mut rng = rng::stream(cfg.seed, 0);
    match which {
        CertifyWhich::Strict2qc => {
            f.require_symmetric()?;
            let nu = match f.strict_nu() {
                Some(nu) => nu,
                None if f.has_certificate(&Certificate::Plain2qc) => 0.0,
                None => return Err(f.require_strict().unwrap_err()),
            };
            let grid = PeriodicGrid::new(cfg.dim, cfg.grid_n)?;
            let mut worst_margin = f64::INFINITY;
            let mut worst_ratio = f64::INFINITY;
            let mut holds = true;
            for i in 0..cfg.samples {
                let a = random_matrix_in(&mut rng, cfg.dim, (0.1, 10.0), true);
                let k = 1 + i % grid.max_band();
                let Field::Scalar(phi) = fields::random_field_with(grid, RandomKind::Scalar, k, &mut rng)? else {
                    unreachable!("scalar kind requested")
                };
                let amp = log_uniform(&mut rng, 1e-3, 10.0) * (1.0 + a.norm());
                let hs = fields::hessian(&phi);
                let h_rms = integrate(&hs.norm_sq()).sqrt();
                let s = amp / h_rms.max(f64::MIN_POSITIVE);
                let fa = f.value(&a);
                let deficit = integrate(&hs.map_scalar(|h| f.value(&(a + s * *h)) - fa));
                let weight = integrate(&hs.map_scalar(|h| strict_weight(f.mu, a.norm_sq(), (s * *h).norm_sq(), f.p)));
                let margin = deficit - nu * weight;
                let scale = 1.0 + fa.abs() + nu * weight;
                worst_margin = worst_margin.min(margin);
                if nu > 0.0 {
                    worst_ratio = worst_ratio.min(deficit / (nu * weight));
                }
                if margin < -1e-9 * scale {
                    holds = false;
                }
            }
            for j in 0..cfg.optimizer_points {
                let a = random_matrix(&mut rng, cfg.dim, [0.1, 1.0, 10.0][j % 3], true);
                let mut settings = cfg.settings.clone();
                settings.seed = cfg.seed.wrapping_add(j as u64 + 1);
                let report = qctest::qc2_deficit(f, &a, grid, &settings, (nu > 0.0).then_some(nu))?;
                worst_margin = worst_margin.min(report.deficit);
                if report.violation {
                    holds = false;
                }
            }
            Ok(CertifyReport {
                which,
                constant: nu,
                samples: cfg.samples,
                holds,
                worst_margin,
                worst_ratio: (nu > 0.0).then_some(worst_ratio),
            })
        }
        CertifyWhich::Gradlip => {
            if !f.has_gradient() {
                return Err(EnergyError::MissingGradient(f.name.clone()));
            }
            let lip = f.lipschitz_constant().ok_or_else(|| EnergyError::MissingCertificate {
                name: f.name.clone(),
                what: "gradient Lipschitz".into(),
            })?;
            let mut worst = f64::INFINITY;
            let mut holds = true;
            for _ in 0..cfg.samples {
                let a = random_matrix_in(&mut rng, cfg.dim, (1e-3, 1e3), symmetric);
                let b = random_matrix_in(&mut rng, cfg.dim, (1e-3, 1e3), symmetric);
                let ga = f.gradient(&a).expect("checked");
                let gb = f.gradient(&(a + b)).expect("checked");
                let lhs = (gb - ga).norm();
                let rhs = lip * strict_weight(f.mu, a.norm_sq(), b.norm_sq(), f.p) / b.norm().max(f64::MIN_POSITIVE);
                let margin = rhs - lhs;
                worst = worst.min(margin);
                if margin < -1e-12 * (1.0 + rhs + ga.norm() + gb.norm()) {
                    holds = false;
                }
            }
            Ok(CertifyReport { which, constant: lip, samples: cfg.samples, holds, worst_margin: worst, worst_ratio: None })
        }
        CertifyWhich::Growth => {
            let m = f.growth_constant().ok_or_else(|| EnergyError::MissingCertificate {
                name: f.name.clone(),
                what: "growth".into(),
            })?;
            let mut worst = f64::INFINITY;
            let mut holds = true;
            for _ in 0..cfg.samples {
                let a = random_matrix_in(&mut rng, cfg.dim, (1e-3, 1e3), symmetric);
                let rhs = m * (1.0 + a.norm().powf(f.p));
                let margin = rhs - f.value(&a).abs();
                worst = worst.min(margin);
                if margin < -1e-12 * rhs {
                    holds = false;
                }
            }
            Ok(CertifyReport { which, constant: m, samples: cfg.samples, holds, worst_margin: worst, worst_ratio: None })
        }
    }
}

/// Smallest `c` with `|F(A)| ≤ c(1 + |A|^p)` over random samples of norm up to `max_norm`.
pub fn fit_growth(f: &EnergyFunction, dim: usize, samples: usize, max_norm: f64, seed: u64) -> f64 {
    let mut rng = rng::stream(seed, 1);
    let symmetric = f.domain == DomainTag::SymmetricOnly;
    let mut c: f64 = f.value(&Matrix::zeros(dim)).abs();
    for _ in 0..samples {
        let a = random_matrix_in(&mut rng, dim, (1e-3, max_norm), symmetric);
        c = c.max(f.value(&a).abs() / (1.0 + a.norm().powf(f.p)));
    }
    c
}

/// Fixed probe set for the β search and related sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaProbe {
    pub base_points: Vec<Matrix>,
    pub grid: PeriodicGrid,
    pub settings: OptimizerSettings,
    pub beta0: f64,
    pub max_doublings: usize,
    /// Deficits at or above `−tolerance` count as "no violation".
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaAttempt {
    pub beta: f64,
    pub worst_deficit: f64,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSearchReport {
    pub beta: f64,
    pub attempts: Vec<BetaAttempt>,
    pub base_points: usize,
    pub restarts: usize,
    pub grid: PeriodicGrid,
    pub reports: Vec<qctest::DeficitReport>,
}

/// Doubling search for the penalty weight: starting at `beta0`, double β
/// until the deficit search finds no violation on the probe set.
pub fn auto_beta(f: &EnergyFunction, probe: &BetaProbe) -> Result<BetaSearchReport, EnergyError> {
    let mut beta = probe.beta0;
    let mut attempts = Vec::new();
    for _ in 0..=probe.max_doublings {
        let cfg = ExtensionConfig::for_energy(f, beta)?;
        let ext = extend_p_ge_2(f, &cfg)?;
        let reports = qctest::sweep_base_points(&ext, &probe.base_points, probe.grid, &probe.settings)?;
        let worst = reports.iter().map(|r| r.deficit).fold(0.0, f64::min);
        let violations = reports.iter().filter(|r| r.violation || r.deficit < -probe.tolerance).count();
        attempts.push(BetaAttempt { beta, worst_deficit: worst, violations });
        if violations == 0 {
            return Ok(BetaSearchReport {
                beta,
                attempts,
                base_points: probe.base_points.len(),
                restarts: probe.settings.restarts,
                grid: probe.grid,
                reports,
            });
        }
        beta *= 2.0;
    }
    Err(EnergyError::BetaSearchExhausted(probe.max_doublings))
}

/// One step of the penalty schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub k: u32,
    pub beta_k: f64,
    /// Raw fit from probe margins.
    pub lambda_fit: f64,
    /// Monotone, positive value used downstream.
    pub lambda_k: f64,
    /// Whether `β_k θ_p ≥ λ_k`.
    pub penalty_dominates: bool,
    /// Probes at symmetric points whose deficit exceeded `(1/k)|A|^p + 1/k`.
    pub symmetric_violations: usize,
    pub worst_deficit: f64,
}

/// Smallest admissible `λ_k` value.
pub const LAMBDA_FLOOR: f64 = 1e-12;

/// Builds `β_k = β₀ 2^k` and fits `λ_k` so that every probe deficit satisfies
/// `D(A) ≥ −(1/k)|A^s|^p − λ_k|A^a|^p − 1/k`, then makes `λ_k` nondecreasing.
pub fn theorem1_schedule(
    f: &EnergyFunction,
    beta0: f64,
    ks: &[u32],
    probe_points: &[Matrix],
    grid: PeriodicGrid,
    settings: &OptimizerSettings,
) -> Result<Vec<ScheduleEntry>, EnergyError> {
    Ok(theorem1_schedule_with_reports(f, beta0, ks, probe_points, grid, settings)?.0)
}

/// [`theorem1_schedule`] that also returns the deficit reports of every
/// probe, indexed `[k][point]`.
pub fn theorem1_schedule_with_reports(
    f: &EnergyFunction,
    beta0: f64,
    ks: &[u32],
    probe_points: &[Matrix],
    grid: PeriodicGrid,
    settings: &OptimizerSettings,
) -> Result<(Vec<ScheduleEntry>, Vec<Vec<qctest::DeficitReport>>), EnergyError> {
    if ks.windows(2).any(|w| w[1] <= w[0]) || ks.first().is_some_and(|k| *k == 0) {
        return Err(EnergyError::InvalidParameter("k values must be positive and increasing".into()));
    }
    if !(beta0 > 0.0) {
        return Err(EnergyError::InvalidParameter(format!("beta0 must be > 0, got {beta0}")));
    }
    let theta = theta_p(f.p);
    let mut out: Vec<ScheduleEntry> = Vec::new();
    let mut all_reports = Vec::with_capacity(ks.len());
    for &k in ks {
        let beta_k = beta0 * 2f64.powi(k as i32);
        let g = extend_theorem1_g_k(f, beta_k)?;
        let reports = qctest::sweep_base_points(&g, probe_points, grid, settings)?;
        let inv_k = 1.0 / k as f64;
        let mut fit: f64 = 0.0;
        let mut sym_viol = 0;
        let mut worst: f64 = 0.0;
        for (a, r) in probe_points.iter().zip(&reports) {
            worst = worst.min(r.deficit);
            let slack = -r.deficit - inv_k * a.sym().norm().powf(f.p) - inv_k;
            let anorm = a.antisym().norm();
            if anorm > 0.0 {
                fit = fit.max(slack / anorm.powf(f.p));
            } else if slack > 0.0 {
                sym_viol += 1;
            }
        }
        let prev = out.last().map_or(LAMBDA_FLOOR, |e| e.lambda_k);
        let lambda_k = fit.max(prev).max(LAMBDA_FLOOR);
        out.push(ScheduleEntry {
            k,
            beta_k,
            lambda_fit: fit,
            lambda_k,
            penalty_dominates: beta_k * theta >= lambda_k,
            symmetric_violations: sym_viol,
            worst_deficit: worst,
        });
        all_reports.push(reports);
    }
    Ok((out, all_reports))
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;

    fn sym2(a: f64, b: f64, c: f64) -> Matrix {
        Matrix::from_row_major(2, &[a, b, b, c])
    }

    #[test]
    fn catalog_examples() {
        let power = catalog("power", 2.0, 1.0).unwrap();
        assert_eq!(power.eval(&Matrix::zeros(2)).unwrap(), 1.0);
        assert_eq!(power.strict_nu(), Some(1.0));
        let q = catalog("convex-quadratic", 2.0, 0.0).unwrap();
        assert_eq!(q.eval(&Matrix::identity(2)).unwrap(), 2.0);
        let m = catalog("polyconvex-minor", 2.0, 0.0).unwrap();
        assert_eq!(m.eval(&Matrix::identity(2)).unwrap(), 1.0);
        assert!(matches!(catalog("nope", 2.0, 0.0), Err(EnergyError::UnknownName(_))));
        assert!(catalog("power", 1.0, 0.0).is_err());
        let lin = catalog("linear", 2.0, 0.0).unwrap();
        assert!(lin.strict_nu().is_none());
    }

    #[test]
    fn symmetric_only_energies_reject_full_arguments() {
        let f = catalog("power", 3.0, 1.0).unwrap();
        let a = Matrix::from_row_major(2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(f.eval(&a), Err(EnergyError::NotSymmetric(_))));
        assert!(f.natural_extension().eval(&a).is_ok());
    }

    #[test]
    fn p2_extension_is_closed_form_quadratic() {
        let f = catalog("power", 2.0, 1.0).unwrap();
        let cfg = ExtensionConfig::for_energy(&f, 1.5).unwrap();
        assert_eq!(cfg.lambda, 0.5);
        let ext = extend_p_ge_2(&f, &cfg).unwrap();
        let mut rng = rng::stream(1, 0);
        for _ in 0..100 {
            let a = random_matrix(&mut rng, 2, 3.0, false);
            let closed = 1.0 + a.sym().norm_sq() + cfg.lambda * 1.5 * 1.5 * a.antisym().norm_sq();
            assert_abs_diff_eq!(ext.value(&a), closed, epsilon = 1e-12);
        }
    }

    #[test]
    fn extension_range_checks() {
        let f = catalog("power", 1.5, 1.0).unwrap();
        let cfg = ExtensionConfig::for_energy(&f, 1.0).unwrap();
        assert!(matches!(extend_p_ge_2(&f, &cfg), Err(EnergyError::ExponentRange(_))));
        let g = catalog("power", 3.0, 1.0).unwrap();
        assert!(matches!(extend_envelope_source_small_p(&g, 1.0), Err(EnergyError::ExponentRange(_))));
        let bad = ExtensionConfig { lambda: 0.3, ..ExtensionConfig::for_energy(&g, 1.0).unwrap() };
        assert!(extend_p_ge_2(&g, &bad).is_err());
        let lin = catalog("linear", 2.0, 0.0).unwrap();
        assert!(matches!(ExtensionConfig::for_energy(&lin, 1.0), Err(EnergyError::MissingCertificate { .. })));
    }

    #[test]
    fn envelope_source_examples() {
        let f = catalog("power", 1.5, 1.0).unwrap();
        let g = extend_envelope_source_small_p(&f, 2.0).unwrap();
        let s = sym2(0.3, -1.0, 2.0);
        assert_abs_diff_eq!(g.value(&s), f.value(&s), epsilon = 1e-14);
        let w = Matrix::from_row_major(2, &[0.0, 1.5, -1.5, 0.0]);
        let expected = 1.0 + 2.0 * ((1.0 + w.norm_sq()).powf(0.75) - 1.0);
        assert_abs_diff_eq!(g.value(&w), expected, epsilon = 1e-14);
        let g3 = extend_envelope_source_small_p(&f, 3.0).unwrap();
        assert!(g3.value(&w) > g.value(&w));
    }

    #[test]
    fn penalty_and_shift_examples() {
        let f = catalog("power", 1.5, 1.0).unwrap();
        let g1 = extend_theorem1_g_k(&f, 1.0).unwrap();
        let g2 = extend_theorem1_g_k(&f, 2.0).unwrap();
        let s = sym2(1.0, 2.0, -0.5);
        assert_abs_diff_eq!(g1.value(&s), f.value(&s), epsilon = 1e-14);
        let a = Matrix::from_row_major(2, &[1.0, 2.0, -1.0, 0.0]);
        assert!(g2.value(&a) > g1.value(&a));
        assert!(g1.value(&a) >= 0.0);

        let p = catalog("power", 3.0, 1.0).unwrap();
        assert_eq!(lemma11_shift(&p, 0.0).unwrap(), p);
        let lam = p.strict_nu().unwrap() / big_theta_p(3.0);
        let shifted = lemma11_shift(&p, lam).unwrap();
        assert_abs_diff_eq!(shifted.value(&s) + lam * p.value(&s), p.value(&s), epsilon = 1e-12);
        assert!(shifted.has_certificate(&Certificate::Plain2qc));
        assert!(shifted.strict_nu().is_none());
        assert!(lemma11_shift(&p, 2.0 * lam).is_err());
    }

    #[test]
    fn extension_of_p2_power_has_nonnegative_hessian() {
        let f = catalog("power", 2.0, 1.0).unwrap();
        let ext = extend_p_ge_2(&f, &ExtensionConfig::for_energy(&f, 0.7).unwrap()).unwrap();
        let mut rng = rng::stream(4, 0);
        let h = 1e-4;
        for _ in 0..20 {
            let a = random_matrix(&mut rng, 2, 2.0, false);
            // Hessian in the 4 entries by central differences of the gradient.
            let mut hess = [[0.0; 4]; 4];
            for c in 0..4 {
                let mut e = Matrix::zeros(2);
                e.set(c / 2, c % 2, h);
                let gp = ext.gradient(&(a + e)).unwrap().row_major();
                let gm = ext.gradient(&(a - e)).unwrap().row_major();
                for r in 0..4 {
                    hess[r][c] = (gp[r] - gm[r]) / (2.0 * h);
                }
            }
            // Check xᵀHx ≥ 0 on random directions and on the unit vectors.
            for _ in 0..20 {
                let x: Vec<f64> = (0..4).map(|_| StandardNormal.sample(&mut rng)).collect();
                let q: f64 = (0..4).map(|r| (0..4).map(|c| x[r] * hess[r][c] * x[c]).sum::<f64>()).sum();
                assert!(q >= -1e-8);
            }
        }
    }

    #[test]
    fn certificates_hold_for_catalog_energies() {
        let cfg = CertifyConfig { samples: 60, ..CertifyConfig::default() };
        let q = catalog("convex-quadratic", 2.0, 0.0).unwrap();
        let r = certify(&q, CertifyWhich::Strict2qc, &cfg).unwrap();
        assert!(r.holds);
        assert!(r.worst_ratio.unwrap() >= 1.0 - 1e-9);
        let lin = catalog("linear", 2.0, 0.0).unwrap();
        let r = certify(&lin, CertifyWhich::Strict2qc, &cfg).unwrap();
        assert!(r.holds && r.worst_margin.abs() < 1e-9);
        for p in [1.5, 2.0, 3.0] {
            let f = catalog("power", p, 1.0).unwrap();
            assert!(certify(&f, CertifyWhich::Gradlip, &cfg).unwrap().holds);
            assert!(certify(&f, CertifyWhich::Growth, &cfg).unwrap().holds);
        }
        let nograd = q.without_gradient();
        assert!(matches!(certify(&nograd, CertifyWhich::Gradlip, &cfg), Err(EnergyError::MissingGradient(_))));
    }

    #[test]
    fn growth_fit_bounds_extension() {
        let f = catalog("power", 3.0, 1.0).unwrap();
        let ext = extend_p_ge_2(&f, &ExtensionConfig::for_energy(&f, 2.0).unwrap()).unwrap();
        let c = fit_growth(&ext, 2, 2000, 1e3, 3);
        assert!(c.is_finite() && c > 0.0);
        let mut rng = rng::stream(99, 0);
        for _ in 0..200 {
            let a = random_matrix_in(&mut rng, 2, (1e-3, 1e3), false);
            // generous factor: the fit is a sampled maximum
            assert!(ext.value(&a).abs() <= 1.5 * c * (1.0 + a.norm().powi(3)));
        }
    }

    #[test]
    fn serde_roundtrip_replays_values() {
        let f = catalog("power", 3.0, 1.0).unwrap();
        let ext = extend_p_ge_2(&f, &ExtensionConfig::for_energy(&f, 2.0).unwrap()).unwrap();
        let json = serde_json::to_string(&ext).unwrap();
        let back: EnergyFunction = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ext);
        let a = Matrix::from_row_major(2, &[1.0, 2.0, -3.0, 0.5]);
        assert_eq!(back.value(&a), ext.value(&a));
    }

    fn all_constructions() -> Vec<EnergyFunction> {
        let p3 = catalog("power", 3.0, 1.0).unwrap();
        let p15 = catalog("power", 1.5, 0.5).unwrap();
        let p2 = catalog("power", 2.0, 0.0).unwrap();
        vec![
            extend_p_ge_2(&p3, &ExtensionConfig::for_energy(&p3, 2.0).unwrap()).unwrap(),
            extend_p_ge_2(&p2, &ExtensionConfig::for_energy(&p2, 0.5).unwrap()).unwrap(),
            extend_envelope_source_small_p(&p15, 3.0).unwrap(),
            extend_theorem1_g_k(&p15, 4.0).unwrap(),
            extend_theorem1_g_k(&p3, 1.0).unwrap(),
        ]
    }

    fn mat(dim: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(-5.0f64..5.0, dim * dim).prop_map(move |v| Matrix::from_row_major(dim, &v))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn constructions_restrict_to_base_and_are_frame_even(a in mat(2)) {
            let bases = [
                catalog("power", 3.0, 1.0).unwrap(),
                catalog("power", 2.0, 0.0).unwrap(),
                catalog("power", 1.5, 0.5).unwrap(),
                catalog("power", 1.5, 0.5).unwrap(),
                catalog("power", 3.0, 1.0).unwrap(),
            ];
            let s = a.sym();
            for (ext, base) in all_constructions().iter().zip(&bases) {
                let fs = base.value(&s);
                prop_assert!((ext.value(&s) - fs).abs() <= 1e-12 * (1.0 + fs.abs()));
                let v = ext.value(&a);
                prop_assert!((ext.value(&a.transpose()) - v).abs() <= 1e-12 * (1.0 + v.abs()));
            }
        }

        #[test]
        fn gradients_match_finite_differences(a in mat(2)) {
            let mut energies = all_constructions();
            energies.push(catalog("polyconvex-minor", 2.0, 0.0).unwrap().natural_extension());
            energies.push(catalog("det", 2.0, 0.0).unwrap());
            let p3 = catalog("power", 3.0, 1.0).unwrap();
            let lam = 0.5 * p3.strict_nu().unwrap() / big_theta_p(3.0);
            energies.push(lemma11_shift(&p3, lam).unwrap().natural_extension());
            let h = 1e-6;
            for f in &energies {
                let g = f.gradient(&a).unwrap();
                let scale = g.norm().max(1.0);
                for i in 0..2 {
                    for j in 0..2 {
                        let mut e = Matrix::zeros(2);
                        e.set(i, j, h);
                        let fd = (f.value(&(a + e)) - f.value(&(a - e))) / (2.0 * h);
                        prop_assert!((fd - g.get(i, j)).abs() <= 1e-6 * scale, "{}: {} vs {}", f.name, fd, g.get(i, j));
                    }
                }
            }
        }

        #[test]
        fn penalty_growth_sandwich(a in mat(2), beta in 0.1f64..10.0) {
            let f = catalog("power", 1.5, 1.0).unwrap();
            let g = extend_theorem1_g_k(&f, beta).unwrap();
            let fs = f.value(&a.sym());
            let v = g.value(&a);
            prop_assert!(fs <= v + 1e-12);
            prop_assert!(v <= fs + beta * a.norm().powf(1.5) + 1e-12);
        }
    }
}
