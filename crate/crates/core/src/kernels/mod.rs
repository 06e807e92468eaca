//! Power-function kernels `g(x) = (μ² + |x|²)^{p/2}` on a Euclidean space,
//! the closed-form Taylor constants that control them, and pointwise
//! certified checks of the scalar inequalities built on those constants.
//!
//! Every check returns an [`InequalityCheck`]: the raw margin (right side
//! minus left side, arranged so that a valid inequality has margin ≥ 0),
//! the numerical error bar attached to it, and the verdict. Margins within
//! [`TIE_TOLERANCE`] (relative to the size of the terms involved) are
//! reported as ties rather than failures.

pub mod sweep;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::{self, QuadratureError};

/// Margins smaller than this (scaled by `max(1, term size)`) are ties.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("gradient of the power kernel is singular at x = 0 when μ = 0 and p < 2")]
    SingularPoint,
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error("potential does not provide a gradient")]
    MissingGradient,
    #[error("potential violates the unit gradient-Lipschitz normalization: {0}")]
    Normalization(String),
}

/// Structural constants of an energy: growth exponent `p`, offset `μ`,
/// ellipticity `ν`, and optionally the gradient-Lipschitz constant `L` and
/// the growth constant `M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub p: f64,
    pub mu: f64,
    pub nu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lip: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<f64>,
}

impl ModelParams {
    pub fn new(p: f64, mu: f64, nu: f64) -> Result<Self, KernelError> {
        let params = Self { p, mu, nu, lip: None, growth: None };
        params.validate()?;
        Ok(params)
    }

    pub fn with_lip(mut self, lip: f64) -> Result<Self, KernelError> {
        self.lip = Some(lip);
        self.validate()?;
        Ok(self)
    }

    pub fn with_growth(mut self, growth: f64) -> Result<Self, KernelError> {
        self.growth = Some(growth);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if !(self.p > 1.0) || !self.p.is_finite() {
            return Err(KernelError::InvalidParameter(format!("p must exceed 1, got {}", self.p)));
        }
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return Err(KernelError::InvalidParameter(format!("mu must be ≥ 0, got {}", self.mu)));
        }
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(KernelError::InvalidParameter(format!("nu must be > 0, got {}", self.nu)));
        }
        if let Some(lip) = self.lip {
            if !(lip >= self.nu) {
                return Err(KernelError::InvalidParameter(format!(
                    "Lipschitz constant {lip} must be ≥ nu = {}",
                    self.nu
                )));
            }
        }
        if let Some(m) = self.growth {
            if !(m > 0.0) {
                return Err(KernelError::InvalidParameter(format!("growth constant must be > 0, got {m}")));
            }
        }
        Ok(())
    }
}

/// Closed-form constants of the Taylor-remainder estimates for the power kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantsTable {
    /// Lower constant of the weighted segment integral.
    #[serde(rename = "kappa_p")]
    pub kappa: f64,
    /// Upper constant of the unweighted segment integral.
    #[serde(rename = "K_p")]
    pub big_k: f64,
    /// Lower remainder constant.
    #[serde(rename = "theta_p")]
    pub theta: f64,
    /// Upper remainder constant.
    #[serde(rename = "Theta_p")]
    pub big_theta: f64,
    /// Admissible shift `ν / Θ_p`.
    pub lambda: f64,
}

pub fn kappa_p(p: f64) -> f64 {
    if p <= 2.0 {
        2f64.powf(p / 2.0 - 2.0)
    } else {
        5f64.powf((2.0 - p) / 2.0) / (4.0 * p * (p - 1.0))
    }
}

pub fn big_k_p(p: f64) -> f64 {
    if p <= 2.0 {
        let a = 2f64.powf((2.0 - p) / 2.0);
        let b = 2f64.powf(1.5 * (2.0 - p));
        a.max(b) / (p - 1.0)
    } else {
        2f64.powf((p - 2.0) / 2.0)
    }
}

pub fn theta_p(p: f64) -> f64 {
    p * (p - 1.0).min(1.0) * kappa_p(p)
}

pub fn big_theta_p(p: f64) -> f64 {
    p * (p - 1.0).max(1.0) * big_k_p(p)
}

/// Operator-norm bound `C` with `|∇²g(x)| ≤ C (μ² + |x|²)^{(p−2)/2}`.
pub fn power_hessian_bound(p: f64) -> f64 {
    p * (p - 1.0).max(1.0)
}

pub fn constants_for(params: &ModelParams) -> ConstantsTable {
    let p = params.p;
    let big_theta = big_theta_p(p);
    ConstantsTable {
        kappa: kappa_p(p),
        big_k: big_k_p(p),
        theta: theta_p(p),
        big_theta,
        lambda: params.nu / big_theta,
    }
}

#[inline]
pub(crate) fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn add(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a + b).collect()
}

fn check_same_len(x: &[f64], y: &[f64]) -> Result<(), KernelError> {
    if x.len() != y.len() {
        return Err(KernelError::InvalidParameter(format!(
            "vector lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    Ok(())
}

/// `(base + s2)^{(p−2)/2} · s2`, continuously extended by 0 at `s2 = 0`.
#[inline]
pub fn weighted_sq(base: f64, s2: f64, p: f64) -> f64 {
    if s2 == 0.0 {
        0.0
    } else {
        (base + s2).powf(0.5 * (p - 2.0)) * s2
    }
}

/// `g(x) = (μ² + |x|²)^{p/2}`.
pub fn power_g(x: &[f64], mu: f64, p: f64) -> f64 {
    (mu * mu + norm_sq(x)).powf(0.5 * p)
}

/// `∇g(x) = p (μ² + |x|²)^{(p−2)/2} x`.
pub fn grad_power_g(x: &[f64], mu: f64, p: f64) -> Result<Vec<f64>, KernelError> {
    let s = mu * mu + norm_sq(x);
    if s == 0.0 {
        if p < 2.0 {
            return Err(KernelError::SingularPoint);
        }
        return Ok(vec![0.0; x.len()]);
    }
    let c = p * s.powf(0.5 * (p - 2.0));
    Ok(x.iter().map(|v| c * v).collect())
}

/// Outcome of a pointwise inequality check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    /// Smallest of the margins involved (≥ 0 when the inequality holds).
    pub margin: f64,
    /// Numerical error bar attached to the margin (quadrature error, 0 for closed forms).
    pub error_bound: f64,
    /// Size of the terms entering the margin, used to scale the tie tolerance.
    pub scale: f64,
}

impl InequalityCheck {
    fn from_margins(margins: &[f64], error_bound: f64, scale: f64) -> Self {
        let margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
        Self { margin, error_bound, scale }
    }

    pub fn tie_tolerance(&self) -> f64 {
        TIE_TOLERANCE * self.scale.max(1.0)
    }

    /// The margin clears `−(error bar + tie tolerance)`.
    pub fn holds(&self) -> bool {
        self.margin >= -(self.error_bound + self.tie_tolerance())
    }

    /// Margin within the tie tolerance of zero.
    pub fn tight(&self) -> bool {
        self.margin.abs() <= self.tie_tolerance()
    }

    /// Margin relative to the term size.
    pub fn relative_margin(&self) -> f64 {
        self.margin / self.scale.max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone, Copy)]
enum SegmentWeight {
    One,
    OneMinusT,
}

impl SegmentWeight {
    #[inline]
    fn at(self, t: f64) -> f64 {
        match self {
            SegmentWeight::One => 1.0,
            SegmentWeight::OneMinusT => 1.0 - t,
        }
    }
}

/// `∫₀¹ (μ² + |x+ty|²)^{(p−2)/2} w(t) dt` by adaptive Gauss–Legendre.
///
/// The segment is split at the point closest to the origin. For `p < 2`
/// each piece is mapped with `t = t₀ ± H u^m`, `m = 1/(p−1)`, which turns
/// a `|t − t₀|^{p−2}` endpoint singularity into a bounded integrand.
fn segment_integral(
    x: &[f64],
    y: &[f64],
    mu: f64,
    p: f64,
    weight: SegmentWeight,
    nodes: usize,
) -> Result<quadrature::QuadratureResult, KernelError> {
    let e = 0.5 * (p - 2.0);
    let a2 = norm_sq(x);
    let b2 = norm_sq(y);
    let xy = dot(x, y);
    let scale = (mu * mu + a2 + b2).powf(e);
    if !scale.is_finite() {
        return Err(KernelError::SingularPoint);
    }
    let tol = 1e-13 * scale.max(f64::MIN_POSITIVE);

    if b2 == 0.0 {
        let base = mu * mu + a2;
        let v = base.powf(e);
        if !v.is_finite() {
            return Err(KernelError::SingularPoint);
        }
        let exact = match weight {
            SegmentWeight::One => v,
            SegmentWeight::OneMinusT => 0.5 * v,
        };
        return Ok(quadrature::QuadratureResult { value: exact, error_bound: 0.0, panels: 0 });
    }

    let t_star = -xy / b2;
    let c2 = (mu * mu + a2 - xy * xy / b2).max(0.0);
    let m = if p < 2.0 { 1.0 / (p - 1.0) } else { 1.0 };

    let mut pieces: Vec<(f64, f64)> = Vec::with_capacity(2);
    if t_star > 0.0 && t_star < 1.0 {
        pieces.push((t_star, 0.0));
        pieces.push((t_star, 1.0));
    } else if t_star <= 0.0 {
        pieces.push((0.0, 1.0));
    } else {
        pieces.push((1.0, 0.0));
    }

    let mut total = quadrature::QuadratureResult { value: 0.0, error_bound: 0.0, panels: 0 };
    for (s0, s1) in pieces {
        let h = (s1 - s0).abs();
        let sigma = (s1 - s0).signum();
        let offset = s0 - t_star;
        let f = |u: f64| {
            let um = if m == 1.0 { u } else { u.powf(m) };
            let d = offset + sigma * h * um;
            let t = s0 + sigma * h * um;
            let jac = if m == 1.0 { h } else { h * m * u.powf(m - 1.0) };
            (c2 + b2 * d * d).powf(e) * weight.at(t) * jac
        };
        let r = quadrature::integrate_adaptive(&f, 0.0, 1.0, nodes, tol)?;
        total.value += r.value;
        total.error_bound += r.error_bound;
        total.panels += r.panels;
    }
    Ok(total)
}

fn remainder_weight(mu: f64, x: &[f64], y: &[f64], p: f64) -> Result<f64, KernelError> {
    let w = (mu * mu + norm_sq(x) + norm_sq(y)).powf(0.5 * (p - 2.0));
    if w.is_finite() {
        Ok(w)
    } else {
        Err(KernelError::SingularPoint)
    }
}

/// Lower segment estimate:
/// `∫₀¹(μ²+|x+ty|²)^{(p−2)/2}(1−t)dt ≥ κ_p (μ²+|x|²+|y|²)^{(p−2)/2}`.
pub fn check_prima(x: &[f64], y: &[f64], mu: f64, p: f64, quad_nodes: usize) -> Result<InequalityCheck, KernelError> {
    check_same_len(x, y)?;
    let lhs = segment_integral(x, y, mu, p, SegmentWeight::OneMinusT, quad_nodes)?;
    let rhs = kappa_p(p) * remainder_weight(mu, x, y, p)?;
    Ok(InequalityCheck::from_margins(&[lhs.value - rhs], lhs.error_bound, lhs.value.abs() + rhs))
}

/// Upper segment estimate:
/// `∫₀¹(μ²+|x+ty|²)^{(p−2)/2}dt ≤ K_p (μ²+|x|²+|y|²)^{(p−2)/2}`.
pub fn check_seconda(x: &[f64], y: &[f64], mu: f64, p: f64, quad_nodes: usize) -> Result<InequalityCheck, KernelError> {
    check_same_len(x, y)?;
    let lhs = segment_integral(x, y, mu, p, SegmentWeight::One, quad_nodes)?;
    let rhs = big_k_p(p) * remainder_weight(mu, x, y, p)?;
    Ok(InequalityCheck::from_margins(&[rhs - lhs.value], lhs.error_bound, lhs.value.abs() + rhs))
}

/// Raw value of `∫₀¹(μ²+|x+ty|²)^{(p−2)/2}(1−t)dt`, exposed for tightness probes.
pub fn segment_integral_weighted(x: &[f64], y: &[f64], mu: f64, p: f64, quad_nodes: usize) -> Result<(f64, f64), KernelError> {
    check_same_len(x, y)?;
    let r = segment_integral(x, y, mu, p, SegmentWeight::OneMinusT, quad_nodes)?;
    Ok((r.value, r.error_bound))
}

/// Two-sided bounds on the Taylor remainder `R = g(x+y) − g(x) − ∇g(x)·y`:
/// `θ_p W|y|² ≤ R ≤ Θ_p W|y|²` with `W = (μ²+|x|²+|y|²)^{(p−2)/2}`.
///
/// Returns the two margins `(R − θ_p W|y|², Θ_p W|y|² − R)` alongside the
/// combined check.
pub fn check_taylor_bounds(x: &[f64], y: &[f64], mu: f64, p: f64) -> Result<(InequalityCheck, [f64; 2]), KernelError> {
    check_same_len(x, y)?;
    let gx = power_g(x, mu, p);
    let gxy = power_g(&add(x, y), mu, p);
    let grad = grad_power_g(x, mu, p)?;
    let lin = dot(&grad, y);
    let r = gxy - gx - lin;
    let wy = weighted_sq(mu * mu + norm_sq(x), norm_sq(y), p);
    let lower = r - theta_p(p) * wy;
    let upper = big_theta_p(p) * wy - r;
    let scale = gxy.abs() + gx.abs() + lin.abs() + big_theta_p(p) * wy;
    Ok((InequalityCheck::from_margins(&[lower, upper], 0.0, scale), [lower, upper]))
}

/// `g_β(x, y) = (μ² + |x|² + β²|y|²)^{p/2}` on a product space.
pub fn power_g_beta(x: &[f64], y: &[f64], mu: f64, p: f64, beta: f64) -> f64 {
    (mu * mu + norm_sq(x) + beta * beta * norm_sq(y)).powf(0.5 * p)
}

/// Taylor lower bounds for `g_β` on `X × Y`, evaluated through the identity
/// `g_β(x, y) = g(x, βy)`. The second (split) form is only checked for `p ≥ 2`.
pub fn check_product_taylor(
    x: &[f64],
    xi: &[f64],
    y: &[f64],
    eta: &[f64],
    mu: f64,
    p: f64,
    beta: f64,
) -> Result<InequalityCheck, KernelError> {
    check_same_len(x, xi)?;
    check_same_len(y, eta)?;
    if !(beta >= 0.0) {
        return Err(KernelError::InvalidParameter(format!("beta must be ≥ 0, got {beta}")));
    }
    let lift = |u: &[f64], v: &[f64]| -> Vec<f64> { u.iter().copied().chain(v.iter().map(|w| beta * w)).collect() };
    let base = lift(x, y);
    let step = lift(xi, eta);
    let moved = add(&base, &step);
    let g0 = power_g(&base, mu, p);
    let g1 = power_g(&moved, mu, p);
    let grad = grad_power_g(&base, mu, p)?;
    let lin = dot(&grad, &step);
    let r = g1 - g0 - lin;

    let theta = theta_p(p);
    let first = theta * weighted_sq(mu * mu + norm_sq(&base), norm_sq(&step), p);
    let mut margins = vec![r - first];
    let mut scale = g1.abs() + g0.abs() + lin.abs() + first;
    if p >= 2.0 {
        let e = 0.5 * (p - 2.0);
        let mx = mu * mu + norm_sq(x);
        let eta2 = norm_sq(eta);
        let second = theta * weighted_sq(mx, norm_sq(xi), p)
            + 0.5 * theta * beta * beta * mx.powf(e) * eta2
            + 0.5 * theta * beta.powf(p) * eta2.powf(0.5 * p);
        margins.push(r - second);
        scale += second;
    }
    Ok(InequalityCheck::from_margins(&margins, 0.0, scale))
}

fn check_small_p(p: f64, eps: f64) -> Result<(), KernelError> {
    if !(p > 1.0 && p <= 2.0) {
        return Err(KernelError::InvalidParameter(format!("requires 1 < p ≤ 2, got {p}")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(KernelError::InvalidParameter(format!("requires 0 < ε < 1, got {eps}")));
    }
    Ok(())
}

/// Subadditivity and absorption estimates for `t ↦ (μ²+t)^{(p−2)/2} t`, `1 < p ≤ 2`.
pub fn check_lemma10(x: &[f64], y: &[f64], mu: f64, p: f64, eps: f64) -> Result<InequalityCheck, KernelError> {
    check_small_p(p, eps)?;
    check_same_len(x, y)?;
    let m2 = mu * mu;
    let phi = |v: &[f64]| weighted_sq(m2, norm_sq(v), p);
    let (px, py, pxy) = (phi(x), phi(y), phi(&add(x, y)));
    let first = 2.0 * px + 2.0 * py - pxy;

    let lhs2 = eps.powf(0.5 * (2.0 - p)) * py;
    let rhs2 = weighted_sq(m2 + norm_sq(x), norm_sq(y), p) + eps * px;
    let second = rhs2 - lhs2;
    let scale = 2.0 * px + 2.0 * py + pxy + lhs2 + rhs2;
    Ok(InequalityCheck::from_margins(&[first, second], 0.0, scale))
}

/// `b^p ≤ 8ε^{(p−2)/p}(μ²+a²+b²)^{(p−2)/2}b² + εa^p + εμ^p` for `1 < p ≤ 2`.
pub fn check_lemma12(a: f64, b: f64, mu: f64, p: f64, eps: f64) -> Result<InequalityCheck, KernelError> {
    check_small_p(p, eps)?;
    if !(a >= 0.0 && b >= 0.0 && mu >= 0.0) {
        return Err(KernelError::InvalidParameter("a, b, mu must be nonnegative".into()));
    }
    let lhs = b.powf(p);
    let rhs = 8.0 * eps.powf((p - 2.0) / p) * weighted_sq(mu * mu + a * a, b * b, p) + eps * a.powf(p) + eps * mu.powf(p);
    Ok(InequalityCheck::from_margins(&[rhs - lhs], 0.0, lhs + rhs))
}

/// A scalar function on a Euclidean space with an optional analytic gradient.
pub trait Potential {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>>;
}

/// `scale · g(x)` with the continuous extension `∇g(0) = 0` at the singular point.
#[derive(Debug, Clone, Copy)]
pub struct PowerPotential {
    pub mu: f64,
    pub p: f64,
    pub scale: f64,
}

impl PowerPotential {
    pub fn new(mu: f64, p: f64) -> Self {
        Self { mu, p, scale: 1.0 }
    }

    /// Rescaled so its gradient satisfies the Lipschitz estimate with constant 1.
    pub fn unit_lipschitz(mu: f64, p: f64) -> Self {
        Self { mu, p, scale: 1.0 / (power_hessian_bound(p) * big_k_p(p)) }
    }
}

impl Potential for PowerPotential {
    fn value(&self, x: &[f64]) -> f64 {
        self.scale * power_g(x, self.mu, self.p)
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let g = grad_power_g(x, self.mu, self.p).unwrap_or_else(|_| vec![0.0; x.len()]);
        Some(g.into_iter().map(|v| self.scale * v).collect())
    }
}

fn gradient_of(f: &dyn Potential, x: &[f64]) -> Result<Vec<f64>, KernelError> {
    f.gradient(x).ok_or(KernelError::MissingGradient)
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

/// `|∇f(x+y) − ∇f(x)| ≤ K_p C (μ²+|x|²+|y|²)^{(p−2)/2}|y|` given the Hessian bound `C`.
pub fn check_gradient_lipschitz(
    f: &dyn Potential,
    hessian_bound: f64,
    x: &[f64],
    y: &[f64],
    mu: f64,
    p: f64,
) -> Result<InequalityCheck, KernelError> {
    check_same_len(x, y)?;
    let g0 = gradient_of(f, x)?;
    let g1 = gradient_of(f, &add(x, y))?;
    let lhs = diff_norm(&g1, &g0);
    let y2 = norm_sq(y);
    let rhs = if y2 == 0.0 {
        0.0
    } else {
        big_k_p(p) * hessian_bound * remainder_weight(mu, x, y, p)? * y2.sqrt()
    };
    let scale = lhs + rhs + norm_sq(&g0).sqrt() + norm_sq(&g1).sqrt();
    Ok(InequalityCheck::from_margins(&[rhs - lhs], 0.0, scale))
}

/// Constant `c_{ε,p}` of the three-point estimate, assembled from the
/// explicit Cauchy/Young chain for potentials whose gradient is
/// Lipschitz in the weighted sense with constant 1.
pub fn lemma4_constant(p: f64, eps: f64) -> Result<f64, KernelError> {
    if !(p > 1.0) {
        return Err(KernelError::InvalidParameter(format!("p must exceed 1, got {p}")));
    }
    if !(eps > 0.0) {
        return Err(KernelError::InvalidParameter(format!("ε must be > 0, got {eps}")));
    }
    if p <= 2.0 {
        let q = p / (p - 1.0);
        let small_z = 1.0 / eps;
        let large_z = 2f64.powf(0.5 * (2.0 - p)) / (p * (q * eps).powf(p - 1.0));
        Ok(1.0 + small_z.max(large_z))
    } else {
        let r = 0.5 * (p - 2.0);
        let c1 = 6f64.powf(r) + 2f64.powf(r) / (2.0 * eps);
        let a = p / (p - 2.0);
        let young = (2.0 * c1 / p) * (a * eps / (2.0 * c1)).powf(-r);
        Ok(c1.max(3f64.powf(r) + young))
    }
}

/// Weighted Lipschitz estimate with constant 1 at the pair `(x, y)`.
fn unit_lipschitz_margin(f: &dyn Potential, x: &[f64], y: &[f64], mu: f64, p: f64) -> Result<f64, KernelError> {
    let lhs = diff_norm(&gradient_of(f, &add(x, y))?, &gradient_of(f, x)?);
    let y2 = norm_sq(y);
    let rhs = if y2 == 0.0 { 0.0 } else { remainder_weight(mu, x, y, p)? * y2.sqrt() };
    Ok(rhs - lhs + 1e-12 * (1.0 + lhs))
}

/// Three-point estimate for potentials with unit weighted gradient-Lipschitz constant:
/// `|f(x+y+z) − f(x+y) − ∇f(x)·z| ≤ ε W(x,y)|y|² + c_{ε,p}·(…)` in the
/// small-`p` (`p ≤ 2`) or large-`p` form.
pub fn check_lemma4(
    f: &dyn Potential,
    x: &[f64],
    y: &[f64],
    z: &[f64],
    mu: f64,
    p: f64,
    eps: f64,
) -> Result<InequalityCheck, KernelError> {
    check_same_len(x, y)?;
    check_same_len(x, z)?;
    let c = lemma4_constant(p, eps)?;
    let xy = add(x, y);
    for (a, b) in [(x, y), (xy.as_slice(), z), (x, &add(y, z)[..])] {
        let m = unit_lipschitz_margin(f, a, b, mu, p)?;
        if m < 0.0 {
            return Err(KernelError::Normalization(format!("margin {m:.3e} at a spot-check pair")));
        }
    }
    let grad = gradient_of(f, x)?;
    let f2 = f.value(&add(&xy, z));
    let f1 = f.value(&xy);
    let lin = dot(&grad, z);
    let lhs = (f2 - f1 - lin).abs();
    let m2 = mu * mu;
    let x2 = norm_sq(x);
    let z2 = norm_sq(z);
    let y_term = eps * weighted_sq(m2 + x2, norm_sq(y), p);
    let rhs = if p <= 2.0 {
        y_term + c * weighted_sq(m2, z2, p)
    } else {
        y_term + c * (m2 + x2).powf(0.5 * (p - 2.0)) * z2 + c * z2.powf(0.5 * p)
    };
    let scale = f2.abs() + f1.abs() + lin.abs() + rhs;
    Ok(InequalityCheck::from_margins(&[rhs - lhs], 0.0, scale))
}

#[cfg(test)]
mod tests;
