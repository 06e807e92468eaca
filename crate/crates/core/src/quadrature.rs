//! Adaptive Gauss–Legendre quadrature with a per-panel error estimate.
//!
//! Each panel is integrated with an `n`-point rule and compared against the
//! sum of the same rule on its two halves; the difference is the panel's
//! error estimate. The accumulated estimates form the reported error bound.

use std::cell::RefCell;
use std::collections::{BinaryHeap, HashMap};
use std::f64::consts::PI;
use std::rc::Rc;

use thiserror::Error;

/// Hard bisection depth limit.
pub const MAX_DEPTH: usize = 40;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("quadrature rule needs at least 16 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("adaptive refinement exceeded depth {depth} on panel [{a}, {b}]")]
    NonConvergence { depth: usize, a: f64, b: f64 },
    #[error("integrand is not finite at t = {0}")]
    NonFinite(f64),
}

/// Nodes and weights of the Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n.
            let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, z);
                dp = d;
                let dz = p / d;
                z -= dz;
                if dz.abs() < 1e-16 {
                    let (_, d) = legendre_with_derivative(n, z);
                    dp = d;
                    break;
                }
            }
            let w = 2.0 / ((1.0 - z * z) * dp * dp);
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Fixed-rule approximation of the integral of `f` over `[a, b]`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: &F, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut s = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            s += w * f(mid + half * x);
        }
        s * half
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

thread_local! {
    static RULES: RefCell<HashMap<usize, Rc<GaussLegendre>>> = RefCell::new(HashMap::new());
}

/// Cached rule for `n` nodes (per thread).
pub fn rule(n: usize) -> Rc<GaussLegendre> {
    RULES.with(|cache| {
        cache
            .borrow_mut()
            .entry(n)
            .or_insert_with(|| Rc::new(GaussLegendre::new(n)))
            .clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureResult {
    pub value: f64,
    /// Sum of per-panel coarse/fine discrepancies.
    pub error_bound: f64,
    pub panels: usize,
}

/// Upper limit on the number of accepted panels.
pub const MAX_PANELS: usize = 100_000;

struct Panel {
    error: f64,
    lo: f64,
    hi: f64,
    depth: usize,
    left: f64,
    right: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error).is_eq()
    }
}

impl Eq for Panel {}

impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn make_panel<F: Fn(f64) -> f64>(
    gl: &GaussLegendre,
    f: &F,
    lo: f64,
    hi: f64,
    depth: usize,
    coarse: f64,
) -> Result<Panel, QuadratureError> {
    let mid = 0.5 * (lo + hi);
    let left = gl.integrate(f, lo, mid);
    let right = gl.integrate(f, mid, hi);
    if !(left + right).is_finite() {
        return Err(QuadratureError::NonFinite(mid));
    }
    Ok(Panel { error: (left + right - coarse).abs(), lo, hi, depth, left, right })
}

/// Adaptive integration of `f` over `[a, b]` to absolute tolerance `tol`.
///
/// Global strategy: the panel with the largest estimated error is bisected
/// until the summed estimate drops below `tol`. Panels whose estimate is at
/// the rounding floor are retired.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    nodes: usize,
    tol: f64,
) -> Result<QuadratureResult, QuadratureError> {
    if nodes < 16 {
        return Err(QuadratureError::TooFewNodes(nodes));
    }
    if a == b {
        return Ok(QuadratureResult { value: 0.0, error_bound: 0.0, panels: 0 });
    }
    let gl = rule(nodes);
    let mut heap = BinaryHeap::new();
    let first = make_panel(&gl, f, a, b, 0, gl.integrate(f, a, b))?;
    let mut active_error = first.error;
    heap.push(first);
    let mut retired_value = 0.0;
    let mut retired_error = 0.0;
    let mut retired = 0usize;
    while let Some(top) = heap.peek() {
        if active_error + retired_error <= tol {
            break;
        }
        let floor = 64.0 * f64::EPSILON * (top.left.abs() + top.right.abs());
        let panel = heap.pop().expect("peeked");
        active_error -= panel.error;
        if panel.error <= floor {
            retired_value += panel.left + panel.right;
            retired_error += panel.error;
            retired += 1;
            continue;
        }
        if panel.depth + 1 >= MAX_DEPTH || heap.len() + retired >= MAX_PANELS {
            return Err(QuadratureError::NonConvergence { depth: panel.depth + 1, a: panel.lo, b: panel.hi });
        }
        let mid = 0.5 * (panel.lo + panel.hi);
        for (lo, hi, coarse) in [(panel.lo, mid, panel.left), (mid, panel.hi, panel.right)] {
            let child = make_panel(&gl, f, lo, hi, panel.depth + 1, coarse)?;
            active_error += child.error;
            heap.push(child);
        }
    }
    let panels = heap.len() + retired;
    // Sum in position order so the result does not depend on heap layout.
    let mut rest: Vec<Panel> = heap.into_vec();
    rest.sort_by(|x, y| x.lo.total_cmp(&y.lo));
    let mut value = retired_value;
    let mut error = retired_error;
    for p in &rest {
        value += p.left + p.right;
        error += p.error;
    }
    Ok(QuadratureResult { value, error_bound: error, panels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn weights_sum_to_two() {
        for n in [1, 2, 5, 16, 33] {
            let gl = GaussLegendre::new(n);
            let s: f64 = gl.weights.iter().sum();
            assert_abs_diff_eq!(s, 2.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn exact_for_polynomials_up_to_degree_2n_minus_1() {
        let gl = GaussLegendre::new(16);
        // ∫_0^1 t^31 dt = 1/32
        let v = gl.integrate(&|t: f64| t.powi(31), 0.0, 1.0);
        assert_abs_diff_eq!(v, 1.0 / 32.0, epsilon = 1e-15);
    }

    #[test]
    fn adaptive_resolves_sharp_peak() {
        // ∫_{-1}^{1} c/(c^2 + t^2) dt = 2 atan(1/c)
        let c = 1e-6;
        let f = |t: f64| c / (c * c + t * t);
        let r = integrate_adaptive(&f, -1.0, 1.0, 16, 1e-12).unwrap();
        let exact = 2.0 * (1.0 / c).atan();
        assert!((r.value - exact).abs() <= 1e-10, "{} vs {}", r.value, exact);
        assert!(r.error_bound < 1e-10);
    }

    #[test]
    fn rejects_small_rules() {
        assert_eq!(
            integrate_adaptive(&|t| t, 0.0, 1.0, 8, 1e-12),
            Err(QuadratureError::TooFewNodes(8))
        );
    }

    #[test]
    fn nonintegrable_singularity_hits_depth_limit() {
        let f = |t: f64| 1.0 / (t - 0.3).abs();
        let r = integrate_adaptive(&f, 0.0, 1.0, 16, 1e-12);
        assert!(matches!(r, Err(QuadratureError::NonConvergence { .. })));
    }
}
