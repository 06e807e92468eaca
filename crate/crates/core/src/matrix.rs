//! Small dense square matrices (n ≤ 3) with the Frobenius inner product.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

pub const MAX_DIM: usize = 3;

/// An `n × n` real matrix stored row-major in a fixed 3×3 buffer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    n: usize,
    #[serde(with = "entries")]
    a: [f64; MAX_DIM * MAX_DIM],
}

mod entries {
    use super::MAX_DIM;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(a: &[f64; MAX_DIM * MAX_DIM], s: S) -> Result<S::Ok, S::Error> {
        a.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; MAX_DIM * MAX_DIM], D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        let mut a = [0.0; MAX_DIM * MAX_DIM];
        if v.len() != a.len() {
            return Err(serde::de::Error::invalid_length(v.len(), &"9 entries"));
        }
        a.copy_from_slice(&v);
        Ok(a)
    }
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&n), "matrix dimension must be 1..=3");
        Self { n, a: [0.0; MAX_DIM * MAX_DIM] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds a matrix from row-major entries; `rows.len()` must be `n*n`.
    pub fn from_row_major(n: usize, rows: &[f64]) -> Self {
        assert_eq!(rows.len(), n * n);
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, rows[i * n + j]);
            }
        }
        m
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// `a ⊗ b`, i.e. entries `a_i b_j`.
    pub fn outer(a: &[f64], b: &[f64]) -> Self {
        assert_eq!(a.len(), b.len());
        Self::from_fn(a.len(), |i, j| a[i] * b[j])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * MAX_DIM + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * MAX_DIM + j] = v;
    }

    pub fn row_major(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n * self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                v.push(self.get(i, j));
            }
        }
        v
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self.get(j, i))
    }

    /// `(A + Aᵗ)/2`
    pub fn sym(&self) -> Self {
        Self::from_fn(self.n, |i, j| 0.5 * (self.get(i, j) + self.get(j, i)))
    }

    /// `(A − Aᵗ)/2`
    pub fn antisym(&self) -> Self {
        Self::from_fn(self.n, |i, j| 0.5 * (self.get(i, j) - self.get(j, i)))
    }

    /// Frobenius inner product `A : B`.
    #[inline]
    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.n, other.n);
        self.a.iter().zip(&other.a).map(|(x, y)| x * y).sum()
    }

    #[inline]
    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.antisym().norm() <= tol * (1.0 + self.norm())
    }

    pub fn det(&self) -> f64 {
        let g = |i, j| self.get(i, j);
        match self.n {
            1 => g(0, 0),
            2 => g(0, 0) * g(1, 1) - g(0, 1) * g(1, 0),
            3 => {
                g(0, 0) * (g(1, 1) * g(2, 2) - g(1, 2) * g(2, 1))
                    - g(0, 1) * (g(1, 0) * g(2, 2) - g(1, 2) * g(2, 0))
                    + g(0, 2) * (g(1, 0) * g(2, 1) - g(1, 1) * g(2, 0))
            }
            _ => unreachable!(),
        }
    }

    /// Cofactor matrix, the derivative of `det` with respect to the entries.
    pub fn cofactor(&self) -> Self {
        let g = |i, j| self.get(i, j);
        match self.n {
            1 => Self::identity(1),
            2 => Self::from_row_major(2, &[g(1, 1), -g(1, 0), -g(0, 1), g(0, 0)]),
            3 => Self::from_fn(3, |i, j| {
                let (r0, r1) = others(i);
                let (c0, c1) = others(j);
                let minor = g(r0, c0) * g(r1, c1) - g(r0, c1) * g(r1, c0);
                if (i + j) % 2 == 0 {
                    minor
                } else {
                    -minor
                }
            }),
            _ => unreachable!(),
        }
    }

    /// Symmetric eigenvalues via Jacobi rotations (input is symmetrised first).
    pub fn sym_eigenvalues(&self) -> Vec<f64> {
        let n = self.n;
        let mut m = self.sym();
        for _ in 0..64 {
            let mut off = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += m.get(i, j).powi(2);
                }
            }
            if off < 1e-30 * (1.0 + m.norm_sq()) {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = m.get(p, q);
                    if apq == 0.0 {
                        continue;
                    }
                    let theta = 0.5 * (m.get(q, q) - m.get(p, p)) / apq;
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    let mut r = Self::identity(n);
                    r.set(p, p, c);
                    r.set(q, q, c);
                    r.set(p, q, s);
                    r.set(q, p, -s);
                    m = r.transpose().matmul(&m).matmul(&r);
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    pub fn matmul(&self, other: &Self) -> Self {
        Self::from_fn(self.n, |i, j| (0..self.n).map(|k| self.get(i, k) * other.get(k, j)).sum())
    }

    /// Number of independent entries of a general `n × n` matrix.
    pub fn entries(n: usize) -> usize {
        n * n
    }
}

fn others(i: usize) -> (usize, usize) {
    match i {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

impl Add for Matrix {
    type Output = Matrix;
    fn add(mut self, rhs: Matrix) -> Matrix {
        self += rhs;
        self
    }
}

impl AddAssign for Matrix {
    fn add_assign(&mut self, rhs: Matrix) {
        debug_assert_eq!(self.n, rhs.n);
        for (x, y) in self.a.iter_mut().zip(rhs.a) {
            *x += y;
        }
    }
}

impl Sub for Matrix {
    type Output = Matrix;
    fn sub(mut self, rhs: Matrix) -> Matrix {
        debug_assert_eq!(self.n, rhs.n);
        for (x, y) in self.a.iter_mut().zip(rhs.a) {
            *x -= y;
        }
        self
    }
}

impl Mul<Matrix> for f64 {
    type Output = Matrix;
    fn mul(self, mut rhs: Matrix) -> Matrix {
        for x in rhs.a.iter_mut() {
            *x *= self;
        }
        rhs
    }
}

impl Neg for Matrix {
    type Output = Matrix;
    fn neg(self) -> Matrix {
        -1.0 * self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sym_antisym_split_single_entry() {
        let m = Matrix::from_row_major(2, &[0.0, 1.0, 0.0, 0.0]);
        let s = m.sym();
        let a = m.antisym();
        assert_eq!(s.get(0, 1), 0.5);
        assert_eq!(s.get(1, 0), 0.5);
        assert_eq!(a.get(0, 1), 0.5);
        assert_eq!(a.get(1, 0), -0.5);
        assert_eq!(s + a, m);
        assert_abs_diff_eq!(m.norm_sq(), s.norm_sq() + a.norm_sq(), epsilon = 1e-15);
    }

    #[test]
    fn cofactor_is_derivative_of_det() {
        for n in [2, 3] {
            let m = Matrix::from_fn(n, |i, j| 0.3 + (i * 3 + j) as f64 * 0.17 - (i as f64) * (j as f64) * 0.4);
            let cof = m.cofactor();
            let h = 1e-6;
            for i in 0..n {
                for j in 0..n {
                    let mut p = m;
                    p.set(i, j, m.get(i, j) + h);
                    let mut q = m;
                    q.set(i, j, m.get(i, j) - h);
                    let fd = (p.det() - q.det()) / (2.0 * h);
                    assert_abs_diff_eq!(fd, cof.get(i, j), epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn eigenvalues_of_diagonal_and_rotated() {
        let m = Matrix::from_row_major(2, &[2.0, 1.0, 1.0, 2.0]);
        let ev = m.sym_eigenvalues();
        assert_abs_diff_eq!(ev[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ev[1], 3.0, epsilon = 1e-12);
        let m3 = Matrix::from_row_major(3, &[4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0]);
        let ev3 = m3.sym_eigenvalues();
        assert_abs_diff_eq!(ev3.iter().sum::<f64>(), 9.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ev3.iter().product::<f64>(), m3.det(), epsilon = 1e-10);
    }
}
