//! Multi-dimensional FFTs on `N^n` row-major grids.
//!
//! Coefficients are normalized as `c_k = (1/N^n) Σ_x f(x) e^{−2πik·x}`, so
//! `f(x) = Σ_k c_k e^{2πik·x}` and the grid mean of `|f|²` equals `Σ|c_k|²`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::PeriodicGrid;

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans(n: usize) -> Arc<Plans> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Plans>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("fft plan cache poisoned");
    map.entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(Plans { forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) })
        })
        .clone()
}

fn transform_axes(grid: &PeriodicGrid, data: &mut [Complex64], forward: bool) {
    let n = grid.n;
    let plans = plans(n);
    let fft = if forward { &plans.forward } else { &plans.inverse };
    let total = grid.nodes();
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for axis in 0..grid.dim {
        let stride = n.pow((grid.dim - 1 - axis) as u32);
        if stride == 1 {
            for chunk in data.chunks_exact_mut(n) {
                fft.process_with_scratch(chunk, &mut scratch);
            }
            continue;
        }
        let block = stride * n;
        for base in (0..total).step_by(block) {
            for off in 0..stride {
                let start = base + off;
                for (i, v) in line.iter_mut().enumerate() {
                    *v = data[start + i * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (i, v) in line.iter().enumerate() {
                    data[start + i * stride] = *v;
                }
            }
        }
    }
}

/// Normalized forward transform of real samples.
pub fn forward(grid: &PeriodicGrid, values: &[f64]) -> Vec<Complex64> {
    assert_eq!(values.len(), grid.nodes());
    let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_axes(grid, &mut data, true);
    let scale = 1.0 / grid.nodes() as f64;
    data.iter_mut().for_each(|c| *c *= scale);
    data
}

/// Inverse transform; returns the real part (exact for Hermitian input).
pub fn inverse(grid: &PeriodicGrid, coeffs: &[Complex64]) -> Vec<f64> {
    inverse_complex(grid, coeffs).into_iter().map(|c| c.re).collect()
}

pub fn inverse_complex(grid: &PeriodicGrid, coeffs: &[Complex64]) -> Vec<Complex64> {
    assert_eq!(coeffs.len(), grid.nodes());
    let mut data = coeffs.to_vec();
    transform_axes(grid, &mut data, false);
    data
}

/// Signed wave number of FFT index `j`; the Nyquist index maps to `+N/2`.
#[inline]
pub fn signed_wavenumber(j: usize, n: usize) -> i64 {
    if j <= n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Wave number used by derivatives: as [`signed_wavenumber`] but 0 at Nyquist,
/// so that derivatives of real fields stay real.
#[inline]
pub fn derivative_wavenumber(j: usize, n: usize) -> i64 {
    if 2 * j == n {
        0
    } else {
        signed_wavenumber(j, n)
    }
}

/// Integer wave vector of every flat mode index.
pub fn wave_vectors(grid: &PeriodicGrid) -> Vec<[i64; 3]> {
    (0..grid.nodes())
        .map(|flat| {
            let idx = grid.multi_index(flat);
            let mut k = [0i64; 3];
            for a in 0..grid.dim {
                k[a] = signed_wavenumber(idx[a], grid.n);
            }
            k
        })
        .collect()
}

/// `2π k̃` for every flat mode index, with `k̃` the derivative wave number.
pub fn derivative_factors(grid: &PeriodicGrid) -> Vec<[f64; 3]> {
    (0..grid.nodes())
        .map(|flat| {
            let idx = grid.multi_index(flat);
            let mut k = [0.0; 3];
            for a in 0..grid.dim {
                k[a] = 2.0 * PI * derivative_wavenumber(idx[a], grid.n) as f64;
            }
            k
        })
        .collect()
}

/// `max_i |k_i|` for every flat mode index.
pub fn band_index(grid: &PeriodicGrid) -> Vec<u64> {
    wave_vectors(grid).iter().map(|k| k[..grid.dim].iter().map(|v| v.unsigned_abs()).max().unwrap_or(0)).collect()
}

/// Flat index of the mode `−k`.
pub fn conjugate_index(grid: &PeriodicGrid, flat: usize) -> usize {
    let idx = grid.multi_index(flat);
    let mut out = [0usize; 3];
    for a in 0..grid.dim {
        out[a] = (grid.n - idx[a]) % grid.n;
    }
    grid.flat_index(&out)
}

/// Spectral resampling to a grid with `m` points per axis. Modes beyond the
/// new Nyquist limit are dropped; a Nyquist mode of the source is split
/// evenly between `±N/2` when refining.
pub fn resample(src: &PeriodicGrid, coeffs: &[Complex64], dst: &PeriodicGrid) -> Vec<Complex64> {
    assert_eq!(src.dim, dst.dim);
    let mut out = vec![Complex64::new(0.0, 0.0); dst.nodes()];
    let (n, m) = (src.n, dst.n);
    for (flat, c) in coeffs.iter().enumerate() {
        if c.norm_sqr() == 0.0 {
            continue;
        }
        let idx = src.multi_index(flat);
        // Each axis maps to one or two destination indices with weights.
        let mut targets: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 1.0)];
        let mut keep = true;
        for &j in &idx[..src.dim] {
            let k = signed_wavenumber(j, n);
            let nyquist_src = 2 * j == n;
            let mut options: Vec<(usize, f64)> = Vec::new();
            if nyquist_src && m > n {
                let half = (n / 2) as i64;
                options.push((half as usize, 0.5));
                options.push(((m as i64 - half) as usize, 0.5));
            } else if 2 * k.unsigned_abs() < m as u64 || (2 * k.unsigned_abs() == m as u64 && m == n) {
                options.push((((k % m as i64) + m as i64) as usize % m, 1.0));
            } else {
                keep = false;
                break;
            }
            let mut next = Vec::new();
            for (t, w) in &targets {
                for (o, ow) in &options {
                    let mut t2 = t.clone();
                    t2.push(*o);
                    next.push((t2, w * ow));
                }
            }
            targets = next;
        }
        if !keep {
            continue;
        }
        for (t, w) in targets {
            let mut arr = [0usize; 3];
            arr[..t.len()].copy_from_slice(&t);
            out[dst.flat_index(&arr)] += c * w;
        }
    }
    out
}
