//! Multi-dimensional FFTs over row-major periodic arrays and the wavenumber
//! conventions shared by every spectral operator in the crate.
//!
//! Grids sample `[0, 1)` in every periodic direction, so `∂/∂x ↔ 2πi·k`.
//! The Nyquist wavenumber is mapped to zero for *every* derivative order:
//! differentiation acts on the Nyquist-filtered trigonometric interpolant.
//! This keeps the symbol of the complex Hessian exactly rank one
//! (`|σ_zs̄|² = σ_zz̄·σ_ss̄`), which makes discrete Stokes-type identities
//! (vanishing integrals of `∂∂̄φ`, mass conservation of `(ω + i∂∂̄φ)²`)
//! hold to round-off.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

/// Signed integer wavenumber of index `j` on an `n`-point periodic axis, with
/// the Nyquist mode mapped to zero.
#[inline]
pub fn wavenumber(j: usize, n: usize) -> f64 {
    if 2 * j < n {
        j as f64
    } else if 2 * j == n {
        0.0
    } else {
        j as f64 - n as f64
    }
}

pub fn wavenumbers(n: usize) -> Vec<f64> {
    (0..n).map(|j| wavenumber(j, n)).collect()
}

/// Whether index `j` is the Nyquist mode of an `n`-point axis.
#[inline]
pub fn is_nyquist(j: usize, n: usize) -> bool {
    n % 2 == 0 && 2 * j == n
}

struct AxisPlan {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Row-major n-dimensional complex FFT. Inverse transforms are normalized.
pub struct FftNd {
    dims: Vec<usize>,
    plans: Vec<AxisPlan>,
    len: usize,
}

static PLAN_CACHE: OnceLock<Mutex<HashMap<Vec<usize>, Arc<FftNd>>>> = OnceLock::new();

#[derive(Clone, Copy, PartialEq, Eq)]
enum Direction {
    Forward,
    Inverse,
}

impl FftNd {
    pub fn new(dims: &[usize]) -> Self {
        let mut planner = FftPlanner::<f64>::new();
        let plans = dims
            .iter()
            .map(|&n| AxisPlan {
                forward: planner.plan_fft_forward(n),
                inverse: planner.plan_fft_inverse(n),
            })
            .collect();
        Self {
            dims: dims.to_vec(),
            plans,
            len: dims.iter().product(),
        }
    }

    /// Process-wide cached plan for the given shape.
    pub fn shared(dims: &[usize]) -> Arc<FftNd> {
        let cache = PLAN_CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("fft plan cache poisoned");
        guard
            .entry(dims.to_vec())
            .or_insert_with(|| Arc::new(FftNd::new(dims)))
            .clone()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        for axis in 0..self.dims.len() {
            self.transform_axis(axis, data, Direction::Forward);
        }
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        for axis in 0..self.dims.len() {
            self.transform_axis(axis, data, Direction::Inverse);
        }
        let scale = 1.0 / self.len as f64;
        data.iter_mut().for_each(|v| *v *= scale);
    }

    /// Forward transform along a subset of axes only.
    pub fn forward_axes(&self, axes: &[usize], data: &mut [Complex64]) {
        for &axis in axes {
            self.transform_axis(axis, data, Direction::Forward);
        }
    }

    /// Normalized inverse transform along a subset of axes only.
    pub fn inverse_axes(&self, axes: &[usize], data: &mut [Complex64]) {
        let mut count = 1usize;
        for &axis in axes {
            self.transform_axis(axis, data, Direction::Inverse);
            count *= self.dims[axis];
        }
        let scale = 1.0 / count as f64;
        data.iter_mut().for_each(|v| *v *= scale);
    }

    fn transform_axis(&self, axis: usize, data: &mut [Complex64], dir: Direction) {
        assert_eq!(data.len(), self.len, "fft buffer length mismatch");
        let n = self.dims[axis];
        if n == 1 {
            return;
        }
        let inner: usize = self.dims[axis + 1..].iter().product();
        let fft = match dir {
            Direction::Forward => &self.plans[axis].forward,
            Direction::Inverse => &self.plans[axis].inverse,
        };
        let scratch_len = fft.get_inplace_scratch_len();
        if inner == 1 {
            // contiguous lines: hand batches of whole lines to rustfft
            let batch = n * (4096 / n).max(1);
            data.par_chunks_mut(batch).for_each_init(
                || vec![Complex64::new(0.0, 0.0); scratch_len],
                |scratch, chunk| fft.process_with_scratch(chunk, scratch),
            );
            return;
        }
        let block = n * inner;
        data.par_chunks_mut(block).for_each_init(
            || {
                (
                    vec![Complex64::new(0.0, 0.0); block],
                    vec![Complex64::new(0.0, 0.0); scratch_len],
                )
            },
            |(tmp, scratch), chunk| {
                for k in 0..n {
                    for i in 0..inner {
                        tmp[i * n + k] = chunk[k * inner + i];
                    }
                }
                fft.process_with_scratch(tmp, scratch);
                for k in 0..n {
                    for i in 0..inner {
                        chunk[k * inner + i] = tmp[i * n + k];
                    }
                }
            },
        );
    }
}

pub fn to_complex(values: &[f64]) -> Vec<Complex64> {
    values.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}
