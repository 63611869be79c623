//! Fourth-order finite differences on a uniform non-periodic axis, with
//! one-sided six-point closures at the two ends.

/// Stencil for `f''` at row `i` of an `n`-point axis: first index and the
/// coefficients (already scaled by `1/(12h²)`).
pub fn second_derivative_stencil(i: usize, n: usize, h: f64) -> (usize, [f64; 6], usize) {
    debug_assert!(n >= 6);
    let s = 1.0 / (12.0 * h * h);
    let scale = |c: [f64; 6]| c.map(|v| v * s);
    if i == 0 {
        (0, scale([45.0, -154.0, 214.0, -156.0, 61.0, -10.0]), 6)
    } else if i == 1 {
        (0, scale([10.0, -15.0, -4.0, 14.0, -6.0, 1.0]), 6)
    } else if i == n - 2 {
        (n - 6, scale([1.0, -6.0, 14.0, -4.0, -15.0, 10.0]), 6)
    } else if i == n - 1 {
        (n - 6, scale([-10.0, 61.0, -156.0, 214.0, -154.0, 45.0]), 6)
    } else {
        (i - 2, scale([-1.0, 16.0, -30.0, 16.0, -1.0, 0.0]), 5)
    }
}

/// Stencil for `f'` at row `i`, same layout as [`second_derivative_stencil`].
pub fn first_derivative_stencil(i: usize, n: usize, h: f64) -> (usize, [f64; 6], usize) {
    debug_assert!(n >= 6);
    let s = 1.0 / (12.0 * h);
    let scale = |c: [f64; 6]| c.map(|v| v * s);
    if i == 0 {
        (0, scale([-25.0, 48.0, -36.0, 16.0, -3.0, 0.0]), 5)
    } else if i == 1 {
        (0, scale([-3.0, -10.0, 18.0, -6.0, 1.0, 0.0]), 5)
    } else if i == n - 2 {
        (n - 5, scale([-1.0, 6.0, -18.0, 10.0, 3.0, 0.0]), 5)
    } else if i == n - 1 {
        (n - 5, scale([3.0, -16.0, 36.0, -48.0, 25.0, 0.0]), 5)
    } else {
        (i - 2, scale([1.0, -8.0, 0.0, 8.0, -1.0, 0.0]), 5)
    }
}

/// Apply a stencil family to a strided column: `out[i] = Σ c_k f[start + k]`.
pub fn apply_column(
    f: &[f64],
    offset: usize,
    stride: usize,
    n: usize,
    h: f64,
    stencil: fn(usize, usize, f64) -> (usize, [f64; 6], usize),
    out: &mut [f64],
) {
    for i in 0..n {
        let (start, c, len) = stencil(i, n, h);
        let mut acc = 0.0;
        for k in 0..len {
            acc += c[k] * f[offset + (start + k) * stride];
        }
        out[offset + i * stride] = acc;
    }
}
