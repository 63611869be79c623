//! Restarted GMRES with right preconditioning.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GmresOptions {
    pub rel_tol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

impl Default for GmresOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            restart: 40,
            max_iter: 400,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GmresReport {
    pub iterations: usize,
    pub rel_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solve `A x = b` starting from `x`. `apply` computes `A v`, `precond`
/// computes `M⁻¹ v`. Returns an error only if the residual never drops
/// below `max(rel_tol, 1e-3)`; a looser final residual is reported.
pub fn gmres(
    apply: &mut dyn FnMut(&[f64], &mut [f64]),
    precond: &mut dyn FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    opts: GmresOptions,
) -> Result<GmresReport> {
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(GmresReport {
            iterations: 0,
            rel_residual: 0.0,
        });
    }
    let m = opts.restart.max(1);
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut total = 0;
    let mut rel;
    loop {
        apply(x, &mut w);
        for i in 0..n {
            r[i] = b[i] - w[i];
        }
        let beta = norm(&r);
        rel = beta / bnorm;
        if rel <= opts.rel_tol || total >= opts.max_iter {
            break;
        }
        let mut v: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        v.push(r.iter().map(|t| t / beta).collect());
        let mut zs: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut h = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            precond(&v[k], &mut z);
            apply(&z, &mut w);
            zs.push(z.clone());
            for j in 0..=k {
                h[j][k] = dot(&w, &v[j]);
                for i in 0..n {
                    w[i] -= h[j][k] * v[j][i];
                }
            }
            // second pass for orthogonality
            for j in 0..=k {
                let c = dot(&w, &v[j]);
                h[j][k] += c;
                for i in 0..n {
                    w[i] -= c * v[j][i];
                }
            }
            h[k + 1][k] = norm(&w);
            for j in 0..k {
                let t = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = t;
            }
            let den = h[k][k].hypot(h[k + 1][k]);
            if den == 0.0 {
                cs[k] = 1.0;
                sn[k] = 0.0;
            } else {
                cs[k] = h[k][k] / den;
                sn[k] = h[k + 1][k] / den;
            }
            h[k][k] = den;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            total += 1;
            let res = g[k + 1].abs() / bnorm;
            let wn = norm(&w);
            if res <= opts.rel_tol || total >= opts.max_iter || den == 0.0 || wn < 1e-300 {
                break;
            }
            v.push(w.iter().map(|t| t / wn).collect());
        }
        // back substitution
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[i][j] * y[j];
            }
            y[i] = if h[i][i] != 0.0 { s / h[i][i] } else { 0.0 };
        }
        for (j, yj) in y.iter().enumerate() {
            for i in 0..n {
                x[i] += yj * zs[j][i];
            }
        }
    }
    if !(rel <= opts.rel_tol.max(1e-3)) {
        return Err(Error::LinearSolver(rel));
    }
    Ok(GmresReport {
        iterations: total,
        rel_residual: rel,
    })
}
