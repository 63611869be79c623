//! Family solver against a dense Newton solve built from explicit real-space
//! differentiation matrices and an LU factorization.

use krflow::k3::{geometric_schedule, solve_leg, synthetic_family, VolumePerturbation};
use krflow::{Grid, ScalarField};
use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

const N: usize = 8;
const LEN: usize = N * N * N * N;

/// Real-space matrices of `d/dx` and `d²/dx²` on `N` periodic points with the
/// Nyquist term dropped from the trigonometric sums.
fn axis_matrices() -> (Vec<f64>, Vec<f64>) {
    let mut d1 = vec![0.0; N * N];
    let mut d2 = vec![0.0; N * N];
    for j in 0..N {
        for l in 0..N {
            let dx = (j as f64 - l as f64) / N as f64;
            for k in 1..N / 2 {
                let w = 2.0 * PI * k as f64;
                // the ±k pair combined
                d1[j * N + l] += -2.0 * w * (w * dx).sin() / N as f64;
                d2[j * N + l] += -2.0 * w * w * (w * dx).cos() / N as f64;
            }
        }
    }
    (d1, d2)
}

fn split(idx: usize) -> [usize; 4] {
    [
        idx / (N * N * N),
        (idx / (N * N)) % N,
        (idx / N) % N,
        idx % N,
    ]
}

fn apply_axis(m: &[f64], axis: usize, v: &[f64]) -> Vec<f64> {
    let stride = N.pow(3 - axis as u32);
    let mut out = vec![0.0; LEN];
    for (idx, o) in out.iter_mut().enumerate() {
        let i = split(idx)[axis];
        let base = idx - i * stride;
        *o = (0..N).map(|l| m[i * N + l] * v[base + l * stride]).sum();
    }
    out
}

struct Oracle {
    d1: Vec<f64>,
    d2: Vec<f64>,
    volume: Vec<f64>,
    t: f64,
}

/// `(g_zz̄, g_ss̄, Re g_zs̄, Im g_zs̄)` of `ω_t + i∂∂̄φ` for the flat family
/// (`χ = 1`, `ω₁ = ½ i dz∧dz̄`).
fn metric(o: &Oracle, phi: &[f64]) -> Vec<[f64; 4]> {
    let a = |m: &[f64], ax: usize, v: &[f64]| apply_axis(m, ax, v);
    let d11 = a(&o.d2, 0, phi);
    let d22 = a(&o.d2, 1, phi);
    let d33 = a(&o.d2, 2, phi);
    let d44 = a(&o.d2, 3, phi);
    let p1 = a(&o.d1, 0, phi);
    let p2 = a(&o.d1, 1, phi);
    let d31 = a(&o.d1, 2, &p1);
    let d42 = a(&o.d1, 3, &p2);
    let d32 = a(&o.d1, 2, &p2);
    let d41 = a(&o.d1, 3, &p1);
    (0..LEN)
        .map(|i| {
            [
                0.5 * o.t + (d33[i] + d44[i]) / 4.0,
                1.0 + (d11[i] + d22[i]) / 4.0,
                (d31[i] + d42[i]) / 4.0,
                (d32[i] - d41[i]) / 4.0,
            ]
        })
        .collect()
}

fn det(g: &[f64; 4]) -> f64 {
    g[0] * g[1] - g[2] * g[2] - g[3] * g[3]
}

fn corner_sign(idx: usize, p: usize) -> f64 {
    let i = split(idx);
    let odd: usize = (0..4).filter(|a| p >> a & 1 == 1).map(|a| i[a]).sum();
    if odd % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `Π⊥ R(φ) + Π_K φ`.
fn system(o: &Oracle, phi: &[f64]) -> Vec<f64> {
    let c_t = 2.0 * 0.5 * o.t; // 2 det ω_t with unit-mass Ω
    let g = metric(o, phi);
    let mut r: Vec<f64> = (0..LEN)
        .map(|i| (2.0 * det(&g[i])).ln() - (c_t * o.volume[i]).ln())
        .collect();
    for p in 0..16 {
        let cr: f64 = (0..LEN).map(|i| corner_sign(i, p) * r[i]).sum::<f64>() / LEN as f64;
        let cp: f64 = (0..LEN).map(|i| corner_sign(i, p) * phi[i]).sum::<f64>() / LEN as f64;
        for (i, v) in r.iter_mut().enumerate() {
            *v += (cp - cr) * corner_sign(i, p);
        }
    }
    r
}

fn jacobian(o: &Oracle, phi: &[f64]) -> DMatrix<f64> {
    let g = metric(o, phi);
    let (d1, d2) = (&o.d1, &o.d2);
    let mut j = DMatrix::<f64>::zeros(LEN, LEN);
    for row in 0..LEN {
        let i = split(row);
        let gi = g[row];
        let dt = det(&gi);
        for col in 0..LEN {
            let l = split(col);
            let e = |a: usize| i[a] == l[a];
            let m1 = |a: usize| d1[i[a] * N + l[a]];
            let m2 = |a: usize| d2[i[a] * N + l[a]];
            let mut zz = 0.0;
            let mut ss = 0.0;
            if e(0) && e(1) {
                zz = ((if e(3) { m2(2) } else { 0.0 }) + (if e(2) { m2(3) } else { 0.0 })) / 4.0;
            }
            if e(2) && e(3) {
                ss = ((if e(1) { m2(0) } else { 0.0 }) + (if e(0) { m2(1) } else { 0.0 })) / 4.0;
            }
            let re = ((if e(1) && e(3) { m1(2) * m1(0) } else { 0.0 })
                + (if e(0) && e(2) { m1(3) * m1(1) } else { 0.0 }))
                / 4.0;
            let im = ((if e(0) && e(3) { m1(2) * m1(1) } else { 0.0 })
                - (if e(1) && e(2) { m1(3) * m1(0) } else { 0.0 }))
                / 4.0;
            j[(row, col)] = (gi[1] * zz + gi[0] * ss - 2.0 * (gi[2] * re + gi[3] * im)) / dt;
        }
    }
    // Π⊥ J + Π_K
    for p in 0..16 {
        let v: Vec<f64> = (0..LEN).map(|i| corner_sign(i, p)).collect();
        let mut u = vec![0.0; LEN];
        for row in 0..LEN {
            for (col, uc) in u.iter_mut().enumerate() {
                *uc += v[row] * j[(row, col)];
            }
        }
        for row in 0..LEN {
            for col in 0..LEN {
                j[(row, col)] += v[row] * (v[col] - u[col]) / LEN as f64;
            }
        }
    }
    j
}

/// Chord Newton, refactoring once.
fn dense_solve(o: &Oracle) -> Vec<f64> {
    let mut phi = vec![0.0; LEN];
    for refactor in 0..2 {
        let lu = jacobian(o, &phi).lu();
        for _ in 0..40 {
            let f = system(o, &phi);
            let res = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if res < 1e-14 {
                break;
            }
            let delta = lu
                .solve(&DVector::from_vec(f))
                .expect("nonsingular oracle Jacobian");
            for (p, d) in phi.iter_mut().zip(delta.iter()) {
                *p -= d;
            }
        }
        if refactor == 1 {
            break;
        }
    }
    let shift: f64 = phi.iter().zip(&o.volume).map(|(a, b)| a * b).sum::<f64>() / LEN as f64;
    phi.iter().map(|v| v - shift).collect()
}

fn compare(pert: VolumePerturbation) -> f64 {
    let problem = synthetic_family(N, N, pert, geometric_schedule(0.5, 1).unwrap()).unwrap();
    let (d1, d2) = axis_matrices();
    let o = Oracle {
        d1,
        d2,
        volume: problem.volume.values.clone(),
        t: 1.0,
    };
    let dense = dense_solve(&o);
    let leg = solve_leg(
        &problem,
        1.0,
        &ScalarField::zeros(Grid::Total(problem.grid)),
    )
    .unwrap();
    assert!(
        leg.phi.sup_abs() > 1e-3,
        "the perturbed solution is not trivial"
    );
    leg.phi
        .values
        .iter()
        .zip(&dense)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
}

#[test]
fn base_perturbation_matches_dense_newton() {
    let err = compare(VolumePerturbation {
        base: 0.2,
        fiber: 0.0,
    });
    assert!(err < 1e-9, "sup error {err:e}");
}

#[test]
fn coupled_perturbation_matches_dense_newton() {
    let err = compare(VolumePerturbation {
        base: 0.2,
        fiber: 0.2,
    });
    assert!(err < 1e-9, "sup error {err:e}");
}
