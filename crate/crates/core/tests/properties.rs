//! Property tests for the structural invariants of the core crate.

use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;

use krflow::fibration::{consistent_density, delta_invariant, section_field};
use krflow::gke::{mean_identity, path_schedule};
use krflow::grid::laplacian;
use krflow::k3::geometric_schedule;
use krflow::wp::wp_form;
use krflow::{
    complex_hessian, integrate, poisson_solve, solve_gke, trace_pair, BaseGrid, DensityField,
    FibrationConfig, GkeProblem, Grid, Herm2, HermitianField, Lambda, MultipleFiber, ScalarField,
    TotalGrid,
};

type Mode = (i32, i32, f64, f64);

/// A few low Fourier modes with bounded amplitude.
fn modes(max: f64) -> impl Strategy<Value = Vec<Mode>> {
    prop::collection::vec((-3i32..=3, -3i32..=3, -max..max, -max..max), 1..5)
}

fn band_limited(g: &BaseGrid, modes: &[Mode]) -> ScalarField {
    g.sample(|x, y| {
        modes
            .iter()
            .map(|&(k1, k2, a, b)| {
                let arg = 2.0 * PI * (k1 as f64 * x + k2 as f64 * y);
                a * arg.cos() + b * arg.sin()
            })
            .sum()
    })
}

fn herm2() -> impl Strategy<Value = Herm2> {
    (0.1f64..10.0, 0.1f64..10.0, -1.0f64..1.0, -1.0f64..1.0).prop_map(|(a, d, re, im)| {
        // scale the off-diagonal inside the positive cone
        let r = 0.9 * (a * d).sqrt() / (re * re + im * im).sqrt().max(1.0);
        Herm2 {
            zz: a,
            ss: d,
            zs: Complex64::new(re * r, im * r),
        }
    })
}

fn flat(g: BaseGrid) -> HermitianField {
    HermitianField::base_form(&ScalarField::constant(Grid::Base(g), 1.0)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn herm2_algebra(g in herm2()) {
        let (lo, hi) = (g.min_eigenvalue(), g.max_eigenvalue());
        prop_assert!(lo > 0.0 && lo <= hi);
        let scale = g.zz.max(g.ss);
        prop_assert!((lo * hi - g.det()).abs() <= 1e-12 * scale * scale);
        prop_assert!((lo + hi - g.zz - g.ss).abs() <= 1e-12 * scale);
        prop_assert!((g.trace_of(&g) - 2.0).abs() <= 1e-12);
        // g·g⁻¹ = I in the layout [[zz, zs], [conj(zs), ss]]
        let inv = g.inverse();
        let top_left = g.zz * inv.zz + (g.zs * inv.zs.conj()).re;
        let off = g.zz * inv.zs + g.zs * inv.ss;
        prop_assert!((top_left - 1.0).abs() <= 1e-12);
        prop_assert!(off.norm() <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn trace_pair_of_a_metric_with_itself_is_the_dimension(m in modes(0.02)) {
        let g = BaseGrid::torus(16, 16).unwrap();
        let omega = flat(g).add(&complex_hessian(&band_limited(&g, &m)).unwrap()).unwrap();
        prop_assume!(omega.min_eigenvalue().0 > 0.0);
        let tr = trace_pair(&omega, &omega).unwrap();
        prop_assert!(tr.values.iter().all(|&v| (v - 1.0).abs() <= 1e-14));
    }

    #[test]
    fn poisson_inverts_the_laplacian(m in modes(1.0)) {
        let g = BaseGrid::torus(16, 16).unwrap();
        let f = band_limited(&g, &m);
        let psi = poisson_solve(&laplacian(&f).unwrap()).unwrap().psi;
        let mean = f.mean();
        let err = psi.values.iter().zip(&f.values).fold(0.0f64, |e, (p, v)| e.max((p - (v - mean)).abs()));
        prop_assert!(err <= 1e-12 * (1.0 + f.sup_abs()), "error {err}");
    }

    #[test]
    fn integrate_is_linear_and_positive(a in modes(1.0), b in modes(1.0), s in -3.0f64..3.0) {
        let g = BaseGrid::torus(16, 16).unwrap();
        let (fa, fb) = (band_limited(&g, &a), band_limited(&g, &b));
        let comb = fa.zip_map(&fb, |x, y| x + s * y).unwrap();
        let lhs = integrate(&comb);
        let rhs = integrate(&fa) + s * integrate(&fb);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + fa.sup_abs() + s.abs() * fb.sup_abs()));
        prop_assert!(integrate(&fa.map(f64::abs)) >= 0.0);
    }

    #[test]
    fn fiber_integral_of_a_hessian_vanishes(m in modes(1.0), f in modes(1.0)) {
        let tg = TotalGrid::new(BaseGrid::torus(8, 8).unwrap(), 8, 8).unwrap();
        let phi = tg.sample(|x| {
            let base: f64 = m.iter().map(|&(k1, k2, a, _)| a * (2.0 * PI * (k1 as f64 * x[0] + k2 as f64 * x[1])).cos()).sum();
            let fiber: f64 = f.iter().map(|&(k1, k2, a, b)| {
                let arg = 2.0 * PI * (k1 as f64 * x[2] + k2 as f64 * x[3]);
                a * arg.cos() + b * arg.sin()
            }).sum();
            base * (1.0 + fiber) + fiber
        });
        let h = complex_hessian(&phi).unwrap();
        let avg = h.zz_field().fiber_mean().unwrap();
        prop_assert!(avg.sup_abs() <= 1e-10, "fiber mean {}", avg.sup_abs());
    }

    #[test]
    fn delta_is_additive(chi in -3i64..3, genus in 0u32..3, ms in prop::collection::vec(1u32..7, 0..5), extra in 1u32..7) {
        let base = delta_invariant(chi, genus, &ms).unwrap().delta;
        let mut more = ms.clone();
        more.push(extra);
        let with = delta_invariant(chi, genus, &more).unwrap().delta;
        prop_assert_eq!(with - base, num_rational::Ratio::new(extra as i64 - 1, extra as i64));
    }

    // σ is increasing and its argument d²/ε² falls as ε grows, so widening the
    // smoothing scale can only lower |S|²
    #[test]
    fn section_is_monotone_in_eps(x in 0.0f64..1.0, y in 0.0f64..1.0, e1 in 0.05f64..0.3, de in 0.0f64..0.3) {
        let g = BaseGrid::torus(16, 16).unwrap();
        let p = [Complex64::new(x, y)];
        let a = section_field(&p, &g, e1).unwrap();
        let b = section_field(&p, &g, e1 + de).unwrap();
        prop_assert!(a.values.values.iter().zip(&b.values.values).all(|(u, v)| u >= v));
    }

    #[test]
    fn wp_form_ignores_constant_rescaling(m in modes(0.3), c in 0.01f64..100.0) {
        let g = BaseGrid::torus(16, 16).unwrap();
        let y = band_limited(&g, &m).map(f64::exp);
        let a = wp_form(&y).unwrap();
        let b = wp_form(&y.map(|v| c * v)).unwrap();
        // log(cy) = log c + log y exactly up to one rounding per point
        let err = a.ss.iter().zip(&b.ss).fold(0.0f64, |e, (u, v)| e.max((u - v).abs()));
        prop_assert!(err <= 1e-9, "difference {err}");
    }

    #[test]
    fn consistent_density_is_normalized_and_positive(my in modes(0.2), mc in modes(0.2), m in 2u32..4) {
        let g = BaseGrid::torus(32, 32).unwrap();
        let y = band_limited(&g, &my).map(f64::exp);
        let c = band_limited(&g, &mc).map(|v| 2.0 * v.exp());
        let fibers = vec![MultipleFiber { point: Complex64::new(0.5, 0.5), m }];
        let cfg = FibrationConfig::synthetic(y, HermitianField::base_form(&c).unwrap(), 1.0, fibers, 0.3).unwrap();
        let cd = consistent_density(&cfg, &wp_form(&cfg.y_tau).unwrap()).unwrap();
        prop_assert!(cd.density.consistent);
        prop_assert!(cd.density.values.iter().all(|&v| v > 0.0));
        let chi = cd.chi.ss_field();
        let fchi = ScalarField { grid: chi.grid, values: chi.values.iter().zip(&cd.density.values).map(|(c, f)| c * f).collect() };
        let (a, b) = (integrate(&fchi), integrate(&chi));
        prop_assert!((a - b).abs() <= 1e-12 * b, "{a} vs {b}");
    }

    #[test]
    fn gke_solutions_satisfy_the_structural_identities(m in modes(0.3)) {
        let g = BaseGrid::torus(16, 16).unwrap();
        let f = band_limited(&g, &m).map(f64::exp);
        let p = GkeProblem::new(flat(g), DensityField::from_field(&f).unwrap(), Lambda::MinusOne).unwrap();
        let s = solve_gke(&p).unwrap();
        prop_assert!(s.omega.min_eigenvalue().0 > 0.0);
        prop_assert!(mean_identity(&s, &p).abs() <= 1e-10);
        prop_assert!(s.history.windows(2).all(|w| w[1] <= w[0]), "history {:?}", s.history);
    }

    #[test]
    fn poisson_variant_is_linear_in_the_forcing(m in modes(0.2)) {
        let g = BaseGrid::torus(16, 16).unwrap();
        let mut h = band_limited(&g, &m);
        let mean = h.mean();
        h.values.iter_mut().for_each(|v| *v -= mean);
        let solve = |k: f64| {
            let f = h.map(|v| 1.0 + k * v);
            prop_assume!(f.min() > 0.0);
            let p = GkeProblem::new(flat(g), DensityField::from_field(&f).unwrap(), Lambda::Zero).unwrap();
            Ok(solve_gke(&p).unwrap().phi)
        };
        let (one, two) = (solve(0.5)?, solve(1.0)?);
        let err = one.values.iter().zip(&two.values).fold(0.0f64, |e, (a, b)| e.max((2.0 * a - b).abs()));
        prop_assert!(err <= 1e-12 * (1.0 + two.sup_abs()), "error {err}");
    }

    #[test]
    fn schedules_decrease_to_their_endpoints(t_min in 1e-6f64..0.5, legs in 1usize..30, steps in 0usize..30) {
        let s = geometric_schedule(t_min, legs).unwrap();
        prop_assert_eq!(s.len(), legs + 1);
        prop_assert_eq!((s[0], s[legs]), (1.0, t_min));
        prop_assert!(s.windows(2).all(|w| w[1] < w[0]));
        let p = path_schedule(steps);
        prop_assert_eq!((p[0], *p.last().unwrap()), (1.0, 0.0));
        prop_assert!(p.windows(2).all(|w| w[1] < w[0]));
    }
}
