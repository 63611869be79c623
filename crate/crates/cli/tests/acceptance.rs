//! Acceptance suite: one PASS/FAIL line per criterion, then a single assert.
//!
//! `cargo test -p krflow-cli --test acceptance` prints the report; the lines
//! bypass output capture. `ACCEPTANCE_ONLY=7,14` restricts the run to the
//! listed criteria while iterating; the default runs all of them.

use std::f64::consts::{E, PI};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use num_complex::Complex64;

use krflow::fibration::{consistent_density, BoundedType};
use krflow::flow::{
    fit_decay_rate, patch_geometry, reference_config, reference_density, reference_problem,
    schwarz_bound, REFERENCE_EPS, REFERENCE_POINT,
};
use krflow::gke::{
    continuity_path, curvature_residual, path_problem, solve_gke_from, uniqueness_probe,
};
use krflow::k3::{
    collapse_slope, geometric_schedule, limit_check, product_family, synthetic_family,
    FamilyProblem, VolumePerturbation,
};
use krflow::semiflat::{
    density_from_volume, fit_singular_exponent, lp_check, model_volume_density,
    multiple_fiber_profile, semiflat_form, LpVerdict,
};
use krflow::wp::{hcan_curvature_check, hcan_norm, wp_density, wp_form, ANNULUS_MARGIN};
use krflow::{
    solve_family, solve_gke, BaseGrid, DensityField, FibrationConfig, FlowRun, FlowSettings,
    GkeProblem, Grid, HermitianField, KodairaKind, KodairaModel, Lambda, MultipleFiber,
    ScalarField, Seed,
};
use krflow_cli::{parse_config, run_experiment, ExperimentKind, Overrides};

/// Report lines go straight to stdout so they survive the test harness's
/// output capture and appear in a plain `cargo test` log.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, $($arg)*);
        let _ = out.flush();
    }};
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn flat(g: BaseGrid) -> HermitianField {
    HermitianField::base_form(&ScalarField::constant(Grid::Base(g), 1.0)).unwrap()
}

fn sup_diff(a: &ScalarField, b: &ScalarField) -> f64 {
    a.values
        .iter()
        .zip(&b.values)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn annulus_model(kind: KodairaKind, n: usize, n_theta: usize, rho: (f64, f64)) -> FibrationConfig {
    let g = BaseGrid::annulus_with(n, n_theta, rho.0, rho.1, (0.0, 0.0)).unwrap();
    FibrationConfig::from_model(KodairaModel::new(kind).unwrap(), g, 1.0, 1.0).unwrap()
}

fn model_density(cfg: &FibrationConfig) -> DensityField {
    density_from_volume(
        &model_volume_density(cfg).unwrap(),
        &semiflat_form(cfg).unwrap(),
        &cfg.chi,
    )
    .unwrap()
}

/// `F = (1 + ∂∂̄φ*)e^{−φ*}` for `φ* = 0.1 cos 2πx₁` and flat `χ`, with the
/// Hessian written out by hand.
fn manufactured(n: usize) -> (GkeProblem, ScalarField) {
    let g = BaseGrid::torus(n, n).unwrap();
    let star = g.sample(|x, _| 0.1 * (2.0 * PI * x).cos());
    let f = g.sample(|x, _| {
        (1.0 - 0.1 * PI * PI * (2.0 * PI * x).cos()) * (-0.1 * (2.0 * PI * x).cos()).exp()
    });
    let p = GkeProblem::new(
        flat(g),
        DensityField::from_field(&f).unwrap(),
        Lambda::MinusOne,
    )
    .unwrap();
    (p, star)
}

// ---------------------------------------------------------------------------

fn c1_manufactured() -> Outcome {
    let (p, star) = manufactured(128);
    let start = Instant::now();
    let s = solve_gke(&p).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let err = sup_diff(&s.phi, &star);
    let iters = s.history.len() - 1;
    outcome(
        err <= 1e-8 && iters <= 8 && secs <= 10.0,
        format!("128² torus: sup error {err:.2e} (≤ 1e-8), {iters} Newton steps (≤ 8), {secs:.2} s (≤ 10)"),
    )
}

fn c2_constant_density() -> Outcome {
    let cfg = reference_config(64).unwrap();
    let mut worst: f64 = 0.0;
    for c in [0.5, 1.0, E, 4.0] {
        let p = GkeProblem::new(
            cfg.chi.clone(),
            DensityField::constant(cfg.grid, c).unwrap(),
            Lambda::MinusOne,
        )
        .unwrap();
        let s = solve_gke(&p).unwrap();
        worst = worst.max(
            s.phi
                .values
                .iter()
                .fold(0.0f64, |m, v| m.max((v + c.ln()).abs())),
        );
    }
    outcome(
        worst <= 1e-12,
        format!(
            "non-flat χ on 64²: max |φ + log c| = {worst:.2e} over c ∈ {{0.5, 1, e, 4}} (≤ 1e-12)"
        ),
    )
}

fn c3_continuity_path() -> Outcome {
    let torus = reference_config(64).unwrap();
    let smooth = GkeProblem::new(
        torus.chi.clone(),
        DensityField::from_field(&reference_density(&torus.grid)).unwrap(),
        Lambda::MinusOne,
    )
    .unwrap();
    let ib = annulus_model(KodairaKind::Ib { b: 1 }, 96, 32, (-8.0, -0.5));
    let ib = GkeProblem::new(ib.chi.clone(), model_density(&ib), Lambda::MinusOne).unwrap();
    let mut gaps = Vec::new();
    for p in [&smooth, &ib] {
        let direct = solve_gke(p).unwrap();
        let path = continuity_path(p, 8).unwrap();
        gaps.push(sup_diff(&direct.phi, &path.phi));
    }
    let one = GkeProblem::new(
        flat(torus.grid),
        DensityField::constant(torus.grid, 1.0).unwrap(),
        Lambda::MinusOne,
    )
    .unwrap();
    let leg = solve_gke(&path_problem(&one, 1.0)).unwrap();
    let log2 = leg
        .phi
        .values
        .iter()
        .fold(0.0f64, |m, v| m.max((v - 2f64.ln()).abs()));
    outcome(
        gaps.iter().all(|&g| g <= 1e-8) && log2 <= 1e-12,
        format!(
            "path vs direct: smooth {:.2e}, Ib profile {:.2e} (≤ 1e-8); t = 1 leg |φ − log 2| = {log2:.2e} (≤ 1e-12)",
            gaps[0], gaps[1]
        ),
    )
}

fn c4_exponents() -> Outcome {
    let start = Instant::now();
    let zero = Complex64::new(0.0, 0.0);
    let mut lines = Vec::new();
    let mut ok = true;
    let mut check = |label: String, kind: KodairaKind, want: f64, log: bool| {
        let cfg = annulus_model(kind, 96, 32, (-8.0, -0.5));
        let fit = fit_singular_exponent(&model_density(&cfg), zero).unwrap();
        let good = (fit.exponent - want).abs() <= 0.05 && fit.log_flag == log;
        ok &= good;
        lines.push(format!(
            "{label} {:.4}{}",
            fit.exponent,
            if fit.log_flag { "+log" } else { "" }
        ));
    };
    for m in [2, 3] {
        let kind = KodairaKind::MI0 {
            m,
            h: 1,
            tau0: Complex64::new(0.0, 1.0),
            c: Complex64::new(0.1, 0.0),
        };
        check(
            format!("mI0(m={m})"),
            kind,
            -2.0 * (m as f64 - 1.0) / m as f64,
            false,
        );
    }
    for b in [1, 2] {
        check(format!("I{b}"), KodairaKind::Ib { b }, 0.0, true);
    }
    for t in BoundedType::ALL {
        check(t.name().to_string(), KodairaKind::Bounded(t), 0.0, false);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        ok && secs <= 30.0,
        format!("{} ({secs:.1} s, ≤ 30)", lines.join(", ")),
    )
}

fn c5_lp_thresholds() -> Outcome {
    let prof = multiple_fiber_profile(2, Complex64::new(0.5, 0.5));
    let res = [64, 128, 256, 512];
    let low = lp_check(&prof, 1.5, &res).unwrap();
    let high = lp_check(&prof, 3.0, &res).unwrap();
    outcome(
        low.verdict == LpVerdict::Integrable && high.verdict == LpVerdict::Divergent,
        format!(
            "m = 2, resolutions {res:?}: p = 1.5 {:?} (ratios {:.3?}), p = 3 {:?} (ratios {:.3?})",
            low.verdict, low.ratios, high.verdict, high.ratios
        ),
    )
}

fn c6_weil_petersson() -> Outcome {
    // τ(s) = s on an annulus centered at 2i
    let g = BaseGrid::annulus_with(128, 32, -2.0, -0.5, (0.0, 2.0)).unwrap();
    let cfg = FibrationConfig::from_model(
        KodairaModel::new(KodairaKind::Identity).unwrap(),
        g,
        1.0,
        1.0,
    )
    .unwrap();
    let dens = wp_density(&wp_form(&cfg.y_tau).unwrap());
    let mut rel: f64 = 0.0;
    for i in ANNULUS_MARGIN..g.n1 - ANNULUS_MARGIN {
        for j in 0..g.n2 {
            let idx = i * g.n2 + j;
            let y = g.s(idx).im;
            rel = rel.max((dens.values[idx] * 2.0 * y * y - 1.0).abs());
        }
    }
    let torus = hcan_curvature_check(&hcan_norm(&reference_config(64).unwrap()).unwrap()).unwrap();
    let res = |n| {
        hcan_curvature_check(
            &hcan_norm(&annulus_model(
                KodairaKind::Ib { b: 1 },
                n,
                16,
                (-3.0, -0.5),
            ))
            .unwrap(),
        )
        .unwrap()
    };
    let (coarse, fine) = (res(64), res(128));
    outcome(
        rel <= 1e-6 && torus <= 1e-12 && coarse / fine >= 3.5,
        format!(
            "τ = s density rel err {rel:.2e} (≤ 1e-6); torus identity {torus:.2e} (≤ 1e-12); Ib annulus {coarse:.2e} → {fine:.2e}, ratio {:.2} (≥ 3.5)",
            coarse / fine
        ),
    )
}

/// The reference model with a double fiber at its marked point. A torus model
/// needs the fiber: `ω_WP` is exact there, so only the fiber current gives
/// `μχ` positive mass.
fn fibered_config(n: usize) -> FibrationConfig {
    let r = reference_config(n).unwrap();
    let point = Complex64::new(REFERENCE_POINT.0, REFERENCE_POINT.1);
    FibrationConfig::synthetic(
        r.y_tau,
        r.chi,
        1.0,
        vec![MultipleFiber { point, m: 2 }],
        REFERENCE_EPS,
    )
    .unwrap()
}

fn c7_curvature_identity() -> Outcome {
    let cfg = fibered_config(128);
    let wp = wp_form(&cfg.y_tau).unwrap();
    let cd = consistent_density(&cfg, &wp).unwrap();
    let p = GkeProblem::new(cd.chi, cd.density, Lambda::MinusOne).unwrap();
    let s = solve_gke(&p).unwrap();
    let torus = curvature_residual(&s, &p, &wp, Some(&cfg.section), false).unwrap();
    let ann = |n| {
        let cfg = annulus_model(KodairaKind::Ib { b: 1 }, n, 16, (-3.0, -0.5));
        let wp = wp_form(&cfg.y_tau).unwrap();
        let cd = consistent_density(&cfg, &wp).unwrap();
        let p = GkeProblem::new(cd.chi, cd.density, Lambda::MinusOne).unwrap();
        let s = solve_gke(&p).unwrap();
        curvature_residual(&s, &p, &wp, None, false).unwrap()
    };
    let (coarse, fine) = (ann(48), ann(96));
    outcome(
        torus <= 1e-6 && coarse / fine >= 4.0,
        format!(
            "128² model with a double fiber, on |S|² ≥ 0.3: sup residual {torus:.2e} (≤ 1e-6); Ib annulus {coarse:.2e} → {fine:.2e}, ratio {:.2} (≥ 4)",
            coarse / fine
        ),
    )
}

struct FlowRuns {
    seeds: Vec<(&'static str, FlowRun, Vec<bool>)>,
    k: f64,
    secs: Vec<f64>,
}

fn flow_runs() -> FlowRuns {
    let mut seeds = Vec::new();
    let mut secs = Vec::new();
    let mut k = f64::NAN;
    for (name, seed) in [
        ("zero", Seed::Zero),
        ("random(1)", Seed::Random(1)),
        ("fiber", Seed::Fiber),
    ] {
        let p = reference_problem(32, 16, seed)
            .unwrap()
            .with_settings(FlowSettings {
                t_max: 12.0,
                dt: 0.1,
                ..FlowSettings::default()
            });
        k = patch_geometry(&p).unwrap().1;
        let start = Instant::now();
        let run = krflow::run_flow(&p).unwrap();
        secs.push(start.elapsed().as_secs_f64());
        seeds.push((name, run, p.region()));
    }
    FlowRuns { seeds, k, secs }
}

fn at(run: &FlowRun, t: f64) -> &krflow::MonitorRecord {
    run.series
        .iter()
        .find(|r| (r.t - t).abs() < 1e-9)
        .expect("monitor time")
}

fn c8_fiber_area(r: &FlowRuns) -> Outcome {
    let worst = r
        .seeds
        .iter()
        .map(|s| s.1.fiber_area_err)
        .fold(0.0, f64::max);
    let slowest = r.secs.iter().copied().fold(0.0, f64::max);
    outcome(
        worst <= 1e-10 && slowest <= 1800.0,
        format!("32² × 16², t ≤ 12, 3 seeds: max relative fiber-area error {worst:.2e} (≤ 1e-10); slowest run {slowest:.0} s (≤ 1800)"),
    )
}

fn c9_collapse_rate(r: &FlowRuns) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, run, _) in &r.seeds {
        let rate = fit_decay_rate(&run.series, 8.0, 12.0).unwrap();
        let dphi = at(run, 12.0).dphi_region_sup;
        ok &= (rate + 1.0).abs() <= 0.1 && dphi.abs() <= 1e-3;
        parts.push(format!("{name}: rate {rate:.4}, ∂φ/∂t {dphi:.1e}"));
    }
    outcome(
        ok,
        format!(
            "{} (rate −1 ± 0.1, ∂φ/∂t on region ≤ 1e-3)",
            parts.join("; ")
        ),
    )
}

fn c10_limit(r: &FlowRuns) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, run, _) in &r.seeds {
        let d12 = at(run, 12.0).phi_limit_dist;
        let tail: Vec<f64> = run
            .series
            .iter()
            .filter(|m| m.t >= 9.0 - 1e-9)
            .map(|m| m.phi_limit_dist)
            .collect();
        let monotone = tail.windows(2).all(|w| w[1] <= w[0] + 1e-4);
        ok &= d12 <= 5e-2 && monotone;
        parts.push(format!(
            "{name}: {d12:.1e}{}",
            if monotone { "" } else { " (increasing)" }
        ));
    }
    let mut spread: f64 = 0.0;
    let region = &r.seeds[0].2;
    for a in 0..r.seeds.len() {
        for b in a + 1..r.seeds.len() {
            let (pa, pb) = (&r.seeds[a].1.final_state.phi, &r.seeds[b].1.final_state.phi);
            // region is a base mask; each base point owns a contiguous fiber block
            let fiber = pa.len() / region.len();
            for i in 0..pa.len() {
                if region[i / fiber] {
                    spread = spread.max((pa.values[i] - pb.values[i]).abs());
                }
            }
        }
    }
    ok &= spread <= 1e-2;
    outcome(
        ok,
        format!("sup|φ(12) − f*φ∞| on region {} (≤ 5e-2, non-increasing on [9, 12]); seed spread {spread:.1e} (≤ 1e-2)", parts.join(", ")),
    )
}

fn c11_scalar_curvature(r: &FlowRuns) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, run, _) in &r.seeds {
        let ident = run
            .series
            .iter()
            .map(|m| m.r_identity_err)
            .fold(0.0, f64::max);
        let r1 = at(run, 1.0).r_min;
        let inf = run
            .series
            .iter()
            .filter(|m| m.t >= 1.0 - 1e-9)
            .map(|m| m.r_min)
            .fold(f64::INFINITY, f64::min);
        ok &= ident <= 1e-8 && inf >= r1 - 1.0;
        parts.push(format!(
            "{name}: identity {ident:.1e}, inf R {inf:.3} vs R(1) {r1:.3}"
        ));
    }
    outcome(
        ok,
        format!("{} (identity ≤ 1e-8, drift ≤ 1)", parts.join("; ")),
    )
}

fn c12_schwarz(r: &FlowRuns) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, run, _) in &r.seeds {
        let excess = run
            .series
            .iter()
            .map(|m| m.schwarz_residual - 5e-3 * m.u_s_sup)
            .fold(f64::NEG_INFINITY, f64::max);
        let b = schwarz_bound(&run.series, r.k).unwrap();
        ok &= excess <= 0.0 && b.dominated;
        parts.push(format!(
            "{name}: max(res − 5e-3‖u_S‖) {excess:.2e}, bound margin {:.3}",
            b.min_margin
        ));
    }
    outcome(ok, format!("K = {:.3}; {}", r.k, parts.join("; ")))
}

fn c13_k3_family() -> Outcome {
    let sched = geometric_schedule(1e-3, 12).unwrap();
    let prod = solve_family(&product_family(8, 8, sched.clone()).unwrap()).unwrap();
    let trivial = prod
        .legs
        .iter()
        .map(|l| l.phi.sup_abs())
        .fold(0.0, f64::max);

    let pert = VolumePerturbation {
        base: 0.2,
        fiber: 0.2,
    };
    let problem = synthetic_family(16, 16, pert, sched).unwrap();
    let run = solve_family(&problem).unwrap();
    let limit = limit_check(&run, &problem, false).unwrap().limit_residual;
    let slope = collapse_slope(&run, 1e-3, 1e-1).unwrap();

    let short = geometric_schedule(1e-2, 3).unwrap();
    let base = synthetic_family(16, 16, pert, short.clone()).unwrap();
    let scaled = FamilyProblem::new(
        base.config.clone(),
        base.grid,
        base.volume.map(|v| 3.0 * v),
        short,
    )
    .unwrap();
    let (a, b) = (solve_family(&base).unwrap(), solve_family(&scaled).unwrap());
    let rescale = a
        .legs
        .iter()
        .zip(&b.legs)
        .map(|(x, y)| sup_diff(&x.phi, &y.phi))
        .fold(0.0, f64::max);
    outcome(
        trivial <= 1e-10 && limit <= 1e-3 && (slope - 1.0).abs() <= 0.1 && rescale <= 1e-12,
        format!(
            "product family sup|φ| {trivial:.1e} (≤ 1e-10); 16²×16² limit residual at t = 1e-3 {limit:.2e} (≤ 1e-3); collapse slope {slope:.4}; Ω → 3Ω changes φ by {rescale:.1e} (≤ 1e-12)"
        ),
    )
}

fn c14_uniqueness() -> Outcome {
    let mut problems: Vec<(&str, GkeProblem)> = Vec::new();
    problems.push(("manufactured", manufactured(64).0));
    let cfg = reference_config(64).unwrap();
    problems.push((
        "reference",
        GkeProblem::new(
            cfg.chi.clone(),
            DensityField::from_field(&reference_density(&cfg.grid)).unwrap(),
            Lambda::MinusOne,
        )
        .unwrap(),
    ));
    problems.push((
        "constant",
        GkeProblem::new(
            cfg.chi.clone(),
            DensityField::constant(cfg.grid, E).unwrap(),
            Lambda::MinusOne,
        )
        .unwrap(),
    ));
    let fc = fibered_config(64);
    let cd = consistent_density(&fc, &wp_form(&fc.y_tau).unwrap()).unwrap();
    problems.push((
        "consistent",
        GkeProblem::new(cd.chi, cd.density, Lambda::MinusOne).unwrap(),
    ));
    let ib = annulus_model(KodairaKind::Ib { b: 1 }, 96, 32, (-8.0, -0.5));
    problems.push((
        "Ib annulus",
        GkeProblem::new(ib.chi.clone(), model_density(&ib), Lambda::MinusOne).unwrap(),
    ));
    let mi0 = annulus_model(
        KodairaKind::MI0 {
            m: 2,
            h: 1,
            tau0: Complex64::new(0.0, 1.0),
            c: Complex64::new(0.1, 0.0),
        },
        96,
        32,
        (-8.0, -0.5),
    );
    problems.push((
        "mI0 annulus",
        GkeProblem::new(mi0.chi.clone(), model_density(&mi0), Lambda::MinusOne).unwrap(),
    ));

    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (name, p) in &problems {
        let g = p.grid;
        let inits: Vec<ScalarField> = if g.is_torus() {
            vec![
                ScalarField::zeros(Grid::Base(g)),
                g.sample(|x, y| 0.3 * (2.0 * PI * x).cos() + 0.2 * (2.0 * PI * y).sin()),
                g.sample(|x, y| -0.5 + 0.2 * (2.0 * PI * (x + y)).sin()),
            ]
        } else {
            let (lo, hi) = match g.chart {
                krflow::Chart::Annulus {
                    rho_min, rho_max, ..
                } => (rho_min, rho_max),
                krflow::Chart::Torus => unreachable!(),
            };
            let bump = move |rho: f64| (PI * (rho - lo) / (hi - lo)).sin();
            vec![
                ScalarField::zeros(Grid::Base(g)),
                g.sample(move |rho, th| 0.3 * bump(rho) * (1.0 + 0.5 * th.cos())),
                g.sample(move |rho, th| -0.4 * bump(rho) * (1.0 + 0.3 * (2.0 * th).sin())),
            ]
        };
        // make sure the three starts really differ
        assert!(sup_diff(&inits[1], &inits[2]) > 0.1);
        let d = uniqueness_probe(p, &inits).unwrap();
        let _ = solve_gke_from(p, &inits[2]).unwrap();
        worst = worst.max(d);
        parts.push(format!("{name} {d:.1e}"));
    }
    outcome(worst <= 1e-8, format!("{} (≤ 1e-8)", parts.join(", ")))
}

fn c15_determinism() -> Outcome {
    let cases = [
        (ExperimentKind::SolveBase, "[grid]\nbase = 32\n[solver]\npath_steps = 4\n"),
        (ExperimentKind::RunFlow, "[grid]\nbase = 16\nfiber = 8\n[flow]\nt_max = 2\nseed = random\n[experiment]\nseed = 3\n"),
        (ExperimentKind::SchwarzCheck, "[grid]\nbase = 16\nfiber = 8\n[flow]\nt_max = 2\nseed = fiber\n"),
        (ExperimentKind::K3Family, "[grid]\nbase = 8\nfiber = 8\n[family]\nlegs = 6\nt_min = 1e-3\n"),
        (ExperimentKind::DensityFit, "[model]\nkind = mIb\nm = 2\nb = 1\n[grid]\nbase = 96\n"),
        (ExperimentKind::WpCheck, "[model]\nkind = Ib\nb = 2\n[grid]\nbase = 64\n"),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (kind, text) in cases {
        let cfg = parse_config(text)
            .unwrap()
            .with_overrides(&Overrides {
                kind: Some(kind),
                ..Default::default()
            })
            .unwrap();
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        let csvs: Vec<Vec<(String, Vec<u8>)>> = dirs
            .iter()
            .map(|d| {
                run_experiment(&cfg, d.path()).unwrap();
                let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(d.path())
                    .unwrap()
                    .map(|e| e.unwrap().path())
                    .filter(|p| p.extension().is_some_and(|e| e == "csv"))
                    .map(|p| {
                        (
                            p.file_name().unwrap().to_string_lossy().into_owned(),
                            std::fs::read(&p).unwrap(),
                        )
                    })
                    .collect();
                v.sort();
                v
            })
            .collect();
        let same = csvs[0] == csvs[1] && !csvs[0].is_empty();
        ok &= same;
        parts.push(format!(
            "{kind} {} CSVs {}",
            csvs[0].len(),
            if same { "identical" } else { "DIFFER" }
        ));
    }
    outcome(ok, parts.join(", "))
}

fn selected(n: usize) -> bool {
    match std::env::var("ACCEPTANCE_ONLY") {
        Ok(list) => list.split(',').any(|t| t.trim().parse() == Ok(n)),
        Err(_) => true,
    }
}

/// `None` when the criterion was not selected.
fn report(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> Option<bool> {
    if !selected(n) {
        say!("SKIP [{n:2}] {name}");
        return None;
    }
    let start = Instant::now();
    let res = catch_unwind(AssertUnwindSafe(f));
    let secs = start.elapsed().as_secs_f64();
    let (pass, detail) = match res {
        Ok(o) => (o.pass, o.detail),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    say!(
        "{} [{n:2}] {name}: {detail} [{secs:.1} s]",
        if pass { "PASS" } else { "FAIL" }
    );
    Some(pass)
}

#[test]
fn acceptance() {
    krflow_cli::init_threads();
    // the harness has already printed "test acceptance ... " on this line
    say!();
    let mut results = Vec::new();
    results.push(report(1, "manufactured GKE solve", c1_manufactured));
    results.push(report(2, "constant-density exactness", c2_constant_density));
    results.push(report(3, "continuity-path equivalence", c3_continuity_path));
    results.push(report(
        4,
        "density exponents near singular fibers",
        c4_exponents,
    ));
    results.push(report(
        5,
        "L^p thresholds of the multiple-fiber profile",
        c5_lp_thresholds,
    ));
    results.push(report(
        6,
        "Weil-Petersson form and Hodge metric identity",
        c6_weil_petersson,
    ));
    results.push(report(7, "limit curvature identity", c7_curvature_identity));

    let runs = if (8..=12).any(selected) {
        catch_unwind(flow_runs)
    } else {
        Err(Box::new(()) as _)
    };
    let flow = |n: usize, name: &str, f: fn(&FlowRuns) -> Outcome| match &runs {
        Ok(r) => report(n, name, || f(r)),
        Err(_) => report(n, name, || panic!("reference flow runs failed")),
    };
    results.push(flow(8, "flow fiber-area law", c8_fiber_area));
    results.push(flow(9, "flow collapse rate", c9_collapse_rate));
    results.push(flow(10, "flow convergence to the base limit", c10_limit));
    results.push(flow(
        11,
        "scalar-curvature identity and lower bound",
        c11_scalar_curvature,
    ));
    results.push(flow(12, "Schwarz inequality", c12_schwarz));

    results.push(report(13, "Ricci-flat family collapse", c13_k3_family));
    results.push(report(14, "uniqueness probes", c14_uniqueness));
    results.push(report(
        15,
        "determinism of experiment outputs",
        c15_determinism,
    ));

    let ran: Vec<bool> = results.into_iter().flatten().collect();
    let passed = ran.iter().filter(|&&p| p).count();
    say!("{passed}/{} criteria passed", ran.len());
    assert_eq!(passed, ran.len(), "acceptance criteria failed");
}
