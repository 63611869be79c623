//! Degenerating Calabi-Yau family `2 det(ω_t + i∂∂̄φ_t) = C_t Ω` with
//! `ω_t = χ + tω₁` collapsing the fibers, and its limit on the base.
//!
//! Families live on a torus total space with a constant period, so the
//! semi-flat `ω₁` is closed and discrete Stokes identities are exact.
//!
//! On even grids the complex Hessian annihilates the "corner" modes, whose
//! wavenumber on every axis is 0 or Nyquist. The discrete equation is
//! imposed modulo those modes; the constant one among them is the usual free
//! normalization constant and the others only carry aliasing error.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fibration::{FibrationConfig, REGION_THRESHOLD};
use crate::gke::{solve_gke, GkeProblem, Lambda};
use crate::grid::{
    complex_hessian, BaseGrid, Grid, HermitianField, ScalarField, TotalGrid, MA_FACTOR,
};
use crate::krylov::{gmres, GmresOptions};
use crate::semiflat::{semiflat_form, DensityField};
use crate::spectral::FftNd;
use crate::wp::wp_form;

#[derive(Debug, Clone, Copy)]
pub struct FamilyOptions {
    /// Sup-norm tolerance on the projected log-residual.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    pub gmres: GmresOptions,
}

impl Default for FamilyOptions {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iter: 30,
            max_halvings: 20,
            gmres: GmresOptions {
                rel_tol: 1e-12,
                restart: 40,
                max_iter: 400,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct FamilyProblem {
    pub grid: TotalGrid,
    pub config: FibrationConfig,
    /// `f*χ`.
    pub chi: HermitianField,
    /// Semi-flat form with fiber area `A`.
    pub omega1: HermitianField,
    /// `Ω` with unit mass.
    pub volume: ScalarField,
    /// Decreasing values of `t`.
    pub schedule: Vec<f64>,
    pub options: FamilyOptions,
    /// The fiber-averaged volume makes the limit curvature identity hold.
    pub consistent: bool,
}

impl FamilyProblem {
    pub fn new(
        config: FibrationConfig,
        grid: TotalGrid,
        volume: ScalarField,
        schedule: Vec<f64>,
    ) -> Result<Self> {
        if grid.base != config.grid {
            return Err(Error::GridMismatch(
                "total grid and fibration base differ".into(),
            ));
        }
        if volume.grid != Grid::Total(grid) {
            return Err(Error::GridMismatch("Ω must live on the total grid".into()));
        }
        let y = &config.y_tau.values;
        let (lo, hi) = y
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        if hi - lo > 1e-14 * hi {
            return Err(Error::InvalidParameter(
                "families need a constant period so that the semi-flat form is closed".into(),
            ));
        }
        volume.check_finite()?;
        if let Some(idx) = volume.values.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::NonPositiveValue {
                point: grid.point_info(idx),
                value: volume.values[idx],
            });
        }
        if let Some(idx) = config.chi.ss.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::NotPositive {
                point: config.grid.point_info(idx),
                min_eigenvalue: config.chi.ss[idx],
            });
        }
        if schedule.is_empty() || schedule.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidParameter(
                "schedule must be a non-empty list of positive times".into(),
            ));
        }
        if schedule.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::InvalidParameter(
                "schedule must be strictly decreasing".into(),
            ));
        }
        let mass = volume.mean();
        let volume = volume.map(|v| v / mass);
        let chi = config.chi.pullback(&grid)?;
        let omega1 = semiflat_form(&config)?.total_form(&grid)?;
        Ok(Self {
            grid,
            config,
            chi,
            omega1,
            volume,
            schedule,
            options: FamilyOptions::default(),
            consistent: false,
        })
    }

    pub fn with_options(mut self, options: FamilyOptions) -> Self {
        self.options = options;
        self
    }

    /// `ω_t = χ + tω₁`.
    pub fn reference_form(&self, t: f64) -> Result<HermitianField> {
        self.chi.axpby(1.0, &self.omega1, t)
    }

    /// `C_t = ∫2 det ω_t / ∫Ω`.
    pub fn class_volume(&self, t: f64) -> Result<f64> {
        let w = self.reference_form(t)?;
        let mass: f64 = (0..w.len()).map(|i| w.at(i).det()).sum::<f64>() / w.len() as f64;
        Ok(MA_FACTOR * mass / self.volume.mean())
    }

    /// `log(2 det(ω_t + i∂∂̄φ)) − log(C_tΩ)` and the metric; fails where the
    /// metric is not positive.
    pub fn log_residual(&self, t: f64, phi: &ScalarField) -> Result<(ScalarField, HermitianField)> {
        if phi.grid != Grid::Total(self.grid) {
            return Err(Error::GridMismatch("φ must live on the total grid".into()));
        }
        let c_t = self.class_volume(t)?;
        let omega = self.reference_form(t)?.add(&complex_hessian(phi)?)?;
        omega.check_positive()?;
        let values = (0..phi.len())
            .map(|i| (MA_FACTOR * omega.at(i).det()).ln() - (c_t * self.volume.values[i]).ln())
            .collect();
        let r = ScalarField {
            grid: phi.grid,
            values,
        };
        r.check_finite()?;
        Ok((r, omega))
    }
}

/// `legs + 1` times from 1 down to `t_min`, equally spaced in `log t`.
pub fn geometric_schedule(t_min: f64, legs: usize) -> Result<Vec<f64>> {
    if !(t_min > 0.0 && t_min < 1.0) || legs == 0 {
        return Err(Error::InvalidParameter(format!(
            "need 0 < t_min < 1 and legs ≥ 1, got {t_min}, {legs}"
        )));
    }
    let mut s: Vec<f64> = (0..=legs)
        .map(|k| t_min.powf(k as f64 / legs as f64))
        .collect();
    s[legs] = t_min;
    Ok(s)
}

/// Projection onto the corner modes of an even periodic grid.
struct CornerModes {
    dims: [usize; 4],
}

impl CornerModes {
    fn sign(&self, idx: usize, pattern: usize) -> f64 {
        let [_, n2, m1, m2] = self.dims;
        let i = [
            idx / (m2 * m1 * n2),
            (idx / (m2 * m1)) % n2,
            (idx / m2) % m1,
            idx % m2,
        ];
        let odd: usize = (0..4).filter(|a| pattern >> a & 1 == 1).map(|a| i[a]).sum();
        if odd % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Coefficients `⟨v_p, f⟩/N` for the 16 sign patterns; entry 0 is the mean.
    fn coefficients(&self, f: &[f64]) -> [f64; 16] {
        let mut c = [0.0; 16];
        for (idx, v) in f.iter().enumerate() {
            for (p, slot) in c.iter_mut().enumerate() {
                *slot += self.sign(idx, p) * v;
            }
        }
        c.map(|x| x / f.len() as f64)
    }

    fn remove(&self, f: &mut [f64]) -> [f64; 16] {
        let c = self.coefficients(f);
        for (idx, v) in f.iter_mut().enumerate() {
            for (p, cp) in c.iter().enumerate() {
                *v -= cp * self.sign(idx, p);
            }
        }
        c
    }
}

/// Solution at one scheduled time.
#[derive(Debug, Clone)]
pub struct FamilyLeg {
    pub t: f64,
    pub phi: ScalarField,
    pub c_t: f64,
    pub iterations: usize,
    /// Sup of the projected log-residual.
    pub residual: f64,
    /// Mean of the log-residual: the discrete normalization constant.
    pub offset: f64,
    /// `|∫2 det(ω_t + i∂∂̄φ) − C_t∫Ω| / C_t`.
    pub mass_error: f64,
    /// `∫φΩ`.
    pub normalization: f64,
    /// Largest fiber coefficient `g_zz̄` of `ω_t + i∂∂̄φ`.
    pub fiber_norm_sup: f64,
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone)]
pub struct FamilyRun {
    pub legs: Vec<FamilyLeg>,
}

impl FamilyRun {
    pub fn last(&self) -> &FamilyLeg {
        self.legs.last().expect("a family run has at least one leg")
    }
}

/// Solve along the schedule with warm starts.
pub fn solve_family(problem: &FamilyProblem) -> Result<FamilyRun> {
    let mut phi = ScalarField::zeros(Grid::Total(problem.grid));
    let mut legs = Vec::with_capacity(problem.schedule.len());
    for &t in &problem.schedule {
        let leg = solve_leg(problem, t, &phi).map_err(|e| Error::Continuation {
            t,
            source: Box::new(e),
        })?;
        phi = leg.phi.clone();
        legs.push(leg);
    }
    Ok(FamilyRun { legs })
}

/// Damped Newton at a single `t` from `init`.
pub fn solve_leg(problem: &FamilyProblem, t: f64, init: &ScalarField) -> Result<FamilyLeg> {
    if init.grid != Grid::Total(problem.grid) {
        return Err(Error::GridMismatch("initial guess grid".into()));
    }
    let corners = CornerModes {
        dims: problem.grid.dims(),
    };
    let opts = problem.options;
    let projected = |phi: &ScalarField| -> Result<(f64, Vec<f64>, HermitianField)> {
        let (r, omega) = problem.log_residual(t, phi)?;
        let mut v = r.values;
        corners.remove(&mut v);
        Ok((v.iter().fold(0.0f64, |m, x| m.max(x.abs())), v, omega))
    };
    let mut phi = init.clone();
    let (mut res, mut r, mut omega) = projected(&phi)?;
    let mut iterations = 0;
    let mut polish = 0;
    loop {
        if res <= opts.tol {
            // a couple of full steps inside the tolerance reach round-off
            if polish >= 2 || res == 0.0 {
                break;
            }
            polish += 1;
            let delta = newton_direction(problem, &corners, &omega, &r)?;
            let trial = phi.zip_map(&delta, |p, d| p + d)?;
            match projected(&trial) {
                Ok(next) if next.0 < res => {
                    phi = trial;
                    (res, r, omega) = next;
                }
                _ => break,
            }
            continue;
        }
        if iterations >= opts.max_iter {
            return Err(Error::NewtonMaxIterations {
                iterations,
                residual: res,
            });
        }
        iterations += 1;
        let delta = newton_direction(problem, &corners, &omega, &r)?;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial = phi.zip_map(&delta, |p, d| p + step * d)?;
            if let Ok(next) = projected(&trial) {
                if next.0 < res {
                    accepted = Some((trial, next));
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some((trial, next)) => {
                phi = trial;
                (res, r, omega) = next;
            }
            None => {
                return Err(Error::NewtonDivergence {
                    iterations,
                    history: vec![res],
                })
            }
        }
    }
    // ∫φΩ = 0; constants do not enter the equation
    let shift = integrate_weighted(&phi.values, &problem.volume.values);
    phi.values.iter_mut().for_each(|v| *v -= shift);
    finish_leg(problem, t, phi, iterations, res)
}

fn integrate_weighted(f: &[f64], w: &[f64]) -> f64 {
    f.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / f.len() as f64
}

fn finish_leg(
    problem: &FamilyProblem,
    t: f64,
    phi: ScalarField,
    iterations: usize,
    residual: f64,
) -> Result<FamilyLeg> {
    let (r, omega) = problem.log_residual(t, &phi)?;
    let c_t = problem.class_volume(t)?;
    let mass =
        MA_FACTOR * (0..omega.len()).map(|i| omega.at(i).det()).sum::<f64>() / omega.len() as f64;
    let (min_eigenvalue, _) = omega.min_eigenvalue();
    Ok(FamilyLeg {
        t,
        c_t,
        iterations,
        residual,
        offset: r.mean(),
        mass_error: (mass - c_t * problem.volume.mean()).abs() / c_t,
        normalization: integrate_weighted(&phi.values, &problem.volume.values),
        fiber_norm_sup: omega.zz.iter().fold(0.0f64, |m, v| m.max(*v)),
        min_eigenvalue,
        phi,
    })
}

/// GMRES for `tr_ω(i∂∂̄δ) = −r` on the complement of the corner modes,
/// preconditioned by the constant-coefficient operator with the mean inverse
/// metric.
fn newton_direction(
    problem: &FamilyProblem,
    corners: &CornerModes,
    omega: &HermitianField,
    r: &[f64],
) -> Result<ScalarField> {
    let tg = problem.grid;
    let n = tg.len();
    let (mut beta_f, mut beta_b) = (0.0, 0.0);
    for i in 0..n {
        let inv = omega.at(i).inverse();
        beta_f += inv.zz;
        beta_b += inv.ss;
    }
    beta_f /= n as f64;
    beta_b /= n as f64;
    let wn = crate::grid::TotalWavenumbers::new(&tg);
    let symbol: Vec<f64> = (0..n)
        .map(|idx| {
            let k = wn.at(idx);
            -PI * PI * (beta_f * (k[2] * k[2] + k[3] * k[3]) + beta_b * (k[0] * k[0] + k[1] * k[1]))
        })
        .collect();
    let plan = FftNd::shared(&tg.dims());
    let grid = Grid::Total(tg);
    let mut apply = |v: &[f64], out: &mut [f64]| {
        let h = complex_hessian(&ScalarField {
            grid,
            values: v.to_vec(),
        })
        .expect("finite Krylov vector");
        for i in 0..n {
            out[i] = omega.at(i).trace_of(&h.at(i));
        }
        corners.remove(out);
    };
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut precond = |v: &[f64], out: &mut [f64]| {
        for (b, &x) in buf.iter_mut().zip(v) {
            *b = Complex64::new(x, 0.0);
        }
        plan.forward(&mut buf);
        for (b, s) in buf.iter_mut().zip(&symbol) {
            *b = if *s != 0.0 {
                *b / *s
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
        plan.inverse(&mut buf);
        for (o, b) in out.iter_mut().zip(&buf) {
            *o = b.re;
        }
    };
    let b: Vec<f64> = r.iter().map(|v| -v).collect();
    let mut x = vec![0.0; n];
    gmres(&mut apply, &mut precond, &b, &mut x, problem.options.gmres)?;
    Ok(ScalarField { grid, values: x })
}

/// Least-squares slope of `log fiber_norm_sup` against `log t` over legs with
/// `t ∈ [t0, t1]`.
pub fn collapse_slope(run: &FamilyRun, t0: f64, t1: f64) -> Result<f64> {
    let pts: Vec<(f64, f64)> = run
        .legs
        .iter()
        .filter(|l| l.t >= t0 * (1.0 - 1e-12) && l.t <= t1 * (1.0 + 1e-12))
        .map(|l| (l.t.ln(), l.fiber_norm_sup.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} legs in [{t0}, {t1}]",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Ok(sxy / sxx)
}

/// Base limit of the family and the residuals against it.
#[derive(Debug, Clone)]
pub struct LimitReport {
    /// Solution of `Δ_χφ₀ = F − 1`, shifted so that `∫f*φ₀ Ω = 0`.
    pub phi0: ScalarField,
    pub density: DensityField,
    /// `sup |φ_{t_min} − f*φ₀|` over `{|S|²_h ≥ 0.3}`.
    pub limit_residual: f64,
    /// `sup |Ric(χ + i∂∂̄φ₀) − ω_WP|` over the same region; `None` when the
    /// volume is not consistent and the check was not forced.
    pub wp_residual: Option<f64>,
}

/// `F = fiber mean of Ω / (2 a c)`, which the λ = 0 problem normalizes.
pub fn limit_density(problem: &FamilyProblem) -> Result<DensityField> {
    let sf = semiflat_form(&problem.config)?;
    let mean = problem.volume.fiber_mean()?;
    let values = (0..mean.len())
        .map(|i| mean.values[i] / (2.0 * sf.a.values[i] * problem.config.chi.ss[i]))
        .collect();
    DensityField::new(problem.config.grid, values, vec![], problem.consistent)
}

/// Solve the λ = 0 base problem and normalize it against `Ω`.
pub fn limit_potential(problem: &FamilyProblem) -> Result<(ScalarField, DensityField)> {
    let gke = GkeProblem::new(
        problem.config.chi.clone(),
        limit_density(problem)?,
        Lambda::Zero,
    )?;
    let mut phi0 = solve_gke(&gke)?.phi;
    let pulled = phi0.pullback(&problem.grid)?;
    let shift = integrate_weighted(&pulled.values, &problem.volume.values);
    phi0.values.iter_mut().for_each(|v| *v -= shift);
    Ok((phi0, gke.density))
}

/// `sup |φ − f*φ₀|` over the comparison region.
pub fn limit_distance(
    problem: &FamilyProblem,
    phi: &ScalarField,
    phi0: &ScalarField,
) -> Result<f64> {
    let mask = problem.config.section.region(REGION_THRESHOLD);
    let pulled = phi0.pullback(&problem.grid)?;
    if phi.grid != pulled.grid {
        return Err(Error::GridMismatch("φ must live on the family grid".into()));
    }
    let tg = problem.grid;
    Ok((0..phi.len())
        .filter(|&i| mask[tg.base_index(i)])
        .fold(0.0f64, |m, i| {
            m.max((phi.values[i] - pulled.values[i]).abs())
        }))
}

/// Compare the smallest-`t` leg with the base limit.
pub fn limit_check(run: &FamilyRun, problem: &FamilyProblem, force: bool) -> Result<LimitReport> {
    let last = run.last();
    if last.t > 1e-3 * (1.0 + 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "the limit check needs t_min ≤ 1e-3, family stops at {}",
            last.t
        )));
    }
    let (phi0, density) = limit_potential(problem)?;
    let limit_residual = limit_distance(problem, &last.phi, &phi0)?;
    let wp_residual = if density.consistent || force {
        Some(wp_residual(problem, &density)?)
    } else {
        None
    };
    Ok(LimitReport {
        phi0,
        density,
        limit_residual,
        wp_residual,
    })
}

/// `Ric(ω̃) = −i∂∂̄ log(Fc)` for `ω̃ = Fχ`, compared with `ω_WP`.
fn wp_residual(problem: &FamilyProblem, density: &DensityField) -> Result<f64> {
    let g = problem.config.grid;
    let log_density = ScalarField {
        grid: Grid::Base(g),
        values: (0..g.len())
            .map(|i| (density.values[i] * problem.config.chi.ss[i]).ln())
            .collect(),
    };
    let ric = complex_hessian(&log_density)?;
    let wp = wp_form(&problem.config.y_tau)?;
    let mask = problem.config.section.region(REGION_THRESHOLD);
    Ok((0..g.len())
        .filter(|&i| mask[i])
        .fold(0.0f64, |m, i| m.max((-ric.ss[i] - wp.ss[i]).abs())))
}

// ---------------------------------------------------------------------------
// synthetic families

/// Amplitudes of the synthetic volume
/// `Ω ∝ (1 + base cos 2πx₁)(1 + fiber cos 2π(x₃ + x₂))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumePerturbation {
    pub base: f64,
    pub fiber: f64,
}

/// Square torus fibers of unit area over a flat torus base, `χ = i ds∧ds̄`.
pub fn flat_config(n_base: usize) -> Result<FibrationConfig> {
    let g = BaseGrid::torus(n_base, n_base)?;
    let one = ScalarField::constant(Grid::Base(g), 1.0);
    FibrationConfig::synthetic(
        one.clone(),
        HermitianField::base_form(&one)?,
        1.0,
        vec![],
        0.2,
    )
}

/// Flat family with the given volume perturbation. The fiber term has zero
/// fiber mean, so the family is consistent exactly when `base = 0`.
pub fn synthetic_family(
    n_base: usize,
    m_fiber: usize,
    perturbation: VolumePerturbation,
    schedule: Vec<f64>,
) -> Result<FamilyProblem> {
    let VolumePerturbation { base, fiber } = perturbation;
    if !(base.abs() < 1.0 && fiber.abs() < 1.0) {
        return Err(Error::InvalidParameter(
            "perturbation amplitudes must be below 1".into(),
        ));
    }
    let config = flat_config(n_base)?;
    let tg = TotalGrid::new(config.grid, m_fiber, m_fiber)?;
    let volume = tg.sample(|x| {
        (1.0 + base * (2.0 * PI * x[0]).cos()) * (1.0 + fiber * (2.0 * PI * (x[2] + x[1])).cos())
    });
    let mut p = FamilyProblem::new(config, tg, volume, schedule)?;
    p.consistent = base == 0.0;
    Ok(p)
}

/// The product family with flat `Ω`, whose solution is `φ_t ≡ 0`.
pub fn product_family(n_base: usize, m_fiber: usize, schedule: Vec<f64>) -> Result<FamilyProblem> {
    synthetic_family(
        n_base,
        m_fiber,
        VolumePerturbation {
            base: 0.0,
            fiber: 0.0,
        },
        schedule,
    )
}
