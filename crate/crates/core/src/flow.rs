//! Reduced Kähler-Ricci flow `∂φ/∂t = log(e^t (ω_t + i∂∂̄φ)²/Ω) − φ` on a
//! total-space grid, with `ω_t = χ + e^{−t}(ω₀ − χ)`.
//!
//! Time stepping is fourth-order exponential Runge-Kutta (Cox-Matthews).
//! The stiff linear part is the constant-coefficient operator
//! `−1 + β_f Δ_fiber/4 + β_b Δ_base/4` with `β` the largest inverse-metric
//! entries at the start of the step; everything else is explicit. Fiber
//! directions scale like `e^t`, which rules out an explicit scheme with a
//! diffusive step restriction.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fibration::{FibrationConfig, MultipleFiber, REGION_THRESHOLD};
use crate::gke::{solve_gke, GkeProblem, Lambda};
use crate::grid::{
    complex_gradient, complex_hessian, BaseGrid, Grid, Herm2, HermitianField, ScalarField,
    TotalGrid, TotalWavenumbers, MA_FACTOR,
};
use crate::semiflat::{density_from_volume, fiber_integral, semiflat_form};
use crate::spectral::FftNd;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSettings {
    pub t_max: f64,
    /// Requested step; steps are shortened to land on monitor times.
    pub dt: f64,
    pub monitor_every: f64,
    pub snapshot_every: Option<f64>,
    pub max_halvings: usize,
}

impl Default for FlowSettings {
    fn default() -> Self {
        Self {
            t_max: 12.0,
            dt: 0.05,
            monitor_every: 0.5,
            snapshot_every: None,
            max_halvings: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowProblem {
    pub grid: TotalGrid,
    pub config: FibrationConfig,
    /// `f*χ` on the total space.
    pub chi: HermitianField,
    pub omega0: HermitianField,
    /// Density of `Ω` against `(i dz∧dz̄)∧(i ds∧ds̄)`.
    pub volume: ScalarField,
    /// Base coefficient of the flat target form of the Schwarz monitor.
    pub schwarz_form: ScalarField,
    /// Base coefficient of a target form with a negatively curved patch.
    pub patch_form: ScalarField,
    pub settings: FlowSettings,
}

impl FlowProblem {
    /// `ω₀ = χ + ω_SF + i∂∂̄(seed)`.
    pub fn new(
        config: FibrationConfig,
        grid: TotalGrid,
        seed: &ScalarField,
        volume: ScalarField,
    ) -> Result<Self> {
        if seed.grid != Grid::Total(grid) {
            return Err(Error::GridMismatch(
                "seed potential must live on the total grid".into(),
            ));
        }
        let chi = config.chi.pullback(&grid)?;
        let sf = semiflat_form(&config)?.total_form(&grid)?;
        let omega0 = chi.add(&sf)?.add(&complex_hessian(seed)?)?;
        Self::from_forms(config, grid, omega0, volume)
    }

    pub fn from_forms(
        config: FibrationConfig,
        grid: TotalGrid,
        omega0: HermitianField,
        volume: ScalarField,
    ) -> Result<Self> {
        if grid.base != config.grid {
            return Err(Error::GridMismatch(
                "total grid and fibration base differ".into(),
            ));
        }
        if omega0.grid != Grid::Total(grid) || volume.grid != Grid::Total(grid) {
            return Err(Error::GridMismatch(
                "ω₀ and Ω must live on the total grid".into(),
            ));
        }
        omega0.check_positive()?;
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
        let chi = config.chi.pullback(&grid)?;
        let base = config.grid;
        Ok(Self {
            grid,
            config,
            chi,
            omega0,
            volume,
            schwarz_form: ScalarField::constant(Grid::Base(base), 1.0),
            patch_form: base.sample(|x, _| (0.1 * (2.0 * PI * x).cos()).exp()),
            settings: FlowSettings::default(),
        })
    }

    pub fn with_settings(mut self, settings: FlowSettings) -> Self {
        self.settings = settings;
        self
    }

    /// Base mask of the comparison region `{|S|²_h ≥ 0.3}`.
    pub fn region(&self) -> Vec<bool> {
        self.config.section.region(REGION_THRESHOLD)
    }
}

/// `ω_t = (1 − e^{−t})χ + e^{−t}ω₀`.
pub fn reference_metric(problem: &FlowProblem, t: f64) -> Result<HermitianField> {
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "time must be nonnegative, got {t}"
        )));
    }
    let e = (-t).exp();
    problem.chi.axpby(1.0 - e, &problem.omega0, e)
}

#[derive(Debug, Clone)]
pub struct FlowState {
    pub t: f64,
    pub phi: ScalarField,
    /// `ω_t + i∂∂̄φ`.
    pub omega: HermitianField,
    pub dphi: ScalarField,
    /// Last accepted step.
    pub dt: f64,
}

impl FlowState {
    pub fn initial(problem: &FlowProblem) -> Result<Self> {
        Self::at(problem, 0.0, ScalarField::zeros(Grid::Total(problem.grid)))
    }

    pub fn at(problem: &FlowProblem, t: f64, phi: ScalarField) -> Result<Self> {
        let (omega, dphi) = evaluate(problem, t, &phi)?;
        Ok(Self {
            t,
            phi,
            omega,
            dphi,
            dt: 0.0,
        })
    }
}

/// `(ω, ∂φ/∂t)` at `(t, φ)`; fails where `ω` is not positive.
fn evaluate(
    problem: &FlowProblem,
    t: f64,
    phi: &ScalarField,
) -> Result<(HermitianField, ScalarField)> {
    if phi.grid != Grid::Total(problem.grid) {
        return Err(Error::GridMismatch("φ must live on the total grid".into()));
    }
    let omega = reference_metric(problem, t)?.add(&complex_hessian(phi)?)?;
    omega.check_positive()?;
    let ln_j = MA_FACTOR.ln();
    let values = (0..phi.len())
        .map(|i| t + ln_j + omega.at(i).det().ln() - problem.volume.values[i].ln() - phi.values[i])
        .collect();
    let rhs = ScalarField {
        grid: phi.grid,
        values,
    };
    rhs.check_finite()?;
    Ok((omega, rhs))
}

/// Right-hand side of the reduced flow at the state's own `(t, φ)`.
pub fn flow_rhs(state: &FlowState, problem: &FlowProblem) -> Result<ScalarField> {
    Ok(evaluate(problem, state.t, &state.phi)?.1)
}

/// `φ₁, φ₂, φ₃` of the exponential integrator.
fn phi_functions(z: f64) -> (f64, f64, f64) {
    if z.abs() < 1.0 {
        // φ_k(z) = Σ_j z^j/(j+k)!
        let mut p = [0.0; 3];
        for (k, slot) in p.iter_mut().enumerate() {
            let mut term = 1.0;
            for m in 1..=k + 1 {
                term /= m as f64;
            }
            let mut acc = 0.0;
            for j in 0..24 {
                acc += term;
                term *= z / (j + k + 2) as f64;
            }
            *slot = acc;
        }
        (p[0], p[1], p[2])
    } else {
        let e = z.exp();
        let p1 = (e - 1.0) / z;
        let p2 = (e - 1.0 - z) / (z * z);
        let p3 = (e - 1.0 - z - 0.5 * z * z) / (z * z * z);
        (p1, p2, p3)
    }
}

struct EtdCoefficients {
    l: Vec<f64>,
    e: Vec<f64>,
    e2: Vec<f64>,
    q: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    f3: Vec<f64>,
}

/// Diagonal symbol `−1 − π²(β_f|k_f|² + β_b|k_b|²)` with `β` the largest
/// inverse-metric entries of `omega`.
fn linear_symbol(tg: &TotalGrid, omega: &HermitianField) -> Vec<f64> {
    let (mut beta_f, mut beta_b) = (0.0f64, 0.0f64);
    for i in 0..omega.len() {
        let inv = omega.at(i).inverse();
        beta_f = beta_f.max(inv.zz);
        beta_b = beta_b.max(inv.ss);
    }
    let wn = TotalWavenumbers::new(tg);
    (0..tg.len())
        .map(|idx| {
            let k = wn.at(idx);
            -1.0 - PI
                * PI
                * (beta_f * (k[2] * k[2] + k[3] * k[3]) + beta_b * (k[0] * k[0] + k[1] * k[1]))
        })
        .collect()
}

fn etd_coefficients(tg: &TotalGrid, omega: &HermitianField, h: f64) -> EtdCoefficients {
    let symbol = linear_symbol(tg, omega);
    let n = tg.len();
    let mut c = EtdCoefficients {
        l: vec![0.0; n],
        e: vec![0.0; n],
        e2: vec![0.0; n],
        q: vec![0.0; n],
        f1: vec![0.0; n],
        f2: vec![0.0; n],
        f3: vec![0.0; n],
    };
    for (idx, &l) in symbol.iter().enumerate() {
        let z = l * h;
        let (p1, p2, p3) = phi_functions(z);
        let (half, _, _) = phi_functions(0.5 * z);
        c.l[idx] = l;
        c.e[idx] = z.exp();
        c.e2[idx] = (0.5 * z).exp();
        c.q[idx] = 0.5 * h * half;
        c.f1[idx] = h * (p1 - 3.0 * p2 + 4.0 * p3);
        c.f2[idx] = h * (p2 - 2.0 * p3);
        c.f3[idx] = h * (-p2 + 4.0 * p3);
    }
    c
}

/// One exponential RK4 step of length `h` from `state`.
fn etdrk4(problem: &FlowProblem, state: &FlowState, h: f64) -> Result<ScalarField> {
    let tg = problem.grid;
    let plan = FftNd::shared(&tg.dims());
    let co = etd_coefficients(&tg, &state.omega, h);
    let n = tg.len();
    let fft = |v: &[f64]| {
        let mut b: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        plan.forward(&mut b);
        b
    };
    let real = |spec: &[Complex64]| -> ScalarField {
        let mut b = spec.to_vec();
        plan.inverse(&mut b);
        ScalarField {
            grid: Grid::Total(tg),
            values: b.iter().map(|c| c.re).collect(),
        }
    };
    let nonlinear = |rhs: &ScalarField, spec: &[Complex64]| -> Vec<Complex64> {
        let mut r = fft(&rhs.values);
        for i in 0..n {
            r[i] -= co.l[i] * spec[i];
        }
        r
    };
    let t = state.t;
    let u = fft(&state.phi.values);
    let nu = nonlinear(&state.dphi, &u);
    let a: Vec<Complex64> = (0..n).map(|i| co.e2[i] * u[i] + co.q[i] * nu[i]).collect();
    let (_, ra) = evaluate(problem, t + 0.5 * h, &real(&a))?;
    let na = nonlinear(&ra, &a);
    let b: Vec<Complex64> = (0..n).map(|i| co.e2[i] * u[i] + co.q[i] * na[i]).collect();
    let (_, rb) = evaluate(problem, t + 0.5 * h, &real(&b))?;
    let nb = nonlinear(&rb, &b);
    let c: Vec<Complex64> = (0..n)
        .map(|i| co.e2[i] * a[i] + co.q[i] * (2.0 * nb[i] - nu[i]))
        .collect();
    let (_, rc) = evaluate(problem, t + h, &real(&c))?;
    let nc = nonlinear(&rc, &c);
    let next: Vec<Complex64> = (0..n)
        .map(|i| {
            co.e[i] * u[i] + co.f1[i] * nu[i] + 2.0 * co.f2[i] * (na[i] + nb[i]) + co.f3[i] * nc[i]
        })
        .collect();
    Ok(real(&next))
}

/// Modes with `|L h|` at least this large count as stiff.
const STIFF_THRESHOLD: f64 = 20.0;
const STIFF_SWEEPS: usize = 6;

/// Implicit-Euler correction on stiff modes: a few diagonally preconditioned
/// sweeps on `rhs(t, u) = (u − u₀)/h`, restricted to modes with
/// `|L h| ≥ STIFF_THRESHOLD`.
///
/// The explicit remainder of the exponential step carries the mismatch
/// between the frozen symbol and the actual variable, growing coefficients.
/// On slaved fiber modes that error is multiplied by the stiffness, which
/// grows like `e^t`, and it would dominate `∂φ/∂t` and every curvature
/// monitor at late times.
fn relax_stiff_modes(
    problem: &FlowProblem,
    start: &FlowState,
    t: f64,
    h: f64,
    mut phi: ScalarField,
) -> Result<(ScalarField, HermitianField, ScalarField)> {
    let tg = problem.grid;
    let plan = FftNd::shared(&tg.dims());
    let (mut omega, mut rhs) = evaluate(problem, t, &phi)?;
    let symbol = linear_symbol(&tg, &omega);
    let gain: Vec<f64> = symbol
        .iter()
        .map(|&l| {
            if (l * h).abs() >= STIFF_THRESHOLD {
                -1.0 / (l - 1.0 / h)
            } else {
                0.0
            }
        })
        .collect();
    if gain.iter().all(|&g| g == 0.0) {
        return Ok((phi, omega, rhs));
    }
    for _ in 0..STIFF_SWEEPS {
        let mut r: Vec<Complex64> = (0..phi.len())
            .map(|i| {
                Complex64::new(
                    rhs.values[i] - (phi.values[i] - start.phi.values[i]) / h,
                    0.0,
                )
            })
            .collect();
        plan.forward(&mut r);
        for (v, g) in r.iter_mut().zip(&gain) {
            *v *= *g;
        }
        plan.inverse(&mut r);
        for (p, d) in phi.values.iter_mut().zip(&r) {
            *p += d.re;
        }
        let next = evaluate(problem, t, &phi)?;
        omega = next.0;
        rhs = next.1;
    }
    Ok((phi, omega, rhs))
}

/// Accepted step and the number of halvings it took.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: FlowState,
    pub halvings: usize,
}

/// Advance towards `t + h`, halving on positivity loss. The returned state
/// reaches `t + h` exactly only when no halving was needed.
pub fn step(state: &FlowState, problem: &FlowProblem, h: f64) -> Result<StepOutcome> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "step must be positive, got {h}"
        )));
    }
    let target = state.t + h;
    let mut dt = h;
    let mut last_err = None;
    for halvings in 0..=problem.settings.max_halvings {
        let attempt = etdrk4(problem, state, dt).and_then(|phi| {
            let t = if halvings == 0 { target } else { state.t + dt };
            let (phi, omega, dphi) = relax_stiff_modes(problem, state, t, dt, phi)?;
            Ok(FlowState {
                t,
                phi,
                omega,
                dphi,
                dt,
            })
        });
        match attempt {
            Ok(s) => return Ok(StepOutcome { state: s, halvings }),
            Err(e) => last_err = Some(e),
        }
        dt *= 0.5;
    }
    Err(Error::FlowAbort {
        t: state.t,
        halvings: problem.settings.max_halvings,
        source: Box::new(last_err.expect("at least one attempt")),
    })
}

/// Column names of [`MonitorRecord::values`], in order.
pub const MONITOR_COLUMNS: [&str; 27] = [
    "t",
    "phi_sup",
    "phi_inf",
    "dphi_sup",
    "dphi_inf",
    "u_min",
    "u_max",
    "tr_chi_sup",
    "tr_omega0_sup",
    "fiber_area_ratio_min",
    "fiber_area_ratio_max",
    "fiber_osc_sup",
    "lap_s_min",
    "lap_s_max",
    "r_min",
    "r_max",
    "r_identity_err",
    "twist_min",
    "twist_max",
    "schwarz_residual",
    "u_s_sup",
    "patch_u_s_max",
    "grad_dphi_sup",
    "dphi_region_sup",
    "phi_limit_dist",
    "fiber_norm_sup",
    "dt",
];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MonitorRecord {
    pub t: f64,
    pub phi_sup: f64,
    pub phi_inf: f64,
    pub dphi_sup: f64,
    pub dphi_inf: f64,
    /// `u = ∂φ/∂t + φ = log(e^t ω²/Ω)`.
    pub u_min: f64,
    pub u_max: f64,
    pub tr_chi_sup: f64,
    pub tr_omega0_sup: f64,
    /// `∫_fiber ω / (e^{−t}A)`.
    pub fiber_area_ratio_min: f64,
    pub fiber_area_ratio_max: f64,
    /// `sup_s osc_{X_s} φ`.
    pub fiber_osc_sup: f64,
    /// `∂_s∂_s̄φ / c`.
    pub lap_s_min: f64,
    pub lap_s_max: f64,
    /// Scalar curvature `−Δ_ω u − tr_ω i∂∂̄ log Ω`.
    pub r_min: f64,
    pub r_max: f64,
    /// Sup distance to `−tr_ω i∂∂̄ log det ω`.
    pub r_identity_err: f64,
    /// `tr_ω(χ − i∂∂̄ log Ω)`.
    pub twist_min: f64,
    pub twist_max: f64,
    pub schwarz_residual: f64,
    pub u_s_sup: f64,
    pub patch_u_s_max: f64,
    /// `|∇_{g₀}∂φ/∂t|` on the comparison region.
    pub grad_dphi_sup: f64,
    pub dphi_region_sup: f64,
    /// `sup|φ − f*φ_∞|` on the comparison region.
    pub phi_limit_dist: f64,
    /// `sup g_zz̄` on the comparison region.
    pub fiber_norm_sup: f64,
    pub dt: f64,
}

impl MonitorRecord {
    pub fn values(&self) -> [f64; 27] {
        [
            self.t,
            self.phi_sup,
            self.phi_inf,
            self.dphi_sup,
            self.dphi_inf,
            self.u_min,
            self.u_max,
            self.tr_chi_sup,
            self.tr_omega0_sup,
            self.fiber_area_ratio_min,
            self.fiber_area_ratio_max,
            self.fiber_osc_sup,
            self.lap_s_min,
            self.lap_s_max,
            self.r_min,
            self.r_max,
            self.r_identity_err,
            self.twist_min,
            self.twist_max,
            self.schwarz_residual,
            self.u_s_sup,
            self.patch_u_s_max,
            self.grad_dphi_sup,
            self.dphi_region_sup,
            self.phi_limit_dist,
            self.fiber_norm_sup,
            self.dt,
        ]
    }

    pub fn from_values(v: &[f64]) -> Result<Self> {
        if v.len() != MONITOR_COLUMNS.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} monitor values, got {}",
                MONITOR_COLUMNS.len(),
                v.len()
            )));
        }
        Ok(Self {
            t: v[0],
            phi_sup: v[1],
            phi_inf: v[2],
            dphi_sup: v[3],
            dphi_inf: v[4],
            u_min: v[5],
            u_max: v[6],
            tr_chi_sup: v[7],
            tr_omega0_sup: v[8],
            fiber_area_ratio_min: v[9],
            fiber_area_ratio_max: v[10],
            fiber_osc_sup: v[11],
            lap_s_min: v[12],
            lap_s_max: v[13],
            r_min: v[14],
            r_max: v[15],
            r_identity_err: v[16],
            twist_min: v[17],
            twist_max: v[18],
            schwarz_residual: v[19],
            u_s_sup: v[20],
            patch_u_s_max: v[21],
            grad_dphi_sup: v[22],
            dphi_region_sup: v[23],
            phi_limit_dist: v[24],
            fiber_norm_sup: v[25],
            dt: v[26],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

fn range(v: impl Iterator<Item = f64>) -> (f64, f64) {
    v.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
        (lo.min(x), hi.max(x))
    })
}

/// Total-space version of a base mask.
fn total_mask(tg: &TotalGrid, base: &[bool]) -> Vec<bool> {
    (0..tg.len()).map(|i| base[tg.base_index(i)]).collect()
}

/// `i∂∂̄ log c` of a base coefficient and the curvature weight
/// `κ = max(0, ∂∂̄ log c / c)`.
fn curvature_weight(c: &ScalarField) -> Result<(Vec<f64>, Vec<f64>)> {
    let h = complex_hessian(&c.map(f64::ln))?;
    let kappa =
        h.ss.iter()
            .zip(&c.values)
            .map(|(d, c)| (d / c).max(0.0))
            .collect();
    Ok((h.ss, kappa))
}

/// `tr_ω(f*χ_b)` for a base coefficient `c_b`.
fn target_trace(tg: &TotalGrid, omega: &HermitianField, c_b: &ScalarField) -> Vec<f64> {
    (0..tg.len())
        .map(|i| omega.at(i).inverse().ss * c_b.values[tg.base_index(i)])
        .collect()
}

/// `v^H A v` for the row `v = (g^{sz̄}, g^{ss̄})` of the inverse metric.
fn inverse_row_quad(g: &Herm2, a: &Herm2) -> f64 {
    let inv = g.inverse();
    let (v0, v1) = (inv.zs, Complex64::new(inv.ss, 0.0));
    a.zz * v0.norm_sqr() + a.ss * v1.norm_sqr() + 2.0 * (v0.conj() * a.zs * v1).re
}

/// Pointwise `du_S/dt − Δ_ω u_S − u_S + κ u_S²` for `u_S = tr_ω(f*χ_b)`,
/// with the exact time derivative `−tr(ω⁻¹ ∂_tω ω⁻¹ χ_b)`.
pub fn schwarz_residual_field(
    state: &FlowState,
    problem: &FlowProblem,
    c_b: &ScalarField,
) -> Result<(ScalarField, Vec<f64>)> {
    let tg = problem.grid;
    let (_, kappa) = curvature_weight(c_b)?;
    let u_s = ScalarField {
        grid: Grid::Total(tg),
        values: target_trace(&tg, &state.omega, c_b),
    };
    let e = (-state.t).exp();
    let domega = problem
        .chi
        .axpby(e, &problem.omega0, -e)?
        .add(&complex_hessian(&state.dphi)?)?;
    let hu = complex_hessian(&u_s)?;
    let values = (0..tg.len())
        .map(|i| {
            let g = state.omega.at(i);
            let b = c_b.values[tg.base_index(i)];
            let du = -b * inverse_row_quad(&g, &domega.at(i));
            let lap = g.trace_of(&hu.at(i));
            let u = u_s.values[i];
            du - lap - u + kappa[tg.base_index(i)] * u * u
        })
        .collect();
    Ok((
        ScalarField {
            grid: Grid::Total(tg),
            values,
        },
        u_s.values,
    ))
}

/// Max of the Schwarz residual over points where `χ_b` has nonpositive
/// curvature.
pub fn schwarz_residual(
    state: &FlowState,
    problem: &FlowProblem,
    c_b: &ScalarField,
) -> Result<f64> {
    let (ddlog, _) = curvature_weight(c_b)?;
    let marked: Vec<bool> = ddlog.iter().map(|&d| d >= -1e-12).collect();
    if !marked.iter().any(|&m| m) {
        return Err(Error::InvalidParameter(
            "χ_b has no nonpositively curved region".into(),
        ));
    }
    let (r, _) = schwarz_residual_field(state, problem, c_b)?;
    let mask = total_mask(&problem.grid, &marked);
    Ok(r.values
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .fold(f64::NEG_INFINITY, |a, (v, _)| a.max(*v)))
}

/// Patch of the designated negatively curved target, `{κ ≥ κ_max/2}`, and
/// the curvature bound `K = κ_max/2` that holds on it.
pub fn patch_geometry(problem: &FlowProblem) -> Result<(Vec<bool>, f64)> {
    let (_, kappa) = curvature_weight(&problem.patch_form)?;
    let kmax = kappa.iter().fold(0.0f64, |m, &k| m.max(k));
    if !(kmax > 0.0) {
        return Err(Error::InvalidParameter(
            "patch form has no negatively curved region".into(),
        ));
    }
    Ok((kappa.iter().map(|&k| k >= 0.5 * kmax).collect(), 0.5 * kmax))
}

/// Evaluate every monitored quantity at an accepted state.
pub fn monitors(
    state: &FlowState,
    problem: &FlowProblem,
    phi_inf: Option<&ScalarField>,
) -> Result<MonitorRecord> {
    let tg = problem.grid;
    let n = tg.len();
    let omega = &state.omega;
    let phi = &state.phi;
    let region = total_mask(&tg, &problem.region());
    let (phi_inf_lo, phi_sup) = range(phi.values.iter().copied());
    let (dphi_inf, dphi_sup) = range(state.dphi.values.iter().copied());
    let u: Vec<f64> = (0..n)
        .map(|i| state.dphi.values[i] + phi.values[i])
        .collect();
    let (u_min, u_max) = range(u.iter().copied());
    let tr_chi: Vec<f64> = (0..n)
        .map(|i| omega.at(i).trace_of(&problem.chi.at(i)))
        .collect();
    let tr_chi_sup = tr_chi.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let tr_omega0_sup = (0..n)
        .map(|i| problem.omega0.at(i).trace_of(&omega.at(i)))
        .fold(f64::NEG_INFINITY, f64::max);

    let area = fiber_integral(omega, &problem.config.y_tau)?;
    let expected = (-state.t).exp() * problem.config.area;
    let (ratio_min, ratio_max) = range(area.values.iter().map(|a| a / expected));

    let fl = tg.fiber_len();
    let fiber_osc_sup = phi
        .values
        .chunks(fl)
        .map(|c| {
            let (lo, hi) = range(c.iter().copied());
            hi - lo
        })
        .fold(0.0, f64::max);

    let hphi = complex_hessian(phi)?;
    let (lap_s_min, lap_s_max) = range((0..n).map(|i| hphi.ss[i] / problem.chi.ss[i]));

    let u_field = ScalarField {
        grid: Grid::Total(tg),
        values: u,
    };
    let hu = complex_hessian(&u_field)?;
    let hlog_vol = complex_hessian(&problem.volume.map(f64::ln))?;
    let logdet = ScalarField {
        grid: Grid::Total(tg),
        values: (0..n).map(|i| omega.at(i).det().ln()).collect(),
    };
    let hlogdet = complex_hessian(&logdet)?;
    let mut r = vec![0.0; n];
    let mut r_identity_err: f64 = 0.0;
    for i in 0..n {
        let g = omega.at(i);
        r[i] = -g.trace_of(&hu.at(i)) - g.trace_of(&hlog_vol.at(i));
        let direct = -g.trace_of(&hlogdet.at(i));
        r_identity_err = r_identity_err.max((direct - r[i]).abs());
    }
    let (r_min, r_max) = range(r.iter().copied());
    let (twist_min, twist_max) =
        range((0..n).map(|i| tr_chi[i] - omega.at(i).trace_of(&hlog_vol.at(i))));

    let schwarz = schwarz_residual(state, problem, &problem.schwarz_form)?;
    let u_s_sup = target_trace(&tg, omega, &problem.schwarz_form)
        .into_iter()
        .fold(0.0, f64::max);
    let (patch, _) = patch_geometry(problem)?;
    let patch_mask = total_mask(&tg, &patch);
    let patch_u = target_trace(&tg, omega, &problem.patch_form);
    let patch_u_s_max = patch_u
        .iter()
        .zip(&patch_mask)
        .filter(|(_, &m)| m)
        .fold(0.0f64, |a, (v, _)| a.max(*v));

    let (dz, ds) = complex_gradient(&state.dphi)?;
    let mut grad_sup: f64 = 0.0;
    let mut dphi_region_sup: f64 = 0.0;
    let mut limit: f64 = 0.0;
    let mut fiber_norm_sup: f64 = 0.0;
    for i in 0..n {
        if !region[i] {
            continue;
        }
        grad_sup = grad_sup.max(
            problem
                .omega0
                .at(i)
                .covector_norm_sqr(dz[i], ds[i])
                .max(0.0)
                .sqrt(),
        );
        dphi_region_sup = dphi_region_sup.max(state.dphi.values[i].abs());
        let reference = phi_inf.map_or(0.0, |p| p.values[tg.base_index(i)]);
        limit = limit.max((phi.values[i] - reference).abs());
        fiber_norm_sup = fiber_norm_sup.max(omega.zz[i]);
    }
    Ok(MonitorRecord {
        t: state.t,
        phi_sup,
        phi_inf: phi_inf_lo,
        dphi_sup,
        dphi_inf,
        u_min,
        u_max,
        tr_chi_sup,
        tr_omega0_sup,
        fiber_area_ratio_min: ratio_min,
        fiber_area_ratio_max: ratio_max,
        fiber_osc_sup,
        lap_s_min,
        lap_s_max,
        r_min,
        r_max,
        r_identity_err,
        twist_min,
        twist_max,
        schwarz_residual: schwarz,
        u_s_sup,
        patch_u_s_max,
        grad_dphi_sup: grad_sup,
        dphi_region_sup,
        phi_limit_dist: limit,
        fiber_norm_sup,
        dt: state.dt,
    })
}

/// Companion limit problem `Δ_χφ = Fe^φ − 1` with `F` from the fiber-averaged `Ω`.
pub fn limit_problem(problem: &FlowProblem) -> Result<GkeProblem> {
    let sf = semiflat_form(&problem.config)?;
    let f = density_from_volume(&problem.volume, &sf, &problem.config.chi)?;
    GkeProblem::new(problem.config.chi.clone(), f, Lambda::MinusOne)
}

#[derive(Debug, Clone)]
pub struct FlowRun {
    pub series: Vec<MonitorRecord>,
    pub snapshots: Vec<(f64, ScalarField)>,
    pub final_state: FlowState,
    pub phi_inf: ScalarField,
    pub steps: usize,
    pub halvings: usize,
    /// Largest `|∫_fiber ω/(e^{−t}A) − 1|` over all accepted steps.
    pub fiber_area_err: f64,
    /// Slope of `log sup g_zz̄` over the last four time units, when sampled.
    pub decay_rate: Option<f64>,
}

fn fiber_area_error(state: &FlowState, problem: &FlowProblem) -> Result<f64> {
    let area = fiber_integral(&state.omega, &problem.config.y_tau)?;
    let expected = (-state.t).exp() * problem.config.area;
    Ok(area
        .values
        .iter()
        .fold(0.0, |m, a| m.max((a / expected - 1.0).abs())))
}

/// Integrate to `t_max`, recording monitors on the configured cadence.
pub fn run_flow(problem: &FlowProblem) -> Result<FlowRun> {
    let s = problem.settings;
    if !(s.t_max > 0.0 && s.dt > 0.0 && s.monitor_every > 0.0) {
        return Err(Error::InvalidParameter(
            "t_max, dt and the monitor cadence must be positive".into(),
        ));
    }
    let phi_inf = solve_gke(&limit_problem(problem)?)?.phi;
    let mut state = FlowState::initial(problem)?;
    let mut series = vec![monitors(&state, problem, Some(&phi_inf))?];
    let mut snapshots = vec![];
    if s.snapshot_every.is_some() {
        snapshots.push((0.0, state.phi.clone()));
    }
    let mut fiber_area_err = fiber_area_error(&state, problem)?;
    let (mut steps, mut halvings) = (0, 0);
    let marks = (s.t_max / s.monitor_every).ceil() as usize;
    let mark_time = |k: usize| (k as f64 * s.monitor_every).min(s.t_max);
    let mut next_mark = 1;
    let mut next_snap = 1;
    while state.t < s.t_max && next_mark <= marks {
        let target = mark_time(next_mark);
        let h = s.dt.min(target - state.t);
        let out = step(&state, problem, h)?;
        steps += 1;
        halvings += out.halvings;
        state = out.state;
        if out.halvings == 0 && (target - state.t).abs() <= 1e-12 * target.max(1.0) {
            state.t = target;
        }
        fiber_area_err = fiber_area_err.max(fiber_area_error(&state, problem)?);
        if state.t == target {
            series.push(monitors(&state, problem, Some(&phi_inf))?);
            next_mark += 1;
        }
        if let Some(every) = s.snapshot_every {
            if state.t >= next_snap as f64 * every - 1e-12 {
                snapshots.push((state.t, state.phi.clone()));
                next_snap += 1;
            }
        }
    }
    let decay_rate = fit_decay_rate(&series, s.t_max - 4.0, s.t_max).ok();
    Ok(FlowRun {
        series,
        snapshots,
        final_state: state,
        phi_inf,
        steps,
        halvings,
        fiber_area_err,
        decay_rate,
    })
}

/// Least-squares slope of `log fiber_norm_sup` against `t` on `[t0, t1]`.
pub fn fit_decay_rate(series: &[MonitorRecord], t0: f64, t1: f64) -> Result<f64> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|r| r.t >= t0 - 1e-12 && r.t <= t1 + 1e-12 && r.fiber_norm_sup > 0.0)
        .map(|r| (r.t, r.fiber_norm_sup.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} samples in [{t0}, {t1}]",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    Ok(num / den)
}

/// Comparison of the measured patch maximum of `u_S` with `1/(K − Ce^{−t})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchwarzBound {
    pub k: f64,
    pub c: f64,
    /// Smallest `bound − u` over the samples (positive when dominated).
    pub min_margin: f64,
    pub dominated: bool,
}

/// Fit `C = max(0, max (K − 1/u)e^t)` on the first half of the samples and
/// check the resulting curve against all of them.
pub fn schwarz_bound(series: &[MonitorRecord], k: f64) -> Result<SchwarzBound> {
    if series.len() < 2 {
        return Err(Error::InsufficientData("need at least two samples".into()));
    }
    let half = series.len().div_ceil(2);
    let c = series[..half]
        .iter()
        .filter(|r| r.patch_u_s_max > 0.0)
        .map(|r| (k - 1.0 / r.patch_u_s_max) * r.t.exp())
        .fold(0.0f64, f64::max);
    let mut min_margin = f64::INFINITY;
    for r in series {
        let den = k - c * (-r.t).exp();
        let bound = if den > 0.0 { 1.0 / den } else { f64::INFINITY };
        min_margin = min_margin.min(bound - r.patch_u_s_max);
    }
    Ok(SchwarzBound {
        k,
        c,
        min_margin,
        dominated: min_margin >= 0.0,
    })
}

// ---------------------------------------------------------------------------
// reference model

/// Marked point and smoothing scale of the reference model.
pub const REFERENCE_POINT: (f64, f64) = (0.5, 0.5);
pub const REFERENCE_EPS: f64 = 0.2;

/// Synthetic torus model: `Im τ = 1 + 0.1 cos 2πx₁`, `χ = 5(1 + 0.1 sin 2πx₂)`,
/// unit fiber area.
pub fn reference_config(n_base: usize) -> Result<FibrationConfig> {
    let g = BaseGrid::torus(n_base, n_base)?;
    let y = g.sample(|x, _| 1.0 + 0.1 * (2.0 * PI * x).cos());
    let c = g.sample(|_, y| 5.0 * (1.0 + 0.1 * (2.0 * PI * y).sin()));
    let point = Complex64::new(REFERENCE_POINT.0, REFERENCE_POINT.1);
    FibrationConfig::synthetic(
        y,
        HermitianField::base_form(&c)?,
        1.0,
        vec![MultipleFiber { point, m: 1 }],
        REFERENCE_EPS,
    )
}

/// Base density `F = exp(0.1 cos 2π(x₁ + x₂))` of the reference model.
pub fn reference_density(g: &BaseGrid) -> ScalarField {
    g.sample(|x, y| (0.1 * (2.0 * PI * (x + y)).cos()).exp())
}

/// `Ω = 2 a c F`, constant along fibers.
pub fn reference_volume(config: &FibrationConfig, tg: &TotalGrid) -> Result<ScalarField> {
    let sf = semiflat_form(config)?;
    let f = reference_density(&config.grid);
    let base: Vec<f64> = (0..config.grid.len())
        .map(|i| 2.0 * sf.a.values[i] * config.chi.ss[i] * f.values[i])
        .collect();
    ScalarField {
        grid: Grid::Base(config.grid),
        values: base,
    }
    .pullback(tg)
}

/// Initial potential seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Seed {
    Zero,
    /// Band-limited random potential from the given RNG seed.
    Random(u64),
    /// Fiber-dependent potential.
    Fiber,
}

/// Seed potential scaled so that its Hessian has spectral norm at most
/// `0.1 ×` the smallest eigenvalue of `χ + ω_SF`.
pub fn seed_potential(seed: Seed, config: &FibrationConfig, tg: &TotalGrid) -> Result<ScalarField> {
    let raw = match seed {
        Seed::Zero => return Ok(ScalarField::zeros(Grid::Total(*tg))),
        Seed::Random(s) => {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let mut modes = vec![];
            for _ in 0..8 {
                let k: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-2i32..=2) as f64);
                modes.push((k, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0 * PI)));
            }
            tg.sample(|x| {
                modes
                    .iter()
                    .map(|(k, a, p)| {
                        a * (2.0 * PI * (k[0] * x[0] + k[1] * x[1] + k[2] * x[2] + k[3] * x[3]) + p)
                            .cos()
                    })
                    .sum()
            })
        }
        Seed::Fiber => tg.sample(|x| {
            (2.0 * PI * x[2]).cos() * (1.0 + 0.5 * (2.0 * PI * x[0]).sin())
                + 0.5 * (2.0 * PI * (x[3] + x[1])).sin()
        }),
    };
    let h = complex_hessian(&raw)?;
    let norm = (0..h.len())
        .map(|i| {
            let m = h.at(i);
            m.max_eigenvalue().abs().max(m.min_eigenvalue().abs())
        })
        .fold(0.0, f64::max);
    let sf = semiflat_form(config)?;
    let margin = (0..config.grid.len())
        .map(|i| sf.a.values[i].min(config.chi.ss[i]))
        .fold(f64::INFINITY, f64::min);
    if norm == 0.0 {
        return Ok(raw);
    }
    let scale = 0.1 * margin / norm;
    Ok(raw.map(|v| scale * v))
}

/// Reference flow problem at the given resolutions.
pub fn reference_problem(n_base: usize, m_fiber: usize, seed: Seed) -> Result<FlowProblem> {
    let config = reference_config(n_base)?;
    let tg = TotalGrid::new(config.grid, m_fiber, m_fiber)?;
    let volume = reference_volume(&config, &tg)?;
    let seed = seed_potential(seed, &config, &tg)?;
    FlowProblem::new(config, tg, &seed, volume)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_product(beta: f64) -> FlowProblem {
        let g = BaseGrid::torus(8, 8).unwrap();
        let y = ScalarField::constant(Grid::Base(g), 1.0);
        let chi = HermitianField::base_form(&ScalarField::constant(Grid::Base(g), 1.0)).unwrap();
        let cfg = FibrationConfig::synthetic(y, chi, 1.0, vec![], 0.2).unwrap();
        let tg = TotalGrid::new(g, 8, 8).unwrap();
        let chi_t = cfg.chi.pullback(&tg).unwrap();
        let sf = semiflat_form(&cfg).unwrap().total_form(&tg).unwrap();
        let omega0 = chi_t.scale(1.0 + beta).add(&sf).unwrap();
        // Ω = 2 a c with a = 1/2, c = 1
        let vol = ScalarField::constant(Grid::Total(tg), 1.0);
        FlowProblem::from_forms(cfg, tg, omega0, vol).unwrap()
    }

    #[test]
    fn reference_metric_examples() {
        let p = reference_problem(8, 8, Seed::Random(3)).unwrap();
        assert_eq!(reference_metric(&p, 0.0).unwrap(), p.omega0);
        let half = reference_metric(&p, 2f64.ln()).unwrap();
        let avg = p.chi.axpby(0.5, &p.omega0, 0.5).unwrap();
        for i in 0..half.len() {
            assert!(
                (half.zz[i] - avg.zz[i]).abs() < 1e-15 && (half.ss[i] - avg.ss[i]).abs() < 1e-15
            );
        }
        let late = reference_metric(&p, 60.0).unwrap();
        assert!(late
            .ss
            .iter()
            .zip(&p.chi.ss)
            .all(|(a, b)| (a - b).abs() < 1e-20f64.max(1e-12 * b)));
    }

    #[test]
    fn phi_functions_continuous_at_switch() {
        for z in [-1.0 - 1e-12, -1.0 + 1e-12] {
            let (a, b, c) = phi_functions(z);
            assert!((a - (1.0 - (-1f64).exp())).abs() < 1e-10);
            assert!(b > 0.0 && c > 0.0);
        }
        let (a, b, c) = phi_functions(0.0);
        assert_eq!((a, b, c), (1.0, 0.5, 1.0 / 6.0));
    }

    #[test]
    fn fixed_point_is_preserved() {
        let p = flat_product(0.0);
        let s = FlowState::initial(&p).unwrap();
        assert!(s.dphi.sup_abs() < 1e-15);
        let out = step(&s, &p, 0.5).unwrap();
        assert!(out.state.phi.sup_abs() < 1e-14);
    }

    #[test]
    fn rhs_matches_pointwise_oracle() {
        let p = reference_problem(8, 8, Seed::Random(7)).unwrap();
        let tg = p.grid;
        let phi = seed_potential(Seed::Random(11), &p.config, &tg).unwrap();
        let s = FlowState::at(&p, 0.7, phi.clone()).unwrap();
        let rhs = flow_rhs(&s, &p).unwrap();
        let omega = reference_metric(&p, 0.7)
            .unwrap()
            .add(&complex_hessian(&phi).unwrap())
            .unwrap();
        let dens = crate::grid::ma_density(&omega);
        for i in 0..tg.len() {
            let direct =
                (0.7f64.exp() * 2.0 * dens.values[i] / p.volume.values[i]).ln() - phi.values[i];
            assert!((rhs.values[i] - direct).abs() < 1e-13);
        }
    }

    #[test]
    fn spatially_constant_flow_matches_scalar_ode() {
        let beta = 0.5;
        let p = flat_product(beta).with_settings(FlowSettings {
            t_max: 2.0,
            dt: 0.02,
            ..FlowSettings::default()
        });
        let mut s = FlowState::initial(&p).unwrap();
        while s.t < 2.0 - 1e-12 {
            s = step(&s, &p, 0.02f64.min(2.0 - s.t)).unwrap().state;
        }
        // independent fine-step classical RK4 for φ' = log(1 + βe^{−t}) − φ
        let f = |t: f64, y: f64| (1.0 + beta * (-t).exp()).ln() - y;
        let (mut t, mut y, h) = (0.0, 0.0, 1e-3);
        for _ in 0..2000 {
            let k1 = f(t, y);
            let k2 = f(t + h / 2.0, y + h / 2.0 * k1);
            let k3 = f(t + h / 2.0, y + h / 2.0 * k2);
            let k4 = f(t + h, y + h * k3);
            y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t += h;
        }
        let err = s
            .phi
            .values
            .iter()
            .fold(0.0f64, |m, v| m.max((v - y).abs()));
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn step_doubling_order() {
        // non-stiff (spatially constant) dynamics: local error O(h⁵)
        let p = flat_product(0.5);
        let s0 = FlowState::initial(&p).unwrap();
        let diff = |h: f64| {
            let one = step(&s0, &p, h).unwrap().state;
            let half = step(&s0, &p, h / 2.0).unwrap().state;
            let two = step(&half, &p, h / 2.0).unwrap().state;
            one.phi
                .zip_map(&two.phi, |a, b| (a - b).abs())
                .unwrap()
                .max()
        };
        let (d1, d2) = (diff(0.4), diff(0.2));
        let order = (d1 / d2).log2();
        assert!(order > 4.5, "{d1} {d2} {order}");
    }

    #[test]
    fn stiff_step_doubling_is_bounded() {
        // variable coefficients against the frozen linear part reduce the
        // order on stiff modes; the step-doubling gap stays small
        let p = reference_problem(8, 8, Seed::Random(5)).unwrap();
        let s0 = FlowState::initial(&p).unwrap();
        let one = step(&s0, &p, 0.1).unwrap().state;
        let half = step(&s0, &p, 0.05).unwrap().state;
        let two = step(&half, &p, 0.05).unwrap().state;
        assert!(
            one.phi
                .zip_map(&two.phi, |a, b| (a - b).abs())
                .unwrap()
                .max()
                < 1e-4
        );
    }

    #[test]
    fn flat_initial_record() {
        let p = flat_product(0.0);
        let s = FlowState::initial(&p).unwrap();
        let r = monitors(&s, &p, None).unwrap();
        assert!(r.is_finite());
        assert!(r.r_min.abs() < 1e-12 && r.r_max.abs() < 1e-12);
        assert!((r.fiber_area_ratio_min - 1.0).abs() < 1e-14);
        assert_eq!(MonitorRecord::from_values(&r.values()).unwrap(), r);
    }

    #[test]
    fn degenerate_seed_triggers_halving() {
        let p = flat_product(0.0);
        let tg = p.grid;
        // fiber eigenvalue 1e−3 at the worst point
        let seed = tg.sample(|x| (2.0 * PI * x[2]).cos() * (2.0 * PI * x[3]).cos());
        let h = complex_hessian(&seed).unwrap();
        let worst = h.zz.iter().fold(0.0f64, |m, v| m.min(*v));
        let omega0 = p.omega0.add(&h.scale((0.5 - 1e-3) / -worst)).unwrap();
        assert!((omega0.min_eigenvalue().0 - 1e-3).abs() < 1e-9);
        let p2 = FlowProblem::from_forms(p.config.clone(), tg, omega0, p.volume.clone()).unwrap();
        let s = FlowState::initial(&p2).unwrap();
        assert_eq!(step(&s, &p2, 0.05).unwrap().halvings, 0);
        // the exponential integrator keeps ω positive for moderate steps;
        // positivity is lost only for very long ones
        assert!(step(&s, &p2, 16.0).unwrap().halvings > 0);
    }
}
