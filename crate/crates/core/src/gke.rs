//! Base equation `Δ_χφ = Fe^{λ'φ} − 1` of the limit metric: the `λ = −1`
//! generalized Kähler-Einstein equation, its continuity path, and the
//! `λ = 0` Poisson variant.
//!
//! `Δ_χφ = ∂_s∂_s̄φ / c` where `χ = c · i ds∧ds̄`.

use nalgebra::{DMatrix, Dyn, LU};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fibration::{DivisorSection, REGION_THRESHOLD};
use crate::grid::{
    annulus_second_derivatives, complex_hessian, integrate, poisson_solve, BaseGrid, Chart, Grid,
    HermitianField, ScalarField,
};
use crate::krylov::{gmres, GmresOptions};
use crate::radial;
use crate::semiflat::DensityField;
use crate::spectral::{self, FftNd};
use crate::wp::ANNULUS_MARGIN;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lambda {
    MinusOne,
    Zero,
}

#[derive(Debug, Clone, Copy)]
pub struct GkeOptions {
    /// Sup-norm tolerance on the pointwise equation, raised to
    /// [`GkeProblem::residual_floor`] where round-off dominates.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Consecutive residual increases that count as divergence.
    pub divergence_window: usize,
    pub gmres: GmresOptions,
}

impl Default for GkeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iter: 40,
            max_halvings: 30,
            divergence_window: 5,
            gmres: GmresOptions {
                rel_tol: 1e-12,
                restart: 50,
                max_iter: 500,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct GkeProblem {
    pub grid: BaseGrid,
    pub chi: HermitianField,
    pub density: DensityField,
    pub lambda: Lambda,
    pub options: GkeOptions,
}

/// One leg of a continuity path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLeg {
    pub t: f64,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct GkeSolution {
    pub phi: ScalarField,
    /// `χ + i∂∂̄φ`.
    pub omega: HermitianField,
    /// Sup-norm residual before each Newton step and at the end.
    pub history: Vec<f64>,
    pub path: Vec<PathLeg>,
    pub residual: f64,
}

impl GkeProblem {
    pub fn new(chi: HermitianField, density: DensityField, lambda: Lambda) -> Result<Self> {
        let grid = match chi.grid {
            Grid::Base(g) => g,
            Grid::Total(_) => return Err(Error::GridMismatch("χ must be a base form".into())),
        };
        if density.grid != grid {
            return Err(Error::GridMismatch("density and χ grids differ".into()));
        }
        if let Some(idx) = chi.ss.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::NotPositive {
                point: grid.point_info(idx),
                min_eigenvalue: chi.ss[idx],
            });
        }
        let mut p = Self {
            grid,
            chi,
            density,
            lambda,
            options: GkeOptions::default(),
        };
        if lambda == Lambda::Zero && grid.is_torus() {
            p.normalize_density();
        }
        Ok(p)
    }

    pub fn with_options(mut self, options: GkeOptions) -> Self {
        self.options = options;
        self
    }

    /// Rescale `F` so that `∫(F − 1)χ = 0`.
    pub fn normalize_density(&mut self) {
        crate::fibration::normalize_against(&mut self.density.values, &self.chi.ss_field());
    }

    fn c(&self) -> &[f64] {
        &self.chi.ss
    }

    /// Pointwise residual `Δ_χφ − F·e^φ + 1` (or `Δ_χφ − F + 1`).
    pub fn residual_field(&self, phi: &ScalarField) -> Result<ScalarField> {
        let h = complex_hessian(phi)?;
        let c = self.c();
        let f = &self.density.values;
        let values = (0..phi.len())
            .map(|i| {
                let rhs = match self.lambda {
                    Lambda::MinusOne => f[i] * phi.values[i].exp(),
                    Lambda::Zero => f[i],
                };
                h.ss[i] / c[i] - rhs + 1.0
            })
            .collect();
        Ok(ScalarField {
            grid: phi.grid,
            values,
        })
    }

    /// Sup of the residual over the points where the equation is imposed.
    pub fn residual_norm(&self, phi: &ScalarField) -> Result<f64> {
        let r = self.residual_field(phi)?;
        Ok(self.sup_interior(&r.values))
    }

    /// Round-off level of [`Self::residual_norm`] at `φ`. On an annulus the
    /// Laplacian carries `e^{−2ρ}/4c`, which near the inner ring amplifies the
    /// `ε|φ|/h²` error of the discrete second derivatives far above the
    /// default tolerance. Zero on the torus.
    pub fn residual_floor(&self, phi: &ScalarField) -> f64 {
        match self.grid.chart {
            Chart::Torus => 0.0,
            Chart::Annulus { .. } => {
                let g = self.grid;
                let (h, _) = g.spacing();
                let kmax = (g.n2 / 2) as f64;
                let weight = (0..g.len())
                    .map(|idx| (-2.0 * g.coords(idx).0).exp() / (4.0 * self.chi.ss[idx]))
                    .fold(0.0, f64::max);
                f64::EPSILON * (4.0 / (h * h) + kmax * kmax) * weight * (1.0 + phi.sup_abs())
            }
        }
    }

    fn sup_interior(&self, v: &[f64]) -> f64 {
        match self.grid.chart {
            Chart::Torus => v.iter().fold(0.0, |m, x| m.max(x.abs())),
            Chart::Annulus { .. } => {
                let n2 = self.grid.n2;
                v[n2..v.len() - n2].iter().fold(0.0, |m, x| m.max(x.abs()))
            }
        }
    }
}

/// Solve the problem starting from `φ = 0`.
pub fn solve_gke(problem: &GkeProblem) -> Result<GkeSolution> {
    solve_gke_from(problem, &ScalarField::zeros(Grid::Base(problem.grid)))
}

/// Solve the problem from the initial guess `init`.
pub fn solve_gke_from(problem: &GkeProblem, init: &ScalarField) -> Result<GkeSolution> {
    if init.grid != Grid::Base(problem.grid) {
        return Err(Error::GridMismatch("initial guess grid".into()));
    }
    init.check_finite()?;
    if problem.lambda == Lambda::Zero && problem.grid.is_torus() {
        return solve_poisson_variant(problem);
    }
    let mut phi = init.clone();
    if !problem.grid.is_torus() {
        // boundary rows are part of the system: impose φ = 0 at the outer ring
        let n2 = problem.grid.n2;
        let len = phi.len();
        phi.values[len - n2..].iter_mut().for_each(|v| *v = 0.0);
    }
    let opts = problem.options;
    let mut res = problem.residual_norm(&phi)?;
    let mut history = vec![res];
    let mut increases = 0;
    let mut iterations = 0;
    while res > opts.tol.max(problem.residual_floor(&phi)) {
        if iterations >= opts.max_iter {
            return Err(Error::NewtonMaxIterations {
                iterations,
                residual: res,
            });
        }
        iterations += 1;
        let delta = newton_direction(problem, &phi)?;
        let mut step = 1.0;
        let mut accepted = None;
        let mut last = None;
        for _ in 0..=opts.max_halvings {
            let trial = phi.zip_map(&delta, |p, d| p + step * d)?;
            let r = problem.residual_norm(&trial)?;
            if r.is_finite() && r < res {
                accepted = Some((trial, r));
                break;
            }
            last = Some((trial, r));
            step *= 0.5;
        }
        let (next, r) = match accepted {
            Some(a) => {
                increases = 0;
                a
            }
            None => {
                increases += 1;
                let (trial, r) = last.expect("at least one trial");
                if increases >= opts.divergence_window || !r.is_finite() {
                    history.push(r);
                    return Err(Error::NewtonDivergence {
                        iterations,
                        history,
                    });
                }
                (trial, r)
            }
        };
        phi = next;
        res = r;
        history.push(res);
    }
    // once inside the tolerance, a full Newton step usually lands at round-off
    for _ in 0..2 {
        if res == 0.0 {
            break;
        }
        let delta = newton_direction(problem, &phi)?;
        let trial = phi.zip_map(&delta, |p, d| p + d)?;
        let r = problem.residual_norm(&trial)?;
        if !(r < res) {
            break;
        }
        phi = trial;
        res = r;
        history.push(res);
    }
    finish(problem, phi, history, res)
}

fn finish(
    problem: &GkeProblem,
    phi: ScalarField,
    history: Vec<f64>,
    residual: f64,
) -> Result<GkeSolution> {
    let omega = problem.chi.add(&complex_hessian(&phi)?)?;
    let (ev, idx) = omega_min(problem, &omega);
    if !(ev > 0.0) {
        return Err(Error::NotPositive {
            point: problem.grid.point_info(idx),
            min_eigenvalue: ev,
        });
    }
    Ok(GkeSolution {
        phi,
        omega,
        history,
        path: vec![],
        residual,
    })
}

fn omega_min(problem: &GkeProblem, omega: &HermitianField) -> (f64, usize) {
    let n2 = problem.grid.n2;
    let range = match problem.grid.chart {
        Chart::Torus => 0..omega.len(),
        Chart::Annulus { .. } => n2..omega.len() - n2,
    };
    let mut best = (f64::INFINITY, 0);
    for i in range {
        if omega.ss[i] < best.0 || omega.ss[i].is_nan() {
            best = (omega.ss[i], i);
        }
    }
    best
}

fn solve_poisson_variant(problem: &GkeProblem) -> Result<GkeSolution> {
    let c = problem.c();
    let rhs = ScalarField {
        grid: Grid::Base(problem.grid),
        values: (0..c.len())
            .map(|i| 4.0 * c[i] * (problem.density.values[i] - 1.0))
            .collect(),
    };
    let phi = poisson_solve(&rhs)?.psi;
    let res = problem.residual_norm(&phi)?;
    finish(problem, phi, vec![res], res)
}

/// Newton direction `δ` with `(Δ_χ − F e^φ) δ = −r`.
fn newton_direction(problem: &GkeProblem, phi: &ScalarField) -> Result<ScalarField> {
    match problem.grid.chart {
        Chart::Torus => torus_direction(problem, phi),
        Chart::Annulus { .. } => annulus_direction(problem, phi),
    }
}

fn reaction(problem: &GkeProblem, phi: &ScalarField) -> Vec<f64> {
    let c = problem.c();
    (0..phi.len())
        .map(|i| match problem.lambda {
            Lambda::MinusOne => 4.0 * c[i] * problem.density.values[i] * phi.values[i].exp(),
            Lambda::Zero => 0.0,
        })
        .collect()
}

/// Multiplied through by `4c`: `(Δ_euc − w) δ = −4c r` with `w = 4cFe^φ`.
fn torus_direction(problem: &GkeProblem, phi: &ScalarField) -> Result<ScalarField> {
    let g = problem.grid;
    let c = problem.c();
    let r = problem.residual_field(phi)?;
    let w = reaction(problem, phi);
    let w_mean = w.iter().sum::<f64>() / w.len() as f64;
    let b: Vec<f64> = (0..r.len()).map(|i| -4.0 * c[i] * r.values[i]).collect();
    let plan = FftNd::shared(&[g.n1, g.n2]);
    let k1 = spectral::wavenumbers(g.n1);
    let k2 = spectral::wavenumbers(g.n2);
    let symbol: Vec<f64> = (0..g.len())
        .map(|idx| {
            let (i, j) = (idx / g.n2, idx % g.n2);
            -4.0 * std::f64::consts::PI.powi(2) * (k1[i] * k1[i] + k2[j] * k2[j])
        })
        .collect();
    let mut buf = vec![Complex64::new(0.0, 0.0); g.len()];
    let mut apply = |v: &[f64], out: &mut [f64]| {
        for (b, &x) in buf.iter_mut().zip(v) {
            *b = Complex64::new(x, 0.0);
        }
        plan.forward(&mut buf);
        for (b, s) in buf.iter_mut().zip(&symbol) {
            *b *= *s;
        }
        plan.inverse(&mut buf);
        for i in 0..v.len() {
            out[i] = buf[i].re - w[i] * v[i];
        }
    };
    let mut pbuf = vec![Complex64::new(0.0, 0.0); g.len()];
    let mut precond = |v: &[f64], out: &mut [f64]| {
        for (b, &x) in pbuf.iter_mut().zip(v) {
            *b = Complex64::new(x, 0.0);
        }
        plan.forward(&mut pbuf);
        for (b, s) in pbuf.iter_mut().zip(&symbol) {
            let d = s - w_mean;
            *b = if d != 0.0 {
                *b / d
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
        plan.inverse(&mut pbuf);
        for i in 0..v.len() {
            out[i] = pbuf[i].re;
        }
    };
    let mut x = vec![0.0; g.len()];
    gmres(&mut apply, &mut precond, &b, &mut x, problem.options.gmres)?;
    Ok(ScalarField {
        grid: Grid::Base(g),
        values: x,
    })
}

/// Annulus system: interior rows carry `(∂_ρ² + ∂_θ²)δ − w δ = −4e^{2ρ}c r`,
/// row 0 the Neumann condition `∂_ρδ = −∂_ρφ`, the outer row `δ = 0`.
fn annulus_direction(problem: &GkeProblem, phi: &ScalarField) -> Result<ScalarField> {
    let g = problem.grid;
    let (nr, nt) = (g.n1, g.n2);
    let (h, _) = g.spacing();
    let c = problem.c();
    let r = problem.residual_field(phi)?;
    let jac: Vec<f64> = (0..nr)
        .map(|i| 4.0 * (2.0 * g.coords(i * nt).0).exp())
        .collect();
    // reaction() already carries the factor 4c; the Jacobian contributes e^{2ρ}
    let w: Vec<f64> = reaction(problem, phi)
        .iter()
        .enumerate()
        .map(|(idx, v)| v * jac[idx / nt] / 4.0)
        .collect();
    let mut b = vec![0.0; g.len()];
    for idx in nt..g.len() - nt {
        b[idx] = -jac[idx / nt] * c[idx] * r.values[idx];
    }
    let mut dphi = vec![0.0; g.len()];
    for j in 0..nt {
        radial::apply_column(
            &phi.values,
            j,
            nt,
            nr,
            h,
            radial::first_derivative_stencil,
            &mut dphi,
        );
    }
    for j in 0..nt {
        b[j] = -dphi[j];
        b[(nr - 1) * nt + j] = -phi.values[(nr - 1) * nt + j];
    }
    let w_bar: Vec<f64> = (0..nr)
        .map(|i| w[i * nt..(i + 1) * nt].iter().sum::<f64>() / nt as f64)
        .collect();
    let pre = AnnulusPreconditioner::new(&g, &w_bar)?;
    let mut apply = |v: &[f64], out: &mut [f64]| {
        let (drr, dtt) = annulus_second_derivatives(&g, v).expect("grid validated");
        for idx in nt..g.len() - nt {
            out[idx] = drr[idx] + dtt[idx] - w[idx] * v[idx];
        }
        for j in 0..nt {
            let (start, coef, len) = radial::first_derivative_stencil(0, nr, h);
            let mut acc = 0.0;
            for k in 0..len {
                acc += coef[k] * v[(start + k) * nt + j];
            }
            out[j] = acc;
            out[(nr - 1) * nt + j] = v[(nr - 1) * nt + j];
        }
    };
    let mut precond = |v: &[f64], out: &mut [f64]| pre.apply(v, out);
    let mut x = vec![0.0; g.len()];
    gmres(&mut apply, &mut precond, &b, &mut x, problem.options.gmres)?;
    Ok(ScalarField {
        grid: Grid::Base(g),
        values: x,
    })
}

/// Per-θ-mode dense LU of the radial operator with θ-averaged reaction.
pub(crate) struct AnnulusPreconditioner {
    grid: BaseGrid,
    /// Factorizations indexed by `|k|`.
    lus: Vec<LU<f64, Dyn, Dyn>>,
    plan: std::sync::Arc<FftNd>,
}

impl AnnulusPreconditioner {
    pub(crate) fn new(grid: &BaseGrid, w_bar: &[f64]) -> Result<Self> {
        let (nr, nt) = (grid.n1, grid.n2);
        let (h, _) = grid.spacing();
        let kmax = nt / 2;
        let mut lus = Vec::with_capacity(kmax + 1);
        for k in 0..=kmax {
            let kk = spectral::wavenumber(k, nt);
            let mut m = DMatrix::<f64>::zeros(nr, nr);
            for i in 1..nr - 1 {
                let (start, coef, len) = radial::second_derivative_stencil(i, nr, h);
                for q in 0..len {
                    m[(i, start + q)] += coef[q];
                }
                m[(i, i)] -= kk * kk + w_bar[i];
            }
            let (start, coef, len) = radial::first_derivative_stencil(0, nr, h);
            for q in 0..len {
                m[(0, start + q)] = coef[q];
            }
            m[(nr - 1, nr - 1)] = 1.0;
            lus.push(m.lu());
        }
        Ok(Self {
            grid: *grid,
            lus,
            plan: FftNd::shared(&[nt]),
        })
    }

    pub(crate) fn apply(&self, v: &[f64], out: &mut [f64]) {
        let (nr, nt) = (self.grid.n1, self.grid.n2);
        let mut spec = vec![Complex64::new(0.0, 0.0); nr * nt];
        let mut row = vec![Complex64::new(0.0, 0.0); nt];
        for i in 0..nr {
            for j in 0..nt {
                row[j] = Complex64::new(v[i * nt + j], 0.0);
            }
            self.plan.forward(&mut row);
            spec[i * nt..(i + 1) * nt].copy_from_slice(&row);
        }
        for j in 0..nt {
            let k = if j <= nt / 2 { j } else { nt - j };
            let lu = &self.lus[k];
            let re = nalgebra::DVector::from_fn(nr, |i, _| spec[i * nt + j].re);
            let im = nalgebra::DVector::from_fn(nr, |i, _| spec[i * nt + j].im);
            let xr = lu.solve(&re).unwrap_or(re);
            let xi = lu.solve(&im).unwrap_or(im);
            for i in 0..nr {
                spec[i * nt + j] = Complex64::new(xr[i], xi[i]);
            }
        }
        for i in 0..nr {
            row.copy_from_slice(&spec[i * nt..(i + 1) * nt]);
            self.plan.inverse(&mut row);
            for j in 0..nt {
                out[i * nt + j] = row[j].re;
            }
        }
    }
}

/// Geometric schedule `1 = t₀ > … > t_{steps−1} = T_MIN`, then `0`.
pub fn path_schedule(steps: usize) -> Vec<f64> {
    const T_MIN: f64 = 1e-8;
    let steps = steps.max(2);
    let ratio = T_MIN.powf(1.0 / (steps - 1) as f64);
    let mut ts: Vec<f64> = (0..steps).map(|k| ratio.powi(k as i32)).collect();
    ts.push(0.0);
    ts
}

/// The leg `Δ_χφ_t = e^{φ_t}(1/F + t)^{−1} − 1` of the continuity path.
pub fn path_problem(problem: &GkeProblem, t: f64) -> GkeProblem {
    let mut leg = problem.clone();
    leg.density.values = problem
        .density
        .values
        .iter()
        .map(|&f| f / (1.0 + t * f))
        .collect();
    leg
}

/// Solve `Δ_χφ_t = e^{φ_t}(1/F + t)^{−1} − 1` down the schedule.
pub fn continuity_path(problem: &GkeProblem, steps: usize) -> Result<GkeSolution> {
    if problem.lambda != Lambda::MinusOne {
        return Err(Error::InvalidParameter(
            "the continuity path is for λ = −1".into(),
        ));
    }
    let mut phi = ScalarField::zeros(Grid::Base(problem.grid));
    let mut legs = Vec::new();
    let mut last = None;
    for t in path_schedule(steps) {
        let leg = path_problem(problem, t);
        let sol = solve_gke_from(&leg, &phi).map_err(|e| Error::Continuation {
            t,
            source: Box::new(e),
        })?;
        legs.push(PathLeg {
            t,
            iterations: sol.history.len() - 1,
            residual: sol.residual,
        });
        phi = sol.phi.clone();
        last = Some(sol);
    }
    let mut sol = last.expect("schedule is non-empty");
    sol.path = legs;
    Ok(sol)
}

/// Solve from each initial guess; return the largest pairwise sup distance.
pub fn uniqueness_probe(problem: &GkeProblem, inits: &[ScalarField]) -> Result<f64> {
    if inits.len() < 2 {
        return Err(Error::InvalidParameter(
            "need at least two initial guesses".into(),
        ));
    }
    let sols = inits
        .iter()
        .map(|i| solve_gke_from(problem, i).map(|s| s.phi))
        .collect::<Result<Vec<_>>>()?;
    let mut worst: f64 = 0.0;
    for a in 0..sols.len() {
        for b in a + 1..sols.len() {
            let d = sols[a].zip_map(&sols[b], |x, y| (x - y).abs())?.max();
            worst = worst.max(d);
        }
    }
    Ok(worst)
}

/// Points where curvature identities are checked: `{|S|²_h ≥ 0.3}` (or the
/// whole grid), minus a 3-cell margin at the radial ends of an annulus.
pub fn check_region(grid: &BaseGrid, section: Option<&DivisorSection>) -> Vec<bool> {
    let mut mask = match section {
        Some(s) => s.region(REGION_THRESHOLD),
        None => vec![true; grid.len()],
    };
    if !grid.is_torus() {
        let nt = grid.n2;
        for i in 0..grid.n1 {
            if i < ANNULUS_MARGIN || i >= grid.n1 - ANNULUS_MARGIN {
                mask[i * nt..(i + 1) * nt]
                    .iter_mut()
                    .for_each(|m| *m = false);
            }
        }
    }
    mask
}

/// Pointwise `Ric(ω_∞) + ω_∞ − ω_WP` (coefficient of `i ds∧ds̄`).
///
/// `ω_∞ = χ + i∂∂̄φ` and its density is taken from the solved equation,
/// `Fe^φχ`, so `Ric(ω_∞) = −i∂∂̄(log F + φ + log c)`. The direct density
/// `c + ∂∂̄φ` agrees up to the Newton residual, but differentiating its
/// logarithm twice more amplifies round-off by the square of the spectral
/// radius of the Hessian.
pub fn curvature_residual_field(
    sol: &GkeSolution,
    problem: &GkeProblem,
    wp: &HermitianField,
) -> Result<ScalarField> {
    let g = problem.grid;
    let log_density = ScalarField {
        grid: Grid::Base(g),
        values: (0..g.len())
            .map(|i| problem.density.values[i].ln() + sol.phi.values[i] + problem.chi.ss[i].ln())
            .collect(),
    };
    let ric = complex_hessian(&log_density)?.scale(-1.0);
    let values = (0..g.len())
        .map(|i| ric.ss[i] + sol.omega.ss[i] - wp.ss[i])
        .collect();
    Ok(ScalarField {
        grid: Grid::Base(g),
        values,
    })
}

/// Sup of [`curvature_residual_field`] over the check region. Refuses
/// densities not built by the consistent construction unless `force`.
pub fn curvature_residual(
    sol: &GkeSolution,
    problem: &GkeProblem,
    wp: &HermitianField,
    section: Option<&DivisorSection>,
    force: bool,
) -> Result<f64> {
    if !problem.density.consistent && !force {
        return Err(Error::InconsistentDensity);
    }
    let r = curvature_residual_field(sol, problem, wp)?;
    let mask = check_region(&problem.grid, section);
    Ok(r.values
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .fold(0.0, |a, (v, _)| a.max(v.abs())))
}

/// `∫(Fe^φ − 1)χ`, which vanishes for torus solutions.
pub fn mean_identity(sol: &GkeSolution, problem: &GkeProblem) -> f64 {
    let c = problem.c();
    let f = ScalarField {
        grid: Grid::Base(problem.grid),
        values: (0..c.len())
            .map(|i| (problem.density.values[i] * sol.phi.values[i].exp() - 1.0) * c[i])
            .collect(),
    };
    integrate(&f)
}
