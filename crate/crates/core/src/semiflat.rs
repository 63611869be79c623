//! The semi-flat form, the base density `F = Ω/(2 ω_SF∧χ)`, and tools for
//! its singular behaviour near bad fibers.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fibration::{torus_dist2, FibrationConfig};
use crate::grid::{
    integrate, BaseGrid, Chart, Grid, HermitianField, ScalarField, TotalGrid, FORM_DENSITY,
};

/// Expected local behaviour `|s − center|^exponent (−log|s|²)^{log_factor}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Singularity {
    pub center: Complex64,
    pub exponent: f64,
    pub log_factor: bool,
}

/// Positive density on a base grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub grid: BaseGrid,
    pub values: Vec<f64>,
    pub singularities: Vec<Singularity>,
    /// Built by the consistent construction, so the limit curvature identity
    /// is expected to hold.
    pub consistent: bool,
}

impl DensityField {
    pub fn new(
        grid: BaseGrid,
        values: Vec<f64>,
        singularities: Vec<Singularity>,
        consistent: bool,
    ) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(idx) = values.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::NonPositiveValue {
                point: grid.point_info(idx),
                value: values[idx],
            });
        }
        Ok(Self {
            grid,
            values,
            singularities,
            consistent,
        })
    }

    pub fn from_field(f: &ScalarField) -> Result<Self> {
        match f.grid {
            Grid::Base(g) => Self::new(g, f.values.clone(), vec![], false),
            Grid::Total(_) => Err(Error::GridMismatch("densities live on the base".into())),
        }
    }

    pub fn constant(grid: BaseGrid, c: f64) -> Result<Self> {
        Self::new(grid, vec![c; grid.len()], vec![], false)
    }

    pub fn field(&self) -> ScalarField {
        ScalarField {
            grid: Grid::Base(self.grid),
            values: self.values.clone(),
        }
    }
}

/// Closed-form semi-flat data: the fiber coefficient `a = A/(2 Im τ)`.
#[derive(Debug, Clone)]
pub struct SemiflatData {
    pub a: ScalarField,
    pub y_tau: ScalarField,
    pub area: f64,
}

pub fn semiflat_form(config: &FibrationConfig) -> Result<SemiflatData> {
    semiflat_from_period(&config.y_tau, config.area)
}

pub fn semiflat_from_period(y_tau: &ScalarField, area: f64) -> Result<SemiflatData> {
    if let Some(idx) = y_tau.values.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::NonPositiveValue {
            point: y_tau.grid.point_info(idx),
            value: y_tau.values[idx],
        });
    }
    if !(area > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "fiber area must be positive, got {area}"
        )));
    }
    Ok(SemiflatData {
        a: y_tau.map(|y| area / (2.0 * y)),
        y_tau: y_tau.clone(),
        area,
    })
}

impl SemiflatData {
    /// `ω_SF` on the total space: `g_zz̄ = a(s)`, all other entries zero.
    pub fn total_form(&self, total: &TotalGrid) -> Result<HermitianField> {
        let zz = self.a.pullback(total)?;
        let mut h = HermitianField::zeros(Grid::Total(*total));
        h.zz = zz.values;
        Ok(h)
    }

    /// Semi-flat potential `A (Im z)²/y_τ` along one fiber, with `Im z = x₄`.
    pub fn fiber_potential(&self, total: &TotalGrid, base_idx: usize) -> Vec<f64> {
        let y = self.y_tau.values[base_idx];
        (0..total.fiber_len())
            .map(|j| {
                let x4 = (j % total.m2) as f64 / total.m2 as f64;
                self.area * x4 * x4 / y
            })
            .collect()
    }

    /// `∂_z∂_z̄` of the fiber potential from exact centered second differences
    /// in `x₄` (the potential is quadratic, so the stencil has no truncation
    /// error), at every base point.
    pub fn potential_fiber_coefficient(&self, total: &TotalGrid) -> ScalarField {
        let h = 1.0 / total.m2 as f64;
        let j = total.m2 / 2;
        let values = (0..total.base.len())
            .map(|b| {
                let rho = self.fiber_potential(total, b);
                let d2 = (rho[j + 1] - 2.0 * rho[j] + rho[j - 1]) / (h * h);
                d2 / 4.0
            })
            .collect();
        ScalarField {
            grid: Grid::Base(total.base),
            values,
        }
    }
}

/// `∫_{X_s} ω = 2 Im τ(s) · mean_fiber(g_zz̄)`: the unit-square fiber chart
/// has covolume `Im τ` and `i dz∧dz̄ = 2 dx∧dy`.
pub fn fiber_integral(form: &HermitianField, y_tau: &ScalarField) -> Result<ScalarField> {
    let zz = form.zz_field().fiber_mean()?;
    zz.zip_map(y_tau, |g, y| FORM_DENSITY * y * g)
}

/// Smooth model volume density (relative to `(i dz∧dz̄)(i ds∧ds̄)`) near the
/// central fiber of an annulus model: the Jacobian of the multiple-fiber
/// covering times `1 + 0.1 r² cos 2θ`.
pub fn model_volume_density(config: &FibrationConfig) -> Result<ScalarField> {
    let model = config
        .model
        .ok_or_else(|| Error::InvalidParameter("model volume needs a catalog model".into()))?;
    let center = match config.grid.chart {
        Chart::Annulus { center, .. } => Complex64::new(center.0, center.1),
        Chart::Torus => Complex64::new(0.0, 0.0),
    };
    let g = config.grid;
    let values = (0..g.len())
        .map(|idx| {
            let w = g.s(idx) - center;
            let r2 = w.norm_sqr();
            let pert = 1.0 + 0.1 * r2 * (2.0 * w.arg()).cos();
            pert * model.volume_jacobian(w)
        })
        .collect();
    Ok(ScalarField {
        grid: Grid::Base(g),
        values,
    })
}

/// `F = mean_fiber(Ω)/(2 a c)` where `a` is the semi-flat fiber coefficient
/// and `c` the coefficient of `χ`.
pub fn density_from_volume(
    omega: &ScalarField,
    sf: &SemiflatData,
    chi: &HermitianField,
) -> Result<DensityField> {
    let omega_base = match omega.grid {
        Grid::Base(_) => omega.clone(),
        Grid::Total(_) => omega.fiber_mean()?,
    };
    let grid = match omega_base.grid {
        Grid::Base(g) => g,
        Grid::Total(_) => unreachable!(),
    };
    if sf.a.grid != omega_base.grid || chi.grid != omega_base.grid {
        return Err(Error::GridMismatch(
            "Ω, semi-flat data and χ must share the base grid".into(),
        ));
    }
    let values: Vec<f64> = (0..grid.len())
        .map(|i| omega_base.values[i] / (2.0 * sf.a.values[i] * chi.ss[i]))
        .collect();
    DensityField::new(grid, values, vec![], false)
}

/// Result of a radial fit `log F̄ = c + α log r + β log(−log r)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularFit {
    pub exponent: f64,
    pub log_coefficient: f64,
    pub log_flag: bool,
    pub fit_residual: f64,
    pub shells: usize,
}

/// Annulus fits use shells with `ρ ≤ FIT_RHO_MAX`, where `log(−log r)` is
/// well separated from `log r`.
pub const FIT_RHO_MAX: f64 = -0.25;

/// θ-averaged radial profile `(r, F̄(r))` around `center`.
pub fn radial_profile(f: &DensityField, center: Complex64) -> Result<Vec<(f64, f64)>> {
    let g = f.grid;
    match g.chart {
        Chart::Annulus { center: c, .. } => {
            if (Complex64::new(c.0, c.1) - center).norm() > 1e-12 {
                return Err(Error::InvalidParameter(
                    "fit center must be the annulus center".into(),
                ));
            }
            let mut out = Vec::new();
            for i in 0..g.n1 {
                let (rho, _) = g.coords(i * g.n2);
                if rho > FIT_RHO_MAX {
                    continue;
                }
                let row = &f.values[i * g.n2..(i + 1) * g.n2];
                out.push((rho.exp(), row.iter().sum::<f64>() / g.n2 as f64));
            }
            Ok(out)
        }
        Chart::Torus => {
            let (h1, h2) = g.spacing();
            let dr = h1.max(h2);
            let r_min = 2.0 * dr;
            let r_max = 0.45;
            let nbins = ((r_max - r_min) / dr).floor() as usize;
            let mut sums = vec![(0.0, 0.0, 0usize); nbins];
            for idx in 0..g.len() {
                let r = torus_dist2(g.s(idx), center).sqrt();
                if r < r_min || r >= r_min + nbins as f64 * dr {
                    continue;
                }
                let b = ((r - r_min) / dr) as usize;
                let e = &mut sums[b.min(nbins - 1)];
                e.0 += r;
                e.1 += f.values[idx];
                e.2 += 1;
            }
            Ok(sums
                .into_iter()
                .filter(|e| e.2 >= 4)
                .map(|(r, v, n)| (r / n as f64, v / n as f64))
                .collect())
        }
    }
}

pub fn fit_singular_exponent(f: &DensityField, center: Complex64) -> Result<SingularFit> {
    let profile = radial_profile(f, center)?;
    if profile.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} usable radial shells, need at least 4",
            profile.len()
        )));
    }
    let n = profile.len();
    let a = DMatrix::from_fn(n, 3, |i, j| {
        let r = profile[i].0;
        match j {
            0 => 1.0,
            1 => r.ln(),
            _ => (-r.ln()).ln(),
        }
    });
    let b = DVector::from_fn(n, |i, _| profile[i].1.ln());
    let svd = a.clone().svd(true, true);
    let x = svd
        .solve(&b, 1e-13)
        .map_err(|e| Error::InsufficientData(format!("radial fit failed: {e}")))?;
    let res = &a * &x - &b;
    let fit_residual = (res.norm_squared() / n as f64).sqrt();
    Ok(SingularFit {
        exponent: x[1],
        log_coefficient: x[2],
        log_flag: (x[2] - 1.0).abs() < 0.5,
        fit_residual,
        shells: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpVerdict {
    Integrable,
    Divergent,
    Inconclusive,
}

#[derive(Debug, Clone)]
pub struct LpReport {
    pub resolutions: Vec<usize>,
    pub integrals: Vec<f64>,
    pub ratios: Vec<f64>,
    pub verdict: LpVerdict,
}

/// Torus profile `(d² + ε²)^{−(m−1)/m}` of a multiplicity-`m` fiber at
/// `center`, with `ε` half a grid cell.
pub fn multiple_fiber_profile(
    m: u32,
    center: Complex64,
) -> impl Fn(&BaseGrid) -> Result<DensityField> {
    move |g: &BaseGrid| {
        let eps = 0.5 * g.spacing().0;
        let q = (m as f64 - 1.0) / m as f64;
        let values = (0..g.len())
            .map(|idx| (torus_dist2(g.s(idx), center) + eps * eps).powf(-q))
            .collect();
        DensityField::new(
            *g,
            values,
            vec![Singularity {
                center,
                exponent: -2.0 * q,
                log_factor: false,
            }],
            false,
        )
    }
}

/// `∫F^p χ` on successively refined tori (flat `χ`, smoothing scale tied to
/// the grid). Integrable if every successive change is below 5%, divergent
/// if every ratio is at least 1.5.
pub fn lp_check(
    profile: &dyn Fn(&BaseGrid) -> Result<DensityField>,
    p: f64,
    resolutions: &[usize],
) -> Result<LpReport> {
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter(format!("p must be ≥ 1, got {p}")));
    }
    if resolutions.len() < 2 {
        return Err(Error::InsufficientData(
            "need at least two resolutions".into(),
        ));
    }
    let mut integrals = Vec::with_capacity(resolutions.len());
    for &n in resolutions {
        let g = BaseGrid::torus(n, n)?;
        let f = profile(&g)?;
        let fp = ScalarField {
            grid: Grid::Base(g),
            values: f.values.iter().map(|v| v.powf(p)).collect(),
        };
        integrals.push(FORM_DENSITY * integrate(&fp));
    }
    let ratios: Vec<f64> = integrals.windows(2).map(|w| w[1] / w[0]).collect();
    let verdict = if ratios.iter().all(|r| (r - 1.0).abs() < 0.05) {
        LpVerdict::Integrable
    } else if ratios.iter().all(|&r| r >= 1.5) {
        LpVerdict::Divergent
    } else {
        LpVerdict::Inconclusive
    };
    Ok(LpReport {
        resolutions: resolutions.to_vec(),
        integrals,
        ratios,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fibration::{KodairaKind, KodairaModel};
    use std::f64::consts::PI;

    fn flat_config(y: f64, area: f64) -> FibrationConfig {
        let g = BaseGrid::torus(8, 8).unwrap();
        let chi = HermitianField::base_form(&ScalarField::constant(Grid::Base(g), 1.0)).unwrap();
        FibrationConfig::synthetic(
            ScalarField::constant(Grid::Base(g), y),
            chi,
            area,
            vec![],
            0.2,
        )
        .unwrap()
    }

    #[test]
    fn square_and_tall_fibers() {
        for (y, a_expect) in [(1.0, 0.5), (2.0, 0.25)] {
            let cfg = flat_config(y, 1.0);
            let sf = semiflat_form(&cfg).unwrap();
            assert!(sf.a.values.iter().all(|&a| a == a_expect));
            let tg = TotalGrid::new(cfg.grid, 8, 8).unwrap();
            let area = fiber_integral(&sf.total_form(&tg).unwrap(), &cfg.y_tau).unwrap();
            assert!(area.values.iter().all(|&v| (v - 1.0).abs() < 1e-14));
        }
    }

    #[test]
    fn potential_matches_closed_form() {
        let g = BaseGrid::torus(8, 8).unwrap();
        let y = g.sample(|x, _| 1.0 + 0.3 * (2.0 * PI * x).sin());
        let sf = semiflat_from_period(&y, 1.7).unwrap();
        let tg = TotalGrid::new(g, 8, 16).unwrap();
        let coef = sf.potential_fiber_coefficient(&tg);
        for (c, a) in coef.values.iter().zip(&sf.a.values) {
            assert!((c - a).abs() < 1e-10);
        }
    }

    #[test]
    fn density_scaling() {
        let cfg = flat_config(1.0, 1.0);
        let sf = semiflat_form(&cfg).unwrap();
        let omega =
            sf.a.zip_map(&cfg.chi_coefficient(), |a, c| 2.0 * a * c * 3.0)
                .unwrap();
        let f = density_from_volume(&omega, &sf, &cfg.chi).unwrap();
        assert!(f.values.iter().all(|&v| (v - 3.0).abs() < 1e-15));
        let bad = omega.map(|v| -v);
        assert!(density_from_volume(&bad, &sf, &cfg.chi).is_err());
    }

    #[test]
    fn fit_recovers_pure_powers() {
        let g = BaseGrid::annulus(64, 16, -6.0).unwrap();
        for alpha in [-1.5, -1.0, -0.5, 0.0] {
            let values = (0..g.len())
                .map(|i| g.coords(i).0 * alpha)
                .map(f64::exp)
                .collect();
            let f = DensityField::new(g, values, vec![], false).unwrap();
            let fit = fit_singular_exponent(&f, Complex64::new(0.0, 0.0)).unwrap();
            assert!((fit.exponent - alpha).abs() < 0.01, "{alpha}: {fit:?}");
            assert!(!fit.log_flag);
        }
    }

    #[test]
    fn fit_needs_shells() {
        let g = BaseGrid::annulus_with(8, 8, -0.3, 0.0, (0.0, 0.0)).unwrap();
        let f = DensityField::constant(g, 1.0).unwrap();
        assert!(matches!(
            fit_singular_exponent(&f, Complex64::new(0.0, 0.0)),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn lp_constant_is_integrable() {
        let rep = lp_check(
            &|g: &BaseGrid| DensityField::constant(*g, 1.0),
            2.0,
            &[16, 32, 64],
        )
        .unwrap();
        assert_eq!(rep.verdict, LpVerdict::Integrable);
        assert!(rep.ratios.iter().all(|r| (r - 1.0).abs() < 1e-12));
    }

    #[test]
    fn ib_density_has_log_factor() {
        let g = BaseGrid::annulus_with(96, 32, -8.0, -0.1, (0.0, 0.0)).unwrap();
        let m = KodairaModel::new(KodairaKind::Ib { b: 1 }).unwrap();
        let cfg = FibrationConfig::from_model(m, g, 1.0, 1.0).unwrap();
        let sf = semiflat_form(&cfg).unwrap();
        let omega = model_volume_density(&cfg).unwrap();
        let f = density_from_volume(&omega, &sf, &cfg.chi).unwrap();
        // F / (−log|s|²) is bounded above and below along radii
        let ratios: Vec<f64> = (0..g.len())
            .map(|i| f.values[i] / (-2.0 * g.coords(i).0))
            .collect();
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().copied().fold(0.0, f64::max);
        assert!(lo > 0.0 && hi / lo < 1.5);
    }
}
