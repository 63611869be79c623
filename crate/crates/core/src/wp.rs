//! Weil-Petersson form from period data, and the canonical Hodge metric.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fibration::{FibrationConfig, KodairaModel};
use crate::grid::{complex_hessian, BaseGrid, Chart, HermitianField, ScalarField};

/// `ω_WP = −i∂∂̄ log Im τ`.
pub fn wp_form(y_tau: &ScalarField) -> Result<HermitianField> {
    if let Some(idx) = y_tau.values.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::NonPositiveValue {
            point: y_tau.grid.point_info(idx),
            value: y_tau.values[idx],
        });
    }
    Ok(complex_hessian(&y_tau.map(f64::ln))?.scale(-1.0))
}

/// `∫_fiber dz∧dz̄` against `Im τ`: `i∫dz∧dz̄ = CONVENTION · Im τ`.
pub const HODGE_CONVENTION: f64 = 2.0;

/// Samples of `|dz|²` in the Weil-Petersson and canonical metrics. Both are
/// stored as `log Im τ` plus a constant, so curvatures of the two differ only
/// by the Hessian of a constant.
#[derive(Debug, Clone)]
pub struct HodgeMetricSample {
    pub grid: BaseGrid,
    pub log_y: ScalarField,
    /// `log |dz|²_WP − log Im τ`.
    pub log_scale_wp: f64,
    /// `log |dz|²_can − log Im τ`.
    pub log_scale_can: f64,
    pub convention: f64,
    pub area: f64,
    pub model: Option<KodairaModel>,
}

impl HodgeMetricSample {
    pub fn h_wp(&self) -> ScalarField {
        self.log_y.map(|l| (l + self.log_scale_wp).exp())
    }

    pub fn h_can(&self) -> ScalarField {
        self.log_y.map(|l| (l + self.log_scale_can).exp())
    }

    pub fn y_tau(&self) -> ScalarField {
        self.log_y.map(f64::exp)
    }
}

/// `|dz|²_WP = 2 Im τ` and `|dz|²_can = 2 Im τ / A`.
pub fn hcan_norm(config: &FibrationConfig) -> Result<HodgeMetricSample> {
    if let Some(idx) = config.y_tau.values.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::NonPositiveValue {
            point: config.y_tau.grid.point_info(idx),
            value: config.y_tau.values[idx],
        });
    }
    Ok(HodgeMetricSample {
        grid: config.grid,
        log_y: config.y_tau.map(f64::ln),
        log_scale_wp: HODGE_CONVENTION.ln(),
        log_scale_can: (HODGE_CONVENTION / config.area).ln(),
        convention: HODGE_CONVENTION,
        area: config.area,
        model: config.model,
    })
}

/// Cells excluded at each radial end of an annulus.
pub const ANNULUS_MARGIN: usize = 3;

/// Sup of `−i∂∂̄ log|dz|²_can − ω_WP`.
///
/// On a torus both sides are Hessians of the same sampled `log Im τ`, so the
/// residual vanishes up to round-off. On an annulus with a catalog model the
/// computed curvature is compared with the closed-form `ω_WP` of the model,
/// which measures the radial discretization error; a 3-cell margin at each
/// radial end is excluded.
pub fn hcan_curvature_check(sample: &HodgeMetricSample) -> Result<f64> {
    // the constant log_scale_can has zero Hessian
    let curvature = complex_hessian(&sample.log_y)?.scale(-1.0);
    match sample.grid.chart {
        Chart::Torus => {
            let wp = wp_form(&sample.y_tau())?;
            Ok(curvature
                .ss
                .iter()
                .zip(&wp.ss)
                .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
        }
        Chart::Annulus { center, .. } => {
            let g = sample.grid;
            let c = Complex64::new(center.0, center.1);
            let reference: Vec<f64> = match sample.model {
                Some(model) => (0..g.len())
                    .map(|i| model.wp_exact(g.s(i) - c, c).unwrap_or(f64::NAN))
                    .collect(),
                None => wp_form(&sample.y_tau())?.ss,
            };
            let mut worst: f64 = 0.0;
            for i in ANNULUS_MARGIN..g.n1 - ANNULUS_MARGIN {
                for j in 0..g.n2 {
                    let idx = i * g.n2 + j;
                    worst = worst.max((curvature.ss[idx] - reference[idx]).abs());
                }
            }
            Ok(worst)
        }
    }
}

/// Density of `ω_WP` against `dx∧dy` (twice the coefficient).
pub fn wp_density(wp: &HermitianField) -> ScalarField {
    ScalarField {
        grid: wp.grid,
        values: wp.ss.iter().map(|v| 2.0 * v).collect(),
    }
}
