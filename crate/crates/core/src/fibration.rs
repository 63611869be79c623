//! Model elliptic fibrations: local Kodaira models on annuli, synthetic
//! period fields on tori, multiple fibers, the divisor section `|S|²_h`, and
//! the consistent density construction.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::grid::{
    complex_hessian, integrate, poisson_solve, BaseGrid, Chart, Grid, HermitianField, ScalarField,
};
use crate::semiflat::{DensityField, Singularity};

/// Bounded-period Kodaira types.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundedType {
    I0Star,
    II,
    III,
    IV,
    IVStar,
    IIIStar,
    IIStar,
}

impl BoundedType {
    pub const ALL: [BoundedType; 7] = [
        BoundedType::I0Star,
        BoundedType::II,
        BoundedType::III,
        BoundedType::IV,
        BoundedType::IVStar,
        BoundedType::IIIStar,
        BoundedType::IIStar,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BoundedType::I0Star => "I0*",
            BoundedType::II => "II",
            BoundedType::III => "III",
            BoundedType::IV => "IV",
            BoundedType::IVStar => "IV*",
            BoundedType::IIIStar => "III*",
            BoundedType::IIStar => "II*",
        }
    }

    /// Period of the central fiber (the fixed point of the local monodromy).
    pub fn tau0(&self) -> Complex64 {
        match self {
            BoundedType::III | BoundedType::IIIStar | BoundedType::I0Star => {
                Complex64::new(0.0, 1.0)
            }
            _ => Complex64::from_polar(1.0, PI / 3.0),
        }
    }

    /// Order of the (finite) local monodromy.
    pub fn monodromy_order(&self) -> u32 {
        match self {
            BoundedType::I0Star => 2,
            BoundedType::II | BoundedType::IIStar => 6,
            BoundedType::III | BoundedType::IIIStar => 4,
            BoundedType::IV | BoundedType::IVStar => 3,
        }
    }
}

/// Local model of a fibration near a singular or multiple fiber at `s = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KodairaKind {
    /// Multiple smooth fiber; periods `τ₀ + c·s^h` in the quotient coordinate.
    MI0 {
        m: u32,
        h: u32,
        tau0: Complex64,
        c: Complex64,
    },
    Ib {
        b: u32,
    },
    MIb {
        m: u32,
        b: u32,
    },
    IbStar {
        b: u32,
    },
    Bounded(BoundedType),
    /// Constant period, no singular fiber.
    Constant {
        tau0: Complex64,
    },
    /// `τ(s) = s` on a patch of the upper half plane.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KodairaModel {
    pub kind: KodairaKind,
}

/// Monodromy of `τ` around the puncture. Only `Im τ` is ever sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monodromy {
    Trivial,
    /// `τ → τ + b`.
    Parabolic(u32),
    /// `τ → τ + b` composed with `−1`.
    NegParabolic(u32),
    Finite(u32),
}

impl fmt::Display for KodairaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KodairaKind::MI0 { .. } => write!(f, "mI0"),
            KodairaKind::Ib { .. } => write!(f, "Ib"),
            KodairaKind::MIb { .. } => write!(f, "mIb"),
            KodairaKind::IbStar { .. } => write!(f, "IbStar"),
            KodairaKind::Bounded(t) => write!(f, "{}", t.name()),
            KodairaKind::Constant { .. } => write!(f, "constant"),
            KodairaKind::Identity => write!(f, "identity"),
        }
    }
}

/// Catalog identifier without parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelName {
    MI0,
    Ib,
    MIb,
    IbStar,
    Bounded(BoundedType),
    Constant,
    Identity,
}

impl FromStr for ModelName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mI0" => ModelName::MI0,
            "Ib" => ModelName::Ib,
            "mIb" => ModelName::MIb,
            "IbStar" | "Ib*" => ModelName::IbStar,
            "constant" => ModelName::Constant,
            "identity" => ModelName::Identity,
            other => match BoundedType::ALL.iter().find(|t| t.name() == other) {
                Some(t) => ModelName::Bounded(*t),
                None => {
                    return Err(Error::InvalidParameter(format!(
                        "unknown model kind {other:?}"
                    )))
                }
            },
        })
    }
}

impl ModelName {
    pub const CATALOG: [&'static str; 13] = [
        "mI0", "Ib", "mIb", "IbStar", "I0*", "II", "III", "IV", "IV*", "III*", "II*", "constant",
        "identity",
    ];
}

impl KodairaModel {
    pub fn new(kind: KodairaKind) -> Result<Self> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        match kind {
            KodairaKind::MI0 { m, h, tau0, c } => {
                if m < 1 || h < 1 {
                    return bad("mI0 needs m ≥ 1 and h ≥ 1");
                }
                if !(tau0.im > 0.0) {
                    return bad("mI0 needs Im τ₀ > 0");
                }
                if !c.re.is_finite() || !c.im.is_finite() {
                    return bad("mI0 coefficient must be finite");
                }
            }
            KodairaKind::Ib { b } | KodairaKind::IbStar { b } => {
                if b < 1 {
                    return bad("b must be ≥ 1");
                }
            }
            KodairaKind::MIb { m, b } => {
                if m < 1 || b < 1 {
                    return bad("mIb needs m ≥ 1 and b ≥ 1");
                }
            }
            KodairaKind::Constant { tau0 } => {
                if !(tau0.im > 0.0) {
                    return bad("constant model needs Im τ₀ > 0");
                }
            }
            KodairaKind::Bounded(_) | KodairaKind::Identity => {}
        }
        Ok(Self { kind })
    }

    pub fn monodromy(&self) -> Monodromy {
        match self.kind {
            KodairaKind::Ib { b } | KodairaKind::MIb { b, .. } => Monodromy::Parabolic(b),
            KodairaKind::IbStar { b } => Monodromy::NegParabolic(b),
            KodairaKind::Bounded(t) => Monodromy::Finite(t.monodromy_order()),
            _ => Monodromy::Trivial,
        }
    }

    /// Multiplicity of the central fiber.
    pub fn multiplicity(&self) -> u32 {
        match self.kind {
            KodairaKind::MI0 { m, .. } | KodairaKind::MIb { m, .. } => m,
            _ => 1,
        }
    }

    /// `Im τ` at local coordinate `w = s − center` (the identity model reads `s`).
    pub fn im_tau(&self, w: Complex64, center: Complex64) -> f64 {
        match self.kind {
            KodairaKind::MI0 { h, tau0, c, .. } => tau0.im + (c * w.powu(h)).im,
            KodairaKind::Ib { b } | KodairaKind::MIb { b, .. } | KodairaKind::IbStar { b } => {
                -(b as f64) / (2.0 * PI) * w.norm().ln()
            }
            KodairaKind::Bounded(t) => t.tau0().im + 0.05 * w.im,
            KodairaKind::Constant { tau0 } => tau0.im,
            KodairaKind::Identity => (w + center).im,
        }
    }

    /// Closed-form `∂_s∂_s̄ (−log Im τ)` at `w`, when available.
    pub fn wp_exact(&self, w: Complex64, center: Complex64) -> Option<f64> {
        let y = self.im_tau(w, center);
        match self.kind {
            KodairaKind::Ib { .. } | KodairaKind::MIb { .. } | KodairaKind::IbStar { .. } => {
                let r2 = w.norm_sqr();
                Some(1.0 / (r2 * (r2.ln()).powi(2)))
            }
            KodairaKind::MI0 { h, c, .. } => {
                // Im τ is harmonic, so −∂∂̄ log y = |∂y|²/y²
                let dy = c * (h as f64) * w.powu(h - 1) / Complex64::new(0.0, 2.0);
                Some(dy.norm_sqr() / (y * y))
            }
            KodairaKind::Bounded(_) => Some(0.0025 / (4.0 * y * y)),
            KodairaKind::Constant { .. } => Some(0.0),
            KodairaKind::Identity => Some(1.0 / (4.0 * y * y)),
        }
    }

    /// Jacobian factor relating a smooth volume form upstairs to the base
    /// coordinate `s`, times any covolume cancellation.
    pub fn volume_jacobian(&self, w: Complex64) -> f64 {
        let m = self.multiplicity() as f64;
        if m > 1.0 {
            w.norm().powf(-2.0 * (m - 1.0) / m) / (m * m)
        } else {
            1.0
        }
    }

    /// Expected `(exponent, log factor)` of the density near the fiber.
    pub fn expected_asymptotics(&self) -> (f64, bool) {
        let m = self.multiplicity() as f64;
        let alpha = -2.0 * (m - 1.0) / m;
        match self.kind {
            KodairaKind::Ib { .. } | KodairaKind::MIb { .. } | KodairaKind::IbStar { .. } => {
                (alpha, true)
            }
            _ => (alpha, false),
        }
    }

    /// Whether `Im τ` depends on `|s|` only, up to an additive constant in `log`.
    pub fn is_log_radial(&self) -> bool {
        matches!(
            self.kind,
            KodairaKind::Ib { .. } | KodairaKind::MIb { .. } | KodairaKind::IbStar { .. }
        )
    }
}

/// Sample `Im τ` of `model` on `grid`.
pub fn period_field(model: &KodairaModel, grid: &BaseGrid) -> Result<(ScalarField, Monodromy)> {
    let center = match grid.chart {
        Chart::Annulus { center, .. } => Complex64::new(center.0, center.1),
        Chart::Torus => {
            if !matches!(model.kind, KodairaKind::Constant { .. }) {
                return Err(Error::UnsupportedChart(
                    "only constant periods can be sampled on a torus; use a synthetic field".into(),
                ));
            }
            Complex64::new(0.0, 0.0)
        }
    };
    let mut values = Vec::with_capacity(grid.len());
    for idx in 0..grid.len() {
        let w = grid.s(idx) - center;
        let y = model.im_tau(w, center);
        if !(y > 0.0) {
            let why = if model.is_log_radial() && w.norm() >= 1.0 {
                format!("|s| = {} ≥ 1 in a log-period model", w.norm())
            } else {
                format!("Im τ = {y} ≤ 0")
            };
            return Err(Error::InvalidParameter(format!(
                "{why} at {}",
                grid.point_info(idx)
            )));
        }
        values.push(y);
    }
    Ok((
        ScalarField {
            grid: Grid::Base(*grid),
            values,
        },
        model.monodromy(),
    ))
}

/// `δ(f) = χ(O_X) + 2g − 2 + Σ(1 − 1/m_i)` and the verdict `ν(X) = 1 ⇔ δ > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaInvariant {
    pub delta: Ratio<i64>,
    pub properly_elliptic: bool,
}

pub fn delta_invariant(chi_o: i64, genus: u32, multiplicities: &[u32]) -> Result<DeltaInvariant> {
    let mut delta = Ratio::from_integer(chi_o + 2 * genus as i64 - 2);
    for &m in multiplicities {
        if m < 1 {
            return Err(Error::InvalidParameter("multiplicities must be ≥ 1".into()));
        }
        delta += Ratio::new(m as i64 - 1, m as i64);
    }
    Ok(DeltaInvariant {
        delta,
        properly_elliptic: delta > Ratio::from_integer(0),
    })
}

/// Concrete hermitian-norm field `|S|²_h` of the divisor of marked fibers.
#[derive(Debug, Clone, PartialEq)]
pub struct DivisorSection {
    pub points: Vec<Complex64>,
    pub eps: f64,
    pub values: ScalarField,
}

/// Smooth cutoff: `x` near 0, tends to 1.
fn cutoff(x: f64) -> f64 {
    -(-x).exp_m1()
}

/// Squared distance on the unit torus.
pub fn torus_dist2(a: Complex64, b: Complex64) -> f64 {
    let wrap = |d: f64| {
        let d = d.rem_euclid(1.0);
        d.min(1.0 - d)
    };
    let dx = wrap(a.re - b.re);
    let dy = wrap(a.im - b.im);
    dx * dx + dy * dy
}

pub fn section_field(points: &[Complex64], grid: &BaseGrid, eps: f64) -> Result<DivisorSection> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "smoothing scale must be positive, got {eps}"
        )));
    }
    let values = match grid.chart {
        Chart::Torus => {
            for p in points {
                if !(0.0..1.0).contains(&p.re) || !(0.0..1.0).contains(&p.im) {
                    return Err(Error::InvalidParameter(format!(
                        "marked point {p} outside [0,1)²"
                    )));
                }
            }
            (0..grid.len())
                .map(|idx| {
                    let s = grid.s(idx);
                    let v: f64 = points
                        .iter()
                        .map(|&p| cutoff(torus_dist2(s, p) / (eps * eps)))
                        .product();
                    v.max(f64::MIN_POSITIVE)
                })
                .collect()
        }
        Chart::Annulus {
            rho_max, center, ..
        } => {
            let c = Complex64::new(center.0, center.1);
            for p in points {
                if (p - c).norm() > rho_max.exp() {
                    return Err(Error::InvalidParameter(format!(
                        "marked point {p} outside the annulus"
                    )));
                }
            }
            (0..grid.len())
                .map(|idx| {
                    let (rho, _) = grid.coords(idx);
                    (2.0 * rho).exp().min(1.0)
                })
                .collect()
        }
    };
    Ok(DivisorSection {
        points: points.to_vec(),
        eps,
        values: ScalarField {
            grid: Grid::Base(*grid),
            values,
        },
    })
}

impl DivisorSection {
    /// Base-grid mask of `{|S|²_h ≥ threshold}`.
    pub fn region(&self, threshold: f64) -> Vec<bool> {
        self.values.values.iter().map(|&v| v >= threshold).collect()
    }
}

/// Threshold of the comparison region used throughout.
pub const REGION_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultipleFiber {
    pub point: Complex64,
    pub m: u32,
}

/// Model geometry on a base grid.
#[derive(Debug, Clone)]
pub struct FibrationConfig {
    pub grid: BaseGrid,
    pub y_tau: ScalarField,
    pub monodromy: Monodromy,
    pub area: f64,
    pub chi: HermitianField,
    pub multiple_fibers: Vec<MultipleFiber>,
    pub section: DivisorSection,
    pub model: Option<KodairaModel>,
    /// `τ` is not holomorphic (synthetic torus field).
    pub synthetic: bool,
}

impl FibrationConfig {
    /// Local Kodaira model on an annulus with `χ = chi_coef · i ds∧ds̄`.
    pub fn from_model(
        model: KodairaModel,
        grid: BaseGrid,
        area: f64,
        chi_coef: f64,
    ) -> Result<Self> {
        if grid.is_torus() && !matches!(model.kind, KodairaKind::Constant { .. }) {
            return Err(Error::UnsupportedChart(
                "singular models need an annulus chart".into(),
            ));
        }
        let (y_tau, monodromy) = period_field(&model, &grid)?;
        let chi = HermitianField::base_form(&ScalarField::constant(Grid::Base(grid), chi_coef))?;
        let points = match grid.chart {
            Chart::Annulus { center, .. } => vec![Complex64::new(center.0, center.1)],
            Chart::Torus => vec![],
        };
        let section = section_field(&points, &grid, grid.spacing().0)?;
        let multiple_fibers = if model.multiplicity() > 1 {
            vec![MultipleFiber {
                point: points[0],
                m: model.multiplicity(),
            }]
        } else {
            vec![]
        };
        let cfg = Self {
            grid,
            y_tau,
            monodromy,
            area,
            chi,
            multiple_fibers,
            section,
            model: Some(model),
            synthetic: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Torus model with an explicitly sampled (possibly non-holomorphic) period field.
    pub fn synthetic(
        y_tau: ScalarField,
        chi: HermitianField,
        area: f64,
        multiple_fibers: Vec<MultipleFiber>,
        eps: f64,
    ) -> Result<Self> {
        let grid = match y_tau.grid {
            Grid::Base(g) if g.is_torus() => g,
            _ => {
                return Err(Error::UnsupportedChart(
                    "synthetic models live on a torus base".into(),
                ))
            }
        };
        let points: Vec<Complex64> = multiple_fibers.iter().map(|f| f.point).collect();
        let section = section_field(&points, &grid, eps)?;
        let cfg = Self {
            grid,
            y_tau,
            monodromy: Monodromy::Trivial,
            area,
            chi,
            multiple_fibers,
            section,
            model: None,
            synthetic: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.area > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "fiber area must be positive, got {}",
                self.area
            )));
        }
        self.y_tau.check_finite()?;
        if let Some(idx) = self.y_tau.values.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::NonPositiveValue {
                point: self.y_tau.grid.point_info(idx),
                value: self.y_tau.values[idx],
            });
        }
        if self.chi.grid != Grid::Base(self.grid) {
            return Err(Error::GridMismatch("χ must live on the base grid".into()));
        }
        if !(crate::grid::integrate_form(&self.chi) > 0.0) {
            return Err(Error::InvalidParameter("∫χ must be positive".into()));
        }
        for f in &self.multiple_fibers {
            if f.m < 1 {
                return Err(Error::InvalidParameter("multiplicities must be ≥ 1".into()));
            }
        }
        Ok(())
    }

    pub fn chi_coefficient(&self) -> ScalarField {
        self.chi.ss_field()
    }
}

/// Output of [`consistent_density`].
#[derive(Debug, Clone)]
pub struct ConsistentDensity {
    pub density: DensityField,
    /// Rescaled base form `μχ`.
    pub chi: HermitianField,
    /// The factor `μ`.
    pub chi_scale: f64,
}

/// Width of the smoothed current of a multiple fiber, relative to `ε_h`.
pub const CURRENT_WIDTH: f64 = 1.0 / 12.0;

/// Discrete smoothed point mass on the torus with unit quadrature mass.
pub fn smoothed_delta(grid: &BaseGrid, center: Complex64, width: f64) -> ScalarField {
    let mut f = grid.sample(|x, y| {
        let d2 = torus_dist2(Complex64::new(x, y), center);
        (-d2 / (2.0 * width * width)).exp()
    });
    let mass = integrate(&f);
    f.values.iter_mut().for_each(|v| *v /= mass);
    f
}

/// Build the density `F = e^v` for which the limit metric `Fe^φχ` satisfies
/// `Ric(ω) = −ω + ω_WP + Σ (m_i−1)/m_i [s_i]`, with `χ` rescaled so the
/// equation is compatible.
///
/// On a torus `i∂∂̄v = μχ + Ric(χ) − ω_WP − Σ(m_i−1)/m_i δ_i` is solved
/// spectrally; the point masses are Gaussians of width `ε_h/12`, and `μ` is
/// fixed by `μ∫χ = ∫ω_WP + Σ(m_i−1)/m_i`. When that mass vanishes (constant
/// `τ`, no multiple fibers) no positive `μ` exists: the mean of the right-hand
/// side is dropped, `μ = 1`, and the density is not flagged consistent. On an annulus the construction is only
/// available in closed form for log-period models with constant `χ`.
pub fn consistent_density(
    config: &FibrationConfig,
    wp: &HermitianField,
) -> Result<ConsistentDensity> {
    let c = config.chi_coefficient();
    if let Some(idx) = c.values.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::NotPositive {
            point: c.grid.point_info(idx),
            min_eigenvalue: c.values[idx],
        });
    }
    if wp.grid != c.grid {
        return Err(Error::GridMismatch(
            "ω_WP must live on the config grid".into(),
        ));
    }
    match config.grid.chart {
        Chart::Torus => consistent_density_torus(config, &c, wp),
        Chart::Annulus { .. } => consistent_density_annulus(config, &c),
    }
}

fn consistent_density_torus(
    config: &FibrationConfig,
    c: &ScalarField,
    wp: &HermitianField,
) -> Result<ConsistentDensity> {
    let grid = config.grid;
    let ric_chi = complex_hessian(&c.map(f64::ln))?;
    // coefficient mass of Σ (m−1)/m [s_i]: the current has density 2π(m−1)/m
    let sink: f64 = config
        .multiple_fibers
        .iter()
        .map(|f| PI * (f.m as f64 - 1.0) / f.m as f64)
        .sum();
    let c_mass = integrate(c);
    // ∫i∂∂̄v = 0 forces μ∫c = ∫ω_WP + Σ(m_i−1)/m_i
    let wp_mass = integrate(&wp.ss_field());
    let compatible = wp_mass + sink > 1e-12 * c_mass;
    let mu = if compatible {
        (wp_mass + sink) / c_mass
    } else {
        1.0
    };
    let mut rhs: Vec<f64> = (0..grid.len())
        .map(|i| mu * c.values[i] - ric_chi.ss[i] - wp.ss[i])
        .collect();
    let width = CURRENT_WIDTH * config.section.eps;
    let mut singularities = Vec::new();
    for f in &config.multiple_fibers {
        if f.m < 2 {
            continue;
        }
        let w = PI * (f.m as f64 - 1.0) / f.m as f64;
        let d = smoothed_delta(&grid, f.point, width);
        for (r, dv) in rhs.iter_mut().zip(&d.values) {
            *r -= w * dv;
        }
        singularities.push(Singularity {
            center: f.point,
            exponent: -2.0 * (f.m as f64 - 1.0) / f.m as f64,
            log_factor: false,
        });
    }
    // ∂∂̄v = rhs ⇔ Δv = 4·rhs
    let rhs = ScalarField {
        grid: Grid::Base(grid),
        values: rhs.into_iter().map(|v| 4.0 * v).collect(),
    };
    let v = poisson_solve(&rhs)?.psi;
    let consistent = compatible;
    let chi = config.chi.scale(mu);
    let mut values: Vec<f64> = v.values.iter().map(|x| x.exp()).collect();
    normalize_against(&mut values, &chi.ss_field());
    Ok(ConsistentDensity {
        density: DensityField::new(grid, values, singularities, consistent)?,
        chi,
        chi_scale: mu,
    })
}

fn consistent_density_annulus(
    config: &FibrationConfig,
    c: &ScalarField,
) -> Result<ConsistentDensity> {
    let model = config.model.filter(|m| m.is_log_radial()).ok_or_else(|| {
        Error::UnsupportedChart(
            "annulus consistent densities exist in closed form only for Ib-type models".into(),
        )
    })?;
    let c0 = c.values[0];
    if c.values.iter().any(|&v| v != c0) {
        return Err(Error::UnsupportedChart(
            "annulus construction needs a constant χ".into(),
        ));
    }
    let m = model.multiplicity() as f64;
    let alpha = -2.0 * (m - 1.0) / m;
    // v = c₀|s|² + log(−log|s|) + α log|s| solves ∂∂̄v = c₀ − ω_WP away from 0
    let grid = config.grid;
    let mut values: Vec<f64> = (0..grid.len())
        .map(|idx| {
            let (rho, _) = grid.coords(idx);
            (c0 * (2.0 * rho).exp() + (-rho).ln() + alpha * rho).exp()
        })
        .collect();
    normalize_against(&mut values, c);
    let center = match grid.chart {
        Chart::Annulus { center, .. } => Complex64::new(center.0, center.1),
        Chart::Torus => unreachable!(),
    };
    let singularities = vec![Singularity {
        center,
        exponent: alpha,
        log_factor: true,
    }];
    Ok(ConsistentDensity {
        density: DensityField::new(grid, values, singularities, true)?,
        chi: config.chi.clone(),
        chi_scale: 1.0,
    })
}

/// Rescale `f` so that `∫f c = ∫c`.
pub(crate) fn normalize_against(f: &mut [f64], c: &ScalarField) {
    let fc = ScalarField {
        grid: c.grid,
        values: f.iter().zip(&c.values).map(|(a, b)| a * b).collect(),
    };
    let k = integrate(c) / integrate(&fc);
    f.iter_mut().for_each(|v| *v *= k);
}
