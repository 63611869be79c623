//! Periodic and log-polar grids, sampled fields, and the complex-differential
//! operators built on them.
//!
//! Conventions (fixed for the whole crate):
//!
//! * For a complex coordinate `w = x + iy`, `∂_w∂_w̄ φ = (φ_xx + φ_yy)/4`.
//! * `i dw∧dw̄ = 2 dx∧dy`, so a base (1,1)-form `i g dw∧dw̄` has density `2g`
//!   against `dx∧dy`.
//! * On the total space `ω² = 2·det(g)·(i dz∧dz̄)∧(i ds∧ds̄)`; [`ma_density`]
//!   returns `det(g)` and [`MA_FACTOR`] carries the factor 2.
//! * Hermitian fields store `(g_zz̄, g_ss̄, Re g_zs̄, Im g_zs̄)`. Base fields use
//!   only the `g_ss̄` slot.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, PointInfo, Result};
use crate::radial;
use crate::spectral::{self, FftNd};

/// Density of `i dw∧dw̄` against `dx∧dy`.
pub const FORM_DENSITY: f64 = 2.0;

/// `ω²` against `(i dz∧dz̄)∧(i ds∧ds̄)` equals `MA_FACTOR · det(g)`.
pub const MA_FACTOR: f64 = 2.0;

/// Coordinate chart of a base grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Chart {
    /// `s = x₁ + i x₂` on the unit square, periodic in both directions.
    Torus,
    /// `s = center + e^{ρ + iθ}`, `ρ ∈ [rho_min, rho_max]`, `θ` periodic.
    Annulus {
        rho_min: f64,
        rho_max: f64,
        center: (f64, f64),
    },
}

/// Grid on the base curve. For the torus chart `n1 × n2` samples `(x₁, x₂)`;
/// for the annulus chart `n1 = N_ρ` rows (ends included) and `n2 = N_θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseGrid {
    pub chart: Chart,
    pub n1: usize,
    pub n2: usize,
}

impl BaseGrid {
    pub fn torus(n1: usize, n2: usize) -> Result<Self> {
        check_resolution(n1)?;
        check_resolution(n2)?;
        Ok(Self {
            chart: Chart::Torus,
            n1,
            n2,
        })
    }

    /// Annulus `e^{rho_min} ≤ |s| ≤ 1` centered at the origin.
    pub fn annulus(n_rho: usize, n_theta: usize, rho_min: f64) -> Result<Self> {
        Self::annulus_with(n_rho, n_theta, rho_min, 0.0, (0.0, 0.0))
    }

    pub fn annulus_with(
        n_rho: usize,
        n_theta: usize,
        rho_min: f64,
        rho_max: f64,
        center: (f64, f64),
    ) -> Result<Self> {
        check_resolution(n_rho)?;
        check_resolution(n_theta)?;
        if !(rho_min < 0.0) || !(rho_min < rho_max) || rho_max > 0.0 {
            return Err(Error::InvalidGrid(format!(
                "annulus needs rho_min < rho_max ≤ 0 and rho_min < 0, got [{rho_min}, {rho_max}]"
            )));
        }
        Ok(Self {
            chart: Chart::Annulus {
                rho_min,
                rho_max,
                center,
            },
            n1: n_rho,
            n2: n_theta,
        })
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_torus(&self) -> bool {
        matches!(self.chart, Chart::Torus)
    }

    /// Spacing along the two chart directions (`h₁, h₂`); for the annulus
    /// `(h_ρ, h_θ)`.
    pub fn spacing(&self) -> (f64, f64) {
        match self.chart {
            Chart::Torus => (1.0 / self.n1 as f64, 1.0 / self.n2 as f64),
            Chart::Annulus {
                rho_min, rho_max, ..
            } => (
                (rho_max - rho_min) / (self.n1 - 1) as f64,
                2.0 * PI / self.n2 as f64,
            ),
        }
    }

    /// Chart coordinates `(x₁, x₂)` or `(ρ, θ)` of point `idx`.
    pub fn coords(&self, idx: usize) -> (f64, f64) {
        let (i, j) = (idx / self.n2, idx % self.n2);
        match self.chart {
            Chart::Torus => (i as f64 / self.n1 as f64, j as f64 / self.n2 as f64),
            Chart::Annulus { rho_min, .. } => {
                let (h, ht) = self.spacing();
                (rho_min + i as f64 * h, j as f64 * ht)
            }
        }
    }

    /// Complex coordinate `s` of point `idx`.
    pub fn s(&self, idx: usize) -> Complex64 {
        let (a, b) = self.coords(idx);
        match self.chart {
            Chart::Torus => Complex64::new(a, b),
            Chart::Annulus { center, .. } => {
                Complex64::new(center.0, center.1) + Complex64::from_polar(a.exp(), b)
            }
        }
    }

    /// Row-wise sample `f(a, b)` in chart coordinates.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        let values = (0..self.len())
            .map(|idx| {
                let (a, b) = self.coords(idx);
                f(a, b)
            })
            .collect();
        ScalarField {
            grid: Grid::Base(*self),
            values,
        }
    }

    pub fn point_info(&self, idx: usize) -> PointInfo {
        let (a, b) = self.coords(idx);
        PointInfo {
            index: idx,
            coords: [a, b, 0.0, 0.0],
        }
    }
}

fn check_resolution(n: usize) -> Result<()> {
    if n < 8 || n % 2 != 0 {
        return Err(Error::InvalidGrid(format!(
            "resolution {n} must be even and ≥ 8"
        )));
    }
    Ok(())
}

/// Total-space grid: a torus base times a unit-square fiber, periodic in all
/// four directions. Index layout is `((i₁·n₂ + i₂)·m₁ + i₃)·m₂ + i₄`, so each
/// fiber is a contiguous block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TotalGrid {
    pub base: BaseGrid,
    pub m1: usize,
    pub m2: usize,
}

impl TotalGrid {
    pub fn new(base: BaseGrid, m1: usize, m2: usize) -> Result<Self> {
        if !base.is_torus() {
            return Err(Error::UnsupportedChart(
                "total grids need a torus base".into(),
            ));
        }
        check_resolution(m1)?;
        check_resolution(m2)?;
        Ok(Self { base, m1, m2 })
    }

    pub fn fiber_len(&self) -> usize {
        self.m1 * self.m2
    }

    pub fn len(&self) -> usize {
        self.base.len() * self.fiber_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.base.n1, self.base.n2, self.m1, self.m2]
    }

    /// `(x₁, x₂, x₃, x₄)` of point `idx`.
    pub fn coords(&self, idx: usize) -> [f64; 4] {
        let [n1, n2, m1, m2] = self.dims();
        let i4 = idx % m2;
        let i3 = (idx / m2) % m1;
        let i2 = (idx / (m2 * m1)) % n2;
        let i1 = idx / (m2 * m1 * n2);
        [
            i1 as f64 / n1 as f64,
            i2 as f64 / n2 as f64,
            i3 as f64 / m1 as f64,
            i4 as f64 / m2 as f64,
        ]
    }

    pub fn base_index(&self, idx: usize) -> usize {
        idx / self.fiber_len()
    }

    pub fn sample(&self, f: impl Fn([f64; 4]) -> f64) -> ScalarField {
        let values = (0..self.len()).map(|idx| f(self.coords(idx))).collect();
        ScalarField {
            grid: Grid::Total(*self),
            values,
        }
    }

    pub fn point_info(&self, idx: usize) -> PointInfo {
        PointInfo {
            index: idx,
            coords: self.coords(idx),
        }
    }
}

/// Either kind of grid a field can live on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Grid {
    Base(BaseGrid),
    Total(TotalGrid),
}

impl Grid {
    pub fn len(&self) -> usize {
        match self {
            Grid::Base(g) => g.len(),
            Grid::Total(g) => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Complex dimension of the underlying chart.
    pub fn complex_dim(&self) -> usize {
        match self {
            Grid::Base(_) => 1,
            Grid::Total(_) => 2,
        }
    }

    pub fn point_info(&self, idx: usize) -> PointInfo {
        match self {
            Grid::Base(g) => g.point_info(idx),
            Grid::Total(g) => g.point_info(idx),
        }
    }

    pub fn base(&self) -> BaseGrid {
        match self {
            Grid::Base(g) => *g,
            Grid::Total(g) => g.base,
        }
    }

    pub fn as_total(&self) -> Result<TotalGrid> {
        match self {
            Grid::Total(g) => Ok(*g),
            Grid::Base(_) => Err(Error::GridMismatch("expected a total-space grid".into())),
        }
    }

    pub fn is_torus(&self) -> bool {
        match self {
            Grid::Base(g) => g.is_torus(),
            Grid::Total(_) => true,
        }
    }
}

/// Real samples on a grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        same_grid(&self.grid, &other.grid)?;
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Plain average of the samples, fixed summation order.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(idx) => Err(Error::NonFinite(self.grid.point_info(idx))),
            None => Ok(()),
        }
    }

    /// Average over each fiber of a total-space field.
    pub fn fiber_mean(&self) -> Result<ScalarField> {
        let tg = self.grid.as_total()?;
        let fl = tg.fiber_len();
        let values = self
            .values
            .chunks(fl)
            .map(|c| c.iter().sum::<f64>() / fl as f64)
            .collect();
        Ok(ScalarField {
            grid: Grid::Base(tg.base),
            values,
        })
    }

    /// Pull a base field back to a total grid (constant along fibers).
    pub fn pullback(&self, total: &TotalGrid) -> Result<ScalarField> {
        same_grid(&self.grid, &Grid::Base(total.base))?;
        let fl = total.fiber_len();
        let mut values = Vec::with_capacity(total.len());
        for &v in &self.values {
            values.extend(std::iter::repeat(v).take(fl));
        }
        Ok(ScalarField {
            grid: Grid::Total(*total),
            values,
        })
    }
}

pub(crate) fn same_grid(a: &Grid, b: &Grid) -> Result<()> {
    if a != b {
        return Err(Error::GridMismatch(format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

/// Hermitian (1,1)-form samples in the `(z, s)` coframe.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianField {
    pub grid: Grid,
    pub zz: Vec<f64>,
    pub ss: Vec<f64>,
    pub re_zs: Vec<f64>,
    pub im_zs: Vec<f64>,
}

/// One pointwise Hermitian matrix `[[a, b], [b̄, d]]` with `a = g_zz̄`, `d = g_ss̄`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Herm2 {
    pub zz: f64,
    pub ss: f64,
    pub zs: Complex64,
}

impl Herm2 {
    pub fn det(&self) -> f64 {
        self.zz * self.ss - self.zs.norm_sqr()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let half_tr = 0.5 * (self.zz + self.ss);
        let half_diff = 0.5 * (self.zz - self.ss);
        half_tr - (half_diff * half_diff + self.zs.norm_sqr()).sqrt()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        let half_tr = 0.5 * (self.zz + self.ss);
        let half_diff = 0.5 * (self.zz - self.ss);
        half_tr + (half_diff * half_diff + self.zs.norm_sqr()).sqrt()
    }

    /// `g^{ab̄}α_{ab̄}` for positive `self`.
    pub fn trace_of(&self, alpha: &Herm2) -> f64 {
        (self.ss * alpha.zz + self.zz * alpha.ss
            - 2.0 * (self.zs.re * alpha.zs.re + self.zs.im * alpha.zs.im))
            / self.det()
    }

    /// Inverse matrix entries `(g^{zz̄}, g^{ss̄}, g^{zs̄})` in the same layout.
    pub fn inverse(&self) -> Herm2 {
        let d = self.det();
        Herm2 {
            zz: self.ss / d,
            ss: self.zz / d,
            zs: -self.zs / d,
        }
    }

    /// `v^H g^{-1} v` for a covector `v = (∂_z f, ∂_s f)`.
    pub fn covector_norm_sqr(&self, vz: Complex64, vs: Complex64) -> f64 {
        let inv = self.inverse();
        // inverse in matrix layout [[zz, zs],[conj(zs), ss]]
        let a = inv.zz * vz + inv.zs * vs;
        let b = inv.zs.conj() * vz + inv.ss * vs;
        (vz.conj() * a + vs.conj() * b).re
    }
}

impl HermitianField {
    pub fn zeros(grid: Grid) -> Self {
        let n = grid.len();
        Self {
            grid,
            zz: vec![0.0; n],
            ss: vec![0.0; n],
            re_zs: vec![0.0; n],
            im_zs: vec![0.0; n],
        }
    }

    /// Base form `i g ds∧ds̄` with the given coefficient.
    pub fn base_form(coef: &ScalarField) -> Result<Self> {
        if !matches!(coef.grid, Grid::Base(_)) {
            return Err(Error::GridMismatch(
                "base form needs a base-grid coefficient".into(),
            ));
        }
        let mut h = Self::zeros(coef.grid);
        h.ss.clone_from(&coef.values);
        Ok(h)
    }

    /// Diagonal total-space form with constant entries.
    pub fn diagonal(grid: Grid, zz: f64, ss: f64) -> Self {
        let mut h = Self::zeros(grid);
        if matches!(grid, Grid::Total(_)) {
            h.zz.iter_mut().for_each(|v| *v = zz);
        }
        h.ss.iter_mut().for_each(|v| *v = ss);
        h
    }

    pub fn len(&self) -> usize {
        self.ss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ss.is_empty()
    }

    #[inline]
    pub fn at(&self, idx: usize) -> Herm2 {
        Herm2 {
            zz: self.zz[idx],
            ss: self.ss[idx],
            zs: Complex64::new(self.re_zs[idx], self.im_zs[idx]),
        }
    }

    #[inline]
    pub fn set(&mut self, idx: usize, h: Herm2) {
        self.zz[idx] = h.zz;
        self.ss[idx] = h.ss;
        self.re_zs[idx] = h.zs.re;
        self.im_zs[idx] = h.zs.im;
    }

    /// Extract the base coefficient `g_ss̄` as a scalar field.
    pub fn ss_field(&self) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.ss.clone(),
        }
    }

    pub fn zz_field(&self) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.zz.clone(),
        }
    }

    /// `a·self + b·other`, componentwise.
    pub fn axpby(&self, a: f64, other: &HermitianField, b: f64) -> Result<HermitianField> {
        same_grid(&self.grid, &other.grid)?;
        let lin = |x: &[f64], y: &[f64]| -> Vec<f64> {
            x.iter().zip(y).map(|(&p, &q)| a * p + b * q).collect()
        };
        Ok(HermitianField {
            grid: self.grid,
            zz: lin(&self.zz, &other.zz),
            ss: lin(&self.ss, &other.ss),
            re_zs: lin(&self.re_zs, &other.re_zs),
            im_zs: lin(&self.im_zs, &other.im_zs),
        })
    }

    pub fn add(&self, other: &HermitianField) -> Result<HermitianField> {
        self.axpby(1.0, other, 1.0)
    }

    pub fn scale(&self, a: f64) -> HermitianField {
        let s = |x: &[f64]| x.iter().map(|v| a * v).collect::<Vec<_>>();
        HermitianField {
            grid: self.grid,
            zz: s(&self.zz),
            ss: s(&self.ss),
            re_zs: s(&self.re_zs),
            im_zs: s(&self.im_zs),
        }
    }

    /// Pull a base form back to the total space (only the `ss̄` slot is set).
    pub fn pullback(&self, total: &TotalGrid) -> Result<HermitianField> {
        let ss = self.ss_field().pullback(total)?;
        let mut h = HermitianField::zeros(Grid::Total(*total));
        h.ss = ss.values;
        Ok(h)
    }

    /// Minimum eigenvalue over the field and where it occurs.
    pub fn min_eigenvalue(&self) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for idx in 0..self.len() {
            let ev = match self.grid {
                Grid::Base(_) => self.ss[idx],
                Grid::Total(_) => self.at(idx).min_eigenvalue(),
            };
            if ev < best.0 || ev.is_nan() {
                best = (ev, idx);
                if ev.is_nan() {
                    break;
                }
            }
        }
        best
    }

    pub fn check_positive(&self) -> Result<()> {
        let (ev, idx) = self.min_eigenvalue();
        if !(ev > 0.0) {
            return Err(Error::NotPositive {
                point: self.grid.point_info(idx),
                min_eigenvalue: ev,
            });
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// operators

/// Matrix of mixed complex second derivatives `∂²φ/∂w_a∂w̄_b`.
pub fn complex_hessian(phi: &ScalarField) -> Result<HermitianField> {
    phi.check_finite()?;
    match phi.grid {
        Grid::Base(bg) => match bg.chart {
            Chart::Torus => Ok(torus_base_hessian(&bg, &phi.values)),
            Chart::Annulus { .. } => annulus_hessian(&bg, &phi.values),
        },
        Grid::Total(tg) => Ok(total_hessian(&tg, &phi.values)),
    }
}

fn torus_base_hessian(bg: &BaseGrid, values: &[f64]) -> HermitianField {
    let plan = FftNd::shared(&[bg.n1, bg.n2]);
    let mut buf = spectral::to_complex(values);
    plan.forward(&mut buf);
    let k1 = spectral::wavenumbers(bg.n1);
    let k2 = spectral::wavenumbers(bg.n2);
    for i in 0..bg.n1 {
        for j in 0..bg.n2 {
            buf[i * bg.n2 + j] *= -PI * PI * (k1[i] * k1[i] + k2[j] * k2[j]);
        }
    }
    plan.inverse(&mut buf);
    let mut h = HermitianField::zeros(Grid::Base(*bg));
    h.ss = buf.iter().map(|c| c.re).collect();
    h
}

/// Spectral symbols of the total-space complex Hessian at wavenumber `k`.
#[inline]
pub(crate) fn hessian_symbols(k: [f64; 4]) -> (f64, f64, f64, f64) {
    let c = -PI * PI;
    (
        c * (k[2] * k[2] + k[3] * k[3]),
        c * (k[0] * k[0] + k[1] * k[1]),
        c * (k[2] * k[0] + k[3] * k[1]),
        c * (k[2] * k[1] - k[3] * k[0]),
    )
}

pub(crate) struct TotalWavenumbers {
    pub k: [Vec<f64>; 4],
    pub dims: [usize; 4],
}

impl TotalWavenumbers {
    pub fn new(tg: &TotalGrid) -> Self {
        let dims = tg.dims();
        Self {
            k: dims.map(spectral::wavenumbers),
            dims,
        }
    }

    #[inline]
    pub fn at(&self, idx: usize) -> [f64; 4] {
        let [_, n2, m1, m2] = self.dims;
        let i4 = idx % m2;
        let i3 = (idx / m2) % m1;
        let i2 = (idx / (m2 * m1)) % n2;
        let i1 = idx / (m2 * m1 * n2);
        [self.k[0][i1], self.k[1][i2], self.k[2][i3], self.k[3][i4]]
    }
}

/// Complex Hessian of a total-space field given its spectrum.
pub(crate) fn total_hessian_from_spectrum(tg: &TotalGrid, spec: &[Complex64]) -> HermitianField {
    let plan = FftNd::shared(&tg.dims());
    let wn = TotalWavenumbers::new(tg);
    let n = tg.len();
    let mut a = vec![Complex64::new(0.0, 0.0); n];
    let mut b = vec![Complex64::new(0.0, 0.0); n];
    let i = Complex64::new(0.0, 1.0);
    for idx in 0..n {
        let (szz, sss, sre, sim) = hessian_symbols(wn.at(idx));
        let v = spec[idx];
        a[idx] = v * szz + i * v * sss;
        b[idx] = v * sre + i * v * sim;
    }
    plan.inverse(&mut a);
    plan.inverse(&mut b);
    HermitianField {
        grid: Grid::Total(*tg),
        zz: a.iter().map(|c| c.re).collect(),
        ss: a.iter().map(|c| c.im).collect(),
        re_zs: b.iter().map(|c| c.re).collect(),
        im_zs: b.iter().map(|c| c.im).collect(),
    }
}

/// The fiber mean goes through the base transform and only the fluctuation
/// through the 4-d one, so round-off in the fiber components scales with the
/// fiber oscillation rather than with `|φ|`.
fn total_hessian(tg: &TotalGrid, values: &[f64]) -> HermitianField {
    let fl = tg.fiber_len();
    let means: Vec<f64> = values
        .chunks(fl)
        .map(|c| c.iter().sum::<f64>() / fl as f64)
        .collect();
    let mut buf: Vec<Complex64> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| Complex64::new(v - means[i / fl], 0.0))
        .collect();
    let plan = FftNd::shared(&tg.dims());
    plan.forward(&mut buf);
    let mut h = total_hessian_from_spectrum(tg, &buf);
    let hb = torus_base_hessian(&tg.base, &means);
    for (i, v) in h.ss.iter_mut().enumerate() {
        *v += hb.ss[i / fl];
    }
    h
}

fn annulus_params(bg: &BaseGrid) -> Result<(f64, f64)> {
    match bg.chart {
        Chart::Annulus { rho_min, .. } => Ok((rho_min, bg.spacing().0)),
        Chart::Torus => Err(Error::UnsupportedChart("expected an annulus chart".into())),
    }
}

/// `(φ_ρρ, φ_θθ)` on an annulus grid: 4th-order differences in ρ, spectral in θ.
pub(crate) fn annulus_second_derivatives(
    bg: &BaseGrid,
    values: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if bg.n1 < 8 {
        return Err(Error::InvalidGrid("annulus stencils need N_ρ ≥ 8".into()));
    }
    let (_, h) = annulus_params(bg)?;
    let (nr, nt) = (bg.n1, bg.n2);
    let mut d_rr = vec![0.0; values.len()];
    for j in 0..nt {
        radial::apply_column(
            values,
            j,
            nt,
            nr,
            h,
            radial::second_derivative_stencil,
            &mut d_rr,
        );
    }
    let plan = FftNd::shared(&[nt]);
    let kt = spectral::wavenumbers(nt);
    let mut d_tt = vec![0.0; values.len()];
    let mut row = vec![Complex64::new(0.0, 0.0); nt];
    for i in 0..nr {
        for j in 0..nt {
            row[j] = Complex64::new(values[i * nt + j], 0.0);
        }
        plan.forward(&mut row);
        for j in 0..nt {
            // θ has period 2π, so the integer wavenumber is the angular frequency
            row[j] *= -kt[j] * kt[j];
        }
        plan.inverse(&mut row);
        for j in 0..nt {
            d_tt[i * nt + j] = row[j].re;
        }
    }
    Ok((d_rr, d_tt))
}

fn annulus_hessian(bg: &BaseGrid, values: &[f64]) -> Result<HermitianField> {
    let (d_rr, d_tt) = annulus_second_derivatives(bg, values)?;
    let mut h = HermitianField::zeros(Grid::Base(*bg));
    for idx in 0..values.len() {
        let (rho, _) = bg.coords(idx);
        h.ss[idx] = (d_rr[idx] + d_tt[idx]) / (4.0 * (2.0 * rho).exp());
    }
    Ok(h)
}

/// Complex first derivatives `(∂_z f, ∂_s f)` of a total-space field.
pub fn complex_gradient(f: &ScalarField) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let tg = f.grid.as_total()?;
    let plan = FftNd::shared(&tg.dims());
    let wn = TotalWavenumbers::new(&tg);
    let mut spec = spectral::to_complex(&f.values);
    plan.forward(&mut spec);
    let n = tg.len();
    let mut dz = vec![Complex64::new(0.0, 0.0); n];
    let mut ds = vec![Complex64::new(0.0, 0.0); n];
    for idx in 0..n {
        let k = wn.at(idx);
        // ∂_x ↔ 2πik; ∂_z = (∂₃ − i∂₄)/2, ∂_s = (∂₁ − i∂₂)/2
        let v = spec[idx] * Complex64::new(0.0, 2.0 * PI);
        let d = [v * k[0], v * k[1], v * k[2], v * k[3]];
        // keep the real-space partials separate: pack ∂₃ + i∂₄ style pairs
        dz[idx] = d[2] + Complex64::new(0.0, 1.0) * d[3];
        ds[idx] = d[0] + Complex64::new(0.0, 1.0) * d[1];
    }
    plan.inverse(&mut dz);
    plan.inverse(&mut ds);
    // dz now holds f₃ + i f₄ (both real); ∂_z f = (f₃ − i f₄)/2
    let conj_half = |c: Complex64| Complex64::new(0.5 * c.re, -0.5 * c.im);
    Ok((
        dz.into_iter().map(conj_half).collect(),
        ds.into_iter().map(conj_half).collect(),
    ))
}

/// Pointwise determinant (total) or the single coefficient (base).
pub fn ma_density(g: &HermitianField) -> ScalarField {
    let values = match g.grid {
        Grid::Base(_) => g.ss.clone(),
        Grid::Total(_) => (0..g.len()).map(|i| g.at(i).det()).collect(),
    };
    ScalarField {
        grid: g.grid,
        values,
    }
}

/// Pointwise `g^{ab̄}α_{ab̄}`; fails at the first point where `g` is not positive.
pub fn trace_pair(g: &HermitianField, alpha: &HermitianField) -> Result<ScalarField> {
    same_grid(&g.grid, &alpha.grid)?;
    g.check_positive()?;
    let values = match g.grid {
        Grid::Base(_) => g.ss.iter().zip(&alpha.ss).map(|(a, b)| b / a).collect(),
        Grid::Total(_) => (0..g.len())
            .map(|i| g.at(i).trace_of(&alpha.at(i)))
            .collect(),
    };
    Ok(ScalarField {
        grid: g.grid,
        values,
    })
}

/// Result of a periodic Poisson solve.
#[derive(Debug, Clone)]
pub struct PoissonSolution {
    pub psi: ScalarField,
    /// Mean of the right-hand side that had to be removed.
    pub removed_mean: f64,
}

/// Zero-mean `ψ` with `Δ_euc ψ = rhs − mean(rhs)` on a periodic grid.
pub fn poisson_solve(rhs: &ScalarField) -> Result<PoissonSolution> {
    rhs.check_finite()?;
    let dims: Vec<usize> = match rhs.grid {
        Grid::Base(bg) if bg.is_torus() => vec![bg.n1, bg.n2],
        Grid::Total(tg) => tg.dims().to_vec(),
        Grid::Base(_) => {
            return Err(Error::UnsupportedChart(
                "poisson_solve is spectral and needs a periodic chart".into(),
            ))
        }
    };
    let plan = FftNd::shared(&dims);
    let mut buf = spectral::to_complex(&rhs.values);
    plan.forward(&mut buf);
    let removed_mean = buf[0].re / rhs.len() as f64;
    let ks: Vec<Vec<f64>> = dims.iter().map(|&n| spectral::wavenumbers(n)).collect();
    let mut strides = vec![1usize; dims.len()];
    for a in (0..dims.len() - 1).rev() {
        strides[a] = strides[a + 1] * dims[a + 1];
    }
    for (idx, v) in buf.iter_mut().enumerate() {
        let k2: f64 = (0..dims.len())
            .map(|a| {
                let k = ks[a][(idx / strides[a]) % dims[a]];
                k * k
            })
            .sum();
        *v = if k2 == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            *v / (-4.0 * PI * PI * k2)
        };
    }
    plan.inverse(&mut buf);
    let psi = ScalarField {
        grid: rhs.grid,
        values: buf.iter().map(|c| c.re).collect(),
    };
    Ok(PoissonSolution { psi, removed_mean })
}

/// Euclidean Laplacian `Σ ∂²/∂x_i²` on a periodic grid (spectral).
pub fn laplacian(f: &ScalarField) -> Result<ScalarField> {
    let h = complex_hessian(f)?;
    if !f.grid.is_torus() {
        return Err(Error::UnsupportedChart(
            "laplacian needs a periodic chart".into(),
        ));
    }
    let values = match f.grid {
        Grid::Base(_) => h.ss.iter().map(|v| 4.0 * v).collect(),
        Grid::Total(_) => h.ss.iter().zip(&h.zz).map(|(a, b)| 4.0 * (a + b)).collect(),
    };
    Ok(ScalarField {
        grid: f.grid,
        values,
    })
}

/// Chart-aware quadrature against `dx∧dy` (base) or `dx₁…dx₄` (total).
pub fn integrate(f: &ScalarField) -> f64 {
    match f.grid {
        Grid::Base(bg) => match bg.chart {
            Chart::Torus => f.mean(),
            Chart::Annulus { .. } => {
                let (h, ht) = bg.spacing();
                let (nr, nt) = (bg.n1, bg.n2);
                let mut acc = 0.0;
                for i in 0..nr {
                    let w = if i == 0 || i == nr - 1 { 0.5 } else { 1.0 };
                    let (rho, _) = bg.coords(i * nt);
                    let jac = (2.0 * rho).exp();
                    let row: f64 = f.values[i * nt..(i + 1) * nt].iter().sum();
                    acc += w * jac * row;
                }
                acc * h * ht
            }
        },
        Grid::Total(_) => f.mean(),
    }
}

/// Integral of a base (1,1)-form: `∫ 2 g_ss̄ dx∧dy`.
pub fn integrate_form(g: &HermitianField) -> f64 {
    FORM_DENSITY
        * integrate(&ScalarField {
            grid: g.grid,
            values: g.ss.clone(),
        })
}
