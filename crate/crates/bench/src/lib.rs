//! Fixtures shared by the benchmarks.

use std::f64::consts::PI;

use krflow::{
    BaseGrid, DensityField, GkeProblem, Grid, HermitianField, Lambda, ScalarField, TotalGrid,
};

/// Smooth test field on a total grid.
pub fn total_field(n: usize, m: usize) -> ScalarField {
    let tg = TotalGrid::new(BaseGrid::torus(n, n).expect("even size"), m, m).expect("even size");
    tg.sample(|x| {
        (2.0 * PI * x[0]).cos() * (1.0 + 0.3 * (2.0 * PI * (x[2] + x[3])).sin())
            + 0.2 * (2.0 * PI * x[1]).sin()
    })
}

/// Flat-χ torus problem with a smooth density.
pub fn torus_problem(n: usize) -> GkeProblem {
    let g = BaseGrid::torus(n, n).expect("even size");
    let chi =
        HermitianField::base_form(&ScalarField::constant(Grid::Base(g), 1.0)).expect("positive");
    let f = g.sample(|x, y| (0.2 * (2.0 * PI * x).cos() + 0.1 * (2.0 * PI * (x + y)).sin()).exp());
    GkeProblem::new(
        chi,
        DensityField::from_field(&f).expect("positive"),
        Lambda::MinusOne,
    )
    .expect("valid problem")
}
