//! Built-in example actions and foliations.

use nalgebra::{DMatrix, DVector};

use crate::action::LieAlgebraAction;
use crate::foliation::{FoliationModule, Generator};

fn unit(n: usize, i: usize, j: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    m[(i, j)] = 1.0;
    m
}

/// `H, E, F` of `sl_2`.
pub fn sl2_basis() -> Vec<DMatrix<f64>> {
    vec![
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
        unit(2, 0, 1),
        unit(2, 1, 0),
    ]
}

/// `SL_2` acting linearly on `R^2`.
pub fn sl2() -> LieAlgebraAction {
    LieAlgebraAction::linear(sl2_basis(), None).expect("sl2 is a Lie algebra")
}

/// `sl_n` acting on `R^n`: diagonal differences first, then the off-diagonal units.
pub fn sln(n: usize) -> LieAlgebraAction {
    let mut basis: Vec<DMatrix<f64>> = (0..n - 1)
        .map(|i| unit(n, i, i) - unit(n, i + 1, i + 1))
        .collect();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                basis.push(unit(n, i, j));
            }
        }
    }
    LieAlgebraAction::linear(basis, None).expect("sl_n is a Lie algebra")
}

/// The foliation generated by `rho(x) d/dx` on the line.
pub fn bump_foliation() -> FoliationModule {
    FoliationModule::new(1, vec![Generator::Bump { ambient: 1, bump_axis: 0 }], 2).expect("valid module")
}

/// `R` acting on the line by the flow of `rho(x) d/dx`.
pub fn bump() -> LieAlgebraAction {
    LieAlgebraAction::with_flow(vec![unit(2, 0, 1)], bump_foliation()).expect("abelian")
}

/// `gl_2` on `R^2`, i.e. the fields `x∂x, y∂x, x∂y, y∂y` vanishing at the origin.
pub fn vanish_origin() -> LieAlgebraAction {
    LieAlgebraAction::linear(vec![unit(2, 0, 0), unit(2, 0, 1), unit(2, 1, 0), unit(2, 1, 1)], None)
        .expect("gl2 is a Lie algebra")
}

/// Translations along `x` on `R^2`.
pub fn regular() -> LieAlgebraAction {
    LieAlgebraAction::linear(
        vec![DMatrix::zeros(2, 2)],
        Some(vec![DVector::from_column_slice(&[1.0, 0.0])]),
    )
    .expect("abelian")
}

/// Rotations of the plane.
pub fn so2() -> LieAlgebraAction {
    LieAlgebraAction::linear(vec![DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])], None)
        .expect("abelian")
}

/// Two commuting rotations of `R^4 = R^2 ⊕ R^2`.
pub fn torus() -> LieAlgebraAction {
    let j = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
    let mut a = DMatrix::zeros(4, 4);
    a.view_mut((0, 0), (2, 2)).copy_from(&j);
    let mut b = DMatrix::zeros(4, 4);
    b.view_mut((2, 2), (2, 2)).copy_from(&j);
    LieAlgebraAction::linear(vec![a, b], None).expect("abelian")
}
