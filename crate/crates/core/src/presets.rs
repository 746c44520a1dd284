//! Small reference data used by tests, benchmarks and the CLI.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::DMatrix;

use crate::datum::{BLDatum, LinearFactor};
use crate::linalg::SymMatrix;

fn row(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, v.len(), v)
}

fn one(q: f64) -> SymMatrix {
    SymMatrix::diag(&[q])
}

/// n = 4, five rank-one factors, p = (2, ½, ½, 2, 2), all bounds 1.
/// The supremum is approached as b₂ = b₃ → 0 and never attained.
pub fn example_i() -> BLDatum {
    let c = [
        [1.0, -1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ];
    let p = [2.0, 0.5, 0.5, 2.0, 2.0];
    let factors = c
        .iter()
        .zip(p)
        .map(|(c, p)| LinearFactor::new(row(c), p, one(1.0)))
        .collect();
    BLDatum::new(4, factors, None).expect("example (i) is well formed")
}

/// n = 2, C₁ = [[1,1],[0,1]], C₂ = (1, 2), p = (1, 2), Q = (I₂, 1).
pub fn example_ii() -> BLDatum {
    let factors = vec![
        LinearFactor::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            1.0,
            SymMatrix::identity(2),
        ),
        LinearFactor::new(row(&[1.0, 2.0]), 2.0, one(1.0)),
    ];
    BLDatum::new(2, factors, None).expect("example (ii) is well formed")
}

/// `B_ε = ½[[1+ε, 1−ε], [1−ε, 1+ε]]`, eigenvalues {ε, 1}.
pub fn example_ii_b_eps(eps: f64) -> SymMatrix {
    SymMatrix::diag(&[0.5 * (1.0 + eps), 0.5 * (1.0 + eps)]).add(&SymMatrix::symmetrize(DMatrix::from_row_slice(
        2,
        2,
        &[0.0, 0.5 * (1.0 - eps), 0.5 * (1.0 - eps), 0.0],
    )))
}

/// Geometric datum: C₁ = diag(1/√2, 1), C₂ = (1/√2, 0), Q₁ = diag(1, λ),
/// Q₂ = 1, p = (1, 1).
pub fn geometric_example_1(lambda: f64) -> BLDatum {
    let factors = vec![
        LinearFactor::new(
            DMatrix::from_row_slice(2, 2, &[FRAC_1_SQRT_2, 0.0, 0.0, 1.0]),
            1.0,
            SymMatrix::diag(&[1.0, lambda]),
        ),
        LinearFactor::new(row(&[FRAC_1_SQRT_2, 0.0]), 1.0, one(1.0)),
    ];
    BLDatum::new(2, factors, None).expect("geometric example 1 is well formed")
}

/// Geometric datum with four factors and p = ½ throughout; it is simple.
pub fn geometric_example_2() -> BLDatum {
    let s = FRAC_1_SQRT_2;
    let factors = vec![
        LinearFactor::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, s]),
            0.5,
            SymMatrix::diag(&[2.0, 1.0]),
        ),
        LinearFactor::new(row(&[0.0, s]), 0.5, one(1.0)),
        LinearFactor::new(row(&[s, s]), 0.5, one(2.0)),
        LinearFactor::new(row(&[s, -s]), 0.5, one(2.0)),
    ];
    BLDatum::new(2, factors, None).expect("geometric example 2 is well formed")
}

/// Single factor `C = I_n`, `p = 1`, `Q = q·I_n`.
pub fn single_identity(n: usize, q: f64) -> BLDatum {
    let factors = vec![LinearFactor::new(
        DMatrix::identity(n, n),
        1.0,
        SymMatrix::scaled_identity(n, q),
    )];
    BLDatum::new(n, factors, None).expect("identity datum is well formed")
}
