//! Fixtures shared by the criterion benchmarks.

use blforge::verify::Term;
use blforge::{presets, BLDatum, FunctionInput, OptConfig, SymMatrix};
use nalgebra::DVector;

/// Single restart, so a benchmark iteration is one BFGS run.
pub fn one_start() -> OptConfig {
    OptConfig {
        starts: 1,
        ..OptConfig::default()
    }
}

/// Geometric example 1 with a two-term log-sum-exp first input.
pub fn lse_inputs() -> (BLDatum, Vec<FunctionInput>) {
    let d = presets::geometric_example_1(3.0);
    let f1 = FunctionInput::new(
        d.factor(0).q.clone(),
        vec![
            Term {
                c: 0.5,
                a: DVector::from_column_slice(&[0.8, 0.3]),
            },
            Term {
                c: 0.5,
                a: DVector::from_column_slice(&[-0.8, -0.3]),
            },
        ],
    )
    .expect("admissible input");
    (d, vec![f1, FunctionInput::gaussian(SymMatrix::identity(1))])
}
