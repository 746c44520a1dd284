//! Regularized Brascamp–Lieb constants.
//!
//! A datum is a family of surjections `C_j : R^n → R^{n_j}` with exponents
//! `p_j > 0`, bounds `Q_j ≻ 0` and an optional localization `𝒬 ⪰ 0`. Its
//! constant is the square root of
//!
//! ```text
//! sup { Π det(B_j)^{p_j} / det(𝒬 + Σ p_j C_jᵀ B_j C_j) : 0 < B_j ⪯ Q_j }.
//! ```
//!
//! The crate decides finiteness heuristically ([`finiteness`]), maximizes the
//! ratio with KKT certificates ([`gauss_opt`]), reduces extremizable data to
//! geometric form ([`geometric`]), computes the equality-case skeleton
//! ([`structure`]), checks the functional inequalities numerically
//! ([`verify`]), and evaluates anisotropic contraction bounds
//! ([`caffarelli`]) and the Gaussian-measure applications ([`applications`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod applications;
pub mod caffarelli;
pub mod datum;
pub mod error;
pub mod finiteness;
pub mod gauss_opt;
pub mod geometric;
pub mod linalg;
pub mod presets;
pub mod report;
pub mod sample;
pub mod structure;
pub mod verify;

pub use applications::{
    gaussian_measure_check, gaussian_vector_check, hc_build, hc_constant, hc_fixed_point_scan, hc_threshold, HCParams,
};
pub use caffarelli::{
    brenier_1d, contraction_bound, coulomb_bound, divergence_bound, gaussian_brenier_hessian, trace_inequality_check,
    Potential1D,
};
pub use datum::{validate_datum, BLDatum, GaussianInput, LinearFactor, RawDatum, RawFactor};
pub use error::{DatumError, Error, Result};
pub use finiteness::{
    deficiency, find_critical, finiteness_verdict, restrict_quotient, FinitenessStatus, FinitenessVerdict, ProbeBudget,
};
pub use gauss_opt::{kkt_check, optimize, ratio, AttainedFlag, KKTCertificate, OptConfig, OptResult};
pub use geometric::{
    apply_equivalence, is_generalized_geometric, reduce_to_geometric, EquivalenceMap, GeometricReport,
};
pub use linalg::{gaussian_integral, psd_order, sym_sqrt, Subspace, SymMatrix};
pub use structure::{compute_h_dep, compute_k, independent_subspaces, structure_report, StructureReport};
pub use verify::{
    conv_inputs, equality_check, forward_check, heatflow_monotone, reverse_check, DualInput, FunctionInput, Method,
    VerifyConfig, VerifyReport,
};
