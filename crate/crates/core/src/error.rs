use thiserror::Error;

/// One violated datum invariant, reported by [`crate::datum::validate_datum`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatumError {
    #[error("factor {factor}: C has rank {rank} < {rows} (not surjective)")]
    NonSurjectiveC { factor: usize, rank: usize, rows: usize },
    #[error("factor {factor}: Q is not positive definite (min eigenvalue {min_eig:e})")]
    NonSPDQ { factor: usize, min_eig: f64 },
    #[error("stacked maps have rank {rank} < n = {n}: the kernels intersect nontrivially")]
    DegenerateKernelIntersection { rank: usize, n: usize },
    #[error("{what} is not symmetric (max deviation {deviation:e})")]
    AsymmetricMatrix { what: String, deviation: f64 },
    #[error("{what}: expected {expected}, found {found}")]
    Shape {
        what: String,
        expected: String,
        found: String,
    },
    #[error("factor {factor}: exponent p = {p} must be positive and finite")]
    NonPositiveExponent { factor: usize, p: f64 },
    #[error("Qcal is not positive semidefinite (min eigenvalue {min_eig:e})")]
    QcalNotPsd { min_eig: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid datum: {}", join(.0))]
    InvalidDatum(Vec<DatumError>),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not symmetric (max deviation {0:e})")]
    Asymmetric(f64),
    #[error("matrix is singular or not positive definite")]
    SingularA,
    #[error("negative eigenvalue {0:e} below tolerance")]
    NegativeEigenvalue(f64),
    #[error("subspace is not critical (deficiency {0})")]
    NotCritical(f64),
    #[error("input B violates the box 0 < B_j <= Q_j at factor {0}")]
    InfeasibleB(usize),
    #[error("M = Qcal + sum p_j C_j^T B_j C_j is singular (min eigenvalue {0:e})")]
    SingularM(f64),
    #[error("line search broke down: {0}")]
    NumericalBreakdown(String),
    #[error("operation requires Qcal = 0")]
    QcalPresent,
    #[error("intertwiner {0} is singular")]
    SingularIntertwiner(String),
    #[error("KKT certificate did not pass")]
    KKTNotPassed,
    #[error("datum is not generalized geometric")]
    NotGeometric,
    #[error("{0} factors exceed the enumeration limit of 16")]
    TooManyFactors(usize),
    #[error("quadrature supports n <= {max}, got {n}")]
    DimensionTooLarge { n: usize, max: usize },
    #[error("closed form needs integer exponents or single-term inputs (factor {0})")]
    NonIntegerExponentWithClosedForm(usize),
    #[error("unsupported dimension: {0}")]
    UnsupportedDimension(String),
    #[error("input {0} is not admissible: {1}")]
    InputNotAdmissible(usize, String),
    #[error("{0} is not positive definite")]
    NotSPD(String),
    #[error("{0} is not positive semidefinite")]
    NotPSD(String),
    #[error("density mass mismatch: {0:e}")]
    MassMismatch(f64),
    #[error("trace denominator Tr(DB) = {0:e} is not positive")]
    DegenerateDenominator(f64),
    #[error("empty factor list")]
    EmptyList,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("beta = {0} must exceed 1")]
    BetaNotAboveOne(f64),
    #[error("alpha = {alpha} is below the threshold {threshold}")]
    ThresholdViolated { alpha: f64, threshold: f64 },
    #[error("condition C C^T <= P^-1 violated (min eigenvalue {0:e})")]
    ConditionViolated(f64),
}

fn join(errs: &[DatumError]) -> String {
    errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
