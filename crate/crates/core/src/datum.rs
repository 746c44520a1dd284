//! Brascamp–Lieb data, Gaussian inputs and the external JSON shapes.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{DatumError, Error, Result};
use crate::linalg::{asymmetry, matrix_from_rows, matrix_to_rows, rank, SymMatrix, PSD_TOL};

/// Singular values above this make `C` surjective.
pub const SURJECTIVITY_TOL: f64 = 1e-10;

/// One factor `(C_j, p_j, Q_j)` with `C_j : R^n → R^{n_j}`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearFactor {
    pub c: DMatrix<f64>,
    pub p: f64,
    pub q: SymMatrix,
}

impl LinearFactor {
    pub fn new(c: DMatrix<f64>, p: f64, q: SymMatrix) -> Self {
        LinearFactor { c, p, q }
    }

    /// Target dimension `n_j`.
    pub fn dim(&self) -> usize {
        self.c.nrows()
    }
}

/// A regularized datum `(C, p, Q, 𝒬)`; `qcal = None` means `𝒬 = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct BLDatum {
    n: usize,
    factors: Vec<LinearFactor>,
    qcal: Option<SymMatrix>,
}

impl BLDatum {
    /// Checks shapes, exponents, surjectivity of each `C_j`, `Q_j ≻ 0` and
    /// `𝒬 ⪰ 0`. Kernel nondegeneracy is left to [`validate_datum`] so that
    /// degenerate data can still be probed for finiteness.
    pub fn new(n: usize, factors: Vec<LinearFactor>, qcal: Option<SymMatrix>) -> Result<Self> {
        let errs = structural_errors(n, &factors, qcal.as_ref());
        if !errs.is_empty() {
            return Err(Error::InvalidDatum(errs));
        }
        Ok(BLDatum { n, factors, qcal })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn factors(&self) -> &[LinearFactor] {
        &self.factors
    }

    pub fn factor(&self, j: usize) -> &LinearFactor {
        &self.factors[j]
    }

    pub fn m(&self) -> usize {
        self.factors.len()
    }

    pub fn qcal(&self) -> Option<&SymMatrix> {
        self.qcal.as_ref()
    }

    /// `𝒬` as a matrix (zero when absent).
    pub fn qcal_matrix(&self) -> SymMatrix {
        self.qcal.clone().unwrap_or_else(|| SymMatrix::zeros(self.n))
    }

    /// True when `𝒬` is absent or numerically zero.
    pub fn qcal_is_zero(&self) -> bool {
        self.qcal.as_ref().is_none_or(|q| q.amax() == 0.0)
    }

    /// `Σ p_j n_j`.
    pub fn weighted_dim(&self) -> f64 {
        self.factors.iter().map(|f| f.p * f.dim() as f64).sum()
    }

    /// Same maps and exponents with new bounds.
    pub fn with_bounds(&self, q: Vec<SymMatrix>) -> Result<Self> {
        let factors = self
            .factors
            .iter()
            .zip(q)
            .map(|(f, q)| LinearFactor::new(f.c.clone(), f.p, q))
            .collect();
        BLDatum::new(self.n, factors, self.qcal.clone())
    }

    pub fn with_qcal(&self, qcal: Option<SymMatrix>) -> Result<Self> {
        BLDatum::new(self.n, self.factors.clone(), qcal)
    }

    /// Removes factor `j` (used to build degenerate probes).
    pub fn without_factor(&self, j: usize) -> Result<Self> {
        let mut factors = self.factors.clone();
        factors.remove(j);
        BLDatum::new(self.n, factors, self.qcal.clone())
    }

    /// Rank of the stacked maps.
    pub fn stacked_rank(&self) -> usize {
        let rows: usize = self.factors.iter().map(|f| f.dim()).sum();
        let mut s = DMatrix::zeros(rows, self.n);
        let mut r = 0;
        for f in &self.factors {
            s.view_mut((r, 0), (f.dim(), self.n)).copy_from(&f.c);
            r += f.dim();
        }
        rank(&s, SURJECTIVITY_TOL)
    }

    pub fn to_raw(&self) -> RawDatum {
        RawDatum {
            n: self.n,
            qcal: self.qcal.as_ref().map(|q| q.to_rows()),
            factors: self
                .factors
                .iter()
                .map(|f| RawFactor {
                    c: matrix_to_rows(&f.c),
                    p: f.p,
                    q: f.q.to_rows(),
                })
                .collect(),
        }
    }
}

fn structural_errors(n: usize, factors: &[LinearFactor], qcal: Option<&SymMatrix>) -> Vec<DatumError> {
    let mut errs = Vec::new();
    if n == 0 {
        errs.push(DatumError::Shape {
            what: "n".into(),
            expected: "positive".into(),
            found: "0".into(),
        });
    }
    if factors.is_empty() {
        errs.push(DatumError::Shape {
            what: "factors".into(),
            expected: "at least one factor".into(),
            found: "none".into(),
        });
    }
    for (j, f) in factors.iter().enumerate() {
        if f.c.ncols() != n || f.c.nrows() == 0 {
            errs.push(DatumError::Shape {
                what: format!("factor {j}: C"),
                expected: format!("n_j x {n} with n_j >= 1"),
                found: format!("{}x{}", f.c.nrows(), f.c.ncols()),
            });
            continue;
        }
        if !(f.p > 0.0 && f.p.is_finite()) {
            errs.push(DatumError::NonPositiveExponent { factor: j, p: f.p });
        }
        let r = rank(&f.c, SURJECTIVITY_TOL);
        if r < f.c.nrows() {
            errs.push(DatumError::NonSurjectiveC {
                factor: j,
                rank: r,
                rows: f.c.nrows(),
            });
        }
        if f.q.dim() != f.c.nrows() {
            errs.push(DatumError::Shape {
                what: format!("factor {j}: Q"),
                expected: format!("{0}x{0}", f.c.nrows()),
                found: format!("{0}x{0}", f.q.dim()),
            });
        } else {
            let lo = f.q.min_eig();
            if lo <= PSD_TOL {
                errs.push(DatumError::NonSPDQ { factor: j, min_eig: lo });
            }
        }
    }
    if let Some(q) = qcal {
        if q.dim() != n {
            errs.push(DatumError::Shape {
                what: "Qcal".into(),
                expected: format!("{n}x{n}"),
                found: format!("{0}x{0}", q.dim()),
            });
        } else {
            let lo = q.min_eig();
            if lo < -PSD_TOL {
                errs.push(DatumError::QcalNotPsd { min_eig: lo });
            }
        }
    }
    errs
}

/// Datum file layout: `{"n", "Qcal", "factors": [{"C", "p", "Q"}]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawDatum {
    pub n: usize,
    #[serde(rename = "Qcal", default)]
    pub qcal: Option<Vec<Vec<f64>>>,
    pub factors: Vec<RawFactor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawFactor {
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    pub p: f64,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
}

fn sym_or_report(rows: &[Vec<f64>], what: &str, errs: &mut Vec<DatumError>) -> Option<SymMatrix> {
    let m = match matrix_from_rows(rows) {
        Ok(m) => m,
        Err(_) => {
            errs.push(DatumError::Shape {
                what: what.into(),
                expected: "rectangular rows".into(),
                found: "ragged rows".into(),
            });
            return None;
        }
    };
    if m.nrows() != m.ncols() {
        errs.push(DatumError::Shape {
            what: what.into(),
            expected: "square".into(),
            found: format!("{}x{}", m.nrows(), m.ncols()),
        });
        return None;
    }
    let dev = asymmetry(&m);
    if dev > 1e-12 {
        errs.push(DatumError::AsymmetricMatrix {
            what: what.into(),
            deviation: dev,
        });
        return None;
    }
    Some(SymMatrix::symmetrize(m))
}

/// Full validation: every structural invariant plus `∩ ker C_j = {0}` when
/// `𝒬` is absent. Returns every violation found.
pub fn validate_datum(raw: &RawDatum) -> std::result::Result<BLDatum, Vec<DatumError>> {
    let mut errs = Vec::new();
    let mut factors = Vec::new();
    for (j, rf) in raw.factors.iter().enumerate() {
        let c = match matrix_from_rows(&rf.c) {
            Ok(c) => c,
            Err(_) => {
                errs.push(DatumError::Shape {
                    what: format!("factor {j}: C"),
                    expected: "rectangular rows".into(),
                    found: "ragged rows".into(),
                });
                continue;
            }
        };
        if let Some(q) = sym_or_report(&rf.q, &format!("factor {j}: Q"), &mut errs) {
            factors.push(LinearFactor::new(c, rf.p, q));
        }
    }
    let qcal = raw
        .qcal
        .as_ref()
        .and_then(|rows| sym_or_report(rows, "Qcal", &mut errs));
    if !errs.is_empty() {
        return Err(errs);
    }
    let errs = structural_errors(raw.n, &factors, qcal.as_ref());
    if !errs.is_empty() {
        return Err(errs);
    }
    let datum = BLDatum {
        n: raw.n,
        factors,
        qcal,
    };
    if datum.qcal.is_none() {
        let r = datum.stacked_rank();
        if r < datum.n {
            return Err(vec![DatumError::DegenerateKernelIntersection { rank: r, n: datum.n }]);
        }
    }
    Ok(datum)
}

/// Feasible Gaussian input `(B_j)` with cached `M = 𝒬 + Σ p_j C_jᵀ B_j C_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianInput {
    b: Vec<SymMatrix>,
    m: SymMatrix,
}

impl GaussianInput {
    /// Checks `0 < B_j ⪯ Q_j` (tolerance 1e-9 relative to `Q_j`).
    pub fn new(datum: &BLDatum, b: Vec<SymMatrix>) -> Result<Self> {
        if b.len() != datum.m() {
            return Err(Error::DimensionMismatch(format!(
                "{} inputs for {} factors",
                b.len(),
                datum.m()
            )));
        }
        for (j, (bj, f)) in b.iter().zip(datum.factors()).enumerate() {
            if bj.dim() != f.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "input {j} has dim {} but factor has {}",
                    bj.dim(),
                    f.dim()
                )));
            }
            let tol = PSD_TOL * (1.0 + f.q.amax());
            if bj.min_eig() <= 0.0 || f.q.sub(bj).min_eig() < -tol {
                return Err(Error::InfeasibleB(j));
            }
        }
        Ok(Self::unchecked(datum, b))
    }

    /// Skips the box check; `M` is still computed.
    pub fn unchecked(datum: &BLDatum, b: Vec<SymMatrix>) -> Self {
        let m = assemble_m(datum, &b);
        GaussianInput { b, m }
    }

    /// `B_j = Q_j` for every factor.
    pub fn at_bounds(datum: &BLDatum) -> Self {
        Self::unchecked(datum, datum.factors().iter().map(|f| f.q.clone()).collect())
    }

    pub fn identity(datum: &BLDatum) -> Result<Self> {
        Self::new(
            datum,
            datum.factors().iter().map(|f| SymMatrix::identity(f.dim())).collect(),
        )
    }

    pub fn b(&self) -> &[SymMatrix] {
        &self.b
    }

    pub fn m(&self) -> &SymMatrix {
        &self.m
    }

    pub fn into_parts(self) -> (Vec<SymMatrix>, SymMatrix) {
        (self.b, self.m)
    }
}

/// `𝒬 + Σ p_j C_jᵀ B_j C_j`.
pub fn assemble_m(datum: &BLDatum, b: &[SymMatrix]) -> SymMatrix {
    let mut m = datum.qcal_matrix().into_inner();
    for (f, bj) in datum.factors().iter().zip(b) {
        m += f.c.transpose() * bj.matrix() * &f.c * f.p;
    }
    SymMatrix::symmetrize(m)
}
