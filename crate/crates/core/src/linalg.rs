//! Dense symmetric matrices, the semidefinite order, spectral square roots,
//! the closed-form Gaussian integral and subspaces with orthonormal bases.
//!
//! Everything here works at desk scale (n up to a few dozen) on dense
//! column-major `nalgebra` storage.

use std::f64::consts::PI;
use std::ops::Deref;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Default tolerance for semidefinite comparisons.
pub const PSD_TOL: f64 = 1e-9;
/// Singular values above this count towards the rank.
pub const RANK_TOL: f64 = 1e-9;
/// Two subspaces whose largest principal angle is below this are the same.
pub const ANGLE_TOL: f64 = 1e-7;
/// Eigenvalue floor for inverse square roots.
pub const EIG_FLOOR: f64 = 1e-12;

/// Dense real symmetric matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl Deref for SymMatrix {
    type Target = DMatrix<f64>;
    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Largest |m_ij - m_ji| relative to `1 + max|m_ij|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = 1.0 + m.amax();
    let mut dev: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..i {
            dev = dev.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    dev / scale
}

impl SymMatrix {
    /// Checks squareness and symmetry to 1e-12 relative, then symmetrizes.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let dev = asymmetry(&m);
        if dev > 1e-12 {
            return Err(Error::Asymmetric(dev));
        }
        Ok(Self::symmetrize(m))
    }

    /// Symmetric part `(m + mᵀ)/2` without any check.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(matrix_from_rows(rows)?)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        SymMatrix(DMatrix::identity(n, n) * s)
    }

    pub fn diag(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(&self.0)
    }

    /// Eigenvalues in ascending order with matching eigenvector columns.
    pub fn eigen(&self) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.dim();
        if n == 0 {
            return (DVector::zeros(0), DMatrix::zeros(0, 0));
        }
        let e = SymmetricEigen::new(self.0.clone());
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| e.eigenvalues[a].total_cmp(&e.eigenvalues[b]));
        let vals = DVector::from_iterator(n, idx.iter().map(|&i| e.eigenvalues[i]));
        let mut vecs = DMatrix::zeros(n, n);
        for (k, &i) in idx.iter().enumerate() {
            vecs.set_column(k, &e.eigenvectors.column(i));
        }
        (vals, vecs)
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        self.eigen().0
    }

    pub fn min_eig(&self) -> f64 {
        if self.dim() == 0 {
            return f64::INFINITY;
        }
        self.0.clone().symmetric_eigenvalues().min()
    }

    pub fn max_eig(&self) -> f64 {
        if self.dim() == 0 {
            return f64::NEG_INFINITY;
        }
        self.0.clone().symmetric_eigenvalues().max()
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        self.min_eig() >= -tol
    }

    pub fn is_spd(&self, tol: f64) -> bool {
        self.min_eig() >= tol
    }

    /// `U f(Λ) Uᵀ` for a scalar map `f` applied to the eigenvalues.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let (vals, vecs) = self.eigen();
        let d = DMatrix::from_diagonal(&vals.map(f));
        SymMatrix::symmetrize(&vecs * d * vecs.transpose())
    }

    /// Spectral square root; eigenvalues in [-1e-9, 0) are clamped to zero.
    pub fn sqrt(&self) -> Result<SymMatrix> {
        let lo = self.min_eig();
        if lo < -PSD_TOL {
            return Err(Error::NegativeEigenvalue(lo));
        }
        Ok(self.map_spectrum(|x| x.max(0.0).sqrt()))
    }

    /// Spectral inverse square root; fails if an eigenvalue is below `floor`.
    pub fn inv_sqrt(&self, floor: f64) -> Result<SymMatrix> {
        let lo = self.min_eig();
        if lo < floor {
            return Err(Error::SingularA);
        }
        Ok(self.map_spectrum(|x| 1.0 / x.sqrt()))
    }

    /// Inverse through Cholesky; fails unless positive definite.
    pub fn inverse_spd(&self) -> Result<SymMatrix> {
        let ch = self.0.clone().cholesky().ok_or(Error::SingularA)?;
        Ok(SymMatrix::symmetrize(ch.inverse()))
    }

    /// General symmetric inverse through LU.
    pub fn inverse(&self) -> Result<SymMatrix> {
        let inv = self.0.clone().try_inverse().ok_or(Error::SingularA)?;
        Ok(SymMatrix::symmetrize(inv))
    }

    /// `log det` through Cholesky; `None` unless positive definite.
    pub fn log_det_spd(&self) -> Option<f64> {
        if self.dim() == 0 {
            return Some(0.0);
        }
        let ch = self.0.clone().cholesky()?;
        Some(2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
    }

    pub fn det(&self) -> f64 {
        if self.dim() == 0 {
            return 1.0;
        }
        self.0.determinant()
    }

    /// `tᵀ S t`.
    pub fn congruence(&self, t: &DMatrix<f64>) -> SymMatrix {
        SymMatrix::symmetrize(t.transpose() * &self.0 * t)
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &other.0)
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix(&self.0 * s)
    }
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::DimensionMismatch("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// True iff `λ_min(B − A) ≥ −tol`, i.e. `A ⪯ B`.
pub fn psd_order(a: &SymMatrix, b: &SymMatrix, tol: f64) -> Result<bool> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "psd_order on {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(b.sub(a).min_eig() >= -tol)
}

/// Spectral square root of a PSD matrix.
pub fn sym_sqrt(a: &SymMatrix) -> Result<SymMatrix> {
    a.sqrt()
}

/// `log ∫ exp(−π⟨Ax,x⟩ − ⟨b,x⟩) dx = −½ log det A + ⟨A⁻¹b,b⟩/4π`.
pub fn log_gaussian_integral(a: &SymMatrix, b: &DVector<f64>) -> Result<f64> {
    if b.len() != a.dim() {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {} against {}x{} matrix",
            b.len(),
            a.dim(),
            a.dim()
        )));
    }
    let ch = a.matrix().clone().cholesky().ok_or(Error::SingularA)?;
    let logdet = 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let quad = b.dot(&ch.solve(b));
    Ok(-0.5 * logdet + quad / (4.0 * PI))
}

/// `∫ exp(−π⟨Ax,x⟩ − ⟨b,x⟩) dx = det(A)^{−1/2} exp(⟨A⁻¹b,b⟩/4π)`.
pub fn gaussian_integral(a: &SymMatrix, b: &DVector<f64>) -> Result<f64> {
    log_gaussian_integral(a, b).map(f64::exp)
}

fn svd_padded(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    // Pads with zero rows so that V is square and carries the null space.
    let (r, c) = a.shape();
    let m = if r >= c {
        a.clone()
    } else {
        let mut p = DMatrix::zeros(c, c);
        p.view_mut((0, 0), (r, c)).copy_from(a);
        p
    };
    let svd = m.svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    (svd.singular_values, vt)
}

pub fn rank(a: &DMatrix<f64>, tol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .filter(|&&s| s > tol)
        .count()
}

/// Subspace of `R^n` held as an orthonormal basis (columns).
#[derive(Clone, Debug, PartialEq)]
pub struct Subspace {
    basis: DMatrix<f64>,
}

impl Subspace {
    pub fn zero(n: usize) -> Self {
        Subspace {
            basis: DMatrix::zeros(n, 0),
        }
    }

    pub fn full(n: usize) -> Self {
        Subspace {
            basis: DMatrix::identity(n, n),
        }
    }

    /// Accepts a basis whose columns are orthonormal within 1e-10.
    pub fn from_orthonormal(basis: DMatrix<f64>) -> Result<Self> {
        let k = basis.ncols();
        let gram = basis.transpose() * &basis;
        let err = (gram - DMatrix::<f64>::identity(k, k)).amax();
        if err > 1e-10 {
            return Err(Error::DimensionMismatch(format!(
                "basis is not orthonormal (deviation {err:e})"
            )));
        }
        Ok(Subspace { basis })
    }

    /// Column space of `m`, singular values above `tol`.
    pub fn column_space(m: &DMatrix<f64>, tol: f64) -> Self {
        let n = m.nrows();
        if m.ncols() == 0 || n == 0 {
            return Subspace::zero(n);
        }
        let svd = m.clone().svd(true, false);
        let u = svd.u.expect("u requested");
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > tol)
            .collect();
        let mut basis = DMatrix::zeros(n, keep.len());
        for (k, &i) in keep.iter().enumerate() {
            basis.set_column(k, &u.column(i));
        }
        Subspace { basis }
    }

    /// Null space of `m` (as a subspace of its domain).
    pub fn null_space(m: &DMatrix<f64>, tol: f64) -> Self {
        let n = m.ncols();
        if m.nrows() == 0 {
            return Subspace::full(n);
        }
        if n == 0 {
            return Subspace::zero(0);
        }
        let (sv, vt) = svd_padded(m);
        let keep: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] <= tol).collect();
        let mut basis = DMatrix::zeros(n, keep.len());
        for (k, &i) in keep.iter().enumerate() {
            basis.set_column(k, &vt.row(i).transpose());
        }
        Subspace { basis }
    }

    /// Span of the given vectors.
    pub fn span(n: usize, vectors: &[Vec<f64>]) -> Self {
        let m = DMatrix::from_fn(n, vectors.len(), |i, j| vectors[j][i]);
        Subspace::column_space(&m, RANK_TOL)
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn is_zero(&self) -> bool {
        self.dim() == 0
    }

    pub fn is_full(&self) -> bool {
        self.dim() == self.ambient_dim()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn projector(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }

    pub fn complement_projector(&self) -> DMatrix<f64> {
        let n = self.ambient_dim();
        DMatrix::identity(n, n) - self.projector()
    }

    pub fn complement(&self) -> Subspace {
        Subspace::column_space(&self.complement_projector(), 0.5)
    }

    /// Intersection of all subspaces in `list` (ambient space if empty).
    pub fn intersection(n: usize, list: &[&Subspace]) -> Subspace {
        if list.is_empty() {
            return Subspace::full(n);
        }
        let rows: usize = list.len() * n;
        let mut stacked = DMatrix::zeros(rows, n);
        for (k, s) in list.iter().enumerate() {
            stacked
                .view_mut((k * n, 0), (n, n))
                .copy_from(&s.complement_projector());
        }
        Subspace::null_space(&stacked, RANK_TOL)
    }

    pub fn intersect(&self, other: &Subspace) -> Subspace {
        Subspace::intersection(self.ambient_dim(), &[self, other])
    }

    pub fn sum(&self, other: &Subspace) -> Subspace {
        let n = self.ambient_dim();
        let mut m = DMatrix::zeros(n, self.dim() + other.dim());
        m.view_mut((0, 0), (n, self.dim())).copy_from(&self.basis);
        m.view_mut((0, self.dim()), (n, other.dim())).copy_from(&other.basis);
        Subspace::column_space(&m, RANK_TOL)
    }

    /// Image `C·V`.
    pub fn image(&self, c: &DMatrix<f64>) -> Subspace {
        let img = c * &self.basis;
        if img.ncols() == 0 {
            return Subspace::zero(c.nrows());
        }
        Subspace::column_space(&img, RANK_TOL)
    }

    /// Preimage `{x : T x ∈ self}` under `t`.
    pub fn preimage(&self, t: &DMatrix<f64>) -> Subspace {
        Subspace::null_space(&(self.complement_projector() * t), RANK_TOL)
    }

    /// Largest residual `‖(I − P_self) v‖` over an orthonormal basis of `other`.
    pub fn containment_residual(&self, other: &Subspace) -> f64 {
        if other.is_zero() {
            return 0.0;
        }
        let r = self.complement_projector() * &other.basis;
        spectral_norm(&r)
    }

    pub fn contains(&self, other: &Subspace, tol: f64) -> bool {
        self.containment_residual(other) <= tol
    }

    /// Sine of the largest principal angle; 1 when dimensions differ.
    pub fn distance(&self, other: &Subspace) -> f64 {
        if self.dim() != other.dim() {
            return 1.0;
        }
        self.containment_residual(other)
    }

    pub fn same_as(&self, other: &Subspace) -> bool {
        self.distance(other) < ANGLE_TOL
    }

    /// Is `T V ⊆ V`? Returns the residual `‖(I−P) T B‖`.
    pub fn invariance_residual(&self, t: &DMatrix<f64>) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        spectral_norm(&(self.complement_projector() * t * &self.basis))
    }
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Pushes `s` unless an equal subspace is already present.
pub fn push_unique(list: &mut Vec<Subspace>, s: Subspace) -> bool {
    if list.iter().any(|t| t.same_as(&s)) {
        return false;
    }
    list.push(s);
    true
}
