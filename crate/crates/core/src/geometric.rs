//! Generalized geometric data and the equivalences that reduce an
//! extremizable datum to one.
//!
//! A datum is generalized geometric when `Σ p_j C_jᵀC_j = I`,
//! `C_jC_jᵀ ⪯ I`, `Q_j ⪰ I` and `(I − C_jC_jᵀ)(Q_j − I) = 0`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::datum::{BLDatum, GaussianInput, LinearFactor};
use crate::error::{Error, Result};
use crate::gauss_opt::{kkt_check, KKTCertificate};
use crate::linalg::{SymMatrix, EIG_FLOOR};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeometricReport {
    pub sum_residual: f64,
    pub cc_max_eig: Vec<f64>,
    pub q_min_eig: Vec<f64>,
    /// `‖(I − C_jC_jᵀ)(I − Q_j⁻¹)‖_F`, zero exactly when `(I − C_jC_jᵀ)(Q_j − I)` is.
    pub coupling_residual: Vec<f64>,
    pub tol: f64,
    pub is_geometric: bool,
}

impl GeometricReport {
    /// Largest violation among the four conditions (0 when all hold exactly).
    pub fn max_violation(&self) -> f64 {
        let cc = self.cc_max_eig.iter().map(|e| e - 1.0).fold(0.0, f64::max);
        let q = self.q_min_eig.iter().map(|e| 1.0 - e).fold(0.0, f64::max);
        let c = self.coupling_residual.iter().cloned().fold(0.0, f64::max);
        self.sum_residual.max(cc).max(q).max(c)
    }
}

pub fn is_generalized_geometric(datum: &BLDatum, tol: f64) -> Result<GeometricReport> {
    if !datum.qcal_is_zero() {
        return Err(Error::QcalPresent);
    }
    let n = datum.n();
    let mut sum = DMatrix::<f64>::zeros(n, n);
    let mut cc_max_eig = Vec::new();
    let mut q_min_eig = Vec::new();
    let mut coupling_residual = Vec::new();
    for f in datum.factors() {
        sum += f.c.transpose() * &f.c * f.p;
        let cct = SymMatrix::symmetrize(&f.c * f.c.transpose());
        cc_max_eig.push(cct.max_eig());
        q_min_eig.push(f.q.min_eig());
        let nj = f.dim();
        let left = DMatrix::identity(nj, nj) - cct.matrix();
        // (I − CCᵀ)(Q − I) = 0 iff (I − CCᵀ)(I − Q⁻¹) = 0. The second form
        // stays bounded when Q has huge eigenvalues along flat directions.
        let right = match f.q.inverse_spd() {
            Ok(qi) => DMatrix::identity(nj, nj) - qi.matrix(),
            Err(_) => f.q.matrix() - DMatrix::identity(nj, nj),
        };
        coupling_residual.push((left * right).norm());
    }
    let sum_residual = (sum - DMatrix::identity(n, n)).norm();
    let is_geometric = sum_residual <= tol
        && cc_max_eig.iter().all(|&e| e <= 1.0 + tol)
        && q_min_eig.iter().all(|&e| e >= 1.0 - tol)
        && coupling_residual.iter().all(|&r| r <= tol);
    Ok(GeometricReport {
        sum_residual,
        cc_max_eig,
        q_min_eig,
        coupling_residual,
        tol,
        is_geometric,
    })
}

/// Intertwiners `D : H → H` and `D_j : H_j → H_j` with the constant's
/// scale factor `Π |det D_j|^{p_j} / |det D|`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquivalenceMap {
    #[serde(rename = "D", serialize_with = "crate::report::ser_matrix")]
    pub d: DMatrix<f64>,
    #[serde(rename = "Dj", serialize_with = "crate::report::ser_matrix_list")]
    pub dj: Vec<DMatrix<f64>>,
    pub scale: f64,
}

const SINGULAR_DET: f64 = 1e-12;

impl EquivalenceMap {
    pub fn new(datum: &BLDatum, d: DMatrix<f64>, dj: Vec<DMatrix<f64>>) -> Result<Self> {
        if d.nrows() != datum.n() || d.ncols() != datum.n() || dj.len() != datum.m() {
            return Err(Error::DimensionMismatch(
                "intertwiner shapes do not match the datum".into(),
            ));
        }
        let det_d = d.determinant();
        if det_d.abs() <= SINGULAR_DET {
            return Err(Error::SingularIntertwiner("D".into()));
        }
        let mut log_scale = -det_d.abs().ln();
        for (j, (m, f)) in dj.iter().zip(datum.factors()).enumerate() {
            if m.nrows() != f.dim() || m.ncols() != f.dim() {
                return Err(Error::DimensionMismatch(format!("D_{j} must be {0}x{0}", f.dim())));
            }
            let det = m.determinant();
            if det.abs() <= SINGULAR_DET {
                return Err(Error::SingularIntertwiner(format!("D_{j}")));
            }
            log_scale += f.p * det.abs().ln();
        }
        Ok(EquivalenceMap {
            d,
            dj,
            scale: log_scale.exp(),
        })
    }

    pub fn identity(datum: &BLDatum) -> Self {
        let dj = datum
            .factors()
            .iter()
            .map(|f| DMatrix::identity(f.dim(), f.dim()))
            .collect();
        EquivalenceMap::new(datum, DMatrix::identity(datum.n(), datum.n()), dj).expect("identity is invertible")
    }

    /// Maps undoing this one: `(D⁻¹, D_j⁻¹)` with reciprocal scale.
    pub fn inverse(&self) -> Result<Self> {
        let inv = |m: &DMatrix<f64>, what: &str| {
            m.clone()
                .try_inverse()
                .ok_or_else(|| Error::SingularIntertwiner(what.into()))
        };
        Ok(EquivalenceMap {
            d: inv(&self.d, "D")?,
            dj: self
                .dj
                .iter()
                .enumerate()
                .map(|(j, m)| inv(m, &format!("D_{j}")))
                .collect::<Result<_>>()?,
            scale: 1.0 / self.scale,
        })
    }

    /// `B_j ↦ D_jᵀ B_j D_j`, the input matching the transformed datum.
    pub fn transform_input(&self, datum: &BLDatum, b: &[SymMatrix]) -> Vec<SymMatrix> {
        debug_assert_eq!(b.len(), datum.m());
        b.iter().zip(&self.dj).map(|(bj, dj)| bj.congruence(dj)).collect()
    }
}

/// `C_j' = D_j⁻¹ C_j D`, `Q_j' = D_jᵀ Q_j D_j` and `𝒬' = Dᵀ 𝒬 D`.
pub fn apply_equivalence(datum: &BLDatum, map: &EquivalenceMap) -> Result<BLDatum> {
    let map = EquivalenceMap::new(datum, map.d.clone(), map.dj.clone())?;
    let factors = datum
        .factors()
        .iter()
        .zip(&map.dj)
        .enumerate()
        .map(|(j, (f, dj))| {
            let inv = dj
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::SingularIntertwiner(format!("D_{j}")))?;
            Ok(LinearFactor::new(inv * &f.c * &map.d, f.p, f.q.congruence(dj)))
        })
        .collect::<Result<Vec<_>>>()?;
    let qcal = datum.qcal().map(|q| q.congruence(&map.d));
    BLDatum::new(datum.n(), factors, qcal)
}

const POLISH_ITERS: usize = 1000;

fn kkt_residual(c: &KKTCertificate) -> f64 {
    let comp = c.complementarity_residual.iter().cloned().fold(0.0, f64::max);
    let neg = c.slack_min_eig.iter().map(|&x| (-x).max(0.0)).fold(0.0, f64::max);
    comp.max(neg)
}

/// Refines a KKT point with the capped fixed-point map
/// `R_j ← min(W_j⁻¹, I)`, where `R_j = Q_j^{-1/2} B_j Q_j^{-1/2}` and
/// `W_j = Q_j^{1/2} C_j M⁻¹ C_jᵀ Q_j^{1/2}`. Its fixed points satisfy the
/// KKT conditions exactly. The optimizer stops at a small gradient, but in
/// ill-conditioned `B_j` the reduced coupling residual picks up a factor
/// `cond(B_j)^{1/2}`, so the extra accuracy matters there.
fn polish(datum: &BLDatum, input: &GaussianInput, kkt_tol: f64) -> Result<GaussianInput> {
    let qh = datum.factors().iter().map(|f| f.q.sqrt()).collect::<Result<Vec<_>>>()?;
    let mut best = input.clone();
    let mut best_res = kkt_residual(&kkt_check(datum, input, kkt_tol)?);
    let mut cur = input.clone();
    for _ in 0..POLISH_ITERS {
        let minv = match cur.m().inverse_spd() {
            Ok(m) => m,
            Err(_) => break,
        };
        let b = datum
            .factors()
            .iter()
            .zip(&qh)
            .map(|(f, qh)| {
                let w = minv.congruence(&f.c.transpose()).congruence(qh.matrix());
                w.map_spectrum(|x| if x > 1.0 { 1.0 / x } else { 1.0 })
                    .congruence(qh.matrix())
            })
            .collect();
        cur = GaussianInput::unchecked(datum, b);
        let cert = match kkt_check(datum, &cur, kkt_tol) {
            Ok(c) => c,
            Err(_) => break,
        };
        let res = kkt_residual(&cert);
        if res < best_res {
            best_res = res;
            best = cur.clone();
        }
        if res <= 1e-14 {
            break;
        }
    }
    Ok(best)
}

/// Builds the geometric datum equivalent to `datum` from a KKT point `B`
/// with `D = M^{-1/2}` and `D_j = B_j^{-1/2}`. The returned map has scale
/// `1/BL`, so `BL(datum) = 1/scale`.
pub fn reduce_to_geometric(datum: &BLDatum, input: &GaussianInput, kkt_tol: f64) -> Result<(BLDatum, EquivalenceMap)> {
    if !datum.qcal_is_zero() {
        return Err(Error::QcalPresent);
    }
    let cert = kkt_check(datum, input, kkt_tol)?;
    if !cert.passed {
        return Err(Error::KKTNotPassed);
    }
    let polished = polish(datum, input, kkt_tol)?;
    let input = &polished;
    let m = input.m();
    let lo = m.min_eig();
    if lo <= EIG_FLOOR {
        return Err(Error::SingularM(lo));
    }
    let d = m.inv_sqrt(EIG_FLOOR)?.into_inner();
    let dj = input
        .b()
        .iter()
        .map(|b| b.inv_sqrt(EIG_FLOOR).map(SymMatrix::into_inner))
        .collect::<Result<Vec<_>>>()?;
    let map = EquivalenceMap::new(datum, d, dj)?;
    let geo = apply_equivalence(datum, &map)?;
    Ok((geo, map))
}
