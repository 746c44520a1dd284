//! Equality-case skeleton of a generalized geometric datum: the subspaces
//! `K`, `W_j = ker(I − C_jᵀC_j)`, the generalized independent subspaces and
//! `H_dep`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::datum::BLDatum;
use crate::error::{Error, Result};
use crate::finiteness::{deficiency, CRITICAL_TOL};
use crate::geometric::is_generalized_geometric;
use crate::linalg::{push_unique, Subspace, RANK_TOL};

const GEOMETRIC_TOL: f64 = 1e-7;
const MAX_FACTORS: usize = 16;

fn require_geometric(datum: &BLDatum) -> Result<()> {
    if !is_generalized_geometric(datum, GEOMETRIC_TOL)?.is_geometric {
        return Err(Error::NotGeometric);
    }
    Ok(())
}

fn kernels(datum: &BLDatum) -> Vec<Subspace> {
    datum
        .factors()
        .iter()
        .map(|f| Subspace::null_space(&f.c, RANK_TOL))
        .collect()
}

fn w_spaces(datum: &BLDatum) -> Vec<Subspace> {
    let n = datum.n();
    datum
        .factors()
        .iter()
        .map(|f| Subspace::null_space(&(DMatrix::identity(n, n) - f.c.transpose() * &f.c), RANK_TOL))
        .collect()
}

fn k_from(n: usize, ker: &[Subspace], w: &[Subspace]) -> Subspace {
    let parts: Vec<Subspace> = ker.iter().zip(w).map(|(a, b)| a.sum(b)).collect();
    let refs: Vec<&Subspace> = parts.iter().collect();
    Subspace::intersection(n, &refs)
}

/// `K = ∩_j (ker C_j ⊕ W_j)`.
pub fn compute_k(datum: &BLDatum) -> Result<Subspace> {
    require_geometric(datum)?;
    Ok(k_from(datum.n(), &kernels(datum), &w_spaces(datum)))
}

fn independent_from(n: usize, ker: &[Subspace], w: &[Subspace]) -> Result<Vec<Subspace>> {
    let m = ker.len();
    if m > MAX_FACTORS {
        return Err(Error::TooManyFactors(m));
    }
    let found: Vec<Subspace> = (0..1u32 << m)
        .into_par_iter()
        .map(|mask| {
            let pick: Vec<&Subspace> = (0..m)
                .map(|j| if mask >> j & 1 == 1 { &w[j] } else { &ker[j] })
                .collect();
            Subspace::intersection(n, &pick)
        })
        .collect();
    let mut out = Vec::new();
    for s in found {
        if !s.is_zero() {
            push_unique(&mut out, s);
        }
    }
    Ok(out)
}

/// Nonzero intersections `∩_j H̃_j` over all choices `H̃_j ∈ {ker C_j, W_j}`.
pub fn independent_subspaces(datum: &BLDatum) -> Result<Vec<Subspace>> {
    if datum.m() > MAX_FACTORS {
        return Err(Error::TooManyFactors(datum.m()));
    }
    require_geometric(datum)?;
    independent_from(datum.n(), &kernels(datum), &w_spaces(datum))
}

fn h_dep_from(datum: &BLDatum, k: Subspace) -> Subspace {
    let grams: Vec<DMatrix<f64>> = datum.factors().iter().map(|f| f.c.transpose() * &f.c).collect();
    let mut v = k;
    // Each pass either keeps V or drops its dimension, so n passes suffice.
    for _ in 0..=datum.n() {
        if v.is_zero() {
            break;
        }
        let mut parts = vec![v.clone()];
        parts.extend(grams.iter().map(|g| v.preimage(g)));
        let refs: Vec<&Subspace> = parts.iter().collect();
        let next = Subspace::intersection(datum.n(), &refs);
        if next.dim() == v.dim() {
            return next;
        }
        v = next;
    }
    v
}

/// Largest subspace of `K` invariant under every `C_jᵀC_j`.
pub fn compute_h_dep(datum: &BLDatum) -> Result<Subspace> {
    let k = compute_k(datum)?;
    Ok(h_dep_from(datum, k))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CriticalFlag {
    pub label: String,
    pub dim: usize,
    pub deficiency: Option<f64>,
    pub critical: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StructureReport {
    #[serde(rename = "K")]
    pub k: Subspace,
    #[serde(rename = "kerC")]
    pub ker_c: Vec<Subspace>,
    #[serde(rename = "W")]
    pub w: Vec<Subspace>,
    pub independent: Vec<Subspace>,
    #[serde(rename = "H_dep")]
    pub h_dep: Subspace,
    pub critical_flags: Vec<CriticalFlag>,
    pub gaussian_forced: bool,
}

fn flag(datum: &BLDatum, label: String, s: &Subspace) -> CriticalFlag {
    let def = (!s.is_zero()).then(|| deficiency(datum, s).expect("ambient dimension matches"));
    CriticalFlag {
        label,
        dim: s.dim(),
        deficiency: def,
        critical: def.is_some_and(|d| d.abs() <= CRITICAL_TOL),
    }
}

pub fn structure_report(datum: &BLDatum) -> Result<StructureReport> {
    if datum.m() > MAX_FACTORS {
        return Err(Error::TooManyFactors(datum.m()));
    }
    require_geometric(datum)?;
    let n = datum.n();
    let ker_c = kernels(datum);
    let w = w_spaces(datum);
    let k = k_from(n, &ker_c, &w);
    let independent = independent_from(n, &ker_c, &w)?;
    let h_dep = h_dep_from(datum, k.clone());
    let mut critical_flags = vec![flag(datum, "K".into(), &k), flag(datum, "H_dep".into(), &h_dep)];
    for (i, s) in independent.iter().enumerate() {
        critical_flags.push(flag(datum, format!("independent[{i}]"), s));
    }
    Ok(StructureReport {
        k,
        ker_c,
        w,
        gaussian_forced: independent.is_empty(),
        independent,
        h_dep,
        critical_flags,
    })
}
