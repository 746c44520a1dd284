//! Finiteness of the BL constant through the dimension condition
//! `dim V ≤ Σ p_j dim(C_j V)`, critical subspaces, and the split of a datum
//! along a critical subspace.
//!
//! Probing is one-sided: a negative deficiency certifies an infinite
//! constant, while the absence of one is only evidence of finiteness.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datum::{BLDatum, LinearFactor};
use crate::error::{Error, Result};
use crate::linalg::{push_unique, rank, Subspace, SymMatrix, PSD_TOL, RANK_TOL};
use crate::sample::{random_orthonormal, substream, BlRng};

/// Subspaces with `|deficiency| ≤ CRITICAL_TOL` count as critical.
pub const CRITICAL_TOL: f64 = 1e-9;
/// Upper bound on sum/intersection evaluations while closing the lattice.
const LATTICE_OPS: usize = 1 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeBudget {
    pub samples: usize,
    pub seed: u64,
    pub lattice_cap: usize,
}

impl Default for ProbeBudget {
    fn default() -> Self {
        ProbeBudget {
            samples: 10_000,
            seed: 0,
            lattice_cap: 4096,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FinitenessStatus {
    Infinite,
    FiniteHeuristic,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FinitenessVerdict {
    pub status: FinitenessStatus,
    pub witness: Option<Subspace>,
    /// Minimum deficiency over everything probed; `None` when nothing was probed.
    pub deficiency_min: Option<f64>,
    pub probes: usize,
    pub lattice_size: usize,
    /// The lattice closure stopped at its cap before saturating.
    pub budget_exhausted: bool,
    pub note: Option<String>,
}

fn check_ambient(datum: &BLDatum, v: &Subspace) -> Result<()> {
    if v.ambient_dim() != datum.n() {
        return Err(Error::DimensionMismatch(format!(
            "subspace lives in R^{} but the datum acts on R^{}",
            v.ambient_dim(),
            datum.n()
        )));
    }
    Ok(())
}

fn deficiency_of_basis(datum: &BLDatum, basis: &DMatrix<f64>) -> f64 {
    let seen: f64 = datum
        .factors()
        .iter()
        .map(|f| f.p * rank(&(&f.c * basis), RANK_TOL) as f64)
        .sum();
    seen - basis.ncols() as f64
}

/// `Σ p_j dim(C_j V) − dim V`.
pub fn deficiency(datum: &BLDatum, v: &Subspace) -> Result<f64> {
    check_ambient(datum, v)?;
    if v.is_zero() {
        return Err(Error::DimensionMismatch("deficiency of the zero subspace".into()));
    }
    Ok(deficiency_of_basis(datum, v.basis()))
}

/// `ker 𝒬` when `𝒬` is present, otherwise the whole space.
fn probe_space(datum: &BLDatum) -> Subspace {
    match datum.qcal() {
        Some(q) if !datum.qcal_is_zero() => Subspace::null_space(q.matrix(), PSD_TOL * (1.0 + q.amax())),
        _ => Subspace::full(datum.n()),
    }
}

fn subspace_key(s: &Subspace) -> Vec<i64> {
    let mut key = vec![s.dim() as i64];
    key.extend(s.projector().iter().map(|x| (x * 1e6).round() as i64));
    key
}

/// Generators `ker C_j`, `ker(I − C_jᵀC_j)` cut down to `within`, closed
/// under sum and intersection. Returns the nonzero elements and whether the
/// cap was hit.
fn lattice(datum: &BLDatum, within: &Subspace, cap: usize) -> (Vec<Subspace>, bool) {
    let n = datum.n();
    let mut seen = HashSet::new();
    let mut elems: Vec<Subspace> = Vec::new();
    let mut add = |s: Subspace, elems: &mut Vec<Subspace>| {
        if !s.is_zero() && seen.insert(subspace_key(&s)) {
            elems.push(s);
        }
    };
    add(within.clone(), &mut elems);
    for f in datum.factors() {
        let ker = Subspace::null_space(&f.c, RANK_TOL);
        let ctc = f.c.transpose() * &f.c;
        let w = Subspace::null_space(&(DMatrix::identity(n, n) - ctc), RANK_TOL);
        add(ker.intersect(within), &mut elems);
        add(w.intersect(within), &mut elems);
    }
    let mut ops = 0;
    let mut i = 0;
    while i < elems.len() {
        for k in 0..i {
            if elems.len() >= cap || ops >= LATTICE_OPS {
                elems.truncate(cap);
                return (elems, true);
            }
            ops += 1;
            let s = elems[i].sum(&elems[k]);
            let t = elems[i].intersect(&elems[k]);
            add(s, &mut elems);
            add(t, &mut elems);
        }
        i += 1;
    }
    (elems, false)
}

fn random_unit_in(rng: &mut BlRng, basis: &DMatrix<f64>) -> DVector<f64> {
    let g = DVector::from_fn(basis.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let v = basis * g;
    let norm = v.norm();
    v / norm
}

/// Orthonormalizes the columns; `None` if they are dependent.
fn orthonormalize(m: DMatrix<f64>) -> Option<DMatrix<f64>> {
    let k = m.ncols();
    let qr = m.qr();
    let r = qr.r();
    if (0..k).any(|i| r[(i, i)].abs() < 1e-8) {
        return None;
    }
    Some(qr.q())
}

struct SampleOutcome {
    best: DMatrix<f64>,
    best_def: f64,
    critical: Vec<DMatrix<f64>>,
}

/// Random subspace of `within` followed by greedy descent on the deficiency.
/// A move replaces one basis column with either a random vector of some
/// `ker C_j` or the projection of that column onto `ker C_j`.
fn sample_descent(
    datum: &BLDatum,
    within: &DMatrix<f64>,
    kernels: &[DMatrix<f64>],
    dim: usize,
    rng: &mut BlRng,
    collect: bool,
) -> SampleOutcome {
    let d = within.ncols();
    let mut cur = within * random_orthonormal(rng, d, dim);
    let mut cur_def = deficiency_of_basis(datum, &cur);
    let mut best = cur.clone();
    let mut best_def = cur_def;
    let mut critical = Vec::new();
    if collect && cur_def.abs() <= CRITICAL_TOL {
        critical.push(cur.clone());
    }
    let usable: Vec<usize> = (0..kernels.len()).filter(|&j| kernels[j].ncols() > 0).collect();
    if usable.is_empty() {
        return SampleOutcome {
            best,
            best_def,
            critical,
        };
    }
    let patience = 2 * datum.m() * dim + 4;
    let mut idle = 0;
    while idle < patience {
        idle += 1;
        let j = usable[rng.random_range(0..usable.len())];
        let col = rng.random_range(0..dim);
        let ker = &kernels[j];
        let v = if rng.random::<bool>() {
            random_unit_in(rng, ker)
        } else {
            let proj = ker * (ker.transpose() * cur.column(col));
            let norm = proj.norm();
            if norm < 1e-6 {
                continue;
            }
            proj / norm
        };
        let mut trial = cur.clone();
        trial.set_column(col, &v);
        let Some(trial) = orthonormalize(trial) else {
            continue;
        };
        let def = deficiency_of_basis(datum, &trial);
        if def > cur_def + 1e-12 {
            continue;
        }
        if def < cur_def - 1e-12 {
            idle = 0;
        }
        cur = trial;
        cur_def = def;
        if collect && def.abs() <= CRITICAL_TOL && critical.len() < 8 {
            critical.push(cur.clone());
        }
        if def < best_def {
            best = cur.clone();
            best_def = def;
        }
    }
    SampleOutcome {
        best,
        best_def,
        critical,
    }
}

struct ProbeRun {
    lattice: Vec<(Subspace, f64)>,
    samples: Vec<SampleOutcome>,
    exhausted: bool,
}

fn probe(datum: &BLDatum, within: &Subspace, budget: &ProbeBudget, collect: bool) -> ProbeRun {
    let (elems, exhausted) = lattice(datum, within, budget.lattice_cap.max(1));
    let lattice: Vec<(Subspace, f64)> = elems
        .into_par_iter()
        .map(|s| {
            let d = deficiency_of_basis(datum, s.basis());
            (s, d)
        })
        .collect();
    let d = within.dim();
    let kernels: Vec<DMatrix<f64>> = datum
        .factors()
        .iter()
        .map(|f| {
            let inner = Subspace::null_space(&(&f.c * within.basis()), RANK_TOL);
            within.basis() * inner.basis()
        })
        .collect();
    let samples = if d == 0 {
        Vec::new()
    } else {
        (0..budget.samples)
            .into_par_iter()
            .map(|i| {
                let mut rng = substream(budget.seed, i as u64);
                let dim = 1 + i % d;
                sample_descent(datum, within.basis(), &kernels, dim, &mut rng, collect)
            })
            .collect()
    };
    ProbeRun {
        lattice,
        samples,
        exhausted,
    }
}

fn attained_verdict() -> FinitenessVerdict {
    FinitenessVerdict {
        status: FinitenessStatus::FiniteHeuristic,
        witness: None,
        deficiency_min: None,
        probes: 0,
        lattice_size: 0,
        budget_exhausted: false,
        note: Some("attained".into()),
    }
}

/// Probes the dimension condition over the kernel lattice and random
/// subspaces. With `𝒬 ⪰ 0` singular only subspaces of `ker 𝒬` are probed;
/// with `𝒬 ≻ 0` the constant is finite and the verdict is immediate.
pub fn finiteness_verdict(datum: &BLDatum, budget: &ProbeBudget) -> FinitenessVerdict {
    let within = probe_space(datum);
    if within.is_zero() {
        return attained_verdict();
    }
    let run = probe(datum, &within, budget, false);
    // Candidates ordered by (deficiency, dimension, probe index); lattice first.
    let mut best: Option<(f64, usize, Subspace)> = None;
    let mut consider = |def: f64, s: &dyn Fn() -> Subspace, dim: usize| {
        let better = match &best {
            None => true,
            Some((bd, bdim, _)) => def < bd - 1e-12 || (def <= bd + 1e-12 && dim < *bdim),
        };
        if better {
            best = Some((def, dim, s()));
        }
    };
    for (s, def) in &run.lattice {
        consider(*def, &|| s.clone(), s.dim());
    }
    for o in &run.samples {
        consider(
            o.best_def,
            &|| Subspace::from_orthonormal(o.best.clone()).expect("orthonormal by construction"),
            o.best.ncols(),
        );
    }
    let probes = run.lattice.len() + run.samples.len();
    let (def_min, _, witness) = best.expect("the probe space itself is always probed");
    let infinite = def_min < -CRITICAL_TOL;
    FinitenessVerdict {
        status: if infinite {
            FinitenessStatus::Infinite
        } else {
            FinitenessStatus::FiniteHeuristic
        },
        witness: infinite.then_some(witness),
        deficiency_min: Some(def_min),
        probes,
        lattice_size: run.lattice.len(),
        budget_exhausted: run.exhausted,
        note: if within.is_full() {
            None
        } else {
            Some(format!("probed subspaces of ker Qcal (dim {})", within.dim()))
        },
    }
}

/// Probed subspaces other than `{0}` and `H` with zero deficiency.
pub fn find_critical(datum: &BLDatum, budget: &ProbeBudget) -> Vec<Subspace> {
    let run = probe(datum, &Subspace::full(datum.n()), budget, true);
    let mut out = Vec::new();
    for (s, def) in run.lattice {
        if def.abs() <= CRITICAL_TOL && !s.is_full() {
            push_unique(&mut out, s);
        }
    }
    for o in run.samples {
        for b in o.critical {
            if b.ncols() < datum.n() {
                push_unique(
                    &mut out,
                    Subspace::from_orthonormal(b).expect("orthonormal by construction"),
                );
            }
        }
    }
    out
}

/// A datum split along a critical subspace `V`: the restriction to `V` and
/// the quotient `H/V`, with `H/V` represented by `V^⊥` and `H_j/C_jV` by
/// `(C_jV)^⊥`. Factors with a zero-dimensional target are dropped from the
/// corresponding piece.
#[derive(Clone, Debug)]
pub struct Split {
    pub restricted: BLDatum,
    pub quotient: BLDatum,
    pub splits: bool,
    /// `max_j ‖F_jᵀ Q_j E_j‖` for bases `E_j` of `C_jV` and `F_j` of its complement.
    pub split_residual: f64,
    pub v: Subspace,
    e: Vec<DMatrix<f64>>,
    f: Vec<DMatrix<f64>>,
    restricted_factors: Vec<usize>,
    quotient_factors: Vec<usize>,
}

impl Split {
    /// Original factor indices kept in the restricted datum.
    pub fn restricted_factors(&self) -> &[usize] {
        &self.restricted_factors
    }

    pub fn quotient_factors(&self) -> &[usize] {
        &self.quotient_factors
    }

    /// `B̃_j = E_j B_j E_jᵀ + F_j B'_j F_jᵀ` on the original targets.
    pub fn combine(&self, b_v: &[SymMatrix], b_q: &[SymMatrix]) -> Result<Vec<SymMatrix>> {
        if b_v.len() != self.restricted_factors.len() || b_q.len() != self.quotient_factors.len() {
            return Err(Error::DimensionMismatch("one input per kept factor expected".into()));
        }
        let mut out: Vec<DMatrix<f64>> = self.e.iter().map(|e| DMatrix::zeros(e.nrows(), e.nrows())).collect();
        for (b, &j) in b_v.iter().zip(&self.restricted_factors) {
            out[j] += &self.e[j] * b.matrix() * self.e[j].transpose();
        }
        for (b, &j) in b_q.iter().zip(&self.quotient_factors) {
            out[j] += &self.f[j] * b.matrix() * self.f[j].transpose();
        }
        Ok(out.into_iter().map(SymMatrix::symmetrize).collect())
    }
}

/// Splits a `𝒬 = 0` datum along a critical subspace `V`.
pub fn restrict_quotient(datum: &BLDatum, v: &Subspace) -> Result<Split> {
    check_ambient(datum, v)?;
    if !datum.qcal_is_zero() {
        return Err(Error::QcalPresent);
    }
    if v.is_zero() || v.is_full() {
        return Err(Error::DimensionMismatch("V must be a proper nonzero subspace".into()));
    }
    let def = deficiency_of_basis(datum, v.basis());
    if def.abs() > CRITICAL_TOL {
        return Err(Error::NotCritical(def));
    }
    let w = v.complement();
    let mut e = Vec::new();
    let mut f = Vec::new();
    let mut rf = Vec::new();
    let mut qf = Vec::new();
    let mut rfac = Vec::new();
    let mut qfac = Vec::new();
    let mut residual: f64 = 0.0;
    for (j, fac) in datum.factors().iter().enumerate() {
        let cv = v.image(&fac.c);
        let cvc = cv.complement();
        let ej = cv.basis().clone();
        let fj = cvc.basis().clone();
        let cross = fj.transpose() * fac.q.matrix() * &ej;
        if !cross.is_empty() {
            residual = residual.max(crate::linalg::spectral_norm(&cross) / (1.0 + fac.q.amax()));
        }
        if ej.ncols() > 0 {
            rfac.push(LinearFactor::new(
                ej.transpose() * &fac.c * v.basis(),
                fac.p,
                fac.q.congruence(&ej),
            ));
            rf.push(j);
        }
        if fj.ncols() > 0 {
            qfac.push(LinearFactor::new(
                fj.transpose() * &fac.c * w.basis(),
                fac.p,
                fac.q.congruence(&fj),
            ));
            qf.push(j);
        }
        e.push(ej);
        f.push(fj);
    }
    Ok(Split {
        restricted: BLDatum::new(v.dim(), rfac, None)?,
        quotient: BLDatum::new(w.dim(), qfac, None)?,
        splits: residual <= CRITICAL_TOL,
        split_residual: residual,
        v: v.clone(),
        e,
        f,
        restricted_factors: rf,
        quotient_factors: qf,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingProbe {
    pub eps: Vec<f64>,
    /// `log √ratio` at each `ε`.
    pub log_bl: Vec<f64>,
    pub slope: f64,
    /// `deficiency(V) / 2`.
    pub predicted: f64,
}

/// Gaussian inputs `B_j^ε = λ_min(Q_j)(ε P_{C_jV} + P_{(C_jV)^⊥})`, which
/// squeeze every `C_jV` at rate `ε`. Their BL candidate behaves like
/// `ε^{deficiency(V)/2}`; the slope is a least-squares fit in log-log scale.
pub fn scaling_probe(datum: &BLDatum, v: &Subspace, eps: &[f64]) -> Result<ScalingProbe> {
    let predicted = deficiency(datum, v)? / 2.0;
    if eps.len() < 2 || eps.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
        return Err(Error::InvalidParams("need at least two ε in (0, 1]".into()));
    }
    let mut log_bl = Vec::with_capacity(eps.len());
    for &e in eps {
        let b: Vec<SymMatrix> = datum
            .factors()
            .iter()
            .map(|f| {
                let p = v.image(&f.c).projector();
                let nj = f.dim();
                let m = (p * e + (DMatrix::identity(nj, nj) - v.image(&f.c).projector())) * f.q.min_eig();
                SymMatrix::symmetrize(m)
            })
            .collect();
        log_bl.push(0.5 * crate::gauss_opt::log_ratio(datum, &b)?);
    }
    let xs: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = log_bl.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&log_bl).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(ScalingProbe {
        eps: eps.to_vec(),
        log_bl,
        slope: sxy / sxx,
        predicted,
    })
}
