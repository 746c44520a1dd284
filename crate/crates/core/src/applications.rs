//! Gaussian-measure forms of the inequality and the regularized
//! hypercontractivity datum.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datum::{BLDatum, GaussianInput, LinearFactor};
use crate::error::{Error, Result};
use crate::gauss_opt::ratio;
use crate::linalg::{psd_order, SymMatrix, PSD_TOL};
use crate::verify::{forward_check, FunctionInput, RawFunctionInput, Term, VerifyConfig, VerifyReport};

/// Largest `s` accepted; beyond it `1 − e^{−2s}` is 1 to machine precision.
pub const MAX_S: f64 = 20.0;

/// Hypercontractivity parameters in one dimension.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HCParams {
    pub p: f64,
    pub q: f64,
    pub s: f64,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default = "one")]
    pub n: usize,
}

fn one() -> usize {
    1
}

impl HCParams {
    /// Fills in `s` from `(q − 1)/(p − 1) = e^{2s}`.
    pub fn from_pq(p: f64, q: f64, alpha: f64, beta: f64) -> Self {
        let s = 0.5 * ((q - 1.0) / (p - 1.0)).ln();
        HCParams {
            p,
            q,
            s,
            alpha,
            beta,
            n: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if self.n != 1 {
            return bad(format!("only n = 1 is supported, got {}", self.n));
        }
        if !(self.p > 1.0 && self.q > 1.0 && self.p.is_finite() && self.q.is_finite()) {
            return bad(format!("need 1 < p, q < inf, got p = {}, q = {}", self.p, self.q));
        }
        if !(self.s > 0.0) {
            return bad(format!("need s > 0, got {}", self.s));
        }
        if self.s > MAX_S {
            return bad(format!("s = {} exceeds {MAX_S}", self.s));
        }
        let e2s = (2.0 * self.s).exp();
        let gap = ((self.q - 1.0) / (self.p - 1.0) - e2s).abs();
        if gap > 1e-10 * e2s.max(1.0) {
            return bad(format!("(q-1)/(p-1) differs from e^(2s) by {gap:e}"));
        }
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return bad("alpha and beta must be positive".into());
        }
        Ok(())
    }

    /// `1 − e^{−2s}`.
    fn u(&self) -> f64 {
        -(-2.0 * self.s).exp_m1()
    }

    /// Hölder conjugate `q′`.
    fn q_conj(&self) -> f64 {
        self.q / (self.q - 1.0)
    }

    fn p_conj(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    /// Upper corner `(1/(2πβ), 1/(2πα))` of the box of admissible bounds.
    pub fn corner(&self) -> (f64, f64) {
        (1.0 / (2.0 * PI * self.beta), 1.0 / (2.0 * PI * self.alpha))
    }
}

/// The localization
/// `𝒬 = (2π(1−e^{−2s}))⁻¹ [[1 − u/p, −e^{−s}], [−e^{−s}, 1 − u/q′]]`
/// with `u = 1 − e^{−2s}`.
pub fn hc_qcal(params: &HCParams) -> Result<SymMatrix> {
    params.validate()?;
    let u = params.u();
    let k = 1.0 / (2.0 * PI * u);
    let off = -(-params.s).exp() * k;
    SymMatrix::from_rows(&[
        vec![k * (1.0 - u / params.p), off],
        vec![off, k * (1.0 - u / params.q_conj())],
    ])
}

/// Datum on `R²` with `C₁ = (1 0)`, `C₂ = (0 1)`, `p = (1/p, 1/q′)` and
/// bounds `(1/(2πβ), 1/(2πα))`.
pub fn hc_build(params: &HCParams) -> Result<BLDatum> {
    let qcal = hc_qcal(params)?;
    let (q1, q2) = params.corner();
    let factors = vec![
        LinearFactor::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            1.0 / params.p,
            SymMatrix::diag(&[q1]),
        ),
        LinearFactor::new(
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            1.0 / params.q_conj(),
            SymMatrix::diag(&[q2]),
        ),
    ];
    BLDatum::new(2, factors, Some(qcal))
}

/// Lower bound on `α` beyond which the corner is optimal; `+∞` when the
/// denominator is not positive. Since `(q−1)e^{−2s} = p−1` the denominator
/// equals `1/β`, so the sentinel only guards rounding.
pub fn hc_threshold(params: &HCParams) -> Result<f64> {
    params.validate()?;
    if params.beta <= 1.0 {
        return Err(Error::BetaNotAboveOne(params.beta));
    }
    let k = (1.0 - params.beta) / (params.p * params.beta);
    let num = 1.0 + k * params.u();
    let den = 1.0 + k * (1.0 + (params.q - 1.0) * (-2.0 * params.s).exp());
    if den <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(num / den)
}

/// Closed form of `√ratio` at the corner:
/// `(2π)^{1−(1/p+1/q′)/2} u^{1/2} β^{−1/(2p)} α^{−1/(2q′)} / D^{1/2}` with
/// `D = 1 + X/p + Y/q′ + uXY/(pq′)`, `X = (1−β)/β`, `Y = (1−α)/α`.
pub fn hc_corner_value(params: &HCParams) -> Result<f64> {
    params.validate()?;
    let (p1, p2) = (1.0 / params.p, 1.0 / params.q_conj());
    let u = params.u();
    let x = (1.0 - params.beta) / params.beta;
    let y = (1.0 - params.alpha) / params.alpha;
    let d = 1.0 + x * p1 + y * p2 + u * x * y * p1 * p2;
    if d <= 0.0 {
        return Err(Error::DegenerateDenominator(d));
    }
    Ok(
        (2.0 * PI).powf(1.0 - 0.5 * (p1 + p2)) * u.sqrt() * params.beta.powf(-0.5 * p1) * params.alpha.powf(-0.5 * p2)
            / d.sqrt(),
    )
}

/// The hypercontractivity constant, valid once `α` exceeds [`hc_threshold`].
pub fn hc_constant(params: &HCParams) -> Result<f64> {
    let threshold = hc_threshold(params)?;
    if params.alpha <= threshold {
        return Err(Error::ThresholdViolated {
            alpha: params.alpha,
            threshold,
        });
    }
    hc_corner_value(params)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CornerCheck {
    pub closed_form: f64,
    pub sqrt_ratio: f64,
    pub rel_diff: f64,
}

/// Compares [`hc_corner_value`] with `√ratio` of [`hc_build`] at the corner.
pub fn hc_corner_check(params: &HCParams) -> Result<CornerCheck> {
    let datum = hc_build(params)?;
    let sqrt_ratio = ratio(&datum, &GaussianInput::at_bounds(&datum))?.sqrt();
    let closed_form = hc_corner_value(params)?;
    Ok(CornerCheck {
        closed_form,
        sqrt_ratio,
        rel_diff: (closed_form / sqrt_ratio - 1.0).abs(),
    })
}

/// Stationarity map `(a, b) ↦ (a(b), b(a))` whose fixed points are interior
/// critical points of the Gaussian ratio on the hypercontractivity datum.
pub fn hc_map(params: &HCParams, a: f64, b: f64) -> (f64, f64) {
    let e2 = (-2.0 * params.s).exp();
    let u = params.u();
    let (p, q) = (params.p, params.q);
    let ta = 2.0 * PI * a - 1.0;
    let tb = 2.0 * PI * b - 1.0;
    let new_b = (1.0 + q * (e2 / p) * ta / ((u / p) * ta + 1.0)) / (2.0 * PI);
    let qc = params.q_conj();
    let new_a = (1.0 + params.p_conj() * (e2 / qc) * tb / ((u / qc) * tb + 1.0)) / (2.0 * PI);
    (new_a, new_b)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FixedPointScan {
    pub has_fixed_point: bool,
    pub witness: Option<(f64, f64)>,
    pub min_gap: f64,
    pub grid: usize,
}

const SCAN_GRID: usize = 400;
const PICARD_ITERS: usize = 100;
const PICARD_SEEDS: usize = 8;
const FIXED_TOL: f64 = 1e-8;

/// Grid scan of the relative gap `‖F(x) − x‖ / ‖x‖` over
/// `(0, 1/(2πβ)] × (0, 1/(2πα)]` followed by Picard iterations from the best
/// grid points. The origin solves both cleared-denominator equations for
/// every parameter choice and is not a point of the box, hence the relative gap.
pub fn hc_fixed_point_scan(params: &HCParams) -> Result<FixedPointScan> {
    params.validate()?;
    let (amax, bmax) = params.corner();
    let gap = |a: f64, b: f64| {
        let (fa, fb) = hc_map(params, a, b);
        (fa - a).hypot(fb - b) / a.hypot(b)
    };
    let node = |i: usize, top: f64| top * (i + 1) as f64 / SCAN_GRID as f64;
    let mut cells: Vec<(f64, f64, f64)> = (0..SCAN_GRID)
        .into_par_iter()
        .flat_map_iter(|i| {
            let a = node(i, amax);
            (0..SCAN_GRID).map(move |j| {
                let b = node(j, bmax);
                (gap(a, b), a, b)
            })
        })
        .collect();
    cells.sort_by(|x, y| x.0.total_cmp(&y.0));
    let inside = |a: f64, b: f64| a > 0.0 && a <= amax && b > 0.0 && b <= bmax;
    let mut best = (cells[0].0, cells[0].1, cells[0].2);
    for &(_, a0, b0) in cells.iter().take(PICARD_SEEDS) {
        let (mut a, mut b) = (a0, b0);
        for _ in 0..PICARD_ITERS {
            let (na, nb) = hc_map(params, a, b);
            if !(na.is_finite() && nb.is_finite()) {
                break;
            }
            a = na;
            b = nb;
            if inside(a, b) {
                let g = gap(a, b);
                if g < best.0 {
                    best = (g, a, b);
                }
            }
        }
    }
    let has_fixed_point = best.0 < FIXED_TOL;
    Ok(FixedPointScan {
        has_fixed_point,
        witness: has_fixed_point.then_some((best.1, best.2)),
        min_gap: best.0,
        grid: SCAN_GRID,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HCReport {
    pub threshold: f64,
    pub constant: Option<f64>,
    pub has_fixed_point: bool,
    pub min_gap: f64,
    pub corner_check: CornerCheck,
}

/// Everything the `hc` command reports. The constant is `None` below the threshold.
pub fn hc_report(params: &HCParams) -> Result<HCReport> {
    let threshold = hc_threshold(params)?;
    let constant = match hc_constant(params) {
        Ok(c) => Some(c),
        Err(Error::ThresholdViolated { .. }) => None,
        Err(e) => return Err(e),
    };
    let scan = hc_fixed_point_scan(params)?;
    Ok(HCReport {
        threshold,
        constant,
        has_fixed_point: scan.has_fixed_point,
        min_gap: scan.min_gap,
        corner_check: hc_corner_check(params)?,
    })
}

/// One completion term `b_j B_jᵀB_j`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompletionTerm {
    #[serde(serialize_with = "crate::report::ser_matrix")]
    pub b: DMatrix<f64>,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GaussianMeasureReport {
    pub completion: Vec<CompletionTerm>,
    pub completion_residual: f64,
    pub lambda_max: f64,
    /// Check of `∫ Π f_i(C_ix)^{p_i} dγ_n ≤ Π(∫ f_i dγ_{n_i})^{p_i}`.
    pub report: VerifyReport,
}

const COMPLETION_TOL: f64 = 1e-9;

fn completion(c: &[DMatrix<f64>], p: &[f64], n: usize) -> Result<(Vec<CompletionTerm>, f64, f64)> {
    let mut a = DMatrix::zeros(n, n);
    for (ci, pi) in c.iter().zip(p) {
        a += ci.transpose() * ci * *pi;
    }
    let (vals, vecs) = SymMatrix::symmetrize(a.clone()).eigen();
    let l1 = vals.max();
    // CCᵀ ⪯ P⁻¹  ⇔  ‖CᵀPC‖ ≤ 1.
    if l1 <= COMPLETION_TOL || l1 > 1.0 + COMPLETION_TOL {
        return Err(Error::ConditionViolated(l1));
    }
    let mut terms = Vec::new();
    for i in 0..n {
        let w = 1.0 - vals[i] / l1;
        if w > COMPLETION_TOL {
            terms.push(CompletionTerm {
                b: DMatrix::from_row_slice(1, n, vecs.column(i).as_slice()),
                weight: w,
            });
        }
    }
    if l1 < 1.0 - COMPLETION_TOL {
        for (ci, pi) in c.iter().zip(p) {
            terms.push(CompletionTerm {
                b: ci.clone(),
                weight: pi * (1.0 / l1 - 1.0),
            });
        }
    }
    let mut total = a;
    for t in &terms {
        total += t.b.transpose() * &t.b * t.weight;
    }
    let residual = (total - DMatrix::identity(n, n)).norm();
    if residual > COMPLETION_TOL {
        return Err(Error::NumericalBreakdown(format!("completion residual {residual:e}")));
    }
    Ok((terms, residual, l1))
}

/// Gaussian-measure inequality for maps `C_i`, weights `p_i` and bounds
/// `Q_i ⪰ I` under `CCᵀ ⪯ P⁻¹`. Inputs are given in the Gaussian-measure
/// normalization: `f_i = e^{−π⟨B_iy,y⟩} Σ c_k e^{⟨a_k,y⟩}` with `B_i ⪯ (Q_i − I)/2π`
/// (here `B_i` may be singular).
pub fn gaussian_measure_check(
    c: &[DMatrix<f64>],
    p: &[f64],
    q: &[SymMatrix],
    inputs: &[RawFunctionInput],
    cfg: &VerifyConfig,
) -> Result<GaussianMeasureReport> {
    let m = c.len();
    if m == 0 {
        return Err(Error::EmptyList);
    }
    if p.len() != m || q.len() != m || inputs.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{m} maps, {} weights, {} bounds, {} inputs",
            p.len(),
            q.len(),
            inputs.len()
        )));
    }
    let n = c[0].ncols();
    for (i, ci) in c.iter().enumerate() {
        if ci.ncols() != n || q[i].dim() != ci.nrows() {
            return Err(Error::DimensionMismatch(format!("factor {i} has inconsistent shape")));
        }
        if !(p[i] > 0.0) {
            return Err(Error::InvalidParams(format!("weight {i} must be positive")));
        }
        let ni = ci.nrows();
        let eye = DMatrix::<f64>::identity(ni, ni);
        let cc = SymMatrix::symmetrize(ci * ci.transpose());
        if cc.max_eig() > 1.0 + COMPLETION_TOL {
            return Err(Error::ConditionViolated(cc.max_eig()));
        }
        if q[i].min_eig() < 1.0 - COMPLETION_TOL {
            return Err(Error::ConditionViolated(q[i].min_eig()));
        }
        let coupling = ((&eye - cc.matrix()) * (q[i].matrix() - &eye)).norm();
        if coupling > 1e-8 {
            return Err(Error::ConditionViolated(coupling));
        }
    }
    let (terms, residual, l1) = completion(c, p, n)?;

    // Lebesgue form: f_i e^{−|y|²/2} against a geometric datum with bounds Q/2π.
    let two_pi = 2.0 * PI;
    let mut factors = Vec::with_capacity(m + terms.len());
    let mut lebesgue = Vec::with_capacity(m + terms.len());
    for i in 0..m {
        let ni = c[i].nrows();
        factors.push(LinearFactor::new(c[i].clone(), p[i], q[i].scale(1.0 / two_pi)));
        let raw = &inputs[i];
        let b = SymMatrix::from_rows(&raw.b)?;
        if b.dim() != ni {
            return Err(Error::InputNotAdmissible(
                i,
                format!("lives in R^{} not R^{ni}", b.dim()),
            ));
        }
        if !psd_order(
            &b,
            &q[i].sub(&SymMatrix::identity(ni)).scale(1.0 / two_pi),
            cfg.psd_tol * (1.0 + q[i].amax()),
        )? {
            return Err(Error::InputNotAdmissible(
                i,
                "B_i must satisfy B_i <= (Q_i - I)/2pi".into(),
            ));
        }
        let shifted = b.add(&SymMatrix::scaled_identity(ni, 1.0 / two_pi));
        let terms_i = raw
            .terms
            .iter()
            .map(|t| Term {
                c: t.c,
                a: DVector::from_column_slice(&t.a),
            })
            .collect();
        lebesgue.push(FunctionInput::new(shifted, terms_i)?);
    }
    for t in &terms {
        let k = t.b.nrows();
        factors.push(LinearFactor::new(
            t.b.clone(),
            t.weight,
            SymMatrix::scaled_identity(k, 1.0 / two_pi),
        ));
        lebesgue.push(FunctionInput::gaussian(SymMatrix::scaled_identity(k, 1.0 / two_pi)));
    }
    let datum = BLDatum::new(n, factors, None)?;
    // The completed datum is geometric up to the 2π scaling, so its constant is 1.
    let r = forward_check(&datum, &lebesgue, cfg, Some(1.0))?;
    let norm = two_pi.powf(-0.5 * n as f64);
    Ok(GaussianMeasureReport {
        completion: terms,
        completion_residual: residual,
        lambda_max: l1,
        report: VerifyReport {
            lhs: r.lhs * norm,
            rhs: r.rhs * norm,
            slack: r.slack * norm,
            est_error: r.est_error * norm,
            ..r
        },
    })
}

/// `T = UUᵀ` with `U = V_r diag(√λ_r)` over the nonzero spectrum.
pub fn factor_covariance(t: &SymMatrix) -> Result<DMatrix<f64>> {
    if !t.is_psd(PSD_TOL * (1.0 + t.amax())) {
        return Err(Error::NotPSD(format!("covariance has eigenvalue {:e}", t.min_eig())));
    }
    let (vals, vecs) = t.eigen();
    let cut = 1e-12 * (1.0 + vals.amax());
    let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > cut).collect();
    if keep.is_empty() {
        return Err(Error::InvalidParams("covariance is zero".into()));
    }
    Ok(DMatrix::from_fn(t.dim(), keep.len(), |r, c| {
        vecs[(r, keep[c])] * vals[keep[c]].sqrt()
    }))
}

/// `E Π f_i(X_i)^{p_i} ≤ Π(∫ f_i dγ)^{p_i}` for a centered Gaussian vector with
/// covariance `T` split into blocks of sizes `dims`; reduces to
/// [`gaussian_measure_check`] through the block rows of `U` with `T = UUᵀ`.
pub fn gaussian_vector_check(
    t: &SymMatrix,
    dims: &[usize],
    p: &[f64],
    q: &[SymMatrix],
    inputs: &[RawFunctionInput],
    cfg: &VerifyConfig,
) -> Result<GaussianMeasureReport> {
    if dims.iter().sum::<usize>() != t.dim() {
        return Err(Error::DimensionMismatch(format!(
            "block sizes {dims:?} do not add up to {}",
            t.dim()
        )));
    }
    let u = factor_covariance(t)?;
    let mut rows = Vec::with_capacity(dims.len());
    let mut at = 0;
    for &d in dims {
        rows.push(u.rows(at, d).into_owned());
        at += d;
    }
    gaussian_measure_check(&rows, p, q, inputs, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss_opt::{optimize, AttainedFlag, OptConfig};
    use crate::presets;
    use crate::sample::{random_orthonormal, rng_from_seed};
    use crate::verify::{Method, RawTerm};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn sample() -> HCParams {
        HCParams::from_pq(2.0, 4.0, 2.0, 2.0)
    }

    #[test]
    fn qcal_entries() {
        let params = sample();
        assert_relative_eq!(params.s, 0.5 * 3f64.ln(), max_relative = 1e-15);
        let q = hc_qcal(&params).unwrap();
        let want = -(1.0 / 3f64.sqrt()) / (2.0 * PI * (2.0 / 3.0));
        assert_relative_eq!(q.matrix()[(0, 1)], want, max_relative = 1e-12);
        // The localization is singular: det 𝒬 = 0.
        assert!(q.min_eig().abs() < 1e-12);
        assert!(q.max_eig() > 0.1);
    }

    #[test]
    fn invalid_params() {
        let mut p = sample();
        p.s = 0.3;
        assert!(matches!(hc_build(&p), Err(Error::InvalidParams(_))));
        let big = HCParams::from_pq(2.0, 1.0 + (42.0f64).exp(), 2.0, 2.0);
        assert!(matches!(hc_build(&big), Err(Error::InvalidParams(_))));
        let flat = HCParams::from_pq(3.0, 3.0, 2.0, 2.0);
        assert!(matches!(hc_fixed_point_scan(&flat), Err(Error::InvalidParams(_))));
        let mut two = sample();
        two.n = 2;
        assert!(hc_build(&two).is_err());
    }

    #[test]
    fn threshold_values() {
        assert_relative_eq!(hc_threshold(&sample()).unwrap(), 5.0 / 3.0, max_relative = 1e-12);
        let near = HCParams::from_pq(2.0, 4.0, 2.0, 1.0 + 1e-9);
        assert_relative_eq!(hc_threshold(&near).unwrap(), 1.0, epsilon = 1e-8);
        let low = HCParams::from_pq(2.0, 4.0, 2.0, 1.0);
        assert!(matches!(hc_threshold(&low), Err(Error::BetaNotAboveOne(_))));
        // The denominator is 1/β, so large β pushes the threshold up without bound.
        let wide = HCParams::from_pq(1.5, 40.0, 2.0, 1e6);
        let t = hc_threshold(&wide).unwrap();
        assert_relative_eq!(
            t,
            1e6 * (1.0 + (1.0 - 1e6) / 1.5e6 * (1.0 - 0.5 / 39.0)),
            max_relative = 1e-9
        );
    }

    #[test]
    fn constant_matches_ratio_at_corner() {
        for params in [
            sample(),
            HCParams::from_pq(1.5, 3.0, 5.0, 1.3),
            HCParams::from_pq(3.0, 9.0, 0.7, 4.0),
        ] {
            let c = hc_corner_check(&params).unwrap();
            assert!(c.rel_diff <= 1e-8, "{c:?}");
        }
        let c = hc_constant(&sample()).unwrap();
        assert!(c.is_finite() && c > 0.0);
        let mut at = sample();
        at.alpha = hc_threshold(&at).unwrap();
        assert!(hc_corner_value(&at).unwrap().is_finite());
        assert!(matches!(hc_constant(&at), Err(Error::ThresholdViolated { .. })));
    }

    #[test]
    fn stationarity_map_solves_kkt_equations() {
        // 1/b = (M⁻¹)₂₂ at b = b(a), and 1/a = (M⁻¹)₁₁ at a = a(b).
        let params = sample();
        let datum = hc_build(&params).unwrap();
        let m_at = |a: f64, b: f64| {
            let input = GaussianInput::unchecked(&datum, vec![SymMatrix::diag(&[a]), SymMatrix::diag(&[b])]);
            input.m().inverse_spd().unwrap().into_inner()
        };
        for (a, b) in [(0.05, 0.02), (0.3, 0.1), (0.01, 0.2)] {
            let (_, fb) = hc_map(&params, a, b);
            assert_relative_eq!(1.0 / fb, m_at(a, fb)[(1, 1)], max_relative = 1e-10);
            let (fa, _) = hc_map(&params, a, b);
            assert_relative_eq!(1.0 / fa, m_at(fa, b)[(0, 0)], max_relative = 1e-10);
        }
    }

    #[test]
    fn no_fixed_point_above_threshold() {
        let mut params = sample();
        params.alpha = 1.1 * 5.0 / 3.0;
        let scan = hc_fixed_point_scan(&params).unwrap();
        assert!(!scan.has_fixed_point);
        assert!(scan.min_gap > 1e-3);
        params.alpha = 1e9;
        assert!(!hc_fixed_point_scan(&params).unwrap().has_fixed_point);
    }

    #[test]
    fn scan_finds_the_unconstrained_critical_point() {
        let params = HCParams::from_pq(2.0, 4.0, 0.5, 0.5);
        let scan = hc_fixed_point_scan(&params).unwrap();
        assert!(scan.has_fixed_point);
        let (a, b) = scan.witness.unwrap();
        assert_relative_eq!(a, 1.0 / (2.0 * PI), max_relative = 1e-6);
        assert_relative_eq!(b, 1.0 / (2.0 * PI), max_relative = 1e-6);
    }

    #[test]
    fn optimizer_sits_at_corner_above_threshold() {
        let mut params = sample();
        params.alpha = 1.1 * 5.0 / 3.0;
        let datum = hc_build(&params).unwrap();
        let r = optimize(&datum, &OptConfig::default()).unwrap();
        assert_eq!(r.attained_flag, AttainedFlag::Attained);
        let (a, b) = params.corner();
        assert_relative_eq!(r.best.b()[0].matrix()[(0, 0)], a, max_relative = 1e-6);
        assert_relative_eq!(r.best.b()[1].matrix()[(0, 0)], b, max_relative = 1e-6);
        assert_relative_eq!(r.bl_constant, hc_constant(&params).unwrap(), max_relative = 1e-8);
    }

    fn raw(b: &[Vec<f64>], terms: &[(f64, Vec<f64>)]) -> RawFunctionInput {
        RawFunctionInput {
            b: b.to_vec(),
            terms: terms.iter().map(|(c, a)| RawTerm { c: *c, a: a.clone() }).collect(),
        }
    }

    #[test]
    fn geometric_data_need_no_completion() {
        let d = presets::geometric_example_2();
        let c: Vec<DMatrix<f64>> = d.factors().iter().map(|f| f.c.clone()).collect();
        let p: Vec<f64> = d.factors().iter().map(|f| f.p).collect();
        let q: Vec<SymMatrix> = d.factors().iter().map(|f| SymMatrix::identity(f.dim())).collect();
        let inputs = vec![
            raw(
                &[vec![0.0, 0.0], vec![0.0, 0.0]],
                &[(1.0, vec![0.5, -0.2]), (2.0, vec![-0.3, 0.1])],
            ),
            raw(&[vec![0.0]], &[(1.0, vec![0.4])]),
            raw(&[vec![0.0]], &[(1.0, vec![0.7]), (1.0, vec![-0.7])]),
            raw(&[vec![0.0]], &[(3.0, vec![0.0])]),
        ];
        let r = gaussian_measure_check(&c, &p, &q, &inputs, &VerifyConfig::default()).unwrap();
        assert!(r.completion.is_empty());
        assert_relative_eq!(r.lambda_max, 1.0, epsilon = 1e-12);
        assert!(r.report.slack >= -r.report.est_error, "{:?}", r.report);
    }

    #[test]
    fn completion_identity_on_random_feasible_data() {
        let mut rng = rng_from_seed(21);
        for _ in 0..50 {
            let n = rng.random_range(1..=4);
            let m = rng.random_range(1..=3);
            let c: Vec<DMatrix<f64>> = (0..m)
                .map(|_| {
                    let k = rng.random_range(1..=n);
                    random_orthonormal(&mut rng, n, k).transpose()
                })
                .collect();
            let mut p: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
            let mut a = DMatrix::zeros(n, n);
            for (ci, pi) in c.iter().zip(&p) {
                a += ci.transpose() * ci * *pi;
            }
            let l1 = SymMatrix::symmetrize(a).max_eig();
            let shrink = rng.random_range(0.3..1.0) / l1;
            p.iter_mut().for_each(|v| *v *= shrink);
            let (terms, residual, _) = completion(&c, &p, n).unwrap();
            assert!(residual <= 1e-9);
            assert!(terms.iter().all(|t| t.weight > 0.0));
        }
    }

    #[test]
    fn violated_condition() {
        let c = vec![DMatrix::from_row_slice(1, 1, &[1.0])];
        let q = vec![SymMatrix::identity(1)];
        let inputs = vec![raw(&[vec![0.0]], &[(1.0, vec![0.0])])];
        assert!(matches!(
            gaussian_measure_check(&c, &[2.0], &q, &inputs, &VerifyConfig::default()),
            Err(Error::ConditionViolated(_))
        ));
    }

    #[test]
    fn vector_form_matches_factorization() {
        let mut rng = rng_from_seed(8);
        let mut u = random_orthonormal(&mut rng, 3, 2) * 0.8;
        // Q₁ ≠ 1 forces T₁₁ = 1 through the coupling condition.
        let norm = u.row(0).norm();
        u.row_mut(0).scale_mut(1.0 / norm);
        let t = SymMatrix::symmetrize(&u * u.transpose());
        let p = [0.5, 0.4];
        let q = [SymMatrix::diag(&[1.4]), SymMatrix::identity(2)];
        let inputs = vec![
            raw(&[vec![0.02]], &[(1.0, vec![0.3]), (1.0, vec![-0.5])]),
            raw(&[vec![0.0, 0.0], vec![0.0, 0.0]], &[(1.0, vec![0.2, 0.1])]),
        ];
        let cfg = VerifyConfig::with_method(Method::Quadrature);
        let rows = vec![u.rows(0, 1).into_owned(), u.rows(1, 2).into_owned()];
        let direct = gaussian_measure_check(&rows, &p, &q, &inputs, &cfg).unwrap();
        let via_t = gaussian_vector_check(&t, &[1, 2], &p, &q, &inputs, &cfg).unwrap();
        assert_relative_eq!(direct.report.lhs, via_t.report.lhs, max_relative = 1e-8);
        assert_relative_eq!(direct.report.rhs, via_t.report.rhs, max_relative = 1e-12);
        assert!(via_t.report.slack >= -via_t.report.est_error, "{:?}", via_t.report);
    }
}
