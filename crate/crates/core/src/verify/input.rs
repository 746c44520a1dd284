//! Inputs of the form `f(x) = e^{−π⟨Bx,x⟩} Σ_k c_k e^{⟨a_k,x⟩}`.
//!
//! The log-sum-exp factor is convex, so `f` is more log-convex than `g_B`.
//! Masses, convolutions, translations and the heat flow all stay inside the
//! family and have closed forms.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{log_gaussian_integral, matrix_from_rows, SymMatrix, PSD_TOL};

#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub c: f64,
    pub a: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FunctionInput {
    b: SymMatrix,
    terms: Vec<Term>,
}

/// JSON form: `{ "B": [[..]], "terms": [ {"c": float, "a": [..]} ] }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawFunctionInput {
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    pub terms: Vec<RawTerm>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawTerm {
    pub c: f64,
    pub a: Vec<f64>,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl FunctionInput {
    pub fn new(b: SymMatrix, terms: Vec<Term>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::EmptyList);
        }
        if !b.is_spd(PSD_TOL) {
            return Err(Error::NotSPD("input B".into()));
        }
        for t in &terms {
            if t.a.len() != b.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "drift of length {} for a {}-dimensional input",
                    t.a.len(),
                    b.dim()
                )));
            }
            if !(t.c > 0.0 && t.c.is_finite()) {
                return Err(Error::InvalidParams(format!(
                    "coefficient c = {} must be positive",
                    t.c
                )));
            }
        }
        Ok(FunctionInput { b, terms })
    }

    /// `g_B`.
    pub fn gaussian(b: SymMatrix) -> Self {
        let n = b.dim();
        FunctionInput::new(
            b,
            vec![Term {
                c: 1.0,
                a: DVector::zeros(n),
            }],
        )
        .expect("SPD Gaussian")
    }

    /// `c · e^{−π⟨Bx,x⟩ + ⟨a,x⟩}`.
    pub fn single(b: SymMatrix, c: f64, a: &[f64]) -> Result<Self> {
        FunctionInput::new(
            b,
            vec![Term {
                c,
                a: DVector::from_column_slice(a),
            }],
        )
    }

    pub fn from_raw(raw: &RawFunctionInput) -> Result<Self> {
        let b = SymMatrix::new(matrix_from_rows(&raw.b)?)?;
        let terms = raw
            .terms
            .iter()
            .map(|t| Term {
                c: t.c,
                a: DVector::from_column_slice(&t.a),
            })
            .collect();
        FunctionInput::new(b, terms)
    }

    pub fn to_raw(&self) -> RawFunctionInput {
        RawFunctionInput {
            b: self.b.to_rows(),
            terms: self
                .terms
                .iter()
                .map(|t| RawTerm {
                    c: t.c,
                    a: t.a.iter().copied().collect(),
                })
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.b.dim()
    }

    pub fn b(&self) -> &SymMatrix {
        &self.b
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_single_term(&self) -> bool {
        self.terms.len() == 1
    }

    /// `log Σ_k c_k e^{⟨a_k,x⟩}`.
    pub fn log_lse(&self, x: &DVector<f64>) -> f64 {
        log_sum_exp(self.terms.iter().map(|t| t.c.ln() + t.a.dot(x)))
    }

    pub fn log_eval(&self, x: &DVector<f64>) -> f64 {
        -std::f64::consts::PI * (self.b.matrix() * x).dot(x) + self.log_lse(x)
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        self.log_eval(x).exp()
    }

    /// `log ∫ c_k e^{−π⟨Bx,x⟩+⟨a_k,x⟩}` for each term.
    pub fn log_term_masses(&self) -> Vec<f64> {
        self.terms
            .iter()
            .map(|t| t.c.ln() + log_gaussian_integral(&self.b, &(-&t.a)).expect("B is SPD"))
            .collect()
    }

    pub fn log_mass(&self) -> f64 {
        log_sum_exp(self.log_term_masses().into_iter())
    }

    pub fn mass(&self) -> f64 {
        self.log_mass().exp()
    }

    /// Drift averaged with the term masses as weights.
    pub fn mean_drift(&self) -> DVector<f64> {
        let lm = self.log_term_masses();
        let total = log_sum_exp(lm.iter().copied());
        let mut out = DVector::zeros(self.dim());
        for (t, l) in self.terms.iter().zip(lm) {
            out += &t.a * (l - total).exp();
        }
        out
    }

    /// Hessian of `log f` at `x`: `−2πB` plus the softmax covariance of the drifts.
    pub fn log_hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let logs: Vec<f64> = self.terms.iter().map(|t| t.c.ln() + t.a.dot(x)).collect();
        let total = log_sum_exp(logs.iter().copied());
        let n = self.dim();
        let mut mean = DVector::zeros(n);
        let mut second = DMatrix::zeros(n, n);
        for (t, l) in self.terms.iter().zip(&logs) {
            let w = (l - total).exp();
            mean += &t.a * w;
            second += &t.a * t.a.transpose() * w;
        }
        second - &mean * mean.transpose() - self.b.matrix() * (2.0 * std::f64::consts::PI)
    }

    pub fn scale(&self, s: f64) -> Result<Self> {
        let terms = self
            .terms
            .iter()
            .map(|t| Term {
                c: t.c * s,
                a: t.a.clone(),
            })
            .collect();
        FunctionInput::new(self.b.clone(), terms)
    }

    /// `x ↦ f(x − u)`.
    pub fn translate(&self, u: &DVector<f64>) -> Self {
        let bu = self.b.matrix() * u;
        let quad = std::f64::consts::PI * bu.dot(u);
        let terms = self
            .terms
            .iter()
            .map(|t| Term {
                c: t.c * (-quad - t.a.dot(u)).exp(),
                a: &t.a + &bu * (2.0 * std::f64::consts::PI),
            })
            .collect();
        FunctionInput {
            b: self.b.clone(),
            terms,
        }
    }

    /// `x ↦ f(Tx)` for an invertible square `T`.
    pub fn compose(&self, t: &DMatrix<f64>) -> Result<Self> {
        let b = self.b.congruence(t);
        let terms = self
            .terms
            .iter()
            .map(|k| Term {
                c: k.c,
                a: t.transpose() * &k.a,
            })
            .collect();
        FunctionInput::new(b, terms)
    }

    /// Merges terms whose drifts agree to `tol` (relative to the largest drift).
    pub fn merged(&self, tol: f64) -> Self {
        let scale = self.terms.iter().map(|t| t.a.amax()).fold(1.0, f64::max);
        let mut out: Vec<Term> = Vec::new();
        let mut sorted = self.terms.clone();
        sorted.sort_by(|x, y| x.a.iter().partial_cmp(y.a.iter()).expect("finite drifts"));
        for t in sorted {
            match out.last_mut() {
                Some(last) if (&last.a - &t.a).amax() <= tol * scale => last.c += t.c,
                _ => out.push(t),
            }
        }
        FunctionInput {
            b: self.b.clone(),
            terms: out,
        }
    }

    /// Heat flow at time `t ≥ 1`: convolution with
    /// `(t−1)^{-n/2} e^{−π|x|²/(t−1)}`, so `B_t = (B⁻¹ + (t−1)I)⁻¹`.
    pub fn heat(&self, t: f64) -> Result<Self> {
        if !(t >= 1.0) {
            return Err(Error::InvalidParams(format!("heat time t = {t} must be at least 1")));
        }
        if t == 1.0 {
            return Ok(self.clone());
        }
        let n = self.dim();
        let binv = self.b.inverse_spd()?;
        let bt = binv.add(&SymMatrix::scaled_identity(n, t - 1.0)).inverse_spd()?;
        let ld = 0.5 * (bt.log_det_spd().expect("SPD") - self.b.log_det_spd().expect("SPD"));
        let diff = self.b.sub(&bt);
        let terms = self
            .terms
            .iter()
            .map(|k| {
                // Mean μ = B⁻¹a/2π is preserved by the flow.
                let mu = binv.matrix() * &k.a / (2.0 * std::f64::consts::PI);
                let shift = std::f64::consts::PI * (diff.matrix() * &mu).dot(&mu);
                Term {
                    c: k.c * (ld + shift).exp(),
                    a: bt.matrix() * &mu * (2.0 * std::f64::consts::PI),
                }
            })
            .collect();
        FunctionInput::new(bt, terms)
    }
}

/// `Conv(f, g) = 2^{n/2} (f ⋆ g)(√2 ·)` in closed form. With `S = A + B`
/// the Gaussian part is `2(A⁻¹ + B⁻¹)⁻¹` and each pair of terms gives drift
/// `√2(B S⁻¹ a_k + A S⁻¹ b_l)` and coefficient
/// `2^{n/2} c_k d_l det(S)^{-1/2} e^{⟨S⁻¹(b_l − a_k), b_l − a_k⟩/4π}`.
pub fn conv_inputs(f: &FunctionInput, g: &FunctionInput) -> Result<FunctionInput> {
    let n = f.dim();
    if g.dim() != n {
        return Err(Error::DimensionMismatch("Conv needs inputs on the same space".into()));
    }
    let a = f.b.matrix();
    let b = g.b.matrix();
    let s = SymMatrix::symmetrize(a + b);
    let sinv = s.inverse_spd()?;
    let bc = f.b.inverse_spd()?.add(&g.b.inverse_spd()?).inverse_spd()?.scale(2.0);
    let bs = b * sinv.matrix();
    let as_ = a * sinv.matrix();
    let log_pref = 0.5 * n as f64 * 2f64.ln() - 0.5 * s.log_det_spd().expect("SPD");
    let mut terms = Vec::with_capacity(f.terms.len() * g.terms.len());
    for tk in &f.terms {
        for tl in &g.terms {
            let d = &tl.a - &tk.a;
            let expo = (sinv.matrix() * &d).dot(&d) / (4.0 * std::f64::consts::PI);
            terms.push(Term {
                c: tk.c * tl.c * (log_pref + expo).exp(),
                a: (&bs * &tk.a + &as_ * &tl.a) * std::f64::consts::SQRT_2,
            });
        }
    }
    Ok(FunctionInput::new(bc, terms)?.merged(1e-12))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn lse_1d() -> FunctionInput {
        FunctionInput::new(
            SymMatrix::diag(&[1.5]),
            vec![Term { c: 0.5, a: v(&[1.2]) }, Term { c: 0.5, a: v(&[-0.7]) }],
        )
        .unwrap()
    }

    /// Trapezoid rule on a wide window; spectrally accurate for these integrands.
    fn integrate_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / n as f64;
        (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * f(lo + h * i as f64)
            })
            .sum::<f64>()
            * h
    }

    #[test]
    fn mass_matches_quadrature() {
        let f = lse_1d();
        let q = integrate_1d(|x| f.eval(&v(&[x])), -15.0, 15.0, 6000);
        assert_relative_eq!(f.mass(), q, max_relative = 1e-10);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            FunctionInput::new(SymMatrix::identity(1), vec![]),
            Err(Error::EmptyList)
        ));
        assert!(FunctionInput::single(SymMatrix::diag(&[-1.0]), 1.0, &[0.0]).is_err());
        assert!(FunctionInput::single(SymMatrix::identity(2), 1.0, &[0.0]).is_err());
        assert!(FunctionInput::single(SymMatrix::identity(1), 0.0, &[0.0]).is_err());
    }

    #[test]
    fn translation_and_composition() {
        let f = lse_1d();
        let u = v(&[0.4]);
        let g = f.translate(&u);
        let t = DMatrix::from_row_slice(1, 1, &[1.7]);
        let h = f.compose(&t).unwrap();
        for x in [-1.0, 0.0, 0.3, 2.0] {
            assert_relative_eq!(g.eval(&v(&[x])), f.eval(&v(&[x - 0.4])), max_relative = 1e-12);
            assert_relative_eq!(h.eval(&v(&[x])), f.eval(&v(&[1.7 * x])), max_relative = 1e-12);
        }
        assert_relative_eq!(g.mass(), f.mass(), max_relative = 1e-12);
    }

    #[test]
    fn conv_gaussian_identities() {
        let a = SymMatrix::diag(&[2.0]);
        let c = conv_inputs(&FunctionInput::gaussian(a.clone()), &FunctionInput::gaussian(a.clone())).unwrap();
        assert_relative_eq!(c.b().matrix()[(0, 0)], 2.0, max_relative = 1e-12);
        assert_relative_eq!(c.terms()[0].c, 0.5f64.sqrt(), max_relative = 1e-12);
        let c2 = conv_inputs(
            &FunctionInput::gaussian(a),
            &FunctionInput::gaussian(SymMatrix::diag(&[0.5])),
        )
        .unwrap();
        assert_relative_eq!(c2.b().matrix()[(0, 0)], 2.0 / (0.5 + 2.0), max_relative = 1e-12);
    }

    #[test]
    fn conv_matches_numeric_convolution() {
        let f = lse_1d();
        let g = FunctionInput::single(SymMatrix::diag(&[0.8]), 2.0, &[-0.3]).unwrap();
        let c = conv_inputs(&f, &g).unwrap();
        for i in 0..20 {
            let x = -2.0 + 0.2 * i as f64;
            let direct = 2f64.sqrt()
                * integrate_1d(
                    |y| f.eval(&v(&[2f64.sqrt() * x - y])) * g.eval(&v(&[y])),
                    -20.0,
                    20.0,
                    8000,
                );
            assert_relative_eq!(c.eval(&v(&[x])), direct, max_relative = 1e-6);
        }
        assert_relative_eq!(c.mass(), f.mass() * g.mass(), max_relative = 1e-10);
    }

    #[test]
    fn conv_opposite_drifts_2d() {
        let b = SymMatrix::from_rows(&[vec![1.0, 0.3], vec![0.3, 2.0]]).unwrap();
        let f = FunctionInput::single(b.clone(), 1.0, &[0.5, -0.2]).unwrap();
        let g = FunctionInput::single(b, 1.0, &[-0.5, 0.2]).unwrap();
        let c = conv_inputs(&f, &g).unwrap();
        assert_eq!(c.terms().len(), 1);
        assert!(c.terms()[0].a.amax() < 1e-12);
        assert_relative_eq!(c.mass(), f.mass() * g.mass(), max_relative = 1e-10);
    }

    #[test]
    fn heat_flow_matches_kernel_quadrature() {
        let f = lse_1d();
        for t in [1.5, 4.0, 20.0] {
            let ft = f.heat(t).unwrap();
            let s = t - 1.0;
            for x in [-1.5, 0.0, 0.7] {
                let direct = integrate_1d(
                    |y| (-std::f64::consts::PI * (x - y) * (x - y) / s).exp() / s.sqrt() * f.eval(&v(&[y])),
                    -25.0,
                    25.0,
                    20000,
                );
                assert_relative_eq!(ft.eval(&v(&[x])), direct, max_relative = 1e-6);
            }
            assert_relative_eq!(ft.mass(), f.mass(), max_relative = 1e-10);
        }
    }

    #[test]
    fn log_hessian_of_gaussian_is_constant() {
        let b = SymMatrix::diag(&[1.0, 3.0]);
        let f = FunctionInput::single(b, 1.0, &[0.2, 0.1]).unwrap();
        let h = f.log_hessian(&v(&[0.4, -1.0]));
        assert_relative_eq!(h[(1, 1)], -6.0 * std::f64::consts::PI, max_relative = 1e-12);
    }

    #[test]
    fn raw_round_trip() {
        let f = lse_1d();
        let json = serde_json::to_string(&f.to_raw()).unwrap();
        let back: RawFunctionInput = serde_json::from_str(&json).unwrap();
        assert_eq!(FunctionInput::from_raw(&back).unwrap(), f);
    }
}
