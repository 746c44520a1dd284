//! Numerical checks of the functional inequalities: the forward inequality
//! for inputs more log-convex than `g_{Q_j}`, the dual sup-convolution
//! inequality, equality for closed-form extremizers, and the monotone heat
//! flow of geometric data.

mod dual;
mod input;
pub mod quadrature;

use nalgebra::DVector;
use serde::Serialize;

use crate::datum::BLDatum;
use crate::error::{Error, Result};
use crate::gauss_opt::{optimize, OptConfig};
use crate::geometric::is_generalized_geometric;
use crate::linalg::{log_gaussian_integral, psd_order, SymMatrix, PSD_TOL};

pub use dual::{reverse_check, DualInput};
pub use input::{conv_inputs, FunctionInput, RawFunctionInput, RawTerm, Term};
use quadrature::{integrate_gh, integrate_mc, Envelope, MAX_QUAD_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    Quadrature,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyConfig {
    pub method: Method,
    /// Gauss–Hermite nodes per axis; the error estimate doubles this.
    pub nodes: usize,
    pub mc_samples: usize,
    pub seed: u64,
    /// Slack allowed in the admissibility order `B_j ⪯ Q_j`, relative to `max|Q_j|`.
    pub psd_tol: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            method: Method::Quadrature,
            nodes: 64,
            mc_samples: 200_000,
            seed: 0,
            psd_tol: PSD_TOL,
        }
    }
}

impl VerifyConfig {
    pub fn with_method(method: Method) -> Self {
        VerifyConfig {
            method,
            ..Default::default()
        }
    }
}

/// `slack` is oriented so that a nonnegative value means the inequality holds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub method: Method,
    pub est_error: f64,
    pub bl_constant: f64,
}

impl VerifyReport {
    pub fn holds(&self) -> bool {
        self.slack >= -self.est_error
    }
}

/// Cap on the number of Gaussian terms produced by expanding integer powers.
const MAX_EXPANDED_TERMS: usize = 1 << 20;

fn check_inputs(datum: &BLDatum, inputs: &[FunctionInput], tol: f64) -> Result<()> {
    if inputs.len() != datum.m() {
        return Err(Error::DimensionMismatch(format!(
            "{} inputs for {} factors",
            inputs.len(),
            datum.m()
        )));
    }
    for (j, (f, fac)) in inputs.iter().zip(datum.factors()).enumerate() {
        if f.dim() != fac.dim() {
            return Err(Error::InputNotAdmissible(
                j,
                format!("lives in R^{} not R^{}", f.dim(), fac.dim()),
            ));
        }
        // e^{−π⟨Bx,x⟩} = g_Q · e^{π⟨(Q−B)x,x⟩}, log-convex factor iff B ⪯ Q.
        if !psd_order(f.b(), &fac.q, tol * (1.0 + fac.q.amax()))? {
            return Err(Error::InputNotAdmissible(j, "B_j must satisfy B_j <= Q_j".into()));
        }
    }
    Ok(())
}

/// Quadratic part `𝒬 + Σ p_j C_jᵀ B_j C_j` of the log-integrand.
fn quadratic_part(datum: &BLDatum, inputs: &[FunctionInput]) -> SymMatrix {
    let mut a = datum.qcal_matrix();
    for (f, fac) in inputs.iter().zip(datum.factors()) {
        a = a.add(&f.b().congruence(&fac.c).scale(fac.p));
    }
    a
}

fn log_integrand<'a>(datum: &'a BLDatum, inputs: &'a [FunctionInput]) -> impl Fn(&DVector<f64>) -> f64 + Sync + 'a {
    let qcal = datum.qcal_matrix();
    move |x: &DVector<f64>| {
        let mut v = -std::f64::consts::PI * (qcal.matrix() * x).dot(x);
        for (f, fac) in inputs.iter().zip(datum.factors()) {
            v += fac.p * f.log_eval(&(&fac.c * x));
        }
        v
    }
}

fn envelope(datum: &BLDatum, inputs: &[FunctionInput]) -> Result<Envelope> {
    let a = quadratic_part(datum, inputs);
    let lo = a.min_eig();
    if lo <= 1e-12 * (1.0 + a.amax()) {
        return Err(Error::SingularM(lo));
    }
    let mut b = DVector::zeros(datum.n());
    for (f, fac) in inputs.iter().zip(datum.factors()) {
        b += fac.c.transpose() * f.mean_drift() * fac.p;
    }
    let mu = a.inverse_spd()?.matrix() * b / (2.0 * std::f64::consts::PI);
    Ok(Envelope { a, mu })
}

/// `f_j^{p_j}` as a list of `(coefficient, drift)` pairs.
fn power_terms(j: usize, f: &FunctionInput, p: f64) -> Result<Vec<(f64, DVector<f64>)>> {
    if f.is_single_term() {
        let t = &f.terms()[0];
        return Ok(vec![(t.c.powf(p), &t.a * p)]);
    }
    let k = p.round();
    if (p - k).abs() > 1e-12 || k < 1.0 {
        return Err(Error::NonIntegerExponentWithClosedForm(j));
    }
    let mut acc: Vec<(f64, DVector<f64>)> = vec![(1.0, DVector::zeros(f.dim()))];
    for _ in 0..k as usize {
        let mut next = Vec::with_capacity(acc.len() * f.terms().len());
        for (c, a) in &acc {
            for t in f.terms() {
                next.push((c * t.c, a + &t.a));
            }
        }
        if next.len() > MAX_EXPANDED_TERMS {
            return Err(Error::InvalidParams("closed form would need too many terms".into()));
        }
        acc = next;
    }
    Ok(acc)
}

/// `log ∫ e^{−π⟨𝒬x,x⟩} Π f_j(C_jx)^{p_j} dx` by expanding into Gaussians.
fn log_lhs_closed(datum: &BLDatum, inputs: &[FunctionInput]) -> Result<f64> {
    let a = quadratic_part(datum, inputs);
    if a.min_eig() <= 1e-12 * (1.0 + a.amax()) {
        return Err(Error::SingularM(a.min_eig()));
    }
    let mut combos: Vec<(f64, DVector<f64>)> = vec![(0.0, DVector::zeros(datum.n()))];
    for (j, (f, fac)) in inputs.iter().zip(datum.factors()).enumerate() {
        let pt = power_terms(j, f, fac.p)?;
        let mut next = Vec::with_capacity(combos.len() * pt.len());
        for (lc, b) in &combos {
            for (c, d) in &pt {
                next.push((lc + c.ln(), b + fac.c.transpose() * d));
            }
        }
        if next.len() > MAX_EXPANDED_TERMS {
            return Err(Error::InvalidParams("closed form would need too many terms".into()));
        }
        combos = next;
    }
    let logs: Vec<f64> = combos
        .iter()
        .map(|(lc, b)| Ok(lc + log_gaussian_integral(&a, &(-b))?))
        .collect::<Result<_>>()?;
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln())
}

/// `∫ e^{−π⟨𝒬x,x⟩} Π f_j(C_jx)^{p_j} dx` with its error estimate.
pub fn lhs_integral(datum: &BLDatum, inputs: &[FunctionInput], cfg: &VerifyConfig) -> Result<(f64, f64)> {
    if inputs.len() != datum.m() {
        return Err(Error::DimensionMismatch("one input per factor".into()));
    }
    match cfg.method {
        Method::ClosedForm => {
            let v = log_lhs_closed(datum, inputs)?.exp();
            Ok((v, 1e-12 * v))
        }
        Method::Quadrature => {
            if datum.n() > MAX_QUAD_DIM {
                return Err(Error::DimensionTooLarge {
                    n: datum.n(),
                    max: MAX_QUAD_DIM,
                });
            }
            let env = envelope(datum, inputs)?;
            integrate_gh(&log_integrand(datum, inputs), &env, cfg.nodes)
        }
        Method::MonteCarlo => {
            let env = envelope(datum, inputs)?;
            integrate_mc(&log_integrand(datum, inputs), &env, cfg.mc_samples, cfg.seed)
        }
    }
}

fn resolve_bl(datum: &BLDatum, bl: Option<f64>) -> Result<f64> {
    match bl {
        Some(b) => Ok(b),
        None => Ok(optimize(datum, &OptConfig::default())?.bl_constant),
    }
}

/// Forward inequality `∫ e^{−π⟨𝒬x,x⟩} Π f_j(C_jx)^{p_j} ≤ BL · Π (∫f_j)^{p_j}`.
/// Each input must have `B_j ⪯ Q_j`. Without `bl` the constant comes from
/// [`optimize`] with default settings.
pub fn forward_check(
    datum: &BLDatum,
    inputs: &[FunctionInput],
    cfg: &VerifyConfig,
    bl: Option<f64>,
) -> Result<VerifyReport> {
    check_inputs(datum, inputs, cfg.psd_tol)?;
    let (lhs, err) = lhs_integral(datum, inputs, cfg)?;
    let bl = resolve_bl(datum, bl)?;
    let log_masses: f64 = inputs
        .iter()
        .zip(datum.factors())
        .map(|(f, fac)| fac.p * f.log_mass())
        .sum();
    let rhs = bl * log_masses.exp();
    Ok(VerifyReport {
        lhs,
        rhs,
        slack: rhs - lhs,
        method: cfg.method,
        est_error: err + 1e-12 * rhs,
        bl_constant: bl,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EqualityReport {
    pub equal: bool,
    pub tolerance: f64,
    pub report: VerifyReport,
}

/// Equality holds when `|slack| ≤ max(1e−6 · rhs, est_error)`.
pub fn equality_check(
    datum: &BLDatum,
    inputs: &[FunctionInput],
    cfg: &VerifyConfig,
    bl: Option<f64>,
) -> Result<EqualityReport> {
    let report = forward_check(datum, inputs, cfg, bl)?;
    let tolerance = (1e-6 * report.rhs).max(report.est_error);
    Ok(EqualityReport {
        equal: report.slack.abs() <= tolerance,
        tolerance,
        report,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeatPoint {
    pub t: f64,
    pub value: f64,
    pub est_error: f64,
}

/// `∫ Q̃(x,t) dx` along `t_grid` for a generalized geometric datum, where
/// `Q̃(x,t) = t^{(Σ p_j n_j − n)/2} Π f̃_j(C_jx, t)^{p_j}` and `f̃_j` is the heat
/// flow of `f_j` started at `t = 1`.
pub fn heatflow_monotone(
    datum: &BLDatum,
    inputs: &[FunctionInput],
    t_grid: &[f64],
    cfg: &VerifyConfig,
) -> Result<Vec<HeatPoint>> {
    if !is_generalized_geometric(datum, 1e-8)?.is_geometric {
        return Err(Error::NotGeometric);
    }
    if datum.n() > 2 {
        return Err(Error::DimensionTooLarge { n: datum.n(), max: 2 });
    }
    check_inputs(datum, inputs, cfg.psd_tol)?;
    let expo = 0.5 * (datum.weighted_dim() - datum.n() as f64);
    t_grid
        .iter()
        .map(|&t| {
            let evolved = inputs.iter().map(|f| f.heat(t)).collect::<Result<Vec<_>>>()?;
            let (v, e) = lhs_integral(datum, &evolved, cfg)?;
            let s = t.powf(expo);
            Ok(HeatPoint {
                t,
                value: s * v,
                est_error: s * e,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datum::GaussianInput;
    use crate::gauss_opt::optimize;
    use crate::presets;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    /// Extremizer family of the four-factor simple geometric datum.
    fn example_2_family(a: f64, b: f64) -> Vec<FunctionInput> {
        vec![
            FunctionInput::single(SymMatrix::identity(2), 1.0, &[-a, -b]).unwrap(),
            FunctionInput::single(SymMatrix::identity(1), 1.0, &[-b]).unwrap(),
            FunctionInput::single(SymMatrix::identity(1), 1.0, &[-(a * FRAC_1_SQRT_2 + b)]).unwrap(),
            FunctionInput::single(SymMatrix::identity(1), 1.0, &[-(a * FRAC_1_SQRT_2 - b)]).unwrap(),
        ]
    }

    fn closed_value(a: f64, b: f64) -> f64 {
        (a * a / (4.0 * PI)).exp() * (b * b / (2.0 * PI)).exp()
    }

    #[test]
    fn example_2_family_is_extremal() {
        let d = presets::geometric_example_2();
        for (a, b) in [(0.0, 0.0), (1.0, -2.0), (3.0, 1.0), (1.0, 2.0)] {
            for method in [Method::ClosedForm, Method::Quadrature] {
                let r = forward_check(
                    &d,
                    &example_2_family(a, b),
                    &VerifyConfig::with_method(method),
                    Some(1.0),
                )
                .unwrap();
                let want = closed_value(a, b);
                assert_relative_eq!(r.lhs, want, max_relative = 1e-8);
                assert_relative_eq!(r.rhs, want, max_relative = 1e-10);
                assert!(r.slack.abs() <= 1e-8 * want);
            }
        }
    }

    #[test]
    fn equality_detects_perturbation() {
        let d = presets::geometric_example_2();
        let cfg = VerifyConfig::default();
        assert!(
            equality_check(&d, &example_2_family(0.0, 0.0), &cfg, Some(1.0))
                .unwrap()
                .equal
        );
        assert!(
            equality_check(&d, &example_2_family(1.0, -2.0), &cfg, Some(1.0))
                .unwrap()
                .equal
        );
        // Replace f₁ by a cosh-type mixture: still admissible, no longer extremal.
        let mut inputs = example_2_family(0.0, 0.0);
        inputs[0] = FunctionInput::new(
            SymMatrix::identity(2),
            vec![
                Term {
                    c: 0.5,
                    a: DVector::from_column_slice(&[1.5, 0.0]),
                },
                Term {
                    c: 0.5,
                    a: DVector::from_column_slice(&[-1.5, 0.0]),
                },
            ],
        )
        .unwrap();
        let r = equality_check(&d, &inputs, &cfg, Some(1.0)).unwrap();
        assert!(!r.equal);
        assert!(r.report.slack > 10.0 * r.report.est_error);
    }

    #[test]
    fn gaussian_saturation_at_certified_point() {
        let d = presets::example_ii();
        let opt = optimize(&d, &OptConfig::default()).unwrap();
        let inputs: Vec<FunctionInput> = opt
            .best
            .b()
            .iter()
            .map(|b| FunctionInput::gaussian(b.clone()))
            .collect();
        let r = forward_check(
            &d,
            &inputs,
            &VerifyConfig::with_method(Method::ClosedForm),
            Some(opt.bl_constant),
        )
        .unwrap();
        assert!(r.slack.abs() <= 1e-8 * r.rhs, "{r:?}");
    }

    #[test]
    fn geometric_example_1_lse_input() {
        let d = presets::geometric_example_1(3.0);
        let q1 = d.factor(0).q.clone();
        let inputs = vec![
            FunctionInput::new(
                q1,
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
            .unwrap(),
            FunctionInput::gaussian(SymMatrix::identity(1)),
        ];
        for method in [Method::ClosedForm, Method::Quadrature, Method::MonteCarlo] {
            let r = forward_check(&d, &inputs, &VerifyConfig::with_method(method), Some(1.0)).unwrap();
            assert!(r.slack >= -1e-4, "{method:?}: {r:?}");
        }
    }

    #[test]
    fn closed_form_needs_integer_powers() {
        let d = presets::geometric_example_2();
        let mut inputs = example_2_family(0.0, 0.0);
        inputs[1] = FunctionInput::new(
            SymMatrix::identity(1),
            vec![
                Term {
                    c: 1.0,
                    a: DVector::from_column_slice(&[0.1]),
                },
                Term {
                    c: 1.0,
                    a: DVector::from_column_slice(&[-0.1]),
                },
            ],
        )
        .unwrap();
        let r = forward_check(&d, &inputs, &VerifyConfig::with_method(Method::ClosedForm), Some(1.0));
        assert!(matches!(r, Err(Error::NonIntegerExponentWithClosedForm(1))));
    }

    #[test]
    fn inadmissible_and_oversized_inputs() {
        let d = presets::example_ii();
        let too_big = vec![
            FunctionInput::gaussian(SymMatrix::scaled_identity(2, 2.0)),
            FunctionInput::gaussian(SymMatrix::identity(1)),
        ];
        assert!(matches!(
            forward_check(&d, &too_big, &VerifyConfig::default(), Some(1.0)),
            Err(Error::InputNotAdmissible(0, _))
        ));
        let big = presets::single_identity(4, 1.0);
        let f = vec![FunctionInput::gaussian(SymMatrix::identity(4))];
        assert!(matches!(
            forward_check(&big, &f, &VerifyConfig::default(), Some(1.0)),
            Err(Error::DimensionTooLarge { n: 4, max: 3 })
        ));
        // Monte Carlo has no dimension limit.
        let r = forward_check(&big, &f, &VerifyConfig::with_method(Method::MonteCarlo), Some(1.0)).unwrap();
        assert!(r.holds());
    }

    #[test]
    fn heat_flow_flat_for_extremizers() {
        let d = presets::geometric_example_1(3.0);
        let inputs: Vec<FunctionInput> = d
            .factors()
            .iter()
            .map(|f| FunctionInput::gaussian(f.q.clone()))
            .collect();
        let curve = heatflow_monotone(&d, &inputs, &[1.0, 2.0, 8.0, 64.0], &VerifyConfig::default()).unwrap();
        for p in &curve {
            assert_relative_eq!(p.value, curve[0].value, max_relative = 1e-6);
        }
    }

    #[test]
    fn heat_flow_increases_for_non_extremizer() {
        let d = presets::geometric_example_1(3.0);
        let f1 = FunctionInput::new(
            d.factor(0).q.clone(),
            vec![
                Term {
                    c: 0.5,
                    a: DVector::from_column_slice(&[1.2, 0.4]),
                },
                Term {
                    c: 0.5,
                    a: DVector::from_column_slice(&[-1.2, -0.4]),
                },
            ],
        )
        .unwrap();
        let f2 = FunctionInput::single(SymMatrix::identity(1), 1.0, &[0.7]).unwrap();
        let masses = f1.mass().powf(d.factor(0).p) * f2.mass().powf(d.factor(1).p);
        let grid = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
        let curve = heatflow_monotone(&d, &[f1, f2], &grid, &VerifyConfig::default()).unwrap();
        for w in curve.windows(2) {
            assert!(w[1].value >= w[0].value * (1.0 - 1e-6), "{w:?}");
        }
        assert!(curve[6].value > curve[0].value * (1.0 + 1e-4));
        assert_relative_eq!(curve[6].value, masses, max_relative = 1e-2);
    }

    #[test]
    fn heat_flow_conserves_mass_for_one_identity_factor() {
        let d = presets::single_identity(2, 1.0);
        let f = FunctionInput::new(
            SymMatrix::identity(2),
            vec![
                Term {
                    c: 1.0,
                    a: DVector::from_column_slice(&[0.4, 0.0]),
                },
                Term {
                    c: 2.0,
                    a: DVector::from_column_slice(&[0.0, -0.9]),
                },
            ],
        )
        .unwrap();
        let mass = f.mass();
        let curve = heatflow_monotone(&d, &[f], &[1.0, 3.0, 30.0], &VerifyConfig::default()).unwrap();
        for p in curve {
            assert_relative_eq!(p.value, mass, max_relative = 1e-9);
        }
    }

    #[test]
    fn heat_flow_rejects_non_geometric() {
        let d = presets::example_ii();
        let inputs = vec![
            FunctionInput::gaussian(SymMatrix::identity(2)),
            FunctionInput::gaussian(SymMatrix::identity(1)),
        ];
        assert!(matches!(
            heatflow_monotone(&d, &inputs, &[1.0], &VerifyConfig::default()),
            Err(Error::NotGeometric)
        ));
    }

    #[test]
    fn input_at_bounds_matches_gaussian_ratio() {
        let d = presets::example_ii();
        let b = GaussianInput::at_bounds(&d);
        let inputs: Vec<FunctionInput> = b.b().iter().map(|m| FunctionInput::gaussian(m.clone())).collect();
        let (lhs, _) = lhs_integral(&d, &inputs, &VerifyConfig::with_method(Method::ClosedForm)).unwrap();
        // ∫ Π g_{B_j}(C_jx)^{p_j} = det(M)^{-1/2}.
        assert_relative_eq!(lhs, b.m().det().powf(-0.5), max_relative = 1e-12);
    }
}
