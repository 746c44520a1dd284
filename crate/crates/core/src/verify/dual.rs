//! Dual (sup-convolution) inequality
//! `∫ sup{Π g_j(y_j)^{p_j} : Σ p_jC_jᵀy_j = x} dx ≥ Π(∫g_j)^{p_j} / BL`
//! for inputs more log-concave than `g_{Q_j⁻¹}`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{resolve_bl, Method, VerifyConfig, VerifyReport};
use crate::datum::BLDatum;
use crate::error::{Error, Result};
use crate::linalg::{gaussian_integral, psd_order, SymMatrix};

const GRID_HALF_WIDTH: f64 = 10.0;
const GRID_POINTS: usize = 4001;
const COARSE_POINTS: usize = 2001;
/// Stand-in for an unbounded splitting interval.
const FAR: f64 = 1e4;
const GOLDEN_ITERS: usize = 200;

/// Input to the dual inequality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DualInput {
    /// `g_G(y) = e^{−π⟨Gy,y⟩}`.
    Gaussian {
        #[serde(rename = "G")]
        g: SymMatrix,
    },
    /// One-dimensional `e^{−πgy² + ay}` restricted to `[lo, hi]`.
    Truncated { g: f64, a: f64, lo: f64, hi: f64 },
}

impl DualInput {
    pub fn gaussian(g: SymMatrix) -> Self {
        DualInput::Gaussian { g }
    }

    pub fn truncated(g: f64, a: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(g > 0.0) || !(lo < hi) || a.is_nan() {
            return Err(Error::InvalidParams(format!(
                "truncated input needs g > 0 and lo < hi, got g={g} lo={lo} hi={hi}"
            )));
        }
        Ok(DualInput::Truncated { g, a, lo, hi })
    }

    pub fn dim(&self) -> usize {
        match self {
            DualInput::Gaussian { g } => g.dim(),
            DualInput::Truncated { .. } => 1,
        }
    }

    /// Gaussian part `G` of `g = g_G · h` with `h` log-concave.
    fn gaussian_part(&self) -> SymMatrix {
        match self {
            DualInput::Gaussian { g } => g.clone(),
            DualInput::Truncated { g, .. } => SymMatrix::diag(&[*g]),
        }
    }

    /// `(lo, hi)` of the support in one dimension.
    fn support(&self) -> (f64, f64) {
        match self {
            DualInput::Gaussian { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            DualInput::Truncated { lo, hi, .. } => (*lo, *hi),
        }
    }

    /// `log g(y)` in one dimension; only called inside the support.
    fn log_eval_1d(&self, y: f64) -> f64 {
        match self {
            DualInput::Gaussian { g } => -std::f64::consts::PI * g.matrix()[(0, 0)] * y * y,
            DualInput::Truncated { g, a, .. } => -std::f64::consts::PI * g * y * y + a * y,
        }
    }

    pub fn mass(&self) -> Result<f64> {
        match self {
            DualInput::Gaussian { g } => gaussian_integral(g, &DVector::zeros(g.dim())),
            DualInput::Truncated { g, a, lo, hi } => {
                let mu = a / (2.0 * std::f64::consts::PI * g);
                let w = 12.0 / g.sqrt();
                let (l, h) = (lo.max(mu - w), hi.min(mu + w));
                if l >= h {
                    return Ok(0.0);
                }
                Ok(simpson(|y| self.log_eval_1d(y).exp(), l, h, 8000))
            }
        }
    }
}

fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, intervals: usize) -> f64 {
    let k = intervals + intervals % 2;
    let h = (hi - lo) / k as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..k {
        s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn trapezoid(f: &impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> f64 {
    let h = (hi - lo) / (points - 1) as f64;
    let inner: f64 = (1..points - 1).map(|i| f(lo + i as f64 * h)).sum();
    h * (inner + 0.5 * (f(lo) + f(hi)))
}

fn golden_max(phi: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (phi(x1), phi(x2));
    for _ in 0..GOLDEN_ITERS {
        if hi - lo <= 1e-13 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = phi(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = phi(x1);
        }
    }
    phi(lo).max(phi(hi)).max(f1).max(f2)
}

/// One-dimensional two-factor sup-convolution evaluated on a grid.
struct SupConv<'a> {
    inputs: &'a [DualInput],
    c: [f64; 2],
    p: [f64; 2],
    /// Factor parametrized by the splitting variable `s`; the other is solved for.
    free: usize,
}

impl SupConv<'_> {
    fn value(&self, x: f64) -> f64 {
        let (i, k) = (self.free, 1 - self.free);
        // y_k = α + β s
        let alpha = x / (self.p[k] * self.c[k]);
        let beta = -self.p[i] * self.c[i] / (self.p[k] * self.c[k]);
        let (mut lo, mut hi) = self.inputs[i].support();
        let (klo, khi) = self.inputs[k].support();
        if beta.abs() < 1e-300 {
            if alpha < klo || alpha > khi {
                return 0.0;
            }
        } else {
            let (a, b) = ((klo - alpha) / beta, (khi - alpha) / beta);
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        }
        lo = lo.max(-FAR);
        hi = hi.min(FAR);
        if lo > hi {
            return 0.0;
        }
        let phi = |s: f64| {
            self.p[i] * self.inputs[i].log_eval_1d(s) + self.p[k] * self.inputs[k].log_eval_1d(alpha + beta * s)
        };
        golden_max(phi, lo, hi).exp()
    }
}

fn check_admissible(datum: &BLDatum, inputs: &[DualInput], tol: f64) -> Result<()> {
    if inputs.len() != datum.m() {
        return Err(Error::DimensionMismatch(format!(
            "{} inputs for {} factors",
            inputs.len(),
            datum.m()
        )));
    }
    for (j, (g, fac)) in inputs.iter().zip(datum.factors()).enumerate() {
        if g.dim() != fac.dim() {
            return Err(Error::InputNotAdmissible(
                j,
                format!("lives in R^{} not R^{}", g.dim(), fac.dim()),
            ));
        }
        let qinv = fac.q.inverse_spd()?;
        if !psd_order(&qinv, &g.gaussian_part(), tol * (1.0 + qinv.amax()))? {
            return Err(Error::InputNotAdmissible(
                j,
                "Gaussian part must dominate Q_j^{-1}".into(),
            ));
        }
    }
    Ok(())
}

/// Dual inequality check. Requires `𝒬 = 0`. All-Gaussian inputs use the
/// closed form `det(Σ p_jC_jᵀG_j⁻¹C_j)^{1/2}`; anything else must be a
/// one-dimensional two-factor datum and is evaluated on a grid over
/// `[−10, 10]`. The slack is `lhs − rhs`.
pub fn reverse_check(
    datum: &BLDatum,
    inputs: &[DualInput],
    cfg: &VerifyConfig,
    bl: Option<f64>,
) -> Result<VerifyReport> {
    if !datum.qcal_is_zero() {
        return Err(Error::QcalPresent);
    }
    check_admissible(datum, inputs, cfg.psd_tol)?;
    let all_gaussian = inputs.iter().all(|g| matches!(g, DualInput::Gaussian { .. }));
    let (lhs, err, method) = if all_gaussian {
        let mut nmat = SymMatrix::zeros(datum.n());
        for (g, fac) in inputs.iter().zip(datum.factors()) {
            nmat = nmat.add(&g.gaussian_part().inverse_spd()?.congruence(&fac.c).scale(fac.p));
        }
        let ld = nmat.log_det_spd().ok_or(Error::SingularM(nmat.min_eig()))?;
        let v = (0.5 * ld).exp();
        (v, 1e-12 * v, Method::ClosedForm)
    } else {
        if datum.n() != 1 || datum.m() != 2 || datum.factors().iter().any(|f| f.dim() != 1) {
            return Err(Error::UnsupportedDimension(format!(
                "grid sup-convolution needs n = 1 with two scalar factors, got n = {}, m = {}",
                datum.n(),
                datum.m()
            )));
        }
        let c = [datum.factor(0).c[(0, 0)], datum.factor(1).c[(0, 0)]];
        let p = [datum.factor(0).p, datum.factor(1).p];
        let free = if c[1].abs() >= c[0].abs() { 0 } else { 1 };
        if c[1 - free] == 0.0 {
            return Err(Error::InvalidParams("both factors vanish".into()));
        }
        let sc = SupConv { inputs, c, p, free };
        let f = |x: f64| sc.value(x);
        let fine = trapezoid(&f, -GRID_HALF_WIDTH, GRID_HALF_WIDTH, GRID_POINTS);
        let coarse = trapezoid(&f, -GRID_HALF_WIDTH, GRID_HALF_WIDTH, COARSE_POINTS);
        (fine, (fine - coarse).abs() + 1e-12 * fine, Method::Quadrature)
    };
    let bl = resolve_bl(datum, bl)?;
    let mut log_masses = 0.0;
    for (g, fac) in inputs.iter().zip(datum.factors()) {
        log_masses += fac.p * g.mass()?.ln();
    }
    let rhs = log_masses.exp() / bl;
    Ok(VerifyReport {
        lhs,
        rhs,
        slack: lhs - rhs,
        method,
        est_error: err + 1e-12 * rhs,
        bl_constant: bl,
    })
}
