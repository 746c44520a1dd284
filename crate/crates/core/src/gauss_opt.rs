//! The Gaussian ratio `Π det(B_j)^{p_j} / det(𝒬 + Σ p_j C_jᵀ B_j C_j)`, its
//! maximization over the box `0 < B_j ⪯ Q_j`, and KKT certificates.
//!
//! The box is removed by writing `B_j = Q_j^{1/2} s(X_j) Q_j^{1/2}` where `s`
//! is the logistic function applied to the spectrum of a symmetric `X_j`.
//! Ascent runs BFGS on the free coordinates of the `X_j` with an Armijo
//! backtracking line search.
//!
//! The logistic map is floored at [`SIGMOID_FLOOR`]: below that relative
//! size `det M` carries no correct digits and the ascent would chase
//! rounding noise instead of the supremum.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::datum::{assemble_m, BLDatum, GaussianInput};
use crate::error::{Error, Result};
use crate::linalg::{SymMatrix, EIG_FLOOR};
use crate::sample::substream;

/// `F(B) = Σ p_j log det B_j − log det M`.
pub fn log_ratio(datum: &BLDatum, b: &[SymMatrix]) -> Result<f64> {
    let mut f = 0.0;
    for (j, (bj, fac)) in b.iter().zip(datum.factors()).enumerate() {
        let ld = bj.log_det_spd().ok_or(Error::InfeasibleB(j))?;
        f += fac.p * ld;
    }
    let m = assemble_m(datum, b);
    let ldm = m.log_det_spd().ok_or_else(|| Error::SingularM(m.min_eig()))?;
    Ok(f - ldm)
}

/// The determinant ratio at a feasible input; the BL candidate is its root.
pub fn ratio(datum: &BLDatum, input: &GaussianInput) -> Result<f64> {
    log_ratio(datum, input.b()).map(f64::exp)
}

fn m_inverse(m: &SymMatrix) -> Result<SymMatrix> {
    let lo = m.min_eig();
    if lo <= EIG_FLOOR * (1.0 + m.amax()) {
        return Err(Error::SingularM(lo));
    }
    m.inverse_spd().map_err(|_| Error::SingularM(lo))
}

/// `∂F/∂B_j = p_j B_j⁻¹ − p_j C_j M⁻¹ C_jᵀ`.
pub fn gradient(datum: &BLDatum, b: &[SymMatrix]) -> Result<Vec<SymMatrix>> {
    let m = assemble_m(datum, b);
    let minv = m_inverse(&m)?;
    b.iter()
        .zip(datum.factors())
        .enumerate()
        .map(|(j, (bj, f))| {
            let binv = bj.inverse_spd().map_err(|_| Error::InfeasibleB(j))?;
            let cmc = minv.congruence(&f.c.transpose());
            Ok(binv.sub(&cmc).scale(f.p))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KKTCertificate {
    #[serde(serialize_with = "crate::report::ser_sym")]
    pub m: SymMatrix,
    #[serde(serialize_with = "crate::report::ser_sym_list")]
    pub slack: Vec<SymMatrix>,
    pub slack_min_eig: Vec<f64>,
    pub complementarity_residual: Vec<f64>,
    pub tol: f64,
    pub passed: bool,
}

/// Evaluates `S_j = B_j⁻¹ − C_j M⁻¹ C_jᵀ ⪰ 0` and `S_j (Q_j − B_j) = 0`.
pub fn kkt_check(datum: &BLDatum, input: &GaussianInput, tol: f64) -> Result<KKTCertificate> {
    let m = input.m().clone();
    let minv = m_inverse(&m)?;
    let mut slack = Vec::with_capacity(datum.m());
    let mut mins = Vec::with_capacity(datum.m());
    let mut comp = Vec::with_capacity(datum.m());
    for (j, (bj, f)) in input.b().iter().zip(datum.factors()).enumerate() {
        let binv = bj.inverse_spd().map_err(|_| Error::InfeasibleB(j))?;
        let s = binv.sub(&minv.congruence(&f.c.transpose()));
        mins.push(s.min_eig());
        comp.push((s.matrix() * f.q.sub(bj).matrix()).norm());
        slack.push(s);
    }
    let passed = mins.iter().all(|&e| e >= -tol) && comp.iter().all(|&r| r <= tol);
    Ok(KKTCertificate {
        m,
        slack,
        slack_min_eig: mins,
        complementarity_residual: comp,
        tol,
        passed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptConfig {
    pub starts: usize,
    pub seed: u64,
    pub gtol: f64,
    pub max_iter: usize,
    pub boundary_eps: f64,
    pub kkt_tol: f64,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            starts: 16,
            seed: 0,
            gtol: 1e-10,
            max_iter: 20000,
            boundary_eps: 1e-3,
            kkt_tol: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum AttainedFlag {
    Attained,
    BoundaryEscape,
    MaxIter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum StopReason {
    Converged,
    LineSearchStall,
    MaxIter,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StartTrace {
    pub start: usize,
    pub iterations: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub stop: StopReason,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptResult {
    pub best: GaussianInput,
    pub ratio: f64,
    pub bl_constant: f64,
    pub attained_flag: AttainedFlag,
    pub certificate: Option<KKTCertificate>,
    pub best_start: usize,
    /// Objective `F` after every iteration of the winning start.
    pub history: Vec<f64>,
    pub trace: Vec<StartTrace>,
}

/// Logistic function and its complement, both accurate in the tails.
fn sigmoid(x: f64) -> (f64, f64) {
    if x >= 0.0 {
        let e = (-x).exp();
        (1.0 / (1.0 + e), e / (1.0 + e))
    } else {
        let e = x.exp();
        (e / (1.0 + e), 1.0 / (1.0 + e))
    }
}

/// Smallest eigenvalue of `Q_j^{-1/2} B_j Q_j^{-1/2}` reachable by the ascent.
pub const SIGMOID_FLOOR: f64 = 1e-8;

/// Floored logistic `δ + (1 − δ)σ(x)`.
fn floored(x: f64) -> f64 {
    let (s, c) = sigmoid(x);
    if s > 0.5 {
        1.0 - (1.0 - SIGMOID_FLOOR) * c
    } else {
        SIGMOID_FLOOR + (1.0 - SIGMOID_FLOOR) * s
    }
}

fn log_floored(x: f64) -> f64 {
    let (s, c) = sigmoid(x);
    if s > 0.5 {
        (-(1.0 - SIGMOID_FLOOR) * c).ln_1p()
    } else {
        (SIGMOID_FLOOR + (1.0 - SIGMOID_FLOOR) * s).ln()
    }
}

/// Divided difference `(s(a) − s(b))/(a − b)` of the logistic function.
fn sigmoid_divided(a: f64, b: f64) -> f64 {
    let (sa, ca) = sigmoid(a);
    let (sb, cb) = sigmoid(b);
    if (a - b).abs() <= 1e-9 * (1.0 + a.abs()) {
        let (s, c) = sigmoid(0.5 * (a + b));
        return s * c;
    }
    let diff = if a >= 0.0 && b >= 0.0 { cb - ca } else { sa - sb };
    diff / (a - b)
}

struct Layout {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    len: usize,
    q_half: Vec<SymMatrix>,
    logdet_q: Vec<f64>,
}

impl Layout {
    fn new(datum: &BLDatum) -> Self {
        let mut offsets = Vec::new();
        let mut len = 0;
        let mut dims = Vec::new();
        for f in datum.factors() {
            let d = f.dim();
            offsets.push(len);
            dims.push(d);
            len += d * (d + 1) / 2;
        }
        let q_half = datum
            .factors()
            .iter()
            .map(|f| f.q.sqrt().expect("Q_j is SPD"))
            .collect();
        let logdet_q = datum
            .factors()
            .iter()
            .map(|f| f.q.log_det_spd().expect("Q_j is SPD"))
            .collect();
        Layout {
            dims,
            offsets,
            len,
            q_half,
            logdet_q,
        }
    }

    fn unpack(&self, v: &DVector<f64>, j: usize) -> DMatrix<f64> {
        let d = self.dims[j];
        let mut x = DMatrix::zeros(d, d);
        let mut k = self.offsets[j];
        for i in 0..d {
            x[(i, i)] = v[k];
            k += 1;
            for l in (i + 1)..d {
                let val = v[k] * std::f64::consts::FRAC_1_SQRT_2;
                x[(i, l)] = val;
                x[(l, i)] = val;
                k += 1;
            }
        }
        x
    }

    fn pack_gradient(&self, g: &DMatrix<f64>, j: usize, out: &mut DVector<f64>) {
        let d = self.dims[j];
        let mut k = self.offsets[j];
        for i in 0..d {
            out[k] = g[(i, i)];
            k += 1;
            for l in (i + 1)..d {
                out[k] = std::f64::consts::SQRT_2 * g[(i, l)];
                k += 1;
            }
        }
    }
}

struct Eval {
    f: f64,
    grad: Option<DVector<f64>>,
}

struct Spectral {
    x: DVector<f64>,
    s: DVector<f64>,
    u: DMatrix<f64>,
}

fn spectral(xmat: DMatrix<f64>) -> Spectral {
    let (x, u) = SymMatrix::symmetrize(xmat).eigen();
    let s = x.map(floored);
    Spectral { x, s, u }
}

fn b_from(layout: &Layout, j: usize, sp: &Spectral) -> SymMatrix {
    let inner = &sp.u * DMatrix::from_diagonal(&sp.s) * sp.u.transpose();
    SymMatrix::symmetrize(inner).congruence(layout.q_half[j].matrix())
}

fn evaluate(datum: &BLDatum, layout: &Layout, v: &DVector<f64>, want_grad: bool) -> Option<Eval> {
    let mut specs = Vec::with_capacity(datum.m());
    let mut bs = Vec::with_capacity(datum.m());
    let mut f = 0.0;
    for (j, fac) in datum.factors().iter().enumerate() {
        let sp = spectral(layout.unpack(v, j));
        let ld = layout.logdet_q[j] + sp.x.iter().map(|&t| log_floored(t)).sum::<f64>();
        f += fac.p * ld;
        bs.push(b_from(layout, j, &sp));
        specs.push(sp);
    }
    let m = assemble_m(datum, &bs);
    let ch = m.matrix().clone().cholesky()?;
    let ldm = 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    f -= ldm;
    if !f.is_finite() {
        return None;
    }
    if !want_grad {
        return Some(Eval { f, grad: None });
    }
    let minv = ch.inverse();
    let mut grad = DVector::zeros(layout.len);
    for (j, fac) in datum.factors().iter().enumerate() {
        let sp = &specs[j];
        let d = layout.dims[j];
        // Uᵀ Q^{1/2} C M⁻¹ Cᵀ Q^{1/2} U
        let w = sp.u.transpose() * layout.q_half[j].matrix() * &fac.c;
        let k = &w * &minv * w.transpose();
        let mut gx = DMatrix::zeros(d, d);
        for a in 0..d {
            for bidx in 0..d {
                let gamma = (1.0 - SIGMOID_FLOOR) * sigmoid_divided(sp.x[a], sp.x[bidx]);
                let mut val = -gamma * k[(a, bidx)];
                if a == bidx {
                    val += gamma / sp.s[a];
                }
                gx[(a, bidx)] = fac.p * val;
            }
        }
        let g = &sp.u * gx * sp.u.transpose();
        layout.pack_gradient(&g, j, &mut grad);
    }
    Some(Eval { f, grad: Some(grad) })
}

fn input_from(datum: &BLDatum, layout: &Layout, v: &DVector<f64>) -> GaussianInput {
    let b = (0..datum.m())
        .map(|j| b_from(layout, j, &spectral(layout.unpack(v, j))))
        .collect();
    GaussianInput::unchecked(datum, b)
}

struct RunOutcome {
    v: DVector<f64>,
    f: f64,
    grad_norm: f64,
    iterations: usize,
    stop: StopReason,
    history: Vec<f64>,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
const MAX_STEP: f64 = 10.0;
const STALL_WINDOW: usize = 50;

fn ascend(datum: &BLDatum, layout: &Layout, v0: DVector<f64>, cfg: &OptConfig) -> Result<RunOutcome> {
    // Minimize φ = −F.
    let n = layout.len;
    let mut v = v0;
    let first = evaluate(datum, layout, &v, true)
        .ok_or_else(|| Error::NumericalBreakdown("objective undefined at the starting point".into()))?;
    let mut phi = -first.f;
    let mut g = -first.grad.expect("gradient requested");
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut history = Vec::new();
    let mut stop = StopReason::MaxIter;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        if g.norm() <= cfg.gtol {
            stop = StopReason::Converged;
            break;
        }
        let mut d = -(&h * &g);
        let mut slope = g.dot(&d);
        if slope >= 0.0 || !slope.is_finite() {
            h = DMatrix::identity(n, n);
            fresh = true;
            d = -g.clone();
            slope = g.dot(&d);
        }
        let dmax = d.amax();
        let mut t = if dmax > MAX_STEP { MAX_STEP / dmax } else { 1.0 };
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial = &v + &d * t;
            if let Some(e) = evaluate(datum, layout, &trial, false) {
                if -e.f <= phi + ARMIJO_C1 * t * slope {
                    accepted = Some((trial, -e.f));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((v_new, phi_new)) = accepted else {
            if !fresh {
                // Retry once along steepest descent before giving up.
                h = DMatrix::identity(n, n);
                fresh = true;
                continue;
            }
            stop = StopReason::LineSearchStall;
            break;
        };
        let e = evaluate(datum, layout, &v_new, true)
            .ok_or_else(|| Error::NumericalBreakdown("objective lost definiteness after accepted step".into()))?;
        let g_new = -e.grad.expect("gradient requested");
        let s = &v_new - &v;
        let y = &g_new - &g;
        let ys = y.dot(&s);
        if ys > 1e-12 * s.norm() * y.norm() && ys > 0.0 {
            if fresh {
                h = DMatrix::identity(n, n) * (ys / y.dot(&y));
            }
            let rho = 1.0 / ys;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            fresh = false;
        }
        v = v_new;
        phi = phi_new;
        g = g_new;
        iterations += 1;
        history.push(-phi);
        if history.len() > STALL_WINDOW {
            let old = history[history.len() - 1 - STALL_WINDOW];
            if -phi - old <= 1e-15 * (1.0 + phi.abs()) {
                stop = StopReason::LineSearchStall;
                break;
            }
        }
    }
    Ok(RunOutcome {
        v,
        f: -phi,
        grad_norm: g.norm(),
        iterations,
        stop,
        history,
    })
}

fn starting_point(layout: &Layout, seed: u64, start: usize) -> DVector<f64> {
    if start == 0 {
        return DVector::zeros(layout.len);
    }
    let mut rng = substream(seed, start as u64);
    DVector::from_fn(layout.len, |_, _| {
        1.5 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
    })
}

/// Multi-start maximization of `F` over the box.
pub fn optimize(datum: &BLDatum, cfg: &OptConfig) -> Result<OptResult> {
    let layout = Layout::new(datum);
    let starts = cfg.starts.max(1);
    let runs: Vec<Result<RunOutcome>> = (0..starts)
        .into_par_iter()
        .map(|k| ascend(datum, &layout, starting_point(&layout, cfg.seed, k), cfg))
        .collect();
    let mut best: Option<(usize, RunOutcome)> = None;
    let mut trace = Vec::with_capacity(starts);
    let mut last_err = None;
    for (k, run) in runs.into_iter().enumerate() {
        match run {
            Ok(r) => {
                trace.push(StartTrace {
                    start: k,
                    iterations: r.iterations,
                    objective: r.f,
                    grad_norm: r.grad_norm,
                    stop: r.stop,
                });
                if best.as_ref().is_none_or(|(_, b)| r.f > b.f) {
                    best = Some((k, r));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let Some((best_start, run)) = best else {
        return Err(last_err.unwrap_or_else(|| Error::NumericalBreakdown("no start succeeded".into())));
    };
    let input = input_from(datum, &layout, &run.v);
    let certificate = kkt_check(datum, &input, cfg.kkt_tol).ok();
    let passed = certificate.as_ref().is_some_and(|c| c.passed);
    let near_boundary = input.b().iter().any(|b| b.min_eig() < cfg.boundary_eps);
    let tail = run.history.len() / 10;
    let improving = run.history.len() >= 2 && {
        let from = run.history[run.history.len() - 1 - tail.max(1)];
        run.f > from
    };
    // A negative slack means shrinking some B_j further still raises F.
    let uphill = certificate
        .as_ref()
        .is_none_or(|c| c.slack_min_eig.iter().any(|&e| e < -cfg.kkt_tol));
    let attained_flag = if passed {
        AttainedFlag::Attained
    } else if near_boundary && (improving || uphill) {
        AttainedFlag::BoundaryEscape
    } else {
        AttainedFlag::MaxIter
    };
    let ratio = run.f.exp();
    Ok(OptResult {
        best: input,
        ratio,
        bl_constant: ratio.sqrt(),
        attained_flag,
        certificate,
        best_start,
        history: run.history,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::sample::{random_spd, rng_from_seed};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn ex_ii_input(eps: f64) -> GaussianInput {
        let d = presets::example_ii();
        GaussianInput::new(&d, vec![presets::example_ii_b_eps(eps), SymMatrix::identity(1)]).unwrap()
    }

    #[test]
    fn ratio_example_ii_family() {
        let d = presets::example_ii();
        for eps in [0.1, 0.5, 0.9] {
            assert_relative_eq!(ratio(&d, &ex_ii_input(eps)).unwrap(), 0.2, max_relative = 1e-12);
        }
    }

    #[test]
    fn ratio_geometric_identity_is_one() {
        for d in [presets::geometric_example_1(3.0), presets::geometric_example_2()] {
            let b = GaussianInput::identity(&d).unwrap();
            assert_relative_eq!(ratio(&d, &b).unwrap(), 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn ratio_example_i_path() {
        // Closed form along b = (1, ε, ε, 1, 1): b₁b₄b₅(b₂b₃)^{1/2} / (4(b₂ + b₃ + b₂b₃/(4b₁))).
        let d = presets::example_i();
        let eps = 0.01;
        let b = [1.0, eps, eps, 1.0, 1.0]
            .iter()
            .map(|&x| SymMatrix::diag(&[x]))
            .collect();
        let r = ratio(&d, &GaussianInput::new(&d, b).unwrap()).unwrap();
        assert_relative_eq!(r, 1.0 / (8.0 + eps), max_relative = 1e-12);
    }

    #[test]
    fn singular_m_is_reported() {
        let d = presets::example_i().without_factor(3).unwrap();
        let b = GaussianInput::at_bounds(&d);
        assert!(matches!(ratio(&d, &b), Err(Error::SingularM(_))));
    }

    #[test]
    fn kkt_examples() {
        let d = presets::example_ii();
        let c = kkt_check(&d, &ex_ii_input(0.5), 1e-8).unwrap();
        assert!(c.passed);
        assert!(c.complementarity_residual.iter().all(|&r| r <= 1e-8));
        let b = GaussianInput::new(&d, vec![SymMatrix::scaled_identity(2, 0.5), SymMatrix::diag(&[0.5])]).unwrap();
        assert!(!kkt_check(&d, &b, 1e-8).unwrap().passed);
        for g in [presets::geometric_example_1(3.0), presets::geometric_example_2()] {
            let b = GaussianInput::identity(&g).unwrap();
            assert!(kkt_check(&g, &b, 1e-10).unwrap().passed);
        }
    }

    #[test]
    fn sigmoid_helpers_are_consistent() {
        for x in [-40.0, -3.0, 0.0, 2.5, 40.0] {
            let (s, c) = sigmoid(x);
            assert_relative_eq!(s + c, 1.0, max_relative = 1e-15);
            assert_relative_eq!(log_floored(x), floored(x).ln(), max_relative = 1e-12);
            assert!(floored(x) >= SIGMOID_FLOOR && floored(x) <= 1.0);
        }
        let fd = (sigmoid(1.0 + 1e-6).0 - sigmoid(1.0 - 1e-6).0) / 2e-6;
        assert_relative_eq!(sigmoid_divided(1.0, 1.0), fd, max_relative = 1e-8);
        assert_relative_eq!(
            sigmoid_divided(30.0, 31.0),
            sigmoid(30.0).1 - sigmoid(31.0).1,
            max_relative = 1e-12
        );
    }

    #[test]
    fn reparameterized_gradient_matches_differences() {
        let d = presets::example_ii();
        let layout = Layout::new(&d);
        let mut rng = rng_from_seed(11);
        for _ in 0..10 {
            let v = DVector::from_fn(layout.len, |_, _| rng.random_range(-2.0..2.0));
            let g = evaluate(&d, &layout, &v, true).unwrap().grad.unwrap();
            for k in 0..layout.len {
                let mut e = DVector::zeros(layout.len);
                e[k] = 1e-6;
                let fp = evaluate(&d, &layout, &(&v + &e), false).unwrap().f;
                let fm = evaluate(&d, &layout, &(&v - &e), false).unwrap().f;
                assert_relative_eq!(g[k], (fp - fm) / 2e-6, epsilon = 1e-7, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn optimize_example_ii() {
        let d = presets::example_ii();
        let r = optimize(&d, &OptConfig::default()).unwrap();
        assert_eq!(r.attained_flag, AttainedFlag::Attained);
        assert_relative_eq!(r.ratio, 0.2, max_relative = 1e-6);
        assert_relative_eq!(r.bl_constant * r.bl_constant, r.ratio, max_relative = 1e-12);
    }

    #[test]
    fn optimize_is_deterministic() {
        let d = presets::example_ii();
        let cfg = OptConfig {
            starts: 4,
            seed: 9,
            ..OptConfig::default()
        };
        let a = optimize(&d, &cfg).unwrap();
        let b = optimize(&d, &cfg).unwrap();
        assert_eq!(a.ratio.to_bits(), b.ratio.to_bits());
        assert_eq!(a.best, b.best);
    }

    #[test]
    fn optimize_geometric_examples() {
        for d in [presets::geometric_example_1(3.0), presets::geometric_example_2()] {
            let r = optimize(&d, &OptConfig::default()).unwrap();
            assert_eq!(r.attained_flag, AttainedFlag::Attained);
            assert_relative_eq!(r.ratio, 1.0, max_relative = 1e-6);
        }
    }

    #[test]
    fn optimize_example_i_escapes() {
        let d = presets::example_i();
        let r = optimize(&d, &OptConfig::default()).unwrap();
        assert_eq!(r.attained_flag, AttainedFlag::BoundaryEscape);
        assert!((r.ratio - 0.125).abs() < 1e-6, "{}", r.ratio);
    }

    #[test]
    fn random_spd_bounds_optimize_to_kkt_points() {
        let mut rng = rng_from_seed(5);
        let d = presets::example_ii();
        let q = vec![random_spd(&mut rng, 2, 0.2, 3.0), SymMatrix::diag(&[0.7])];
        let d = d.with_bounds(q).unwrap();
        let r = optimize(&d, &OptConfig::default()).unwrap();
        assert_eq!(r.attained_flag, AttainedFlag::Attained);
    }
}
