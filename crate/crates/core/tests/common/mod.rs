//! Seeded generators and property checks shared by the property suites and
//! the acceptance runner. Every check takes a seed and returns a message on
//! failure.

#![allow(dead_code)]

use blforge::caffarelli::gaussian_divergence_check;
use blforge::gauss_opt::{gradient, log_ratio};
use blforge::sample::{gaussian_matrix, random_spd, rng_from_seed, BlRng};
use blforge::verify::{lhs_integral, Term};
use blforge::{
    contraction_bound, conv_inputs, forward_check, gaussian_brenier_hessian, presets, trace_inequality_check, BLDatum,
    FunctionInput, LinearFactor, Method, SymMatrix, VerifyConfig,
};
use nalgebra::DVector;
use rand::Rng;

pub type Check = Result<(), String>;

/// Random datum on `R^n`, `n ≤ 3`, with `𝒬 ≻ 0` so the constant is finite and attained.
pub fn localized_datum(rng: &mut BlRng) -> BLDatum {
    let n = rng.random_range(1..=3);
    let m = rng.random_range(1..=3);
    let factors = (0..m)
        .map(|_| {
            let k = rng.random_range(1..=n);
            let c = gaussian_matrix(rng, k, n);
            let p = rng.random_range(0.25..1.5);
            LinearFactor::new(c, p, random_spd(rng, k, 0.5, 2.0))
        })
        .collect();
    BLDatum::new(n, factors, Some(random_spd(rng, n, 0.2, 1.0))).expect("valid datum")
}

/// `Q^{1/2} R Q^{1/2}` with `R ⪯ I`.
pub fn box_point(rng: &mut BlRng, q: &SymMatrix, lo: f64) -> SymMatrix {
    let r = random_spd(rng, q.dim(), lo, 1.0);
    r.congruence(q.sqrt().expect("SPD").matrix())
}

/// `g_B · Σ c_k e^{⟨a_k,·⟩}` with one or two terms and `B` inside the box of `q`.
pub fn lse_input(rng: &mut BlRng, q: &SymMatrix) -> FunctionInput {
    let b = box_point(rng, q, 0.2);
    let k = rng.random_range(1..=2);
    let terms = (0..k)
        .map(|_| Term {
            c: rng.random_range(0.3..2.0),
            a: gaussian_matrix(rng, q.dim(), 1).column(0).into_owned() * 0.7,
        })
        .collect();
    FunctionInput::new(b, terms).expect("admissible input")
}

pub fn inputs_for(rng: &mut BlRng, d: &BLDatum) -> Vec<FunctionInput> {
    d.factors().iter().map(|f| lse_input(rng, &f.q)).collect()
}

fn quad_config(n: usize) -> VerifyConfig {
    let mut cfg = VerifyConfig::with_method(Method::Quadrature);
    cfg.nodes = if n >= 3 { 20 } else { 48 };
    cfg
}

/// Forward inequality on a random localized datum, constant from the optimizer.
pub fn forward_slack(seed: u64) -> Check {
    let mut rng = rng_from_seed(seed);
    let d = localized_datum(&mut rng);
    let inputs = inputs_for(&mut rng, &d);
    let r = forward_check(&d, &inputs, &quad_config(d.n()), None).map_err(|e| e.to_string())?;
    if r.slack < -r.est_error {
        return Err(format!(
            "seed {seed}: slack {:e} < -est_error {:e}",
            r.slack, r.est_error
        ));
    }
    Ok(())
}

fn j_value(d: &BLDatum, inputs: &[FunctionInput], cfg: &VerifyConfig) -> Result<f64, String> {
    let (lhs, _) = lhs_integral(d, inputs, cfg).map_err(|e| e.to_string())?;
    let masses: f64 = inputs
        .iter()
        .zip(d.factors())
        .map(|(f, fac)| f.mass().powf(fac.p))
        .product();
    Ok(lhs / masses)
}

/// `J(f)·J(g) ≤ BL·J(Conv(f,g))·(1 + 1e−4)` on Example (ii), where `BL = √(1/5)`.
pub fn j_submultiplicative(seed: u64) -> Check {
    let mut rng = rng_from_seed(seed);
    let d = presets::example_ii();
    let bl = 0.2f64.sqrt();
    let cfg = quad_config(d.n());
    let f = inputs_for(&mut rng, &d);
    let g = inputs_for(&mut rng, &d);
    let h = f
        .iter()
        .zip(&g)
        .map(|(a, b)| conv_inputs(a, b))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let (jf, jg, jh) = (j_value(&d, &f, &cfg)?, j_value(&d, &g, &cfg)?, j_value(&d, &h, &cfg)?);
    if jf * jg > bl * jh * (1.0 + 1e-4) {
        return Err(format!(
            "seed {seed}: J(f)J(g) = {:e} > BL·J(Conv) = {:e}",
            jf * jg,
            bl * jh
        ));
    }
    Ok(())
}

/// Analytic `∂F/∂B_j` against central differences with step 1e−5 along a
/// random symmetric direction.
pub fn gradient_matches_fd(seed: u64) -> Check {
    let mut rng = rng_from_seed(seed);
    let d = localized_datum(&mut rng);
    let b: Vec<SymMatrix> = d.factors().iter().map(|f| box_point(&mut rng, &f.q, 0.3)).collect();
    let grad = gradient(&d, &b).map_err(|e| e.to_string())?;
    let dir: Vec<SymMatrix> = d
        .factors()
        .iter()
        .map(|f| {
            let g = gaussian_matrix(&mut rng, f.dim(), f.dim());
            SymMatrix::symmetrize((&g + g.transpose()) * 0.5)
        })
        .collect();
    let h = 1e-5;
    let shifted = |s: f64| -> Vec<SymMatrix> { b.iter().zip(&dir).map(|(bj, e)| bj.add(&e.scale(s))).collect() };
    let fd = (log_ratio(&d, &shifted(h)).map_err(|e| e.to_string())?
        - log_ratio(&d, &shifted(-h)).map_err(|e| e.to_string())?)
        / (2.0 * h);
    let an: f64 = grad
        .iter()
        .zip(&dir)
        .map(|(g, e)| (g.matrix().component_mul(e.matrix())).sum())
        .sum();
    if (fd - an).abs() > 1e-5 * an.abs().max(1.0) {
        return Err(format!(
            "seed {seed}: directional derivative {an:e} vs finite difference {fd:e}"
        ));
    }
    Ok(())
}

/// `Tr(B⁻¹CDC) ≥ Tr(DC)²/Tr(DB)` for random SPD `B` and PSD `C`, `D`.
pub fn trace_inequality(seed: u64) -> Check {
    let mut rng = rng_from_seed(seed);
    let n = rng.random_range(1..=4);
    let b = random_spd(&mut rng, n, 0.1, 10.0);
    let c = random_spd(&mut rng, n, 0.01, 5.0);
    let d = random_spd(&mut rng, n, 0.01, 5.0);
    let slack = trace_inequality_check(&b, &c, &d).map_err(|e| e.to_string())?;
    if slack < -1e-10 {
        return Err(format!("seed {seed}: slack {slack:e}"));
    }
    Ok(())
}

fn spd_pair(seed: u64) -> (SymMatrix, SymMatrix) {
    let mut rng = rng_from_seed(seed);
    let n = rng.random_range(1..=4);
    (random_spd(&mut rng, n, 0.1, 10.0), random_spd(&mut rng, n, 0.1, 10.0))
}

/// The bound equals `B^{-1/2}(B^{1/2}AB^{1/2})^{1/2}B^{-1/2}`.
pub fn contraction_sharpness(seed: u64) -> Check {
    let (a, b) = spd_pair(seed);
    let h = contraction_bound(&a, &b).map_err(|e| e.to_string())?;
    let bh = b.sqrt().map_err(|e| e.to_string())?;
    let mid = a.congruence(bh.matrix()).sqrt().map_err(|e| e.to_string())?;
    let other = mid.congruence(b.inv_sqrt(0.0).map_err(|e| e.to_string())?.matrix());
    let err = (h.matrix() - other.matrix()).norm() / (1.0 + other.matrix().norm());
    if err > 1e-9 {
        return Err(format!("seed {seed}: identity residual {err:e}"));
    }
    Ok(())
}

/// Gaussian Brenier Hessian below the contraction bound in the Loewner order.
pub fn brenier_below_bound(seed: u64) -> Check {
    let (a, b) = spd_pair(seed);
    let h = contraction_bound(&a, &b).map_err(|e| e.to_string())?;
    let x = gaussian_brenier_hessian(&a, &b).map_err(|e| e.to_string())?;
    let slack = h.sub(&x).min_eig() / (1.0 + h.max_eig());
    if slack < -1e-9 {
        return Err(format!("seed {seed}: lambda_min(H - X) = {slack:e}"));
    }
    Ok(())
}

/// `Tr(AH) ≤ √(Tr(AS⁻¹)·Tr(AT))` on random Gaussian source, target and PSD `A`.
pub fn divergence(seed: u64) -> Check {
    let mut rng = rng_from_seed(seed);
    let n = rng.random_range(1..=4);
    let s = random_spd(&mut rng, n, 0.1, 10.0);
    let t = random_spd(&mut rng, n, 0.1, 10.0);
    let a = random_spd(&mut rng, n, 0.01, 5.0);
    let r = gaussian_divergence_check(&s, &t, &a).map_err(|e| e.to_string())?;
    if r.slack < -1e-10 * (1.0 + r.bound) {
        return Err(format!(
            "seed {seed}: Tr(AH) = {:e} exceeds bound {:e}",
            r.value, r.bound
        ));
    }
    Ok(())
}

pub fn drift(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
