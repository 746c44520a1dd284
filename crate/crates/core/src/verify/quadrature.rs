//! Gauss–Hermite tensor quadrature and importance-sampled Monte Carlo for
//! integrals `∫ e^{φ(x)} dx` whose integrand is close to a known Gaussian
//! envelope `e^{−π⟨A(x−μ),x−μ⟩}`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::sample::rng_from_seed;

pub const MAX_QUAD_DIM: usize = 3;

/// Nodes and weights for `∫ h(z) e^{−z²} dz` via Golub–Welsch.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let off = (k as f64 / 2.0).sqrt();
        j[(k, k - 1)] = off;
        j[(k - 1, k)] = off;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

type Rule = Arc<(Vec<f64>, Vec<f64>)>;

fn cached_rule(n: usize) -> Rule {
    static CACHE: OnceLock<Mutex<HashMap<usize, Rule>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("rule cache poisoned");
    map.entry(n).or_insert_with(|| Arc::new(gauss_hermite(n))).clone()
}

/// Gaussian envelope `e^{−π⟨A(x−μ),x−μ⟩}` used to place nodes.
#[derive(Clone, Debug)]
pub struct Envelope {
    pub a: SymMatrix,
    pub mu: DVector<f64>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `log ∫ e^{φ(x)} dx` on a tensor rule with `nodes` points per axis.
pub fn log_integrate_gh<F>(phi: &F, env: &Envelope, nodes: usize) -> Result<f64>
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
{
    let n = env.mu.len();
    if n > MAX_QUAD_DIM {
        return Err(Error::DimensionTooLarge { n, max: MAX_QUAD_DIM });
    }
    let rule = cached_rule(nodes);
    let (z, w) = (&rule.0, &rule.1);
    // x = μ + T z with T = (πA)^{-1/2} turns the envelope into e^{−|z|²}.
    let t = env.a.scale(std::f64::consts::PI).inv_sqrt(1e-300)?;
    let log_jac = -0.5
        * env
            .a
            .scale(std::f64::consts::PI)
            .log_det_spd()
            .ok_or(Error::SingularA)?;
    let total = nodes.pow(n as u32);
    let chunks: Vec<f64> = (0..nodes)
        .into_par_iter()
        .map(|first| {
            let inner = total / nodes;
            let mut logs = Vec::with_capacity(inner);
            let mut zi = DVector::zeros(n);
            for rest in 0..inner {
                let mut idx = first * inner + rest;
                let mut lw = 0.0;
                let mut zz = 0.0;
                for d in (0..n).rev() {
                    let k = idx % nodes;
                    idx /= nodes;
                    zi[d] = z[k];
                    lw += w[k].ln();
                    zz += z[k] * z[k];
                }
                let x = &env.mu + t.matrix() * &zi;
                logs.push(lw + zz + phi(&x));
            }
            log_sum_exp(&logs)
        })
        .collect();
    Ok(log_sum_exp(&chunks) + log_jac)
}

/// Value and error estimate from doubling the node count.
pub fn integrate_gh<F>(phi: &F, env: &Envelope, nodes: usize) -> Result<(f64, f64)>
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
{
    let coarse = log_integrate_gh(phi, env, nodes)?.exp();
    let fine = log_integrate_gh(phi, env, 2 * nodes)?.exp();
    Ok((fine, (fine - coarse).abs() + 1e-12 * fine.abs()))
}

/// Importance sampling from the envelope; error is three standard errors.
pub fn integrate_mc<F>(phi: &F, env: &Envelope, samples: usize, seed: u64) -> Result<(f64, f64)>
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
{
    let n = env.mu.len();
    let samples = samples.max(2);
    // x = μ + (2πA)^{-1/2} ξ has density det(A)^{1/2} e^{−π⟨A(x−μ),x−μ⟩}.
    let t = env.a.scale(2.0 * std::f64::consts::PI).inv_sqrt(1e-300)?;
    let half_logdet = 0.5 * env.a.log_det_spd().ok_or(Error::SingularA)?;
    let mut rng = rng_from_seed(seed);
    let xi: Vec<DVector<f64>> = (0..samples)
        .map(|_| DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let vals: Vec<f64> = xi
        .par_iter()
        .map(|x| {
            let pt = &env.mu + t.matrix() * x;
            (phi(&pt) + 0.5 * x.norm_squared() - half_logdet).exp()
        })
        .collect();
    let k = samples as f64;
    let mean = vals.iter().sum::<f64>() / k;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
    Ok((mean, 3.0 * (var / k).sqrt()))
}
