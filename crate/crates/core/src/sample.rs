//! Seeded random matrices for probing and property tests.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::SymMatrix;

pub type BlRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> BlRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `index` derived from `seed`.
pub fn substream(seed: u64, index: u64) -> BlRng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index.wrapping_add(1));
    r
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `n × k` matrix with orthonormal columns, Haar distributed.
pub fn random_orthonormal<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, n, k);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    random_orthonormal(rng, n, n)
}

/// SPD matrix with log-uniform eigenvalues in `[lo, hi]` and a Haar eigenbasis.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, n: usize, lo: f64, hi: f64) -> SymMatrix {
    let u = random_orthogonal(rng, n);
    let d: Vec<f64> = (0..n)
        .map(|_| (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp())
        .collect();
    SymMatrix::diag(&d).congruence(&u.transpose())
}

/// PSD matrix of the given rank.
pub fn random_psd<R: Rng + ?Sized>(rng: &mut R, n: usize, rank: usize) -> SymMatrix {
    let g = gaussian_matrix(rng, n, rank);
    SymMatrix::symmetrize(&g * g.transpose())
}
