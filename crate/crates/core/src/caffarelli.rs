//! Anisotropic Caffarelli-type contraction bounds and the small matrix
//! inequalities around them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{SymMatrix, EIG_FLOOR, PSD_TOL};

/// Residual tolerance for the defining matrix equations.
pub const EQUATION_TOL: f64 = 1e-9;

fn require_spd(name: &str, m: &SymMatrix) -> Result<()> {
    if !m.is_spd(EIG_FLOOR) {
        return Err(Error::NotSPD(format!(
            "{name} has minimum eigenvalue {:e}",
            m.min_eig()
        )));
    }
    Ok(())
}

fn require_psd(name: &str, m: &SymMatrix) -> Result<()> {
    if !m.is_psd(PSD_TOL * (1.0 + m.amax())) {
        return Err(Error::NotPSD(format!(
            "{name} has minimum eigenvalue {:e}",
            m.min_eig()
        )));
    }
    Ok(())
}

fn same_dim(a: &SymMatrix, b: &SymMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.dim(),
            a.dim(),
            b.dim(),
            b.dim()
        )));
    }
    Ok(())
}

fn rel_residual(got: &DMatrix<f64>, want: &DMatrix<f64>) -> f64 {
    (got - want).norm() / (1.0 + want.norm())
}

/// `A^{1/2}(A^{1/2}BA^{1/2})^{-1/2}A^{1/2}`, the bound on the Hessian of the
/// Brenier potential when `∇²V ⪯ A` and `∇²W ⪰ B`. Solves `HBH = A`.
pub fn contraction_bound(a: &SymMatrix, b: &SymMatrix) -> Result<SymMatrix> {
    require_spd("A", a)?;
    require_spd("B", b)?;
    same_dim(a, b)?;
    let ah = a.sqrt()?;
    let k = b.congruence(ah.matrix());
    let h = k.inv_sqrt(0.0)?.congruence(ah.matrix());
    let res = rel_residual(&(h.matrix() * b.matrix() * h.matrix()), a.matrix());
    if res > EQUATION_TOL {
        return Err(Error::NumericalBreakdown(format!("HBH = A residual {res:e}")));
    }
    Ok(h)
}

/// Hessian of the Brenier potential pushing `N(0, A⁻¹)` to `N(0, B⁻¹)`: the
/// SPD solution of `X A⁻¹ X = B⁻¹`, computed as
/// `Σ₀^{-1/2}(Σ₀^{1/2}Σ₁Σ₀^{1/2})^{1/2}Σ₀^{-1/2}` with `Σ₀ = A⁻¹`, `Σ₁ = B⁻¹`.
pub fn gaussian_brenier_hessian(a: &SymMatrix, b: &SymMatrix) -> Result<SymMatrix> {
    require_spd("A", a)?;
    require_spd("B", b)?;
    same_dim(a, b)?;
    let s0 = a.inverse_spd()?;
    let s1 = b.inverse_spd()?;
    let r0 = s0.sqrt()?;
    let mid = s1.congruence(r0.matrix()).sqrt()?;
    let x = mid.congruence(s0.inv_sqrt(0.0)?.matrix());
    let res = rel_residual(&(x.matrix() * s0.matrix() * x.matrix()), s1.matrix());
    if res > EQUATION_TOL {
        return Err(Error::NumericalBreakdown(format!("XA⁻¹X = B⁻¹ residual {res:e}")));
    }
    Ok(x)
}

/// One-dimensional potential `quad·x² + logcosh·log cosh x + lin·x`; the
/// measure has density proportional to `e^{−V}`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Potential1D {
    pub quad: f64,
    pub logcosh: f64,
    pub lin: f64,
}

fn log_cosh(x: f64) -> f64 {
    let y = x.abs();
    y + (-2.0 * y).exp().ln_1p() - std::f64::consts::LN_2
}

impl Potential1D {
    pub fn quadratic(quad: f64) -> Self {
        Potential1D {
            quad,
            ..Default::default()
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.quad * x * x + self.logcosh * log_cosh(x) + self.lin * x
    }

    /// `sup V″`, using `sech² ∈ (0, 1]`.
    pub fn max_curvature(&self) -> f64 {
        2.0 * self.quad + self.logcosh.max(0.0)
    }

    /// `inf V″`.
    pub fn min_curvature(&self) -> f64 {
        2.0 * self.quad + self.logcosh.min(0.0)
    }
}

/// Evaluation grid `[−r, r]` with `points` equally spaced nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub r: f64,
    pub points: usize,
}

impl Default for Grid1D {
    fn default() -> Self {
        Grid1D { r: 2.0, points: 401 }
    }
}

/// Input for the contraction problem as read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionProblem {
    #[serde(rename = "A")]
    pub a: SymMatrix,
    #[serde(rename = "B")]
    pub b: SymMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Potential1D>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<Potential1D>,
}

/// Normalized CDF table of `e^{−V}`.
struct CdfTable {
    x: Vec<f64>,
    cdf: Vec<f64>,
    max_density: f64,
}

const TAIL_LOG: f64 = 32.236_191_301_916_64; // ln 1e14
const MAX_TABLE: usize = 1 << 20;

impl CdfTable {
    fn build(v: &Potential1D) -> Result<Self> {
        if v.quad <= 0.0 {
            return Err(Error::InvalidParams(
                "potential needs a positive quadratic coefficient".into(),
            ));
        }
        // Mode of the quadratic part; log cosh shifts it by a bounded amount.
        let center = golden_min(
            |x| v.eval(x),
            -v.lin / (2.0 * v.quad) - 50.0,
            -v.lin / (2.0 * v.quad) + 50.0,
        );
        let vmin = v.eval(center);
        let reach = |dir: f64| {
            let mut l = 0.5;
            while v.eval(center + dir * l) - vmin <= TAIL_LOG {
                l *= 1.5;
            }
            center + dir * l
        };
        let (lo, hi) = (reach(-1.0), reach(1.0));
        let dens = |x: f64| (vmin - v.eval(x)).exp();
        // Fine enough that linear interpolation in the table is below 1e−8.
        let mut n = 65537;
        let mut prev_total = f64::NAN;
        loop {
            let h = (hi - lo) / (n - 1) as f64;
            let x: Vec<f64> = (0..n).map(|i| lo + i as f64 * h).collect();
            let d: Vec<f64> = x.iter().map(|&t| dens(t)).collect();
            let mut cdf = Vec::with_capacity(n);
            cdf.push(0.0);
            for i in 1..n {
                cdf.push(cdf[i - 1] + 0.5 * h * (d[i - 1] + d[i]));
            }
            let total = cdf[n - 1];
            let converged = (total - prev_total).abs() <= 1e-12 * total;
            if converged || 2 * n - 1 > MAX_TABLE {
                let simpson_total = simpson(&d, h);
                let mismatch = (simpson_total / total - 1.0).abs();
                if mismatch > 1e-8 {
                    return Err(Error::MassMismatch(mismatch));
                }
                let max_density = d.iter().cloned().fold(0.0, f64::max) / total;
                cdf.iter_mut().for_each(|c| *c /= total);
                return Ok(CdfTable { x, cdf, max_density });
            }
            prev_total = total;
            n = 2 * n - 1;
        }
    }

    fn eval(&self, t: f64) -> f64 {
        if t <= self.x[0] {
            return 0.0;
        }
        if t >= self.x[self.x.len() - 1] {
            return 1.0;
        }
        let h = self.x[1] - self.x[0];
        let i = (((t - self.x[0]) / h) as usize).min(self.x.len() - 2);
        let w = (t - self.x[i]) / h;
        self.cdf[i] * (1.0 - w) + self.cdf[i + 1] * w
    }

    /// Generalized inverse by binary search on the monotone table.
    fn inverse(&self, u: f64) -> f64 {
        let i = self.cdf.partition_point(|&c| c < u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let w = if c1 > c0 {
            ((u - c0) / (c1 - c0)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        self.x[i - 1] + w * (self.x[i] - self.x[i - 1])
    }
}

fn simpson(d: &[f64], h: f64) -> f64 {
    // Tables have an odd number of points by construction.
    let n = d.len();
    let mut s = d[0] + d[n - 1];
    for (i, v) in d.iter().enumerate().take(n - 1).skip(1) {
        s += v * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let x1 = hi - r * (hi - lo);
        let x2 = lo + r * (hi - lo);
        if f(x1) < f(x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Brenier1D {
    pub x: Vec<f64>,
    /// `T(x) = Φ′(x)`.
    pub t: Vec<f64>,
    pub max_second_diff: f64,
    pub bound: f64,
    pub grid_tol: f64,
    pub monotone: bool,
    pub within_bound: bool,
}

/// Monotone transport `T = F_ν⁻¹ ∘ F_μ` between `e^{−V}` and `e^{−W}` on a
/// grid, compared with `√(sup V″ / inf W″)`.
pub fn brenier_1d(mu: &Potential1D, nu: &Potential1D, grid: &Grid1D) -> Result<Brenier1D> {
    if grid.points < 3 || !(grid.r > 0.0) {
        return Err(Error::InvalidParams("grid needs r > 0 and at least 3 points".into()));
    }
    let b = nu.min_curvature();
    if b <= 0.0 {
        return Err(Error::InvalidParams(format!(
            "target potential is not uniformly convex (W'' >= {b})"
        )));
    }
    let bound = (mu.max_curvature() / b).sqrt();
    let fmu = CdfTable::build(mu)?;
    let fnu = CdfTable::build(nu)?;
    let h = 2.0 * grid.r / (grid.points - 1) as f64;
    let x: Vec<f64> = (0..grid.points).map(|i| -grid.r + i as f64 * h).collect();
    let t: Vec<f64> = x.iter().map(|&s| fnu.inverse(fmu.eval(s))).collect();
    // Centered second difference of Φ = ∫T reduces to (T_{i+1} − T_{i−1}) / 2h.
    let max_second_diff = (1..grid.points - 1)
        .map(|i| (t[i + 1] - t[i - 1]) / (2.0 * h))
        .fold(f64::NEG_INFINITY, f64::max);
    let monotone = t.windows(2).all(|w| w[1] >= w[0]);
    let grid_tol = 2.0 * fmu.max_density.max(fnu.max_density) * h;
    Ok(Brenier1D {
        within_bound: max_second_diff <= bound + grid_tol,
        x,
        t,
        max_second_diff,
        bound,
        grid_tol,
        monotone,
    })
}

/// `√(α · Tr(AG))`.
pub fn divergence_bound(alpha: f64, a: &SymMatrix, g: &SymMatrix) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParams(format!("alpha must be positive, got {alpha}")));
    }
    require_psd("A", a)?;
    require_spd("G", g)?;
    same_dim(a, g)?;
    Ok((alpha * (a.matrix() * g.matrix()).trace()).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DivergenceCheck {
    /// `Tr(AH)` for the Gaussian Brenier Hessian `H`.
    pub value: f64,
    pub bound: f64,
    pub slack: f64,
}

/// Gaussian instance of the divergence bound: source `N(0,S)`, target
/// `N(0,T)`, `α = Tr(AS⁻¹)` and `G = T`.
pub fn gaussian_divergence_check(s: &SymMatrix, t: &SymMatrix, a: &SymMatrix) -> Result<DivergenceCheck> {
    let s_inv = s.inverse_spd()?;
    let h = gaussian_brenier_hessian(&s_inv, &t.inverse_spd()?)?;
    let alpha = (a.matrix() * s_inv.matrix()).trace();
    let value = (a.matrix() * h.matrix()).trace();
    let bound = if alpha > 0.0 {
        divergence_bound(alpha, a, t)?
    } else {
        0.0
    };
    Ok(DivergenceCheck {
        value,
        bound,
        slack: bound - value,
    })
}

/// `Tr(B⁻¹CDC) − Tr(DC)² / Tr(DB)`, nonnegative by Cauchy–Schwarz.
pub fn trace_inequality_check(b: &SymMatrix, c: &SymMatrix, d: &SymMatrix) -> Result<f64> {
    require_spd("B", b)?;
    require_psd("C", c)?;
    require_psd("D", d)?;
    same_dim(b, c)?;
    same_dim(b, d)?;
    let denom = (d.matrix() * b.matrix()).trace();
    if denom <= 1e-300 || !denom.is_finite() {
        return Err(Error::DegenerateDenominator(denom));
    }
    let binv = b.inverse_spd()?;
    let lhs = (binv.matrix() * c.matrix() * d.matrix() * c.matrix()).trace();
    let dc = (d.matrix() * c.matrix()).trace();
    Ok(lhs - dc * dc / denom)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoulombFactor {
    #[serde(rename = "A")]
    pub a: SymMatrix,
    #[serde(rename = "G")]
    pub g: SymMatrix,
    pub alpha: f64,
}

/// `√((Σ α_i) · Σ Tr(A_iG_i))` for 2×2 factors.
pub fn coulomb_bound(factors: &[CoulombFactor]) -> Result<f64> {
    if factors.is_empty() {
        return Err(Error::EmptyList);
    }
    let mut alpha = 0.0;
    let mut tr = 0.0;
    for f in factors {
        if f.a.dim() != 2 || f.g.dim() != 2 {
            return Err(Error::DimensionMismatch("Coulomb factors are 2x2".into()));
        }
        if !(f.alpha > 0.0) {
            return Err(Error::InvalidParams(format!("alpha must be positive, got {}", f.alpha)));
        }
        require_psd("A", &f.a)?;
        require_spd("G", &f.g)?;
        alpha += f.alpha;
        tr += (f.a.matrix() * f.g.matrix()).trace();
    }
    Ok((alpha * tr).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::{random_psd, random_spd, rng_from_seed};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn close(a: &SymMatrix, b: &SymMatrix, tol: f64) -> bool {
        (a.matrix() - b.matrix()).norm() <= tol * (1.0 + b.matrix().norm())
    }

    #[test]
    fn contraction_examples() {
        let i = SymMatrix::identity(3);
        assert!(close(&contraction_bound(&i, &i).unwrap(), &i, 1e-12));
        let a = SymMatrix::diag(&[4.0, 1.0]);
        let b = SymMatrix::diag(&[1.0, 4.0]);
        let want = SymMatrix::diag(&[2.0, 0.5]);
        assert!(close(&contraction_bound(&a, &b).unwrap(), &want, 1e-12));
        assert!(close(&gaussian_brenier_hessian(&a, &b).unwrap(), &want, 1e-12));
        let h = contraction_bound(&SymMatrix::scaled_identity(2, 3.0), &SymMatrix::scaled_identity(2, 5.0)).unwrap();
        assert!(close(&h, &SymMatrix::scaled_identity(2, (3.0f64 / 5.0).sqrt()), 1e-12));
        assert!(matches!(
            contraction_bound(&SymMatrix::diag(&[1.0, -1.0]), &i),
            Err(Error::NotSPD(_))
        ));
    }

    #[test]
    fn sharpness_on_random_pairs() {
        let mut rng = rng_from_seed(11);
        for _ in 0..200 {
            let d = rng.random_range(1..=6);
            let a = random_spd(&mut rng, d, 0.2, 5.0);
            let b = random_spd(&mut rng, d, 0.2, 5.0);
            let x = gaussian_brenier_hessian(&a, &b).unwrap();
            let h = contraction_bound(&a, &b).unwrap();
            assert!(close(&x, &h, 1e-8));
            // The symmetric form from the other side.
            let bh = b.sqrt().unwrap();
            let alt = b.inv_sqrt(0.0).unwrap();
            let mid = a.congruence(bh.matrix()).sqrt().unwrap();
            let other = mid.congruence(alt.matrix());
            assert!(close(&other, &h, 1e-9));
        }
    }

    #[test]
    fn brenier_gaussian_cases() {
        let g = Grid1D::default();
        let pi = std::f64::consts::PI;
        let same = brenier_1d(&Potential1D::quadratic(pi), &Potential1D::quadratic(pi), &g).unwrap();
        assert!(same.monotone && same.within_bound);
        for (x, t) in same.x.iter().zip(&same.t) {
            assert!((x - t).abs() < 1e-6);
        }
        assert_relative_eq!(same.max_second_diff, 1.0, epsilon = 1e-4);

        let half = brenier_1d(&Potential1D::quadratic(pi), &Potential1D::quadratic(2.0 * pi), &g).unwrap();
        for (x, t) in half.x.iter().zip(&half.t) {
            assert!((x / 2f64.sqrt() - t).abs() < 1e-6);
        }
        assert_relative_eq!(half.bound, 0.5f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(half.max_second_diff, 0.5f64.sqrt(), epsilon = 1e-4);
        assert!(half.within_bound);
    }

    #[test]
    fn brenier_log_cosh_source() {
        let pi = std::f64::consts::PI;
        let mu = Potential1D {
            quad: pi,
            logcosh: 1.0,
            lin: 0.0,
        };
        let r = brenier_1d(&mu, &Potential1D::quadratic(2.0 * pi), &Grid1D::default()).unwrap();
        let bound = ((2.0 * pi + 1.0) / (4.0 * pi)).sqrt();
        assert_relative_eq!(r.bound, bound, epsilon = 1e-12);
        assert!(r.monotone);
        assert!(r.max_second_diff <= bound + 1e-3, "{} vs {bound}", r.max_second_diff);
    }

    #[test]
    fn brenier_shifted_target() {
        let pi = std::f64::consts::PI;
        // e^{−π(x−1)²} shifts the map by one.
        let nu = Potential1D {
            quad: pi,
            logcosh: 0.0,
            lin: -2.0 * pi,
        };
        let r = brenier_1d(&Potential1D::quadratic(pi), &nu, &Grid1D::default()).unwrap();
        for (x, t) in r.x.iter().zip(&r.t) {
            assert!((x + 1.0 - t).abs() < 1e-6);
        }
        assert!(brenier_1d(
            &Potential1D::quadratic(pi),
            &Potential1D::quadratic(-1.0),
            &Grid1D::default()
        )
        .is_err());
    }

    #[test]
    fn divergence_examples() {
        assert_relative_eq!(
            divergence_bound(1.0, &SymMatrix::identity(3), &SymMatrix::identity(3)).unwrap(),
            3f64.sqrt()
        );
        let i = SymMatrix::identity(4);
        let c = gaussian_divergence_check(&i, &i, &i).unwrap();
        assert_relative_eq!(c.value, 4.0, epsilon = 1e-12);
        assert_relative_eq!(c.bound, 4.0, epsilon = 1e-12);
        assert!(matches!(
            divergence_bound(1.0, &SymMatrix::diag(&[-1.0, 0.0]), &SymMatrix::identity(2)),
            Err(Error::NotPSD(_))
        ));
        assert!(divergence_bound(0.0, &i, &i).is_err());
    }

    #[test]
    fn divergence_random_gaussians() {
        let mut rng = rng_from_seed(5);
        for _ in 0..100 {
            let d = rng.random_range(1..=5);
            let s = random_spd(&mut rng, d, 0.2, 4.0);
            let t = random_spd(&mut rng, d, 0.2, 4.0);
            let rank = rng.random_range(1..=d);
            let a = random_psd(&mut rng, d, rank);
            let c = gaussian_divergence_check(&s, &t, &a).unwrap();
            assert!(c.slack >= -1e-9 * (1.0 + c.bound), "{c:?}");
        }
    }

    #[test]
    fn trace_inequality_examples() {
        let i = SymMatrix::identity(2);
        assert_relative_eq!(trace_inequality_check(&i, &i, &i).unwrap(), 0.0, epsilon = 1e-14);
        let two = SymMatrix::scaled_identity(2, 2.0);
        assert_relative_eq!(trace_inequality_check(&two, &i, &i).unwrap(), 0.0, epsilon = 1e-14);
        assert!(matches!(
            trace_inequality_check(&i, &i, &SymMatrix::zeros(2)),
            Err(Error::DegenerateDenominator(_))
        ));
        let mut rng = rng_from_seed(2);
        for _ in 0..1000 {
            let n = rng.random_range(1..=5);
            let b = random_spd(&mut rng, n, 0.1, 5.0);
            let (rc, rd) = (rng.random_range(1..=n), rng.random_range(1..=n));
            let c = random_psd(&mut rng, n, rc);
            let d = random_psd(&mut rng, n, rd);
            match trace_inequality_check(&b, &c, &d) {
                Ok(s) => assert!(s >= -1e-10, "{s}"),
                Err(Error::DegenerateDenominator(_)) => {}
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn coulomb_examples() {
        let f = |a: SymMatrix, g: SymMatrix, alpha: f64| CoulombFactor { a, g, alpha };
        let i = SymMatrix::identity(2);
        assert_relative_eq!(coulomb_bound(&[f(i.clone(), i.clone(), 1.0)]).unwrap(), 2f64.sqrt());
        let many: Vec<CoulombFactor> = (0..7).map(|_| f(i.clone(), i.clone(), 1.0)).collect();
        assert_relative_eq!(coulomb_bound(&many).unwrap(), 7.0 * 2f64.sqrt(), max_relative = 1e-14);
        let mixed = [
            f(
                SymMatrix::diag(&[2.0, 0.0]),
                SymMatrix::from_rows(&[vec![1.0, 0.3], vec![0.3, 2.0]]).unwrap(),
                0.5,
            ),
            f(
                SymMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap(),
                SymMatrix::diag(&[3.0, 0.5]),
                2.0,
            ),
        ];
        // Σα = 2.5, traces 2 and 3.5.
        assert_relative_eq!(
            coulomb_bound(&mixed).unwrap(),
            (2.5f64 * 5.5).sqrt(),
            max_relative = 1e-14
        );
        assert!(matches!(coulomb_bound(&[]), Err(Error::EmptyList)));
        assert!(coulomb_bound(&[f(SymMatrix::identity(3), SymMatrix::identity(3), 1.0)]).is_err());
    }

    #[test]
    fn problem_json_round_trip() {
        let text = r#"{"A": [[2, 0], [0, 1]], "B": [[1, 0], [0, 1]], "mu": {"quad": 3}}"#;
        let p: ContractionProblem = serde_json::from_str(text).unwrap();
        assert_eq!(
            p.mu,
            Some(Potential1D {
                quad: 3.0,
                logcosh: 0.0,
                lin: 0.0
            })
        );
        assert_eq!(p.nu, None);
        let back: ContractionProblem = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }
}
