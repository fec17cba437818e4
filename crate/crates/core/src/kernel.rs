//! Covariances of the Riemann–Liouville kernel system and exact joint
//! Gaussian sampling by Cholesky factorization.
//!
//! All coordinates are linear functionals of a single Brownian motion W:
//! the fBm value W^H_t = ∫₀ᵗ (t−s)^{H−½} dW_s, the forward integral
//! Z_r = ∫₀^T (r−s)^{H−½} dW_s for r ≥ T, and W_t itself.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quadrature;
use crate::rng;

/// Hurst exponent with the derived shifts H ± 1/2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelSpec {
    hurst: f64,
}

impl KernelSpec {
    pub fn new(hurst: f64) -> Result<Self> {
        if !(hurst > 0.0 && hurst <= 0.5) {
            return Err(Error::param("hurst", format!("must lie in (0, 1/2], got {hurst}")));
        }
        Ok(KernelSpec { hurst })
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    /// H + 1/2
    pub fn hp(&self) -> f64 {
        self.hurst + 0.5
    }

    /// H − 1/2
    pub fn hm(&self) -> f64 {
        self.hurst - 0.5
    }
}

const REL_TOL: f64 = 1e-13;

// ∫₀^T (r1−u)^{Hm}(r2−u)^{Hm} du with T ≤ min(r1, r2).
fn forward_cov(spec: KernelSpec, horizon: f64, r1: f64, r2: f64) -> f64 {
    let (r1, r2) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
    if horizon <= 0.0 {
        return 0.0;
    }
    let h = spec.hurst();
    if h == 0.5 {
        return horizon;
    }
    let d = r2 - r1;
    if d <= r1 * 1e-15 {
        let two_h = 2.0 * h;
        return (r1.powf(two_h) - (r1 - horizon).max(0.0).powf(two_h)) / two_h;
    }
    // x = r1 − u, x = w^{1/Hp}: the x^{Hm} factor is absorbed by dx.
    let (hp, hm) = (spec.hp(), spec.hm());
    let lo = (r1 - horizon).max(0.0).powf(hp);
    let hi = r1.powf(hp);
    let inv = 1.0 / hp;
    let res = quadrature::integrate(
        |w: f64| (w.max(0.0).powf(inv) + d).powf(hm),
        lo,
        hi,
        1e-300,
        REL_TOL,
        4000,
    );
    res.value / hp
}

// ∫₀^m (r−s)^{Hm} ds with m ≤ r.
fn cross_cov(spec: KernelSpec, r: f64, m: f64) -> f64 {
    if m <= 0.0 {
        return 0.0;
    }
    let hp = spec.hp();
    (r.powf(hp) - (r - m).max(0.0).powf(hp)) / hp
}

/// Cov(W^H_t, W^H_s) = ∫₀^{min(t,s)} (t−u)^{H−½}(s−u)^{H−½} du.
pub fn cov_rl_fbm(hurst: f64, t: f64, s: f64) -> Result<f64> {
    let spec = KernelSpec::new(hurst)?;
    check_time("t", t)?;
    check_time("s", s)?;
    Ok(forward_cov(spec, t.min(s), t, s))
}

/// Cov(Z_{r1}, Z_{r2}) for Z_r = ∫₀^T (r−u)^{H−½} dW_u, r1, r2 ≥ T.
pub fn cov_forward_integral(hurst: f64, horizon: f64, r1: f64, r2: f64) -> Result<f64> {
    let spec = KernelSpec::new(hurst)?;
    if !(horizon > 0.0) {
        return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
    }
    if !(r1 >= horizon && r2 >= horizon) {
        return Err(Error::Domain(format!(
            "forward dates ({r1}, {r2}) must not precede the horizon {horizon}"
        )));
    }
    Ok(forward_cov(spec, horizon, r1, r2))
}

/// Cov(W^H_t, W_u) = [t^{Hp} − (t − min(t,u))^{Hp}] / Hp.
pub fn cov_cross(hurst: f64, t: f64, u: f64) -> Result<f64> {
    let spec = KernelSpec::new(hurst)?;
    check_time("t", t)?;
    check_time("u", u)?;
    Ok(cross_cov(spec, t, t.min(u)))
}

fn check_time(name: &'static str, t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("time must be finite and non-negative, got {t}")))
    }
}

/// One Gaussian coordinate driven by a single Brownian factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Coordinate {
    /// W^H_t
    Fbm { t: f64 },
    /// W_t
    Brownian { t: f64 },
    /// ∫₀^horizon (r−s)^{H−½} dW_s
    Forward { horizon: f64, r: f64 },
}

impl Coordinate {
    // Every coordinate is ∫₀^{horizon} k(s) dW_s; returns (horizon, r) with
    // r = None for the flat kernel of W itself.
    fn parts(&self) -> (f64, Option<f64>) {
        match *self {
            Coordinate::Fbm { t } => (t, Some(t)),
            Coordinate::Brownian { t } => (t, None),
            Coordinate::Forward { horizon, r } => (horizon, Some(r)),
        }
    }
}

/// Coordinates of one simulation scheme.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeDescriptor {
    pub hurst: f64,
    pub coordinates: Vec<Coordinate>,
}

impl SchemeDescriptor {
    /// fBm values followed by Brownian values on the same grid.
    pub fn spx(hurst: f64, grid: &[f64]) -> Self {
        let mut coordinates: Vec<Coordinate> = grid.iter().map(|&t| Coordinate::Fbm { t }).collect();
        coordinates.extend(grid.iter().map(|&t| Coordinate::Brownian { t }));
        SchemeDescriptor { hurst, coordinates }
    }

    /// Forward integrals observed at `maturity` for each node.
    pub fn vix(hurst: f64, maturity: f64, nodes: &[f64]) -> Self {
        SchemeDescriptor {
            hurst,
            coordinates: nodes
                .iter()
                .map(|&r| Coordinate::Forward { horizon: maturity, r })
                .collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        for c in &self.coordinates {
            match *c {
                Coordinate::Fbm { t } if !(t > 0.0 && t.is_finite()) => {
                    return Err(Error::Domain(format!("fBm coordinate needs t > 0, got {t}")))
                }
                Coordinate::Brownian { t } if !(t >= 0.0 && t.is_finite()) => {
                    return Err(Error::Domain(format!("Brownian coordinate needs t ≥ 0, got {t}")))
                }
                Coordinate::Forward { horizon, r } if !(horizon > 0.0 && r >= horizon && r.is_finite()) => {
                    return Err(Error::Domain(format!(
                        "forward coordinate needs r ≥ horizon > 0, got horizon {horizon}, r {r}"
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Covariance between two coordinates of the same factor.
pub fn coordinate_cov(spec: KernelSpec, a: &Coordinate, b: &Coordinate) -> f64 {
    let (ha, ra) = a.parts();
    let (hb, rb) = b.parts();
    let m = ha.min(hb);
    match (ra, rb) {
        (None, None) => m,
        (Some(r), None) | (None, Some(r)) => cross_cov(spec, r, m),
        (Some(r1), Some(r2)) => forward_cov(spec, m, r1, r2),
    }
}

/// Covariance matrix with its lower Cholesky factor.
#[derive(Debug, Clone)]
pub struct GaussianSystem {
    labels: Vec<Coordinate>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    // row-major packed lower triangle of `chol`
    packed: Vec<f64>,
    jitter: f64,
    min_eigenvalue: f64,
}

const MAX_JITTER: f64 = 1e-8;

impl GaussianSystem {
    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[Coordinate] {
        &self.labels
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// Diagonal jitter added before factorization, relative to the largest variance.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Smallest eigenvalue of the unregularized covariance.
    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    /// `out = chol · z`
    #[inline]
    pub fn transform(&self, z: &[f64], out: &mut [f64]) {
        let n = self.dim();
        debug_assert!(z.len() >= n && out.len() >= n);
        let mut start = 0;
        for i in 0..n {
            let row = &self.packed[start..start + i + 1];
            out[i] = row.iter().zip(&z[..=i]).map(|(l, z)| l * z).sum();
            start += i + 1;
        }
    }

    /// `n` draws, one per row, from stream `(seed, stream)`.
    pub fn sample(&self, seed: u64, stream: u64, n: usize) -> DMatrix<f64> {
        let d = self.dim();
        let mut out = DMatrix::zeros(n, d);
        let mut rng = rng::stream(seed, stream);
        let mut z = vec![0.0; d];
        let mut x = vec![0.0; d];
        for row in 0..n {
            rng::fill_normals(&mut rng, &mut z);
            self.transform(&z, &mut x);
            for (j, v) in x.iter().enumerate() {
                out[(row, j)] = *v;
            }
        }
        out
    }
}

/// Assembles and factors the covariance of the descriptor's coordinates.
pub fn build_system(desc: &SchemeDescriptor) -> Result<GaussianSystem> {
    let spec = KernelSpec::new(desc.hurst)?;
    desc.validate()?;
    let n = desc.coordinates.len();
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let c = coordinate_cov(spec, &desc.coordinates[i], &desc.coordinates[j]);
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    let min_eigenvalue = if n == 0 {
        0.0
    } else {
        cov.clone().symmetric_eigenvalues().min()
    };
    let max_diag = (0..n).map(|i| cov[(i, i)]).fold(0.0, f64::max);
    let mut rel_jitter = 0.0;
    loop {
        if let Some(chol) = cholesky_psd(&cov, rel_jitter * max_diag) {
            let mut packed = Vec::with_capacity(n * (n + 1) / 2);
            for i in 0..n {
                for j in 0..=i {
                    packed.push(chol[(i, j)]);
                }
            }
            return Ok(GaussianSystem {
                labels: desc.coordinates.clone(),
                cov,
                chol,
                packed,
                jitter: rel_jitter,
                min_eigenvalue,
            });
        }
        rel_jitter = if rel_jitter == 0.0 { 1e-12 } else { rel_jitter * 10.0 };
        if rel_jitter > MAX_JITTER * (1.0 + 1e-9) {
            return Err(Error::Numerical(format!(
                "Cholesky factorization failed for a {n}×{n} covariance \
                 (max diagonal {max_diag:e}, min eigenvalue {min_eigenvalue:e}) \
                 even with jitter {MAX_JITTER:e}·max diagonal"
            )));
        }
    }
}

// Cholesky that keeps exact zero pivots of semi-definite matrices.
fn cholesky_psd(a: &DMatrix<f64>, jitter: f64) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    let max_diag = (0..n).map(|i| a[(i, i)]).fold(0.0, f64::max);
    let tol = 1e-14 * max_diag.max(f64::MIN_POSITIVE);
    for j in 0..n {
        let mut d = a[(j, j)] + jitter;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d > tol {
            let ljj = d.sqrt();
            l[(j, j)] = ljj;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        } else if d >= -tol {
            // Column j is a combination of earlier ones; the remaining
            // off-diagonal residuals must vanish as well.
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                let scale = (a[(i, i)] * a[(j, j)]).sqrt().max(f64::MIN_POSITIVE);
                if s.abs() > 1e-10 * scale {
                    return None;
                }
            }
        } else {
            return None;
        }
    }
    Some(l)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_fbm(h: f64, t: f64, s: f64) -> f64 {
        let (m, d) = (t.min(s), (t - s).abs());
        quadrature::integrate_origin_singular(
            |x: f64| x.powf(h - 0.5) * (x + d).powf(h - 0.5),
            m,
            h + 0.5,
            1e-15,
            1e-12,
        )
        .value
    }

    #[test]
    fn spec_values() {
        assert_eq!(cov_rl_fbm(0.5, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(cov_rl_fbm(0.3, 0.0, 3.0).unwrap(), 0.0);
        assert!((cov_rl_fbm(0.1, 1.0, 1.0).unwrap() - 5.0).abs() < 1e-14);
        assert_eq!(cov_forward_integral(0.5, 1.0, 2.0, 3.0).unwrap(), 1.0);
        assert!((cov_forward_integral(0.1, 1.0, 1.0, 1.0).unwrap() - 5.0).abs() < 1e-14);
        assert_eq!(cov_cross(0.5, 2.0, 1.0).unwrap(), 1.0);
        assert!((cov_cross(0.1, 1.0, 1.0).unwrap() - 1.0 / 0.6).abs() < 1e-15);
        assert_eq!(cov_cross(0.1, 1.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(cov_rl_fbm(0.0, 1.0, 1.0).is_err());
        assert!(cov_rl_fbm(0.6, 1.0, 1.0).is_err());
        assert!(cov_forward_integral(0.1, 1.0, 0.5, 2.0).is_err());
        assert!(cov_cross(0.1, -1.0, 1.0).is_err());
    }

    #[test]
    fn forward_integral_matches_direct_quadrature() {
        let (h, t, r1, r2) = (0.1, 0.5, 0.6, 0.7);
        let direct = quadrature::integrate(
            |u: f64| (r1 - u).powf(h - 0.5) * (r2 - u).powf(h - 0.5),
            0.0,
            t,
            1e-16,
            1e-13,
            1000,
        )
        .value;
        let v = cov_forward_integral(h, t, r1, r2).unwrap();
        assert!(((v - direct) / direct).abs() < 1e-10, "{v} vs {direct}");
    }

    #[test]
    fn fbm_cov_matches_naive_quadrature_off_diagonal() {
        for &(t, s) in &[(1.0, 0.3), (0.2, 0.9), (2.0, 1.5)] {
            let v = cov_rl_fbm(0.25, t, s).unwrap();
            let q = quad_fbm(0.25, t, s);
            assert!(((v - q) / q).abs() < 1e-7, "{t} {s}: {v} vs {q}");
        }
    }

    #[test]
    fn single_and_empty_systems() {
        let one = build_system(&SchemeDescriptor {
            hurst: 0.1,
            coordinates: vec![Coordinate::Fbm { t: 1.0 }],
        })
        .unwrap();
        assert!((one.cov()[(0, 0)] - 5.0).abs() < 1e-14);
        let empty = build_system(&SchemeDescriptor {
            hurst: 0.1,
            coordinates: vec![],
        })
        .unwrap();
        assert_eq!(empty.dim(), 0);
        assert_eq!(empty.sample(1, 0, 3).ncols(), 0);
    }

    #[test]
    fn perfectly_correlated_pair_at_half() {
        let sys = build_system(&SchemeDescriptor::spx(0.5, &[1.0])).unwrap();
        assert_eq!(sys.cov().as_slice(), &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(sys.chol()[(0, 0)], 1.0);
        assert_eq!(sys.chol()[(1, 0)], 1.0);
        assert_eq!(sys.chol()[(0, 1)], 0.0);
        assert_eq!(sys.chol()[(1, 1)], 0.0);
        assert_eq!(sys.jitter(), 0.0);
    }

    #[test]
    fn spx_system_factorizes_and_reproduces() {
        let grid: Vec<f64> = (1..=64).map(|i| i as f64 / (64.0 * 52.0)).collect();
        let sys = build_system(&SchemeDescriptor::spx(0.1, &grid)).unwrap();
        let back = sys.chol() * sys.chol().transpose();
        let n = sys.dim();
        for i in 0..n {
            for j in 0..n {
                let c = sys.cov()[(i, j)];
                let scale = (sys.cov()[(i, i)] * sys.cov()[(j, j)]).sqrt();
                assert!((back[(i, j)] - c).abs() <= 1e-10 * scale.max(c.abs()));
            }
        }
        assert!(sys.min_eigenvalue() >= -1e-10 * sys.cov().norm());
    }

    #[test]
    fn sampling_is_deterministic() {
        let sys = build_system(&SchemeDescriptor::vix(0.1, 0.01, &[0.01, 0.02, 0.05])).unwrap();
        assert_eq!(sys.sample(3, 9, 5), sys.sample(3, 9, 5));
        assert_ne!(sys.sample(3, 9, 5), sys.sample(3, 10, 5));
        assert_eq!(sys.sample(3, 9, 0).nrows(), 0);
    }
}
