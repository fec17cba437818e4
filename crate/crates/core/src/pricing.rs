//! Black–Scholes pricing, implied-volatility inversion, ATM smile metrics
//! and the ATM derivative identities of the G and L functions.

use nalgebra::{Complex, Matrix3, Vector3};
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::error::{Error, InversionError, Result};

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// Call on e^x with log-strike k, zero rates.
pub fn bs_price(t: f64, x: f64, k: f64, sigma: f64, maturity: f64) -> f64 {
    let vs = sigma * (maturity - t).max(0.0).sqrt();
    if !(vs > 0.0) {
        return (x.exp() - k.exp()).max(0.0);
    }
    if vs.is_infinite() {
        return x.exp();
    }
    let d1 = (x - k) / vs + 0.5 * vs;
    x.exp() * norm_cdf(d1) - k.exp() * norm_cdf(d1 - vs)
}

/// ∂σ of [`bs_price`].
pub fn bs_vega(t: f64, x: f64, k: f64, sigma: f64, maturity: f64) -> f64 {
    let tau = (maturity - t).max(0.0);
    let vs = sigma * tau.sqrt();
    if !(vs > 0.0) {
        return 0.0;
    }
    let d1 = (x - k) / vs + 0.5 * vs;
    x.exp() * norm_pdf(d1) * tau.sqrt()
}

pub const VOL_BRACKET: (f64, f64) = (1e-9, 10.0);

/// Volatility σ with `bs_price(t, x, k, σ, T) = price`.
///
/// Safeguarded Newton on the bracket [1e−9, 10]; a price equal to the
/// intrinsic value returns 0.
pub fn implied_vol(price: f64, t: f64, x: f64, k: f64, maturity: f64) -> std::result::Result<f64, InversionError> {
    let tau = maturity - t;
    if !(tau > 0.0) {
        return Err(InversionError::NonPositiveMaturity(tau));
    }
    let fwd = x.exp();
    let intrinsic = (fwd - k.exp()).max(0.0);
    let slack = 4.0 * f64::EPSILON * fwd.max(k.exp());
    if !(price >= intrinsic - slack) {
        return Err(InversionError::BelowIntrinsic { price, bound: intrinsic });
    }
    if !(price < fwd) {
        return Err(InversionError::AboveUpper { price, bound: fwd });
    }
    if price <= intrinsic {
        return Ok(0.0);
    }
    let (_, hi_vol) = VOL_BRACKET;
    let f = |s: f64| bs_price(t, x, k, s, maturity) - price;
    let mut lo = 0.0;
    let mut hi = hi_vol;
    if f(hi) < 0.0 {
        return Err(InversionError::OutsideBracket {
            price,
            lo: VOL_BRACKET.0,
            hi: hi_vol,
        });
    }
    // Start from the ATM-normalised guess, clamped into the bracket.
    let tv = (price - intrinsic) / fwd;
    let mut s = ((2.0 * std::f64::consts::PI / tau).sqrt() * tv).max((2.0 * (x - k).abs() / tau).sqrt());
    if !(s > lo && s < hi) {
        s = 0.5 * (lo + hi);
    }
    let mut residual = f64::INFINITY;
    for _ in 0..300 {
        let fs = f(s);
        residual = fs.abs();
        if fs == 0.0 {
            return Ok(s);
        }
        if fs > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let vega = bs_vega(t, x, k, s, maturity);
        let newton = s - fs / vega;
        let next = if vega > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - s).abs() <= 1e-15 * s.max(1e-300) || hi - lo <= 4.0 * f64::EPSILON * hi {
            let fn_ = f(next).abs();
            if fn_ <= 1e-12 {
                return Ok(next);
            }
            residual = fn_;
            break;
        }
        s = next;
    }
    if residual <= 1e-12 {
        return Ok(s);
    }
    Err(InversionError::NoConvergence {
        iterations: 300,
        residual,
    })
}

/// ATM level, signed skew and curvature with standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AtmMetrics {
    pub level: f64,
    pub skew: f64,
    pub curvature: f64,
    pub level_se: f64,
    pub skew_se: f64,
    pub curvature_se: f64,
}

impl AtmMetrics {
    /// Skew as an absolute value.
    pub fn abs_skew(&self) -> f64 {
        self.skew.abs()
    }

    pub fn abs_curvature(&self) -> f64 {
        self.curvature.abs()
    }
}

/// Prices and implied vols on a grid of log-strikes relative to the ATM log-level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Smile {
    pub maturity: f64,
    /// Level of the underlying, e^{𝔐₀}.
    pub forward: f64,
    pub log_strikes: Vec<f64>,
    pub prices: Vec<f64>,
    pub price_se: Vec<f64>,
    pub implied_vols: Vec<Option<f64>>,
    pub iv_se: Vec<Option<f64>>,
    pub atm: Option<AtmMetrics>,
}

/// Quadratic least-squares fit of I(k) on the `fit_width` valid strikes
/// nearest k = 0; returns (I, ∂k I, ∂²k I) at k = 0.
pub fn fit_atm_quadratic(log_strikes: &[f64], vols: &[Option<f64>], fit_width: usize) -> Result<(f64, f64, f64)> {
    let w = fit_atm_weights(log_strikes, vols, fit_width)?;
    let mut out = [0.0; 3];
    for (idx, coeffs) in &w {
        let iv = vols[*idx].expect("selected strikes are valid");
        for d in 0..3 {
            out[d] += coeffs[d] * iv;
        }
    }
    Ok((out[0], out[1], out[2]))
}

// Linear weights mapping the selected vols to (level, slope, curvature).
pub(crate) fn fit_atm_weights(
    log_strikes: &[f64],
    vols: &[Option<f64>],
    fit_width: usize,
) -> Result<Vec<(usize, [f64; 3])>> {
    if fit_width < 3 {
        return Err(Error::Domain(format!("a quadratic fit needs at least 3 strikes, got {fit_width}")));
    }
    let mut valid: Vec<usize> = (0..log_strikes.len())
        .filter(|&i| vols.get(i).copied().flatten().is_some_and(|v| v.is_finite()))
        .collect();
    if valid.len() < fit_width {
        return Err(Error::Domain(format!(
            "{} valid strikes, {fit_width} needed for the ATM fit",
            valid.len()
        )));
    }
    valid.sort_by(|&a, &b| log_strikes[a].abs().total_cmp(&log_strikes[b].abs()).then(a.cmp(&b)));
    valid.truncate(fit_width);
    valid.sort_unstable();
    let scale = valid.iter().map(|&i| log_strikes[i].abs()).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return Err(Error::Numerical("degenerate ATM fit: strikes coincide".into()));
    }
    let mut ata = Matrix3::zeros();
    for &i in &valid {
        let u = log_strikes[i] / scale;
        let row = Vector3::new(1.0, u, u * u);
        ata += row * row.transpose();
    }
    let inv = ata
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Numerical("degenerate ATM fit: collinear strikes".into()))?;
    if ata.norm() * inv.norm() > 1e12 {
        return Err(Error::Numerical("degenerate ATM fit: ill-conditioned strikes".into()));
    }
    Ok(valid
        .iter()
        .map(|&i| {
            let u = log_strikes[i] / scale;
            let c = inv * Vector3::new(1.0, u, u * u);
            (i, [c[0], c[1] / scale, 2.0 * c[2] / (scale * scale)])
        })
        .collect())
}

/// Level, signed skew and curvature of a smile at its ATM point.
pub fn smile_metrics(smile: &Smile, fit_width: usize) -> Result<(f64, f64, f64)> {
    fit_atm_quadratic(&smile.log_strikes, &smile.implied_vols, fit_width)
}

/// G(x, k) = e^{x − d₊²/2}/(ς√(2π)), the Gaussian kernel (∂²ₓ − ∂ₓ)BS.
pub fn g_function(x: f64, k: f64, varsigma: f64) -> f64 {
    f_exponent(x, k, varsigma).exp() / (varsigma * SQRT_2PI)
}

/// f(x, k) = (x+k)/2 − (x−k)²/(2ς²) − ς²/8, so that G = e^f/(ς√(2π)).
pub fn f_exponent(x: f64, k: f64, varsigma: f64) -> f64 {
    let s2 = varsigma * varsigma;
    0.5 * (x + k) - (x - k) * (x - k) / (2.0 * s2) - s2 / 8.0
}

/// Closed-form ATM values (x = k) of the G and L derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AtmIdentities {
    pub dx_g: f64,
    pub dxk_g: f64,
    pub l: f64,
    pub dk_l: f64,
    pub dxk_l: f64,
    pub dxxk_l: f64,
    pub dxxxk_l: f64,
    pub h: f64,
}

impl AtmIdentities {
    pub fn at(x: f64, varsigma: f64) -> Self {
        let s2 = varsigma * varsigma;
        let pref = f_exponent(x, x, varsigma).exp() / (varsigma * SQRT_2PI);
        AtmIdentities {
            dx_g: pref * 0.5,
            dxk_g: pref * (0.25 + 1.0 / s2),
            l: pref * (0.25 + 0.5 / s2),
            dk_l: pref * (0.125 + 0.5 / s2),
            dxk_l: pref * (1.0 / 16.0 + 3.0 / (8.0 * s2) + 1.5 / (s2 * s2)),
            dxxk_l: pref * (1.0 / 32.0 + 1.0 / (8.0 * s2)),
            dxxxk_l: pref * (1.0 / 64.0 - 1.0 / (32.0 * s2) - 1.5 / (s2 * s2) - 7.5 / (s2 * s2 * s2)),
            h: pref * (-1.0 / 64.0 - 5.0 / (32.0 * s2) - 1.5 / (s2 * s2) - 7.5 / (s2 * s2 * s2)),
        }
    }
}

/// Mixed derivatives of an analytic function by the trapezoidal rule on the
/// Cauchy integral over a polycircle of radius `r`.
pub mod cauchy {
    use nalgebra::Complex;

    pub fn mixed<F: Fn(Complex<f64>, Complex<f64>) -> Complex<f64>>(
        f: &F,
        x: f64,
        k: f64,
        nx: usize,
        nk: usize,
        r: f64,
        nodes: usize,
    ) -> f64 {
        let tau = std::f64::consts::TAU;
        let mut acc = Complex::new(0.0, 0.0);
        for a in 0..nodes {
            let ta = tau * a as f64 / nodes as f64;
            let za = Complex::from_polar(r, ta);
            for b in 0..nodes {
                let tb = tau * b as f64 / nodes as f64;
                let zb = Complex::from_polar(r, tb);
                let phase = Complex::from_polar(1.0, -(nx as f64) * ta - (nk as f64) * tb);
                acc += f(za + x, zb + k) * phase;
            }
        }
        let fact = |n: usize| (1..=n).map(|i| i as f64).product::<f64>();
        acc.re * fact(nx) * fact(nk) / ((nodes * nodes) as f64 * r.powi((nx + nk) as i32))
    }
}

/// Central finite differences with Richardson extrapolation.
pub mod fd {
    // Central stencil for the n-th derivative on offsets −m..=m.
    fn stencil(order: usize) -> Vec<f64> {
        let mut s = vec![1.0];
        for _ in 0..order / 2 {
            s = convolve(&s, &[1.0, -2.0, 1.0]);
        }
        if order % 2 == 1 {
            s = convolve(&s, &[-0.5, 0.0, 0.5]);
        }
        s
    }

    fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; a.len() + b.len() - 1];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        out
    }

    /// ∂ₓ^{nx} ∂ₖ^{nk} f at (x, k) with step h, O(h²).
    pub fn mixed<F: Fn(f64, f64) -> f64>(f: &F, x: f64, k: f64, nx: usize, nk: usize, h: f64) -> f64 {
        let sx = stencil(nx);
        let sk = stencil(nk);
        let (mx, mk) = ((sx.len() / 2) as f64, (sk.len() / 2) as f64);
        let mut acc = 0.0;
        for (i, cx) in sx.iter().enumerate() {
            if *cx == 0.0 {
                continue;
            }
            for (j, ck) in sk.iter().enumerate() {
                if *ck == 0.0 {
                    continue;
                }
                acc += cx * ck * f(x + (i as f64 - mx) * h, k + (j as f64 - mk) * h);
            }
        }
        acc / h.powi((nx + nk) as i32)
    }

    /// Richardson-extrapolated [`mixed`] over `levels` halvings of `h`.
    pub fn richardson<F: Fn(f64, f64) -> f64>(
        f: &F,
        x: f64,
        k: f64,
        nx: usize,
        nk: usize,
        h: f64,
        levels: usize,
    ) -> f64 {
        let mut table: Vec<f64> = (0..levels)
            .map(|l| mixed(f, x, k, nx, nk, h / 2f64.powi(l as i32)))
            .collect();
        for m in 1..levels {
            let factor = 4f64.powi(m as i32);
            for l in (m..levels).rev() {
                table[l] = (factor * table[l] - table[l - 1]) / (factor - 1.0);
            }
        }
        table[levels - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheck {
    pub name: String,
    pub varsigma: f64,
    pub x: f64,
    pub analytic: f64,
    pub numeric: f64,
    /// Relative error, or absolute error scaled by G for identities equal to zero.
    pub error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub checks: Vec<OracleCheck>,
}

impl OracleReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn max_error(&self) -> f64 {
        self.checks.iter().map(|c| c.error).fold(0.0, f64::max)
    }
}

pub const ORACLE_TOLERANCE: f64 = 1e-6;

/// Compares the ATM identities against finite differences of G, and G
/// itself against second differences of [`bs_price`].
pub fn bs_oracle_suite() -> OracleReport {
    let mut checks = Vec::new();
    let mut push = |name: &str, varsigma: f64, x: f64, analytic: f64, numeric: f64, scale: Option<f64>| {
        let error = match scale {
            Some(s) => (numeric - analytic).abs() / s,
            None => ((numeric - analytic) / analytic).abs(),
        };
        checks.push(OracleCheck {
            name: name.to_string(),
            varsigma,
            x,
            analytic,
            numeric,
            error,
            tolerance: ORACLE_TOLERANCE,
            pass: error < ORACLE_TOLERANCE,
        });
    };
    for &vs in &[0.1, 0.5, 1.0, 2.0] {
        // G extended to complex arguments
        let gc = move |x: Complex<f64>, k: Complex<f64>| {
            let s2 = vs * vs;
            let f = (x + k) * 0.5 - (x - k) * (x - k) / (2.0 * s2) - s2 / 8.0;
            f.exp() / (vs * SQRT_2PI)
        };
        let dk = |nx: usize, nk: usize, x: f64, k: f64| cauchy::mixed(&gc, x, k, nx, nk, vs, 64);
        let d = |nx: usize, nk: usize, x: f64| dk(nx, nk, x, x);
        for &x in &[-1.0, 0.0, 1.0] {
            let a = AtmIdentities::at(x, vs);
            // L = (¼∂ₓ + ½∂ₓₖ)G, so ∂ₓ^m ∂ₖ^n L = ¼ G_{m+1,n} + ½ G_{m+1,n+1}.
            let l = |m: usize, n: usize| 0.25 * d(m + 1, n, x) + 0.5 * d(m + 1, n + 1, x);
            push("dx_G", vs, x, a.dx_g, d(1, 0, x), None);
            push("dxk_G", vs, x, a.dxk_g, d(1, 1, x), None);
            push("L", vs, x, a.l, l(0, 0), None);
            push("dk_L", vs, x, a.dk_l, l(0, 1), None);
            push("dxk_L", vs, x, a.dxk_l, l(1, 1), None);
            push("dxxk_L", vs, x, a.dxxk_l, l(2, 1), None);
            let dxxxk = l(3, 1);
            push("dxxxk_L", vs, x, a.dxxxk_l, dxxxk, None);
            push("H", vs, x, a.h, dxxxk - l(2, 1), None);

            // G = (∂²ₓ − ∂ₓ)BS with σ√τ = ς, τ = 1.
            let bs = move |x: f64, k: f64| bs_price(0.0, x, k, vs, 1.0);
            let hb = 0.3 * vs;
            let num = fd::richardson(&bs, x, x, 2, 0, hb, 4) - fd::richardson(&bs, x, x, 1, 0, hb, 4);
            push("G_from_bs_price", vs, x, g_function(x, x, vs), num, None);
        }
        // Odd x-derivatives of G(·, 0) vanish at its centre ς²/2.
        let centre = 0.5 * vs * vs;
        let scale = g_function(centre, 0.0, vs);
        for &n in &[1usize, 3] {
            let num = dk(n, 0, centre, 0.0) * vs.powi(n as i32);
            push(&format!("odd_dx{n}_G_at_centre"), vs, centre, 0.0, num, Some(scale));
        }
    }
    OracleReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_prices() {
        assert!((bs_price(0.0, 0.2, 0.0, 0.0, 1.0) - (0.2f64.exp() - 1.0)).abs() < 1e-15);
        let v = bs_price(0.0, 0.0, 0.0, 0.2, 1.0);
        assert!((v - (2.0 * norm_cdf(0.1) - 1.0)).abs() < 1e-15);
        assert!((v - 0.079_655_674_554_057_88).abs() < 1e-12);
    }

    #[test]
    fn implied_vol_roundtrip_and_bounds() {
        let p = bs_price(0.0, 0.0, 0.0, 0.2, 1.0);
        assert!((implied_vol(p, 0.0, 0.0, 0.0, 1.0).unwrap() - 0.2).abs() < 1e-13);
        let intrinsic = 0.3f64.exp() - 1.0;
        assert_eq!(implied_vol(intrinsic, 0.0, 0.3, 0.0, 1.0).unwrap(), 0.0);
        assert!(matches!(
            implied_vol(1.5, 0.0, 0.0, 0.0, 1.0),
            Err(InversionError::AboveUpper { .. })
        ));
        assert!(matches!(
            implied_vol(0.1, 0.0, 0.3, 0.0, 1.0),
            Err(InversionError::BelowIntrinsic { .. })
        ));
    }

    #[test]
    fn quadratic_fit_is_exact() {
        let ks: Vec<f64> = (-5..=5).map(|j| j as f64 * 0.01).collect();
        let vols: Vec<Option<f64>> = ks.iter().map(|k| Some(0.2 + 0.5 * k + 3.0 * k * k)).collect();
        let (l, s, c) = fit_atm_quadratic(&ks, &vols, 5).unwrap();
        assert!((l - 0.2).abs() < 1e-14);
        assert!((s - 0.5).abs() < 1e-11);
        assert!((c - 6.0).abs() < 1e-8);
        let flat = vec![Some(0.3); ks.len()];
        let (_, s, c) = fit_atm_quadratic(&ks, &flat, 5).unwrap();
        assert!(s.abs() < 1e-12 && c.abs() < 1e-8);
    }

    #[test]
    fn fit_rejects_degenerate_grids() {
        let ks = vec![0.0; 5];
        assert!(fit_atm_quadratic(&ks, &[Some(0.2); 5], 5).is_err());
        let ks = vec![-0.1, 0.0, 0.1];
        assert!(fit_atm_quadratic(&ks, &[Some(0.2), None, Some(0.2)], 3).is_err());
    }

    #[test]
    fn flat_smile_from_bs_prices() {
        let ks: Vec<f64> = (-5..=5).map(|j| j as f64 * 0.03).collect();
        let vols: Vec<Option<f64>> = ks
            .iter()
            .map(|&k| implied_vol(bs_price(0.0, 0.0, k, 0.3, 1.0), 0.0, 0.0, k, 1.0).ok())
            .collect();
        let (l, s, c) = fit_atm_quadratic(&ks, &vols, 5).unwrap();
        assert!((l - 0.3).abs() < 1e-8 && s.abs() < 1e-8 && c.abs() < 1e-6);
    }

    #[test]
    fn f_on_diagonal() {
        assert!((f_exponent(0.7, 0.7, 1.3) - (0.7 - 1.69 / 8.0)).abs() < 1e-15);
    }

    #[test]
    fn fd_matches_a_known_derivative() {
        let f = |x: f64, k: f64| x.sin() * k.exp();
        let v = fd::richardson(&f, 0.3, 0.2, 2, 1, 0.1, 4);
        let exact = -(0.3f64.sin()) * 0.2f64.exp();
        assert!((v - exact).abs() < 1e-9);
        let fc = |x: Complex<f64>, k: Complex<f64>| x.sin() * k.exp();
        let v = cauchy::mixed(&fc, 0.3, 0.2, 3, 2, 0.5, 32);
        assert!((v + 0.3f64.cos() * 0.2f64.exp()).abs() < 1e-13);
    }

    #[test]
    fn oracle_suite_passes() {
        let r = bs_oracle_suite();
        for c in &r.checks {
            assert!(c.pass, "{c:?}");
        }
    }
}
