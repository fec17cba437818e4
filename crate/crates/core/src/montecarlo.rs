//! Exact-simulation Monte Carlo for VIX and SPX smiles.
//!
//! Paths are generated in fixed-size batches; batch `b` draws from the
//! random stream `(seed, b)` and results are concatenated in batch order,
//! so every output is independent of the number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{spx_skew_limit, vix_limits_rbergomi, Underlying};
use crate::error::{Error, Result};
use crate::kernel::{build_system, SchemeDescriptor};
use crate::model::{wick_variance, ForwardVarianceCurve, ModelParams, VixQuadrature};
use crate::pricing::{bs_vega, fit_atm_quadratic, fit_atm_weights, implied_vol, AtmMetrics, Smile};
use crate::rng;

/// Gaussian draws per batch (two paths each with antithetics).
pub const BATCH_DRAWS: usize = 256;

/// Groups used for batch-means standard errors of the ATM metrics.
pub const SE_GROUPS: usize = 20;

pub const DEFAULT_FIT_WIDTH: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n_paths: usize,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    #[serde(default = "default_vix_nodes")]
    pub n_vix_nodes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub antithetic: bool,
}

fn default_steps() -> usize {
    128
}
fn default_vix_nodes() -> usize {
    32
}
fn default_true() -> bool {
    true
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_paths: 100_000,
            n_steps: default_steps(),
            n_vix_nodes: default_vix_nodes(),
            seed: 42,
            antithetic: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(Error::param("n_paths", format!("need at least 2 paths, got {}", self.n_paths)));
        }
        if self.antithetic && self.n_paths % 2 == 1 {
            return Err(Error::param("n_paths", "must be even when antithetic sampling is on"));
        }
        if self.n_steps < 1 {
            return Err(Error::param("n_steps", "need at least one step"));
        }
        if self.n_vix_nodes < 4 {
            return Err(Error::param(
                "n_vix_nodes",
                format!("need at least 4 nodes, got {}", self.n_vix_nodes),
            ));
        }
        Ok(())
    }

    fn draws(&self) -> usize {
        if self.antithetic {
            self.n_paths / 2
        } else {
            self.n_paths
        }
    }
}

/// Terminal samples of VIX_T or S_T, antithetic pairs adjacent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSamples {
    pub underlying: Underlying,
    pub maturity: f64,
    pub values: Vec<f64>,
    pub antithetic: bool,
}

impl PathSamples {
    /// Sample mean and its standard error.
    pub fn mean_se(&self) -> (f64, f64) {
        mean_se(&self.values, self.antithetic)
    }

    /// Sample mean; for VIX samples this is the VIX future.
    pub fn mean(&self) -> f64 {
        self.mean_se().0
    }
}

/// Mean and standard error, averaging antithetic pairs first.
pub fn mean_se(values: &[f64], antithetic: bool) -> (f64, f64) {
    if antithetic {
        let pairs: Vec<f64> = values.chunks_exact(2).map(|c| 0.5 * (c[0] + c[1])).collect();
        plain_mean_se(&pairs)
    } else {
        plain_mean_se(values)
    }
}

fn plain_mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(x) / n;
    if x.len() < 2 {
        return (mean, f64::NAN);
    }
    let dev: Vec<f64> = x.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 64 {
        x.iter().sum()
    } else {
        let (a, b) = x.split_at(x.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

/// Exact samples of VIX_T: one Gaussian draw of the forward integrals at
/// the quadrature nodes fixes E_T[v_r] on the whole window.
pub fn simulate_vix(p: &ModelParams, maturity: f64, cfg: &SimConfig) -> Result<PathSamples> {
    p.validate()?;
    cfg.validate()?;
    if !(maturity > 0.0) {
        return Err(Error::param("maturity", format!("must be positive, got {maturity}")));
    }
    let quad = VixQuadrature::gauss_legendre(maturity, p.delta, cfg.n_vix_nodes);
    let sys = build_system(&SchemeDescriptor::vix(p.hurst, maturity, &quad.nodes))?;
    let curve = ForwardVarianceCurve::new(p, &quad);
    let m = quad.nodes.len();
    let per = if cfg.antithetic { 2 } else { 1 };
    let seed = cfg.seed;
    let values = run_batches(seed, cfg.draws(), per, |rng, count, out| {
        let mut z = vec![0.0; 2 * m];
        let mut z1 = vec![0.0; m];
        let mut z2 = vec![0.0; m];
        for _ in 0..count {
            rng::fill_normals(rng, &mut z);
            sys.transform(&z[..m], &mut z1);
            sys.transform(&z[m..], &mut z2);
            out.push(curve.vix_squared_from(&z1, &z2).sqrt());
            if per == 2 {
                z1.iter_mut().chain(z2.iter_mut()).for_each(|v| *v = -*v);
                out.push(curve.vix_squared_from(&z1, &z2).sqrt());
            }
        }
    });
    Ok(PathSamples {
        underlying: Underlying::Vix,
        maturity,
        values,
        antithetic: cfg.antithetic,
    })
}

fn run_batches<F>(seed: u64, draws: usize, per: usize, f: F) -> Vec<f64>
where
    F: Fn(&mut rng::StreamRng, usize, &mut Vec<f64>) + Sync,
{
    let n_batches = draws.div_ceil(BATCH_DRAWS);
    let chunks: Vec<Vec<f64>> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let count = BATCH_DRAWS.min(draws - b * BATCH_DRAWS);
            let mut out = Vec::with_capacity(count * per);
            let mut rng = rng::stream(seed, b as u64);
            f(&mut rng, count, &mut out);
            out
        })
        .collect();
    chunks.concat()
}

/// Log-Euler samples of S_T with S₀ = 1 and left-point variance.
pub fn simulate_spx(p: &ModelParams, maturity: f64, cfg: &SimConfig) -> Result<PathSamples> {
    p.validate()?;
    cfg.validate()?;
    if !(maturity > 0.0) {
        return Err(Error::param("maturity", format!("must be positive, got {maturity}")));
    }
    let n = cfg.n_steps;
    let dt = maturity / n as f64;
    let grid: Vec<f64> = (1..=n).map(|i| i as f64 * dt).collect();
    let sys = build_system(&SchemeDescriptor::spx(p.hurst, &grid))?;
    // ½ν²Var(W^H_t), ½η²Var(W^H_t) at the left point of each step
    let half_var: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v = wick_variance(p.hurst, i as f64 * dt);
            (0.5 * p.nu * p.nu * v, 0.5 * p.eta * p.eta * v)
        })
        .collect();
    let (chi, chib, rho_bar) = (p.chi, p.chi_bar(), p.rho_bar());
    let sqdt = dt.sqrt();
    let terminal = |x1: &[f64], x2: &[f64], z3: &[f64], sign: f64| {
        let (mut ls, mut w1p, mut w2p, mut h1p, mut h2p) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let (hv1, hv2) = half_var[i];
            let v = p.v0 * (chi * (p.nu * h1p - hv1).exp() + chib * (p.eta * (p.rho * h1p + rho_bar * h2p) - hv2).exp());
            let (w1, w2) = (sign * x1[n + i], sign * x2[n + i]);
            let db = p.rho1 * (w1 - w1p) + p.rho2 * (w2 - w2p) + p.rho3 * sqdt * sign * z3[i];
            ls += v.sqrt() * db - 0.5 * v * dt;
            w1p = w1;
            w2p = w2;
            h1p = sign * x1[i];
            h2p = sign * x2[i];
        }
        ls.exp()
    };
    let per = if cfg.antithetic { 2 } else { 1 };
    let values = run_batches(cfg.seed, cfg.draws(), per, |rng, count, out| {
        let d = 2 * n;
        let mut z = vec![0.0; 2 * d + n];
        let mut x1 = vec![0.0; d];
        let mut x2 = vec![0.0; d];
        for _ in 0..count {
            rng::fill_normals(rng, &mut z);
            sys.transform(&z[..d], &mut x1);
            sys.transform(&z[d..2 * d], &mut x2);
            let z3 = &z[2 * d..];
            out.push(terminal(&x1, &x2, z3, 1.0));
            if per == 2 {
                out.push(terminal(&x1, &x2, z3, -1.0));
            }
        }
    });
    Ok(PathSamples {
        underlying: Underlying::Spx,
        maturity,
        values,
        antithetic: cfg.antithetic,
    })
}

/// 11 log-strikes j·h, j ∈ −5..=5, with h = 0.1·sd(log X).
pub fn default_log_strikes(samples: &PathSamples) -> Vec<f64> {
    let logs: Vec<f64> = samples.values.iter().map(|v| v.ln()).collect();
    let (m, _) = plain_mean_se(&logs);
    let var = logs.iter().map(|l| (l - m) * (l - m)).sum::<f64>() / (logs.len().max(2) - 1) as f64;
    let mut h = 0.1 * var.sqrt();
    if !(h > 0.0 && h.is_finite()) {
        h = 1e-4;
    }
    (-5..=5).map(|j| j as f64 * h).collect()
}

struct StrikeQuotes {
    prices: Vec<f64>,
    price_se: Vec<f64>,
    vols: Vec<Option<f64>>,
    iv_se: Vec<Option<f64>>,
}

fn quote(values: &[f64], antithetic: bool, forward: f64, log_strikes: &[f64], maturity: f64) -> StrikeQuotes {
    let x = forward.ln();
    let mut q = StrikeQuotes {
        prices: Vec::with_capacity(log_strikes.len()),
        price_se: Vec::with_capacity(log_strikes.len()),
        vols: Vec::with_capacity(log_strikes.len()),
        iv_se: Vec::with_capacity(log_strikes.len()),
    };
    let mut payoff = vec![0.0; values.len()];
    for &k in log_strikes {
        let strike = forward * k.exp();
        for (o, v) in payoff.iter_mut().zip(values) {
            *o = (v - strike).max(0.0);
        }
        let (price, se) = mean_se(&payoff, antithetic);
        let iv = implied_vol(price, 0.0, x, x + k, maturity).ok();
        let iv_se = iv.and_then(|s| {
            let vega = bs_vega(0.0, x, x + k, s, maturity);
            (vega > 0.0).then(|| se / vega)
        });
        q.prices.push(price);
        q.price_se.push(se);
        q.vols.push(iv);
        q.iv_se.push(iv_se);
    }
    q
}

/// Call prices, implied vols and ATM metrics on log-strikes relative to
/// the underlying level `forward`.
pub fn price_smile(
    samples: &PathSamples,
    forward: f64,
    log_strikes: &[f64],
    fit_width: usize,
) -> Result<Smile> {
    if log_strikes.is_empty() {
        return Err(Error::Domain("empty strike list".into()));
    }
    if !(forward > 0.0) {
        return Err(Error::param("forward", format!("must be positive, got {forward}")));
    }
    let maturity = samples.maturity;
    let q = quote(&samples.values, samples.antithetic, forward, log_strikes, maturity);
    let atm = fit_atm_quadratic(log_strikes, &q.vols, fit_width)
        .ok()
        .map(|(level, skew, curvature)| {
            let (level_se, skew_se, curvature_se) = atm_standard_errors(samples, forward, log_strikes, fit_width)
                .unwrap_or_else(|| delta_method_se(log_strikes, &q, fit_width));
            AtmMetrics {
                level,
                skew,
                curvature,
                level_se,
                skew_se,
                curvature_se,
            }
        });
    Ok(Smile {
        maturity,
        forward,
        log_strikes: log_strikes.to_vec(),
        prices: q.prices,
        price_se: q.price_se,
        implied_vols: q.vols,
        iv_se: q.iv_se,
        atm,
    })
}

// Batch means over contiguous groups of paths.
fn atm_standard_errors(
    samples: &PathSamples,
    forward: f64,
    log_strikes: &[f64],
    fit_width: usize,
) -> Option<(f64, f64, f64)> {
    let unit = if samples.antithetic { 2 } else { 1 };
    let units = samples.values.len() / unit;
    if units < 2 * SE_GROUPS {
        return None;
    }
    let ratio = forward / samples.mean();
    let mut est = Vec::with_capacity(SE_GROUPS);
    for g in 0..SE_GROUPS {
        let lo = g * units / SE_GROUPS * unit;
        let hi = (g + 1) * units / SE_GROUPS * unit;
        let part = &samples.values[lo..hi];
        let f = ratio * mean_se(part, samples.antithetic).0;
        let q = quote(part, samples.antithetic, f, log_strikes, samples.maturity);
        est.push(fit_atm_quadratic(log_strikes, &q.vols, fit_width).ok()?);
    }
    let se = |pick: fn(&(f64, f64, f64)) -> f64| {
        let v: Vec<f64> = est.iter().map(pick).collect();
        plain_mean_se(&v).1
    };
    Some((se(|e| e.0), se(|e| e.1), se(|e| e.2)))
}

// Fallback: propagate per-strike implied-vol errors through the fit weights.
fn delta_method_se(log_strikes: &[f64], q: &StrikeQuotes, fit_width: usize) -> (f64, f64, f64) {
    let Ok(w) = fit_atm_weights(log_strikes, &q.vols, fit_width) else {
        return (f64::NAN, f64::NAN, f64::NAN);
    };
    let mut var = [0.0; 3];
    for (i, c) in &w {
        let s = q.iv_se[*i].unwrap_or(f64::NAN);
        for d in 0..3 {
            var[d] += c[d] * c[d] * s * s;
        }
    }
    (var[0].sqrt(), var[1].sqrt(), var[2].sqrt())
}

/// Simulates `underlying` at `maturity` and prices its smile.
///
/// The underlying level is the sample mean; `log_strikes` defaults to
/// [`default_log_strikes`].
pub fn run_smile(
    p: &ModelParams,
    underlying: Underlying,
    maturity: f64,
    cfg: &SimConfig,
    log_strikes: Option<&[f64]>,
    fit_width: usize,
) -> Result<Smile> {
    let samples = match underlying {
        Underlying::Vix => simulate_vix(p, maturity, cfg)?,
        Underlying::Spx => simulate_spx(p, maturity, cfg)?,
    };
    let strikes = match log_strikes {
        Some(k) => k.to_vec(),
        None => default_log_strikes(&samples),
    };
    price_smile(&samples, samples.mean(), &strikes, fit_width)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermStructureRow {
    pub underlying: Underlying,
    pub maturity: f64,
    pub level: f64,
    pub level_se: f64,
    pub skew: f64,
    pub skew_se: f64,
    pub curvature: f64,
    pub curvature_se: f64,
    pub skew_exponent: f64,
    pub rescaled_skew: f64,
    pub rescaled_skew_se: f64,
    pub curvature_exponent: Option<f64>,
    pub rescaled_curvature: Option<f64>,
    pub rescaled_curvature_se: Option<f64>,
    pub limit_level: f64,
    pub limit_skew: f64,
    pub limit_curvature: Option<f64>,
}

/// ATM metrics across maturities, rescaled by T^{−λ} and T^{−γ}, next to
/// their short-maturity limits.
pub fn term_structure_study(
    p: &ModelParams,
    maturities: &[f64],
    cfg: &SimConfig,
    underlying: Underlying,
    fit_width: usize,
) -> Result<Vec<TermStructureRow>> {
    if maturities.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::param("maturities", "all maturities must be positive"));
    }
    if maturities.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param("maturities", "maturities must be strictly increasing"));
    }
    let limits = match underlying {
        Underlying::Vix => vix_limits_rbergomi(p, p.hurst < 1.0 / 6.0)?,
        Underlying::Spx => spx_skew_limit(p),
    };
    let mut rows = Vec::with_capacity(maturities.len());
    for &t in maturities {
        let smile = run_smile(p, underlying, t, cfg, None, fit_width)?;
        let atm = smile
            .atm
            .ok_or_else(|| Error::Numerical(format!("ATM fit failed at maturity {t}")))?;
        let sk = t.powf(limits.skew_exponent);
        let ck = limits.curvature_exponent.map(|g| t.powf(g));
        rows.push(TermStructureRow {
            underlying,
            maturity: t,
            level: atm.level,
            level_se: atm.level_se,
            skew: atm.skew,
            skew_se: atm.skew_se,
            curvature: atm.curvature,
            curvature_se: atm.curvature_se,
            skew_exponent: limits.skew_exponent,
            rescaled_skew: atm.skew / sk,
            rescaled_skew_se: atm.skew_se / sk,
            curvature_exponent: limits.curvature_exponent,
            rescaled_curvature: ck.map(|c| atm.curvature / c),
            rescaled_curvature_se: ck.map(|c| atm.curvature_se / c),
            limit_level: limits.level,
            limit_skew: limits.skew_value,
            limit_curvature: limits.curvature_value,
        });
    }
    Ok(rows)
}
