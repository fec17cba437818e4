//! Joint SPX/VIX calibration from short-maturity limits.
//!
//! (v₀, H) come from the SPX level and the power law of the SPX skew,
//! (ν, ã, b̃) from the three VIX limits at χ = 1/2, and the stock loadings
//! (ρ₁, ρ₂) from the SPX skew coefficient.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::asymptotics::{normalized_functions, spx_skew_limit, vix_limits_rbergomi};
use crate::error::{CalibrationError, Error, Result};
use crate::model::ModelParams;

/// Absolute SPX skew Ŝ observed at one maturity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkewPoint {
    pub maturity: f64,
    pub skew: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservedLimits {
    pub spx_level: f64,
    /// Signed coefficient of T^{H−½} in the SPX skew.
    pub spx_skew_coeff: f64,
    /// Two observations of Ŝ_T used to read off H.
    pub spx_skew_term: Vec<SkewPoint>,
    pub vix_level: f64,
    pub vix_skew: f64,
    /// Coefficient of T^{3H−½} in the VIX curvature.
    pub vix_curv_coeff: f64,
    pub delta: f64,
}

impl ObservedLimits {
    /// Limits implied by `p`, with skew observations at the two maturities.
    pub fn from_params(p: &ModelParams, term_maturities: [f64; 2]) -> Result<Self> {
        p.validate()?;
        let spx = spx_skew_limit(p);
        let vix = vix_limits_rbergomi(p, true)?;
        Ok(ObservedLimits {
            spx_level: spx.level,
            spx_skew_coeff: spx.skew_value,
            spx_skew_term: term_maturities
                .iter()
                .map(|&t| SkewPoint {
                    maturity: t,
                    skew: spx.skew_value.abs() * t.powf(spx.skew_exponent),
                })
                .collect(),
            vix_level: vix.level,
            vix_skew: vix.skew_value,
            vix_curv_coeff: vix.curvature_value.expect("curvature requested"),
            delta: p.delta,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spx_level > 0.0) {
            return Err(Error::param("spx_level", format!("must be positive, got {}", self.spx_level)));
        }
        if !(self.vix_level > 0.0) {
            return Err(Error::param("vix_level", format!("must be positive, got {}", self.vix_level)));
        }
        if !(self.delta > 0.0) {
            return Err(Error::param("delta", format!("must be positive, got {}", self.delta)));
        }
        if self.spx_skew_term.len() != 2 {
            return Err(Error::param(
                "spx_skew_term",
                format!("exactly two skew observations are needed, got {}", self.spx_skew_term.len()),
            ));
        }
        Ok(())
    }
}

/// v₀ = level², H from the power law Ŝ_T ∝ T^{H−½}.
pub fn calibrate_spot(spx_level: f64, term: &[SkewPoint]) -> Result<(f64, f64)> {
    if term.len() != 2 {
        return Err(Error::param("spx_skew_term", "exactly two skew observations are needed"));
    }
    let (a, b) = (term[0], term[1]);
    if !(a.skew > 0.0 && b.skew > 0.0) {
        return Err(CalibrationError::NonPositiveSkew(a.skew, b.skew).into());
    }
    if !(a.maturity > 0.0 && b.maturity > 0.0) || a.maturity == b.maturity {
        return Err(Error::param("spx_skew_term", "maturities must be positive and distinct"));
    }
    let h = 0.5 + (a.skew / b.skew).ln() / (a.maturity / b.maturity).ln();
    if !(h > 0.0 && h < 0.5) {
        return Err(CalibrationError::HurstOutOfRange(h).into());
    }
    Ok((spx_level * spx_level, h))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VixSolverOptions {
    pub grid: usize,
    pub a_range: (f64, f64),
    pub b_max: f64,
    pub max_iter: usize,
    pub tolerance: f64,
    /// Roots closer than this in (ã, b̃) are merged.
    pub dedupe: f64,
}

impl Default for VixSolverOptions {
    fn default() -> Self {
        VixSolverOptions {
            grid: 16,
            a_range: (-3.0, 3.0),
            b_max: 3.0,
            max_iter: 100,
            tolerance: 1e-12,
            dedupe: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VixRoot {
    pub a_tilde: f64,
    pub b_tilde: f64,
    pub nu: f64,
    pub eta: f64,
    pub rho: f64,
    /// Max relative residual of the two quotient equations.
    pub residual: f64,
    pub iterations: usize,
    /// Ratio of singular values of the quotient Jacobian at the root.
    pub jacobian_condition: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VixCalibration {
    pub roots: Vec<VixRoot>,
    pub multiple: bool,
}

struct QuotientSystem {
    hurst: f64,
    delta: f64,
    target: [f64; 2],
    scale: [f64; 2],
}

impl QuotientSystem {
    fn residual(&self, a: f64, b: f64) -> Option<Vector2<f64>> {
        let nf = normalized_functions(a, b, self.hurst, self.delta).ok()?;
        if !(nf.psi > 0.0) {
            return None;
        }
        let (q1, q2) = nf.quotients();
        let r = Vector2::new((q1 - self.target[0]) / self.scale[0], (q2 - self.target[1]) / self.scale[1]);
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn jacobian(&self, a: f64, b: f64) -> Option<Matrix2<f64>> {
        let ha = 1e-6 * a.abs().max(1.0);
        let hb = 1e-6 * b.abs().max(1.0);
        let da = (self.residual(a + ha, b)? - self.residual(a - ha, b)?) / (2.0 * ha);
        let db = (self.residual(a, b + hb)? - self.residual(a, b - hb)?) / (2.0 * hb);
        Some(Matrix2::from_columns(&[da, db]))
    }

    // Damped Newton with a minimum-norm (pseudo-inverse) step.
    fn solve(&self, mut a: f64, mut b: f64, opts: &VixSolverOptions) -> (f64, f64, f64, usize) {
        let Some(mut r) = self.residual(a, b) else {
            return (a, b, f64::INFINITY, 0);
        };
        let mut iters = 0;
        while iters < opts.max_iter && r.amax() >= opts.tolerance {
            iters += 1;
            let Some(j) = self.jacobian(a, b) else { break };
            let svd = j.svd(true, true);
            let smax = svd.singular_values.max();
            let Ok(step) = svd.solve(&r, 1e-12 * smax) else { break };
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let (na, nb) = (a - lambda * step[0], (b - lambda * step[1]).abs());
                if let Some(nr) = self.residual(na, nb) {
                    if nr.norm() < r.norm() {
                        a = na;
                        b = nb;
                        r = nr;
                        accepted = true;
                        break;
                    }
                }
                lambda *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        (a, b, r.amax(), iters)
    }
}

/// Φ_S and Φ_C depend on b̃ only through b̃², so the search may use b̃ ≥ 0.
fn check_evenness(hurst: f64, delta: f64) -> Result<()> {
    for i in 0..8 {
        for j in 1..8 {
            let (a, b) = (-3.0 + 6.0 * i as f64 / 7.0, 3.0 * j as f64 / 7.0);
            let p = normalized_functions(a, b, hurst, delta)?;
            let m = normalized_functions(a, -b, hurst, delta)?;
            if p.phi_s != m.phi_s || p.phi_c != m.phi_c || p.psi != m.psi {
                return Err(Error::Numerical(format!("normalised functions are not even in b̃ at ({a}, {b})")));
            }
        }
    }
    Ok(())
}

/// Solves the VIX limits for (ν, ã, b̃) by multistart damped Newton on
/// the ν-free quotients S₀/I₀ and C₀/I₀.
pub fn calibrate_vix(obs: &ObservedLimits, hurst: f64, v0: f64, opts: &VixSolverOptions) -> Result<VixCalibration> {
    obs.validate()?;
    if !(v0 > 0.0) {
        return Err(Error::param("v0", format!("must be positive, got {v0}")));
    }
    check_evenness(hurst, obs.delta)?;
    let target = [obs.vix_skew / obs.vix_level, obs.vix_curv_coeff / obs.vix_level];
    let sys = QuotientSystem {
        hurst,
        delta: obs.delta,
        target,
        scale: [target[0].abs().max(1e-300), target[1].abs().max(1e-300)],
    };
    let (a_lo, a_hi) = opts.a_range;
    let g = opts.grid.max(1) as f64;
    let mut found: Vec<(f64, f64, f64, usize)> = Vec::new();
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..opts.grid {
        for j in 0..opts.grid {
            let a0 = a_lo + (a_hi - a_lo) * (i as f64 + 0.5) / g;
            let b0 = opts.b_max * (j as f64 + 0.5) / g;
            let (a, b, res, it) = sys.solve(a0, b0, opts);
            if res < best.0 {
                best = (res, a, b);
            }
            let inside = a >= a_lo - 1e-9 && a <= a_hi + 1e-9 && b <= opts.b_max + 1e-9;
            if res < opts.tolerance && inside {
                found.push((a, b, res, it));
            }
        }
    }
    found.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    let mut roots: Vec<VixRoot> = Vec::new();
    for (a, b, res, it) in found {
        if roots
            .iter()
            .any(|r| (r.a_tilde - a).abs() < opts.dedupe && (r.b_tilde - b).abs() < opts.dedupe)
        {
            continue;
        }
        let norm = a.hypot(b);
        if !(norm > 0.0) {
            continue;
        }
        let nf = normalized_functions(a, b, hurst, obs.delta)?;
        let nu = obs.vix_level / (nf.c_i * nf.psi);
        let cond = sys
            .jacobian(a, b)
            .map(|j| {
                let s = j.singular_values();
                s.max() / s.min()
            })
            .unwrap_or(f64::NAN);
        roots.push(VixRoot {
            a_tilde: a,
            b_tilde: b,
            nu,
            eta: nu * norm,
            rho: a / norm,
            residual: res,
            iterations: it,
            jacobian_condition: cond,
        });
    }
    if roots.is_empty() {
        return Err(CalibrationError::NoRoot {
            best_residual: best.0,
            a_tilde: best.1,
            b_tilde: best.2,
        }
        .into());
    }
    Ok(VixCalibration {
        multiple: roots.len() > 1,
        roots,
    })
}

/// Stock loadings matching the SPX skew coefficient, preferring the
/// smallest |ρ₂|.
pub fn calibrate_spx_loadings(p: &ModelParams, spx_skew_coeff: f64) -> Result<(f64, f64, f64)> {
    let hp = p.hp();
    let denom = 2.0 * hp * (1.0 + hp);
    let r = denom * spx_skew_coeff;
    let alpha = p.chi * p.nu + p.chi_bar() * p.eta * p.rho;
    let beta = p.chi_bar() * p.eta * p.rho_bar();
    let reach = alpha.hypot(beta);
    if !(r.abs() <= reach * (1.0 + 1e-12)) {
        return Err(CalibrationError::Infeasible {
            target: spx_skew_coeff,
            min: -reach / denom,
            max: reach / denom,
        }
        .into());
    }
    let (rho1, rho2) = if alpha != 0.0 && (r / alpha).abs() <= 1.0 {
        (r / alpha, 0.0)
    } else if alpha == 0.0 {
        (0.0, (r / beta).clamp(-1.0, 1.0))
    } else {
        // On the unit circle: α cos θ + β sin θ = r.
        let phi = beta.atan2(alpha);
        let delta = (r / reach).clamp(-1.0, 1.0).acos();
        let (t1, t2) = (phi + delta, phi - delta);
        let theta = if t1.sin().abs() <= t2.sin().abs() { t1 } else { t2 };
        (theta.cos(), theta.sin())
    };
    let rho3 = (1.0 - rho1 * rho1 - rho2 * rho2).max(0.0).sqrt();
    Ok((rho1, rho2, rho3))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residuals {
    pub spx_level: f64,
    pub spx_skew: f64,
    pub vix_level: f64,
    pub vix_skew: f64,
    pub vix_curvature: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        [self.spx_level, self.spx_skew, self.vix_level, self.vix_skew, self.vix_curvature]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationOptions {
    pub vix: VixSolverOptions,
    /// Largest relative residual accepted as converged.
    pub tolerance: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            vix: VixSolverOptions::default(),
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationResult {
    pub params: ModelParams,
    pub residuals: Residuals,
    pub iterations: usize,
    pub converged: bool,
    /// More than one parameter set reproduces the observations.
    pub multiple_roots: bool,
    /// Other parameter sets that fit, ordered by (ã, b̃).
    pub alternatives: Vec<ModelParams>,
    pub jacobian_condition: f64,
    pub warnings: Vec<String>,
}

fn rel(model: f64, target: f64) -> f64 {
    if target == 0.0 {
        model.abs()
    } else {
        ((model - target) / target).abs()
    }
}

fn residuals(p: &ModelParams, obs: &ObservedLimits) -> Result<Residuals> {
    let spx = spx_skew_limit(p);
    let vix = vix_limits_rbergomi(p, true)?;
    Ok(Residuals {
        spx_level: rel(spx.level, obs.spx_level),
        spx_skew: rel(spx.skew_value, obs.spx_skew_coeff),
        vix_level: rel(vix.level, obs.vix_level),
        vix_skew: rel(vix.skew_value, obs.vix_skew),
        vix_curvature: rel(vix.curvature_value.unwrap_or(f64::NAN), obs.vix_curv_coeff),
    })
}

/// Runs the three calibration stages; every root of the VIX stage that
/// admits feasible loadings is reported.
pub fn calibrate(obs: &ObservedLimits, opts: &CalibrationOptions) -> Result<CalibrationResult> {
    obs.validate()?;
    let (v0, hurst) = calibrate_spot(obs.spx_level, &obs.spx_skew_term)?;
    let vix = calibrate_vix(obs, hurst, v0, &opts.vix)?;
    let mut fits: Vec<(ModelParams, Residuals, &VixRoot)> = Vec::new();
    let mut last_err = None;
    for root in &vix.roots {
        let partial = ModelParams {
            hurst,
            nu: root.nu,
            eta: root.eta,
            rho: root.rho,
            chi: 0.5,
            v0,
            rho1: 0.0,
            rho2: 0.0,
            rho3: 1.0,
            delta: obs.delta,
        };
        match calibrate_spx_loadings(&partial, obs.spx_skew_coeff) {
            Ok((rho1, rho2, rho3)) => {
                let p = ModelParams { rho1, rho2, rho3, ..partial };
                fits.push((p, residuals(&p, obs)?, root));
            }
            Err(e) => last_err = Some(e),
        }
    }
    if fits.is_empty() {
        return Err(last_err.expect("at least one root was tried"));
    }
    let best = (0..fits.len())
        .min_by(|&i, &j| fits[i].1.max().total_cmp(&fits[j].1.max()))
        .expect("non-empty");
    let (params, res, root) = fits[best];
    let mut warnings = params.validate()?;
    if fits.len() > 1 {
        warnings.push(format!(
            "{} distinct parameter sets reproduce the observed limits; the VIX limits do not identify (ν, η, ρ) uniquely",
            fits.len()
        ));
    }
    let alternatives = fits
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != best)
        .map(|(_, f)| f.0)
        .collect();
    Ok(CalibrationResult {
        params,
        residuals: res,
        iterations: root.iterations,
        converged: res.max() < opts.tolerance,
        multiple_roots: fits.len() > 1,
        alternatives,
        jacobian_condition: root.jacobian_condition,
        warnings,
    })
}
