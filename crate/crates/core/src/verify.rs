//! Self-consistency checks of the closed forms against independent
//! evaluations.

use rand::Rng;
use serde::Serialize;

use crate::asymptotics::{
    compute_jg, jg_by_quadrature, spx_skew_by_quadrature, spx_skew_limit, vix_limits_generic, vix_limits_rbergomi,
    vix_limits_rho_one, vix_limits_rho_zero,
};
use crate::calibration::{calibrate, CalibrationOptions, ObservedLimits};
use crate::error::Result;
use crate::model::ModelParams;
use crate::pricing::{bs_oracle_suite, ORACLE_TOLERANCE};
use crate::rng;

/// Ranges for random parameter draws.
#[derive(Debug, Clone, Copy)]
pub struct ParamRanges {
    pub hurst: (f64, f64),
    pub nu: (f64, f64),
    pub eta: (f64, f64),
    pub rho: (f64, f64),
    pub chi: (f64, f64),
    pub v0: (f64, f64),
    pub delta: (f64, f64),
    /// Draw ρ₂ = 0 instead of a random second loading.
    pub rho2_zero: bool,
}

impl Default for ParamRanges {
    fn default() -> Self {
        ParamRanges {
            hurst: (0.02, 0.48),
            nu: (0.2, 3.0),
            eta: (0.2, 3.0),
            rho: (-0.7, 1.0),
            chi: (0.05, 0.95),
            v0: (0.005, 0.2),
            delta: (1.0 / 52.0, 0.25),
            rho2_zero: false,
        }
    }
}

/// One parameter set drawn uniformly from `ranges`.
pub fn random_params<R: Rng>(rng: &mut R, ranges: &ParamRanges) -> ModelParams {
    let mut u = |(lo, hi): (f64, f64)| if lo == hi { lo } else { rng.gen_range(lo..hi) };
    let hurst = u(ranges.hurst);
    let nu = u(ranges.nu);
    let eta = u(ranges.eta);
    let rho = u(ranges.rho);
    let chi = u(ranges.chi);
    let v0 = u(ranges.v0);
    let delta = u(ranges.delta);
    let rho1 = u((-0.9, 0.9));
    let rho2 = if ranges.rho2_zero {
        0.0
    } else {
        let lim = (1.0 - rho1 * rho1).sqrt();
        u((-lim, lim))
    };
    ModelParams {
        hurst,
        nu,
        eta,
        rho,
        chi,
        v0,
        rho1,
        rho2,
        rho3: (1.0 - rho1 * rho1 - rho2 * rho2).max(0.0).sqrt(),
        delta,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub cases: usize,
    /// Multiplies the closed-form G₁₂ before the quadrature comparison;
    /// anything other than 1 must make that check fail.
    pub perturb_g12: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 7,
            cases: 100,
            perturb_g12: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

pub fn rel_error(value: f64, reference: f64) -> f64 {
    if value == reference {
        0.0
    } else {
        ((value - reference) / reference).abs()
    }
}

fn check(name: &str, cases: usize, max_error: f64, tolerance: f64) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        cases,
        max_error,
        tolerance,
        pass: max_error <= tolerance,
    }
}

/// Max relative error of closed-form J, G against quadrature.
pub fn jg_error(p: &ModelParams, perturb_g12: f64) -> Result<f64> {
    let mut c = compute_jg(p);
    c.g[0][1] *= perturb_g12;
    let q = jg_by_quadrature(p)?;
    let mut err: f64 = 0.0;
    for i in 0..2 {
        err = err.max(rel_error(c.j[i], q.j[i]));
        for k in 0..2 {
            err = err.max(rel_error(c.g[i][k], q.g[i][k]));
        }
    }
    Ok(err)
}

/// Max relative difference between the tensor and explicit VIX limits.
pub fn generic_vs_explicit_error(p: &ModelParams) -> Result<f64> {
    let curvature = p.hurst < 1.0 / 6.0;
    let e = vix_limits_rbergomi(p, curvature)?;
    let g = vix_limits_generic(&compute_jg(p), p.v0, p.delta, p.hurst, curvature)?;
    let mut err = rel_error(g.level, e.level).max(rel_error(g.skew_value, e.skew_value));
    if let (Some(a), Some(b)) = (g.curvature_value, e.curvature_value) {
        err = err.max(rel_error(a, b));
    }
    Ok(err)
}

/// Max relative difference between the ρ ∈ {0, 1} formulas and the
/// general ones.
pub fn special_case_error(p: &ModelParams) -> Result<f64> {
    let mut err: f64 = 0.0;
    for (rho, f) in [
        (1.0, vix_limits_rho_one as fn(&ModelParams, bool) -> Result<_>),
        (0.0, vix_limits_rho_zero),
    ] {
        let q = ModelParams { rho, ..*p };
        let s = f(&q, true)?;
        let e = vix_limits_rbergomi(&q, true)?;
        err = err
            .max(rel_error(s.level, e.level))
            .max(rel_error(s.skew_value, e.skew_value))
            .max(rel_error(s.curvature_value.unwrap(), e.curvature_value.unwrap()));
    }
    Ok(err)
}

pub fn run_verification(opts: &VerifyOptions) -> Result<VerificationReport> {
    let mut rng = rng::stream(opts.seed, 0);
    let mut checks = Vec::new();

    let ranges = ParamRanges::default();
    let mut err: f64 = 0.0;
    for _ in 0..opts.cases {
        err = err.max(jg_error(&random_params(&mut rng, &ranges), opts.perturb_g12)?);
    }
    checks.push(check("jg_closed_form_vs_quadrature", opts.cases, err, 1e-8));

    let bs = bs_oracle_suite();
    checks.push(check("bs_atm_identities", bs.checks.len(), bs.max_error(), ORACLE_TOLERANCE));

    let mut err: f64 = 0.0;
    for _ in 0..opts.cases {
        err = err.max(generic_vs_explicit_error(&random_params(&mut rng, &ranges))?);
    }
    checks.push(check("generic_vs_explicit_limits", opts.cases, err, 1e-9));

    let rough = ParamRanges {
        hurst: (0.01, 0.16),
        ..ranges
    };
    let mut err: f64 = 0.0;
    for _ in 0..opts.cases {
        err = err.max(special_case_error(&random_params(&mut rng, &rough))?);
    }
    checks.push(check("special_cases_rho_0_1", opts.cases, err, 1e-12));

    let n = opts.cases.min(20);
    let mut err: f64 = 0.0;
    for _ in 0..n {
        let p = random_params(&mut rng, &ranges);
        err = err.max(rel_error(spx_skew_by_quadrature(&p)?, spx_skew_limit(&p).skew_value));
    }
    checks.push(check("spx_skew_quadrature", n, err, 1e-8));

    // Calibrated parameters must reproduce the observed limits; (H, v₀) must
    // be recovered exactly.
    let cal_ranges = ParamRanges {
        hurst: (0.02, 0.15),
        nu: (0.3, 3.0),
        eta: (0.3, 3.0),
        rho: (-0.6, 1.0),
        chi: (0.5, 0.5),
        delta: (1.0 / 12.0, 1.0 / 12.0),
        rho2_zero: true,
        ..ranges
    };
    let n = opts.cases.min(10);
    let mut err: f64 = 0.0;
    for _ in 0..n {
        let p = random_params(&mut rng, &cal_ranges);
        let obs = ObservedLimits::from_params(&p, [1.0 / 252.0, 1.0 / 52.0])?;
        let r = match calibrate(&obs, &CalibrationOptions::default()) {
            Ok(r) => r,
            Err(_) => {
                err = f64::INFINITY;
                continue;
            }
        };
        err = err
            .max(r.residuals.max())
            .max(rel_error(r.params.hurst, p.hurst))
            .max(rel_error(r.params.v0, p.v0));
    }
    checks.push(check("calibration_reproduces_limits", n, err, 1e-8));

    Ok(VerificationReport { checks })
}
