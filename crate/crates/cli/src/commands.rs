use std::path::Path;

use serde::Serialize;

use rbergomi::asymptotics::{
    normalized_for, normalized_functions, spx_skew_limit, vix_limits_rbergomi, vix_limits_rho_one,
    vix_limits_rho_zero, NormalizedFunctions, SmileAsymptotics, Underlying,
};
use rbergomi::calibration::{calibrate, CalibrationResult, ObservedLimits};
use rbergomi::model::ModelParams;
use rbergomi::montecarlo::{run_smile, term_structure_study};
use rbergomi::verify::{run_verification, VerificationReport, VerifyOptions};

use crate::config::RunConfig;
use crate::output::{csv, json, num, opt};
use crate::{CliError, Format};

pub const EXIT_OK: u8 = 0;
pub const EXIT_NUMERICAL: u8 = 2;
pub const EXIT_NOT_CONVERGED: u8 = 3;
pub const EXIT_MULTIPLE_ROOTS: u8 = 4;

pub struct Outcome {
    pub text: String,
    pub status: u8,
}

impl Outcome {
    fn ok(text: String) -> Self {
        Outcome { text, status: EXIT_OK }
    }
}

#[derive(Serialize)]
struct AsymptoticsReport {
    params: ModelParams,
    warnings: Vec<String>,
    vix: SmileAsymptotics,
    spx: SmileAsymptotics,
    /// Simplified ρ = 1 or ρ = 0 formulas, when they apply.
    special_case: Option<SmileAsymptotics>,
    normalized: Option<NormalizedFunctions>,
    /// Input block for `calibrate` reproducing these limits.
    observed: Option<ObservedLimits>,
}

const ASYMPTOTICS_HEADER: [&str; 7] = [
    "case",
    "underlying",
    "level",
    "skew_value",
    "skew_exponent",
    "curvature_value",
    "curvature_exponent",
];

fn asymptotics_row(case: &str, a: &SmileAsymptotics) -> Vec<String> {
    vec![
        case.into(),
        a.underlying.to_string(),
        num(a.level),
        num(a.skew_value),
        num(a.skew_exponent),
        opt(a.curvature_value),
        opt(a.curvature_exponent),
    ]
}

pub fn asymptotics(cfg: &RunConfig, curvature: bool, format: Format) -> Result<Outcome, CliError> {
    let p = &cfg.model;
    let vix = vix_limits_rbergomi(p, curvature)?;
    let special_case = if p.rho == 1.0 {
        Some(vix_limits_rho_one(p, curvature)?)
    } else if p.rho == 0.0 {
        Some(vix_limits_rho_zero(p, curvature)?)
    } else {
        None
    };
    let rough = p.hurst < 1.0 / 6.0;
    let report = AsymptoticsReport {
        params: *p,
        warnings: cfg.warnings.clone(),
        vix,
        spx: spx_skew_limit(p),
        special_case,
        normalized: if p.chi == 0.5 && rough { Some(normalized_for(p)?) } else { None },
        observed: if rough {
            Some(ObservedLimits::from_params(p, cfg.asymptotics.term_maturities)?)
        } else {
            None
        },
    };
    let text = match format {
        Format::Json => json(&report)?,
        Format::Csv => {
            let mut rows = vec![asymptotics_row("general", &report.vix), asymptotics_row("general", &report.spx)];
            if let Some(s) = &report.special_case {
                rows.push(asymptotics_row(if p.rho == 1.0 { "rho_one" } else { "rho_zero" }, s));
            }
            csv(&ASYMPTOTICS_HEADER, &rows, &warning_comments(&cfg.warnings))?
        }
    };
    Ok(Outcome::ok(text))
}

fn warning_comments(w: &[String]) -> Vec<(String, String)> {
    w.iter().map(|m| ("warning".to_string(), m.clone())).collect()
}

#[derive(Serialize)]
struct SmileReport {
    underlying: Underlying,
    smile: rbergomi::pricing::Smile,
    limits: SmileAsymptotics,
    /// ATM skew divided by T^λ, comparable with the skew limit.
    rescaled_skew: Option<f64>,
}

pub fn smile(cfg: &RunConfig, underlying: Underlying, maturity: Option<f64>, format: Format) -> Result<Outcome, CliError> {
    let p = &cfg.model;
    let t = maturity.unwrap_or(cfg.smile.maturity);
    if !(t > 0.0) {
        return Err(CliError::Usage(format!("maturity must be positive, got {t}")));
    }
    if let Some(k) = &cfg.smile.log_strikes {
        if k.is_empty() {
            return Err(CliError::Usage("smile.log_strikes is empty".into()));
        }
    }
    let smile = run_smile(p, underlying, t, &cfg.sim, cfg.smile.log_strikes.as_deref(), cfg.smile.fit_width)?;
    let limits = match underlying {
        Underlying::Vix => vix_limits_rbergomi(p, p.hurst < 1.0 / 6.0)?,
        Underlying::Spx => spx_skew_limit(p),
    };
    let rescaled_skew = smile.atm.map(|a| a.skew / t.powf(limits.skew_exponent));
    let report = SmileReport {
        underlying,
        smile,
        limits,
        rescaled_skew,
    };
    let text = match format {
        Format::Json => json(&report)?,
        Format::Csv => {
            let s = &report.smile;
            let rows: Vec<Vec<String>> = (0..s.log_strikes.len())
                .map(|i| {
                    vec![
                        num(t),
                        num(s.log_strikes[i]),
                        num(s.prices[i]),
                        num(s.price_se[i]),
                        opt(s.implied_vols[i]),
                        opt(s.iv_se[i]),
                    ]
                })
                .collect();
            let mut c = vec![
                ("underlying".to_string(), underlying.to_string()),
                ("forward".to_string(), num(s.forward)),
            ];
            if let Some(a) = &s.atm {
                for (k, v) in [
                    ("atm_level", a.level),
                    ("atm_level_se", a.level_se),
                    ("atm_skew", a.skew),
                    ("atm_skew_se", a.skew_se),
                    ("atm_curvature", a.curvature),
                    ("atm_curvature_se", a.curvature_se),
                ] {
                    c.push((k.to_string(), num(v)));
                }
                c.push(("rescaled_skew".to_string(), opt(report.rescaled_skew)));
            } else {
                c.push(("atm".to_string(), "fit failed".to_string()));
            }
            c.push(("limit_level".to_string(), num(limits.level)));
            c.push(("limit_skew".to_string(), num(limits.skew_value)));
            c.push(("limit_skew_exponent".to_string(), num(limits.skew_exponent)));
            c.push(("limit_curvature".to_string(), opt(limits.curvature_value)));
            c.extend(warning_comments(&cfg.warnings));
            csv(
                &["maturity", "log_strike", "price", "price_se", "implied_vol", "iv_se"],
                &rows,
                &c,
            )?
        }
    };
    Ok(Outcome::ok(text))
}

pub fn term_structure(cfg: &RunConfig, format: Format) -> Result<Outcome, CliError> {
    let ts = &cfg.term_structure;
    let rows = term_structure_study(&cfg.model, &ts.maturities, &cfg.sim, ts.underlying, cfg.smile.fit_width)?;
    let text = match format {
        Format::Json => json(&rows)?,
        Format::Csv => {
            let body: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.underlying.to_string(),
                        num(r.maturity),
                        num(r.level),
                        num(r.level_se),
                        num(r.skew),
                        num(r.skew_se),
                        num(r.curvature),
                        num(r.curvature_se),
                        num(r.skew_exponent),
                        num(r.rescaled_skew),
                        num(r.rescaled_skew_se),
                        opt(r.curvature_exponent),
                        opt(r.rescaled_curvature),
                        opt(r.rescaled_curvature_se),
                        num(r.limit_level),
                        num(r.limit_skew),
                        opt(r.limit_curvature),
                    ]
                })
                .collect();
            csv(
                &[
                    "underlying",
                    "maturity",
                    "level",
                    "level_se",
                    "skew",
                    "skew_se",
                    "curvature",
                    "curvature_se",
                    "skew_exponent",
                    "rescaled_skew",
                    "rescaled_skew_se",
                    "curvature_exponent",
                    "rescaled_curvature",
                    "rescaled_curvature_se",
                    "limit_level",
                    "limit_skew",
                    "limit_curvature",
                ],
                &body,
                &warning_comments(&cfg.warnings),
            )?
        }
    };
    Ok(Outcome::ok(text))
}

/// Reads observed limits from JSON, either bare or as the `observed`
/// member of an `asymptotics` report.
pub fn read_limits(path: &Path) -> Result<ObservedLimits, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Some(inner) = value.get_mut("observed") {
        value = inner.take();
    }
    let obs: ObservedLimits = serde_path_to_error::deserialize(value).map_err(|e| {
        CliError::Config(format!("{}: observed.{}: {}", path.display(), e.path(), e.inner()))
    })?;
    obs.validate().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(obs)
}

#[derive(Serialize)]
struct CalibrationReport<'a> {
    status: &'static str,
    observed: &'a ObservedLimits,
    #[serde(flatten)]
    result: &'a CalibrationResult,
}

pub fn calibrate_cmd(cfg: &RunConfig, limits: Option<&Path>, format: Format) -> Result<Outcome, CliError> {
    let observed = match limits {
        Some(p) => read_limits(p)?,
        None => cfg
            .observed
            .clone()
            .ok_or_else(|| CliError::Config("observed: block missing (or pass --limits)".into()))?,
    };
    let result = calibrate(&observed, &cfg.calibration)?;
    let (status, code) = match (result.converged, result.multiple_roots) {
        (false, _) => ("not_converged", EXIT_NOT_CONVERGED),
        (true, true) => ("multiple_roots", EXIT_MULTIPLE_ROOTS),
        (true, false) => ("converged", EXIT_OK),
    };
    let text = match format {
        Format::Json => json(&CalibrationReport {
            status,
            observed: &observed,
            result: &result,
        })?,
        Format::Csv => {
            let row = |rank: usize, p: &ModelParams| {
                vec![
                    rank.to_string(),
                    num(p.hurst),
                    num(p.v0),
                    num(p.nu),
                    num(p.eta),
                    num(p.rho),
                    num(p.chi),
                    num(p.rho1),
                    num(p.rho2),
                    num(p.rho3),
                    num(p.delta),
                ]
            };
            let mut rows = vec![row(0, &result.params)];
            rows.extend(result.alternatives.iter().enumerate().map(|(i, p)| row(i + 1, p)));
            let mut c = vec![
                ("status".to_string(), status.to_string()),
                ("max_residual".to_string(), num(result.residuals.max())),
                ("iterations".to_string(), result.iterations.to_string()),
                ("jacobian_condition".to_string(), num(result.jacobian_condition)),
            ];
            c.extend(warning_comments(&result.warnings));
            csv(
                &["rank", "hurst", "v0", "nu", "eta", "rho", "chi", "rho1", "rho2", "rho3", "delta"],
                &rows,
                &c,
            )?
        }
    };
    Ok(Outcome { text, status: code })
}

pub fn verify(cfg: &RunConfig, perturb_g12: f64, cases: Option<usize>, format: Format) -> Result<Outcome, CliError> {
    let report: VerificationReport = run_verification(&VerifyOptions {
        seed: cfg.verify.seed,
        cases: cases.unwrap_or(cfg.verify.cases),
        perturb_g12,
    })?;
    let status = if report.passed() { EXIT_OK } else { EXIT_NUMERICAL };
    let text = match format {
        Format::Json => json(&report)?,
        Format::Csv => {
            let rows: Vec<Vec<String>> = report
                .checks
                .iter()
                .map(|c| {
                    vec![
                        c.name.clone(),
                        c.cases.to_string(),
                        num(c.max_error),
                        num(c.tolerance),
                        c.pass.to_string(),
                    ]
                })
                .collect();
            csv(&["check", "cases", "max_error", "tolerance", "pass"], &rows, &[])?
        }
    };
    Ok(Outcome { text, status })
}

#[derive(Serialize)]
struct SweepPoint {
    a_tilde: f64,
    b_tilde: f64,
    psi: f64,
    phi_s: f64,
    phi_c: f64,
    skew_over_level: f64,
    curvature_over_level: f64,
}

pub fn sweep(cfg: &RunConfig, format: Format) -> Result<Outcome, CliError> {
    let s = &cfg.sweep;
    let mut points = Vec::with_capacity(s.a_steps * s.b_steps);
    for i in 0..s.a_steps {
        let a = s.a_min + (s.a_max - s.a_min) * i as f64 / (s.a_steps - 1) as f64;
        for j in 0..s.b_steps {
            let b = s.b_max * j as f64 / (s.b_steps - 1) as f64;
            let nf = normalized_functions(a, b, cfg.model.hurst, cfg.model.delta)?;
            let (q1, q2) = nf.quotients();
            points.push(SweepPoint {
                a_tilde: a,
                b_tilde: b,
                psi: nf.psi,
                phi_s: nf.phi_s,
                phi_c: nf.phi_c,
                skew_over_level: q1,
                curvature_over_level: q2,
            });
        }
    }
    let text = match format {
        Format::Json => json(&points)?,
        Format::Csv => {
            let rows: Vec<Vec<String>> = points
                .iter()
                .map(|p| {
                    [p.a_tilde, p.b_tilde, p.psi, p.phi_s, p.phi_c, p.skew_over_level, p.curvature_over_level]
                        .into_iter()
                        .map(num)
                        .collect()
                })
                .collect();
            csv(
                &["a_tilde", "b_tilde", "psi", "phi_s", "phi_c", "skew_over_level", "curvature_over_level"],
                &rows,
                &[
                    ("hurst".to_string(), num(cfg.model.hurst)),
                    ("delta".to_string(), num(cfg.model.delta)),
                ],
            )?
        }
    };
    Ok(Outcome::ok(text))
}
