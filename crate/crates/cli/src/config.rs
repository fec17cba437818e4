//! Run configuration: a TOML file, patched by `--set key=value` overrides,
//! then validated block by block.

use std::path::Path;

use serde::Deserialize;

use rbergomi::asymptotics::Underlying;
use rbergomi::calibration::{CalibrationOptions, ObservedLimits};
use rbergomi::model::{ModelParams, DEFAULT_DELTA};
use rbergomi::montecarlo::{SimConfig, DEFAULT_FIT_WIDTH};

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelBlock {
    hurst: f64,
    nu: f64,
    eta: f64,
    rho: f64,
    v0: f64,
    #[serde(default = "half")]
    chi: f64,
    #[serde(default)]
    rho1: f64,
    #[serde(default)]
    rho2: f64,
    rho3: Option<f64>,
    #[serde(default = "default_delta")]
    delta: f64,
}

fn half() -> f64 {
    0.5
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmileBlock {
    pub maturity: f64,
    pub log_strikes: Option<Vec<f64>>,
    pub fit_width: usize,
}

impl Default for SmileBlock {
    fn default() -> Self {
        SmileBlock {
            maturity: 1.0 / 52.0,
            log_strikes: None,
            fit_width: DEFAULT_FIT_WIDTH,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TermBlock {
    pub maturities: Vec<f64>,
    pub underlying: Underlying,
}

impl Default for TermBlock {
    fn default() -> Self {
        TermBlock {
            maturities: vec![1.0 / 252.0, 1.0 / 52.0, 1.0 / 12.0],
            underlying: Underlying::Vix,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AsymptoticsBlock {
    pub curvature: bool,
    /// Maturities at which the emitted observed-limits block quotes the SPX skew.
    pub term_maturities: [f64; 2],
}

impl Default for AsymptoticsBlock {
    fn default() -> Self {
        AsymptoticsBlock {
            curvature: true,
            term_maturities: [1.0 / 252.0, 1.0 / 52.0],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepBlock {
    pub a_min: f64,
    pub a_max: f64,
    pub a_steps: usize,
    pub b_max: f64,
    pub b_steps: usize,
}

impl Default for SweepBlock {
    fn default() -> Self {
        SweepBlock {
            a_min: -3.0,
            a_max: 3.0,
            a_steps: 61,
            b_max: 3.0,
            b_steps: 31,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyBlock {
    pub seed: u64,
    pub cases: usize,
}

impl Default for VerifyBlock {
    fn default() -> Self {
        VerifyBlock { seed: 7, cases: 100 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: ModelBlock,
    sim: SimConfig,
    #[serde(default)]
    smile: SmileBlock,
    #[serde(default)]
    term_structure: TermBlock,
    #[serde(default)]
    asymptotics: AsymptoticsBlock,
    observed: Option<ObservedLimits>,
    #[serde(default)]
    calibration: CalibrationOptions,
    #[serde(default)]
    sweep: SweepBlock,
    #[serde(default)]
    verify: VerifyBlock,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelParams,
    pub warnings: Vec<String>,
    pub sim: SimConfig,
    pub smile: SmileBlock,
    pub term_structure: TermBlock,
    pub asymptotics: AsymptoticsBlock,
    pub observed: Option<ObservedLimits>,
    pub calibration: CalibrationOptions,
    pub sweep: SweepBlock,
    pub verify: VerifyBlock,
}

fn invalid(path: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{path}: {msg}"))
}

fn default_tables() -> toml::Table {
    let p = ModelParams::default();
    let mut model = toml::Table::new();
    for (k, v) in [
        ("hurst", p.hurst),
        ("nu", p.nu),
        ("eta", p.eta),
        ("rho", p.rho),
        ("v0", p.v0),
        ("chi", p.chi),
        ("rho1", p.rho1),
        ("rho2", p.rho2),
        ("delta", p.delta),
    ] {
        model.insert(k.into(), toml::Value::Float(v));
    }
    let mut t = toml::Table::new();
    t.insert("model".into(), toml::Value::Table(model));
    t.insert(
        "sim".into(),
        toml::Value::try_from(SimConfig::default()).expect("SimConfig serialises"),
    );
    t
}

/// Parses `value` as a TOML literal, falling back to a bare string.
fn parse_literal(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{assignment}` is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("malformed override key `{key}`")));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("override `{key}`: `{part}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_literal(value.trim()));
    Ok(())
}

fn build_model(b: &ModelBlock) -> Result<(ModelParams, Vec<String>), CliError> {
    let base = ModelParams {
        hurst: b.hurst,
        nu: b.nu,
        eta: b.eta,
        rho: b.rho,
        chi: b.chi,
        v0: b.v0,
        rho1: b.rho1,
        rho2: b.rho2,
        rho3: 0.0,
        delta: b.delta,
    };
    let p = match b.rho3 {
        Some(rho3) => ModelParams { rho3, ..base },
        None => base.with_loadings(b.rho1, b.rho2).map_err(|e| model_error(&e))?,
    };
    let warnings = p.validate().map_err(|e| model_error(&e))?;
    Ok((p, warnings))
}

fn model_error(e: &rbergomi::Error) -> CliError {
    match e {
        rbergomi::Error::Parameter { name, reason } => invalid(&format!("model.{name}"), reason),
        other => invalid("model", other),
    }
}

fn prefixed(block: &str, e: rbergomi::Error) -> CliError {
    match e {
        rbergomi::Error::Parameter { name, reason } => invalid(&format!("{block}.{name}"), reason),
        other => invalid(block, other),
    }
}

impl RunConfig {
    /// Reads `path` (if any), applies the overrides and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut root = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {}", p.display(), e.message())))?
            }
            None => toml::Table::new(),
        };
        for (k, v) in default_tables() {
            root.entry(k).or_insert(v);
        }
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        Self::from_table(root)
    }

    pub fn from_table(root: toml::Table) -> Result<Self, CliError> {
        let raw: RawConfig = serde_path_to_error::deserialize(toml::Value::Table(root)).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                CliError::Config(inner.message().to_string())
            } else {
                invalid(&path, inner.message())
            }
        })?;
        let (model, warnings) = build_model(&raw.model)?;
        raw.sim.validate().map_err(|e| prefixed("sim", e))?;
        if !(raw.smile.maturity > 0.0) {
            return Err(invalid("smile.maturity", "must be positive"));
        }
        if raw.smile.fit_width < 3 {
            return Err(invalid("smile.fit_width", "need at least 3 strikes for a quadratic fit"));
        }
        if let Some(obs) = &raw.observed {
            obs.validate().map_err(|e| prefixed("observed", e))?;
        }
        if raw.sweep.a_steps < 2 || raw.sweep.b_steps < 2 || !(raw.sweep.a_max > raw.sweep.a_min) || !(raw.sweep.b_max > 0.0) {
            return Err(invalid("sweep", "need a_max > a_min, b_max > 0 and at least 2 steps per axis"));
        }
        Ok(RunConfig {
            model,
            warnings,
            sim: raw.sim,
            smile: raw.smile,
            term_structure: raw.term_structure,
            asymptotics: raw.asymptotics,
            observed: raw.observed,
            calibration: raw.calibration,
            sweep: raw.sweep,
            verify: raw.verify,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str, overrides: &[&str]) -> Result<RunConfig, CliError> {
        let mut root: toml::Table = text.parse().unwrap();
        for (k, v) in default_tables() {
            root.entry(k).or_insert(v);
        }
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        RunConfig::from_table(root)
    }

    #[test]
    fn defaults_are_canonical() {
        let c = load("", &[]).unwrap();
        assert_eq!(c.model, ModelParams::default());
        assert_eq!(c.sim, SimConfig::default());
    }

    #[test]
    fn missing_field_is_named() {
        let err = load("[model]\nhurst = 0.1\nnu = 1.0\neta = 1.0\nrho = 0.0\n", &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("model") && msg.contains("v0"), "{msg}");
    }

    #[test]
    fn overrides_patch_nested_keys() {
        let c = load("", &["model.hurst=0.2", "sim.n_paths=1000", "smile.log_strikes=[-0.1, 0.0, 0.1]"]).unwrap();
        assert_eq!(c.model.hurst, 0.2);
        assert_eq!(c.sim.n_paths, 1000);
        assert_eq!(c.smile.log_strikes.unwrap().len(), 3);
        assert!(load("", &["model.hurst"]).is_err());
    }

    #[test]
    fn invariants_report_field_paths() {
        let msg = load("", &["model.hurst=0.7"]).unwrap_err().to_string();
        assert!(msg.contains("model.hurst"), "{msg}");
        let msg = load("", &["sim.n_paths=3"]).unwrap_err().to_string();
        assert!(msg.contains("sim.n_paths"), "{msg}");
        let msg = load("", &["model.bogus=1"]).unwrap_err().to_string();
        assert!(msg.contains("bogus"), "{msg}");
        let msg = load("", &["sim.n_paths=\"many\""]).unwrap_err().to_string();
        assert!(msg.contains("sim.n_paths"), "{msg}");
    }
}
