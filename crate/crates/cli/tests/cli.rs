use std::path::Path;
use std::process::{Command, Output};

fn rbergomi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rbergomi"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).expect("valid JSON on stdout")
}

const ONE_FACTOR: [&str; 6] = [
    "--set",
    "model.chi=1",
    "--set",
    "model.nu=1",
    "--set",
    "model.delta=0.08333333333333333",
];

#[test]
fn asymptotics_one_factor_level() {
    let mut args = vec!["asymptotics"];
    args.extend(ONE_FACTOR);
    let o = rbergomi(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&o);
    let level = v["vix"]["level"].as_f64().unwrap();
    assert!((level - 2.2516).abs() < 1e-4);
    assert!((v["vix"]["curvature_value"].as_f64().unwrap() - 1.9725).abs() < 1e-4);
    assert_eq!(v["spx"]["level"].as_f64().unwrap(), 0.2);
}

#[test]
fn asymptotics_special_case_reported() {
    let o = rbergomi(&["asymptotics", "--set", "model.rho=1"]);
    assert_eq!(code(&o), 0);
    let v = json(&o);
    let a = v["vix"]["level"].as_f64().unwrap();
    let b = v["special_case"]["level"].as_f64().unwrap();
    assert!(((a - b) / a).abs() < 1e-12);
    let o = rbergomi(&["asymptotics", "--format", "csv", "--set", "model.rho=0"]);
    assert!(stdout(&o).lines().any(|l| l.starts_with("rho_zero,vix,")));
}

#[test]
fn curvature_outside_rough_regime_is_a_clean_error() {
    let o = rbergomi(&["asymptotics", "--set", "model.hurst=0.2"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("1/6"), "{}", stderr(&o));
    let o = rbergomi(&["asymptotics", "--no-curvature", "--set", "model.hurst=0.2"]);
    assert_eq!(code(&o), 0);
    assert!(json(&o)["vix"]["curvature_value"].is_null());
}

#[test]
fn missing_field_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[model]\nhurst = 0.1\nnu = 1.0\neta = 1.0\nrho = 0.0\n").unwrap();
    let o = rbergomi(&["asymptotics", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("v0"), "{}", stderr(&o));
}

#[test]
fn invalid_values_are_validation_errors() {
    for set in ["model.rho=1.5", "sim.n_paths=1", "model.rho1=0.9", "smile.maturity=-1"] {
        let o = rbergomi(&["smile-vix", "--set", set, "--set", "model.rho2=0.9"]);
        assert_eq!(code(&o), 1, "{set}: {}", stderr(&o));
    }
    assert_eq!(code(&rbergomi(&["nonsense"])), 1);
    assert_eq!(code(&rbergomi(&["--help"])), 0);
}

fn smile_to(path: &Path, workers: &str) -> Vec<u8> {
    let o = rbergomi(&[
        "smile-spx",
        "--workers",
        workers,
        "--set",
        "sim.n_paths=4000",
        "--set",
        "sim.n_steps=16",
        "--set",
        "sim.seed=9",
        "-o",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    std::fs::read(path).unwrap()
}

#[test]
fn smile_output_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = smile_to(&dir.path().join("a.csv"), "1");
    let b = smile_to(&dir.path().join("b.csv"), "3");
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "maturity,log_strike,price,price_se,implied_vol,iv_se");
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 11);
    assert!(text.contains("# atm_level="));
    assert!(text.contains("# limit_skew="));
    // 17 significant digits survive a round trip
    let first: f64 = rows[0].split(',').nth(2).unwrap().parse().unwrap();
    assert_eq!(format!("{first:.16e}"), rows[0].split(',').nth(2).unwrap());
}

#[test]
fn empty_strike_list_is_a_usage_error() {
    let o = rbergomi(&["smile-vix", "--set", "smile.log_strikes=[]"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("log_strikes"));
}

#[test]
fn verify_passes_and_detects_perturbation() {
    let o = rbergomi(&["verify"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let v = json(&o);
    let checks = v["checks"].as_array().unwrap();
    let names: Vec<&str> = checks.iter().map(|c| c["name"].as_str().unwrap()).collect();
    for n in [
        "jg_closed_form_vs_quadrature",
        "bs_atm_identities",
        "generic_vs_explicit_limits",
        "special_cases_rho_0_1",
        "calibration_reproduces_limits",
    ] {
        assert!(names.contains(&n), "{n}");
    }
    assert!(checks.iter().all(|c| c["tolerance"].as_f64().unwrap() > 0.0));

    let o = rbergomi(&["verify", "--perturb-g12", "1.01", "--cases", "5"]);
    assert_eq!(code(&o), 2);
    let v = json(&o);
    let jg = &v["checks"][0];
    assert_eq!(jg["name"], "jg_closed_form_vs_quadrature");
    assert_eq!(jg["pass"], false);
}

#[test]
fn calibration_roundtrip_through_asymptotics_report() {
    let dir = tempfile::tempdir().unwrap();
    let limits = dir.path().join("limits.json");
    let o = rbergomi(&[
        "asymptotics",
        "--set",
        "model.delta=0.08333333333333333",
        "-o",
        limits.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let o = rbergomi(&["calibrate", "--limits", limits.to_str().unwrap()]);
    let v = json(&o);
    assert!(v["converged"].as_bool().unwrap());
    assert!(v["residuals"]["vix_skew"].as_f64().unwrap() < 1e-6);
    let max = ["spx_level", "spx_skew", "vix_level", "vix_skew", "vix_curvature"]
        .iter()
        .map(|k| v["residuals"][k].as_f64().unwrap())
        .fold(0.0, f64::max);
    assert!(max < 1e-6);
    assert!((v["params"]["hurst"].as_f64().unwrap() - 0.1).abs() < 1e-12);
    // the VIX limits leave a one-parameter family, so several roots are listed
    assert_eq!(v["status"], "multiple_roots");
    assert!(!v["alternatives"].as_array().unwrap().is_empty());
    assert_eq!(code(&o), 4);
}

#[test]
fn calibration_failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ \"spx_level\": 0.2 ").unwrap();
    let o = rbergomi(&["calibrate", "--limits", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 1);

    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[observed]\nspx_level = 0.2\nspx_skew_coeff = -0.2\n\
         spx_skew_term = [{ maturity = 0.004, skew = 0.18 }, { maturity = 0.02, skew = 0.1 }]\n\
         vix_level = 1.3\nvix_skew = 1.5\nvix_curv_coeff = -50.0\ndelta = 0.0833\n",
    )
    .unwrap();
    let o = rbergomi(&["calibrate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("no root"), "{}", stderr(&o));

    assert_eq!(code(&rbergomi(&["calibrate"])), 1);
}

#[test]
fn term_structure_and_sweep_tables() {
    let o = rbergomi(&[
        "term-structure",
        "--set",
        "sim.n_paths=2000",
        "--set",
        "term_structure.underlying=\"spx\"",
        "--set",
        "sim.n_steps=8",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.starts_with("underlying,maturity,level,"));
    assert_eq!(s.lines().filter(|l| l.starts_with("spx,")).count(), 3);

    let o = rbergomi(&["sweep", "--set", "sweep.a_steps=3", "--set", "sweep.b_steps=4"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().filter(|l| !l.starts_with('#')).count(), 1 + 12);
    let o = rbergomi(&["sweep", "--set", "model.hurst=0.3"]);
    assert_eq!(code(&o), 1);
}
