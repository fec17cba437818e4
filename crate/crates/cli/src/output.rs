use serde::Serialize;

use crate::CliError;

/// 17 significant digits, enough to round-trip any f64.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Output(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// CSV with a header row, then `# key=value` comment lines.
pub fn csv(header: &[&str], rows: &[Vec<String>], comments: &[(String, String)]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| CliError::Output(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::Output(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Output(e.to_string()))?;
    let mut s = String::from_utf8(bytes).map_err(|e| CliError::Output(e.to_string()))?;
    for (k, v) in comments {
        s.push_str(&format!("# {k}={v}\n"));
    }
    Ok(s)
}
