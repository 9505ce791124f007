use std::path::Path;

use condreg::model::Dataset;
use serde::Serialize;

use crate::error::CliError;

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    let text = read_text(path)?;
    Ok(Dataset::from_csv_reader(text.as_bytes())?)
}

/// Numbers separated by commas or whitespace, with an optional header line
/// `y`.
pub fn parse_values(text: &str) -> Result<Vec<f64>, CliError> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty()).peekable();
    if lines.peek().is_some_and(|l| l.eq_ignore_ascii_case("y")) {
        lines.next();
    }
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            let v: f64 = tok
                .parse()
                .map_err(|_| CliError::data(format!("line {}: bad number {tok:?}", k + 1)))?;
            if !v.is_finite() {
                return Err(CliError::data(format!("line {}: non-finite value", k + 1)));
            }
            out.push(v);
        }
    }
    Ok(out)
}

/// Splits on commas outside parentheses, so `t(1),cbeta(0.5,0.5)` gives two
/// items.
pub fn split_top_level(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(std::mem::take(&mut cur));
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    out.push(cur);
    out.into_iter().map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect()
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::invalid(format!("serialization: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::invalid(format!("serialization: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::invalid(format!("serialization: {e}")))?;
    String::from_utf8(bytes).map_err(|e| CliError::invalid(format!("serialization: {e}")))
}
