//! Report formatting. Floats are written with 9 significant digits so files
//! are byte-stable across runs with the same seed.

use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;
use serde_json::Value;

use evofuse_core::evo::EvalRecord;
use evofuse_core::losses::{COMPONENT_COUNT, COMPONENT_NAMES};

use crate::CliResult;

/// Rounds to 9 significant digits.
pub fn sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

pub fn fmt9(x: f64) -> String {
    format!("{}", sig9(x))
}

/// Applies [`sig9`] to every number in a JSON tree.
pub fn round_json(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = sig9(n.as_f64().expect("f64 number"));
            serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(round_json).collect()),
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}

pub fn json_string<T: Serialize>(value: &T) -> CliResult<String> {
    let v = serde_json::to_value(value).context("serializing report")?;
    let mut s = serde_json::to_string_pretty(&round_json(v)).context("serializing report")?;
    s.push('\n');
    Ok(s)
}

pub fn write_text(path: &Path, text: &str) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    write_text(path, &json_string(value)?)
}

/// Writes JSON to `out` or prints it.
pub fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> CliResult {
    match out {
        Some(p) => write_json(p, value),
        None => {
            print!("{}", json_string(value)?);
            Ok(())
        }
    }
}

fn gene_names(genes: usize) -> Vec<String> {
    if genes == COMPONENT_COUNT {
        COMPONENT_NAMES.iter().map(|n| format!("w_{n}")).collect()
    } else {
        (0..genes).map(|i| format!("g{i}")).collect()
    }
}

/// `generation,origin,<genes>,loss,fitness`; header only when empty.
pub fn history_csv(records: &[EvalRecord], genes: usize) -> String {
    let mut s = String::from("generation,origin,");
    s.push_str(&gene_names(genes).join(","));
    s.push_str(",loss,fitness\n");
    for r in records {
        s.push_str(&format!("{},{}", r.generation, r.origin.as_str()));
        for w in &r.genome.weights {
            s.push(',');
            s.push_str(&fmt9(*w));
        }
        s.push_str(&format!(",{},{}\n", fmt9(r.loss), fmt9(r.fitness)));
    }
    s
}
