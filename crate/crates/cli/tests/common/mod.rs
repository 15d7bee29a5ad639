//! Helpers shared by the CLI integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use jsonschema::{Registry, Validator};
use serde_json::Value;

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn config(name: &str) -> PathBuf {
    workspace_root().join("configs").join(name)
}

/// Runs the binary with `--out` pointed at `out`.
pub fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_redistill"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("REDISTILL_OUT")
        .output()
        .expect("binary runs")
}

pub fn code(output: &Output) -> i32 {
    output.status.code().expect("exited normally")
}

pub fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

pub fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

pub fn json(output: &Output) -> Value {
    serde_json::from_slice(&output.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", stdout(output)))
}

fn read_schema(name: &str) -> Value {
    let path = workspace_root().join("schemas").join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

const SCHEMAS: [(&str, &str); 4] = [
    ("urn:redistill:schema:experiment", "experiment.schema.json"),
    ("urn:redistill:schema:metrics", "metrics.schema.json"),
    ("urn:redistill:schema:checkpoint", "checkpoint.schema.json"),
    ("urn:redistill:schema:output", "output.schema.json"),
];

/// Validator for one schema file; cross-file references resolve to the
/// other files in `schemas/`.
pub fn validator(name: &str) -> Validator {
    let docs: Vec<(&str, Value)> = SCHEMAS.iter().map(|&(uri, file)| (uri, read_schema(file))).collect();
    let registry = Registry::new()
        .extend(docs.iter().map(|(uri, doc)| (*uri, doc)))
        .and_then(|b| b.prepare())
        .expect("schemas register");
    let schema = read_schema(name);
    jsonschema::options()
        .with_registry(&registry)
        .build(&schema)
        .unwrap_or_else(|e| panic!("{name} does not compile: {e}"))
}

/// Panics with every violation when `value` does not match.
pub fn assert_valid(validator: &Validator, value: &Value, what: &str) {
    let errors: Vec<String> = validator
        .iter_errors(value)
        .map(|e| format!("{} at {}", e, e.instance_path()))
        .collect();
    assert!(errors.is_empty(), "{what} violates its schema:\n{}", errors.join("\n"));
}

/// Drops wall-clock fields so two runs can be compared.
pub fn without_timings(mut value: Value) -> Value {
    fn strip(v: &mut Value) {
        match v {
            Value::Object(map) => {
                map.remove("wall_time_secs");
                map.values_mut().for_each(strip);
            }
            Value::Array(items) => items.iter_mut().for_each(strip),
            _ => {}
        }
    }
    strip(&mut value);
    value
}
