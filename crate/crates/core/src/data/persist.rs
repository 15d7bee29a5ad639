use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::neural::Mlp;

/// Version stamped into every metrics record, checkpoint, and saved config.
pub const SCHEMA_VERSION: u32 = 1;

const VERSION_KEY: &str = "schema_version";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> Error + '_ {
    move |source| Error::Json {
        path: path.to_path_buf(),
        source,
    }
}

/// Pretty-printed JSON; floats use the shortest representation that parses
/// back to the same bits.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, value).map_err(json_err(path))?;
    writer.write_all(b"\n").map_err(io_err(path))?;
    writer.flush().map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(json_err(path))
}

fn stamp(path: &Path, value: impl Serialize) -> Result<Value> {
    let mut v = serde_json::to_value(value).map_err(json_err(path))?;
    if let Value::Object(map) = &mut v {
        map.insert(VERSION_KEY.into(), Value::from(SCHEMA_VERSION));
    }
    Ok(v)
}

/// Removes and checks the version key. `required = false` accepts objects
/// without one.
fn unstamp(value: &mut Value, required: bool) -> Result<()> {
    let found = value.as_object_mut().and_then(|m| m.remove(VERSION_KEY));
    match found {
        None if !required => Ok(()),
        None => Err(Error::SchemaVersion {
            found: 0,
            expected: SCHEMA_VERSION,
        }),
        Some(v) => match v.as_u64() {
            Some(n) if n == u64::from(SCHEMA_VERSION) => Ok(()),
            other => Err(Error::SchemaVersion {
                found: other.map_or(0, |n| u32::try_from(n).unwrap_or(u32::MAX)),
                expected: SCHEMA_VERSION,
            }),
        },
    }
}

/// Writes a JSON array with one versioned object per record.
pub fn save_metrics<T: Serialize>(records: &[T], path: &Path) -> Result<()> {
    let values = records
        .iter()
        .map(|r| stamp(path, r))
        .collect::<Result<Vec<_>>>()?;
    write_json(path, &values)
}

pub fn load_metrics<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let values: Vec<Value> = read_json(path)?;
    values
        .into_iter()
        .map(|mut v| {
            unstamp(&mut v, true)?;
            serde_json::from_value(v).map_err(json_err(path))
        })
        .collect()
}

pub fn save_config<T: Serialize>(config: &T, path: &Path) -> Result<()> {
    write_json(path, &stamp(path, config)?)
}

/// Loads a config; a missing version key is accepted, a wrong one is not.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let mut v: Value = read_json(path)?;
    unstamp(&mut v, false)?;
    serde_json::from_value(v).map_err(json_err(path))
}

/// On-disk model: spec, then per-layer row-major weights and biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub model: Mlp,
}

pub fn save_checkpoint(model: &Mlp, path: &Path) -> Result<()> {
    write_json(
        path,
        &Checkpoint {
            schema_version: SCHEMA_VERSION,
            model: model.clone(),
        },
    )
}

pub fn load_checkpoint(path: &Path) -> Result<Mlp> {
    let mut v: Value = read_json(path)?;
    unstamp(&mut v, true)?;
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Body {
        model: Mlp,
    }
    let body: Body = serde_json::from_value(v).map_err(json_err(path))?;
    Ok(body.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::MlpSpec;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        x: f64,
        name: String,
        series: Vec<f64>,
    }

    #[test]
    fn metrics_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_metrics::<Row>(&[], &path).unwrap();
        assert!(load_metrics::<Row>(&path).unwrap().is_empty());

        let rows = vec![Row {
            x: 0.1 + 0.2,
            name: "a".into(),
            series: vec![1.0 / 3.0, std::f64::consts::PI, 5e-324, 1.7976931348623157e308],
        }];
        save_metrics(&rows, &path).unwrap();
        let back: Vec<Row> = load_metrics(&path).unwrap();
        assert_eq!(back, rows);
        let raw: Value = read_json(&path).unwrap();
        assert_eq!(raw[0][VERSION_KEY], SCHEMA_VERSION);
    }

    #[test]
    fn wrong_or_missing_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(&path, r#"[{"schema_version": 99, "x": 1, "name": "", "series": []}]"#).unwrap();
        assert!(matches!(
            load_metrics::<Row>(&path),
            Err(Error::SchemaVersion { found: 99, expected: 1 })
        ));
        std::fs::write(&path, r#"[{"x": 1, "name": "", "series": []}]"#).unwrap();
        assert!(matches!(load_metrics::<Row>(&path), Err(Error::SchemaVersion { found: 0, .. })));
        std::fs::write(&path, r#"{"schema_version": 2, "x": 1, "name": "", "series": []}"#).unwrap();
        assert!(matches!(load_config::<Row>(&path), Err(Error::SchemaVersion { found: 2, .. })));
        std::fs::write(&path, r#"{"x": 1, "name": "", "series": []}"#).unwrap();
        assert!(load_config::<Row>(&path).is_ok());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let model = Mlp::init(MlpSpec::new(5, vec![7, 3], 4).unwrap(), 12).unwrap();
        save_checkpoint(&model, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), model);
    }

    #[test]
    fn unwritable_path_is_an_io_error() {
        let r = save_metrics::<Row>(&[], Path::new("/nonexistent-dir/x/m.json"));
        assert!(matches!(r, Err(Error::Io { .. })));
    }
}
