//! Artifact files: JSON objects with fixed key order and 17 significant
//! digits, plus tab-separated tables. Nothing time- or host-dependent goes
//! here; that lives in the run log.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{Map, Number, Value};
use sha2::{Digest, Sha256};

use bgwqsd_core::io::sig17;
use bgwqsd_core::StateVector;

use crate::config::Stage;
use crate::CliError;

pub const LOG_FILE: &str = "run.log";
pub const SUMMARY_FILE: &str = "summary.json";
pub const KERNEL_TRIPLETS: &str = "kernel.triplets";
pub const KERNEL_STATES: &str = "kernel.states";

/// Insertion-ordered JSON object.
#[derive(Default)]
pub struct Obj(Map<String, Value>);

impl Obj {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.0.insert(key.to_string(), value.into());
        self
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.0.insert(key.to_string(), value.into());
    }
}

impl From<Obj> for Value {
    fn from(o: Obj) -> Value {
        Value::Object(o.0)
    }
}

/// A float at 17 significant digits; non-finite values become `null`.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        Value::Number(Number::from_str(&sig17(x)).expect("sig17 is valid JSON"))
    } else {
        Value::Null
    }
}

pub fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}

pub fn opt_num(x: Option<f64>) -> Value {
    x.map_or(Value::Null, num)
}

pub fn state(z: &StateVector) -> Value {
    Value::from(z.counts().to_vec())
}

pub fn artifact_path(dir: &Path, stage: Stage) -> PathBuf {
    dir.join(format!("{}.json", stage.name()))
}

pub fn write_json(path: &Path, value: impl Into<Value>) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(&value.into()).expect("JSON values serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Artifact(format!("{}: {e}", path.display())))
}

/// Typed access to a parsed artifact, with the file name in every error.
pub struct Artifact {
    pub name: String,
    pub value: Value,
}

impl Artifact {
    pub fn load(dir: &Path, stage: Stage) -> Result<Self, CliError> {
        let path = artifact_path(dir, stage);
        Ok(Self {
            name: stage.name().to_string(),
            value: read_json(&path)?,
        })
    }

    fn missing(&self, key: &str) -> CliError {
        CliError::Artifact(format!("{}: missing or malformed `{key}`", self.name))
    }

    pub fn get(&self, key: &str) -> Result<&Value, CliError> {
        self.value.get(key).ok_or_else(|| self.missing(key))
    }

    pub fn f64(&self, key: &str) -> Result<f64, CliError> {
        self.get(key)?.as_f64().ok_or_else(|| self.missing(key))
    }

    pub fn u64(&self, key: &str) -> Result<u64, CliError> {
        self.get(key)?.as_u64().ok_or_else(|| self.missing(key))
    }

    pub fn bool(&self, key: &str) -> Result<bool, CliError> {
        self.get(key)?.as_bool().ok_or_else(|| self.missing(key))
    }

    pub fn str(&self, key: &str) -> Result<&str, CliError> {
        self.get(key)?.as_str().ok_or_else(|| self.missing(key))
    }

    pub fn f64s(&self, key: &str) -> Result<Vec<f64>, CliError> {
        as_f64s(self.get(key)?).ok_or_else(|| self.missing(key))
    }
}

pub fn as_f64s(v: &Value) -> Option<Vec<f64>> {
    v.as_array()?.iter().map(Value::as_f64).collect()
}

pub fn as_state(v: &Value) -> Option<StateVector> {
    v.as_array()?
        .iter()
        .map(Value::as_u64)
        .collect::<Option<Vec<_>>>()
        .map(StateVector::new)
}

/// SHA-256 of the kernel files, tying downstream artifacts to one kernel.
pub fn kernel_fingerprint(dir: &Path) -> Result<String, CliError> {
    let mut h = Sha256::new();
    for name in [KERNEL_TRIPLETS, KERNEL_STATES] {
        let path = dir.join(name);
        h.update(fs::read(&path).map_err(|e| CliError::io(&path, e))?);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Appends timestamped lines to the run log.
pub struct RunLog {
    path: PathBuf,
}

impl RunLog {
    pub fn open(dir: &Path) -> Self {
        Self {
            path: dir.join(LOG_FILE),
        }
    }

    pub fn line(&self, message: &str) {
        let t = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        // Logging is best effort; a failed write must not fail the run.
        if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(&self.path) {
            let _ = writeln!(f, "{}.{:03} {message}", t.as_secs(), t.subsec_millis());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_keep_seventeen_digits() {
        let v = Obj::new().with("b", num(0.1)).with("a", num(f64::INFINITY));
        let text = serde_json::to_string(&Value::from(v)).unwrap();
        assert_eq!(text, r#"{"b":1.0000000000000001e-1,"a":null}"#);
        let back: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["b"].as_f64(), Some(0.1));
    }
}
