//! JSON config overlay: a file whose top-level keys are subcommand
//! names and whose entries use the long flag names. Values given on the
//! command line always win; the overlay only fills gaps.

use std::path::{Path, PathBuf};

use serde_json::Value;

pub struct Overlay {
    root: Value,
}

pub struct Section<'a> {
    table: Option<&'a serde_json::Map<String, Value>>,
}

impl Overlay {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let root = match path {
            None => Value::Null,
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| format!("cannot read config {}: {e}", p.display()))?;
                serde_json::from_str(&text)
                    .map_err(|e| format!("invalid config {}: {e}", p.display()))?
            }
        };
        Ok(Self { root })
    }

    pub fn section(&self, name: &str) -> Section<'_> {
        Section {
            table: self.root.get(name).and_then(Value::as_object),
        }
    }
}

impl Section<'_> {
    fn get(&self, key: &str) -> Option<&Value> {
        self.table.and_then(|t| t.get(key))
    }

    pub fn string(&self, key: &str, flag: Option<String>) -> Option<String> {
        flag.or_else(|| self.get(key).and_then(Value::as_str).map(str::to_string))
    }

    pub fn u64(&self, key: &str, flag: Option<u64>) -> Option<u64> {
        flag.or_else(|| self.get(key).and_then(Value::as_u64))
    }

    pub fn f64(&self, key: &str, flag: Option<f64>) -> Option<f64> {
        flag.or_else(|| self.get(key).and_then(Value::as_f64))
    }

    pub fn bool(&self, key: &str) -> Option<bool> {
        self.get(key).and_then(Value::as_bool)
    }

    pub fn path(&self, key: &str, flag: Option<PathBuf>) -> Option<PathBuf> {
        flag.or_else(|| self.get(key).and_then(Value::as_str).map(PathBuf::from))
    }

    /// Flat list of paths.
    pub fn paths(&self, key: &str) -> Option<Vec<PathBuf>> {
        let arr = self.get(key)?.as_array()?;
        Some(
            arr.iter()
                .filter_map(Value::as_str)
                .map(PathBuf::from)
                .collect(),
        )
    }
}
