//! Run configuration: a TOML file with `--set dotted.path=value`
//! overrides applied on top before deserialization.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use toml::{Table, Value};

/// Parses an override value as TOML, falling back to a bare string.
fn parse_value(text: &str) -> Value {
    let probe = format!("v = {text}");
    match probe.parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(text.into())),
        Err(_) => Value::String(text.into()),
    }
}

pub fn apply_override(root: &mut Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override {assignment:?} is not of the form key.path=value"))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("override {assignment:?} has an empty key");
    }
    let mut table = root;
    for k in &keys[..keys.len() - 1] {
        let entry = table.entry(k.to_string()).or_insert_with(|| Value::Table(Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("override {assignment:?}: {k} is not a table"))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

pub fn load_table(path: Option<&Path>) -> Result<Table> {
    let Some(path) = path else {
        return Ok(Table::new());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    text.parse::<Table>()
        .map_err(|e| anyhow!("{}: {e}", path.display()))
}

/// Resolved config and the table it came from (kept for the run record).
pub fn resolve<T: DeserializeOwned + serde::Serialize>(path: Option<&Path>, overrides: &[String]) -> Result<(T, Table)> {
    let mut table = load_table(path)?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let cfg: T = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| anyhow!("invalid configuration: {e}"))?;
    let resolved = Value::try_from(&cfg)
        .context("serializing resolved configuration")?
        .as_table()
        .cloned()
        .unwrap_or_default();
    Ok((cfg, resolved))
}
