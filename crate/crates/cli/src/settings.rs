//! Numeric pipeline settings from a `key=value` file plus flag overrides.
//!
//! Precedence is flag, then file, then built-in default. The seed has one
//! extra fallback, the `VTNET_SEED` environment variable, between the file
//! and the default of 0.

use anyhow::{bail, Context, Result};
use std::path::Path;
use std::str::FromStr;
use vtnet_core::config::KeyValues;
use vtnet_core::eval::CvConfig;

pub const SEED_ENV: &str = "VTNET_SEED";

/// Recognized keys, in the order they are documented.
pub const KEYS: &[&str] = &[
    "seed",
    "trim_ms",
    "window_s",
    "n_splits",
    "seq_len",
    "downsize",
    "dot_intensity",
    "line_intensity",
    "hidden_size",
    "conv_filters1",
    "conv_filters2",
    "kernel_size",
    "head_hidden",
    "max_epochs",
    "lr0",
    "batch_size",
    "patience",
    "runs",
    "folds",
    "val_frac",
    "val_retries",
    "smote_percent",
    "smote_k",
    "task_votes",
    "jobs",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub cv: CvConfig,
    pub seed: u64,
}

/// Reads the optional config file and applies `overrides` on top.
pub fn resolve(file: Option<&Path>, overrides: &KeyValues) -> Result<Settings> {
    let mut kv = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            KeyValues::parse(&text)
                .map_err(|e| anyhow::anyhow!(e))
                .with_context(|| format!("parsing config {}", p.display()))?
        }
        None => KeyValues::default(),
    };
    kv.merge(overrides);
    apply(&kv)
}

fn apply(kv: &KeyValues) -> Result<Settings> {
    if let Some(bad) = kv.keys().find(|k| !KEYS.contains(k)) {
        bail!("unknown setting `{bad}`");
    }
    let mut cv = CvConfig::default();
    let p = &mut cv.preprocess;
    set(kv, "trim_ms", &mut p.trim_ms)?;
    set(kv, "window_s", &mut p.window_s)?;
    set(kv, "n_splits", &mut p.n_splits)?;
    set(kv, "seq_len", &mut p.seq_len)?;
    set(kv, "downsize", &mut p.raster.downsize)?;
    set(kv, "dot_intensity", &mut p.raster.dot_intensity)?;
    set(kv, "line_intensity", &mut p.raster.line_intensity)?;
    let m = &mut cv.model;
    set(kv, "hidden_size", &mut m.hidden_size)?;
    set(kv, "conv_filters1", &mut m.conv_filters.0)?;
    set(kv, "conv_filters2", &mut m.conv_filters.1)?;
    set(kv, "kernel_size", &mut m.kernel_size)?;
    set(kv, "head_hidden", &mut m.head_hidden)?;
    set(kv, "max_epochs", &mut m.max_epochs)?;
    set(kv, "lr0", &mut m.lr0)?;
    set(kv, "batch_size", &mut m.batch_size)?;
    set(kv, "patience", &mut m.patience)?;
    set(kv, "runs", &mut cv.runs)?;
    set(kv, "folds", &mut cv.folds)?;
    set(kv, "val_frac", &mut cv.val_frac)?;
    set(kv, "val_retries", &mut cv.val_retries)?;
    set(kv, "smote_percent", &mut cv.smote_percent)?;
    set(kv, "smote_k", &mut cv.smote_k)?;
    set(kv, "task_votes", &mut cv.task_votes)?;
    set(kv, "jobs", &mut cv.jobs)?;
    if cv.jobs == 0 {
        bail!("jobs must be at least 1");
    }
    let seed = match kv.get_parsed::<u64>("seed").map_err(anyhow::Error::msg)? {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    Ok(Settings { cv, seed })
}

fn set<T: FromStr>(kv: &KeyValues, key: &str, slot: &mut T) -> Result<()> {
    if let Some(v) = kv.get_parsed(key).map_err(anyhow::Error::msg)? {
        *slot = v;
    }
    Ok(())
}

/// Seed from `VTNET_SEED`, if set.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .with_context(|| format!("{SEED_ENV}=`{v}` is not an unsigned integer")),
        Err(_) => Ok(None),
    }
}

/// Parses a `key=value` flag argument.
pub fn parse_assignment(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err("empty key".into());
    }
    Ok((k.to_string(), v.trim().to_string()))
}
