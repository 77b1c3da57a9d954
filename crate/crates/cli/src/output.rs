//! Output tables and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use spillover::io::{fmt_num, write_csv, write_text};
use spillover::normal;

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

/// Two-sided normal p-value of `estimate / se`.
pub fn p_value(estimate: f64, se: f64) -> f64 {
    if se > 0.0 {
        2.0 * normal::cdf(-(estimate / se).abs())
    } else {
        f64::NAN
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)?;
    Ok(())
}

/// Rows of `name, value...` with every number at full precision.
pub fn numeric_rows(rows: impl IntoIterator<Item = (Vec<String>, Vec<f64>)>) -> Vec<Vec<String>> {
    rows.into_iter()
        .map(|(mut labels, values)| {
            labels.extend(values.into_iter().map(fmt_num));
            labels
        })
        .collect()
}

pub fn write_table(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    write_csv(path, header, &rows)?;
    Ok(())
}

/// What is needed to rerun a command: resolved settings, input digests and versions.
#[derive(Debug, Serialize)]
pub struct Manifest<'a, S: Serialize> {
    pub command: &'a str,
    pub seed: Option<u64>,
    pub versions: BTreeMap<&'static str, &'static str>,
    /// SHA-256 of the resolved settings serialized as JSON.
    pub config_hash: String,
    pub settings: &'a S,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

pub fn write_manifest<S: Serialize>(
    out: &Path,
    command: &str,
    seed: Option<u64>,
    settings: &S,
    inputs: &[&Path],
    outputs: &[&str],
) -> Result<PathBuf> {
    let config_hash = sha256_hex(serde_json::to_string(settings)?.as_bytes());
    let mut digests = BTreeMap::new();
    for p in inputs {
        digests.insert(p.display().to_string(), file_digest(p)?);
    }
    let versions = BTreeMap::from([
        ("spillover-cli", env!("CARGO_PKG_VERSION")),
        ("spillover-core", spillover::VERSION),
    ]);
    let manifest = Manifest {
        command,
        seed,
        versions,
        config_hash,
        settings,
        inputs: digests,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    };
    let path = out.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p_value_reference_points() {
        assert!((p_value(1.959963984540054, 1.0) - 0.05).abs() < 1e-12);
        assert_eq!(p_value(0.0, 1.0), 1.0);
        assert!(p_value(1.0, 0.0).is_nan());
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
