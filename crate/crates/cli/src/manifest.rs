use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::CliResult;

/// Everything needed to rerun a command: the resolved configuration, seed,
/// library version and digests of every input file.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Value,
    pub defaults: Value,
    pub seed: Option<u64>,
    pub version: String,
    pub input_digests: BTreeMap<String, String>,
    pub timestamp_unix: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rng: Option<String>,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: Value) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            config,
            defaults: library_defaults(),
            seed: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
            input_digests: BTreeMap::new(),
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            rng: None,
        }
    }

    /// Records the SHA-256 of an input file. Missing files are left for the
    /// reader to report.
    pub fn add_input(&mut self, path: &Path) {
        if let Ok(bytes) = fs::read(path) {
            self.input_digests
                .insert(path.display().to_string(), sha256_hex(&bytes));
        }
    }

    pub fn write_sidecar(&self, out: &Path) -> CliResult<()> {
        let mut name = out.as_os_str().to_owned();
        name.push(".manifest.json");
        fs::write(&name, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Library defaults, recorded in every manifest whether or not a command uses
/// or overrides them.
pub fn library_defaults() -> Value {
    json!({
        "a": hetvar::model::DEFAULT_BOUNDS.lo,
        "b": hetvar::model::DEFAULT_BOUNDS.hi,
        "d": hetvar::mixture_em::DEFAULT_D,
        "alpha": hetvar::intervals::DEFAULT_ALPHA,
        "beta": hetvar::hypothesis::DEFAULT_BETA,
        "grid_res": hetvar::intervals::DEFAULT_GRID_RES,
        "macl_tol": hetvar::macl::DEFAULT_TOL,
        "macl_max_iter": hetvar::macl::DEFAULT_MAX_ITER,
        "em_tol": hetvar::mixture_em::DEFAULT_TOL,
        "em_max_iter": hetvar::mixture_em::DEFAULT_MAX_ITER,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_string() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn defaults_always_present() {
        let m = RunManifest::new("ci", json!({}));
        assert_eq!(m.defaults["a"], 7.3);
        assert_eq!(m.defaults["b"], 13.9);
        assert_eq!(m.defaults["d"], 0.25);
        assert_eq!(m.defaults["alpha"], 0.05);
        assert_eq!(m.defaults["beta"], 1e-6);
    }
}
