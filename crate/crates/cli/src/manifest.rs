//! Per-command manifests. The body is the effective configuration in
//! `key = value` form; provenance lines are comments so the whole file
//! loads back as a config.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

pub const MANIFEST_TAG: &str = "# savehr-manifest/1";

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| savehr::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Renders a manifest. `inputs` and `outputs` are paths relative to
/// `root`; digests are taken from the files on disk.
pub fn render(
    command: &str,
    cfg: &RunConfig,
    root: &Path,
    inputs: &[String],
    outputs: &[String],
) -> Result<String, CliError> {
    let mut out = format!(
        "{MANIFEST_TAG}\n# command: {command}\n# version: {}\n",
        env!("CARGO_PKG_VERSION")
    );
    for (role, list) in [("input", inputs), ("output", outputs)] {
        for rel in list {
            out.push_str(&format!("# {role}: {rel} sha256={}\n", sha256_file(&root.join(rel))?));
        }
    }
    out.push_str(&cfg.to_text());
    Ok(out)
}
