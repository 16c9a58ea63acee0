use std::ffi::OsString;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

/// Replay record written next to each output as `<output>.run.json`.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub seed: Option<u64>,
    /// Every flag after defaults were applied.
    pub flags: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

pub fn run_manifest_path(output: &Path) -> PathBuf {
    let mut name = OsString::from(output.as_os_str());
    name.push(".run.json");
    PathBuf::from(name)
}

pub fn write_run_manifests(
    subcommand: &'static str,
    flags: &impl Serialize,
    seed: Option<u64>,
    inputs: &[&Path],
    outputs: &[&Path],
) -> Result<(), CliError> {
    let manifest = RunManifest {
        tool: "gue",
        version: env!("CARGO_PKG_VERSION"),
        subcommand,
        seed,
        flags: serde_json::to_value(flags)?,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    for out in outputs {
        std::fs::write(run_manifest_path(out), &text)?;
    }
    Ok(())
}
