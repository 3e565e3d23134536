//! Versioned JSON serialization for MLP parameters.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::MlpParams;
use crate::error::{Error, Result};

pub const MLP_FORMAT_VERSION: u32 = 1;
const MLP_FORMAT: &str = "deepchoice-mlp";

#[derive(Serialize, Deserialize)]
struct MlpFile {
    format: String,
    version: u32,
    params: MlpParams,
}

pub fn write_mlp(params: &MlpParams, mut out: impl Write) -> Result<()> {
    let file = MlpFile {
        format: MLP_FORMAT.to_string(),
        version: MLP_FORMAT_VERSION,
        params: params.clone(),
    };
    serde_json::to_writer(&mut out, &file).map_err(|e| Error::Corrupt(e.to_string()))?;
    out.flush()?;
    Ok(())
}

pub fn read_mlp(mut input: impl Read) -> Result<MlpParams> {
    let mut buf = String::new();
    input.read_to_string(&mut buf)?;
    let raw: serde_json::Value =
        serde_json::from_str(&buf).map_err(|e| Error::Corrupt(e.to_string()))?;
    check_header(&raw, MLP_FORMAT, MLP_FORMAT_VERSION)?;
    let file: MlpFile = serde_json::from_value(raw).map_err(|e| Error::Corrupt(e.to_string()))?;
    file.params.validate()?;
    Ok(file.params)
}

pub fn save_mlp(params: &MlpParams, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_mlp(params, &mut buf)?;
    crate::util::write_atomic(path.as_ref(), &buf)
}

pub fn load_mlp(path: impl AsRef<Path>) -> Result<MlpParams> {
    read_mlp(std::fs::File::open(path)?)
}

/// Validates the `format` / `version` fields of a decoded JSON document.
pub(crate) fn check_header(raw: &serde_json::Value, format: &str, version: u32) -> Result<()> {
    let found_format = raw.get("format").and_then(|v| v.as_str());
    if found_format != Some(format) {
        return Err(Error::Corrupt(format!(
            "expected format {format:?}, found {found_format:?}"
        )));
    }
    let found = raw
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Corrupt("missing version field".into()))?;
    if found != version as u64 {
        return Err(Error::Version {
            found: found as u32,
            expected: version,
        });
    }
    Ok(())
}
