//! Shared header check for versioned JSON model files.

use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
}

/// Reject `text` unless it is well-formed JSON whose header names `format`
/// at `version`. Body decoding is left to the caller.
pub(crate) fn check_header(text: &str, format: &str, version: u32) -> Result<()> {
    let header: Header = serde_json::from_str(text).map_err(Error::from_json)?;
    if header.format != format {
        return Err(Error::SchemaMismatch(format!(
            "expected format {format:?}, found {:?}",
            header.format
        )));
    }
    if header.version != version {
        return Err(Error::Version {
            found: header.version,
            expected: version,
        });
    }
    Ok(())
}
