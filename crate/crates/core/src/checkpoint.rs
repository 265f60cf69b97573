//! Versioned JSON checkpoint container.
//!
//! Every checkpoint on disk is a JSON object
//! `{"format": <kind>, "version": 1, "config_hash": <hex or null>, "payload": {...}}`.
//! Floats are written in shortest round-trip form and parsed exactly, so a
//! save/load cycle reproduces every parameter bit for bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Container<T> {
    pub format: String,
    pub version: u32,
    pub config_hash: Option<String>,
    pub payload: T,
}

impl<T> Container<T> {
    pub fn new(format: &str, config_hash: Option<String>, payload: T) -> Self {
        Container {
            format: format.to_string(),
            version: FORMAT_VERSION,
            config_hash,
            payload,
        }
    }
}

impl<T: DeserializeOwned> Container<T> {
    pub fn from_json(text: &str, format: &str) -> Result<Self> {
        let container: Container<T> = serde_json::from_str(text)?;
        if container.format != format {
            return Err(Error::Format {
                what: "checkpoint",
                reason: format!("expected format `{format}`, found `{}`", container.format),
            });
        }
        if container.version != FORMAT_VERSION {
            return Err(Error::Format {
                what: "checkpoint",
                reason: format!("unsupported version {}", container.version),
            });
        }
        Ok(container)
    }
}

pub fn save<T: Serialize>(
    path: &Path,
    format: &str,
    config_hash: Option<&str>,
    payload: &T,
) -> Result<()> {
    let container = Container::new(format, config_hash.map(str::to_string), payload);
    let text = serde_json::to_string(&container)?;
    write_atomic(path, text.as_bytes())
}

pub fn load<T: DeserializeOwned>(path: &Path, format: &str) -> Result<Container<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Container::from_json(&text, format)
}

/// Writes through a sibling temp file and renames, so readers never observe
/// a half-written checkpoint.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let tmp = path.with_extension("tmp");
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
