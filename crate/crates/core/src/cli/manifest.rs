//! Per-command run manifests: config hash, input and output digests, toolkit
//! version. No timestamps or absolute paths, so identical runs produce
//! identical manifests.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub layer_filter: Option<u16>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

/// Digest entry for `path`, recorded under the display name `name`.
pub fn digest(name: impl Into<String>, path: &Path) -> Result<FileDigest> {
    Ok(FileDigest {
        path: name.into(),
        sha256: sha256_file(path)?,
    })
}

/// Tracks files written under an output root, by root-relative name.
#[derive(Debug)]
pub struct OutputSet {
    root: std::path::PathBuf,
    written: Vec<FileDigest>,
}

impl OutputSet {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `bytes` to `root/rel`, creating parent directories.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.written.push(FileDigest {
            path: rel.to_string(),
            sha256: sha256_bytes(bytes),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    pub fn write_png(&mut self, rel: &str, img: &image::DynamicImage) -> Result<()> {
        let mut bytes = Vec::new();
        img.write_to(
            &mut std::io::Cursor::new(&mut bytes),
            image::ImageFormat::Png,
        )
        .map_err(|e| Error::Image {
            path: self.root.join(rel),
            message: e.to_string(),
        })?;
        self.write(rel, &bytes)
    }

    /// Writes `<dir>/manifest.json` listing every file written so far.
    pub fn finish(mut self, dir: &str, mut manifest: Manifest) -> Result<()> {
        self.written.sort_by(|a, b| a.path.cmp(&b.path));
        manifest.outputs = std::mem::take(&mut self.written);
        manifest.inputs.sort_by(|a, b| a.path.cmp(&b.path));
        let rel = format!("{dir}/manifest.json");
        self.write_json(&rel, &manifest)
    }
}

impl Manifest {
    pub fn new(
        command: &str,
        config_hash: String,
        layer_filter: Option<u16>,
        inputs: Vec<FileDigest>,
    ) -> Self {
        Self {
            tool: "facetscope".to_string(),
            version: TOOL_VERSION.to_string(),
            command: command.to_string(),
            config_hash,
            layer_filter,
            inputs,
            outputs: Vec::new(),
        }
    }
}
