// Copyright 2026 The openqoc Authors
// SPDX-License-Identifier: Apache-2.0

//! Output directory with atomic writes and the run manifest.

use std::io::Write;
use std::path::PathBuf;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Serialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
}

pub struct OutDir {
    root: PathBuf,
    pub written: Vec<OutputEntry>,
}

impl OutDir {
    pub fn create(root: PathBuf) -> std::io::Result<Self> {
        std::fs::create_dir_all(&root)?;
        Ok(OutDir { root, written: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes `name` through a temporary file in the same directory.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(self.path(name)).map_err(|e| e.error)?;
        self.written.push(OutputEntry { file: name.to_string(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> std::io::Result<()> {
        let mut s = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    /// Builds CSV text with `f` and writes it atomically.
    pub fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> openqoc_core::Result<()>,
    ) -> std::io::Result<()> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(std::io::Error::other)?;
        self.write(name, &buf)
    }

    /// Opens `name.partial` for incremental writing; [`IncrementalFile::finish`]
    /// renames it into place.
    pub fn incremental(&self, name: &str) -> std::io::Result<IncrementalFile> {
        let tmp = self.path(&format!("{name}.partial"));
        let file = std::fs::File::create(&tmp)?;
        Ok(IncrementalFile { file, tmp, dest: self.path(name), name: name.to_string() })
    }
}

pub struct IncrementalFile {
    file: std::fs::File,
    tmp: PathBuf,
    dest: PathBuf,
    name: String,
}

impl IncrementalFile {
    pub fn line(&mut self, line: &str) -> std::io::Result<()> {
        writeln!(self.file, "{line}")?;
        self.file.flush()
    }

    pub fn finish(self, out: &mut OutDir) -> std::io::Result<()> {
        self.file.sync_all()?;
        drop(self.file);
        std::fs::rename(&self.tmp, &self.dest)?;
        let bytes = std::fs::read(&self.dest)?;
        out.written.push(OutputEntry { file: self.name, sha256: sha256_hex(&bytes) });
        Ok(())
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_path: String,
    pub config_sha256: String,
    pub openqoc_version: String,
    pub openqoc_core_version: String,
    pub rng_seed: Option<u64>,
    pub threads: usize,
    pub runtime_s: f64,
    pub peak_live_matrices: usize,
    pub status: String,
    pub outputs: Vec<OutputEntry>,
}
