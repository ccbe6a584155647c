use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::CliError;
use crate::gossip::Variant;

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Provenance written at the top of every output file as `#` lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Metadata {
    pub config_hash: String,
    pub seed: u64,
    pub variant: Variant,
}

impl Metadata {
    pub fn write_header<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "# tool = {TOOL_VERSION}")?;
        writeln!(out, "# config_sha256 = {}", self.config_hash)?;
        writeln!(out, "# seed = {}", self.seed)?;
        writeln!(out, "# variant = {}", self.variant)
    }
}

/// Output files of one command, written into one directory.
pub(super) struct OutputDir {
    dir: PathBuf,
    meta: Metadata,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(dir: &Path, meta: Metadata) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.to_path_buf(), source })?;
        Ok(Self { dir: dir.to_path_buf(), meta, written: Vec::new() })
    }

    /// Writes `name` with the metadata header followed by whatever `body` emits.
    pub fn write(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let wrap = |source| CliError::Write { path: path.clone(), source };
        let mut out = BufWriter::new(File::create(&path).map_err(wrap)?);
        self.meta.write_header(&mut out).map_err(wrap)?;
        body(&mut out).map_err(wrap)?;
        out.flush().map_err(wrap)?;
        self.written.push(path);
        Ok(())
    }

    pub fn into_files(self) -> Vec<PathBuf> {
        self.written
    }
}

/// `[a, b, c]` with round-trip float formatting.
pub(super) fn list(values: &[f64]) -> String {
    let items: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
    format!("[{}]", items.join(", "))
}
