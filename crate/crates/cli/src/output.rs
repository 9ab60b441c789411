use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

/// One output directory per run. Files are written through this type so the
/// manifest can list them; nothing time- or host-dependent goes to disk.
pub struct RunDir {
    root: PathBuf,
    files: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    seed: u64,
    files: &'a [String],
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::Run(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Run(format!("cannot write {}: {e}", path.display())))?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Run(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Runs `f` against an in-memory buffer and stores the result.
    pub fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| CliError::Run(e.to_string()))?;
        self.write(name, &buf)
    }

    pub fn finish(mut self, command: &str, seed: u64) -> Result<PathBuf, CliError> {
        let mut files = std::mem::take(&mut self.files);
        files.sort();
        let manifest = Manifest { tool: "paragate", version: env!("CARGO_PKG_VERSION"), command, seed, files: &files };
        self.write_json("manifest.json", &manifest)?;
        Ok(self.root)
    }
}
