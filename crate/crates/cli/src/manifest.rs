use std::fmt::Display;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;

use curatornet::io::{file_digest, sha256_hex, write_atomic};

/// Staged outputs plus the resolved configuration of one command. Nothing
/// is written until [`Manifest::commit`], and the manifest file goes last.
pub struct Manifest {
    command: &'static str,
    entries: Vec<(String, String)>,
    outputs: Vec<(PathBuf, Vec<u8>)>,
}

impl Manifest {
    pub fn new(command: &'static str) -> Self {
        Manifest {
            command,
            entries: vec![
                ("command".into(), command.into()),
                ("version".into(), env!("CARGO_PKG_VERSION").into()),
            ],
            outputs: Vec::new(),
        }
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn input(&mut self, name: &str, path: &Path) -> anyhow::Result<()> {
        let digest = file_digest(path).with_context(|| format!("reading {}", path.display()))?;
        self.set(format!("input.{name}.path"), path.display());
        self.set(format!("input.{name}.sha256"), digest);
        Ok(())
    }

    pub fn stage(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.outputs.push((path, bytes));
    }

    pub fn commit(mut self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (path, bytes) in &self.outputs {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            self.entries.push((format!("output.{name}.sha256"), sha256_hex(bytes)));
        }
        for (path, bytes) in &self.outputs {
            write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))?;
        }
        let mut text = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(text, "{k}\t{v}");
        }
        let path = dir.join(format!("{}.manifest.tsv", self.command));
        write_atomic(&path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
