//! Run directory layout and run manifests.
//!
//! ```text
//! <run>/config.json              resolved training config
//! <run>/folds.json               fold plan
//! <run>/checkpoints/             {unet,cdae}_fold<f>.ckpt
//! <run>/logs/                    loss curves (CSV + JSON), non-finite diagnostics
//! <run>/predictions/fold<f>/     <id>_unet.nrrd, <id>_refined.nrrd, <id>_fused.nrrd, fusion.json
//! <run>/reports/                 fold<f>_<variant>.{json,csv}, summary_<variant>.{json,csv}, overlays/
//! <run>/manifests/               one manifest per invocation
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// A missing or inconsistent command-line input.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn folds(&self) -> PathBuf {
        self.root.join("folds.json")
    }

    fn sub(&self, parts: &[&str]) -> Result<PathBuf> {
        let mut p = self.root.clone();
        for s in parts {
            p.push(s);
        }
        fs::create_dir_all(&p).with_context(|| format!("creating {}", p.display()))?;
        Ok(p)
    }

    pub fn checkpoints(&self) -> Result<PathBuf> {
        self.sub(&["checkpoints"])
    }

    pub fn logs(&self) -> Result<PathBuf> {
        self.sub(&["logs"])
    }

    pub fn predictions(&self, fold: usize) -> Result<PathBuf> {
        self.sub(&["predictions", &format!("fold{fold}")])
    }

    pub fn reports(&self) -> Result<PathBuf> {
        self.sub(&["reports"])
    }

    pub fn overlays(&self, fold: usize) -> Result<PathBuf> {
        self.sub(&["reports", "overlays", &format!("fold{fold}")])
    }

    pub fn manifests(&self) -> Result<PathBuf> {
        self.sub(&["manifests"])
    }

    pub fn checkpoint(&self, net: &str, fold: usize) -> Result<PathBuf> {
        Ok(self.checkpoints()?.join(format!("{net}_fold{fold}.ckpt")))
    }
}

#[derive(Debug, Serialize)]
struct Artifact {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'a str,
    /// Arguments that reproduce this run.
    command: &'a [String],
    seed: Option<u64>,
    fold: Option<usize>,
    config: &'a Value,
    inputs: Vec<Artifact>,
    outputs: Vec<Artifact>,
}

/// Collects what one invocation read and wrote; [`finish`](Self::finish) hashes
/// everything and writes the manifest.
pub struct Recorder {
    subcommand: String,
    command: Vec<String>,
    seed: Option<u64>,
    fold: Option<usize>,
    config: Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Recorder {
    pub fn new(subcommand: &str, command: Vec<String>, seed: Option<u64>, fold: Option<usize>, config: Value) -> Self {
        Self { subcommand: subcommand.into(), command, seed, fold, config, inputs: Vec::new(), outputs: Vec::new() }
    }

    pub fn input(&mut self, path: impl Into<PathBuf>) {
        self.inputs.push(path.into());
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    /// Writes pretty JSON with a trailing newline and records it.
    pub fn write_json<S: Serialize + ?Sized>(&mut self, path: &Path, value: &S) -> Result<()> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        self.write_text(path, &text)
    }

    pub fn write_text(&mut self, path: &Path, text: &str) -> Result<()> {
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        self.output(path);
        Ok(())
    }

    fn artifacts(paths: &[PathBuf]) -> Result<Vec<Artifact>> {
        paths.iter().map(|p| Ok(Artifact { path: p.display().to_string(), sha256: sha256_file(p)? })).collect()
    }

    pub fn finish(self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let name = match self.fold {
            Some(f) => format!("{}_fold{f}.json", self.subcommand),
            None => format!("{}.json", self.subcommand),
        };
        let path = dir.join(name);
        let m = Manifest {
            tool: "octseg",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: &self.subcommand,
            command: &self.command,
            seed: self.seed,
            fold: self.fold,
            config: &self.config,
            inputs: Self::artifacts(&self.inputs)?,
            outputs: Self::artifacts(&self.outputs)?,
        };
        fs::write(&path, serde_json::to_string_pretty(&m)? + "\n").with_context(|| format!("writing {}", path.display()))?;
        log::info!("manifest={}", path.display());
        Ok(path)
    }
}
