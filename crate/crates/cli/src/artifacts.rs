//! Run manifests, content digests, atomic writes and output-directory locks.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::exit::{IoFailure, ValidationFailure};

pub const LOCK_NAME: &str = ".eventprompt.lock";
pub const DIR_MANIFEST: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to reproduce one command invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub rng_seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, FileDigest>,
    pub outputs: BTreeMap<String, FileDigest>,
    pub started_at: String,
    pub finished_at: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes =
        fs::read(path).map_err(|e| IoFailure(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn digest(path: &Path) -> Result<FileDigest> {
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_file(path)?,
    })
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(parent)
        .map_err(|e| IoFailure(format!("cannot create {}: {e}", parent.display())))?;
    let name = path
        .file_name()
        .with_context(|| format!("{} has no file name", path.display()))?
        .to_string_lossy();
    let tmp = parent.join(format!(".{name}.tmp{}", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        IoFailure(format!("cannot write {}: {e}", path.display())).into()
    })
}

/// Exclusive claim on an output directory for the lifetime of the value.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)
            .map_err(|e| IoFailure(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(LOCK_NAME);
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(IoFailure(format!(
                "{} is locked by another run (remove {} if that run is gone)",
                dir.display(),
                path.display()
            ))
            .into()),
            Err(e) => Err(IoFailure(format!("cannot lock {}: {e}", dir.display())).into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Where the manifest of a single-file output lives.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".run.json");
    output.with_file_name(name)
}

/// The manifest that produced `artifact`, if any.
pub fn find_manifest(artifact: &Path) -> Result<Option<(PathBuf, RunManifest)>> {
    let candidates = [
        manifest_path_for(artifact),
        artifact
            .parent()
            .map(|p| p.join(DIR_MANIFEST))
            .unwrap_or_else(|| PathBuf::from(DIR_MANIFEST)),
    ];
    let file_name = artifact
        .file_name()
        .map(|n| n.to_string_lossy().to_string());
    for path in candidates {
        if !path.is_file() {
            continue;
        }
        let text = fs::read_to_string(&path)
            .map_err(|e| IoFailure(format!("cannot read {}: {e}", path.display())))?;
        let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| {
            ValidationFailure(format!("malformed manifest {}: {e}", path.display()))
        })?;
        let lists_artifact = manifest.outputs.values().any(|d| {
            Path::new(&d.path)
                .file_name()
                .map(|n| n.to_string_lossy().to_string())
                == file_name
        });
        if lists_artifact {
            return Ok(Some((path, manifest)));
        }
    }
    Ok(None)
}

/// Refuses an artifact whose bytes differ from what its manifest recorded,
/// or whose recorded inputs disagree with the inputs of this run.
pub fn check_fresh(artifact: &Path, current_inputs: &BTreeMap<String, FileDigest>) -> Result<()> {
    let Some((manifest_path, manifest)) = find_manifest(artifact)? else {
        return Ok(());
    };
    let name = artifact
        .file_name()
        .map(|n| n.to_string_lossy().to_string());
    let recorded = manifest
        .outputs
        .values()
        .find(|d| {
            Path::new(&d.path)
                .file_name()
                .map(|n| n.to_string_lossy().to_string())
                == name
        })
        .expect("manifest lists the artifact");
    let now = sha256_file(artifact)?;
    if now != recorded.sha256 {
        bail!(ValidationFailure(format!(
            "{} changed after it was produced (manifest {} records sha256 {}, file now has {}); \
             regenerate it or remove the stale manifest",
            artifact.display(),
            manifest_path.display(),
            &recorded.sha256[..12],
            &now[..12]
        )));
    }
    for (role, theirs) in &manifest.inputs {
        if let Some(ours) = current_inputs.get(role) {
            if ours.sha256 != theirs.sha256 {
                bail!(ValidationFailure(format!(
                    "{} was produced from a different {role} ({} sha256 {}) than the one given now ({} sha256 {})",
                    artifact.display(),
                    theirs.path,
                    &theirs.sha256[..12],
                    ours.path,
                    &ours.sha256[..12]
                )));
            }
        }
    }
    Ok(())
}

/// Collects inputs, then writes the manifest after the outputs exist.
pub struct ManifestBuilder {
    command: String,
    seed: Option<u64>,
    config: serde_json::Value,
    inputs: BTreeMap<String, FileDigest>,
    outputs: BTreeMap<String, FileDigest>,
    started_at: String,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl ManifestBuilder {
    pub fn new(command: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        Self {
            command: command.into(),
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            started_at: now(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.insert(role.into(), digest(path)?);
        Ok(())
    }

    pub fn inputs(&self) -> &BTreeMap<String, FileDigest> {
        &self.inputs
    }

    pub fn output(&mut self, role: &str, path: &Path) -> Result<()> {
        self.outputs.insert(role.into(), digest(path)?);
        Ok(())
    }

    pub fn write(self, path: &Path) -> Result<()> {
        let manifest = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            rng_seed: self.seed,
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            started_at: self.started_at,
            finished_at: now(),
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        atomic_write(path, text.as_bytes())
    }
}
