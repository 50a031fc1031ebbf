use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::{run_experiment, ExperimentSpec, RunSummary};

pub const MANIFEST_SCHEMA: &str = "ris-resilience manifest v1";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Adapt,
    Scale,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the manifest's directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestSummary {
    pub total_runs: usize,
    pub failed_runs: usize,
    /// Headline means, e.g. `proposed/event2/r_ada`; `null` when undefined.
    pub means: BTreeMap<String, Option<f64>>,
}

/// Everything needed to check and reproduce an output directory. Holds no
/// timestamps, so identical runs give byte-identical manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub kind: ExperimentKind,
    pub code_version: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub spec: ExperimentSpec,
    pub files: Vec<FileEntry>,
    pub summary: ManifestSummary,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let manifest: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        if manifest.schema != MANIFEST_SCHEMA {
            return Err(Error::Manifest(format!("unknown schema {:?}", manifest.schema)));
        }
        Ok(manifest)
    }
}

fn file_entry(dir: &Path, rel: &Path) -> Result<FileEntry> {
    let bytes = fs::read(dir.join(rel))?;
    let path = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
    Ok(FileEntry { path, sha256: hex::encode(Sha256::digest(&bytes)), bytes: bytes.len() as u64 })
}

pub(super) fn write(
    kind: ExperimentKind,
    spec: &ExperimentSpec,
    dir: &Path,
    files: &[PathBuf],
    runs: &[RunSummary],
    means: BTreeMap<String, f64>,
) -> Result<PathBuf> {
    let manifest = RunManifest {
        schema: MANIFEST_SCHEMA.into(),
        kind,
        code_version: env!("CARGO_PKG_VERSION").into(),
        config_hash: spec.config_hash(),
        seeds: spec.seeds.clone(),
        spec: spec.clone(),
        files: files.iter().map(|f| file_entry(dir, f)).collect::<Result<_>>()?,
        summary: ManifestSummary {
            total_runs: runs.len(),
            failed_runs: runs.iter().filter(|r| r.failed()).count(),
            means: means.into_iter().map(|(k, v)| (k, v.is_finite().then_some(v))).collect(),
        },
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}

/// Files under `dir` whose size or checksum differ from the manifest.
fn mismatches(manifest: &RunManifest, dir: &Path) -> Vec<String> {
    manifest
        .files
        .iter()
        .filter_map(|entry| match file_entry(dir, Path::new(&entry.path)) {
            Ok(found) if found == *entry => None,
            Ok(found) => Some(format!("{}: sha256 {} (expected {})", entry.path, found.sha256, entry.sha256)),
            Err(e) => Some(format!("{}: {e}", entry.path)),
        })
        .collect()
}

/// Checks the spec hash and every listed file next to the manifest.
pub fn verify_manifest(manifest_path: &Path) -> Result<RunManifest> {
    let manifest = RunManifest::load(manifest_path)?;
    if manifest.spec.config_hash() != manifest.config_hash {
        return Err(Error::Manifest("config_hash does not match the embedded spec".into()));
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let bad = mismatches(&manifest, dir);
    if !bad.is_empty() {
        return Err(Error::Manifest(bad.join("; ")));
    }
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayReport {
    pub manifest_path: PathBuf,
    /// Files whose replayed bytes differ, with the reason.
    pub mismatches: Vec<String>,
    /// Whether the replayed manifest is byte-identical to the original.
    pub manifest_identical: bool,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.mismatches.is_empty() && self.manifest_identical
    }
}

/// Re-runs the manifest's experiment into `out_dir` and compares bytes.
pub fn replay_manifest(manifest_path: &Path, out_dir: &Path) -> Result<ReplayReport> {
    let original = RunManifest::load(manifest_path)?;
    let output = run_experiment(original.kind, &original.spec, out_dir)?;
    Ok(ReplayReport {
        mismatches: mismatches(&original, out_dir),
        manifest_identical: fs::read(manifest_path)? == fs::read(&output.manifest_path)?,
        manifest_path: output.manifest_path,
    })
}
