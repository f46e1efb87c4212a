//! On-disk formats: batch manifests, pair sidecars and result records.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use s2h::assignment::PartialPermutationMatrix;
use s2h::geometry::RigidMotion;
use s2h::synth::PairSpec;

/// One manifest line. Relative paths are resolved against the manifest's
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(default)]
    pub id: Option<String>,
    pub source: PathBuf,
    pub target: PathBuf,
    /// Pair sidecar carrying the ground truth.
    #[serde(default)]
    pub gt: Option<PathBuf>,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let mut entries: Vec<ManifestEntry> =
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
    let dir = path.parent().unwrap_or(Path::new(""));
    for (k, e) in entries.iter_mut().enumerate() {
        e.source = dir.join(&e.source);
        e.target = dir.join(&e.target);
        e.gt = e.gt.as_ref().map(|g| dir.join(g));
        if e.id.is_none() {
            e.id = Some(format!("entry_{k:04}"));
        }
    }
    Ok(entries)
}

/// Metadata written next to each generated pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub id: String,
    pub shape: String,
    pub source: PathBuf,
    pub target: PathBuf,
    pub motion: RigidMotion,
    pub gt: PartialPermutationMatrix,
    /// Requested outlier ratio when produced by an outlier sweep.
    #[serde(default)]
    pub outlier_ratio: Option<f64>,
    /// Measured `(source, target)` outlier fractions.
    pub outlier_fraction: (f64, f64),
    pub spec: PairSpec,
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let text = fs::read_to_string(path).with_context(|| format!("reading sidecar {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing sidecar {}", path.display()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Degraded,
    Failed,
}

/// One line of a results file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub id: String,
    pub source: PathBuf,
    pub target: PathBuf,
    #[serde(default)]
    pub gt: Option<PathBuf>,
    pub status: Status,
    #[serde(default)]
    pub motion: Option<RigidMotion>,
    #[serde(default)]
    pub ppm: Option<PartialPermutationMatrix>,
    pub inliers: usize,
    pub iterations: usize,
    #[serde(default)]
    pub error: Option<String>,
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading results {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), n + 1)))
        .collect()
}

/// Creates the parent directory of `path` if needed.
pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}
