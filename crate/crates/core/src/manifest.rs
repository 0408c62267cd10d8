//! On-disk manifests linking environments, runs, snapshots, and labels.
//!
//! All `pgm_path` fields are stored relative to the workspace root the
//! manifest lives under, so a workspace can be moved or archived
//! wholesale.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::Label;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ManifestError + '_ {
    move |source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One generated environment and where its ground-truth map lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvEntry {
    pub env_id: String,
    pub seed: u64,
    pub pgm_path: String,
    pub room_count: usize,
    pub free_area_m2: f64,
}

pub fn write_env_manifest(path: &Path, entries: &[EnvEntry]) -> Result<(), ManifestError> {
    let json = serde_json::to_string_pretty(entries).expect("entries serialize");
    fs::write(path, json + "\n").map_err(io_err(path))
}

pub fn read_env_manifest(path: &Path) -> Result<Vec<EnvEntry>, ManifestError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| ManifestError::Json {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub t: f64,
    pub pgm_path: String,
}

/// Record of one exploration run and its snapshot files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub env_id: String,
    pub seed: u64,
    #[serde(rename = "T_seconds")]
    pub total_seconds: f64,
    pub terminal_reason: String,
    pub snapshots: Vec<SnapshotEntry>,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, json + "\n").map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| ManifestError::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// One labeled snapshot in the training/evaluation dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub env_id: String,
    pub run_id: String,
    pub t_seconds: f64,
    pub pgm_path: String,
    pub label: Label,
    #[serde(rename = "A_t")]
    pub a_t: f64,
    pub largest_cluster_m2: f64,
}

pub fn write_dataset_csv(path: &Path, rows: &[DatasetRow]) -> Result<(), ManifestError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|source| ManifestError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    }
    // serde-driven writers only emit headers once a row is written.
    if rows.is_empty() {
        w.write_record([
            "env_id",
            "run_id",
            "t_seconds",
            "pgm_path",
            "label",
            "A_t",
            "largest_cluster_m2",
        ])
        .expect("in-memory write");
    }
    let bytes = w.into_inner().expect("in-memory flush");
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_dataset_csv(path: &Path) -> Result<Vec<DatasetRow>, ManifestError> {
    let mut r = csv::Reader::from_path(path).map_err(|source| ManifestError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    r.deserialize()
        .collect::<Result<Vec<DatasetRow>, csv::Error>>()
        .map_err(|source| ManifestError::Csv {
            path: path.to_path_buf(),
            source,
        })
}
