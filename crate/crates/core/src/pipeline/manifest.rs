use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

impl FileDigest {
    /// Digest `path`, recording it as `label`.
    pub fn of(path: &Path, label: String) -> Result<Self, PipelineError> {
        let io = |err| PipelineError::Io {
            path: path.display().to_string(),
            err,
        };
        let mut r = BufReader::new(File::open(path).map_err(io)?);
        let mut h = Sha256::new();
        let mut buf = vec![0u8; 1 << 16];
        let mut bytes = 0u64;
        loop {
            let n = r.read(&mut buf).map_err(io)?;
            if n == 0 {
                break;
            }
            h.update(&buf[..n]);
            bytes += n as u64;
        }
        Ok(Self {
            path: label,
            bytes,
            sha256: hex::encode(h.finalize()),
        })
    }
}

/// Machine-readable record of one stage run, also written as the stage's
/// `summary.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub rows_in: u64,
    pub rows_out: u64,
    pub devices_in: u64,
    pub devices_out: u64,
    pub devices_dropped: BTreeMap<String, u64>,
    pub outputs: Vec<FileDigest>,
    /// Stage-specific figures.
    pub details: serde_json::Value,
}

impl StageSummary {
    pub fn dropped_total(&self) -> u64 {
        self.devices_dropped.values().sum()
    }

    /// Input devices equal output plus dropped devices.
    pub fn is_balanced(&self) -> bool {
        self.devices_in == self.devices_out + self.dropped_total()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub inputs: Vec<FileDigest>,
    pub stages: BTreeMap<String, StageSummary>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Option<Self>, PipelineError> {
        match std::fs::read(path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| PipelineError::Io {
                    path: path.display().to_string(),
                    err: io::Error::new(io::ErrorKind::InvalidData, e),
                }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(err) => Err(PipelineError::Io {
                path: path.display().to_string(),
                err,
            }),
        }
    }

    /// Stages whose device counts do not add up.
    pub fn unbalanced(&self) -> Vec<&str> {
        self.stages
            .values()
            .filter(|s| !s.is_balanced())
            .map(|s| s.stage.as_str())
            .collect()
    }
}
