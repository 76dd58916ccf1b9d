//! Stage orchestration over a working directory.
//!
//! Each stage reads the files of earlier stages from the working directory,
//! writes its own files into `<workdir>/<stage>/` together with a
//! `summary.json`, and records the summary in `<workdir>/manifest.json`.

mod artifacts;
pub mod config;
pub mod manifest;
mod stages;

use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::ingest::IngestError;
use crate::synth::SynthError;

pub use config::{NSweep, RunConfig, ValidationConfig};
pub use manifest::{FileDigest, Manifest, StageSummary};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error in '{field}': {message}")]
    Config { field: String, message: String },
    #[error("missing {path}; run the '{stage}' stage first")]
    MissingPrerequisite { stage: &'static str, path: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{path}: {err}")]
    Io { path: String, err: io::Error },
    #[error("{path}: unexpected content: {detail}")]
    Artifact { path: String, detail: String },
}

impl PipelineError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } | Self::Synth(SynthError::Config(_)) => 3,
            Self::Ingest(IngestError::MissingColumn { .. } | IngestError::Header { .. }) => 4,
            Self::MissingPrerequisite { .. } => 5,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Synth,
    Ingest,
    ImputeHome,
    Profile,
    Dedup,
    Validate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Synth,
        Stage::Ingest,
        Stage::ImputeHome,
        Stage::Profile,
        Stage::Dedup,
        Stage::Validate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::ImputeHome => "impute-home",
            Stage::Profile => "profile",
            Stage::Dedup => "dedup",
            Stage::Validate => "validate",
            Stage::Report => "report",
        }
    }

    /// Subdirectory of the working directory holding this stage's files.
    pub fn dir(self) -> &'static str {
        match self {
            Stage::ImputeHome => "home",
            s => s.name(),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage '{s}'"))
    }
}

/// A validated config bound to its working directory.
#[derive(Debug, Clone)]
pub struct Pipeline {
    config: RunConfig,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn workdir(&self) -> &Path {
        &self.config.workdir
    }

    pub fn path(&self, stage: Stage, file: &str) -> PathBuf {
        self.config.workdir.join(stage.dir()).join(file)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.config.workdir.join("manifest.json")
    }

    /// Stages a full run executes: synthesis only when there are no
    /// configured inputs and a `[synth]` section exists.
    pub fn full_run_stages(&self) -> Vec<Stage> {
        Stage::ALL
            .into_iter()
            .filter(|s| {
                *s != Stage::Synth || (self.config.inputs.is_empty() && self.config.synth.is_some())
            })
            .collect()
    }

    /// Run one stage on the configured worker pool.
    pub fn run_stage(&self, stage: Stage) -> Result<StageSummary, PipelineError> {
        with_workers(self.config.workers, || stages::run(self, stage))
    }

    pub fn run_all(&self) -> Result<Vec<StageSummary>, PipelineError> {
        with_workers(self.config.workers, || {
            self.full_run_stages()
                .into_iter()
                .map(|s| stages::run(self, s))
                .collect()
        })
    }
}

/// Run `f` on a pool of `workers` threads, or the global pool when unset.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("nope".parse::<Stage>().is_err());
        assert_eq!(Stage::ImputeHome.dir(), "home");
    }

    #[test]
    fn exit_codes_are_distinct() {
        let cfg = PipelineError::Config {
            field: "x".into(),
            message: String::new(),
        };
        let schema = PipelineError::Ingest(IngestError::MissingColumn {
            source_name: "f".into(),
            column: "c".into(),
            header: String::new(),
        });
        let missing = PipelineError::MissingPrerequisite {
            stage: "ingest",
            path: "p".into(),
        };
        let codes = [cfg.exit_code(), schema.exit_code(), missing.exit_code()];
        assert_eq!(codes, [3, 4, 5]);
    }
}
