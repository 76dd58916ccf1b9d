use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::calendar::{NightWindow, StudyMonth};
use crate::colocation::{DateWindow, DEFAULT_SAMPLE_SIZE, DEFAULT_WINDOW_DAYS};
use crate::ingest::{ColumnNames, IngestOptions, SchemaConfig, DEFAULT_MIN_SIGHTINGS};
use crate::profile::DEFAULT_TOP_N;
use crate::synth::SynthConfig;

/// Inclusive range of N values for the anonymity sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NSweep {
    pub min: usize,
    pub max: usize,
}

impl Default for NSweep {
    fn default() -> Self {
        Self { min: 1, max: 8 }
    }
}

impl NSweep {
    pub fn values(&self) -> impl Iterator<Item = usize> {
        self.min..=self.max
    }

    pub fn contains(&self, n: usize) -> bool {
        self.min <= n && n <= self.max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    /// First and last day of the month (1-based, inclusive) to compare.
    pub first_day: u32,
    pub last_day: u32,
    pub sample_size: usize,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            first_day: 1,
            last_day: DEFAULT_WINDOW_DAYS,
            sample_size: DEFAULT_SAMPLE_SIZE,
        }
    }
}

fn default_month() -> StudyMonth {
    StudyMonth::new(2020, 1).expect("valid month")
}

/// Everything a run needs. Loaded from TOML; every field except `seed` has
/// a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub study_month: StudyMonth,
    pub inputs: Vec<PathBuf>,
    pub workdir: PathBuf,
    pub seed: Option<u64>,
    pub top_n: usize,
    pub n_sweep: NSweep,
    pub min_sightings: usize,
    pub max_accuracy: Option<f64>,
    pub delimiter: String,
    pub columns: ColumnNames,
    pub night: NightWindow,
    pub validation: ValidationConfig,
    /// Worker threads; all cores when unset. Never affects outputs.
    pub workers: Option<usize>,
    pub synth: Option<SynthConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            study_month: default_month(),
            inputs: Vec::new(),
            workdir: PathBuf::from("work"),
            seed: None,
            top_n: DEFAULT_TOP_N,
            n_sweep: NSweep::default(),
            min_sightings: DEFAULT_MIN_SIGHTINGS,
            max_accuracy: None,
            delimiter: ",".into(),
            columns: ColumnNames::default(),
            night: NightWindow::default(),
            validation: ValidationConfig::default(),
            workers: None,
            synth: None,
        }
    }
}

fn field_err(field: &str, message: impl Into<String>) -> PipelineError {
    PipelineError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| text[s].trim().to_string())
                .unwrap_or_default();
            PipelineError::Config {
                field,
                message: e.message().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|err| PipelineError::Io {
            path: path.display().to_string(),
            err,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.seed.is_none() {
            return Err(field_err(
                "seed",
                "required (set it in the config or pass --seed)",
            ));
        }
        if self.top_n < 1 {
            return Err(field_err("top_n", "must be at least 1"));
        }
        if self.n_sweep.min < 1 || self.n_sweep.min > self.n_sweep.max {
            return Err(field_err("n_sweep", "need 1 <= min <= max"));
        }
        if !self.n_sweep.contains(self.top_n) {
            return Err(field_err(
                "n_sweep",
                format!(
                    "range {}..={} must contain top_n = {}",
                    self.n_sweep.min, self.n_sweep.max, self.top_n
                ),
            ));
        }
        if let Some(a) = self.max_accuracy {
            if a.is_nan() || a < 0.0 {
                return Err(field_err("max_accuracy", "must be >= 0"));
            }
        }
        self.delimiter_byte()?;
        self.night
            .validate()
            .map_err(|e| field_err("night", e.to_string()))?;
        let v = &self.validation;
        let days = self.study_month.num_days();
        if v.first_day < 1 || v.first_day > v.last_day || v.last_day > days {
            return Err(field_err(
                "validation",
                format!("need 1 <= first_day <= last_day <= {days}"),
            ));
        }
        if v.sample_size == 0 {
            return Err(field_err("validation.sample_size", "must be at least 1"));
        }
        if self.workers == Some(0) {
            return Err(field_err("workers", "must be at least 1"));
        }
        if let Some(s) = &self.synth {
            s.validate(self.study_month)
                .map_err(|e| field_err("synth", e.to_string()))?;
        }
        Ok(())
    }

    fn delimiter_byte(&self) -> Result<u8, PipelineError> {
        match self.delimiter.as_bytes() {
            [b] if b.is_ascii() => Ok(*b),
            _ if self.delimiter == "\\t" => Ok(b'\t'),
            _ => Err(field_err("delimiter", "must be a single ASCII character")),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or_default()
    }

    pub fn schema(&self) -> SchemaConfig {
        SchemaConfig {
            delimiter: self.delimiter_byte().unwrap_or(b','),
            columns: self.columns.clone(),
        }
    }

    pub fn ingest_options(&self) -> IngestOptions {
        IngestOptions {
            month: self.study_month,
            min_sightings: self.min_sightings,
            max_accuracy: self.max_accuracy,
        }
    }

    pub fn validation_window(&self) -> DateWindow {
        DateWindow::month_days(
            self.study_month,
            self.validation.first_day,
            self.validation.last_day,
        )
    }

    /// Hex SHA-256 of the config without `workers` and `workdir`, which do
    /// not affect results.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.workers = None;
        c.workdir = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn valid() -> RunConfig {
        RunConfig {
            seed: Some(1),
            ..Default::default()
        }
    }

    #[test]
    fn defaults_are_valid() {
        let c = RunConfig::from_toml_str("seed = 3").unwrap();
        c.validate().unwrap();
        assert_eq!(c.top_n, 5);
        assert_eq!(c.n_sweep, NSweep { min: 1, max: 8 });
        assert_eq!(c.min_sightings, 10);
        assert_eq!(c.night, NightWindow::default());
        assert_eq!(c.validation.sample_size, 100_000);
        assert_eq!(
            c.validation_window(),
            DateWindow::first_days(c.study_month, 10)
        );
    }

    #[test]
    fn full_file_parses() {
        let text = r#"
            study_month = "2021-03"
            inputs = ["a.csv", "b.csv.gz"]
            workdir = "out"
            seed = 9
            top_n = 4
            n_sweep = { min = 2, max = 6 }
            max_accuracy = 65.0
            delimiter = ";"
            workers = 2
            [columns]
            device_id = "Device-ID"
            [night]
            start_hour = 22
            end_hour = 5
            [validation]
            last_day = 7
            [synth]
            users = 50
        "#;
        let c = RunConfig::from_toml_str(text).unwrap();
        c.validate().unwrap();
        assert_eq!(c.schema().delimiter, b';');
        assert_eq!(c.columns.device_id, "Device-ID");
        assert_eq!(c.synth.as_ref().unwrap().users, 50);
        assert_eq!(c.synth.as_ref().unwrap().duplicate_fraction, 0.06);
    }

    #[test]
    fn violations_name_the_field() {
        let field = |c: RunConfig| match c.validate() {
            Err(PipelineError::Config { field, .. }) => field,
            other => panic!("{other:?}"),
        };
        assert_eq!(
            field(RunConfig {
                seed: None,
                ..valid()
            }),
            "seed"
        );
        assert_eq!(
            field(RunConfig {
                top_n: 0,
                ..valid()
            }),
            "top_n"
        );
        assert_eq!(
            field(RunConfig {
                top_n: 9,
                ..valid()
            }),
            "n_sweep"
        );
        assert_eq!(
            field(RunConfig {
                delimiter: "ab".into(),
                ..valid()
            }),
            "delimiter"
        );
        assert_eq!(
            field(RunConfig {
                night: NightWindow {
                    start_hour: 3,
                    end_hour: 3
                },
                ..valid()
            }),
            "night"
        );
        let mut v = valid();
        v.validation.last_day = 40;
        assert_eq!(field(v), "validation");
        assert!(RunConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn hash_ignores_workers_and_workdir() {
        let a = valid();
        let b = RunConfig {
            workers: Some(7),
            workdir: "elsewhere".into(),
            ..valid()
        };
        let c = RunConfig {
            top_n: 4,
            ..valid()
        };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }
}
