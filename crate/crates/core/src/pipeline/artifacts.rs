//! Reading and writing the files stages hand to each other.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::PipelineError;
use crate::ingest::{
    localize, open_input, write_row, ColumnNames, DeviceSightings, SchemaConfig, SightingReader,
    SightingRecord,
};

/// Devices processed per parallel batch when streaming a sightings file.
const DEVICE_BATCH: usize = 2048;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |err| PipelineError::Io {
        path: path.display().to_string(),
        err,
    }
}

pub(crate) fn artifact_err(path: &Path, detail: impl ToString) -> PipelineError {
    PipelineError::Artifact {
        path: path.display().to_string(),
        detail: detail.to_string(),
    }
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

/// Write a whole CSV file at once.
pub(crate) fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), PipelineError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(create(path)?);
    let csv_err = |e: csv::Error| artifact_err(path, e);
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub(crate) fn csv_reader(path: &Path) -> Result<csv::Reader<File>, PipelineError> {
    let f = File::open(path).map_err(io_err(path))?;
    Ok(csv::Reader::from_reader(f))
}

/// Streams devices into a sightings file in the input schema.
pub(crate) struct SightingsWriter {
    path: PathBuf,
    w: csv::Writer<BufWriter<File>>,
    pub rows: u64,
    pub devices: u64,
}

impl SightingsWriter {
    pub fn create(path: &Path) -> Result<Self, PipelineError> {
        let mut w = csv::Writer::from_writer(create(path)?);
        w.write_record(ColumnNames::default().all())
            .map_err(|e| artifact_err(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            w,
            rows: 0,
            devices: 0,
        })
    }

    pub fn write_device(
        &mut self,
        id: &str,
        device: &DeviceSightings,
    ) -> Result<(), PipelineError> {
        for s in &device.sightings {
            write_row(
                &mut self.w,
                id,
                s.utc_timestamp,
                s.point,
                s.accuracy,
                s.utc_offset,
            )
            .map_err(io_err(&self.path))?;
        }
        self.rows += device.len() as u64;
        self.devices += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), PipelineError> {
        self.w.flush().map_err(io_err(&self.path))
    }
}

/// Iterates a sightings file written by [`SightingsWriter`], one device at a
/// time. Rows of a device must be contiguous.
pub(crate) struct DeviceStream {
    path: PathBuf,
    reader: SightingReader<Box<dyn Read + Send>>,
    pending: Option<SightingRecord>,
    pub rows: u64,
}

impl DeviceStream {
    pub fn open(path: &Path, prerequisite: &'static str) -> Result<Self, PipelineError> {
        if !path.is_file() {
            return Err(PipelineError::MissingPrerequisite {
                stage: prerequisite,
                path: path.display().to_string(),
            });
        }
        let name = path.display().to_string();
        let reader = SightingReader::new(open_input(path)?, &name, &SchemaConfig::default())?;
        Ok(Self {
            path: path.to_path_buf(),
            reader,
            pending: None,
            rows: 0,
        })
    }

    fn next_record(&mut self) -> Option<Result<SightingRecord, PipelineError>> {
        if let Some(r) = self.pending.take() {
            return Some(Ok(r));
        }
        let item = self.reader.next()?;
        self.rows += 1;
        Some(item.map_err(|e| artifact_err(&self.path, e.log_line())))
    }

    /// Read up to `max` devices.
    pub fn next_batch(&mut self, max: usize) -> Result<Vec<DeviceSightings>, PipelineError> {
        let mut out = Vec::new();
        while out.len() < max {
            match self.next()? {
                Some(d) => out.push(d),
                None => break,
            }
        }
        Ok(out)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn next(&mut self) -> Result<Option<DeviceSightings>, PipelineError> {
        let first = match self.next_record() {
            None => return Ok(None),
            Some(r) => r?,
        };
        let id = first.device_id.clone();
        let mut sightings = vec![localize(&first)];
        while let Some(r) = self.next_record() {
            let r = r?;
            if r.device_id != id {
                self.pending = Some(r);
                break;
            }
            sightings.push(localize(&r));
        }
        Ok(Some(DeviceSightings::new(id, sightings)))
    }
}

/// Apply `f` to every device of a sightings file in parallel batches.
/// Results keep file order. Returns the results and the row count.
pub(crate) fn map_devices<T, F>(
    path: &Path,
    prerequisite: &'static str,
    f: F,
) -> Result<(Vec<T>, u64), PipelineError>
where
    T: Send,
    F: Fn(&DeviceSightings) -> T + Sync,
{
    let mut stream = DeviceStream::open(path, prerequisite)?;
    let mut out = Vec::new();
    loop {
        let batch = stream.next_batch(DEVICE_BATCH)?;
        if batch.is_empty() {
            break;
        }
        out.par_extend(batch.par_iter().map(&f));
    }
    Ok((out, stream.rows))
}

pub(crate) fn require(path: &Path, stage: &'static str) -> Result<(), PipelineError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(PipelineError::MissingPrerequisite {
            stage,
            path: path.display().to_string(),
        })
    }
}

pub(crate) fn flush(mut w: impl Write, path: &Path) -> Result<(), PipelineError> {
    w.flush().map_err(io_err(path))
}
