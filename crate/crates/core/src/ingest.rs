//! Parsing and normalization of raw sighting files.
//!
//! Rows are streamed through [`SightingReader`]; malformed rows become
//! [`RowError`]s instead of aborting the file. [`DeviceTable`] then groups the
//! surviving records by device, localizes them and applies the study-month,
//! accuracy, duplicate-row and minimum-sighting filters.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::{local_day_hour, DayHour, StudyMonth};
use crate::geohash::{encode, GeoPoint, GeohashCell};

pub const DEFAULT_MIN_SIGHTINGS: usize = 10;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{source_name}: missing required column '{column}' (header: {header})")]
    MissingColumn {
        source_name: String,
        column: String,
        header: String,
    },
    #[error("{source_name}: unreadable header: {reason}")]
    Header { source_name: String, reason: String },
    #[error("{path}: {err}")]
    Io { path: String, err: io::Error },
}

/// One raw row.
#[derive(Debug, Clone, PartialEq)]
pub struct SightingRecord {
    pub device_id: String,
    pub utc_timestamp: i64,
    pub point: GeoPoint,
    pub accuracy: f64,
    pub utc_offset: i32,
}

/// A sighting placed on the local calendar and the level-7 grid. The owning
/// device is implied by the [`DeviceSightings`] that holds it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalSighting {
    pub utc_timestamp: i64,
    pub point: GeoPoint,
    pub accuracy: f64,
    pub utc_offset: i32,
    pub at: DayHour,
    pub cell7: GeohashCell,
    pub cell6: GeohashCell,
}

impl LocalSighting {
    /// Total order used for sorting and duplicate collapsing.
    fn sort_key(&self) -> (i64, u64, u64, u64, i32) {
        (
            self.utc_timestamp,
            self.point.lat().to_bits(),
            self.point.lon().to_bits(),
            self.accuracy.to_bits(),
            self.utc_offset,
        )
    }

    fn same_row(&self, other: &Self) -> bool {
        self.utc_timestamp == other.utc_timestamp && self.point == other.point
    }
}

pub fn localize(record: &SightingRecord) -> LocalSighting {
    localize_parts(
        record.utc_timestamp,
        record.point,
        record.accuracy,
        record.utc_offset,
    )
}

fn localize_parts(
    utc_timestamp: i64,
    point: GeoPoint,
    accuracy: f64,
    utc_offset: i32,
) -> LocalSighting {
    let cell7 = encode(point, 7).expect("level 7 is valid");
    LocalSighting {
        utc_timestamp,
        point,
        accuracy,
        utc_offset,
        at: local_day_hour(utc_timestamp, utc_offset),
        cell7,
        cell6: cell7.parent(6).expect("6 <= 7"),
    }
}

/// All in-month sightings of one device, sorted by timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSightings {
    pub device_id: String,
    pub sightings: Vec<LocalSighting>,
}

impl DeviceSightings {
    pub fn new(device_id: impl Into<String>, mut sightings: Vec<LocalSighting>) -> Self {
        sightings.sort_by_key(LocalSighting::sort_key);
        Self {
            device_id: device_id.into(),
            sightings,
        }
    }

    pub fn len(&self) -> usize {
        self.sightings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sightings.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = SightingRecord> + '_ {
        self.sightings.iter().map(|s| SightingRecord {
            device_id: self.device_id.clone(),
            utc_timestamp: s.utc_timestamp,
            point: s.point,
            accuracy: s.accuracy,
            utc_offset: s.utc_offset,
        })
    }
}

/// Minimum-quality rule: a device needs at least `min_sightings` in-month
/// sightings.
pub fn filter_quality(sightings: &[LocalSighting], min_sightings: usize) -> bool {
    sightings.len() >= min_sightings
}

/// Header names for the six input columns. Matching ignores case and any
/// non-alphanumeric characters, so `Device-ID` matches `device_id`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnNames {
    pub device_id: String,
    pub utc_timestamp: String,
    pub latitude: String,
    pub longitude: String,
    pub accuracy: String,
    pub utc_offset: String,
}

impl Default for ColumnNames {
    fn default() -> Self {
        Self {
            device_id: "device_id".into(),
            utc_timestamp: "utc_timestamp".into(),
            latitude: "latitude".into(),
            longitude: "longitude".into(),
            accuracy: "accuracy".into(),
            utc_offset: "utc_offset".into(),
        }
    }
}

impl ColumnNames {
    pub fn all(&self) -> [&str; 6] {
        [
            &self.device_id,
            &self.utc_timestamp,
            &self.latitude,
            &self.longitude,
            &self.accuracy,
            &self.utc_offset,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub delimiter: u8,
    pub columns: ColumnNames,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        Self {
            delimiter: b',',
            columns: ColumnNames::default(),
        }
    }
}

fn normalize_header(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowErrorReason {
    MalformedRow,
    FieldCount,
    EmptyDeviceId,
    BadTimestamp,
    BadLatitude,
    BadLongitude,
    BadAccuracy,
    BadUtcOffset,
}

impl RowErrorReason {
    pub fn code(&self) -> &'static str {
        match self {
            Self::MalformedRow => "malformed_row",
            Self::FieldCount => "field_count",
            Self::EmptyDeviceId => "empty_device_id",
            Self::BadTimestamp => "bad_timestamp",
            Self::BadLatitude => "bad_latitude",
            Self::BadLongitude => "bad_longitude",
            Self::BadAccuracy => "bad_accuracy",
            Self::BadUtcOffset => "bad_utc_offset",
        }
    }
}

impl fmt::Display for RowErrorReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    pub source_name: String,
    pub line: u64,
    pub reason: RowErrorReason,
    pub detail: String,
}

impl RowError {
    /// Tab-separated log line: source, line, reason code, detail.
    pub fn log_line(&self) -> String {
        let detail: String = self
            .detail
            .chars()
            .map(|c| {
                if c == '\t' || c == '\n' || c == '\r' {
                    ' '
                } else {
                    c
                }
            })
            .collect();
        format!(
            "{}\t{}\t{}\t{}",
            self.source_name, self.line, self.reason, detail
        )
    }
}

pub fn write_row_errors<W: Write>(mut w: W, errors: &[RowError]) -> io::Result<()> {
    writeln!(w, "source\tline\treason\tdetail")?;
    for e in errors {
        writeln!(w, "{}", e.log_line())?;
    }
    Ok(())
}

/// Open a file for reading, transparently decompressing `.gz`.
pub fn open_input(path: &Path) -> Result<Box<dyn Read + Send>, IngestError> {
    let file = File::open(path).map_err(|err| IngestError::Io {
        path: path.display().to_string(),
        err,
    })?;
    let reader = BufReader::with_capacity(1 << 16, file);
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("gz"))
    {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(reader))))
    } else {
        Ok(Box::new(reader))
    }
}

/// Streaming row parser. Yields one item per data row.
pub struct SightingReader<R: Read> {
    source_name: String,
    records: csv::StringRecordsIntoIter<R>,
    index: [usize; 6],
    width: usize,
}

impl<R: Read> SightingReader<R> {
    pub fn new(reader: R, source_name: &str, schema: &SchemaConfig) -> Result<Self, IngestError> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(schema.delimiter)
            .flexible(true)
            .has_headers(true)
            .from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| IngestError::Header {
                source_name: source_name.to_string(),
                reason: e.to_string(),
            })?
            .clone();
        let normalized: Vec<String> = header.iter().map(normalize_header).collect();
        let mut index = [0usize; 6];
        for (slot, name) in index.iter_mut().zip(schema.columns.all()) {
            let want = normalize_header(name);
            *slot = normalized.iter().position(|h| *h == want).ok_or_else(|| {
                IngestError::MissingColumn {
                    source_name: source_name.to_string(),
                    column: name.to_string(),
                    header: header.iter().collect::<Vec<_>>().join(","),
                }
            })?;
        }
        Ok(Self {
            source_name: source_name.to_string(),
            records: rdr.into_records(),
            index,
            width: header.len(),
        })
    }

    fn row_error(&self, line: u64, reason: RowErrorReason, detail: impl Into<String>) -> RowError {
        RowError {
            source_name: self.source_name.clone(),
            line,
            reason,
            detail: detail.into(),
        }
    }

    fn parse_row(&self, row: &csv::StringRecord) -> Result<SightingRecord, RowError> {
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != self.width {
            return Err(self.row_error(
                line,
                RowErrorReason::FieldCount,
                format!("expected {} fields, found {}", self.width, row.len()),
            ));
        }
        let field = |i: usize| row.get(self.index[i]).unwrap_or("").trim();
        let err = |reason, value: &str| self.row_error(line, reason, value.to_string());

        let device_id = field(0);
        if device_id.is_empty() {
            return Err(err(RowErrorReason::EmptyDeviceId, ""));
        }
        let ts = field(1);
        let utc_timestamp: i64 = ts
            .parse()
            .map_err(|_| err(RowErrorReason::BadTimestamp, ts))?;
        let lat_s = field(2);
        let lat: f64 = lat_s
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite() && (-90.0..=90.0).contains(v))
            .ok_or_else(|| err(RowErrorReason::BadLatitude, lat_s))?;
        let lon_s = field(3);
        let lon: f64 = lon_s
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite() && (-180.0..=180.0).contains(v))
            .ok_or_else(|| err(RowErrorReason::BadLongitude, lon_s))?;
        let acc_s = field(4);
        let accuracy: f64 = acc_s
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite() && *v >= 0.0)
            .ok_or_else(|| err(RowErrorReason::BadAccuracy, acc_s))?;
        let off_s = field(5);
        let utc_offset: i32 = off_s
            .parse()
            .ok()
            .filter(|v: &i32| v.abs() <= 18 * 3600)
            .ok_or_else(|| err(RowErrorReason::BadUtcOffset, off_s))?;
        Ok(SightingRecord {
            device_id: device_id.to_string(),
            utc_timestamp,
            point: GeoPoint::new(lat, lon).expect("range checked above"),
            accuracy,
            utc_offset,
        })
    }
}

impl<R: Read> Iterator for SightingReader<R> {
    type Item = Result<SightingRecord, RowError>;

    fn next(&mut self) -> Option<Self::Item> {
        let row = self.records.next()?;
        Some(match row {
            Ok(row) => self.parse_row(&row),
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                Err(self.row_error(line, RowErrorReason::MalformedRow, e.to_string()))
            }
        })
    }
}

#[derive(Debug, Default)]
pub struct ParseOutcome {
    pub records: Vec<SightingRecord>,
    pub errors: Vec<RowError>,
}

/// Parse a whole stream into memory. Prefer [`SightingReader`] for large
/// inputs.
pub fn parse_sightings<R: Read>(
    reader: R,
    source_name: &str,
    schema: &SchemaConfig,
) -> Result<ParseOutcome, IngestError> {
    let mut out = ParseOutcome::default();
    for item in SightingReader::new(reader, source_name, schema)? {
        match item {
            Ok(r) => out.records.push(r),
            Err(e) => out.errors.push(e),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestDropReason {
    /// Every row fell outside the study month or failed the accuracy filter.
    NoInMonthSightings,
    BelowMinSightings,
}

impl IngestDropReason {
    pub fn code(&self) -> &'static str {
        match self {
            Self::NoInMonthSightings => "no_in_month_sightings",
            Self::BelowMinSightings => "below_min_sightings",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DroppedDevice {
    pub device_id: String,
    pub reason: IngestDropReason,
    pub sightings: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    pub month: StudyMonth,
    pub min_sightings: usize,
    /// Rows with accuracy above this many meters are discarded. Off by default.
    pub max_accuracy: Option<f64>,
}

impl IngestOptions {
    pub fn new(month: StudyMonth) -> Self {
        Self {
            month,
            min_sightings: DEFAULT_MIN_SIGHTINGS,
            max_accuracy: None,
        }
    }
}

/// Row and device accounting for one ingestion run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: u64,
    pub rows_parsed: u64,
    pub row_errors: u64,
    pub row_errors_by_reason: BTreeMap<String, u64>,
    pub rows_out_of_month: u64,
    pub rows_above_max_accuracy: u64,
    pub rows_duplicate: u64,
    pub rows_kept: u64,
    pub devices_in: u64,
    pub devices_out: u64,
    pub devices_dropped: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Copy)]
struct RawSighting {
    utc_timestamp: i64,
    point: GeoPoint,
    accuracy: f64,
    utc_offset: i32,
}

/// Accumulates parsed rows per device. Rows from any number of sources may be
/// pushed in any order; [`DeviceTable::finish`] output does not depend on it.
#[derive(Debug, Default)]
pub struct DeviceTable {
    devices: HashMap<String, Vec<RawSighting>>,
    rows_parsed: u64,
    errors_by_reason: BTreeMap<String, u64>,
    row_errors: u64,
}

impl DeviceTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: SightingRecord) {
        self.rows_parsed += 1;
        let raw = RawSighting {
            utc_timestamp: record.utc_timestamp,
            point: record.point,
            accuracy: record.accuracy,
            utc_offset: record.utc_offset,
        };
        match self.devices.get_mut(&record.device_id) {
            Some(v) => v.push(raw),
            None => {
                self.devices.insert(record.device_id, vec![raw]);
            }
        }
    }

    pub fn note_error(&mut self, error: &RowError) {
        self.row_errors += 1;
        *self
            .errors_by_reason
            .entry(error.reason.code().to_string())
            .or_default() += 1;
    }

    pub fn merge(&mut self, other: DeviceTable) {
        self.rows_parsed += other.rows_parsed;
        self.row_errors += other.row_errors;
        for (k, v) in other.errors_by_reason {
            *self.errors_by_reason.entry(k).or_default() += v;
        }
        for (id, mut rows) in other.devices {
            self.devices.entry(id).or_default().append(&mut rows);
        }
    }

    /// Localize, filter and sort. Devices come back ordered by id.
    pub fn finish(
        self,
        opts: &IngestOptions,
    ) -> (Vec<DeviceSightings>, Vec<DroppedDevice>, IngestReport) {
        struct Outcome {
            device: DeviceSightings,
            out_of_month: u64,
            above_accuracy: u64,
            duplicates: u64,
        }

        let mut entries: Vec<(String, Vec<RawSighting>)> = self.devices.into_iter().collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));

        let outcomes: Vec<Outcome> = entries
            .into_par_iter()
            .map(|(device_id, rows)| {
                let mut out_of_month = 0;
                let mut above_accuracy = 0;
                let mut kept = Vec::with_capacity(rows.len());
                for r in rows {
                    let s = localize_parts(r.utc_timestamp, r.point, r.accuracy, r.utc_offset);
                    if !opts.month.contains(s.at.day) {
                        out_of_month += 1;
                    } else if opts.max_accuracy.is_some_and(|m| s.accuracy > m) {
                        above_accuracy += 1;
                    } else {
                        kept.push(s);
                    }
                }
                let mut device = DeviceSightings::new(device_id, kept);
                let before = device.sightings.len();
                device.sightings.dedup_by(|b, a| a.same_row(b));
                Outcome {
                    duplicates: (before - device.sightings.len()) as u64,
                    device,
                    out_of_month,
                    above_accuracy,
                }
            })
            .collect();

        let mut report = IngestReport {
            rows_read: self.rows_parsed + self.row_errors,
            rows_parsed: self.rows_parsed,
            row_errors: self.row_errors,
            row_errors_by_reason: self.errors_by_reason,
            devices_in: outcomes.len() as u64,
            ..Default::default()
        };
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        for o in outcomes {
            report.rows_out_of_month += o.out_of_month;
            report.rows_above_max_accuracy += o.above_accuracy;
            report.rows_duplicate += o.duplicates;
            let n = o.device.len();
            let reason = if n == 0 {
                Some(IngestDropReason::NoInMonthSightings)
            } else if !filter_quality(&o.device.sightings, opts.min_sightings) {
                Some(IngestDropReason::BelowMinSightings)
            } else {
                None
            };
            match reason {
                Some(reason) => {
                    *report
                        .devices_dropped
                        .entry(reason.code().to_string())
                        .or_default() += 1;
                    dropped.push(DroppedDevice {
                        device_id: o.device.device_id,
                        reason,
                        sightings: n,
                    });
                }
                None => {
                    report.rows_kept += n as u64;
                    kept.push(o.device);
                }
            }
        }
        report.devices_out = kept.len() as u64;
        (kept, dropped, report)
    }
}

/// Write sightings in the input schema (default column names), one device
/// after another.
pub fn write_sightings<'a, W: Write>(
    w: W,
    devices: impl IntoIterator<Item = (&'a str, &'a [LocalSighting])>,
) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    let c = ColumnNames::default();
    w.write_record(c.all())?;
    for (id, sightings) in devices {
        for s in sightings {
            write_row(
                &mut w,
                id,
                s.utc_timestamp,
                s.point,
                s.accuracy,
                s.utc_offset,
            )?;
        }
    }
    w.flush()
}

pub(crate) fn write_row<W: Write>(
    w: &mut csv::Writer<W>,
    device_id: &str,
    utc_timestamp: i64,
    point: GeoPoint,
    accuracy: f64,
    utc_offset: i32,
) -> io::Result<()> {
    w.write_record([
        device_id,
        &utc_timestamp.to_string(),
        &point.lat().to_string(),
        &point.lon().to_string(),
        &accuracy.to_string(),
        &utc_offset.to_string(),
    ])
    .map_err(io::Error::other)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{DateTime, Timelike};

    const TABLE1: &str = "Device-ID,UTC timestamp,Latitude,Longitude,Accuracy,UTC offset
Sfbcx-223da,1578010770,38.9924,-76.9293,2,-14400
Sfbcx-223da,1578010775,38.9802,-76.9190,5,-14400
Sfbcx-223da,1578010778,38.9605,-76.9201,3,-14400
Rjckf-2421s,1578010500,38.7069,-76.8985,11,-14400
";

    fn parse(text: &str) -> ParseOutcome {
        parse_sightings(text.as_bytes(), "mem", &SchemaConfig::default()).unwrap()
    }

    #[test]
    fn parses_sample_rows() {
        let out = parse(TABLE1);
        assert!(out.errors.is_empty());
        assert_eq!(out.records.len(), 4);
        let r = &out.records[0];
        assert_eq!(r.device_id, "Sfbcx-223da");
        assert_eq!(r.utc_timestamp, 1_578_010_770);
        assert_eq!(r.point, GeoPoint::new(38.9924, -76.9293).unwrap());
        assert_eq!(r.accuracy, 2.0);
        assert_eq!(r.utc_offset, -14_400);
    }

    #[test]
    fn header_order_is_free() {
        let text = "utc_offset,accuracy,longitude,latitude,utc_timestamp,device_id\n-14400,2,-76.9293,38.9924,1578010770,a\n";
        let out = parse(text);
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].point.lat(), 38.9924);
    }

    #[test]
    fn empty_input_with_header() {
        let out = parse("device_id,utc_timestamp,latitude,longitude,accuracy,utc_offset\n");
        assert!(out.records.is_empty() && out.errors.is_empty());
    }

    #[test]
    fn missing_column_is_fatal() {
        let err = parse_sightings(
            "device_id,utc_timestamp,latitude,longitude,accuracy\n".as_bytes(),
            "mem",
            &SchemaConfig::default(),
        )
        .err()
        .unwrap();
        assert!(
            matches!(err, IngestError::MissingColumn { ref column, .. } if column == "utc_offset")
        );
    }

    #[test]
    fn bad_rows_are_logged_and_counted() {
        let text = "device_id,utc_timestamp,latitude,longitude,accuracy,utc_offset
a,1578010770,91.0,-76.9,2,-14400
a,xyz,38.9,-76.9,2,-14400
,1578010770,38.9,-76.9,2,-14400
a,1578010770,38.9,-181,2,-14400
a,1578010770,38.9,-76.9,-1,-14400
a,1578010770,38.9,-76.9,2,abc
a,1578010770,38.9
a,1578010770,38.9,-76.9,2,-14400
";
        let out = parse(text);
        assert_eq!(out.records.len(), 1);
        let reasons: Vec<_> = out.errors.iter().map(|e| e.reason).collect();
        assert_eq!(
            reasons,
            vec![
                RowErrorReason::BadLatitude,
                RowErrorReason::BadTimestamp,
                RowErrorReason::EmptyDeviceId,
                RowErrorReason::BadLongitude,
                RowErrorReason::BadAccuracy,
                RowErrorReason::BadUtcOffset,
                RowErrorReason::FieldCount,
            ]
        );
        assert_eq!(out.errors[0].line, 2);
        assert!(out.errors[0]
            .log_line()
            .starts_with("mem\t2\tbad_latitude\t91.0"));
        // conservation
        assert_eq!(out.records.len() + out.errors.len(), 8);
    }

    #[test]
    fn semicolon_delimiter_and_renamed_columns() {
        let schema = SchemaConfig {
            delimiter: b';',
            columns: ColumnNames {
                device_id: "maid".into(),
                ..Default::default()
            },
        };
        let text = "maid;utc_timestamp;latitude;longitude;accuracy;utc_offset\nx;0;1;2;3;0\n";
        let out = parse_sightings(text.as_bytes(), "mem", &schema).unwrap();
        assert_eq!(out.records[0].device_id, "x");
    }

    #[test]
    fn localize_matches_chrono() {
        let out = parse(TABLE1);
        let s = localize(&out.records[0]);
        let local = DateTime::from_timestamp(1_578_010_770 - 14_400, 0)
            .unwrap()
            .naive_utc();
        assert_eq!(local.and_utc().timestamp(), 1_577_996_370);
        assert_eq!(s.at.day.date(), local.date());
        assert_eq!(s.at.hour as u32, local.hour());
        assert_eq!(s.cell6, s.cell7.parent(6).unwrap());
        assert_eq!(s.cell7, encode(s.point, 7).unwrap());
    }

    #[test]
    fn zero_offset_is_utc() {
        let r = SightingRecord {
            device_id: "d".into(),
            utc_timestamp: 1_578_010_770,
            point: GeoPoint::new(0.0, 0.0).unwrap(),
            accuracy: 1.0,
            utc_offset: 0,
        };
        let utc = DateTime::from_timestamp(1_578_010_770, 0).unwrap();
        let s = localize(&r);
        assert_eq!(s.at.day.date(), utc.date_naive());
        assert_eq!(s.at.hour as u32, utc.hour());
    }

    #[test]
    fn quality_filter_boundaries() {
        let r = SightingRecord {
            device_id: "d".into(),
            utc_timestamp: 1_578_010_770,
            point: GeoPoint::new(0.0, 0.0).unwrap(),
            accuracy: 1.0,
            utc_offset: 0,
        };
        let s = localize(&r);
        assert!(!filter_quality(&vec![s; 9], 10));
        assert!(filter_quality(&vec![s; 10], 10));
        assert!(filter_quality(&[], 0));
    }

    fn record(id: &str, ts: i64, lat: f64) -> SightingRecord {
        SightingRecord {
            device_id: id.into(),
            utc_timestamp: ts,
            point: GeoPoint::new(lat, -76.9).unwrap(),
            accuracy: 5.0,
            utc_offset: -18_000,
        }
    }

    #[test]
    fn device_table_filters_and_accounts() {
        let month: StudyMonth = "2020-01".parse().unwrap();
        let jan = month.start_utc(-18_000);
        let mut table = DeviceTable::new();
        // "keep": 10 distinct rows plus a duplicate and one December row
        for i in 0..10 {
            table.push(record("keep", jan + 3600 * i, 38.9));
        }
        table.push(record("keep", jan, 38.9));
        table.push(record("keep", jan - 10, 38.9));
        // "thin": 9 rows
        for i in 0..9 {
            table.push(record("thin", jan + 60 * i, 38.9));
        }
        // "gone": only February
        table.push(record("gone", jan + 40 * 86_400, 38.9));
        table.note_error(&RowError {
            source_name: "x".into(),
            line: 2,
            reason: RowErrorReason::BadLatitude,
            detail: String::new(),
        });
        let mut opts = IngestOptions::new(month);
        opts.min_sightings = 10;
        let (kept, dropped, report) = table.finish(&opts);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].device_id, "keep");
        assert_eq!(kept[0].len(), 10);
        assert!(kept[0]
            .sightings
            .windows(2)
            .all(|w| w[0].utc_timestamp <= w[1].utc_timestamp));
        assert_eq!(dropped.len(), 2);
        assert_eq!(dropped[0].device_id, "gone");
        assert_eq!(dropped[0].reason, IngestDropReason::NoInMonthSightings);
        assert_eq!(dropped[1].reason, IngestDropReason::BelowMinSightings);
        assert_eq!(report.rows_read, 23);
        assert_eq!(report.rows_parsed, 22);
        assert_eq!(report.rows_duplicate, 1);
        assert_eq!(report.rows_out_of_month, 2);
        assert_eq!(report.devices_in, 3);
        assert_eq!(report.devices_out, 1);
        assert_eq!(
            report.rows_parsed,
            report.rows_kept + report.rows_out_of_month + report.rows_duplicate + 9
        );
    }

    #[test]
    fn accuracy_filter_is_optional() {
        let month: StudyMonth = "2020-01".parse().unwrap();
        let jan = month.start_utc(-18_000);
        let mut table = DeviceTable::new();
        for i in 0..3 {
            let mut r = record("d", jan + i, 38.9);
            r.accuracy = 100.0 * i as f64;
            table.push(r);
        }
        let mut opts = IngestOptions::new(month);
        opts.min_sightings = 0;
        opts.max_accuracy = Some(150.0);
        let (kept, _, report) = table.finish(&opts);
        assert_eq!(kept[0].len(), 2);
        assert_eq!(report.rows_above_max_accuracy, 1);
    }

    #[test]
    fn write_then_parse_round_trips() {
        let out = parse(TABLE1);
        let locals: Vec<LocalSighting> = out.records.iter().take(3).map(localize).collect();
        let mut buf = Vec::new();
        write_sightings(&mut buf, [("Sfbcx-223da", locals.as_slice())]).unwrap();
        let back = parse(std::str::from_utf8(&buf).unwrap());
        assert_eq!(back.records, out.records[..3].to_vec());
    }
}
