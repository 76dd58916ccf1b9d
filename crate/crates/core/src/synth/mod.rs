//! Synthetic multi-vendor sightings with known ground truth.
//!
//! Users follow a fixed weekly routine between a home, a workplace, three
//! regular places and a pool of occasional places. Each user carries one to
//! three devices; each device belongs to a vendor that observes some hours
//! of the day, drops hours at random, and reports one or more jittered
//! points per observed hour. A fraction of users share a home with another
//! user, which gives co-resident negative controls.
//!
//! Everything is derived from the master seed through per-user and
//! per-device ChaCha substreams, so any single device can be regenerated on
//! its own and results do not depend on generation order.

mod score;

pub use score::{score, PairScore, ScoreReport};

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use flate2::write::GzEncoder;
use flate2::Compression;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::calendar::{Day, StudyMonth, SECONDS_PER_DAY, SECONDS_PER_HOUR};
use crate::geohash::{encode, GeoPoint, GeohashCell};
use crate::ingest::{localize, write_row, DeviceSightings, SightingRecord};

const METERS_PER_DEGREE: f64 = 111_320.0;
const OCCASIONAL_PLACES: usize = 6;
/// Devices generated per parallel batch when writing files.
const WRITE_BATCH: usize = 512;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error("{path}: {err}")]
    Io { path: String, err: io::Error },
    #[error("dedup map references unknown device '{0}'")]
    UnknownDevice(String),
    #[error("truth file {path}: {reason}")]
    Truth { path: String, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SynthError + '_ {
    move |err| SynthError::Io {
        path: path.display().to_string(),
        err,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl Default for Region {
    fn default() -> Self {
        // Baltimore-Washington area
        Self {
            lat_min: 38.5,
            lat_max: 39.5,
            lon_min: -77.5,
            lon_max: -76.5,
        }
    }
}

/// How one data vendor observes a device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VendorProfile {
    pub name: String,
    /// Gap between consecutive sightings within an observed hour, seconds.
    pub sampling_period_min_s: u32,
    pub sampling_period_max_s: u32,
    /// Local hours during which the vendor reports at all.
    pub active_hours: Vec<u8>,
    /// Probability that an otherwise active hour has no sightings.
    pub dropout_prob: f64,
    pub jitter_std_m: f64,
}

impl VendorProfile {
    fn is_active(&self, hour: u8) -> bool {
        self.active_hours.contains(&hour)
    }
}

pub fn default_vendors() -> Vec<VendorProfile> {
    vec![
        VendorProfile {
            name: "alpha".into(),
            sampling_period_min_s: 1200,
            sampling_period_max_s: 3600,
            active_hours: (0..24).collect(),
            dropout_prob: 0.25,
            jitter_std_m: 15.0,
        },
        VendorProfile {
            name: "beta".into(),
            sampling_period_min_s: 1800,
            sampling_period_max_s: 5400,
            active_hours: std::iter::once(0).chain(5..24).collect(),
            dropout_prob: 0.3,
            jitter_std_m: 15.0,
        },
        VendorProfile {
            name: "gamma".into(),
            sampling_period_min_s: 2400,
            sampling_period_max_s: 7200,
            active_hours: (0..24).collect(),
            dropout_prob: 0.35,
            jitter_std_m: 20.0,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub users: usize,
    /// Share of users carrying two or more devices.
    pub duplicate_fraction: f64,
    /// Share of multi-device users carrying three devices instead of two.
    pub triple_fraction: f64,
    /// Share of users living in another user's home.
    pub co_resident_fraction: f64,
    /// Probability that a user spends a given night at home.
    pub nighttime_home_fraction: f64,
    /// Generate only the first `days` days of the month.
    pub days: Option<u32>,
    pub utc_offset: i32,
    pub region: Region,
    /// Jittered points farther than this from the place center are redrawn.
    pub max_jitter_m: f64,
    pub gzip: bool,
    pub vendors: Vec<VendorProfile>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 1000,
            duplicate_fraction: 0.06,
            triple_fraction: 0.1,
            co_resident_fraction: 0.05,
            nighttime_home_fraction: 0.8,
            days: None,
            utc_offset: -18_000,
            region: Region::default(),
            max_jitter_m: 75.0,
            gzip: false,
            vendors: default_vendors(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self, month: StudyMonth) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.users == 0 {
            return bad("users must be at least 1".into());
        }
        for (name, v) in [
            ("duplicate_fraction", self.duplicate_fraction),
            ("triple_fraction", self.triple_fraction),
            ("co_resident_fraction", self.co_resident_fraction),
            ("nighttime_home_fraction", self.nighttime_home_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if let Some(d) = self.days {
            if d == 0 || d > month.num_days() {
                return bad(format!(
                    "days must be in 1..={} for {month}, got {d}",
                    month.num_days()
                ));
            }
        }
        let r = &self.region;
        if GeoPoint::new(r.lat_min, r.lon_min).is_err()
            || GeoPoint::new(r.lat_max, r.lon_max).is_err()
            || r.lat_min >= r.lat_max
            || r.lon_min >= r.lon_max
        {
            return bad("region bounds are invalid".into());
        }
        if self.max_jitter_m.is_nan() || self.max_jitter_m <= 0.0 {
            return bad("max_jitter_m must be positive".into());
        }
        if self.vendors.is_empty() {
            return bad("at least one vendor profile is required".into());
        }
        let mut names = BTreeSet::new();
        for v in &self.vendors {
            if v.name.is_empty()
                || !v
                    .name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return bad(format!(
                    "vendor name '{}' must be non-empty [A-Za-z0-9_-]",
                    v.name
                ));
            }
            if !names.insert(&v.name) {
                return bad(format!("duplicate vendor name '{}'", v.name));
            }
            if v.sampling_period_min_s == 0 || v.sampling_period_min_s > v.sampling_period_max_s {
                return bad(format!(
                    "vendor '{}': sampling period range is invalid",
                    v.name
                ));
            }
            if v.active_hours.is_empty() || v.active_hours.iter().any(|h| *h > 23) {
                return bad(format!(
                    "vendor '{}': active_hours must be non-empty hours 0..=23",
                    v.name
                ));
            }
            if !(0.0..1.0).contains(&v.dropout_prob) {
                return bad(format!(
                    "vendor '{}': dropout_prob must be in [0, 1)",
                    v.name
                ));
            }
            if v.jitter_std_m.is_nan() || v.jitter_std_m < 0.0 {
                return bad(format!("vendor '{}': jitter_std_m must be >= 0", v.name));
            }
        }
        Ok(())
    }

    fn generated_days(&self, month: StudyMonth) -> u32 {
        self.days.unwrap_or(month.num_days())
    }
}

/// A continuous stay at one place, hours `[start_hour, end_hour)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stay {
    pub cell7: GeohashCell,
    pub start_hour: u8,
    pub end_hour: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DaySchedule {
    pub day: Day,
    pub stays: Vec<Stay>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthUser {
    pub user_id: String,
    pub home_cell7: GeohashCell,
    pub work_cell7: GeohashCell,
    /// Three regular places, most visited first, then the occasional pool.
    pub other_anchors: Vec<GeohashCell>,
    /// Index of the user whose home this user shares, if any.
    pub shares_home_with: Option<usize>,
    /// One entry per generated day, plus the day before the month so that
    /// the first night is covered.
    pub schedule: Vec<DaySchedule>,
}

impl SynthUser {
    /// Place occupied at a local day and hour, if generated.
    pub fn place_at(&self, day: Day, hour: u8) -> Option<GeohashCell> {
        let first = self.schedule.first()?.day;
        let idx = usize::try_from(day.0 - first.0).ok()?;
        let ds = self.schedule.get(idx)?;
        ds.stays
            .iter()
            .find(|s| s.start_hour <= hour && hour < s.end_hour)
            .map(|s| s.cell7)
    }

    /// Nights (labeled by start date) spent at home over the given days.
    pub fn nights_at_home(&self, days: impl IntoIterator<Item = Day>) -> (usize, usize) {
        let mut home = 0;
        let mut total = 0;
        for d in days {
            total += 1;
            if self.place_at(d, 22) == Some(self.home_cell7) {
                home += 1;
            }
        }
        (home, total)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthDevice {
    pub device_id: String,
    /// Index into [`Population::users`].
    pub owner: usize,
    /// Index into the configured vendor list.
    pub vendor: usize,
}

/// Device to user mapping plus each user's planted home.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pub device_user: BTreeMap<String, String>,
    pub user_home: BTreeMap<String, GeohashCell>,
}

impl GroundTruth {
    pub fn home_of_device(&self, device_id: &str) -> Option<GeohashCell> {
        self.device_user
            .get(device_id)
            .and_then(|u| self.user_home.get(u))
            .copied()
    }

    /// Share of `devices` whose owner has at least one other device among
    /// `devices`. Unknown ids are ignored.
    pub fn duplicate_device_rate<'a>(&self, devices: impl IntoIterator<Item = &'a str>) -> f64 {
        let mut per_user: BTreeMap<&str, usize> = BTreeMap::new();
        let mut total = 0usize;
        for d in devices {
            if let Some(u) = self.device_user.get(d) {
                *per_user.entry(u.as_str()).or_default() += 1;
                total += 1;
            }
        }
        if total == 0 {
            return 0.0;
        }
        let dup: usize = per_user.values().filter(|&&c| c >= 2).sum();
        dup as f64 / total as f64
    }

    /// All unordered pairs of devices that belong to distinct users sharing a
    /// planted home.
    pub fn co_resident_pairs(&self) -> Vec<(String, String)> {
        let mut by_home: BTreeMap<GeohashCell, Vec<(&str, &str)>> = BTreeMap::new();
        for (d, u) in &self.device_user {
            if let Some(h) = self.user_home.get(u) {
                by_home.entry(*h).or_default().push((d, u));
            }
        }
        let mut out = Vec::new();
        for devs in by_home.values() {
            for (i, (da, ua)) in devs.iter().enumerate() {
                for (db, ub) in &devs[i + 1..] {
                    if ua != ub {
                        let (a, b) = if da < db { (da, db) } else { (db, da) };
                        out.push((a.to_string(), b.to_string()));
                    }
                }
            }
        }
        out.sort();
        out
    }

    pub fn write<W: Write>(&self, w: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["device_id", "user_id", "home_cell7"])?;
        for (d, u) in &self.device_user {
            let home = self
                .user_home
                .get(u)
                .map(|c| c.to_string())
                .unwrap_or_default();
            w.write_record([d.as_str(), u.as_str(), home.as_str()])?;
        }
        w.flush()
    }

    pub fn read(path: &Path) -> Result<Self, SynthError> {
        let fail = |reason: String| SynthError::Truth {
            path: path.display().to_string(),
            reason,
        };
        let mut rdr = csv::Reader::from_path(path).map_err(|e| fail(e.to_string()))?;
        let mut truth = GroundTruth::default();
        for row in rdr.records() {
            let row = row.map_err(|e| fail(e.to_string()))?;
            if row.len() != 3 {
                return Err(fail(format!("expected 3 fields, found {}", row.len())));
            }
            let home: GeohashCell = row[2]
                .parse()
                .map_err(|e: crate::geohash::GeohashError| fail(e.to_string()))?;
            truth
                .device_user
                .insert(row[0].to_string(), row[1].to_string());
            truth.user_home.insert(row[1].to_string(), home);
        }
        Ok(truth)
    }
}

/// Stream identifiers for the per-purpose substreams.
#[derive(Clone, Copy)]
enum Purpose {
    Plan = 1,
    User = 2,
    Device = 3,
}

fn substream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 56) ^ index);
    rng
}

fn random_cell(rng: &mut ChaCha8Rng, region: &Region) -> GeohashCell {
    let lat = rng.random_range(region.lat_min..region.lat_max);
    let lon = rng.random_range(region.lon_min..region.lon_max);
    encode(GeoPoint::new(lat, lon).expect("region validated"), 7).expect("level 7")
}

/// Places referenced by the hourly plan.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Place {
    Home,
    Work,
    Regular(u8),
    Occasional(u8),
}

/// Users, devices and their routines. Sightings are produced on demand.
#[derive(Debug, Clone)]
pub struct Population {
    pub config: SynthConfig,
    pub month: StudyMonth,
    pub seed: u64,
    pub users: Vec<SynthUser>,
    pub devices: Vec<SynthDevice>,
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

impl Population {
    pub fn plan(config: &SynthConfig, month: StudyMonth, seed: u64) -> Result<Self, SynthError> {
        config.validate(month)?;
        let n = config.users;
        let mut rng = substream(seed, Purpose::Plan, 0);

        // Households: disjoint (primary, secondary) pairs.
        let pairs = ((n as f64 * config.co_resident_fraction) / 2.0).round() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut shares_home_with = vec![None; n];
        for p in 0..pairs.min(n / 2) {
            shares_home_with[order[2 * p + 1]] = Some(order[2 * p]);
        }

        // Device counts.
        let dup_users = ((n as f64) * config.duplicate_fraction).round() as usize;
        let mut device_count = vec![1usize; n];
        let chosen = index::sample(&mut rng, n, dup_users.min(n)).into_vec();
        let triples = ((dup_users as f64) * config.triple_fraction).round() as usize;
        for (i, u) in chosen.iter().enumerate() {
            device_count[*u] = if i < triples { 3 } else { 2 };
        }

        let mut devices = Vec::new();
        let nv = config.vendors.len();
        for (u, &count) in device_count.iter().enumerate() {
            let vendors: Vec<usize> = if count <= nv {
                index::sample(&mut rng, nv, count).into_vec()
            } else {
                (0..count).map(|_| rng.random_range(0..nv)).collect()
            };
            for v in vendors {
                devices.push(SynthDevice {
                    device_id: String::new(),
                    owner: u,
                    vendor: v,
                });
            }
        }
        let mut seen = BTreeSet::new();
        for (i, d) in devices.iter_mut().enumerate() {
            d.device_id = device_id(seed, i as u64);
            if !seen.insert(d.device_id.clone()) {
                return Err(SynthError::Config(format!(
                    "device id collision at seed {seed}"
                )));
            }
        }

        let users: Vec<SynthUser> = (0..n)
            .into_par_iter()
            .map(|u| build_user(config, month, seed, u, shares_home_with[u]))
            .collect();

        Ok(Self {
            config: config.clone(),
            month,
            seed,
            users,
            devices,
        })
    }

    pub fn truth(&self) -> GroundTruth {
        let mut t = GroundTruth::default();
        for d in &self.devices {
            let u = &self.users[d.owner];
            t.device_user.insert(d.device_id.clone(), u.user_id.clone());
            t.user_home.insert(u.user_id.clone(), u.home_cell7);
        }
        t
    }

    /// Users with two or more devices.
    pub fn multi_device_users(&self) -> usize {
        let mut counts = vec![0usize; self.users.len()];
        for d in &self.devices {
            counts[d.owner] += 1;
        }
        counts.iter().filter(|&&c| c >= 2).count()
    }

    /// Raw rows of one device, in timestamp order.
    pub fn device_records(&self, device: usize) -> Vec<SightingRecord> {
        let dev = &self.devices[device];
        let user = &self.users[dev.owner];
        let vendor = &self.config.vendors[dev.vendor];
        let mut rng = substream(self.seed, Purpose::Device, device as u64);
        let offset = self.config.utc_offset;
        let start = self.month.start_utc(offset);
        let hours = self.config.generated_days(self.month) as i64 * 24;
        let jitter = Normal::new(0.0, vendor.jitter_std_m.max(1e-9)).expect("finite std");
        let mut out = Vec::new();
        for h in 0..hours {
            let hour_start = start + h * SECONDS_PER_HOUR;
            let local = hour_start + offset as i64;
            let day = Day(local.div_euclid(SECONDS_PER_DAY) as i32);
            let hour = (local.rem_euclid(SECONDS_PER_DAY) / SECONDS_PER_HOUR) as u8;
            if !vendor.is_active(hour) || rng.random_bool(vendor.dropout_prob) {
                continue;
            }
            let Some(cell) = user.place_at(day, hour) else {
                continue;
            };
            let center = cell.center();
            let mut t = hour_start + rng.random_range(0..SECONDS_PER_HOUR);
            while t < hour_start + SECONDS_PER_HOUR {
                let (lat, lon) = self.jittered(&mut rng, &jitter, center);
                out.push(SightingRecord {
                    device_id: dev.device_id.clone(),
                    utc_timestamp: t,
                    point: GeoPoint::new(lat, lon).expect("jitter stays in range"),
                    accuracy: rng.random_range(3..=30) as f64,
                    utc_offset: offset,
                });
                t += rng.random_range(vendor.sampling_period_min_s..=vendor.sampling_period_max_s)
                    as i64;
            }
        }
        out
    }

    fn jittered(&self, rng: &mut ChaCha8Rng, jitter: &Normal<f64>, center: GeoPoint) -> (f64, f64) {
        let r = self.config.max_jitter_m;
        let (mut dx, mut dy) = (0.0, 0.0);
        for _ in 0..16 {
            let (x, y) = (jitter.sample(rng), jitter.sample(rng));
            if x * x + y * y <= r * r {
                (dx, dy) = (x, y);
                break;
            }
        }
        let lat = center.lat() + dy / METERS_PER_DEGREE;
        let lon = center.lon() + dx / (METERS_PER_DEGREE * center.lat().to_radians().cos());
        (
            round6(lat.clamp(-90.0, 90.0)),
            round6(lon.clamp(-180.0, 180.0)),
        )
    }

    /// Localized sightings of one device, as ingestion would produce them.
    pub fn device_sightings(&self, device: usize) -> DeviceSightings {
        let recs = self.device_records(device);
        let s = recs
            .iter()
            .map(localize)
            .filter(|s| self.month.contains(s.at.day))
            .collect();
        DeviceSightings::new(self.devices[device].device_id.clone(), s)
    }

    /// Write one sightings file per vendor plus `truth.csv` into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<SynthOutput, SynthError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let ext = if self.config.gzip { "csv.gz" } else { "csv" };
        let mut paths = Vec::new();
        let mut writers = Vec::new();
        for v in &self.config.vendors {
            let path = dir.join(format!("vendor_{}.{ext}", v.name));
            let file = File::create(&path).map_err(io_err(&path))?;
            let sink: Box<dyn Write> = if self.config.gzip {
                Box::new(GzEncoder::new(BufWriter::new(file), Compression::default()))
            } else {
                Box::new(BufWriter::new(file))
            };
            let mut w = csv::Writer::from_writer(sink);
            w.write_record([
                "device_id",
                "utc_timestamp",
                "latitude",
                "longitude",
                "accuracy",
                "utc_offset",
            ])
            .map_err(|e| io_err(&path)(io::Error::other(e)))?;
            paths.push(path);
            writers.push(w);
        }
        let mut rows_per_vendor = vec![0u64; writers.len()];
        let indices: Vec<usize> = (0..self.devices.len()).collect();
        for batch in indices.chunks(WRITE_BATCH) {
            let generated: Vec<Vec<SightingRecord>> =
                batch.par_iter().map(|&i| self.device_records(i)).collect();
            for (&i, rows) in batch.iter().zip(generated) {
                let v = self.devices[i].vendor;
                let w = &mut writers[v];
                for r in &rows {
                    write_row(
                        w,
                        &r.device_id,
                        r.utc_timestamp,
                        r.point,
                        r.accuracy,
                        r.utc_offset,
                    )
                    .map_err(io_err(&paths[v]))?;
                }
                rows_per_vendor[v] += rows.len() as u64;
            }
        }
        for (w, p) in writers.into_iter().zip(&paths) {
            let mut inner = w
                .into_inner()
                .map_err(|e| io_err(p)(io::Error::other(e.to_string())))?;
            inner.flush().map_err(io_err(p))?;
        }
        let truth_path = dir.join("truth.csv");
        let truth = self.truth();
        let f = File::create(&truth_path).map_err(io_err(&truth_path))?;
        truth
            .write(BufWriter::new(f))
            .map_err(io_err(&truth_path))?;
        Ok(SynthOutput {
            sighting_files: paths,
            truth_file: truth_path,
            rows_per_vendor,
            truth,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub sighting_files: Vec<PathBuf>,
    pub truth_file: PathBuf,
    pub rows_per_vendor: Vec<u64>,
    pub truth: GroundTruth,
}

/// Plan a population and write its files.
pub fn generate(
    config: &SynthConfig,
    month: StudyMonth,
    seed: u64,
    dir: &Path,
) -> Result<(SynthOutput, Population), SynthError> {
    let pop = Population::plan(config, month, seed)?;
    let out = pop.write_files(dir)?;
    Ok((out, pop))
}

/// Opaque id in the `xxxxx-xxxxx` shape of hashed advertising ids.
fn device_id(seed: u64, index: u64) -> String {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(index.to_le_bytes());
    let hex = hex::encode(&h.finalize()[..6]);
    format!("{}-{}", &hex[..5], &hex[5..])
}

fn build_user(
    config: &SynthConfig,
    month: StudyMonth,
    seed: u64,
    u: usize,
    shares_home_with: Option<usize>,
) -> SynthUser {
    // The home is drawn first on every user's stream, so a co-resident can
    // replay the primary's stream to find the shared home.
    let home_of = |idx: usize| {
        let mut r = substream(seed, Purpose::User, idx as u64);
        random_cell(&mut r, &config.region)
    };
    let mut rng = substream(seed, Purpose::User, u as u64);
    let own_home = random_cell(&mut rng, &config.region);
    let home = shares_home_with.map(home_of).unwrap_or(own_home);
    let work = random_cell(&mut rng, &config.region);
    let anchors: Vec<GeohashCell> = (0..3 + OCCASIONAL_PLACES)
        .map(|_| random_cell(&mut rng, &config.region))
        .collect();

    // Weekday evenings (Mon..Fri): one for the first regular place, two for
    // the second, one for the third, one flexible.
    let mut evenings = [0u8, 1, 2, 3, 4];
    evenings.shuffle(&mut rng);
    let evening_place = |weekday: u8| -> Option<Place> {
        match evenings.iter().position(|&e| e == weekday)? {
            0 => Some(Place::Regular(0)),
            1 | 2 => Some(Place::Regular(1)),
            3 => Some(Place::Regular(2)),
            _ => None,
        }
    };

    let first = month.first_day().prev();
    let last = month.day(config.generated_days(month));
    let away: Vec<bool> = (first.0..=last.0)
        .map(|_| !rng.random_bool(config.nighttime_home_fraction))
        .collect();
    let away_on = |d: Day| away.get((d.0 - first.0) as usize).copied().unwrap_or(false);

    let cell_of = |p: Place| match p {
        Place::Home => home,
        Place::Work => work,
        Place::Regular(i) => anchors[i as usize],
        Place::Occasional(i) => anchors[3 + i as usize],
    };

    let mut schedule = Vec::new();
    for d in first.0..=last.0 {
        let day = Day(d);
        let weekday = day.date().format("%u").to_string().parse::<u8>().unwrap() - 1; // Mon = 0
        let mut plan = [Place::Home; 24];
        if weekday < 5 {
            for p in plan.iter_mut().take(16).skip(8) {
                *p = Place::Work;
            }
            let evening = match evening_place(weekday) {
                Some(p) => Some(p),
                None if rng.random_bool(0.5) => Some(Place::Occasional(
                    rng.random_range(0..OCCASIONAL_PLACES) as u8,
                )),
                None => None,
            };
            if let Some(p) = evening {
                for slot in plan.iter_mut().take(19).skip(16) {
                    *slot = p;
                }
            }
        } else if weekday == 5 {
            for p in plan.iter_mut().take(18).skip(10) {
                *p = Place::Regular(0);
            }
        } else if rng.random_bool(0.5) {
            let o = Place::Occasional(rng.random_range(0..OCCASIONAL_PLACES) as u8);
            plan[12] = o;
            plan[13] = o;
        }
        // Nights away start at 21:00 and run until 08:00 the next day.
        if away_on(day) {
            for p in plan.iter_mut().skip(21) {
                *p = Place::Regular(0);
            }
        }
        if away_on(day.prev()) {
            for p in plan.iter_mut().take(8) {
                *p = Place::Regular(0);
            }
        }
        let mut stays: Vec<Stay> = Vec::new();
        for (h, p) in plan.iter().enumerate() {
            let cell = cell_of(*p);
            match stays.last_mut() {
                Some(s) if s.cell7 == cell => s.end_hour = h as u8 + 1,
                _ => stays.push(Stay {
                    cell7: cell,
                    start_hour: h as u8,
                    end_hour: h as u8 + 1,
                }),
            }
        }
        schedule.push(DaySchedule { day, stays });
    }

    SynthUser {
        user_id: format!("u{u:06}"),
        home_cell7: home,
        work_cell7: work,
        other_anchors: anchors,
        shares_home_with,
        schedule,
    }
}
