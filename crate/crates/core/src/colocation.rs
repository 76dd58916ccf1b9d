//! Co-location check for flagged duplicate pairs.
//!
//! For each hour in which both devices have sightings, the pair counts as
//! co-located when the sets of level-7 cells they occupied during that hour
//! intersect.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calendar::{Day, DayHour, StudyMonth};
use crate::geohash::GeohashCell;
use crate::ingest::{DeviceSightings, LocalSighting};

pub const DEFAULT_WINDOW_DAYS: u32 = 10;
pub const DEFAULT_SAMPLE_SIZE: usize = 100_000;

/// Local dates `[start, end)` considered by the check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateWindow {
    pub start: Day,
    pub end: Day,
}

impl DateWindow {
    /// Days `first..=last` (1-based) of `month`.
    pub fn month_days(month: StudyMonth, first: u32, last: u32) -> Self {
        Self {
            start: month.day(first),
            end: month.day(last).next(),
        }
    }

    pub fn first_days(month: StudyMonth, days: u32) -> Self {
        Self::month_days(month, 1, days)
    }

    pub fn contains(&self, day: Day) -> bool {
        self.start <= day && day < self.end
    }
}

/// Cells occupied per hour inside the window. Cell lists are sorted and
/// deduplicated.
pub fn hourly_cells(
    sightings: &[LocalSighting],
    window: DateWindow,
) -> BTreeMap<DayHour, Vec<GeohashCell>> {
    let mut m: BTreeMap<DayHour, Vec<GeohashCell>> = BTreeMap::new();
    for s in sightings.iter().filter(|s| window.contains(s.at.day)) {
        m.entry(s.at).or_default().push(s.cell7);
    }
    for cells in m.values_mut() {
        cells.sort_unstable();
        cells.dedup();
    }
    m
}

pub fn common_hours(
    a: &[LocalSighting],
    b: &[LocalSighting],
    window: DateWindow,
) -> BTreeSet<DayHour> {
    let hours = |s: &[LocalSighting]| -> BTreeSet<DayHour> {
        s.iter()
            .filter(|x| window.contains(x.at.day))
            .map(|x| x.at)
            .collect()
    };
    hours(a).intersection(&hours(b)).copied().collect()
}

fn sorted_intersect(a: &[GeohashCell], b: &[GeohashCell]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Equal => return true,
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
        }
    }
    false
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairValidation {
    pub id_a: String,
    pub id_b: String,
    pub common_hours: u32,
    pub colocated_hours: u32,
}

impl PairValidation {
    /// `None` when the pair shares no hour.
    pub fn rate(&self) -> Option<f64> {
        (self.common_hours > 0).then(|| self.colocated_hours as f64 / self.common_hours as f64)
    }
}

pub fn colocation_rate(
    a: &DeviceSightings,
    b: &DeviceSightings,
    window: DateWindow,
) -> PairValidation {
    let ha = hourly_cells(&a.sightings, window);
    let hb = hourly_cells(&b.sightings, window);
    let mut common = 0;
    let mut colocated = 0;
    for (hour, ca) in &ha {
        if let Some(cb) = hb.get(hour) {
            common += 1;
            if sorted_intersect(ca, cb) {
                colocated += 1;
            }
        }
    }
    PairValidation {
        id_a: a.device_id.clone(),
        id_b: b.device_id.clone(),
        common_hours: common,
        colocated_hours: colocated,
    }
}

/// Outcome of validating a sample of pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleValidation {
    pub pairs_flagged: usize,
    pub pairs_sampled: usize,
    pub pairs_with_common_hours: usize,
    /// Mean rate over pairs with at least one common hour.
    pub mean_rate: Option<f64>,
    pub median_rate: Option<f64>,
    /// Set when fewer pairs were flagged than requested, so all were used.
    pub used_all_pairs: bool,
    pub pairs: Vec<PairValidation>,
}

fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some((sorted[n / 2 - 1] + sorted[n / 2]) / 2.0),
    }
}

/// Summarize already-computed pair validations.
pub fn summarize(
    pairs_flagged: usize,
    used_all_pairs: bool,
    pairs: Vec<PairValidation>,
) -> SampleValidation {
    let mut rates: Vec<f64> = pairs.iter().filter_map(|p| p.rate()).collect();
    rates.sort_by(|a, b| a.total_cmp(b));
    let mean_rate = (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64);
    SampleValidation {
        pairs_flagged,
        pairs_sampled: pairs.len(),
        pairs_with_common_hours: rates.len(),
        mean_rate,
        median_rate: median(&rates),
        used_all_pairs,
        pairs,
    }
}

/// Seeded choice of at most `sample_size` pairs, in input order. The flag
/// is set when every pair was taken.
pub fn sample_pairs<T>(pairs: &[T], sample_size: usize, seed: u64) -> (Vec<&T>, bool) {
    if pairs.len() <= sample_size {
        return (pairs.iter().collect(), true);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = index::sample(&mut rng, pairs.len(), sample_size).into_vec();
    idx.sort_unstable();
    (idx.into_iter().map(|i| &pairs[i]).collect(), false)
}

/// Co-location of each pair. Pairs whose devices are missing from `store`
/// are skipped.
pub fn validate_pairs(
    pairs: &[&(String, String)],
    store: &HashMap<&str, &DeviceSightings>,
    window: DateWindow,
) -> Vec<PairValidation> {
    pairs
        .par_iter()
        .filter_map(|(a, b)| {
            let da = store.get(a.as_str())?;
            let db = store.get(b.as_str())?;
            Some(colocation_rate(da, db, window))
        })
        .collect()
}

/// Validate a seeded random sample of at most `sample_size` pairs.
pub fn validate_sample(
    pairs: &[(String, String)],
    store: &HashMap<&str, &DeviceSightings>,
    sample_size: usize,
    window: DateWindow,
    seed: u64,
) -> SampleValidation {
    let (chosen, used_all) = sample_pairs(pairs, sample_size, seed);
    summarize(
        pairs.len(),
        used_all,
        validate_pairs(&chosen, store, window),
    )
}
