//! Home location imputation.
//!
//! Sightings are aggregated per level-6 cell. Cells seen on at least three
//! days, on more than half of the device's observed days, and for at least
//! two distinct hours per observed day on average are candidates. Candidates
//! are ranked by daytime activity, the top three are re-ranked by nighttime
//! activity, and the winner is the level-6 home. The same two cascades are
//! then run over the level-7 cells inside that home to pick the level-7 home.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::calendar::{Day, DayHour, NightWindow};
use crate::geohash::GeohashCell;
use crate::ingest::{DeviceSightings, LocalSighting};

pub const MIN_CANDIDATE_DAYS: u32 = 3;
pub const MIN_AVG_DAILY_HOURS: u32 = 2;
pub const TOP_ACTIVITY_CELLS: usize = 3;

/// Activity of one device in one cell over the study month.
///
/// Averages are kept as integer numerator/denominator pairs so that ranking
/// compares exact ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellActivityStats {
    pub cell: GeohashCell,
    /// Distinct local dates with a sighting in the cell.
    pub days_observed: u32,
    /// Distinct (date, hour) pairs with a sighting in the cell.
    pub observed_hours: u32,
    pub sightings: u32,
    /// Distinct nights with a nighttime sighting in the cell.
    pub nights_observed: u32,
    /// Distinct nighttime (date, hour) pairs.
    pub night_hours: u32,
    pub night_sightings: u32,
}

fn ratio(num: u32, den: u32) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Compare `a/b` with `c/d`, treating a zero denominator as zero.
fn cmp_ratio(a: u32, b: u32, c: u32, d: u32) -> Ordering {
    let (a, b) = if b == 0 { (0, 1) } else { (a, b) };
    let (c, d) = if d == 0 { (0, 1) } else { (c, d) };
    (a as u64 * d as u64).cmp(&(c as u64 * b as u64))
}

impl CellActivityStats {
    pub fn avg_daily_hours(&self) -> f64 {
        ratio(self.observed_hours, self.days_observed)
    }

    pub fn avg_hourly_sightings(&self) -> f64 {
        ratio(self.sightings, self.observed_hours)
    }

    pub fn avg_nightly_hours(&self) -> f64 {
        ratio(self.night_hours, self.nights_observed)
    }

    pub fn avg_nightly_hourly_sightings(&self) -> f64 {
        ratio(self.night_sightings, self.night_hours)
    }

    /// Descending on (days, hours per day, sightings per hour).
    fn activity_cmp(&self, other: &Self) -> Ordering {
        other
            .days_observed
            .cmp(&self.days_observed)
            .then_with(|| {
                cmp_ratio(
                    other.observed_hours,
                    other.days_observed,
                    self.observed_hours,
                    self.days_observed,
                )
            })
            .then_with(|| {
                cmp_ratio(
                    other.sightings,
                    other.observed_hours,
                    self.sightings,
                    self.observed_hours,
                )
            })
    }

    /// Descending on (nights, night hours per night, sightings per night hour).
    fn night_cmp(&self, other: &Self) -> Ordering {
        other
            .nights_observed
            .cmp(&self.nights_observed)
            .then_with(|| {
                cmp_ratio(
                    other.night_hours,
                    other.nights_observed,
                    self.night_hours,
                    self.nights_observed,
                )
            })
            .then_with(|| {
                cmp_ratio(
                    other.night_sightings,
                    other.night_hours,
                    self.night_sightings,
                    self.night_hours,
                )
            })
    }
}

/// Per-cell activity statistics for `cell_of` applied to every sighting.
/// Output is sorted by cell.
pub fn cell_activity<F>(
    sightings: &[LocalSighting],
    night: NightWindow,
    cell_of: F,
) -> Vec<CellActivityStats>
where
    F: Fn(&LocalSighting) -> GeohashCell,
{
    let mut keyed: Vec<(GeohashCell, DayHour)> =
        sightings.iter().map(|s| (cell_of(s), s.at)).collect();
    keyed.sort_unstable();

    let mut out = Vec::new();
    for group in keyed.chunk_by(|a, b| a.0 == b.0) {
        let mut st = CellActivityStats {
            cell: group[0].0,
            days_observed: 0,
            observed_hours: 0,
            sightings: group.len() as u32,
            nights_observed: 0,
            night_hours: 0,
            night_sightings: 0,
        };
        let mut last_day: Option<Day> = None;
        let mut last_hour: Option<DayHour> = None;
        let mut last_night: Option<Day> = None;
        for &(_, at) in group {
            let new_hour = last_hour != Some(at);
            if last_day != Some(at.day) {
                st.days_observed += 1;
                last_day = Some(at.day);
            }
            if new_hour {
                st.observed_hours += 1;
                last_hour = Some(at);
            }
            // night labels are non-decreasing in (day, hour) order
            if let Some(n) = night.night_of(at) {
                st.night_sightings += 1;
                if new_hour {
                    st.night_hours += 1;
                }
                if last_night != Some(n) {
                    st.nights_observed += 1;
                    last_night = Some(n);
                }
            }
        }
        out.push(st);
    }
    out
}

/// Number of distinct local dates with at least one sighting.
pub fn observed_days(sightings: &[LocalSighting]) -> u32 {
    let mut days: Vec<Day> = sightings.iter().map(|s| s.at.day).collect();
    days.sort_unstable();
    days.dedup();
    days.len() as u32
}

/// Home candidacy rule applied to one cell.
pub fn is_candidate(stats: &CellActivityStats, device_observed_days: u32) -> bool {
    stats.days_observed >= MIN_CANDIDATE_DAYS
        && 2 * stats.days_observed > device_observed_days
        && stats.observed_hours >= MIN_AVG_DAILY_HOURS * stats.days_observed
}

/// Keep the cells meeting every candidacy criterion.
pub fn candidate_cells(
    stats: &[CellActivityStats],
    device_observed_days: u32,
) -> Vec<CellActivityStats> {
    stats
        .iter()
        .filter(|s| is_candidate(s, device_observed_days))
        .copied()
        .collect()
}

/// Level-6 candidates for one device.
pub fn candidate_cells6(
    sightings: &[LocalSighting],
    device_observed_days: u32,
    night: NightWindow,
) -> Vec<CellActivityStats> {
    candidate_cells(
        &cell_activity(sightings, night, |s| s.cell6),
        device_observed_days,
    )
}

/// Full activity ordering, ties broken by ascending cell code.
pub fn sort_by_activity(cells: &mut [CellActivityStats]) {
    cells.sort_by(|a, b| a.activity_cmp(b).then_with(|| a.cell.cmp(&b.cell)));
}

/// The top three cells by daytime activity.
pub fn rank_activity(mut candidates: Vec<CellActivityStats>) -> Vec<CellActivityStats> {
    sort_by_activity(&mut candidates);
    candidates.truncate(TOP_ACTIVITY_CELLS);
    candidates
}

/// Winner of the nighttime cascade. Ties on all three nighttime keys keep
/// the incoming (activity) order.
pub fn rank_nighttime(ranked: &[CellActivityStats]) -> Option<GeohashCell> {
    let mut order: Vec<&CellActivityStats> = ranked.iter().collect();
    order.sort_by(|a, b| a.night_cmp(b));
    order.first().map(|s| s.cell)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HomeLocation {
    pub device_id: String,
    pub home6: GeohashCell,
    pub home7: GeohashCell,
    /// Distinct local dates the device was observed anywhere.
    pub days_observed: u32,
    /// Level-6 cells that passed the candidacy rule.
    pub candidate_count: u32,
}

/// Level-7 home inside a known level-6 home. Only sightings in `home6` are
/// considered, so sightings elsewhere cannot change the result.
pub fn refine_home7(
    sightings: &[LocalSighting],
    home6: GeohashCell,
    night: NightWindow,
) -> Option<GeohashCell> {
    let inside: Vec<LocalSighting> = sightings
        .iter()
        .filter(|s| s.cell6 == home6)
        .copied()
        .collect();
    if inside.is_empty() {
        return None;
    }
    let mut stats = cell_activity(&inside, night, |s| s.cell7);
    let candidates = candidate_cells(&stats, observed_days(&inside));
    if candidates.is_empty() {
        sort_by_activity(&mut stats);
        return stats.first().map(|s| s.cell);
    }
    rank_nighttime(&rank_activity(candidates))
}

/// Impute a device's home, or `None` when no level-6 cell qualifies.
pub fn impute_home(device: &DeviceSightings, night: NightWindow) -> Option<HomeLocation> {
    let days = observed_days(&device.sightings);
    let candidates = candidate_cells6(&device.sightings, days, night);
    let candidate_count = candidates.len() as u32;
    let home6 = rank_nighttime(&rank_activity(candidates))?;
    let home7 = refine_home7(&device.sightings, home6, night)?;
    Some(HomeLocation {
        device_id: device.device_id.clone(),
        home6,
        home7,
        days_observed: days,
        candidate_count,
    })
}
