//! Visited cells and the ordered top-N most visited list.

use serde::{Deserialize, Serialize};

use crate::calendar::DayHour;
use crate::geohash::GeohashCell;
use crate::ingest::LocalSighting;

pub const DEFAULT_TOP_N: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitStats {
    pub cell7: GeohashCell,
    /// Distinct (local date, hour) pairs with a sighting in the cell.
    pub unique_hours: u32,
    pub sightings: u32,
}

/// One entry per level-7 cell with at least one sighting, in ranking order:
/// unique hours, then sightings (both descending), then cell code.
pub fn visited_cells(sightings: &[LocalSighting]) -> Vec<VisitStats> {
    let mut keyed: Vec<(GeohashCell, DayHour)> =
        sightings.iter().map(|s| (s.cell7, s.at)).collect();
    keyed.sort_unstable();
    let mut out: Vec<VisitStats> = keyed
        .chunk_by(|a, b| a.0 == b.0)
        .map(|g| VisitStats {
            cell7: g[0].0,
            unique_hours: g.chunk_by(|a, b| a.1 == b.1).count() as u32,
            sightings: g.len() as u32,
        })
        .collect();
    rank_visits(&mut out);
    out
}

pub fn rank_visits(stats: &mut [VisitStats]) {
    stats.sort_by(|a, b| {
        b.unique_hours
            .cmp(&a.unique_hours)
            .then(b.sightings.cmp(&a.sightings))
            .then(a.cell7.cmp(&b.cell7))
    });
}

/// The ordered top-N list of one device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitProfile {
    pub device_id: String,
    pub top: Vec<VisitStats>,
}

impl VisitProfile {
    pub fn n(&self) -> usize {
        self.top.len()
    }

    pub fn cells(&self) -> Vec<GeohashCell> {
        self.top.iter().map(|v| v.cell7).collect()
    }
}

/// The first `n` cells by rank, or `None` when fewer than `n` were visited.
pub fn top_n(device_id: &str, stats: &[VisitStats], n: usize) -> Option<VisitProfile> {
    assert!(n >= 1, "top-N requires N >= 1");
    if stats.len() < n {
        return None;
    }
    let mut ranked = stats.to_vec();
    rank_visits(&mut ranked);
    ranked.truncate(n);
    Some(VisitProfile {
        device_id: device_id.to_string(),
        top: ranked,
    })
}
