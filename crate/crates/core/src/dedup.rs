//! Grouping devices by (home, ordered top-N) and merging duplicates.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geohash::GeohashCell;
use crate::ingest::{DeviceSightings, LocalSighting};
use crate::profile::VisitStats;

/// Two devices are duplicates when their keys are equal: same level-7 home
/// and element-wise equal ordered top-N lists.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DedupKey {
    pub home7: GeohashCell,
    pub top: Vec<GeohashCell>,
}

/// What the grouping needs to know about one device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceFeatures {
    pub device_id: String,
    pub home7: Option<GeohashCell>,
    /// Visited cells in ranking order (see [`crate::profile::visited_cells`]).
    pub visited: Vec<VisitStats>,
}

impl DeviceFeatures {
    pub fn key(&self, n: usize) -> Result<DedupKey, Exclusion> {
        let home7 = self.home7.ok_or(Exclusion::NoHome)?;
        if self.visited.len() < n {
            return Err(Exclusion::FewerThanNCells);
        }
        Ok(DedupKey {
            home7,
            top: self.visited[..n].iter().map(|v| v.cell7).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    NoHome,
    FewerThanNCells,
}

impl Exclusion {
    pub fn code(&self) -> &'static str {
        match self {
            Self::NoHome => "no_home",
            Self::FewerThanNCells => "fewer_than_n_cells",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnonymityGroup {
    pub key: DedupKey,
    /// Sorted ascending; the first member is the canonical id.
    pub members: Vec<String>,
}

impl AnonymityGroup {
    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn canonical_id(&self) -> &str {
        &self.members[0]
    }

    pub fn is_duplicate(&self) -> bool {
        self.k() >= 2
    }

    /// All unordered member pairs `(a, b)` with `a < b`.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.members.iter().enumerate().flat_map(move |(i, a)| {
            self.members[i + 1..]
                .iter()
                .map(move |b| (a.as_str(), b.as_str()))
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Grouping {
    /// Ordered by canonical id.
    pub groups: Vec<AnonymityGroup>,
    /// Devices without a key, ordered by id.
    pub excluded: Vec<(String, Exclusion)>,
}

impl Grouping {
    pub fn keyed_devices(&self) -> usize {
        self.groups.iter().map(|g| g.k()).sum()
    }

    pub fn duplicate_groups(&self) -> impl Iterator<Item = &AnonymityGroup> {
        self.groups.iter().filter(|g| g.is_duplicate())
    }

    pub fn excluded_by_reason(&self) -> BTreeMap<Exclusion, usize> {
        let mut m = BTreeMap::new();
        for (_, r) in &self.excluded {
            *m.entry(*r).or_default() += 1;
        }
        m
    }

    /// `(source_id, canonical_id)` for every member of a duplicate group,
    /// ordered by source id.
    pub fn dedup_map(&self) -> Vec<(String, String)> {
        let mut map: Vec<(String, String)> = self
            .duplicate_groups()
            .flat_map(|g| {
                g.members
                    .iter()
                    .map(|m| (m.clone(), g.canonical_id().to_string()))
            })
            .collect();
        map.sort();
        map
    }
}

/// Partition keyed devices into anonymity groups.
pub fn group_keys(keyed: impl IntoIterator<Item = (String, DedupKey)>) -> Vec<AnonymityGroup> {
    let mut by_key: BTreeMap<DedupKey, Vec<String>> = BTreeMap::new();
    for (id, key) in keyed {
        by_key.entry(key).or_default().push(id);
    }
    let mut groups: Vec<AnonymityGroup> = by_key
        .into_iter()
        .map(|(key, mut members)| {
            members.sort();
            members.dedup();
            AnonymityGroup { key, members }
        })
        .collect();
    groups.sort_by(|a, b| a.members[0].cmp(&b.members[0]));
    groups
}

/// Key every device at top-`n` and group them. Devices lacking a home or
/// `n` visited cells are excluded with a reason.
pub fn group_devices(devices: &[DeviceFeatures], n: usize) -> Grouping {
    let keyed: Vec<(String, Result<DedupKey, Exclusion>)> = devices
        .par_iter()
        .map(|d| (d.device_id.clone(), d.key(n)))
        .collect();
    let mut excluded = Vec::new();
    let mut ok = Vec::with_capacity(keyed.len());
    for (id, k) in keyed {
        match k {
            Ok(k) => ok.push((id, k)),
            Err(e) => excluded.push((id, e)),
        }
    }
    excluded.sort();
    Grouping {
        groups: group_keys(ok),
        excluded,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnonymityStats {
    pub groups: usize,
    pub min_k: usize,
    /// Arithmetic mean over groups.
    pub mean_k: f64,
    pub max_k: usize,
}

/// Min / mean / max group size, or `None` for an empty grouping.
pub fn anonymity_stats(groups: &[AnonymityGroup]) -> Option<AnonymityStats> {
    if groups.is_empty() {
        return None;
    }
    let sizes = groups.iter().map(|g| g.k());
    Some(AnonymityStats {
        groups: groups.len(),
        min_k: sizes.clone().min().unwrap(),
        mean_k: sizes.clone().sum::<usize>() as f64 / groups.len() as f64,
        max_k: sizes.max().unwrap(),
    })
}

/// Devices in groups with `k >= 2`.
pub fn devices_with_duplicates(groups: &[AnonymityGroup]) -> usize {
    groups
        .iter()
        .filter(|g| g.is_duplicate())
        .map(|g| g.k())
        .sum()
}

/// Share of keyed devices that belong to a duplicate group.
pub fn duplicate_rate(groups: &[AnonymityGroup]) -> f64 {
    let total: usize = groups.iter().map(|g| g.k()).sum();
    if total == 0 {
        0.0
    } else {
        devices_with_duplicates(groups) as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergedDevice {
    pub canonical_id: String,
    pub source_ids: Vec<String>,
    /// Union of the members' sightings, sorted by timestamp.
    pub sightings: Vec<LocalSighting>,
}

impl MergedDevice {
    pub fn into_device(self) -> DeviceSightings {
        DeviceSightings::new(self.canonical_id, self.sightings)
    }
}

/// Combine all members of a group under the smallest member id. Members
/// missing from `store` contribute no sightings.
pub fn merge_group(
    group: &AnonymityGroup,
    store: &HashMap<&str, &DeviceSightings>,
) -> MergedDevice {
    let mut sightings: Vec<LocalSighting> = group
        .members
        .iter()
        .filter_map(|m| store.get(m.as_str()))
        .flat_map(|d| d.sightings.iter().copied())
        .collect();
    sightings.sort_by(|a, b| {
        a.utc_timestamp
            .cmp(&b.utc_timestamp)
            .then(a.point.lat().total_cmp(&b.point.lat()))
            .then(a.point.lon().total_cmp(&b.point.lon()))
            .then(a.accuracy.total_cmp(&b.accuracy))
    });
    MergedDevice {
        canonical_id: group.canonical_id().to_string(),
        source_ids: group.members.clone(),
        sightings,
    }
}

/// Apply a grouping to a device set: duplicate groups become one merged
/// device each, every other keyed device passes through unchanged. Devices
/// that were not keyed are left out. Output is ordered by id.
pub fn merge_all(grouping: &Grouping, devices: &[DeviceSightings]) -> Vec<DeviceSightings> {
    let store: HashMap<&str, &DeviceSightings> =
        devices.iter().map(|d| (d.device_id.as_str(), d)).collect();
    let mut out: Vec<DeviceSightings> = grouping
        .groups
        .par_iter()
        .filter_map(|g| {
            if g.is_duplicate() {
                Some(merge_group(g, &store).into_device())
            } else {
                store.get(g.canonical_id()).map(|d| (*d).clone())
            }
        })
        .collect();
    out.sort_by(|a, b| a.device_id.cmp(&b.device_id));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geohash::encode_lat_lon;
    use crate::ingest::{localize, SightingRecord};

    fn cells(codes: &[&str]) -> Vec<VisitStats> {
        codes
            .iter()
            .enumerate()
            .map(|(i, c)| VisitStats {
                cell7: c.parse().unwrap(),
                unique_hours: 100 - i as u32,
                sightings: 100,
            })
            .collect()
    }

    fn dev(id: &str, home: &str, top: &[&str]) -> DeviceFeatures {
        DeviceFeatures {
            device_id: id.into(),
            home7: Some(home.parse().unwrap()),
            visited: cells(top),
        }
    }

    const TOP5: [&str; 5] = ["dqcmc4p", "dqcjqcp", "dqcm000", "dqcm111", "dqcm222"];

    #[test]
    fn same_key_forms_one_group() {
        let g = group_devices(&[dev("b", "dqcmc4p", &TOP5), dev("a", "dqcmc4p", &TOP5)], 5);
        assert_eq!(g.groups.len(), 1);
        assert_eq!(g.groups[0].members, vec!["a", "b"]);
        assert_eq!(
            g.dedup_map(),
            vec![("a".into(), "a".into()), ("b".into(), "a".into())]
        );
    }

    #[test]
    fn order_matters() {
        let mut swapped = TOP5;
        swapped.swap(3, 4);
        let g = group_devices(
            &[dev("a", "dqcmc4p", &TOP5), dev("b", "dqcmc4p", &swapped)],
            5,
        );
        assert_eq!(g.groups.len(), 2);
        assert!(g.groups.iter().all(|g| g.k() == 1));
        // but they agree on the first three
        let g3 = group_devices(
            &[dev("a", "dqcmc4p", &TOP5), dev("b", "dqcmc4p", &swapped)],
            3,
        );
        assert_eq!(g3.groups.len(), 1);
    }

    #[test]
    fn exclusions_are_reported() {
        let mut no_home = dev("c", "dqcmc4p", &TOP5);
        no_home.home7 = None;
        let g = group_devices(
            &[
                dev("a", "dqcmc4p", &TOP5[..4]),
                no_home,
                dev("b", "dqcmc4p", &TOP5),
            ],
            5,
        );
        assert_eq!(g.keyed_devices(), 1);
        assert_eq!(
            g.excluded,
            vec![
                ("a".into(), Exclusion::FewerThanNCells),
                ("c".into(), Exclusion::NoHome)
            ]
        );
    }

    fn group(members: &[&str]) -> AnonymityGroup {
        AnonymityGroup {
            key: DedupKey {
                home7: "dqcmc4p".parse().unwrap(),
                top: vec![],
            },
            members: members.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn stats_arithmetic() {
        let groups = vec![
            group(&["a", "b", "c"]),
            group(&["d"]),
            group(&["e"]),
            group(&["f"]),
        ];
        let s = anonymity_stats(&groups).unwrap();
        assert_eq!((s.min_k, s.mean_k, s.max_k), (1, 1.5, 3));
        let singles = vec![group(&["a"]), group(&["b"])];
        let s = anonymity_stats(&singles).unwrap();
        assert_eq!((s.min_k, s.mean_k, s.max_k), (1, 1.0, 1));
        assert!(anonymity_stats(&[]).is_none());
    }

    #[test]
    fn duplicate_rates() {
        let singles: Vec<_> = (0..10).map(|i| group(&[&i.to_string()])).collect();
        assert_eq!(duplicate_rate(&singles), 0.0);
        let mut groups: Vec<_> = (0..8).map(|i| group(&[&i.to_string()])).collect();
        groups.push(group(&["x", "y"]));
        assert!((duplicate_rate(&groups) - 0.2).abs() < 1e-12);
        assert_eq!(duplicate_rate(&[]), 0.0);
    }

    #[test]
    fn pairs_enumerates_combinations() {
        let g = group(&["a", "b", "c"]);
        let p: Vec<_> = g.pairs().collect();
        assert_eq!(p, vec![("a", "b"), ("a", "c"), ("b", "c")]);
    }

    fn sightings(id: &str, ts: &[i64]) -> DeviceSightings {
        let s = ts
            .iter()
            .map(|&t| {
                localize(&SightingRecord {
                    device_id: id.into(),
                    utc_timestamp: t,
                    point: encode_lat_lon(38.99, -76.93, 7).unwrap().center(),
                    accuracy: 3.0,
                    utc_offset: 0,
                })
            })
            .collect();
        DeviceSightings::new(id, s)
    }

    #[test]
    fn merge_uses_smallest_id_and_sorts() {
        let b2 = sightings("b2", &[30, 10]);
        let a9 = sightings("a9", &[20]);
        let store: HashMap<&str, &DeviceSightings> =
            [("b2", &b2), ("a9", &a9)].into_iter().collect();
        let g = group_keys([
            (
                "b2".to_string(),
                DedupKey {
                    home7: "dqcmc4p".parse().unwrap(),
                    top: vec![],
                },
            ),
            (
                "a9".to_string(),
                DedupKey {
                    home7: "dqcmc4p".parse().unwrap(),
                    top: vec![],
                },
            ),
        ]);
        let m = merge_group(&g[0], &store);
        assert_eq!(m.canonical_id, "a9");
        assert_eq!(m.source_ids, vec!["a9", "b2"]);
        let ts: Vec<i64> = m.sightings.iter().map(|s| s.utc_timestamp).collect();
        assert_eq!(ts, vec![10, 20, 30]);
        assert_eq!(m.sightings.len(), b2.len() + a9.len());
    }
}
