//! Helpers shared by the integration tests.
#![allow(dead_code)]

use devdup_core::calendar::{SECONDS_PER_DAY, SECONDS_PER_HOUR};
use devdup_core::ingest::{localize, LocalSighting, SightingRecord};
use devdup_core::{GeohashCell, StudyMonth};

const ALPHABET: &[u8; 32] = b"0123456789bcdefghjkmnpqrstuvwxyz";

/// Reference encoder: halve the longitude or latitude interval once per bit,
/// longitude first, five bits per character.
pub fn oracle_encode(lat: f64, lon: f64, level: usize) -> String {
    let (mut lat_lo, mut lat_hi) = (-90.0f64, 90.0f64);
    let (mut lon_lo, mut lon_hi) = (-180.0f64, 180.0f64);
    let mut even = true;
    let mut out = String::new();
    for _ in 0..level {
        let mut ch = 0usize;
        for _ in 0..5 {
            let (v, lo, hi) = if even {
                (lon, &mut lon_lo, &mut lon_hi)
            } else {
                (lat, &mut lat_lo, &mut lat_hi)
            };
            let mid = (*lo + *hi) / 2.0;
            ch <<= 1;
            if v >= mid {
                ch |= 1;
                *lo = mid;
            } else {
                *hi = mid;
            }
            even = !even;
        }
        out.push(ALPHABET[ch] as char);
    }
    out
}

/// Reference decoder: `(lat_min, lat_max, lon_min, lon_max)`.
pub fn oracle_decode(code: &str) -> (f64, f64, f64, f64) {
    let (mut lat_lo, mut lat_hi) = (-90.0f64, 90.0f64);
    let (mut lon_lo, mut lon_hi) = (-180.0f64, 180.0f64);
    let mut even = true;
    for c in code.bytes() {
        let v = ALPHABET.iter().position(|a| *a == c).expect("alphabet");
        for shift in (0..5).rev() {
            let bit = (v >> shift) & 1 == 1;
            let (lo, hi) = if even {
                (&mut lon_lo, &mut lon_hi)
            } else {
                (&mut lat_lo, &mut lat_hi)
            };
            let mid = (*lo + *hi) / 2.0;
            if bit {
                *lo = mid;
            } else {
                *hi = mid;
            }
            even = !even;
        }
    }
    (lat_lo, lat_hi, lon_lo, lon_hi)
}

pub fn month() -> StudyMonth {
    "2020-01".parse().unwrap()
}

/// A sighting at the center of `cell` on day `d` of January 2020, local
/// time `hour:minute` with the given UTC offset.
pub fn sighting_at(
    cell: GeohashCell,
    d: u32,
    hour: i64,
    minute: i64,
    offset: i32,
) -> LocalSighting {
    let local = month().day(d).0 as i64 * SECONDS_PER_DAY + hour * SECONDS_PER_HOUR + minute * 60;
    localize(&SightingRecord {
        device_id: "t".into(),
        utc_timestamp: local - offset as i64,
        point: cell.center(),
        accuracy: 5.0,
        utc_offset: offset,
    })
}

pub fn cell(code: &str) -> GeohashCell {
    code.parse().unwrap()
}

/// Brute-force duplicate partition: compare every pair of keyed devices on
/// home and element-wise top-`n`, then take connected components.
pub fn brute_force_partition(
    devices: &[devdup_core::dedup::DeviceFeatures],
    n: usize,
) -> std::collections::BTreeSet<std::collections::BTreeSet<String>> {
    let keyed: Vec<_> = devices
        .iter()
        .filter(|d| d.home7.is_some() && d.visited.len() >= n)
        .collect();
    let same = |a: &devdup_core::dedup::DeviceFeatures, b: &devdup_core::dedup::DeviceFeatures| {
        a.home7 == b.home7 && (0..n).all(|i| a.visited[i].cell7 == b.visited[i].cell7)
    };
    let mut comp: Vec<usize> = (0..keyed.len()).collect();
    fn root(comp: &mut [usize], mut i: usize) -> usize {
        while comp[i] != i {
            comp[i] = comp[comp[i]];
            i = comp[i];
        }
        i
    }
    for i in 0..keyed.len() {
        for j in i + 1..keyed.len() {
            if same(keyed[i], keyed[j]) {
                let (a, b) = (root(&mut comp, i), root(&mut comp, j));
                comp[a.max(b)] = a.min(b);
            }
        }
    }
    let mut parts: std::collections::BTreeMap<usize, std::collections::BTreeSet<String>> =
        Default::default();
    for (i, d) in keyed.iter().enumerate() {
        let r = root(&mut comp, i);
        parts.entry(r).or_default().insert(d.device_id.clone());
    }
    parts.into_values().collect()
}
