//! Base-32 geohash cells.
//!
//! A cell at level `L` carries `5 * L` interleaved bits, longitude first.
//! Cells are half-open boxes `[min, max)` on both axes; latitude `+90` and
//! longitude `+180` fall into the maximal cell of each axis.
//!
//! Encoding quantizes each axis to an integer cell index against exactly
//! representable dyadic boundaries, then interleaves the two indices. This
//! yields the same partition as repeated bisection without accumulating
//! rounding error.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Geohash alphabet: digits and lowercase letters without `a`, `i`, `l`, `o`.
pub const ALPHABET: &[u8; 32] = b"0123456789bcdefghjkmnpqrstuvwxyz";

pub const MIN_LEVEL: u8 = 1;
pub const MAX_LEVEL: u8 = 12;

/// Mean Earth radius used for the nominal cell dimensions.
const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeohashError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("geohash level {0} outside [1, 12]")]
    Level(u8),
    #[error("cannot take level-{wanted} parent of a level-{have} cell")]
    ParentLevel { wanted: u8, have: u8 },
    #[error("empty geohash")]
    Empty,
    #[error("geohash '{0}' is longer than 12 characters")]
    TooLong(String),
    #[error("invalid geohash character {ch:?} in '{code}'")]
    BadChar { ch: char, code: String },
}

/// A validated WGS84 coordinate in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeohashError> {
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(GeohashError::Latitude(lat));
        }
        if !lon.is_finite() || !(-180.0..=180.0).contains(&lon) {
            return Err(GeohashError::Longitude(lon));
        }
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Axis-aligned bounding box of a cell, half-open on both axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl Bounds {
    /// Half-open containment, except that the maximal cells also own the
    /// `+90` / `+180` edges.
    pub fn contains(&self, p: GeoPoint) -> bool {
        let lat_ok = (self.lat_min <= p.lat && p.lat < self.lat_max)
            || (self.lat_max == 90.0 && p.lat == 90.0);
        let lon_ok = (self.lon_min <= p.lon && p.lon < self.lon_max)
            || (self.lon_max == 180.0 && p.lon == 180.0);
        lat_ok && lon_ok
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint {
            lat: (self.lat_min + self.lat_max) / 2.0,
            lon: (self.lon_min + self.lon_max) / 2.0,
        }
    }
}

/// A geohash cell stored as its interleaved bit pattern.
///
/// Ordering matches lexicographic order of the base-32 code.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct GeohashCell {
    bits: u64,
    level: u8,
}

fn check_level(level: u8) -> Result<(), GeohashError> {
    if (MIN_LEVEL..=MAX_LEVEL).contains(&level) {
        Ok(())
    } else {
        Err(GeohashError::Level(level))
    }
}

/// Number of (longitude, latitude) bits in a cell of the given level.
fn axis_bits(level: u8) -> (u32, u32) {
    let total = 5 * level as u32;
    (total.div_ceil(2), total / 2)
}

/// Index of the cell containing `value` when `[lo, lo + span)` is cut into
/// `2^bits` equal parts. Boundaries `lo + k * span / 2^bits` are exact in
/// binary floating point, so the estimate is corrected against them.
fn quantize(value: f64, lo: f64, span: f64, bits: u32) -> u64 {
    let cells = 1u64 << bits;
    let step = span / cells as f64;
    let boundary = |k: u64| lo + k as f64 * step;
    let estimate = ((value - lo) / step).floor();
    let mut k = if estimate <= 0.0 {
        0
    } else {
        (estimate as u64).min(cells - 1)
    };
    while k > 0 && boundary(k) > value {
        k -= 1;
    }
    while k + 1 < cells && boundary(k + 1) <= value {
        k += 1;
    }
    k
}

fn interleave(lon_idx: u64, lat_idx: u64, level: u8) -> u64 {
    let (lon_bits, lat_bits) = axis_bits(level);
    let total = lon_bits + lat_bits;
    let mut out = 0u64;
    for i in 0..total {
        // bit i counted from the most significant end
        let bit = if i % 2 == 0 {
            (lon_idx >> (lon_bits - 1 - i / 2)) & 1
        } else {
            (lat_idx >> (lat_bits - 1 - i / 2)) & 1
        };
        out = (out << 1) | bit;
    }
    out
}

fn deinterleave(bits: u64, level: u8) -> (u64, u64) {
    let (lon_bits, lat_bits) = axis_bits(level);
    let total = lon_bits + lat_bits;
    let (mut lon, mut lat) = (0u64, 0u64);
    for i in 0..total {
        let bit = (bits >> (total - 1 - i)) & 1;
        if i % 2 == 0 {
            lon = (lon << 1) | bit;
        } else {
            lat = (lat << 1) | bit;
        }
    }
    (lon, lat)
}

/// The unique level-`level` cell containing `point`.
pub fn encode(point: GeoPoint, level: u8) -> Result<GeohashCell, GeohashError> {
    check_level(level)?;
    let (lon_bits, lat_bits) = axis_bits(level);
    let lon_idx = quantize(point.lon, -180.0, 360.0, lon_bits);
    let lat_idx = quantize(point.lat, -90.0, 180.0, lat_bits);
    Ok(GeohashCell {
        bits: interleave(lon_idx, lat_idx, level),
        level,
    })
}

/// Convenience wrapper validating raw coordinates first.
pub fn encode_lat_lon(lat: f64, lon: f64, level: u8) -> Result<GeohashCell, GeohashError> {
    encode(GeoPoint::new(lat, lon)?, level)
}

pub fn decode_bounds(cell: GeohashCell) -> Bounds {
    cell.bounds()
}

pub fn parent(cell: GeohashCell, level: u8) -> Result<GeohashCell, GeohashError> {
    cell.parent(level)
}

/// Nominal width and height in meters of a cell at the equator.
pub fn cell_dimensions_at_equator(level: u8) -> Result<(f64, f64), GeohashError> {
    check_level(level)?;
    let (lon_bits, lat_bits) = axis_bits(level);
    let deg = |span: f64, bits: u32| span / (1u64 << bits) as f64;
    let meters = |d: f64| EARTH_RADIUS_M * d.to_radians();
    Ok((meters(deg(360.0, lon_bits)), meters(deg(180.0, lat_bits))))
}

impl GeohashCell {
    pub fn level(&self) -> u8 {
        self.level
    }

    /// Raw interleaved bits, right-aligned.
    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn bounds(&self) -> Bounds {
        let (lon_bits, lat_bits) = axis_bits(self.level);
        let (lon_idx, lat_idx) = deinterleave(self.bits, self.level);
        let lon_step = 360.0 / (1u64 << lon_bits) as f64;
        let lat_step = 180.0 / (1u64 << lat_bits) as f64;
        Bounds {
            lat_min: -90.0 + lat_idx as f64 * lat_step,
            lat_max: -90.0 + (lat_idx + 1) as f64 * lat_step,
            lon_min: -180.0 + lon_idx as f64 * lon_step,
            lon_max: -180.0 + (lon_idx + 1) as f64 * lon_step,
        }
    }

    pub fn center(&self) -> GeoPoint {
        self.bounds().center()
    }

    pub fn parent(&self, level: u8) -> Result<GeohashCell, GeohashError> {
        check_level(level)?;
        if level > self.level {
            return Err(GeohashError::ParentLevel {
                wanted: level,
                have: self.level,
            });
        }
        Ok(GeohashCell {
            bits: self.bits >> (5 * (self.level - level) as u32),
            level,
        })
    }

    /// True when `self` is `other` or one of its ancestors.
    pub fn is_prefix_of(&self, other: &GeohashCell) -> bool {
        self.level <= other.level
            && other
                .parent(self.level)
                .map(|p| p == *self)
                .unwrap_or(false)
    }

    pub fn code(&self) -> String {
        self.to_string()
    }

    /// Bits shifted to a common 60-bit frame, so that comparing
    /// `(aligned, level)` reproduces string order.
    fn aligned(&self) -> u64 {
        self.bits << (5 * (MAX_LEVEL - self.level) as u32)
    }
}

impl Ord for GeohashCell {
    fn cmp(&self, other: &Self) -> Ordering {
        self.aligned()
            .cmp(&other.aligned())
            .then(self.level.cmp(&other.level))
    }
}

impl PartialOrd for GeohashCell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for GeohashCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut buf = [0u8; MAX_LEVEL as usize];
        let level = self.level as usize;
        for (i, b) in buf[..level].iter_mut().enumerate() {
            let shift = 5 * (level - 1 - i);
            *b = ALPHABET[((self.bits >> shift) & 0x1f) as usize];
        }
        // alphabet is ASCII
        f.write_str(std::str::from_utf8(&buf[..self.level as usize]).unwrap())
    }
}

impl fmt::Debug for GeohashCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GeohashCell({self})")
    }
}

fn char_value(ch: u8) -> Option<u64> {
    ALPHABET.iter().position(|&c| c == ch).map(|i| i as u64)
}

impl FromStr for GeohashCell {
    type Err = GeohashError;

    fn from_str(code: &str) -> Result<Self, Self::Err> {
        if code.is_empty() {
            return Err(GeohashError::Empty);
        }
        if code.chars().count() > MAX_LEVEL as usize {
            return Err(GeohashError::TooLong(code.to_string()));
        }
        let mut bits = 0u64;
        for ch in code.chars() {
            let v = u8::try_from(ch).ok().and_then(char_value).ok_or_else(|| {
                GeohashError::BadChar {
                    ch,
                    code: code.to_string(),
                }
            })?;
            bits = (bits << 5) | v;
        }
        Ok(GeohashCell {
            bits,
            level: code.len() as u8,
        })
    }
}

impl Serialize for GeohashCell {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GeohashCell {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(s: &str) -> GeohashCell {
        s.parse().unwrap()
    }

    #[test]
    fn origin_level_one_is_s() {
        let c = encode_lat_lon(0.0, 0.0, 1).unwrap();
        assert_eq!(c.to_string(), "s");
        let b = c.bounds();
        assert_eq!(
            (b.lat_min, b.lat_max, b.lon_min, b.lon_max),
            (0.0, 45.0, 0.0, 45.0)
        );
    }

    #[test]
    fn parent_truncates() {
        let c = cell("dqcmc4p");
        assert_eq!(c.parent(6).unwrap().to_string(), "dqcmc4");
        assert_eq!(c.parent(7).unwrap(), c);
        assert!(matches!(
            cell("dqcmc4").parent(7),
            Err(GeohashError::ParentLevel { wanted: 7, have: 6 })
        ));
    }

    #[test]
    fn figure_cell_contains_its_center() {
        let c = cell("dqcmc4p");
        assert_eq!(encode(c.center(), 7).unwrap(), c);
    }

    #[test]
    fn poles_and_antimeridian_clamp_to_max_cell() {
        assert_eq!(encode_lat_lon(90.0, 180.0, 3).unwrap().to_string(), "zzz");
        assert_eq!(encode_lat_lon(-90.0, -180.0, 3).unwrap().to_string(), "000");
        let b = encode_lat_lon(90.0, 180.0, 5).unwrap().bounds();
        assert!(b.contains(GeoPoint::new(90.0, 180.0).unwrap()));
    }

    #[test]
    fn half_open_boundaries() {
        // lat 0 belongs to the northern half, lon 0 to the eastern half
        assert_eq!(encode_lat_lon(0.0, -0.0000001, 1).unwrap().to_string(), "e");
        assert_eq!(encode_lat_lon(-0.0000001, 0.0, 1).unwrap().to_string(), "k");
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(
            GeoPoint::new(91.0, 0.0),
            Err(GeohashError::Latitude(_))
        ));
        assert!(matches!(
            GeoPoint::new(0.0, -180.5),
            Err(GeohashError::Longitude(_))
        ));
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
        assert!(matches!(
            encode_lat_lon(0.0, 0.0, 0),
            Err(GeohashError::Level(0))
        ));
        assert!(matches!(
            encode_lat_lon(0.0, 0.0, 13),
            Err(GeohashError::Level(13))
        ));
        assert!(matches!(
            "".parse::<GeohashCell>(),
            Err(GeohashError::Empty)
        ));
        assert!(matches!(
            "dqca".parse::<GeohashCell>(),
            Err(GeohashError::BadChar { ch: 'a', .. })
        ));
        assert!(matches!(
            "DQC".parse::<GeohashCell>(),
            Err(GeohashError::BadChar { .. })
        ));
        assert!(matches!(
            "0123456789bcd".parse::<GeohashCell>(),
            Err(GeohashError::TooLong(_))
        ));
    }

    #[test]
    fn ordering_is_string_ordering() {
        let mut codes = vec!["dq", "dq0", "d", "zz", "0", "dqz", "e", "dp"];
        let mut cells: Vec<GeohashCell> = codes.iter().map(|c| cell(c)).collect();
        codes.sort();
        cells.sort();
        let back: Vec<String> = cells.iter().map(|c| c.to_string()).collect();
        assert_eq!(back, codes);
    }

    #[test]
    fn level7_equator_dimensions() {
        let (w, h) = cell_dimensions_at_equator(7).unwrap();
        assert!((w - 152.9).abs() / 152.9 < 0.01, "{w}");
        assert!((h - 152.4).abs() / 152.4 < 0.01, "{h}");
    }
}
