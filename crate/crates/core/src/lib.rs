//! Duplicate device detection for multi-vendor mobile device location data.
//!
//! Each device's home is imputed at geohash level 6 and refined to level 7,
//! its visited level-7 cells are ranked by unique hours, and devices sharing
//! the same home and the same ordered top-N cells are treated as one user.
//! Flagged pairs can be checked for hourly co-location, and a synthetic
//! multi-vendor generator supplies ground truth for scoring.

pub mod calendar;
pub mod colocation;
pub mod dedup;
pub mod geohash;
pub mod home;
pub mod ingest;
pub mod pipeline;
pub mod profile;
pub mod synth;

pub use calendar::{Day, DayHour, NightWindow, StudyMonth};
pub use geohash::{GeoPoint, GeohashCell};
