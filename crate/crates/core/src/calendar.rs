//! Local calendar arithmetic: days are counted from the Unix epoch in the
//! sighting's local time, hours are 0..=23 within a local day.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const SECONDS_PER_DAY: i64 = 86_400;
pub const SECONDS_PER_HOUR: i64 = 3_600;

const EPOCH: NaiveDate = match NaiveDate::from_ymd_opt(1970, 1, 1) {
    Some(d) => d,
    None => panic!("epoch"),
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CalendarError {
    #[error("invalid study month '{0}', expected YYYY-MM")]
    Month(String),
    #[error("night window hours must be in 0..=23 and differ (got {start}..{end})")]
    NightWindow { start: u8, end: u8 },
}

/// Local calendar date, as days since 1970-01-01.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Day(pub i32);

impl Day {
    pub fn from_date(date: NaiveDate) -> Self {
        Day((date - EPOCH).num_days() as i32)
    }

    pub fn date(self) -> NaiveDate {
        EPOCH + Duration::days(self.0 as i64)
    }

    pub fn prev(self) -> Day {
        Day(self.0 - 1)
    }

    pub fn next(self) -> Day {
        Day(self.0 + 1)
    }
}

impl fmt::Display for Day {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.date().format("%Y-%m-%d"))
    }
}

/// One local clock hour of one local day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DayHour {
    pub day: Day,
    pub hour: u8,
}

/// Split a local instant (UTC seconds plus offset) into day and hour.
pub fn local_day_hour(utc_timestamp: i64, utc_offset: i32) -> DayHour {
    let local = utc_timestamp + utc_offset as i64;
    DayHour {
        day: Day(local.div_euclid(SECONDS_PER_DAY) as i32),
        hour: (local.rem_euclid(SECONDS_PER_DAY) / SECONDS_PER_HOUR) as u8,
    }
}

/// A calendar month, e.g. `2020-01`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StudyMonth {
    year: i32,
    month: u32,
}

impl StudyMonth {
    pub fn new(year: i32, month: u32) -> Result<Self, CalendarError> {
        NaiveDate::from_ymd_opt(year, month, 1)
            .map(|_| Self { year, month })
            .ok_or_else(|| CalendarError::Month(format!("{year}-{month:02}")))
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn month(&self) -> u32 {
        self.month
    }

    pub fn first_day(&self) -> Day {
        Day::from_date(NaiveDate::from_ymd_opt(self.year, self.month, 1).unwrap())
    }

    pub fn num_days(&self) -> u32 {
        let first = NaiveDate::from_ymd_opt(self.year, self.month, 1).unwrap();
        let next = first
            .checked_add_months(chrono::Months::new(1))
            .expect("month overflow");
        (next - first).num_days() as u32
    }

    /// Exclusive end of the month.
    pub fn end_day(&self) -> Day {
        Day(self.first_day().0 + self.num_days() as i32)
    }

    pub fn contains(&self, day: Day) -> bool {
        self.first_day() <= day && day < self.end_day()
    }

    /// Day `n` of the month, 1-based.
    pub fn day(&self, n: u32) -> Day {
        Day(self.first_day().0 + n as i32 - 1)
    }

    pub fn days(&self) -> impl Iterator<Item = Day> {
        (self.first_day().0..self.end_day().0).map(Day)
    }

    /// UTC second at which the month starts for the given offset.
    pub fn start_utc(&self, utc_offset: i32) -> i64 {
        self.first_day().0 as i64 * SECONDS_PER_DAY - utc_offset as i64
    }
}

impl fmt::Display for StudyMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for StudyMonth {
    type Err = CalendarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CalendarError::Month(s.to_string());
        let (y, m) = s.trim().split_once('-').ok_or_else(bad)?;
        let year: i32 = y.parse().map_err(|_| bad())?;
        let month: u32 = m.parse().map_err(|_| bad())?;
        let date = NaiveDate::from_ymd_opt(year, month, 1).ok_or_else(bad)?;
        Ok(Self {
            year: date.year(),
            month: date.month(),
        })
    }
}

impl Serialize for StudyMonth {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StudyMonth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Nighttime hours `[start, end)` in local time, wrapping past midnight when
/// `start > end`. A night that crosses midnight is labeled with the date on
/// which it began.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NightWindow {
    pub start_hour: u8,
    pub end_hour: u8,
}

impl Default for NightWindow {
    fn default() -> Self {
        Self {
            start_hour: 21,
            end_hour: 6,
        }
    }
}

impl NightWindow {
    pub fn new(start_hour: u8, end_hour: u8) -> Result<Self, CalendarError> {
        let w = Self {
            start_hour,
            end_hour,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), CalendarError> {
        if self.start_hour > 23 || self.end_hour > 23 || self.start_hour == self.end_hour {
            return Err(CalendarError::NightWindow {
                start: self.start_hour,
                end: self.end_hour,
            });
        }
        Ok(())
    }

    pub fn contains(&self, hour: u8) -> bool {
        if self.start_hour < self.end_hour {
            self.start_hour <= hour && hour < self.end_hour
        } else {
            hour >= self.start_hour || hour < self.end_hour
        }
    }

    /// The night a local hour belongs to, if it is a nighttime hour.
    pub fn night_of(&self, at: DayHour) -> Option<Day> {
        if !self.contains(at.hour) {
            return None;
        }
        if self.start_hour > self.end_hour && at.hour < self.end_hour {
            Some(at.day.prev())
        } else {
            Some(at.day)
        }
    }
}
