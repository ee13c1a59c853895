//! Domain records shared across the pipeline.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Duration, FixedOffset, NaiveDate, SecondsFormat, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::level::OccupancyLevel;

pub type StationId = u32;
pub type Timestamp = DateTime<Utc>;

/// Width of one evaluation grid cell.
pub const GRID_MINUTES: i64 = 15;
/// Longest prediction horizon, in hours.
pub const MAX_HORIZON_HOURS: i64 = 72;
/// Cells in one day of the 15-minute grid.
pub const CELLS_PER_DAY: usize = 96;

pub fn grid_step() -> Duration {
    Duration::minutes(GRID_MINUTES)
}

pub fn is_on_grid(t: Timestamp) -> bool {
    t.timestamp() % (GRID_MINUTES * 60) == 0
}

/// RFC 3339, UTC, second resolution: `2015-02-05T08:00:00Z`.
pub fn format_timestamp(t: Timestamp) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn parse_timestamp(s: &str) -> Result<Timestamp> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::Parse(format!("bad timestamp {s:?}: {e}")))
}

/// One observation of a station as published by the feed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationSnapshot {
    pub station_id: StationId,
    pub timestamp: Timestamp,
    pub bikes: u32,
    pub free_slots: u32,
    pub operational: bool,
    pub latitude: f64,
    pub longitude: f64,
    pub elevation_m: Option<f64>,
}

impl StationSnapshot {
    /// The feed publishes no capacity, so it is inferred per snapshot.
    pub fn capacity(&self) -> u32 {
        self.bikes + self.free_slots
    }

    pub fn level(&self) -> Result<OccupancyLevel> {
        crate::level::discretize(self.bikes, self.free_slots)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeatherRecord {
    pub timestamp: Timestamp,
    pub temperature_c: f64,
    pub relative_humidity_pct: f64,
    pub dew_point_c: f64,
    pub wind_speed_kmh: f64,
    pub is_forecast: bool,
    /// Equals `timestamp` for historical observations.
    pub issued_at: Timestamp,
}

impl WeatherRecord {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.relative_humidity_pct) {
            return Err(Error::InvalidInput(format!(
                "relative humidity {} outside [0, 100]",
                self.relative_humidity_pct
            )));
        }
        if self.wind_speed_kmh.is_nan() || self.wind_speed_kmh < 0.0 {
            return Err(Error::InvalidInput(format!(
                "negative wind speed {}",
                self.wind_speed_kmh
            )));
        }
        if self.is_forecast {
            let lead = self.timestamp - self.issued_at;
            if lead < Duration::zero() || lead > Duration::hours(MAX_HORIZON_HOURS) {
                return Err(Error::InvalidInput(format!(
                    "forecast lead time {}h outside [0, {MAX_HORIZON_HOURS}h]",
                    lead.num_minutes() as f64 / 60.0
                )));
            }
        } else if self.issued_at != self.timestamp {
            return Err(Error::InvalidInput(
                "historical weather record must have issued_at == timestamp".into(),
            ));
        }
        Ok(())
    }
}

/// Converts instants to the city's civil time.
///
/// A fixed offset: the calendar predictors only need the local date, the
/// weekday and the minute of day.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CityClock {
    offset: FixedOffset,
}

impl CityClock {
    pub fn new(offset: FixedOffset) -> Self {
        Self { offset }
    }

    pub fn utc() -> Self {
        Self::new(FixedOffset::east_opt(0).expect("zero offset"))
    }

    pub fn offset(&self) -> FixedOffset {
        self.offset
    }

    pub fn local_date(&self, t: Timestamp) -> NaiveDate {
        t.with_timezone(&self.offset).date_naive()
    }

    /// `0..1440`.
    pub fn minute_of_day(&self, t: Timestamp) -> u32 {
        let local = t.with_timezone(&self.offset);
        local.hour() * 60 + local.minute()
    }

    /// `0` is Monday.
    pub fn day_of_week(&self, t: Timestamp) -> u32 {
        t.with_timezone(&self.offset).weekday().num_days_from_monday()
    }

    /// Index of the 15-minute slot of the local day, `0..96`.
    pub fn slot_of_day(&self, t: Timestamp) -> usize {
        (self.minute_of_day(t) / GRID_MINUTES as u32) as usize
    }

    /// Midnight of the given local date, as a UTC instant.
    pub fn local_midnight(&self, date: NaiveDate) -> Timestamp {
        let naive = date.and_hms_opt(0, 0, 0).expect("midnight");
        (naive - Duration::seconds(i64::from(self.offset.local_minus_utc()))).and_utc()
    }
}

impl Default for CityClock {
    /// Central European Time, the city's winter offset.
    fn default() -> Self {
        Self::new(FixedOffset::east_opt(3600).expect("valid offset"))
    }
}

impl FromStr for CityClock {
    type Err = Error;

    /// Accepts `Z`, `+01:00`, `-03:30`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "Z" || s == "UTC" {
            return Ok(Self::utc());
        }
        let bad = || Error::Parse(format!("bad UTC offset {s:?}, expected like +01:00"));
        let (sign, rest) = match s.as_bytes().first() {
            Some(b'+') => (1, &s[1..]),
            Some(b'-') => (-1, &s[1..]),
            _ => return Err(bad()),
        };
        let (h, m) = rest.split_once(':').ok_or_else(bad)?;
        let h: i32 = h.parse().map_err(|_| bad())?;
        let m: i32 = m.parse().map_err(|_| bad())?;
        FixedOffset::east_opt(sign * (h * 3600 + m * 60))
            .map(Self::new)
            .ok_or_else(bad)
    }
}

impl fmt::Display for CityClock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.offset)
    }
}

/// Civil dates observed as holidays in the city.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HolidayCalendar {
    dates: BTreeSet<NaiveDate>,
}

impl HolidayCalendar {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, date: NaiveDate) -> bool {
        self.dates.insert(date)
    }

    pub fn is_holiday(&self, date: NaiveDate) -> bool {
        self.dates.contains(&date)
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.dates.iter().copied()
    }
}

impl FromIterator<NaiveDate> for HolidayCalendar {
    fn from_iter<I: IntoIterator<Item = NaiveDate>>(iter: I) -> Self {
        Self {
            dates: iter.into_iter().collect(),
        }
    }
}

/// Forecasting method under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Arima,
    Rf,
    RfExtended,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Arima, Method::Rf, Method::RfExtended];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Arima => "arima",
            Method::Rf => "rf",
            Method::RfExtended => "rf_extended",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictionRecord {
    pub station_id: StationId,
    /// Model build time.
    pub made_at: Timestamp,
    pub target_time: Timestamp,
    pub predicted: OccupancyLevel,
    pub method: Method,
}

impl PredictionRecord {
    pub fn new(
        station_id: StationId,
        made_at: Timestamp,
        target_time: Timestamp,
        predicted: OccupancyLevel,
        method: Method,
    ) -> Result<Self> {
        let age = target_time - made_at;
        if age < Duration::zero() || age > Duration::hours(MAX_HORIZON_HOURS) {
            return Err(Error::InvalidInput(format!(
                "prediction age {}min outside [0, {MAX_HORIZON_HOURS}h]",
                age.num_minutes()
            )));
        }
        if !is_on_grid(target_time) {
            return Err(Error::InvalidInput(format!(
                "target time {} is not on the 15-minute grid",
                format_timestamp(target_time)
            )));
        }
        Ok(Self {
            station_id,
            made_at,
            target_time,
            predicted,
            method,
        })
    }

    pub fn age(&self) -> Duration {
        self.target_time - self.made_at
    }
}
