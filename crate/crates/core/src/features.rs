//! Predictor rows and the two-window training sampler.
//!
//! A model built at `t_build` trains on up to 1,000 rows drawn from the
//! four weeks that started 54 weeks earlier (the same season a year ago)
//! and up to 2,000 rows drawn from the 13 weeks immediately before it.

use std::io::Write;

use chrono::Duration;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{resample, ResampledSeries, SnapshotStore};
use crate::level::OccupancyLevel;
use crate::rng;
use crate::types::{
    format_timestamp, grid_step, is_on_grid, CityClock, HolidayCalendar, StationId, Timestamp, WeatherRecord,
    GRID_MINUTES, MAX_HORIZON_HOURS,
};

/// Largest time distance between a cell and the weather record joined to it.
pub const WEATHER_JOIN_MINUTES: i64 = 90;

pub const PREDICTOR_TIME_OF_DAY: &str = "time_of_day";
pub const PREDICTOR_DAY_OF_WEEK: &str = "day_of_week";
pub const PREDICTOR_HOLIDAY: &str = "holiday";
pub const PREDICTOR_TEMPERATURE: &str = "temperature";
pub const PREDICTOR_HUMIDITY: &str = "humidity";
pub const PREDICTOR_DEW_POINT: &str = "dew_point";
pub const PREDICTOR_WIND_SPEED: &str = "wind_speed";

/// Which predictors a model sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorSet {
    /// Calendar position only: what the bike system itself records.
    Rf,
    /// Adds the holiday flag and the weather block.
    RfExtended,
}

impl PredictorSet {
    pub fn names(self) -> &'static [&'static str] {
        match self {
            PredictorSet::Rf => &[PREDICTOR_TIME_OF_DAY, PREDICTOR_DAY_OF_WEEK],
            PredictorSet::RfExtended => &[
                PREDICTOR_TIME_OF_DAY,
                PREDICTOR_DAY_OF_WEEK,
                PREDICTOR_HOLIDAY,
                PREDICTOR_TEMPERATURE,
                PREDICTOR_HUMIDITY,
                PREDICTOR_DEW_POINT,
                PREDICTOR_WIND_SPEED,
            ],
        }
    }

    pub fn needs_weather(self) -> bool {
        self == PredictorSet::RfExtended
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PredictorSet::Rf => "rf",
            PredictorSet::RfExtended => "rf_extended",
        }
    }
}

impl std::fmt::Display for PredictorSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PredictorSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rf" => Ok(PredictorSet::Rf),
            "rf_extended" => Ok(PredictorSet::RfExtended),
            other => Err(Error::Parse(format!("unknown predictor set {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeatherFeatures {
    pub temperature_c: f64,
    pub relative_humidity_pct: f64,
    pub dew_point_c: f64,
    pub wind_speed_kmh: f64,
}

impl From<&WeatherRecord> for WeatherFeatures {
    fn from(w: &WeatherRecord) -> Self {
        Self {
            temperature_c: w.temperature_c,
            relative_humidity_pct: w.relative_humidity_pct,
            dew_point_c: w.dew_point_c,
            wind_speed_kmh: w.wind_speed_kmh,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureRow {
    pub station_id: StationId,
    pub timestamp: Timestamp,
    /// `0..1440`, local time.
    pub minute_of_day: u32,
    /// `0` is Monday.
    pub day_of_week: u32,
    pub is_holiday: bool,
    pub weather: Option<WeatherFeatures>,
    /// `None` for prediction rows.
    pub label: Option<OccupancyLevel>,
}

impl FeatureRow {
    fn calendar(station_id: StationId, t: Timestamp, clock: &CityClock, holidays: &HolidayCalendar) -> Self {
        Self {
            station_id,
            timestamp: t,
            minute_of_day: clock.minute_of_day(t),
            day_of_week: clock.day_of_week(t),
            is_holiday: holidays.is_holiday(clock.local_date(t)),
            weather: None,
            label: None,
        }
    }

    /// Numeric value of a named predictor, if the row carries it.
    pub fn value(&self, predictor: &str) -> Option<f64> {
        let w = self.weather.as_ref();
        match predictor {
            PREDICTOR_TIME_OF_DAY => Some(f64::from(self.minute_of_day)),
            PREDICTOR_DAY_OF_WEEK => Some(f64::from(self.day_of_week)),
            PREDICTOR_HOLIDAY => Some(if self.is_holiday { 1.0 } else { 0.0 }),
            PREDICTOR_TEMPERATURE => w.map(|w| w.temperature_c),
            PREDICTOR_HUMIDITY => w.map(|w| w.relative_humidity_pct),
            PREDICTOR_DEW_POINT => w.map(|w| w.dew_point_c),
            PREDICTOR_WIND_SPEED => w.map(|w| w.wind_speed_kmh),
            _ => None,
        }
    }

    /// Values for `names`, failing on the first one the row lacks.
    pub fn values(&self, names: &[impl AsRef<str>]) -> Result<Vec<f64>> {
        names
            .iter()
            .map(|n| {
                self.value(n.as_ref())
                    .ok_or_else(|| Error::MissingPredictor(n.as_ref().to_string()))
            })
            .collect()
    }
}

/// Time-sorted weather records, split into observations and forecasts.
#[derive(Debug, Clone, Default)]
pub struct WeatherIndex {
    historical: Vec<WeatherRecord>,
    /// Sorted by `(timestamp, issued_at)`.
    forecasts: Vec<WeatherRecord>,
}

impl WeatherIndex {
    pub fn new(records: &[WeatherRecord]) -> Self {
        let mut historical: Vec<_> = records.iter().filter(|r| !r.is_forecast).copied().collect();
        let mut forecasts: Vec<_> = records.iter().filter(|r| r.is_forecast).copied().collect();
        historical.sort_by_key(|r| r.timestamp);
        forecasts.sort_by_key(|r| (r.timestamp, r.issued_at));
        Self { historical, forecasts }
    }

    pub fn is_empty(&self) -> bool {
        self.historical.is_empty() && self.forecasts.is_empty()
    }

    /// Nearest observation to `t` within the join tolerance, considering
    /// only records timestamped before `visible_before`. Ties go to the
    /// earlier record.
    pub fn nearest_observation(&self, t: Timestamp, visible_before: Timestamp) -> Option<&WeatherRecord> {
        let tol = Duration::minutes(WEATHER_JOIN_MINUTES);
        let lo = self.historical.partition_point(|r| r.timestamp < t - tol);
        let hi = self
            .historical
            .partition_point(|r| r.timestamp <= t + tol && r.timestamp < visible_before);
        self.historical[lo..hi.max(lo)]
            .iter()
            .min_by_key(|r| ((r.timestamp - t).num_seconds().abs(), r.timestamp))
    }

    /// Forecast for `t` as known at `t_build`: among records issued at or
    /// before `t_build` and within the join tolerance of `t`, the most
    /// recently issued, then the nearest in time, then the earlier.
    pub fn forecast_for(&self, t: Timestamp, t_build: Timestamp) -> Option<&WeatherRecord> {
        let tol = Duration::minutes(WEATHER_JOIN_MINUTES);
        let lo = self.forecasts.partition_point(|r| r.timestamp < t - tol);
        let hi = self.forecasts.partition_point(|r| r.timestamp <= t + tol);
        self.forecasts[lo..hi]
            .iter()
            .filter(|r| r.issued_at <= t_build)
            .min_by_key(|r| {
                (
                    std::cmp::Reverse(r.issued_at),
                    (r.timestamp - t).num_seconds().abs(),
                    r.timestamp,
                )
            })
    }
}

/// Rows built from one window, plus what had to be left out.
#[derive(Debug, Clone, Default)]
pub struct BuiltRows {
    pub rows: Vec<FeatureRow>,
    /// Cells with no observation.
    pub unobserved: usize,
    /// Observed cells dropped for lack of weather within the join tolerance.
    pub dropped_no_weather: usize,
}

/// Labeled rows for every observed cell of an already-resampled series.
///
/// Weather is only joined from observations timestamped before the end of
/// the series, so rows never see past their window.
pub fn rows_from_series(
    series: &ResampledSeries,
    weather: &WeatherIndex,
    holidays: &HolidayCalendar,
    clock: &CityClock,
    set: PredictorSet,
) -> BuiltRows {
    let mut out = BuiltRows::default();
    for (t, cell) in series.iter() {
        let Some(label) = cell.level() else {
            out.unobserved += 1;
            continue;
        };
        let mut row = FeatureRow::calendar(series.station_id, t, clock, holidays);
        row.label = Some(label);
        if set.needs_weather() {
            match weather.nearest_observation(t, series.grid_end) {
                Some(w) => row.weather = Some(w.into()),
                None => {
                    out.dropped_no_weather += 1;
                    continue;
                }
            }
        }
        out.rows.push(row);
    }
    out
}

/// Labeled rows for a station over `[start, end)`.
#[allow(clippy::too_many_arguments)]
pub fn build_rows(
    store: &SnapshotStore,
    weather: &WeatherIndex,
    holidays: &HolidayCalendar,
    clock: &CityClock,
    station: StationId,
    start: Timestamp,
    end: Timestamp,
    set: PredictorSet,
) -> Result<BuiltRows> {
    let series = resample(store, station, start, end)?;
    Ok(rows_from_series(&series, weather, holidays, clock, set))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerSpec {
    pub t_build: Timestamp,
    pub n_yearago: usize,
    pub n_recent: usize,
    pub seed: u64,
}

impl SamplerSpec {
    pub const DEFAULT_YEARAGO: usize = 1000;
    pub const DEFAULT_RECENT: usize = 2000;

    pub fn new(t_build: Timestamp, seed: u64) -> Self {
        Self {
            t_build,
            n_yearago: Self::DEFAULT_YEARAGO,
            n_recent: Self::DEFAULT_RECENT,
            seed,
        }
    }

    /// `[t_build - 54 weeks, t_build - 50 weeks)`.
    pub fn yearago_window(&self) -> (Timestamp, Timestamp) {
        (self.t_build - Duration::weeks(54), self.t_build - Duration::weeks(50))
    }

    /// `[t_build - 13 weeks, t_build)`.
    pub fn recent_window(&self) -> (Timestamp, Timestamp) {
        (self.t_build - Duration::weeks(13), self.t_build)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_yearago == 0 || self.n_recent == 0 {
            return Err(Error::InvalidInput("sampler counts must be positive".into()));
        }
        if !is_on_grid(self.t_build) {
            return Err(Error::InvalidInput(format!(
                "build time {} is not on the 15-minute grid",
                format_timestamp(self.t_build)
            )));
        }
        Ok(())
    }
}

/// Candidate rows from each sampler window.
#[derive(Debug, Clone, Default)]
pub struct WindowRows {
    pub yearago: Vec<FeatureRow>,
    pub recent: Vec<FeatureRow>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingSample {
    /// Year-ago block first, then the recent block, each in time order.
    pub rows: Vec<FeatureRow>,
    /// One message per window that held fewer rows than requested.
    pub warnings: Vec<String>,
}

fn sample_window(
    rows: &[FeatureRow],
    wanted: usize,
    seed: u64,
    label: u64,
    name: &str,
    warnings: &mut Vec<String>,
) -> Result<Vec<FeatureRow>> {
    if rows.is_empty() {
        return Err(Error::EmptyWindow(name.to_string()));
    }
    if rows.len() <= wanted {
        if rows.len() < wanted {
            warnings.push(format!("{name} window holds {} rows, {wanted} requested", rows.len()));
        }
        return Ok(rows.to_vec());
    }
    let mut rng = rng::stream(seed, &[rng::STREAM_SAMPLER, label]);
    let mut picked = index::sample(&mut rng, rows.len(), wanted).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| rows[i]).collect())
}

/// Uniform sampling without replacement within each window.
pub fn sample_training_set(windows: &WindowRows, spec: &SamplerSpec) -> Result<TrainingSample> {
    spec.validate()?;
    let mut warnings = Vec::new();
    let mut rows = sample_window(
        &windows.yearago,
        spec.n_yearago,
        spec.seed,
        0,
        "year-ago",
        &mut warnings,
    )?;
    rows.extend(sample_window(
        &windows.recent,
        spec.n_recent,
        spec.seed,
        1,
        "recent",
        &mut warnings,
    )?);
    Ok(TrainingSample { rows, warnings })
}

/// Candidate rows for both sampler windows from a series covering them.
pub fn window_rows(
    series: &ResampledSeries,
    spec: &SamplerSpec,
    weather: &WeatherIndex,
    holidays: &HolidayCalendar,
    clock: &CityClock,
    set: PredictorSet,
) -> Result<WindowRows> {
    let (ya0, ya1) = spec.yearago_window();
    let (re0, re1) = spec.recent_window();
    Ok(WindowRows {
        yearago: rows_from_series(&series.slice(ya0, ya1)?, weather, holidays, clock, set).rows,
        recent: rows_from_series(&series.slice(re0, re1)?, weather, holidays, clock, set).rows,
    })
}

/// Resamples both windows from the store and draws the training sample.
pub fn training_sample(
    store: &SnapshotStore,
    weather: &WeatherIndex,
    holidays: &HolidayCalendar,
    clock: &CityClock,
    station: StationId,
    spec: &SamplerSpec,
    set: PredictorSet,
) -> Result<TrainingSample> {
    spec.validate()?;
    let (ya0, ya1) = spec.yearago_window();
    let (re0, re1) = spec.recent_window();
    let windows = WindowRows {
        yearago: build_rows(store, weather, holidays, clock, station, ya0, ya1, set)?.rows,
        recent: build_rows(store, weather, holidays, clock, station, re0, re1, set)?.rows,
    };
    sample_training_set(&windows, spec)
}

/// Unlabeled rows for every 15-minute instant in `(t_build, t_build + horizon]`.
///
/// The extended set joins forecasts issued no later than `t_build`.
pub fn build_prediction_rows(
    station: StationId,
    t_build: Timestamp,
    horizon: Duration,
    weather: &WeatherIndex,
    holidays: &HolidayCalendar,
    clock: &CityClock,
    set: PredictorSet,
) -> Result<Vec<FeatureRow>> {
    if horizon.num_seconds() % (GRID_MINUTES * 60) != 0
        || horizon < Duration::zero()
        || horizon > Duration::hours(MAX_HORIZON_HOURS)
    {
        return Err(Error::InvalidInput(format!(
            "horizon of {} minutes must be a multiple of 15 minutes up to {MAX_HORIZON_HOURS} h",
            horizon.num_minutes()
        )));
    }
    let steps = horizon.num_minutes() / GRID_MINUTES;
    let mut rows = Vec::with_capacity(steps as usize);
    let mut uncovered = Vec::new();
    for k in 1..=steps {
        let t = t_build + grid_step() * k as i32;
        let mut row = FeatureRow::calendar(station, t, clock, holidays);
        if set.needs_weather() {
            match weather.forecast_for(t, t_build) {
                Some(w) => row.weather = Some(w.into()),
                None => uncovered.push(t),
            }
        }
        rows.push(row);
    }
    if !uncovered.is_empty() {
        return Err(Error::MissingForecast(uncovered));
    }
    Ok(rows)
}

pub const ROWS_HEADER: [&str; 10] = [
    "station_id",
    "timestamp",
    "minute_of_day",
    "day_of_week",
    "is_holiday",
    "temperature_c",
    "relative_humidity_pct",
    "dew_point_c",
    "wind_speed_kmh",
    "label",
];

/// Debug dump of rows; absent weather and labels are empty fields.
pub fn write_rows<W: Write>(out: W, rows: &[FeatureRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(ROWS_HEADER)?;
    for r in rows {
        let w = r.weather;
        let opt = |f: fn(&WeatherFeatures) -> f64| w.as_ref().map(|w| f(w).to_string()).unwrap_or_default();
        wtr.write_record([
            r.station_id.to_string(),
            format_timestamp(r.timestamp),
            r.minute_of_day.to_string(),
            r.day_of_week.to_string(),
            r.is_holiday.to_string(),
            opt(|w| w.temperature_c),
            opt(|w| w.relative_humidity_pct),
            opt(|w| w.dew_point_c),
            opt(|w| w.wind_speed_kmh),
            r.label.map(|l| l.as_str().to_string()).unwrap_or_default(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<rows>", e))?;
    Ok(())
}
