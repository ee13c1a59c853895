//! Synthetic station corpora with planted structure.
//!
//! A scenario fixes the time window, the weather (piecewise-linear knots
//! plus a daily cycle and a seeded day-to-day offset), the holiday calendar
//! and one profile per station. Bikes at minute `t` are
//!
//! ```text
//! clamp(round(base_curve[slot(t)] * day_scale(t) * holiday_scale(t)
//!             + Σ coeff * (weather(t) - reference) + ε), 0, capacity)
//! ```
//!
//! with `ε ~ N(0, noise_sd)`. Forecast records are truth plus Gaussian
//! error whose standard deviation grows linearly with lead time.
//!
//! Scenario keys (all timestamps RFC 3339):
//!
//! | key | meaning |
//! |-----|---------|
//! | `start`, `end` | generated window `[start, end)` |
//! | `step_minutes` | snapshot cadence, default 1 |
//! | `utc_offset` | city clock, default `+01:00` |
//! | `holidays` | comma-separated ISO dates |
//! | `weather.step_minutes` | weather record cadence, default 60 |
//! | `weather.<var>` | knots `T v; T v; ...` (`var` = temperature, humidity, wind) |
//! | `weather.<var>.daily_amplitude` | cosine daily cycle amplitude, peak at 15:00 local |
//! | `weather.<var>.day_sd` | sd of a seeded per-day offset (interpolated noon to noon) |
//! | `weather.<var>.reference` | value at which the station effect is zero |
//! | `weather.<var>.forecast_sd_per_day` | forecast error sd per 24 h of lead |
//! | `weather.forecast.issue_every_hours` | forecast issue cadence, default 24 |
//! | `weather.forecast.lead_hours` | forecast horizon, default 72 |
//! | `stations` | comma-separated station ids |
//! | `station.<id>.capacity` | dock count |
//! | `station.<id>.base_curve` | 96 comma-separated values, or knots `HH:MM v; ...` |
//! | `station.<id>.{weekday,weekend,holiday}_scale` | multipliers, default 1 |
//! | `station.<id>.{humidity,temperature,wind}_coeff` | bikes per unit, default 0 |
//! | `station.<id>.noise_sd` | default 0 |
//! | `station.<id>.{lat,lon,elevation_m}` | location |
//! | `station.<id>.seed` | overrides the run seed for this station |
//!
//! Dew point is derived from temperature and humidity (Magnus formula).

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::config::FlatConfig;
use crate::error::{Error, Result};
use crate::ingest::{write_weather, Month, SnapshotStore};
use crate::rng;
use crate::types::{
    parse_timestamp, CityClock, HolidayCalendar, StationId, StationSnapshot, Timestamp, WeatherRecord, CELLS_PER_DAY,
    MAX_HORIZON_HOURS,
};

#[derive(Debug, Clone, PartialEq)]
pub struct StationProfile {
    pub station_id: StationId,
    pub capacity: u32,
    /// Mean bikes per 15-minute slot of the local day.
    pub base_curve: [f64; CELLS_PER_DAY],
    pub weekday_scale: f64,
    pub weekend_scale: f64,
    pub humidity_coeff: f64,
    pub temperature_coeff: f64,
    pub wind_coeff: f64,
    pub holiday_scale: f64,
    pub noise_sd: f64,
    pub seed: u64,
    pub latitude: f64,
    pub longitude: f64,
    pub elevation_m: Option<f64>,
}

impl StationProfile {
    /// A profile with a flat curve at `level` and no effects.
    pub fn flat(station_id: StationId, capacity: u32, level: f64, seed: u64) -> Self {
        Self {
            station_id,
            capacity,
            base_curve: [level; CELLS_PER_DAY],
            weekday_scale: 1.0,
            weekend_scale: 1.0,
            humidity_coeff: 0.0,
            temperature_coeff: 0.0,
            wind_coeff: 0.0,
            holiday_scale: 1.0,
            noise_sd: 0.0,
            seed,
            latitude: 41.39,
            longitude: 2.17,
            elevation_m: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidInput(format!("station {}: {what}", self.station_id)));
        if self.capacity == 0 {
            return bad("capacity must be at least 1".into());
        }
        let cap = f64::from(self.capacity);
        if let Some((slot, v)) = self
            .base_curve
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=cap).contains(*v))
        {
            return bad(format!("base_curve[{slot}] = {v} outside [0, {cap}]"));
        }
        if self.noise_sd.is_nan() || self.noise_sd < 0.0 {
            return bad(format!("noise_sd {} must be non-negative", self.noise_sd));
        }
        let scales = [self.weekday_scale, self.weekend_scale, self.holiday_scale];
        if scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("scales must be finite and non-negative".into());
        }
        let coeffs = [self.humidity_coeff, self.temperature_coeff, self.wind_coeff];
        if coeffs.iter().any(|c| !c.is_finite()) {
            return bad("weather coefficients must be finite".into());
        }
        Ok(())
    }

    fn mean_bikes(&self, slot: usize, weekend: bool, holiday: bool, weather: &WeatherState, refs: &WeatherRefs) -> f64 {
        let day = if weekend {
            self.weekend_scale
        } else {
            self.weekday_scale
        };
        let hol = if holiday { self.holiday_scale } else { 1.0 };
        self.base_curve[slot] * day * hol
            + self.humidity_coeff * (weather.humidity - refs.humidity)
            + self.temperature_coeff * (weather.temperature - refs.temperature)
            + self.wind_coeff * (weather.wind - refs.wind)
    }
}

/// Piecewise-linear function of time, constant beyond the end knots.
#[derive(Debug, Clone, PartialEq)]
pub struct Spline {
    knots: Vec<(Timestamp, f64)>,
}

impl Spline {
    pub fn new(mut knots: Vec<(Timestamp, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Config("spline needs at least one knot".into()));
        }
        knots.sort_by_key(|k| k.0);
        if knots.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Config("spline knots must have distinct times".into()));
        }
        Ok(Self { knots })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            knots: vec![(Timestamp::UNIX_EPOCH, value)],
        }
    }

    /// Parses `T v; T v; ...`.
    pub fn parse(text: &str) -> Result<Self> {
        let knots = text
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|knot| {
                let (t, v) = knot
                    .split_once(char::is_whitespace)
                    .ok_or_else(|| Error::Config(format!("bad knot {knot:?}, expected `TIME VALUE`")))?;
                let v: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad knot value in {knot:?}")))?;
                Ok((parse_timestamp(t)?, v))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(knots)
    }

    pub fn at(&self, t: Timestamp) -> f64 {
        let i = self.knots.partition_point(|k| k.0 <= t);
        if i == 0 {
            return self.knots[0].1;
        }
        if i == self.knots.len() {
            return self.knots[i - 1].1;
        }
        let (t0, v0) = self.knots[i - 1];
        let (t1, v1) = self.knots[i];
        let frac = (t - t0).num_seconds() as f64 / (t1 - t0).num_seconds() as f64;
        v0 + frac * (v1 - v0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeatherVariable {
    pub trend: Spline,
    pub daily_amplitude: f64,
    pub day_sd: f64,
    pub reference: f64,
    pub forecast_sd_per_day: f64,
}

impl WeatherVariable {
    pub fn constant(value: f64) -> Self {
        Self {
            trend: Spline::constant(value),
            daily_amplitude: 0.0,
            day_sd: 0.0,
            reference: value,
            forecast_sd_per_day: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeatherScenario {
    pub temperature: WeatherVariable,
    pub humidity: WeatherVariable,
    pub wind: WeatherVariable,
    pub step_minutes: i64,
    pub issue_every_hours: i64,
    pub lead_hours: i64,
}

impl Default for WeatherScenario {
    fn default() -> Self {
        Self {
            temperature: WeatherVariable::constant(15.0),
            humidity: WeatherVariable::constant(60.0),
            wind: WeatherVariable::constant(10.0),
            step_minutes: 60,
            issue_every_hours: 24,
            lead_hours: MAX_HORIZON_HOURS,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct WeatherRefs {
    temperature: f64,
    humidity: f64,
    wind: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct WeatherState {
    temperature: f64,
    humidity: f64,
    wind: f64,
}

impl WeatherState {
    fn lerp(a: &Self, b: &Self, frac: f64) -> Self {
        Self {
            temperature: a.temperature + frac * (b.temperature - a.temperature),
            humidity: a.humidity + frac * (b.humidity - a.humidity),
            wind: a.wind + frac * (b.wind - a.wind),
        }
    }

    fn clamped(self) -> Self {
        Self {
            temperature: self.temperature,
            humidity: self.humidity.clamp(1.0, 100.0),
            wind: self.wind.max(0.0),
        }
    }
}

/// Dew point (°C) from temperature (°C) and relative humidity (%).
pub fn dew_point(temperature_c: f64, humidity_pct: f64) -> f64 {
    const B: f64 = 17.62;
    const C: f64 = 243.12;
    let gamma = (humidity_pct.max(1.0) / 100.0).ln() + B * temperature_c / (C + temperature_c);
    C * gamma / (B - gamma)
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub start: Timestamp,
    pub end: Timestamp,
    pub step_minutes: i64,
    pub clock: CityClock,
    pub holidays: HolidayCalendar,
    pub weather: WeatherScenario,
    pub stations: Vec<StationProfile>,
}

fn parse_curve(text: &str) -> Result<[f64; CELLS_PER_DAY]> {
    let mut curve = [0.0; CELLS_PER_DAY];
    if !text.contains(':') {
        let values: Vec<f64> = text
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad curve value {v:?}")))
            })
            .collect::<Result<_>>()?;
        if values.len() != CELLS_PER_DAY {
            return Err(Error::Config(format!(
                "base_curve needs {CELLS_PER_DAY} values, got {}",
                values.len()
            )));
        }
        curve.copy_from_slice(&values);
        return Ok(curve);
    }
    // Knots at local times, interpolated cyclically over the day.
    let mut knots: Vec<(f64, f64)> = text
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|knot| {
            let (hm, v) = knot
                .split_once(char::is_whitespace)
                .ok_or_else(|| Error::Config(format!("bad curve knot {knot:?}, expected `HH:MM VALUE`")))?;
            let (h, m) = hm
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("bad time in {knot:?}")))?;
            let h: f64 = h.parse().map_err(|_| Error::Config(format!("bad hour in {knot:?}")))?;
            let m: f64 = m
                .parse()
                .map_err(|_| Error::Config(format!("bad minute in {knot:?}")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value in {knot:?}")))?;
            Ok((h * 60.0 + m, v))
        })
        .collect::<Result<_>>()?;
    if knots.is_empty() {
        return Err(Error::Config("base_curve has no knots".into()));
    }
    knots.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (slot, value) in curve.iter_mut().enumerate() {
        let minute = slot as f64 * 15.0;
        let i = knots.partition_point(|k| k.0 <= minute);
        let (prev, next) = match i {
            0 => ((knots[knots.len() - 1].0 - 1440.0, knots[knots.len() - 1].1), knots[0]),
            i if i == knots.len() => (knots[i - 1], (knots[0].0 + 1440.0, knots[0].1)),
            i => (knots[i - 1], knots[i]),
        };
        *value = if next.0 == prev.0 {
            prev.1
        } else {
            prev.1 + (minute - prev.0) / (next.0 - prev.0) * (next.1 - prev.1)
        };
    }
    Ok(curve)
}

fn weather_variable(cfg: &FlatConfig, name: &str, default: f64) -> Result<WeatherVariable> {
    let key = format!("weather.{name}");
    let trend = match cfg.get_str(&key) {
        Some(text) if text.contains(char::is_whitespace) => Spline::parse(text)?,
        Some(text) => Spline::constant(text.parse().map_err(|_| Error::Config(format!("bad `{key}`")))?),
        None => Spline::constant(default),
    };
    Ok(WeatherVariable {
        trend,
        daily_amplitude: cfg.get_or(&format!("{key}.daily_amplitude"), 0.0)?,
        day_sd: cfg.get_or(&format!("{key}.day_sd"), 0.0)?,
        reference: cfg.get_or(&format!("{key}.reference"), default)?,
        forecast_sd_per_day: cfg.get_or(&format!("{key}.forecast_sd_per_day"), 0.0)?,
    })
}

impl Scenario {
    /// Builds a scenario from config. `seed` is the default station seed.
    pub fn from_config(cfg: &FlatConfig, seed: u64) -> Result<Self> {
        let start = parse_timestamp(&cfg.require::<String>("start")?)?;
        let end = parse_timestamp(&cfg.require::<String>("end")?)?;
        let clock = match cfg.get_str("utc_offset") {
            Some(s) => s.parse()?,
            None => CityClock::default(),
        };
        let holidays = cfg
            .get_list::<NaiveDate>("holidays")?
            .unwrap_or_default()
            .into_iter()
            .collect();
        let weather = WeatherScenario {
            temperature: weather_variable(cfg, "temperature", 15.0)?,
            humidity: weather_variable(cfg, "humidity", 60.0)?,
            wind: weather_variable(cfg, "wind", 10.0)?,
            step_minutes: cfg.get_or("weather.step_minutes", 60)?,
            issue_every_hours: cfg.get_or("weather.forecast.issue_every_hours", 24)?,
            lead_hours: cfg.get_or("weather.forecast.lead_hours", MAX_HORIZON_HOURS)?,
        };
        let ids: Vec<StationId> = cfg.get_list("stations")?.unwrap_or_default();
        let mut stations = Vec::with_capacity(ids.len());
        for id in ids {
            let key = |field: &str| format!("station.{id}.{field}");
            let capacity: u32 = cfg.require(&key("capacity"))?;
            let base_curve = match cfg.get_str(&key("base_curve")) {
                Some(text) => parse_curve(text)?,
                None => [f64::from(capacity) / 2.0; CELLS_PER_DAY],
            };
            stations.push(StationProfile {
                station_id: id,
                capacity,
                base_curve,
                weekday_scale: cfg.get_or(&key("weekday_scale"), 1.0)?,
                weekend_scale: cfg.get_or(&key("weekend_scale"), 1.0)?,
                humidity_coeff: cfg.get_or(&key("humidity_coeff"), 0.0)?,
                temperature_coeff: cfg.get_or(&key("temperature_coeff"), 0.0)?,
                wind_coeff: cfg.get_or(&key("wind_coeff"), 0.0)?,
                holiday_scale: cfg.get_or(&key("holiday_scale"), 1.0)?,
                noise_sd: cfg.get_or(&key("noise_sd"), 0.0)?,
                seed: cfg.get_or(&key("seed"), seed)?,
                latitude: cfg.get_or(&key("lat"), 41.39)?,
                longitude: cfg.get_or(&key("lon"), 2.17)?,
                elevation_m: cfg.get(&key("elevation_m"))?,
            });
        }
        let scenario = Self {
            start,
            end,
            step_minutes: cfg.get_or("step_minutes", 1)?,
            clock,
            holidays,
            weather,
            stations,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        if self.end <= self.start {
            return Err(Error::Config("`end` must be after `start`".into()));
        }
        if self.step_minutes < 1 || self.weather.step_minutes < 1 {
            return Err(Error::Config("step sizes must be at least one minute".into()));
        }
        if self.weather.issue_every_hours < 1 || !(0..=MAX_HORIZON_HOURS).contains(&self.weather.lead_hours) {
            return Err(Error::Config("bad forecast cadence or lead".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.stations {
            if !seen.insert(p.station_id) {
                return Err(Error::Config(format!("station {} listed twice", p.station_id)));
            }
            p.validate()?;
        }
        Ok(())
    }

    fn refs(&self) -> WeatherRefs {
        WeatherRefs {
            temperature: self.weather.temperature.reference,
            humidity: self.weather.humidity.reference,
            wind: self.weather.wind.reference,
        }
    }
}

/// Ground-truth weather on the scenario's weather grid.
struct WeatherTruth {
    start: Timestamp,
    step: Duration,
    states: Vec<WeatherState>,
}

impl WeatherTruth {
    fn generate(scenario: &Scenario, seed: u64) -> Self {
        let w = &scenario.weather;
        let step = Duration::minutes(w.step_minutes);
        // day offsets anchored at local noon, one extra day each side
        let first_day = scenario
            .clock
            .local_date(scenario.start)
            .pred_opt()
            .expect("date in range");
        let last_day = scenario
            .clock
            .local_date(scenario.end)
            .succ_opt()
            .expect("date in range");
        let mut rng = rng::stream(seed, &[rng::STREAM_SYNTH_WEATHER, 0]);
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut day_offsets = Vec::new();
        let mut day = first_day;
        while day <= last_day {
            let noon = scenario.clock.local_midnight(day) + Duration::hours(12);
            let z: [f64; 3] = [
                std_normal.sample(&mut rng),
                std_normal.sample(&mut rng),
                std_normal.sample(&mut rng),
            ];
            day_offsets.push((noon, z));
            day = day.succ_opt().expect("date in range");
        }
        let offset_at = |t: Timestamp| -> [f64; 3] {
            let i = day_offsets
                .partition_point(|d| d.0 <= t)
                .clamp(1, day_offsets.len() - 1);
            let (t0, a) = day_offsets[i - 1];
            let (t1, b) = day_offsets[i];
            let frac = ((t - t0).num_seconds() as f64 / (t1 - t0).num_seconds() as f64).clamp(0.0, 1.0);
            [0, 1, 2].map(|k| a[k] + frac * (b[k] - a[k]))
        };
        let n = ((scenario.end - scenario.start).num_minutes() / w.step_minutes) as usize + 2;
        let states = (0..n)
            .map(|i| {
                let t = scenario.start + step * i as i32;
                let hour = scenario.clock.minute_of_day(t) as f64 / 60.0;
                let cycle = (2.0 * std::f64::consts::PI * (hour - 15.0) / 24.0).cos();
                let z = offset_at(t);
                let value = |v: &WeatherVariable, z: f64| v.trend.at(t) + v.daily_amplitude * cycle + v.day_sd * z;
                WeatherState {
                    temperature: value(&w.temperature, z[0]),
                    humidity: value(&w.humidity, z[1]),
                    wind: value(&w.wind, z[2]),
                }
                .clamped()
            })
            .collect();
        Self {
            start: scenario.start,
            step,
            states,
        }
    }

    fn at(&self, t: Timestamp) -> WeatherState {
        let offset = (t - self.start).num_seconds() as f64 / self.step.num_seconds() as f64;
        let i = (offset.floor().max(0.0) as usize).min(self.states.len() - 2);
        let frac = (offset - i as f64).clamp(0.0, 1.0);
        WeatherState::lerp(&self.states[i], &self.states[i + 1], frac)
    }

    fn record(t: Timestamp, issued_at: Timestamp, s: WeatherState, is_forecast: bool) -> WeatherRecord {
        WeatherRecord {
            timestamp: t,
            temperature_c: round2(s.temperature),
            relative_humidity_pct: round2(s.humidity),
            dew_point_c: round2(dew_point(s.temperature, s.humidity)),
            wind_speed_kmh: round2(s.wind),
            is_forecast,
            issued_at,
        }
    }
}

/// Historical and forecast weather records for the scenario window.
pub fn generate_weather(scenario: &Scenario, seed: u64) -> Vec<WeatherRecord> {
    let truth = WeatherTruth::generate(scenario, seed);
    let w = &scenario.weather;
    let mut records = Vec::new();
    let mut t = scenario.start;
    while t < scenario.end {
        records.push(WeatherTruth::record(t, t, truth.at(t), false));
        t += truth.step;
    }

    let mut rng = rng::stream(seed, &[rng::STREAM_SYNTH_WEATHER, 1]);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut issued = scenario.start;
    while issued < scenario.end {
        let mut lead = Duration::zero();
        while lead <= Duration::hours(w.lead_hours) && issued + lead < scenario.end {
            let t = issued + lead;
            let days = lead.num_minutes() as f64 / 1440.0;
            let s = truth.at(t);
            let noisy = WeatherState {
                temperature: s.temperature + w.temperature.forecast_sd_per_day * days * std_normal.sample(&mut rng),
                humidity: s.humidity + w.humidity.forecast_sd_per_day * days * std_normal.sample(&mut rng),
                wind: s.wind + w.wind.forecast_sd_per_day * days * std_normal.sample(&mut rng),
            }
            .clamped();
            records.push(WeatherTruth::record(t, issued, noisy, true));
            lead += truth.step;
        }
        issued += Duration::hours(w.issue_every_hours);
    }
    records.sort_by_key(|r| (r.timestamp, r.issued_at, r.is_forecast));
    records
}

fn generate_station_month(
    profile: &StationProfile,
    scenario: &Scenario,
    truth: &WeatherTruth,
    from: Timestamp,
    to: Timestamp,
    rng: &mut impl Rng,
) -> Vec<StationSnapshot> {
    let refs = scenario.refs();
    let noise = Normal::new(0.0, profile.noise_sd).expect("validated noise sd");
    let cap = f64::from(profile.capacity);
    let step = Duration::minutes(scenario.step_minutes);
    let mut out = Vec::new();
    let mut t = from;
    while t < to {
        let slot = scenario.clock.slot_of_day(t);
        let weekend = scenario.clock.day_of_week(t) >= 5;
        let holiday = scenario.holidays.is_holiday(scenario.clock.local_date(t));
        let mean = profile.mean_bikes(slot, weekend, holiday, &truth.at(t), &refs);
        let eps = if profile.noise_sd > 0.0 { noise.sample(rng) } else { 0.0 };
        let bikes = (mean + eps).round().clamp(0.0, cap) as u32;
        out.push(StationSnapshot {
            station_id: profile.station_id,
            timestamp: t,
            bikes,
            free_slots: profile.capacity - bikes,
            operational: true,
            latitude: profile.latitude,
            longitude: profile.longitude,
            elevation_m: profile.elevation_m,
        });
        t += step;
    }
    out
}

/// Snapshots for one station over the whole scenario window.
pub fn generate_station(scenario: &Scenario, profile: &StationProfile, seed: u64) -> Vec<StationSnapshot> {
    let truth = WeatherTruth::generate(scenario, seed);
    let mut rng = rng::stream(
        profile.seed,
        &[rng::STREAM_SYNTH_STATION, u64::from(profile.station_id)],
    );
    generate_station_month(profile, scenario, &truth, scenario.start, scenario.end, &mut rng)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynthSummary {
    pub snapshots: usize,
    pub weather_records: usize,
    pub partitions: usize,
}

/// Writes `store/`, `weather.csv` and `holidays.txt` under `out_dir`.
///
/// Every profile is validated before anything is written.
pub fn generate(scenario: &Scenario, seed: u64, out_dir: &Path) -> Result<SynthSummary> {
    scenario.validate()?;
    let store = SnapshotStore::create(out_dir.join("store"))?;
    let truth = WeatherTruth::generate(scenario, seed);

    let per_station: Vec<(usize, usize)> = scenario
        .stations
        .par_iter()
        .map(|profile| -> Result<(usize, usize)> {
            let mut rng = rng::stream(
                profile.seed,
                &[rng::STREAM_SYNTH_STATION, u64::from(profile.station_id)],
            );
            let (mut rows, mut parts) = (0, 0);
            let mut month = Month::of(scenario.start);
            while month.start() < scenario.end {
                let from = month.start().max(scenario.start);
                let to = month.next().start().min(scenario.end);
                // keep the cadence anchored at `start` across month boundaries
                let phase = (from - scenario.start).num_minutes().rem_euclid(scenario.step_minutes);
                let from = if phase == 0 {
                    from
                } else {
                    from + Duration::minutes(scenario.step_minutes - phase)
                };
                let snaps = generate_station_month(profile, scenario, &truth, from, to, &mut rng);
                if !snaps.is_empty() {
                    store.write_partition(profile.station_id, month, &snaps)?;
                    rows += snaps.len();
                    parts += 1;
                }
                month = month.next();
            }
            Ok((rows, parts))
        })
        .collect::<Result<_>>()?;

    let weather = generate_weather(scenario, seed);
    let path = out_dir.join("weather.csv");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_weather(BufWriter::new(file), &weather)?;

    let path = out_dir.join("holidays.txt");
    let text: String = scenario.holidays.dates().map(|d| format!("{d}\n")).collect();
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

    Ok(SynthSummary {
        snapshots: per_station.iter().map(|p| p.0).sum(),
        weather_records: weather.len(),
        partitions: per_station.iter().map(|p| p.1).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::level::{discretize, OccupancyLevel};

    fn ts(s: &str) -> Timestamp {
        parse_timestamp(s).unwrap()
    }

    fn scenario(stations: Vec<StationProfile>) -> Scenario {
        Scenario {
            start: ts("2015-02-02T00:00:00Z"),
            end: ts("2015-02-04T00:00:00Z"),
            step_minutes: 1,
            clock: CityClock::default(),
            holidays: HolidayCalendar::new(),
            weather: WeatherScenario::default(),
            stations,
        }
    }

    #[test]
    fn flat_profile_is_constant_and_available() {
        let sc = scenario(vec![StationProfile::flat(1, 20, 10.0, 0)]);
        let snaps = generate_station(&sc, &sc.stations[0], 3);
        assert_eq!(snaps.len(), 2 * 1440);
        assert!(snaps.iter().all(|s| s.bikes == 10 && s.free_slots == 10));
        assert!(snaps
            .iter()
            .all(|s| discretize(s.bikes, s.free_slots).unwrap() == OccupancyLevel::Available));
    }

    #[test]
    fn humidity_spike_lowers_bikes_by_coefficient() {
        let mut profile = StationProfile::flat(1, 40, 20.0, 11);
        profile.humidity_coeff = -0.3;
        profile.noise_sd = 1.0;
        let mut sc = scenario(vec![profile]);
        // humidity 60 outside a 6-hour plateau at 90
        sc.weather.humidity.trend = Spline::parse(
            "2015-02-02T10:00:00Z 60; 2015-02-02T11:00:00Z 90; 2015-02-02T17:00:00Z 90; 2015-02-02T18:00:00Z 60",
        )
        .unwrap();
        let snaps = generate_station(&sc, &sc.stations[0], 5);
        let mean = |from: &str, to: &str| {
            let (a, b) = (ts(from), ts(to));
            let xs: Vec<f64> = snaps
                .iter()
                .filter(|s| s.timestamp >= a && s.timestamp < b)
                .map(|s| f64::from(s.bikes))
                .collect();
            (xs.iter().sum::<f64>() / xs.len() as f64, xs.len())
        };
        let (spike, n) = mean("2015-02-02T11:00:00Z", "2015-02-02T17:00:00Z");
        let (calm, _) = mean("2015-02-03T00:00:00Z", "2015-02-03T23:00:00Z");
        // expected mean during the plateau: 20 - 0.3 * 30 = 11
        let tol = 3.0 * 1.0 / (n as f64).sqrt();
        assert!((spike - 11.0).abs() < tol, "spike mean {spike}, tol {tol}");
        assert!((calm - 20.0).abs() < 0.1, "calm mean {calm}");
    }

    #[test]
    fn invalid_profile_writes_nothing() {
        let mut bad = StationProfile::flat(1, 20, 10.0, 0);
        bad.base_curve[5] = 25.0;
        let sc = scenario(vec![StationProfile::flat(2, 20, 10.0, 0), bad]);
        let dir = tempfile::tempdir().unwrap();
        assert!(generate(&sc, 1, dir.path()).is_err());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn generation_is_deterministic() {
        let mut p = StationProfile::flat(4, 20, 10.0, 9);
        p.noise_sd = 2.0;
        let mut sc = scenario(vec![p]);
        sc.weather.humidity.day_sd = 10.0;
        sc.weather.humidity.forecast_sd_per_day = 5.0;
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate(&sc, 42, a.path()).unwrap();
        generate(&sc, 42, b.path()).unwrap();
        for rel in ["weather.csv", "holidays.txt", "store/stations/4/2015-02.csv"] {
            assert_eq!(
                fs::read(a.path().join(rel)).unwrap(),
                fs::read(b.path().join(rel)).unwrap(),
                "{rel}"
            );
        }
        let store = SnapshotStore::open(a.path().join("store")).unwrap();
        assert!(store.verify().unwrap().is_clean());
    }

    #[test]
    fn forecast_error_grows_with_lead() {
        let mut sc = scenario(vec![]);
        sc.end = ts("2015-03-30T00:00:00Z");
        sc.weather.humidity.forecast_sd_per_day = 6.0;
        let records = generate_weather(&sc, 8);
        let truth: std::collections::HashMap<_, _> = records
            .iter()
            .filter(|r| !r.is_forecast)
            .map(|r| (r.timestamp, r.relative_humidity_pct))
            .collect();
        let spread = |lo: i64, hi: i64| {
            let errs: Vec<f64> = records
                .iter()
                .filter(|r| r.is_forecast)
                .filter(|r| {
                    let h = (r.timestamp - r.issued_at).num_hours();
                    h >= lo && h < hi
                })
                .map(|r| r.relative_humidity_pct - truth[&r.timestamp])
                .collect();
            (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt()
        };
        let near = spread(0, 6);
        let far = spread(60, 72);
        assert!(near < 1.5, "near rmse {near}");
        assert!(far > 3.0 * near, "far rmse {far} vs near {near}");
        for r in records.iter().filter(|r| r.is_forecast) {
            r.validate().unwrap();
        }
    }

    #[test]
    fn curve_knots_interpolate_cyclically() {
        let curve = parse_curve("06:00 0; 18:00 12").unwrap();
        assert_eq!(curve[24], 0.0); // 06:00
        assert_eq!(curve[48], 6.0); // 12:00
        assert_eq!(curve[72], 12.0); // 18:00
        assert_eq!(curve[0], 6.0); // midnight, halfway back down
        assert!(parse_curve("1,2,3").is_err());
    }

    #[test]
    fn scenario_from_config() {
        let cfg = FlatConfig::parse(
            "start = 2015-02-02T00:00:00Z\nend = 2015-02-03T00:00:00Z\nholidays = 2015-02-02\nstations = 7\nstation.7.capacity = 24\nstation.7.noise_sd = 1.5\nweather.humidity = 2015-02-02T00:00:00Z 50; 2015-02-03T00:00:00Z 80\n",
        )
        .unwrap();
        let sc = Scenario::from_config(&cfg, 99).unwrap();
        assert_eq!(sc.stations[0].capacity, 24);
        assert_eq!(sc.stations[0].seed, 99);
        assert_eq!(sc.stations[0].base_curve[0], 12.0);
        assert!(sc.holidays.is_holiday(NaiveDate::from_ymd_opt(2015, 2, 2).unwrap()));
        assert_eq!(sc.weather.humidity.trend.at(ts("2015-02-02T12:00:00Z")), 65.0);
    }
}
