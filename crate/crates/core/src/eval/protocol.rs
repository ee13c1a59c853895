use std::io::{Read, Write};

use chrono::{Duration, NaiveDate};
use rayon::prelude::*;

use crate::arima::{self, ArimaModel, ArimaSpec, DAILY_PERIOD};
use crate::error::{Error, Result};
use crate::features::{
    build_prediction_rows, sample_training_set, window_rows, PredictorSet, SamplerSpec, WeatherIndex,
};
use crate::forest::{train_forest, Dataset, ForestConfig, TrainMeta, TrainedForest};
use crate::ingest::{resample_snapshots, ResampledSeries, SnapshotStore};
use crate::level::OccupancyLevel;
use crate::rng::derive_seed;
use crate::types::{
    format_timestamp, grid_step, parse_timestamp, CityClock, HolidayCalendar, Method, PredictionRecord, StationId,
    Timestamp, WeatherRecord, GRID_MINUTES, MAX_HORIZON_HOURS,
};

/// Days of history the ARIMA baseline is fitted on.
pub const ARIMA_WINDOW_DAYS: i64 = 7;

/// Read-only data shared by every model build.
#[derive(Debug, Clone, Copy)]
pub struct BuildInputs<'a> {
    pub store: &'a SnapshotStore,
    pub weather: &'a [WeatherRecord],
    pub holidays: &'a HolidayCalendar,
    pub clock: CityClock,
}

impl BuildInputs<'_> {
    /// Weather records already issued at `t_build`.
    pub fn weather_visible_at(&self, t_build: Timestamp) -> WeatherIndex {
        let visible: Vec<WeatherRecord> = self
            .weather
            .iter()
            .filter(|w| w.issued_at <= t_build)
            .copied()
            .collect();
        WeatherIndex::new(&visible)
    }

    /// Resampled history over `[t_build - lookback, t_build]`, built only from
    /// snapshots timestamped at or before `t_build`. The last cell is the
    /// state at `t_build` itself.
    pub fn history(&self, station: StationId, t_build: Timestamp, lookback: Duration) -> Result<ResampledSeries> {
        let start = t_build - lookback;
        let snapshots = self.store.load(
            station,
            start - Duration::minutes(crate::ingest::STALENESS_MINUTES),
            t_build + Duration::seconds(1),
        )?;
        resample_snapshots(station, &snapshots, start, t_build + grid_step())
    }
}

/// Sampler counts, forest settings and ARIMA grid for one build.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSettings {
    pub n_yearago: usize,
    pub n_recent: usize,
    pub forest: ForestConfig,
    pub arima_grid: Vec<ArimaSpec>,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            n_yearago: SamplerSpec::DEFAULT_YEARAGO,
            n_recent: SamplerSpec::DEFAULT_RECENT,
            forest: ForestConfig::default(),
            arima_grid: arima::default_grid(DAILY_PERIOD),
        }
    }
}

impl ModelSettings {
    pub fn sampler(&self, t_build: Timestamp, seed: u64) -> SamplerSpec {
        SamplerSpec {
            n_yearago: self.n_yearago,
            n_recent: self.n_recent,
            ..SamplerSpec::new(t_build, seed)
        }
    }
}

/// Seed of the model built for `station` at `t_build` within a run.
pub fn build_seed(run_seed: u64, station: StationId, t_build: Timestamp) -> u64 {
    derive_seed(run_seed, &[u64::from(station), t_build.timestamp() as u64])
}

fn lookback_for(method: Method) -> Duration {
    match method {
        Method::Arima => Duration::days(ARIMA_WINDOW_DAYS),
        Method::Rf | Method::RfExtended => Duration::weeks(54),
    }
}

pub fn predictor_set(method: Method) -> Option<PredictorSet> {
    match method {
        Method::Arima => None,
        Method::Rf => Some(PredictorSet::Rf),
        Method::RfExtended => Some(PredictorSet::RfExtended),
    }
}

/// Trains one station's forest from its sampler windows before `t_build`.
pub fn train_station_forest(
    inputs: &BuildInputs<'_>,
    station: StationId,
    t_build: Timestamp,
    set: PredictorSet,
    settings: &ModelSettings,
    seed: u64,
) -> Result<TrainedForest> {
    let history = inputs.history(station, t_build, Duration::weeks(54))?;
    train_forest_from_history(inputs, &history, t_build, set, settings, seed)
}

fn train_forest_from_history(
    inputs: &BuildInputs<'_>,
    history: &ResampledSeries,
    t_build: Timestamp,
    set: PredictorSet,
    settings: &ModelSettings,
    seed: u64,
) -> Result<TrainedForest> {
    let spec = settings.sampler(t_build, seed);
    let weather = inputs.weather_visible_at(t_build);
    let windows = window_rows(history, &spec, &weather, inputs.holidays, &inputs.clock, set)?;
    let sample = sample_training_set(&windows, &spec)?;
    let data = Dataset::from_rows(&sample.rows, set)?;
    let config = ForestConfig {
        seed,
        ..settings.forest
    };
    let meta = TrainMeta {
        t_build: Some(t_build),
        station_id: Some(history.station_id),
        predictor_set: Some(set),
        ..TrainMeta::default()
    };
    let mut trained = train_forest(&data, &config, meta)?;
    let mut warnings = sample.warnings;
    warnings.append(&mut trained.warnings);
    trained.warnings = warnings;
    Ok(trained)
}

/// An ARIMA model selected on the seven days ending at `t_build`, with the
/// capacity of the last observed cell.
#[derive(Debug, Clone)]
pub struct ArimaFit {
    pub model: ArimaModel,
    pub capacity: u32,
}

pub fn fit_station_arima(
    inputs: &BuildInputs<'_>,
    station: StationId,
    t_build: Timestamp,
    grid: &[ArimaSpec],
) -> Result<ArimaFit> {
    let history = inputs.history(station, t_build, Duration::days(ARIMA_WINDOW_DAYS) - grid_step())?;
    fit_arima_window(&history, grid)
}

fn fit_arima_window(window: &ResampledSeries, grid: &[ArimaSpec]) -> Result<ArimaFit> {
    let prepared = arima::interpolate_gaps(window)?;
    let model = arima::select(&prepared.values, grid)?;
    Ok(ArimaFit {
        model,
        capacity: prepared.capacity,
    })
}

fn horizon_steps(horizon: Duration) -> Result<usize> {
    let minutes = horizon.num_minutes();
    if minutes <= 0 || minutes % GRID_MINUTES != 0 || horizon > Duration::hours(MAX_HORIZON_HOURS) {
        return Err(Error::InvalidInput(format!(
            "horizon of {minutes} minutes must be a positive multiple of 15 minutes up to {MAX_HORIZON_HOURS} h"
        )));
    }
    Ok((minutes / GRID_MINUTES) as usize)
}

fn records(
    station: StationId,
    t_build: Timestamp,
    method: Method,
    levels: impl IntoIterator<Item = OccupancyLevel>,
) -> Result<Vec<PredictionRecord>> {
    levels
        .into_iter()
        .enumerate()
        .map(|(k, level)| {
            PredictionRecord::new(station, t_build, t_build + grid_step() * (k as i32 + 1), level, method)
        })
        .collect()
}

/// Predictions for `(t_build, t_build + horizon]` from an ARIMA fit.
pub fn arima_predictions(
    fit: &ArimaFit,
    station: StationId,
    t_build: Timestamp,
    horizon: Duration,
) -> Result<Vec<PredictionRecord>> {
    let steps = horizon_steps(horizon)?;
    let levels = fit.model.forecast_levels(steps, fit.capacity)?;
    records(station, t_build, Method::Arima, levels)
}

/// Predictions for `(t_build, t_build + horizon]` from a forest; weather
/// forecasts must have been issued by `t_build`.
pub fn forest_predictions(
    inputs: &BuildInputs<'_>,
    model: &crate::forest::ForestModel,
    set: PredictorSet,
    station: StationId,
    t_build: Timestamp,
    horizon: Duration,
) -> Result<Vec<PredictionRecord>> {
    horizon_steps(horizon)?;
    let weather = inputs.weather_visible_at(t_build);
    let rows = build_prediction_rows(station, t_build, horizon, &weather, inputs.holidays, &inputs.clock, set)?;
    let levels = model.predict_batch(&rows)?;
    let method = match set {
        PredictorSet::Rf => Method::Rf,
        PredictorSet::RfExtended => Method::RfExtended,
    };
    records(station, t_build, method, levels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub stations: Vec<StationId>,
    /// First and last build day, inclusive, in city-local dates.
    pub first_day: NaiveDate,
    pub last_day: NaiveDate,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub settings: ModelSettings,
    pub horizon: Duration,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
}

impl ProtocolConfig {
    pub fn new(stations: Vec<StationId>, first_day: NaiveDate, last_day: NaiveDate, seed: u64) -> Self {
        Self {
            stations,
            first_day,
            last_day,
            methods: Method::ALL.to_vec(),
            seed,
            settings: ModelSettings::default(),
            horizon: Duration::hours(MAX_HORIZON_HOURS),
            jobs: 0,
        }
    }

    pub fn build_days(&self) -> Vec<NaiveDate> {
        self.first_day.iter_days().take_while(|d| *d <= self.last_day).collect()
    }
}

/// A (station, build, method) the protocol could not produce predictions for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skip {
    pub station_id: StationId,
    pub made_at: Timestamp,
    pub method: Method,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProtocolOutput {
    /// Sorted by station, method, build time and target time.
    pub predictions: Vec<PredictionRecord>,
    pub skips: Vec<Skip>,
    pub warnings: Vec<String>,
}

fn run_unit(
    inputs: &BuildInputs<'_>,
    config: &ProtocolConfig,
    station: StationId,
    t_build: Timestamp,
) -> ProtocolOutput {
    let mut out = ProtocolOutput::default();
    let seed = build_seed(config.seed, station, t_build);
    let lookback = config
        .methods
        .iter()
        .map(|m| lookback_for(*m))
        .max()
        .unwrap_or_default();
    let history = match inputs.history(station, t_build, lookback) {
        Ok(h) => h,
        Err(e) => {
            log::warn!("skipping station {station} at {}: {e}", format_timestamp(t_build));
            for &method in &config.methods {
                out.skips.push(Skip {
                    station_id: station,
                    made_at: t_build,
                    method,
                    reason: e.to_string(),
                });
            }
            return out;
        }
    };
    for &method in &config.methods {
        let result = match predictor_set(method) {
            None => {
                let start = t_build - Duration::days(ARIMA_WINDOW_DAYS) + grid_step();
                history
                    .slice(start, t_build + grid_step())
                    .and_then(|window| fit_arima_window(&window, &config.settings.arima_grid))
                    .and_then(|fit| arima_predictions(&fit, station, t_build, config.horizon))
            }
            Some(set) => {
                train_forest_from_history(inputs, &history, t_build, set, &config.settings, seed).and_then(|trained| {
                    for w in &trained.warnings {
                        out.warnings
                            .push(format!("station {station} {} {method}: {w}", format_timestamp(t_build)));
                    }
                    forest_predictions(inputs, &trained.model, set, station, t_build, config.horizon)
                })
            }
        };
        match result {
            Ok(mut preds) => out.predictions.append(&mut preds),
            Err(e) => {
                log::warn!(
                    "skipping station {station} at {} for {method}: {e}",
                    format_timestamp(t_build)
                );
                out.skips.push(Skip {
                    station_id: station,
                    made_at: t_build,
                    method,
                    reason: e.to_string(),
                })
            }
        }
    }
    out
}

/// Builds every requested model at local midnight of each day and predicts
/// the following horizon. Nothing timestamped after a build time is read
/// for that build.
pub fn run_protocol(inputs: &BuildInputs<'_>, config: &ProtocolConfig) -> Result<ProtocolOutput> {
    if config.stations.is_empty() || config.methods.is_empty() {
        return Err(Error::InvalidInput(
            "protocol needs at least one station and one method".into(),
        ));
    }
    if config.last_day < config.first_day {
        return Err(Error::InvalidInput("last build day precedes the first".into()));
    }
    horizon_steps(config.horizon)?;
    let units: Vec<(StationId, Timestamp)> = config
        .stations
        .iter()
        .flat_map(|&s| config.build_days().into_iter().map(move |d| (s, d)))
        .map(|(s, d)| (s, inputs.clock.local_midnight(d)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let parts: Vec<ProtocolOutput> = pool.install(|| {
        units
            .par_iter()
            .map(|&(station, t_build)| run_unit(inputs, config, station, t_build))
            .collect()
    });
    let mut out = ProtocolOutput::default();
    for mut p in parts {
        out.predictions.append(&mut p.predictions);
        out.skips.append(&mut p.skips);
        out.warnings.append(&mut p.warnings);
    }
    out.predictions
        .sort_by_key(|p| (p.station_id, p.method, p.made_at, p.target_time));
    Ok(out)
}

pub const PREDICTIONS_HEADER: [&str; 5] = ["station", "made_at", "target_time", "method", "predicted"];
pub const SKIPS_HEADER: [&str; 4] = ["station", "made_at", "method", "reason"];

pub fn write_predictions<W: Write>(out: W, predictions: &[PredictionRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(PREDICTIONS_HEADER)?;
    for p in predictions {
        wtr.write_record([
            p.station_id.to_string(),
            format_timestamp(p.made_at),
            format_timestamp(p.target_time),
            p.method.to_string(),
            p.predicted.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("predictions", e))?;
    Ok(())
}

pub fn read_predictions<R: Read>(input: R, name: &str) -> Result<Vec<PredictionRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(PREDICTIONS_HEADER) {
        return Err(Error::MalformedRow {
            file: name.to_string(),
            line: 1,
            reason: format!("expected header {}", PREDICTIONS_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i as u64 + 2;
        let bad = |reason: String| Error::MalformedRow {
            file: name.to_string(),
            line,
            reason,
        };
        if rec.len() != PREDICTIONS_HEADER.len() {
            return Err(bad(format!(
                "expected {} fields, found {}",
                PREDICTIONS_HEADER.len(),
                rec.len()
            )));
        }
        let station = rec[0]
            .parse()
            .map_err(|_| bad(format!("bad station id {:?}", &rec[0])))?;
        let made_at = parse_timestamp(&rec[1]).map_err(|e| bad(e.to_string()))?;
        let target = parse_timestamp(&rec[2]).map_err(|e| bad(e.to_string()))?;
        let method: Method = rec[3].parse().map_err(|e: Error| bad(e.to_string()))?;
        let level: OccupancyLevel = rec[4].parse().map_err(|e: Error| bad(e.to_string()))?;
        out.push(PredictionRecord::new(station, made_at, target, level, method).map_err(|e| bad(e.to_string()))?);
    }
    Ok(out)
}

pub fn write_skips<W: Write>(out: W, skips: &[Skip]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(SKIPS_HEADER)?;
    for s in skips {
        wtr.write_record([
            s.station_id.to_string(),
            format_timestamp(s.made_at),
            s.method.to_string(),
            s.reason.clone(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("skips", e))?;
    Ok(())
}
