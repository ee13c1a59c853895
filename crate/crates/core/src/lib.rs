//! Occupancy forecasting for bike-sharing stations.
//!
//! Stations are classified into five [`OccupancyLevel`]s from their bike and
//! free-slot counts. The crate ingests station, weather and holiday files,
//! builds calendar/weather predictor rows, trains per-station random forests
//! (with mean-decrease-in-Gini importance) and seasonal ARIMA baselines, and
//! scores their 72-hour forecasts with a daily rolling protocol.

pub mod arima;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod forest;
pub mod ingest;
pub mod level;
pub mod rng;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use level::{classify_count, discretize, is_positive, Criterion, OccupancyLevel};
pub use types::{
    CityClock, HolidayCalendar, Method, PredictionRecord, StationId, StationSnapshot, Timestamp, WeatherRecord,
};
