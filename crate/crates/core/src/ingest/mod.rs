//! Reading station, weather and holiday files into the snapshot store, and
//! putting station data on the evaluation grid.

mod parse;
mod resample;
mod store;

pub use parse::{
    parse_holidays, parse_station_feed, parse_weather, read_holidays, read_station_feed, read_weather,
    station_row_fields, weather_row_fields, write_ledger, write_weather, LedgerEntry, ParseMode, Parsed,
    STATION_HEADER, WEATHER_HEADER,
};
pub use resample::{resample, resample_snapshots, Cell, ResampledSeries, STALENESS_MINUTES};
pub use store::{IngestSummary, Month, SnapshotStore, VerifyIssue, VerifyReport};
