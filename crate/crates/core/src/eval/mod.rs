//! Rolling daily evaluation: build models at local midnight, predict the
//! next 72 hours every 15 minutes, and score the predictions against the
//! observed levels.

mod protocol;
mod score;

pub use protocol::*;
pub use score::*;

use chrono::Duration;

use crate::error::Result;
use crate::ingest::{resample, SnapshotStore};
use crate::types::{grid_step, StationId, Timestamp};

/// Observed levels for every target instant of builds between `first_build`
/// and `last_build`.
pub fn truth_for(
    store: &SnapshotStore,
    stations: &[StationId],
    first_build: Timestamp,
    last_build: Timestamp,
    horizon: Duration,
) -> Result<Truth> {
    let mut truth = Truth::new();
    for &station in stations {
        truth.insert(resample(
            store,
            station,
            first_build + grid_step(),
            last_build + horizon + grid_step(),
        )?);
    }
    Ok(truth)
}
