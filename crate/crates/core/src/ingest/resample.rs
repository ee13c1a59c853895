//! Snapping per-minute observations onto the 15-minute grid.

use chrono::Duration;

use super::store::SnapshotStore;
use crate::error::{Error, Result};
use crate::level::{discretize, OccupancyLevel};
use crate::types::{format_timestamp, grid_step, is_on_grid, StationId, StationSnapshot, Timestamp};

/// Oldest observation a cell may carry forward.
pub const STALENESS_MINUTES: i64 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub bikes: u32,
    pub free_slots: u32,
    pub observed: bool,
}

impl Cell {
    pub const GAP: Cell = Cell {
        bikes: 0,
        free_slots: 0,
        observed: false,
    };

    pub fn capacity(&self) -> u32 {
        self.bikes + self.free_slots
    }

    pub fn level(&self) -> Option<OccupancyLevel> {
        if self.observed {
            discretize(self.bikes, self.free_slots).ok()
        } else {
            None
        }
    }
}

/// A station's state on the 15-minute grid over `[grid_start, grid_end)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampledSeries {
    pub station_id: StationId,
    pub grid_start: Timestamp,
    pub grid_end: Timestamp,
    pub cells: Vec<Cell>,
}

impl ResampledSeries {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn time_of(&self, index: usize) -> Timestamp {
        self.grid_start + grid_step() * index as i32
    }

    pub fn index_of(&self, t: Timestamp) -> Option<usize> {
        if t < self.grid_start || t >= self.grid_end || !is_on_grid(t) {
            return None;
        }
        Some(((t - self.grid_start).num_minutes() / crate::types::GRID_MINUTES) as usize)
    }

    pub fn cell_at(&self, t: Timestamp) -> Option<Cell> {
        self.index_of(t).map(|i| self.cells[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (Timestamp, Cell)> + '_ {
        self.cells.iter().enumerate().map(|(i, c)| (self.time_of(i), *c))
    }

    /// The sub-series over `[start, end)`, which must lie on the grid.
    pub fn slice(&self, start: Timestamp, end: Timestamp) -> Result<ResampledSeries> {
        check_window(start, end)?;
        if start < self.grid_start || end > self.grid_end {
            return Err(Error::InvalidInput(format!(
                "window [{}, {}) outside resampled range",
                format_timestamp(start),
                format_timestamp(end)
            )));
        }
        let from = self.index_of(start).unwrap_or(self.cells.len());
        let n = ((end - start).num_minutes() / crate::types::GRID_MINUTES) as usize;
        Ok(ResampledSeries {
            station_id: self.station_id,
            grid_start: start,
            grid_end: end,
            cells: self.cells[from..from + n].to_vec(),
        })
    }
}

fn check_window(start: Timestamp, end: Timestamp) -> Result<()> {
    if !is_on_grid(start) || !is_on_grid(end) {
        return Err(Error::InvalidInput(format!(
            "window [{}, {}) is not on 15-minute boundaries",
            format_timestamp(start),
            format_timestamp(end)
        )));
    }
    if end < start {
        return Err(Error::InvalidInput("window ends before it starts".into()));
    }
    Ok(())
}

/// Last-observation-carried-forward onto the grid.
///
/// `snapshots` must be sorted by time. Each cell takes the latest snapshot
/// at or before the cell instant and no older than [`STALENESS_MINUTES`]; a
/// missing, closed or zero-capacity latest snapshot makes the cell a gap.
pub fn resample_snapshots(
    station_id: StationId,
    snapshots: &[StationSnapshot],
    start: Timestamp,
    end: Timestamp,
) -> Result<ResampledSeries> {
    check_window(start, end)?;
    let staleness = Duration::minutes(STALENESS_MINUTES);
    let n = ((end - start).num_minutes() / crate::types::GRID_MINUTES) as usize;
    let mut cells = Vec::with_capacity(n);
    let mut next = 0;
    let mut latest: Option<&StationSnapshot> = None;
    for i in 0..n {
        let t = start + grid_step() * i as i32;
        while next < snapshots.len() && snapshots[next].timestamp <= t {
            latest = Some(&snapshots[next]);
            next += 1;
        }
        let cell = match latest {
            Some(s) if t - s.timestamp <= staleness && s.operational && s.capacity() > 0 => Cell {
                bikes: s.bikes,
                free_slots: s.free_slots,
                observed: true,
            },
            _ => Cell::GAP,
        };
        cells.push(cell);
    }
    Ok(ResampledSeries {
        station_id,
        grid_start: start,
        grid_end: end,
        cells,
    })
}

/// Resamples a station from the store over `[start, end)`.
pub fn resample(
    store: &SnapshotStore,
    station_id: StationId,
    start: Timestamp,
    end: Timestamp,
) -> Result<ResampledSeries> {
    check_window(start, end)?;
    let snapshots = store.load(station_id, start - Duration::minutes(STALENESS_MINUTES), end)?;
    resample_snapshots(station_id, &snapshots, start, end)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::parse_timestamp;

    fn ts(s: &str) -> Timestamp {
        parse_timestamp(s).unwrap()
    }

    fn minute_feed(from: Timestamp, to: Timestamp) -> Vec<StationSnapshot> {
        let mut out = Vec::new();
        let mut t = from;
        let mut k = 0u32;
        while t < to {
            out.push(StationSnapshot {
                station_id: 1,
                timestamp: t,
                bikes: k % 20 + 1,
                free_slots: 20 - k % 20,
                operational: true,
                latitude: 0.0,
                longitude: 0.0,
                elevation_m: None,
            });
            t += Duration::minutes(1);
            k += 1;
        }
        out
    }

    /// Independent oracle: scan every snapshot for each cell.
    fn brute_force_observed(snaps: &[StationSnapshot], start: Timestamp, n: usize) -> Vec<bool> {
        (0..n)
            .map(|i| {
                let t = start + Duration::minutes(15 * i as i64);
                snaps
                    .iter()
                    .filter(|s| s.timestamp <= t)
                    .max_by_key(|s| s.timestamp)
                    .is_some_and(|s| (t - s.timestamp).num_minutes() <= 30 && s.operational)
            })
            .collect()
    }

    #[test]
    fn minute_feed_is_fully_observed_and_carries_last_value() {
        let start = ts("2015-02-05T08:00:00Z");
        let snaps = minute_feed(start - Duration::minutes(59), start + Duration::hours(1));
        let series = resample_snapshots(1, &snaps, start, start + Duration::hours(1)).unwrap();
        assert_eq!(series.len(), 4);
        assert!(series.cells.iter().all(|c| c.observed));
        // the cell at 08:00 carries the 08:00 observation itself
        let at_eight = snaps.iter().find(|s| s.timestamp == start).unwrap();
        assert_eq!(series.cells[0].bikes, at_eight.bikes);
    }

    #[test]
    fn outage_cells_become_gaps() {
        let start = ts("2015-02-05T08:00:00Z");
        let end = ts("2015-02-05T14:00:00Z");
        // feed silent in [10:00, 12:00)
        let mut snaps = minute_feed(start, ts("2015-02-05T10:00:00Z"));
        snaps.extend(minute_feed(ts("2015-02-05T12:00:00Z"), end));
        let series = resample_snapshots(1, &snaps, start, end).unwrap();
        let observed: Vec<bool> = series.cells.iter().map(|c| c.observed).collect();
        assert_eq!(observed, brute_force_observed(&snaps, start, series.len()));
        // last reading 09:59: 10:15 is 16 min stale (kept), 10:30 is 31 min (gap)
        let gaps: Vec<_> = series.iter().filter(|(_, c)| !c.observed).map(|(t, _)| t).collect();
        assert_eq!(gaps.len(), 6);
        assert_eq!(gaps[0], ts("2015-02-05T10:30:00Z"));
        assert_eq!(*gaps.last().unwrap(), ts("2015-02-05T11:45:00Z"));

        // silent in [10:00, 12:30): eight consecutive gaps, 10:30 through 12:15
        let mut snaps = minute_feed(start, ts("2015-02-05T10:00:00Z"));
        snaps.extend(minute_feed(ts("2015-02-05T12:30:00Z"), end));
        let series = resample_snapshots(1, &snaps, start, end).unwrap();
        assert_eq!(series.cells.iter().filter(|c| !c.observed).count(), 8);
    }

    #[test]
    fn closed_station_is_a_gap() {
        let start = ts("2015-02-05T08:00:00Z");
        let mut snaps = minute_feed(start - Duration::minutes(5), start + Duration::minutes(30));
        for s in snaps
            .iter_mut()
            .filter(|s| s.timestamp >= start + Duration::minutes(10))
        {
            s.operational = false;
        }
        let series = resample_snapshots(1, &snaps, start, start + Duration::minutes(30)).unwrap();
        assert_eq!(
            series.cells.iter().map(|c| c.observed).collect::<Vec<_>>(),
            [true, false]
        );
    }

    #[test]
    fn empty_and_misaligned_windows() {
        let t = ts("2015-02-05T08:00:00Z");
        assert!(resample_snapshots(1, &[], t, t).unwrap().is_empty());
        assert!(resample_snapshots(1, &[], t + Duration::minutes(1), t + Duration::hours(1)).is_err());
    }

    #[test]
    fn slicing() {
        let start = ts("2015-02-05T08:00:00Z");
        let snaps = minute_feed(start, start + Duration::hours(2));
        let series = resample_snapshots(1, &snaps, start, start + Duration::hours(2)).unwrap();
        let part = series
            .slice(start + Duration::minutes(30), start + Duration::hours(1))
            .unwrap();
        assert_eq!(part.cells, series.cells[2..4]);
        assert_eq!(part.time_of(0), start + Duration::minutes(30));
    }
}
