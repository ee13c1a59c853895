//! Partitioned, append-only snapshot store.
//!
//! Layout: `<root>/stations/<id>/<YYYY-MM>.csv`, one file per station and
//! UTC calendar month, each in the station feed schema with rows strictly
//! increasing in time.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{Datelike, Months, NaiveDate, TimeZone, Utc};

use super::parse::{read_station_feed, station_row_fields, ParseMode, STATION_HEADER};
use crate::error::{Error, Result};
use crate::types::{StationId, StationSnapshot, Timestamp};

/// A `(year, month)` partition key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Month {
    pub year: i32,
    pub month: u32,
}

impl Month {
    pub fn of(t: Timestamp) -> Self {
        Self {
            year: t.year(),
            month: t.month(),
        }
    }

    pub fn start(self) -> Timestamp {
        Utc.with_ymd_and_hms(self.year, self.month, 1, 0, 0, 0)
            .single()
            .expect("valid month start")
    }

    pub fn next(self) -> Self {
        let first = NaiveDate::from_ymd_opt(self.year, self.month, 1).expect("valid month");
        let next = first + Months::new(1);
        Self {
            year: next.year(),
            month: next.month(),
        }
    }

    fn file_name(self) -> String {
        format!("{:04}-{:02}.csv", self.year, self.month)
    }

    fn parse_file_name(name: &str) -> Option<Self> {
        let stem = name.strip_suffix(".csv")?;
        let (y, m) = stem.split_once('-')?;
        let month = Self {
            year: y.parse().ok()?,
            month: m.parse().ok()?,
        };
        (1..=12).contains(&month.month).then_some(month)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestSummary {
    pub inserted: usize,
    /// Rows whose `(station_id, timestamp)` was already stored.
    pub duplicates: usize,
    pub partitions_written: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyIssue {
    pub file: PathBuf,
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub partitions: usize,
    pub rows: usize,
    pub issues: Vec<VerifyIssue>,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct SnapshotStore {
    root: PathBuf,
}

impl SnapshotStore {
    /// Opens (and creates if needed) a store rooted at `root`.
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let stations = root.join("stations");
        fs::create_dir_all(&stations).map_err(|e| Error::io(&stations, e))?;
        Ok(Self { root })
    }

    /// Opens an existing store.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let stations = root.join("stations");
        if !stations.is_dir() {
            return Err(Error::InvalidInput(format!(
                "{} is not a snapshot store (missing stations/)",
                root.display()
            )));
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn station_dir(&self, station: StationId) -> PathBuf {
        self.root.join("stations").join(station.to_string())
    }

    pub fn partition_path(&self, station: StationId, month: Month) -> PathBuf {
        self.station_dir(station).join(month.file_name())
    }

    pub fn stations(&self) -> Result<Vec<StationId>> {
        let dir = self.root.join("stations");
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            if let Some(id) = entry.file_name().to_str().and_then(|s| s.parse().ok()) {
                ids.push(id);
            }
        }
        ids.sort_unstable();
        Ok(ids)
    }

    pub fn months(&self, station: StationId) -> Result<Vec<Month>> {
        let dir = self.station_dir(station);
        if !dir.is_dir() {
            return Err(Error::UnknownStation(station));
        }
        let mut months = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            if let Some(m) = entry.file_name().to_str().and_then(Month::parse_file_name) {
                months.push(m);
            }
        }
        months.sort_unstable();
        Ok(months)
    }

    pub fn read_partition(&self, station: StationId, month: Month) -> Result<Vec<StationSnapshot>> {
        let path = self.partition_path(station, month);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let parsed = read_station_feed(BufReader::new(file), &path.display().to_string(), ParseMode::Strict)?;
        Ok(parsed.records)
    }

    /// Replaces a partition with `rows`, which must already be sorted and
    /// belong to the partition.
    pub fn write_partition(&self, station: StationId, month: Month, rows: &[StationSnapshot]) -> Result<()> {
        let dir = self.station_dir(station);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = self.partition_path(station, month);
        let tmp = path.with_extension("csv.tmp");
        {
            let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            let mut wtr = csv::Writer::from_writer(BufWriter::new(file));
            wtr.write_record(STATION_HEADER)?;
            for row in rows {
                debug_assert_eq!(row.station_id, station);
                debug_assert_eq!(Month::of(row.timestamp), month);
                wtr.write_record(station_row_fields(row))?;
            }
            let mut inner = wtr.into_inner().map_err(|e| Error::io(&tmp, e.into_error()))?;
            inner.flush().map_err(|e| Error::io(&tmp, e))?;
        }
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    /// Merges snapshots into their partitions. A `(station_id, timestamp)`
    /// already present keeps its stored values.
    pub fn ingest(&self, snapshots: &[StationSnapshot]) -> Result<IngestSummary> {
        let mut by_partition: BTreeMap<(StationId, Month), Vec<StationSnapshot>> = BTreeMap::new();
        for s in snapshots {
            by_partition
                .entry((s.station_id, Month::of(s.timestamp)))
                .or_default()
                .push(*s);
        }
        let mut summary = IngestSummary::default();
        for ((station, month), incoming) in by_partition {
            let existing = self.read_partition(station, month)?;
            let mut merged: BTreeMap<Timestamp, StationSnapshot> =
                existing.into_iter().map(|s| (s.timestamp, s)).collect();
            let mut changed = false;
            for s in incoming {
                match merged.entry(s.timestamp) {
                    std::collections::btree_map::Entry::Occupied(_) => summary.duplicates += 1,
                    std::collections::btree_map::Entry::Vacant(slot) => {
                        slot.insert(s);
                        summary.inserted += 1;
                        changed = true;
                    }
                }
            }
            if changed {
                let rows: Vec<_> = merged.into_values().collect();
                self.write_partition(station, month, &rows)?;
                summary.partitions_written += 1;
            }
        }
        Ok(summary)
    }

    /// Snapshots of `station` with `start <= timestamp < end`, sorted.
    pub fn load(&self, station: StationId, start: Timestamp, end: Timestamp) -> Result<Vec<StationSnapshot>> {
        let available: BTreeSet<Month> = self.months(station)?.into_iter().collect();
        let mut out = Vec::new();
        if start >= end {
            return Ok(out);
        }
        let mut month = Month::of(start);
        while month.start() < end {
            if available.contains(&month) {
                out.extend(
                    self.read_partition(station, month)?
                        .into_iter()
                        .filter(|s| s.timestamp >= start && s.timestamp < end),
                );
            }
            month = month.next();
        }
        Ok(out)
    }

    /// Checks every partition: header, station id, month, strict ordering.
    pub fn verify(&self) -> Result<VerifyReport> {
        let mut report = VerifyReport::default();
        for station in self.stations()? {
            for month in self.months(station)? {
                report.partitions += 1;
                let path = self.partition_path(station, month);
                let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
                let parsed =
                    match read_station_feed(BufReader::new(file), &path.display().to_string(), ParseMode::Lenient) {
                        Ok(p) => p,
                        Err(e) => {
                            report.issues.push(VerifyIssue {
                                file: path.clone(),
                                line: 1,
                                reason: e.to_string(),
                            });
                            continue;
                        }
                    };
                for entry in parsed.ledger {
                    report.issues.push(VerifyIssue {
                        file: path.clone(),
                        line: entry.line,
                        reason: entry.reason,
                    });
                }
                let mut previous: Option<Timestamp> = None;
                for (i, row) in parsed.records.iter().enumerate() {
                    report.rows += 1;
                    let line = i as u64 + 2;
                    let mut fail = |reason: String| {
                        report.issues.push(VerifyIssue {
                            file: path.clone(),
                            line,
                            reason,
                        })
                    };
                    if row.station_id != station {
                        fail(format!("station {} in partition of {station}", row.station_id));
                    }
                    if Month::of(row.timestamp) != month {
                        fail("timestamp outside partition month".into());
                    }
                    if previous.is_some_and(|p| row.timestamp <= p) {
                        fail("timestamps not strictly increasing".into());
                    }
                    previous = Some(row.timestamp);
                }
            }
        }
        Ok(report)
    }
}
