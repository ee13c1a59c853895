//! Parsers for the normalized station, weather and holiday files.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{format_timestamp, parse_timestamp, HolidayCalendar, StationSnapshot, WeatherRecord};

pub const STATION_HEADER: [&str; 8] = [
    "timestamp",
    "station_id",
    "lat",
    "lon",
    "elevation_m",
    "status",
    "bikes",
    "free_slots",
];

pub const WEATHER_HEADER: [&str; 7] = [
    "timestamp",
    "issued_at",
    "temperature_c",
    "relative_humidity_pct",
    "dew_point_c",
    "wind_speed_kmh",
    "is_forecast",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// Skip malformed rows and record them in the ledger.
    #[default]
    Lenient,
    /// Abort on the first malformed row.
    Strict,
}

impl ParseMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseMode::Lenient => "lenient",
            ParseMode::Strict => "strict",
        }
    }
}

impl std::fmt::Display for ParseMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ParseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lenient" => Ok(ParseMode::Lenient),
            "strict" => Ok(ParseMode::Strict),
            other => Err(Error::Parse(format!("unknown parse mode {other:?}"))),
        }
    }
}

/// One skipped row. Serialized one per line as `{file, line, reason}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub file: String,
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub ledger: Vec<LedgerEntry>,
}

pub fn write_ledger<W: Write>(mut out: W, entries: &[LedgerEntry]) -> Result<()> {
    for entry in entries {
        serde_json::to_writer(&mut out, entry)?;
        out.write_all(b"\n").map_err(|e| Error::io("<ledger>", e))?;
    }
    Ok(())
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn check_header(name: &str, found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    if found.iter().ne(expected.iter().copied()) {
        return Err(Error::MalformedRow {
            file: name.to_string(),
            line: 1,
            reason: format!(
                "header {:?} does not match expected {:?}",
                found.iter().collect::<Vec<_>>().join(","),
                expected.join(",")
            ),
        });
    }
    Ok(())
}

/// Drives a row parser over a CSV body, applying the parse mode.
fn parse_rows<R: Read, T>(
    reader: R,
    name: &str,
    header: &[&str],
    mode: ParseMode,
    mut parse_row: impl FnMut(&csv::StringRecord) -> std::result::Result<T, String>,
) -> Result<Parsed<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    check_header(name, rdr.headers()?, header)?;

    let mut records = Vec::new();
    let mut ledger = Vec::new();
    let mut row = csv::StringRecord::new();
    loop {
        let line = rdr.position().line();
        let outcome = match rdr.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) if row.len() != header.len() => {
                Err(format!("expected {} fields, found {}", header.len(), row.len()))
            }
            Ok(true) => parse_row(&row),
            Err(e) => Err(e.to_string()),
        };
        let line = row.position().map_or(line, |p| p.line());
        match outcome {
            Ok(record) => records.push(record),
            Err(reason) if mode == ParseMode::Lenient => ledger.push(LedgerEntry {
                file: name.to_string(),
                line,
                reason,
            }),
            Err(reason) => {
                return Err(Error::MalformedRow {
                    file: name.to_string(),
                    line,
                    reason,
                })
            }
        }
    }
    Ok(Parsed { records, ledger })
}

fn field<T: std::str::FromStr>(row: &csv::StringRecord, i: usize, name: &str) -> std::result::Result<T, String> {
    let raw = row.get(i).unwrap_or("").trim();
    raw.parse().map_err(|_| format!("bad {name} value {raw:?}"))
}

fn station_row(row: &csv::StringRecord) -> std::result::Result<StationSnapshot, String> {
    let timestamp = parse_timestamp(&row[0]).map_err(|e| e.to_string())?;
    let elevation = row[4].trim();
    let elevation_m = if elevation.is_empty() {
        None
    } else {
        Some(field::<f64>(row, 4, "elevation_m")?)
    };
    let operational = match row[5].trim() {
        "OPN" => true,
        "CLS" => false,
        other => return Err(format!("bad status {other:?}, expected OPN or CLS")),
    };
    Ok(StationSnapshot {
        station_id: field(row, 1, "station_id")?,
        timestamp,
        bikes: field(row, 6, "bikes")?,
        free_slots: field(row, 7, "free_slots")?,
        operational,
        latitude: field(row, 2, "lat")?,
        longitude: field(row, 3, "lon")?,
        elevation_m,
    })
}

pub fn read_station_feed<R: Read>(reader: R, name: &str, mode: ParseMode) -> Result<Parsed<StationSnapshot>> {
    parse_rows(reader, name, &STATION_HEADER, mode, station_row)
}

/// Parses a station feed file. Row order is preserved.
pub fn parse_station_feed(path: &Path, mode: ParseMode) -> Result<Parsed<StationSnapshot>> {
    read_station_feed(BufReader::new(open(path)?), &path.display().to_string(), mode)
}

pub fn station_row_fields(s: &StationSnapshot) -> [String; 8] {
    [
        format_timestamp(s.timestamp),
        s.station_id.to_string(),
        s.latitude.to_string(),
        s.longitude.to_string(),
        s.elevation_m.map(|e| e.to_string()).unwrap_or_default(),
        if s.operational { "OPN" } else { "CLS" }.to_string(),
        s.bikes.to_string(),
        s.free_slots.to_string(),
    ]
}

fn parse_bool(raw: &str) -> std::result::Result<bool, String> {
    match raw.trim() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        other => Err(format!("bad is_forecast value {other:?}")),
    }
}

fn weather_row(row: &csv::StringRecord) -> std::result::Result<WeatherRecord, String> {
    let record = WeatherRecord {
        timestamp: parse_timestamp(&row[0]).map_err(|e| e.to_string())?,
        issued_at: parse_timestamp(&row[1]).map_err(|e| e.to_string())?,
        temperature_c: field(row, 2, "temperature_c")?,
        relative_humidity_pct: field(row, 3, "relative_humidity_pct")?,
        dew_point_c: field(row, 4, "dew_point_c")?,
        wind_speed_kmh: field(row, 5, "wind_speed_kmh")?,
        is_forecast: parse_bool(&row[6])?,
    };
    record.validate().map_err(|e| e.to_string())?;
    Ok(record)
}

pub fn read_weather<R: Read>(reader: R, name: &str, mode: ParseMode) -> Result<Parsed<WeatherRecord>> {
    let mut parsed = parse_rows(reader, name, &WEATHER_HEADER, mode, weather_row)?;
    parsed
        .records
        .sort_by_key(|w| (w.timestamp, w.issued_at, w.is_forecast));
    Ok(parsed)
}

/// Parses a weather file (historical and forecast rows mixed), sorted by
/// timestamp.
pub fn parse_weather(path: &Path, mode: ParseMode) -> Result<Parsed<WeatherRecord>> {
    read_weather(BufReader::new(open(path)?), &path.display().to_string(), mode)
}

pub fn weather_row_fields(w: &WeatherRecord) -> [String; 7] {
    [
        format_timestamp(w.timestamp),
        format_timestamp(w.issued_at),
        w.temperature_c.to_string(),
        w.relative_humidity_pct.to_string(),
        w.dew_point_c.to_string(),
        w.wind_speed_kmh.to_string(),
        w.is_forecast.to_string(),
    ]
}

pub fn write_weather<W: Write>(out: W, records: &[WeatherRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(WEATHER_HEADER)?;
    for w in records {
        wtr.write_record(weather_row_fields(w))?;
    }
    wtr.flush().map_err(|e| Error::io("<weather>", e))?;
    Ok(())
}

pub fn read_holidays<R: BufRead>(reader: R, name: &str) -> Result<HolidayCalendar> {
    let mut calendar = HolidayCalendar::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(name, e))?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let date = NaiveDate::parse_from_str(content, "%Y-%m-%d").map_err(|e| Error::MalformedRow {
            file: name.to_string(),
            line: i as u64 + 1,
            reason: format!("bad date {content:?}: {e}"),
        })?;
        calendar.insert(date);
    }
    Ok(calendar)
}

/// One ISO date per line; `#` starts a comment.
pub fn parse_holidays(path: &Path) -> Result<HolidayCalendar> {
    read_holidays(BufReader::new(open(path)?), &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "timestamp,station_id,lat,lon,elevation_m,status,bikes,free_slots\n";

    #[test]
    fn station_rows_map_directly() {
        let body = format!(
            "{HEADER}2015-02-05T08:00:00Z,92,41.38,2.17,12,OPN,0,24\n2015-02-05T08:01:00Z,92,41.38,2.17,,CLS,5,10\n"
        );
        let parsed = read_station_feed(body.as_bytes(), "feed.csv", ParseMode::Strict).unwrap();
        assert!(parsed.ledger.is_empty());
        let s = &parsed.records[0];
        assert_eq!((s.station_id, s.bikes, s.free_slots, s.operational), (92, 0, 24, true));
        assert_eq!(s.elevation_m, Some(12.0));
        assert_eq!(s.latitude, 41.38);
        let closed = &parsed.records[1];
        assert!(!closed.operational);
        assert_eq!(closed.elevation_m, None);
    }

    #[test]
    fn malformed_rows_go_to_ledger_in_lenient_mode() {
        let body = format!(
            "{HEADER}2015-02-05T08:00:00Z,92,41.38,2.17,12,OPN,abc,24\n2015-02-05T08:01:00Z,92,41.38,2.17,12,OPN,3,21\n2015-02-05T08:02:00Z,92,41.38\n"
        );
        let parsed = read_station_feed(body.as_bytes(), "feed.csv", ParseMode::Lenient).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.ledger.len(), 2);
        assert_eq!(parsed.ledger[0].line, 2);
        assert!(parsed.ledger[0].reason.contains("bikes"));
        assert_eq!(parsed.ledger[1].line, 4);

        let mut out = Vec::new();
        write_ledger(&mut out, &parsed.ledger).unwrap();
        let first = String::from_utf8(out).unwrap().lines().next().unwrap().to_string();
        let v: serde_json::Value = serde_json::from_str(&first).unwrap();
        assert_eq!(v["file"], "feed.csv");
        assert_eq!(v["line"], 2);
    }

    #[test]
    fn strict_mode_aborts() {
        let body = format!("{HEADER}2015-02-05T08:00:00Z,92,41.38,2.17,12,OPN,abc,24\n");
        let err = read_station_feed(body.as_bytes(), "feed.csv", ParseMode::Strict).unwrap_err();
        assert!(matches!(err, Error::MalformedRow { line: 2, .. }));
    }

    #[test]
    fn wrong_header_is_fatal() {
        let body = "ts,id\n1,2\n";
        assert!(read_station_feed(body.as_bytes(), "x", ParseMode::Lenient).is_err());
    }

    #[test]
    fn weather_rows() {
        let body = "timestamp,issued_at,temperature_c,relative_humidity_pct,dew_point_c,wind_speed_kmh,is_forecast\n\
            2015-02-07T00:00:00Z,2015-02-05T00:00:00Z,9,65,3,12,true\n\
            2015-02-05T00:00:00Z,2015-02-05T00:00:00Z,8.5,70,3.2,10,false\n\
            2015-02-05T01:00:00Z,2015-02-05T01:00:00Z,8.5,140,3.2,10,false\n";
        let parsed = read_weather(body.as_bytes(), "w.csv", ParseMode::Lenient).unwrap();
        assert_eq!(parsed.records.len(), 2);
        assert_eq!(parsed.ledger.len(), 1);
        assert!(parsed.ledger[0].reason.contains("humidity"));
        // sorted by timestamp
        assert!(!parsed.records[0].is_forecast);
        assert!(parsed.records[1].is_forecast);
    }

    #[test]
    fn holidays() {
        let cal = read_holidays(
            "# city holidays\n2015-01-01\n\n2015-01-06 # epiphany\n2015-01-01\n".as_bytes(),
            "h",
        )
        .unwrap();
        assert_eq!(cal.len(), 2);
        assert!(cal.is_holiday(NaiveDate::from_ymd_opt(2015, 1, 1).unwrap()));
        assert!(read_holidays("".as_bytes(), "h").unwrap().is_empty());
        assert!(read_holidays("2015-13-01\n".as_bytes(), "h").is_err());
    }
}
