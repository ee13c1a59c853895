use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use chrono::NaiveDate;
use occ_core::arima::{default_grid, DAILY_PERIOD};
use occ_core::config::FlatConfig;
use occ_core::eval::{BuildInputs, ModelSettings};
use occ_core::forest::ForestConfig;
use occ_core::ingest::{parse_holidays, parse_weather, write_ledger, ParseMode, SnapshotStore};
use occ_core::types::parse_timestamp;
use occ_core::{CityClock, HolidayCalendar, Timestamp, WeatherRecord};

use crate::manifest::Manifest;
use crate::{usage, DataArgs, ModelArgs};

pub const PARSE_LEDGER: &str = "parse-ledger.ndjson";

/// Resolves each setting from its flag, then the run configuration file,
/// then a default, and remembers what was chosen.
#[derive(Debug, Default)]
pub struct Resolver {
    file: FlatConfig,
    pub resolved: BTreeMap<String, String>,
}

impl Resolver {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => FlatConfig::load(p).map_err(|e| usage(format!("run configuration {}: {e}", p.display())))?,
            None => FlatConfig::default(),
        };
        Ok(Self {
            file,
            resolved: BTreeMap::new(),
        })
    }

    pub fn pick<T>(&mut self, key: &str, flag: Option<T>, default: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => Some(v),
            None => match self.file.get_str(key) {
                Some(text) => Some(
                    text.parse::<T>()
                        .map_err(|e| usage(format!("configuration key {key}: {e}")))?,
                ),
                None => default,
            },
        };
        if let Some(v) = &value {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(value)
    }

    pub fn require<T>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.pick(key, flag, None)?
            .ok_or_else(|| usage(format!("--{} is required", key.replace('_', "-"))))
    }

    /// A switch is on when given as a flag or set true in the file.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool> {
        let on = if flag {
            true
        } else {
            self.pick::<bool>(key, None, Some(false))?.unwrap_or(false)
        };
        self.resolved.insert(key.to_string(), on.to_string());
        Ok(on)
    }
}

pub fn parse_flag<T>(key: &str, text: &str) -> Result<T>
where
    T: FromStr,
    T::Err: Display,
{
    text.parse::<T>().map_err(|e| usage(format!("--{key}: {e}")))
}

/// An RFC 3339 instant, or a date meaning its local midnight.
pub fn parse_instant(key: &str, text: &str, clock: &CityClock) -> Result<Timestamp> {
    if let Ok(d) = NaiveDate::parse_from_str(text, "%Y-%m-%d") {
        return Ok(clock.local_midnight(d));
    }
    parse_timestamp(text).map_err(|e| usage(format!("--{key}: {e}")))
}

pub fn parse_date(key: &str, text: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(text, "%Y-%m-%d").map_err(|e| usage(format!("--{key}: expected YYYY-MM-DD: {e}")))
}

pub fn ensure_out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))
}

pub struct Corpus {
    pub store: SnapshotStore,
    pub weather: Vec<WeatherRecord>,
    pub holidays: HolidayCalendar,
    pub clock: CityClock,
}

impl Corpus {
    pub fn inputs(&self) -> BuildInputs<'_> {
        BuildInputs {
            store: &self.store,
            weather: &self.weather,
            holidays: &self.holidays,
            clock: self.clock,
        }
    }
}

pub fn clock(r: &mut Resolver, data: &DataArgs) -> Result<CityClock> {
    let offset = r.pick(
        "utc_offset",
        data.utc_offset.clone(),
        Some(CityClock::default().to_string()),
    )?;
    parse_flag("utc-offset", offset.as_deref().unwrap_or("+01:00"))
}

/// Opens the store and reads weather and holidays. Files that were not named
/// explicitly and do not exist are treated as empty.
pub fn load_corpus(
    r: &mut Resolver,
    data: &DataArgs,
    manifest: &mut Manifest,
    out: &Path,
    outputs: &mut Vec<&'static str>,
) -> Result<Corpus> {
    let root: PathBuf = r
        .pick(
            "data",
            data.data.as_ref().map(|p| p.display().to_string()),
            Some("data".to_string()),
        )?
        .unwrap_or_default()
        .into();
    let store_path = r.pick(
        "store",
        data.store.as_ref().map(|p| p.display().to_string()),
        Some(root.join("store").display().to_string()),
    )?;
    let weather_flag = data.weather.as_ref().map(|p| p.display().to_string());
    let explicit_weather = weather_flag.is_some() || r_has(r, "weather");
    let weather_path = r.pick(
        "weather",
        weather_flag,
        Some(root.join("weather.csv").display().to_string()),
    )?;
    let holidays_flag = data.holidays.as_ref().map(|p| p.display().to_string());
    let explicit_holidays = holidays_flag.is_some() || r_has(r, "holidays");
    let holidays_path = r.pick(
        "holidays",
        holidays_flag,
        Some(root.join("holidays.txt").display().to_string()),
    )?;
    let mode: ParseMode = {
        let text = r.pick("parse_mode", data.parse_mode.clone(), Some("strict".to_string()))?;
        parse_flag("parse-mode", text.as_deref().unwrap_or("strict"))?
    };
    let clock = clock(r, data)?;

    let store_path = PathBuf::from(store_path.unwrap_or_default());
    let store = SnapshotStore::open(&store_path)?;
    manifest.input(&store_path)?;

    let weather_path = PathBuf::from(weather_path.unwrap_or_default());
    let weather = if weather_path.exists() || explicit_weather {
        let parsed = parse_weather(&weather_path, mode)?;
        manifest.input(&weather_path)?;
        if !parsed.ledger.is_empty() {
            log::warn!(
                "skipped {} malformed weather rows; see {PARSE_LEDGER}",
                parsed.ledger.len()
            );
            let file = fs::File::create(out.join(PARSE_LEDGER))?;
            write_ledger(std::io::BufWriter::new(file), &parsed.ledger)?;
            outputs.push(PARSE_LEDGER);
        }
        parsed.records
    } else {
        log::warn!(
            "no weather file at {}; continuing without weather",
            weather_path.display()
        );
        Vec::new()
    };

    let holidays_path = PathBuf::from(holidays_path.unwrap_or_default());
    let holidays = if holidays_path.exists() || explicit_holidays {
        manifest.input(&holidays_path)?;
        parse_holidays(&holidays_path)?
    } else {
        log::warn!(
            "no holiday file at {}; continuing without holidays",
            holidays_path.display()
        );
        HolidayCalendar::new()
    };
    Ok(Corpus {
        store,
        weather,
        holidays,
        clock,
    })
}

fn r_has(r: &Resolver, key: &str) -> bool {
    r.file.get_str(key).is_some()
}

pub fn model_settings(r: &mut Resolver, args: &ModelArgs) -> Result<ModelSettings> {
    let defaults = ModelSettings::default();
    let forest_defaults = ForestConfig::default();
    let forest = ForestConfig {
        n_trees: r
            .pick("trees", args.trees, Some(forest_defaults.n_trees))?
            .unwrap_or_default(),
        mtry: r.pick("mtry", args.mtry, None)?,
        min_node_size: r
            .pick("min_node_size", args.min_node_size, Some(forest_defaults.min_node_size))?
            .unwrap_or_default(),
        max_depth: r.pick("max_depth", args.max_depth, None)?,
        ..forest_defaults
    };
    let max_order = r.pick("arima_max_order", args.arima_max_order, Some(3))?.unwrap_or(3);
    if max_order > 3 {
        return Err(usage("--arima-max-order must be at most 3"));
    }
    let no_seasonal = r.switch("arima_no_seasonal", args.arima_no_seasonal)?;
    let arima_grid = default_grid(DAILY_PERIOD)
        .into_iter()
        .filter(|s| s.p <= max_order && s.q <= max_order)
        .filter(|s| !no_seasonal || (s.seasonal_p, s.seasonal_d, s.seasonal_q) == (0, 0, 0))
        .collect();
    Ok(ModelSettings {
        n_yearago: r
            .pick("n_yearago", args.n_yearago, Some(defaults.n_yearago))?
            .unwrap_or_default(),
        n_recent: r
            .pick("n_recent", args.n_recent, Some(defaults.n_recent))?
            .unwrap_or_default(),
        forest,
        arima_grid,
    })
}
