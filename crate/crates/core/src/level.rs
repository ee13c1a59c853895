//! Five-level station occupancy status and the thresholds that define it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of bikes (or slots) at or below which a station is "almost" empty
/// (or full).
pub const ALMOST_THRESHOLD: u32 = 5;

/// Occupancy status of a station.
///
/// The declaration order is the total order used for serialization and for
/// every tie-break in the crate: `Empty < AlmostEmpty < Available < AlmostFull < Full`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OccupancyLevel {
    Empty,
    AlmostEmpty,
    Available,
    AlmostFull,
    Full,
}

impl OccupancyLevel {
    pub const ALL: [OccupancyLevel; 5] = [
        OccupancyLevel::Empty,
        OccupancyLevel::AlmostEmpty,
        OccupancyLevel::Available,
        OccupancyLevel::AlmostFull,
        OccupancyLevel::Full,
    ];

    /// Position in the total order, `0..5`.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OccupancyLevel::Empty => "empty",
            OccupancyLevel::AlmostEmpty => "almost_empty",
            OccupancyLevel::Available => "available",
            OccupancyLevel::AlmostFull => "almost_full",
            OccupancyLevel::Full => "full",
        }
    }

    /// `Full` or `Empty`: the statuses users actually get stuck on.
    pub fn is_critical(self) -> bool {
        matches!(self, OccupancyLevel::Full | OccupancyLevel::Empty)
    }

    /// Which end of the scale the level leans to, if any.
    pub fn side(self) -> Option<Side> {
        match self {
            OccupancyLevel::Empty | OccupancyLevel::AlmostEmpty => Some(Side::Empty),
            OccupancyLevel::Full | OccupancyLevel::AlmostFull => Some(Side::Full),
            OccupancyLevel::Available => None,
        }
    }

    /// Index of the largest count, lowest level on ties.
    pub fn argmax(counts: &[u32; 5]) -> Self {
        let mut best = 0;
        for (i, &c) in counts.iter().enumerate().skip(1) {
            if c > counts[best] {
                best = i;
            }
        }
        Self::ALL[best]
    }
}

impl fmt::Display for OccupancyLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OccupancyLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|level| level.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown occupancy level {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Empty,
    Full,
}

/// Classifies a station from its bike and free-slot counts.
///
/// Precedence when the "almost" bands overlap (a small station with, say,
/// 3 bikes and 3 slots): `Empty`, `Full`, `AlmostEmpty`, `AlmostFull`,
/// `Available`.
pub fn discretize(bikes: u32, free_slots: u32) -> Result<OccupancyLevel> {
    if bikes == 0 && free_slots == 0 {
        return Err(Error::ZeroCapacity);
    }
    let level = if bikes == 0 {
        OccupancyLevel::Empty
    } else if free_slots == 0 {
        OccupancyLevel::Full
    } else if bikes <= ALMOST_THRESHOLD {
        OccupancyLevel::AlmostEmpty
    } else if free_slots <= ALMOST_THRESHOLD {
        OccupancyLevel::AlmostFull
    } else {
        OccupancyLevel::Available
    };
    Ok(level)
}

/// Classifies a real-valued bike-count forecast for a station of the given
/// capacity: round to nearest, clamp to `[0, capacity]`, then [`discretize`].
pub fn classify_count(predicted_bikes: f64, capacity: u32) -> Result<OccupancyLevel> {
    if capacity == 0 {
        return Err(Error::ZeroCapacity);
    }
    let bikes = if predicted_bikes.is_nan() {
        0.0
    } else {
        predicted_bikes.round().clamp(0.0, f64::from(capacity))
    };
    let bikes = bikes as u32;
    discretize(bikes, capacity - bikes)
}

/// Which predicted levels count as a "positive" outcome when scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Only `Full` and `Empty`.
    Strict,
    /// Also `AlmostFull` and `AlmostEmpty`, read as warnings.
    Flexible,
}

impl Criterion {
    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Strict => "strict",
            Criterion::Flexible => "flexible",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(Criterion::Strict),
            "flexible" => Ok(Criterion::Flexible),
            other => Err(Error::Parse(format!("unknown criterion {other:?}"))),
        }
    }
}

pub fn is_positive(level: OccupancyLevel, criterion: Criterion) -> bool {
    match criterion {
        Criterion::Strict => level.is_critical(),
        Criterion::Flexible => level != OccupancyLevel::Available,
    }
}
