use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use chrono::Duration;

use crate::error::{Error, Result};
use crate::ingest::ResampledSeries;
use crate::level::{is_positive, Criterion, OccupancyLevel};
use crate::types::{Method, PredictionRecord, StationId, Timestamp};

/// Prediction-age bucket; the first three partition `(0, 72]` hours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AgeBucket {
    UpTo24h,
    UpTo48h,
    UpTo72h,
    All,
}

impl AgeBucket {
    pub const PARTITION: [AgeBucket; 3] = [AgeBucket::UpTo24h, AgeBucket::UpTo48h, AgeBucket::UpTo72h];

    /// Bucket of a prediction age; ages of zero fall in the first bucket.
    pub fn of(age: Duration) -> Option<AgeBucket> {
        let minutes = age.num_minutes();
        match minutes {
            m if m < 0 => None,
            m if m <= 24 * 60 => Some(AgeBucket::UpTo24h),
            m if m <= 48 * 60 => Some(AgeBucket::UpTo48h),
            m if m <= 72 * 60 => Some(AgeBucket::UpTo72h),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgeBucket::UpTo24h => "0-24h",
            AgeBucket::UpTo48h => "24-48h",
            AgeBucket::UpTo72h => "48-72h",
            AgeBucket::All => "all",
        }
    }
}

impl fmt::Display for AgeBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgeBucket {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            AgeBucket::UpTo24h,
            AgeBucket::UpTo48h,
            AgeBucket::UpTo72h,
            AgeBucket::All,
        ]
        .into_iter()
        .find(|b| b.as_str() == s)
        .ok_or_else(|| Error::Parse(format!("unknown age bucket {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScoreOptions {
    /// Under the flexible criterion, count a predicted AlmostFull against a
    /// true Empty (and vice versa) as a hit.
    pub flexible_any_side: bool,
}

/// Binary counts for one criterion plus the full level confusion matrix.
///
/// A positive prediction is a true positive only when the truth is critical
/// and the prediction matches it (exactly under the strict criterion, by
/// side under the flexible one); every other positive prediction is a false
/// positive. Negative predictions split into true negatives and false
/// negatives by whether the truth is critical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
    /// `matrix[predicted][truth]`.
    pub matrix: [[u64; 5]; 5],
    /// Predictions whose target cell had no observation.
    pub unobserved: u64,
}

/// Whether a positive `predicted` level is a correct warning for `truth`.
pub fn is_hit(predicted: OccupancyLevel, truth: OccupancyLevel, criterion: Criterion, options: ScoreOptions) -> bool {
    if !truth.is_critical() || !is_positive(predicted, criterion) {
        return false;
    }
    match criterion {
        Criterion::Strict => predicted == truth,
        Criterion::Flexible => options.flexible_any_side || predicted.side() == truth.side(),
    }
}

impl Confusion {
    pub fn add(
        &mut self,
        predicted: OccupancyLevel,
        truth: OccupancyLevel,
        criterion: Criterion,
        options: ScoreOptions,
    ) {
        self.matrix[predicted.index()][truth.index()] += 1;
        if is_positive(predicted, criterion) {
            if is_hit(predicted, truth, criterion, options) {
                self.tp += 1;
            } else {
                self.fp += 1;
            }
        } else if truth.is_critical() {
            self.fn_ += 1;
        } else {
            self.tn += 1;
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
        self.unobserved += other.unobserved;
        for (row, o) in self.matrix.iter_mut().zip(&other.matrix) {
            for (a, b) in row.iter_mut().zip(o) {
                *a += b;
            }
        }
    }

    /// Scored pairs (observed truth only).
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn truth_count(&self, level: OccupancyLevel) -> u64 {
        self.matrix.iter().map(|row| row[level.index()]).sum()
    }

    pub fn predicted_count(&self, level: OccupancyLevel) -> u64 {
        self.matrix[level.index()].iter().sum()
    }

    pub fn metrics(&self) -> Metrics {
        let critical = [OccupancyLevel::Empty, OccupancyLevel::Full];
        let critical_truth: u64 = critical.iter().map(|&l| self.truth_count(l)).sum();
        let critical_hits: u64 = critical.iter().map(|&l| self.matrix[l.index()][l.index()]).sum();
        let diagonal: u64 = (0..5).map(|i| self.matrix[i][i]).sum();
        let matrix_total: u64 = self.matrix.iter().flatten().sum();
        Metrics {
            accuracy_critical: Rate::new(critical_hits, critical_truth),
            accuracy_overall: Rate::new(diagonal, matrix_total),
            sensitivity: Rate::new(self.tp, self.tp + self.fp),
            specificity: Rate::new(self.tn, self.tn + self.fn_),
            recall_standard: Rate::new(self.tp, self.tp + self.fn_),
            specificity_standard: Rate::new(self.tn, self.tn + self.fp),
        }
    }
}

/// A ratio whose value is undefined when the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rate {
    pub hits: u64,
    pub n: u64,
}

impl Rate {
    pub fn new(hits: u64, n: u64) -> Self {
        Self { hits, n }
    }

    pub fn value(&self) -> Option<f64> {
        (self.n > 0).then(|| self.hits as f64 / self.n as f64)
    }
}

/// Rates derived from a [`Confusion`]. `sensitivity` and `specificity` divide
/// by predicted positives and predicted negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Metrics {
    pub accuracy_critical: Rate,
    pub accuracy_overall: Rate,
    pub sensitivity: Rate,
    pub specificity: Rate,
    pub recall_standard: Rate,
    pub specificity_standard: Rate,
}

impl Metrics {
    pub fn named(&self) -> [(&'static str, Rate); 6] {
        [
            ("accuracy_critical", self.accuracy_critical),
            ("accuracy_overall", self.accuracy_overall),
            ("sensitivity", self.sensitivity),
            ("specificity", self.specificity),
            ("recall_standard", self.recall_standard),
            ("specificity_standard", self.specificity_standard),
        ]
    }
}

/// Observed truth per station on the 15-minute grid.
#[derive(Debug, Clone, Default)]
pub struct Truth {
    series: BTreeMap<StationId, ResampledSeries>,
}

impl Truth {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, series: ResampledSeries) {
        self.series.insert(series.station_id, series);
    }

    /// `None` when the instant is outside the series or unobserved.
    pub fn level_at(&self, station: StationId, t: Timestamp) -> Option<OccupancyLevel> {
        self.series.get(&station)?.cell_at(t)?.level()
    }
}

pub type ReportKey = (StationId, Method, Criterion, AgeBucket);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub cells: BTreeMap<ReportKey, Confusion>,
}

pub const REPORT_HEADER: [&str; 7] = ["station", "method", "criterion", "age_bucket", "metric", "value", "n"];
pub const DURABILITY_HEADER: [&str; 6] = ["age_bucket", "method", "criterion", "metric", "value", "n"];
pub const CONFUSION_HEADER: [&str; 6] = ["station", "method", "age_bucket", "predicted", "truth", "count"];

/// Undefined rates are written as `NA`.
pub fn format_rate(rate: Rate) -> String {
    rate.value()
        .map(|v| format!("{v:.6}"))
        .unwrap_or_else(|| "NA".to_string())
}

/// Scores predictions under both criteria, per prediction-age bucket and
/// over all ages.
pub fn score(predictions: &[PredictionRecord], truth: &Truth, options: ScoreOptions) -> EvalReport {
    let mut report = EvalReport::default();
    for p in predictions {
        let Some(bucket) = AgeBucket::of(p.age()) else {
            continue;
        };
        let observed = truth.level_at(p.station_id, p.target_time);
        for criterion in [Criterion::Strict, Criterion::Flexible] {
            for b in [bucket, AgeBucket::All] {
                let c = report.cells.entry((p.station_id, p.method, criterion, b)).or_default();
                match observed {
                    Some(t) => c.add(p.predicted, t, criterion, options),
                    None => c.unobserved += 1,
                }
            }
        }
    }
    report
}

impl EvalReport {
    pub fn get(
        &self,
        station: StationId,
        method: Method,
        criterion: Criterion,
        bucket: AgeBucket,
    ) -> Option<&Confusion> {
        self.cells.get(&(station, method, criterion, bucket))
    }

    pub fn stations(&self) -> Vec<StationId> {
        let mut s: Vec<StationId> = self.cells.keys().map(|k| k.0).collect();
        s.dedup();
        s
    }

    /// Counts summed over stations.
    pub fn pooled(&self, method: Method, criterion: Criterion, bucket: AgeBucket) -> Confusion {
        let mut total = Confusion::default();
        for ((_, m, c, b), conf) in &self.cells {
            if (*m, *c, *b) == (method, criterion, bucket) {
                total.merge(conf);
            }
        }
        total
    }

    pub fn merge(&mut self, other: &EvalReport) {
        for (k, v) in &other.cells {
            self.cells.entry(*k).or_default().merge(v);
        }
    }

    /// One row per (station, method, criterion, bucket, metric); `n` is the
    /// rate denominator, or the number of predictions for the count rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(REPORT_HEADER)?;
        for ((station, method, criterion, bucket), conf) in &self.cells {
            let prefix = [
                station.to_string(),
                method.to_string(),
                criterion.to_string(),
                bucket.to_string(),
            ];
            for (name, rate) in conf.metrics().named() {
                wtr.write_record(prefix.iter().cloned().chain([
                    name.to_string(),
                    format_rate(rate),
                    rate.n.to_string(),
                ]))?;
            }
            let scored = conf.total() + conf.unobserved;
            for (name, v) in [
                ("tp", conf.tp),
                ("fp", conf.fp),
                ("tn", conf.tn),
                ("fn", conf.fn_),
                ("unobserved", conf.unobserved),
            ] {
                wtr.write_record(
                    prefix
                        .iter()
                        .cloned()
                        .chain([name.to_string(), v.to_string(), scored.to_string()]),
                )?;
            }
        }
        wtr.flush().map_err(|e| Error::io("report", e))?;
        Ok(())
    }

    /// Level confusion matrices; they do not depend on the criterion.
    pub fn write_confusion_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(CONFUSION_HEADER)?;
        for ((station, method, criterion, bucket), conf) in &self.cells {
            if *criterion != Criterion::Strict {
                continue;
            }
            for p in OccupancyLevel::ALL {
                for t in OccupancyLevel::ALL {
                    wtr.write_record([
                        station.to_string(),
                        method.to_string(),
                        bucket.to_string(),
                        p.to_string(),
                        t.to_string(),
                        conf.matrix[p.index()][t.index()].to_string(),
                    ])?;
                }
            }
        }
        wtr.flush().map_err(|e| Error::io("confusion", e))?;
        Ok(())
    }
}

/// Metrics pooled over stations, per age bucket, method and criterion.
pub fn durability_report<W: Write>(report: &EvalReport, out: W) -> Result<()> {
    let mut keys: Vec<(Method, Criterion)> = report.cells.keys().map(|k| (k.1, k.2)).collect();
    keys.sort();
    keys.dedup();
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(DURABILITY_HEADER)?;
    for bucket in AgeBucket::PARTITION.into_iter().chain([AgeBucket::All]) {
        for &(method, criterion) in &keys {
            let conf = report.pooled(method, criterion, bucket);
            for (name, rate) in conf.metrics().named() {
                wtr.write_record([
                    bucket.to_string(),
                    method.to_string(),
                    criterion.to_string(),
                    name.to_string(),
                    format_rate(rate),
                    rate.n.to_string(),
                ])?;
            }
        }
    }
    wtr.flush().map_err(|e| Error::io("durability report", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Cell;
    use crate::types::parse_timestamp;
    use OccupancyLevel::*;

    fn confusion(
        pred: &[OccupancyLevel],
        truth: &[OccupancyLevel],
        criterion: Criterion,
        options: ScoreOptions,
    ) -> Confusion {
        let mut c = Confusion::default();
        for (p, t) in pred.iter().zip(truth) {
            c.add(*p, *t, criterion, options);
        }
        c
    }

    #[test]
    fn hand_case() {
        let c = confusion(
            &[Empty, Empty, Available, Full],
            &[Empty, Available, Available, Full],
            Criterion::Strict,
            ScoreOptions::default(),
        );
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (2, 1, 1, 0));
        let m = c.metrics();
        assert_eq!(m.sensitivity.value(), Some(2.0 / 3.0));
        assert_eq!(m.specificity.value(), Some(1.0));
        assert_eq!(m.accuracy_critical.value(), Some(1.0));
    }

    #[test]
    fn all_available_predictions() {
        let truth: Vec<_> = (0..30).map(|i| if i < 10 { Empty } else { Available }).collect();
        let c = confusion(&[Available; 30], &truth, Criterion::Strict, ScoreOptions::default());
        let m = c.metrics();
        assert_eq!(m.accuracy_critical.value(), Some(0.0));
        assert_eq!(m.sensitivity.value(), None);
        assert_eq!(m.specificity.value(), Some(20.0 / 30.0));
        assert_eq!(format_rate(m.sensitivity), "NA");
    }

    #[test]
    fn flexible_side_matching() {
        let strict = confusion(&[AlmostFull], &[Full], Criterion::Strict, ScoreOptions::default());
        assert_eq!((strict.tp, strict.fn_), (0, 1));
        let flex = confusion(&[AlmostFull], &[Full], Criterion::Flexible, ScoreOptions::default());
        assert_eq!(flex.tp, 1);
        let wrong_side = confusion(&[AlmostFull], &[Empty], Criterion::Flexible, ScoreOptions::default());
        assert_eq!((wrong_side.tp, wrong_side.fp), (0, 1));
        let any = ScoreOptions {
            flexible_any_side: true,
        };
        assert_eq!(confusion(&[AlmostFull], &[Empty], Criterion::Flexible, any).tp, 1);
        // a wrong-side critical prediction is a false positive under strict too
        let swapped = confusion(&[Full], &[Empty], Criterion::Strict, ScoreOptions::default());
        assert_eq!((swapped.tp, swapped.fp), (0, 1));
    }

    #[test]
    fn buckets_partition_horizon() {
        let step = Duration::minutes(15);
        let mut counts = [0; 3];
        for k in 1..=288 {
            let b = AgeBucket::of(step * k).unwrap();
            counts[AgeBucket::PARTITION.iter().position(|x| *x == b).unwrap()] += 1;
        }
        assert_eq!(counts, [96, 96, 96]);
        assert_eq!(AgeBucket::of(Duration::hours(24)), Some(AgeBucket::UpTo24h));
        assert_eq!(AgeBucket::of(Duration::minutes(24 * 60 + 15)), Some(AgeBucket::UpTo48h));
        assert_eq!(AgeBucket::of(Duration::minutes(72 * 60 + 15)), None);
        assert_eq!("48-72h".parse::<AgeBucket>().unwrap(), AgeBucket::UpTo72h);
    }

    #[test]
    fn score_excludes_unobserved_truth() {
        let t0 = parse_timestamp("2015-02-05T00:00:00Z").unwrap();
        let cells = vec![
            Cell {
                bikes: 0,
                free_slots: 20,
                observed: true,
            },
            Cell::GAP,
            Cell {
                bikes: 20,
                free_slots: 0,
                observed: true,
            },
        ];
        let mut truth = Truth::new();
        truth.insert(ResampledSeries {
            station_id: 5,
            grid_start: t0 + Duration::minutes(15),
            grid_end: t0 + Duration::minutes(60),
            cells,
        });
        let preds: Vec<PredictionRecord> = (1..=4)
            .map(|k| PredictionRecord::new(5, t0, t0 + Duration::minutes(15 * k), Empty, Method::Rf).unwrap())
            .collect();
        let report = score(&preds, &truth, ScoreOptions::default());
        let c = report.get(5, Method::Rf, Criterion::Strict, AgeBucket::All).unwrap();
        assert_eq!(c.total(), 2);
        assert_eq!(c.unobserved, 2);
        assert_eq!((c.tp, c.fp), (1, 1));
        assert_eq!(
            report.get(5, Method::Rf, Criterion::Strict, AgeBucket::UpTo24h),
            Some(c)
        );
        assert!(report
            .get(5, Method::Rf, Criterion::Strict, AgeBucket::UpTo48h)
            .is_none());

        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("station,method,criterion,age_bucket,metric,value,n\n"));
        assert!(text.contains("5,rf,strict,all,sensitivity,0.500000,2\n"));
        let mut dur = Vec::new();
        durability_report(&report, &mut dur).unwrap();
        let dur = String::from_utf8(dur).unwrap();
        assert!(dur.contains("24-48h,rf,strict,accuracy_critical,NA,0\n"));
    }
}
