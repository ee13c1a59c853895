//! Random forest classifier with mean-decrease-in-Gini importance.
//!
//! Each tree trains on its own bootstrap sample and considers `mtry`
//! randomly drawn predictors at every split. Tree `i` draws all of its
//! randomness from stream `(seed, i)`, so serial and parallel training
//! produce the same model. Predictions are majority votes, ties going to
//! the lower occupancy level.
//!
//! Importance of a predictor is, per tree, the sum over nodes splitting on
//! it of `n_node / n_root * Δgini`, averaged over trees. It is not rescaled.

mod tree;

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use tree::{best_split, gini, train_tree, ClassCounts, Node, Split, Tree, TreeLimits, TIE_EPSILON};

use crate::error::{Error, Result};
use crate::features::{FeatureRow, PredictorSet};
use crate::level::OccupancyLevel;
use crate::rng;
use crate::types::{StationId, Timestamp};

pub const MODEL_FORMAT: &str = "occ-forest";
pub const MODEL_VERSION: u32 = 1;

/// Dense row-major training matrix with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    values: Vec<f64>,
    labels: Vec<OccupancyLevel>,
}

impl Dataset {
    pub fn new(names: Vec<String>, rows: Vec<Vec<f64>>, labels: Vec<OccupancyLevel>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        if names.is_empty() {
            return Err(Error::InvalidInput("no predictors".into()));
        }
        let mut values = Vec::with_capacity(rows.len() * names.len());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != names.len() {
                return Err(Error::InvalidInput(format!(
                    "row {i} has {} values, expected {}",
                    row.len(),
                    names.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("row {i} has non-finite value {v}")));
            }
            values.extend_from_slice(row);
        }
        Ok(Self { names, values, labels })
    }

    /// Labeled rows projected onto a predictor set.
    pub fn from_rows(rows: &[FeatureRow], set: PredictorSet) -> Result<Self> {
        let names = set.names();
        let mut matrix = Vec::with_capacity(rows.len());
        let mut labels = Vec::with_capacity(rows.len());
        for row in rows {
            let label = row
                .label
                .ok_or_else(|| Error::InvalidInput(format!("training row at {} has no label", row.timestamp)))?;
            matrix.push(row.values(names)?);
            labels.push(label);
        }
        Self::new(names.iter().map(|s| s.to_string()).collect(), matrix, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_predictors(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn value(&self, row: usize, predictor: usize) -> f64 {
        self.values[row * self.names.len() + predictor]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let p = self.names.len();
        &self.values[row * p..(row + 1) * p]
    }

    pub fn label(&self, row: usize) -> OccupancyLevel {
        self.labels[row]
    }

    pub fn labels(&self) -> &[OccupancyLevel] {
        &self.labels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` means `floor(sqrt(p))`, at least 1.
    pub mtry: Option<usize>,
    pub min_node_size: usize,
    pub max_depth: Option<usize>,
    /// Train every tree on all rows instead of a bootstrap sample.
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            mtry: None,
            min_node_size: 5,
            max_depth: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn resolved_mtry(&self, n_predictors: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| (n_predictors as f64).sqrt().floor() as usize)
            .clamp(1, n_predictors.max(1))
    }
}

/// Provenance stored alongside a model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub t_build: Option<Timestamp>,
    pub station_id: Option<StationId>,
    pub predictor_set: Option<PredictorSet>,
    pub n_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub format: String,
    pub version: u32,
    pub predictor_names: Vec<String>,
    pub n_trees: usize,
    pub mtry: usize,
    pub limits: TreeLimits,
    pub bootstrap: bool,
    /// Mean decrease in Gini, one entry per predictor.
    pub importance: Vec<f64>,
    pub meta: TrainMeta,
    pub trees: Vec<Tree>,
}

#[derive(Debug, Clone)]
pub struct TrainedForest {
    pub model: ForestModel,
    pub warnings: Vec<String>,
}

/// Row indices for tree `tree`: `n` draws with replacement from its stream.
pub fn bootstrap_sample<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

fn tree_stream(seed: u64, tree: usize) -> rng::StreamRng {
    rng::stream(seed, &[rng::STREAM_FOREST, tree as u64])
}

/// The rows tree `tree` was trained on, as drawn during training.
pub fn tree_rows(config: &ForestConfig, tree: usize, n: usize) -> Vec<usize> {
    if config.bootstrap {
        bootstrap_sample(&mut tree_stream(config.seed, tree), n)
    } else {
        (0..n).collect()
    }
}

pub fn train_forest(data: &Dataset, config: &ForestConfig, mut meta: TrainMeta) -> Result<TrainedForest> {
    const MIN_ROWS: usize = 10;
    if data.len() < MIN_ROWS {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_ROWS} training rows, got {}",
            data.len()
        )));
    }
    if config.n_trees == 0 {
        return Err(Error::InvalidInput("n_trees must be at least 1".into()));
    }
    let mut warnings = Vec::new();
    let distinct = data
        .labels()
        .iter()
        .map(|l| l.index())
        .collect::<std::collections::BTreeSet<_>>();
    if distinct.len() < 2 {
        warnings.push(format!(
            "training rows have a single label ({}); model predicts it everywhere",
            data.label(0)
        ));
    }

    let p = data.n_predictors();
    let mtry = config.resolved_mtry(p);
    let limits = TreeLimits {
        min_node_size: config.min_node_size,
        max_depth: config.max_depth,
    };
    let n = data.len();
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = tree_stream(config.seed, i);
            let rows = if config.bootstrap {
                bootstrap_sample(&mut rng, n)
            } else {
                (0..n).collect()
            };
            train_tree(data, &rows, mtry, &mut rng, limits)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut importance = vec![0.0; p];
    for tree in &trees {
        for (total, v) in importance.iter_mut().zip(tree.importance(p)) {
            *total += v;
        }
    }
    for v in &mut importance {
        *v /= trees.len() as f64;
    }

    meta.seed = config.seed;
    meta.n_rows = n;
    Ok(TrainedForest {
        model: ForestModel {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            predictor_names: data.names().to_vec(),
            n_trees: trees.len(),
            mtry,
            limits,
            bootstrap: config.bootstrap,
            importance,
            meta,
            trees,
        },
        warnings,
    })
}

impl ForestModel {
    /// Vote counts per level for a row of predictor values in model order.
    pub fn votes(&self, values: &[f64]) -> ClassCounts {
        let mut votes = [0u32; 5];
        for tree in &self.trees {
            votes[tree.predict(values).index()] += 1;
        }
        votes
    }

    pub fn predict_values(&self, values: &[f64]) -> Result<OccupancyLevel> {
        if values.len() != self.predictor_names.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} predictor values, got {}",
                self.predictor_names.len(),
                values.len()
            )));
        }
        Ok(OccupancyLevel::argmax(&self.votes(values)))
    }

    pub fn predict(&self, row: &FeatureRow) -> Result<OccupancyLevel> {
        self.predict_values(&row.values(&self.predictor_names)?)
    }

    pub fn predict_batch(&self, rows: &[FeatureRow]) -> Result<Vec<OccupancyLevel>> {
        rows.par_iter().map(|r| self.predict(r)).collect()
    }

    /// `(predictor, importance)` sorted by decreasing importance; equal
    /// values keep predictor order.
    pub fn importance_ranking(&self) -> Vec<(String, f64)> {
        let mut ranked: Vec<_> = self
            .predictor_names
            .iter()
            .cloned()
            .zip(self.importance.iter().copied())
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        ranked
    }

    pub fn write_importance<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["predictor", "importance"])?;
        for (name, value) in self.importance_ranking() {
            wtr.write_record([name, value.to_string()])?;
        }
        wtr.flush().map_err(|e| Error::io("<importance>", e))?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        if model.format != MODEL_FORMAT || model.version != MODEL_VERSION {
            return Err(Error::Parse(format!(
                "unsupported model format {} v{}",
                model.format, model.version
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::PREDICTOR_HUMIDITY;
    use crate::types::parse_timestamp;
    use OccupancyLevel::*;

    fn toy(n: usize) -> Dataset {
        let x: Vec<Vec<f64>> = (0..n).map(|i| vec![(i % 24) as f64, (i % 7) as f64]).collect();
        let y: Vec<_> = (0..n)
            .map(|i| match i % 24 {
                0..=5 => Empty,
                6..=11 => AlmostEmpty,
                12..=17 => Available,
                _ => Full,
            })
            .collect();
        Dataset::new(vec!["hour".into(), "dow".into()], x, y).unwrap()
    }

    #[test]
    fn single_unbootstrapped_tree_equals_train_tree() {
        let data = toy(48);
        let config = ForestConfig {
            n_trees: 1,
            mtry: Some(2),
            bootstrap: false,
            ..ForestConfig::with_seed(3)
        };
        let forest = train_forest(&data, &config, TrainMeta::default()).unwrap().model;
        let rows: Vec<usize> = (0..48).collect();
        let mut rng = tree_stream(3, 0);
        let tree = train_tree(&data, &rows, 2, &mut rng, TreeLimits::default()).unwrap();
        assert_eq!(forest.trees, vec![tree]);
    }

    #[test]
    fn same_seed_same_model() {
        let data = toy(120);
        let config = ForestConfig {
            n_trees: 25,
            ..ForestConfig::with_seed(11)
        };
        let a = train_forest(&data, &config, TrainMeta::default()).unwrap().model;
        let b = train_forest(&data, &config, TrainMeta::default()).unwrap().model;
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let c = train_forest(&data, &ForestConfig { seed: 12, ..config }, TrainMeta::default())
            .unwrap()
            .model;
        assert_ne!(a.trees, c.trees);
    }

    #[test]
    fn separable_data_is_fit_exactly() {
        let data = toy(96);
        let config = ForestConfig {
            n_trees: 1,
            mtry: Some(2),
            min_node_size: 1,
            bootstrap: false,
            ..ForestConfig::default()
        };
        let model = train_forest(&data, &config, TrainMeta::default()).unwrap().model;
        for i in 0..data.len() {
            assert_eq!(model.predict_values(data.row(i)).unwrap(), data.label(i));
        }
    }

    #[test]
    fn votes_sum_to_tree_count_and_ties_go_low() {
        let data = toy(60);
        let model = train_forest(
            &data,
            &ForestConfig {
                n_trees: 7,
                ..ForestConfig::with_seed(1)
            },
            TrainMeta::default(),
        )
        .unwrap()
        .model;
        for i in 0..data.len() {
            assert_eq!(model.votes(data.row(i)).iter().sum::<u32>(), 7);
        }

        let leaf = |class| Tree {
            nodes: vec![Node::Leaf { class, counts: [0; 5] }],
        };
        let mut m = model.clone();
        m.trees = vec![leaf(Empty), leaf(Empty), leaf(Full)];
        assert_eq!(m.predict_values(&[0.0, 0.0]).unwrap(), Empty);
        m.trees = vec![leaf(Full), leaf(Empty)];
        assert_eq!(m.predict_values(&[0.0, 0.0]).unwrap(), Empty);
        m.trees = vec![leaf(AlmostFull)];
        assert_eq!(m.predict_values(&[99.0, 3.0]).unwrap(), AlmostFull);
    }

    #[test]
    fn importance_properties() {
        let data = toy(200);
        let model = train_forest(
            &data,
            &ForestConfig {
                n_trees: 30,
                mtry: Some(2),
                ..ForestConfig::with_seed(5)
            },
            TrainMeta::default(),
        )
        .unwrap()
        .model;
        assert_eq!(model.importance.len(), 2);
        assert!(model.importance.iter().all(|&v| v >= 0.0));
        // labels depend only on the hour
        assert_eq!(model.importance_ranking()[0].0, "hour");
        let per_tree: f64 = model
            .trees
            .iter()
            .map(|t| t.importance(2).iter().sum::<f64>())
            .sum::<f64>()
            / 30.0;
        assert!((per_tree - model.importance.iter().sum::<f64>()).abs() < 1e-12);

        let mut out = Vec::new();
        model.write_importance(&mut out).unwrap();
        assert!(String::from_utf8(out)
            .unwrap()
            .starts_with("predictor,importance\nhour,"));
    }

    #[test]
    fn unused_predictor_has_zero_importance() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 2) as f64, 3.0]).collect();
        let y: Vec<_> = (0..40).map(|i| if i % 2 == 0 { Empty } else { Full }).collect();
        let data = Dataset::new(vec!["a".into(), "constant".into()], x, y).unwrap();
        let model = train_forest(
            &data,
            &ForestConfig {
                n_trees: 10,
                mtry: Some(2),
                ..ForestConfig::default()
            },
            TrainMeta::default(),
        )
        .unwrap()
        .model;
        assert_eq!(model.importance[1], 0.0);
        assert!(model.importance[0] > 0.0);
    }

    #[test]
    fn out_of_bag_rows_exist() {
        let config = ForestConfig {
            n_trees: 50,
            ..ForestConfig::with_seed(21)
        };
        let n = 100;
        let mut oob_share = 0.0;
        for t in 0..config.n_trees {
            let mut seen = vec![false; n];
            for r in tree_rows(&config, t, n) {
                seen[r] = true;
            }
            let oob = seen.iter().filter(|s| !**s).count();
            assert!(oob > 0, "tree {t} has no out-of-bag rows");
            oob_share += oob as f64 / n as f64;
        }
        oob_share /= config.n_trees as f64;
        assert!((oob_share - 0.368).abs() < 0.05, "mean oob share {oob_share}");
    }

    #[test]
    fn errors_and_warnings() {
        assert!(train_forest(&toy(9), &ForestConfig::default(), TrainMeta::default()).is_err());
        let data = Dataset::new(
            vec!["x".into()],
            (0..12).map(|i| vec![i as f64]).collect(),
            vec![Available; 12],
        )
        .unwrap();
        let trained = train_forest(
            &data,
            &ForestConfig {
                n_trees: 3,
                ..ForestConfig::default()
            },
            TrainMeta::default(),
        )
        .unwrap();
        assert_eq!(trained.warnings.len(), 1);
        assert_eq!(trained.model.predict_values(&[100.0]).unwrap(), Available);
    }

    #[test]
    fn missing_predictor_error_names_it() {
        let t = parse_timestamp("2015-02-05T00:00:00Z").unwrap();
        let rows: Vec<FeatureRow> = (0..20)
            .map(|i| FeatureRow {
                station_id: 1,
                timestamp: t,
                minute_of_day: i * 60,
                day_of_week: i % 7,
                is_holiday: false,
                weather: Some(crate::features::WeatherFeatures {
                    temperature_c: 10.0,
                    relative_humidity_pct: 50.0 + i as f64,
                    dew_point_c: 2.0,
                    wind_speed_kmh: 4.0,
                }),
                label: Some(if i < 10 { Empty } else { Full }),
            })
            .collect();
        let data = Dataset::from_rows(&rows, PredictorSet::RfExtended).unwrap();
        let model = train_forest(
            &data,
            &ForestConfig {
                n_trees: 5,
                ..ForestConfig::default()
            },
            TrainMeta::default(),
        )
        .unwrap()
        .model;
        let mut bare = rows[0];
        bare.weather = None;
        match model.predict(&bare) {
            Err(Error::MissingPredictor(name)) => assert_eq!(name, crate::features::PREDICTOR_TEMPERATURE),
            other => panic!("{other:?}"),
        }
        assert!(model.predict(&rows[0]).is_ok());
        assert!(model.predictor_names.iter().any(|n| n == PREDICTOR_HUMIDITY));
    }

    #[test]
    fn json_round_trip_and_version_check() {
        let model = train_forest(
            &toy(40),
            &ForestConfig {
                n_trees: 3,
                ..ForestConfig::with_seed(2)
            },
            TrainMeta::default(),
        )
        .unwrap()
        .model;
        let text = model.to_json().unwrap();
        assert_eq!(ForestModel::from_json(&text).unwrap(), model);
        let bumped = text.replacen("\"version\":1", "\"version\":99", 1);
        assert!(ForestModel::from_json(&bumped).is_err());
    }
}
