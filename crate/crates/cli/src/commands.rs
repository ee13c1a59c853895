use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use chrono::Duration;
use occ_core::config::FlatConfig;
use occ_core::eval::{
    self, arima_predictions, durability_report, fit_station_arima, forest_predictions, read_predictions, run_protocol,
    score, train_station_forest, truth_for, write_predictions, write_skips, ProtocolConfig, ScoreOptions, Truth,
};
use occ_core::features::{build_rows, PredictorSet, WeatherIndex};
use occ_core::forest::{train_forest, Dataset, ForestConfig, ForestModel, TrainMeta};
use occ_core::ingest::{parse_station_feed, resample, write_ledger, ParseMode, SnapshotStore};
use occ_core::synth::{self, Scenario};
use occ_core::types::{format_timestamp, MAX_HORIZON_HOURS};
use occ_core::{Method, StationId};

use crate::manifest::Manifest;
use crate::settings::{ensure_out_dir, load_corpus, model_settings, parse_date, parse_flag, parse_instant, Resolver};
use crate::{
    usage, Cli, Command, EvaluateArgs, FeaturesCommand, FeaturesDumpArgs, ImportanceArgs, IngestArgs, PredictArgs,
    ReportArgs, SynthArgs, TrainArgs, VerifyArgs,
};

pub fn run(cli: Cli, argv: &[String]) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global()
        .context("starting worker threads")?;
    match cli.command {
        Command::Ingest(a) => ingest(a, argv),
        Command::Verify(a) => verify(a, argv),
        Command::Synth(a) => synth_cmd(a, argv),
        Command::Features {
            command: FeaturesCommand::Dump(a),
        } => features_dump(a, argv),
        Command::Train(a) => train(a, argv),
        Command::Predict(a) => predict(a, argv),
        Command::Importance(a) => importance(a, argv),
        Command::Evaluate(a) => evaluate(a, cli.jobs, argv),
        Command::Report(a) => report(a, argv),
    }
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = out.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn finish(mut w: BufWriter<File>) -> Result<()> {
    w.flush().context("flushing output")?;
    Ok(())
}

fn ingest(a: IngestArgs, argv: &[String]) -> Result<()> {
    let mode: ParseMode = parse_flag("parse-mode", &a.parse_mode)?;
    let store = SnapshotStore::create(&a.store)?;
    let mut manifest = Manifest::new("ingest", argv);
    manifest.config.insert("parse_mode".into(), mode.to_string());
    let mut ledger = Vec::new();
    let mut snapshots = Vec::new();
    for input in &a.inputs {
        let parsed = parse_station_feed(input, mode)?;
        manifest.input(input)?;
        ledger.extend(parsed.ledger);
        snapshots.extend(parsed.records);
    }
    let summary = store.ingest(&snapshots)?;
    let mut outputs = Vec::new();
    let ledger_name = "ingest-ledger.ndjson";
    if !ledger.is_empty() {
        log::warn!("skipped {} malformed rows; see {ledger_name}", ledger.len());
        write_ledger(create(&a.store, ledger_name)?, &ledger)?;
        outputs.push(ledger_name);
    }
    println!(
        "inserted {} rows, {} duplicates ignored, {} partitions written, {} rows skipped",
        summary.inserted,
        summary.duplicates,
        summary.partitions_written,
        ledger.len()
    );
    manifest.write(&a.store, &outputs)
}

fn verify(a: VerifyArgs, argv: &[String]) -> Result<()> {
    ensure_out_dir(&a.out)?;
    let store = SnapshotStore::open(&a.store)?;
    let mut manifest = Manifest::new("verify", argv);
    manifest.input(&a.store)?;
    let report = store.verify()?;
    let mut w = csv::Writer::from_writer(create(&a.out, "verify.csv")?);
    w.write_record(["file", "line", "reason"])?;
    for issue in &report.issues {
        w.write_record([
            issue.file.display().to_string(),
            issue.line.to_string(),
            issue.reason.clone(),
        ])?;
    }
    w.flush()?;
    drop(w);
    manifest.write(&a.out, &["verify.csv"])?;
    println!(
        "{} partitions, {} rows, {} issues",
        report.partitions,
        report.rows,
        report.issues.len()
    );
    if !report.is_clean() {
        anyhow::bail!("store has {} issues; see verify.csv", report.issues.len());
    }
    Ok(())
}

fn synth_cmd(a: SynthArgs, argv: &[String]) -> Result<()> {
    let cfg = FlatConfig::load(&a.config).map_err(|e| usage(format!("scenario {}: {e}", a.config.display())))?;
    let scenario =
        Scenario::from_config(&cfg, a.seed).map_err(|e| usage(format!("scenario {}: {e}", a.config.display())))?;
    ensure_out_dir(&a.out)?;
    let mut manifest = Manifest::new("synth", argv);
    manifest.seed = Some(a.seed);
    manifest.config = cfg.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    manifest.input(&a.config)?;
    let summary = synth::generate(&scenario, a.seed, &a.out)?;
    println!(
        "{} snapshots in {} partitions, {} weather records",
        summary.snapshots, summary.partitions, summary.weather_records
    );
    manifest.write(&a.out, &["store", "weather.csv", "holidays.txt"])
}

fn features_dump(a: FeaturesDumpArgs, argv: &[String]) -> Result<()> {
    let mut r = Resolver::load(a.data.config.as_deref())?;
    ensure_out_dir(&a.out)?;
    let mut manifest = Manifest::new("features dump", argv);
    let mut outputs = vec!["rows.csv"];
    let corpus = load_corpus(&mut r, &a.data, &mut manifest, &a.out, &mut outputs)?;
    let set: PredictorSet = parse_flag("set", &a.set)?;
    let start = parse_instant("from", &a.from, &corpus.clock)?;
    let end = parse_instant("to", &a.to, &corpus.clock)?;
    let weather = WeatherIndex::new(&corpus.weather);
    let built = build_rows(
        &corpus.store,
        &weather,
        &corpus.holidays,
        &corpus.clock,
        a.station,
        start,
        end,
        set,
    )?;
    let w = create(&a.out, "rows.csv")?;
    occ_core::features::write_rows(w, &built.rows)?;
    println!(
        "{} rows, {} unobserved cells, {} dropped without weather",
        built.rows.len(),
        built.unobserved,
        built.dropped_no_weather
    );
    manifest.config = r.resolved;
    manifest.write(&a.out, &outputs)
}

fn train(a: TrainArgs, argv: &[String]) -> Result<()> {
    let mut r = Resolver::load(a.data.config.as_deref())?;
    let method: Method = parse_flag("method", &a.method)?;
    let seed: u64 = r.require("seed", a.seed)?;
    let settings = model_settings(&mut r, &a.model)?;
    ensure_out_dir(&a.out)?;
    let mut manifest = Manifest::new("train", argv);
    manifest.seed = Some(seed);
    let mut outputs = Vec::new();
    let corpus = load_corpus(&mut r, &a.data, &mut manifest, &a.out, &mut outputs)?;
    let t_build = parse_instant("at", &a.at, &corpus.clock)?;
    let inputs = corpus.inputs();
    match eval::predictor_set(method) {
        None => {
            let fit = fit_station_arima(&inputs, a.station, t_build, &settings.arima_grid)?;
            let mut w = create(&a.out, "arima.txt")?;
            writeln!(w, "station: {}", a.station)?;
            writeln!(w, "t_build: {}", format_timestamp(t_build))?;
            writeln!(w, "capacity: {}", fit.capacity)?;
            w.write_all(fit.model.report().as_bytes())?;
            finish(w)?;
            outputs.push("arima.txt");
            println!("selected {} (aic {:.3})", fit.model.spec, fit.model.aic);
        }
        Some(set) => {
            let trained = train_station_forest(&inputs, a.station, t_build, set, &settings, seed)?;
            for warning in &trained.warnings {
                log::warn!("{warning}");
            }
            trained.model.save(&a.out.join("model.json"))?;
            trained.model.write_importance(create(&a.out, "importance.csv")?)?;
            outputs.extend(["model.json", "importance.csv"]);
            println!(
                "trained {} trees on {} rows",
                trained.model.n_trees, trained.model.meta.n_rows
            );
        }
    }
    manifest.config = r.resolved;
    manifest.config.insert("method".into(), method.to_string());
    manifest.write(&a.out, &outputs)
}

fn horizon(hours: i64) -> Result<Duration> {
    if hours <= 0 || hours > MAX_HORIZON_HOURS {
        return Err(usage(format!("--horizon-hours must be in 1..={MAX_HORIZON_HOURS}")));
    }
    Ok(Duration::hours(hours))
}

fn predict(a: PredictArgs, argv: &[String]) -> Result<()> {
    let mut r = Resolver::load(a.data.config.as_deref())?;
    let horizon = horizon(a.horizon_hours)?;
    ensure_out_dir(&a.out)?;
    let mut manifest = Manifest::new("predict", argv);
    let mut outputs = vec!["predictions.csv"];
    let predictions = match (&a.model, a.station) {
        (Some(path), _) => {
            let model = ForestModel::load(path)?;
            manifest.input(path)?;
            let (Some(station), Some(t_build), Some(set)) =
                (model.meta.station_id, model.meta.t_build, model.meta.predictor_set)
            else {
                anyhow::bail!("model {} lacks station, build time or predictor set", path.display());
            };
            let corpus = load_corpus(&mut r, &a.data, &mut manifest, &a.out, &mut outputs)?;
            forest_predictions(&corpus.inputs(), &model, set, station, t_build, horizon)?
        }
        (None, Some(station)) => {
            let settings = model_settings(&mut r, &a.model_args)?;
            let corpus = load_corpus(&mut r, &a.data, &mut manifest, &a.out, &mut outputs)?;
            let at =
                a.at.as_deref()
                    .ok_or_else(|| usage("--at is required with --station"))?;
            let t_build = parse_instant("at", at, &corpus.clock)?;
            let fit = fit_station_arima(&corpus.inputs(), station, t_build, &settings.arima_grid)?;
            arima_predictions(&fit, station, t_build, horizon)?
        }
        (None, None) => return Err(usage("give --model, or --station and --at for an ARIMA forecast")),
    };
    write_predictions(create(&a.out, "predictions.csv")?, &predictions)?;
    println!("{} predictions", predictions.len());
    manifest.config = r.resolved;
    manifest.write(&a.out, &outputs)
}

fn importance(a: ImportanceArgs, argv: &[String]) -> Result<()> {
    let mut r = Resolver::load(a.data.config.as_deref())?;
    let seed: u64 = r.require("seed", a.seed)?;
    let set: PredictorSet = parse_flag("set", &a.set)?;
    let settings = model_settings(&mut r, &a.model)?;
    ensure_out_dir(&a.out)?;
    let mut manifest = Manifest::new("importance", argv);
    manifest.seed = Some(seed);
    let mut outputs = vec!["importance.csv"];
    let corpus = load_corpus(&mut r, &a.data, &mut manifest, &a.out, &mut outputs)?;
    let t_build = parse_instant("at", &a.at, &corpus.clock)?;
    let model = match a.window.as_str() {
        "sample" => train_station_forest(&corpus.inputs(), a.station, t_build, set, &settings, seed)?.model,
        "year" => {
            let weather = corpus.inputs().weather_visible_at(t_build);
            let rows = build_rows(
                &corpus.store,
                &weather,
                &corpus.holidays,
                &corpus.clock,
                a.station,
                t_build - Duration::weeks(52),
                t_build,
                set,
            )?
            .rows;
            let data = Dataset::from_rows(&rows, set)?;
            let config = ForestConfig {
                seed,
                ..settings.forest
            };
            let meta = TrainMeta {
                t_build: Some(t_build),
                station_id: Some(a.station),
                predictor_set: Some(set),
                ..TrainMeta::default()
            };
            train_forest(&data, &config, meta)?.model
        }
        other => return Err(usage(format!("--window must be sample or year, not {other:?}"))),
    };
    model.write_importance(create(&a.out, "importance.csv")?)?;
    for (name, value) in model.importance_ranking() {
        println!("{name}\t{value:.6}");
    }
    manifest.config = r.resolved;
    manifest.config.insert("window".into(), a.window.clone());
    manifest.config.insert("set".into(), set.to_string());
    manifest.write(&a.out, &outputs)
}

fn write_reports(out: &Path, report: &eval::EvalReport) -> Result<Vec<&'static str>> {
    report.write_csv(create(out, "report.csv")?)?;
    durability_report(report, create(out, "durability.csv")?)?;
    report.write_confusion_csv(create(out, "confusion.csv")?)?;
    Ok(vec!["report.csv", "durability.csv", "confusion.csv"])
}

fn evaluate(a: EvaluateArgs, jobs: usize, argv: &[String]) -> Result<()> {
    let mut r = Resolver::load(a.data.config.as_deref())?;
    let seed: u64 = r.pick("seed", a.seed, Some(0))?.unwrap_or_default();
    let from = parse_date("from", &r.require::<String>("from", a.from.clone())?)?;
    let to = parse_date("to", &r.require::<String>("to", a.to.clone())?)?;
    let methods_text = r
        .pick("methods", a.methods.clone(), Some("arima,rf,rf_extended".to_string()))?
        .unwrap_or_default();
    let methods = methods_text
        .split(',')
        .map(|m| parse_flag::<Method>("methods", m.trim()))
        .collect::<Result<Vec<_>>>()?;
    let horizon = horizon(
        r.pick("horizon_hours", a.horizon_hours, Some(MAX_HORIZON_HOURS))?
            .unwrap_or_default(),
    )?;
    let any_side = r.switch("flexible_any_side", a.flexible_any_side)?;
    let settings = model_settings(&mut r, &a.model)?;
    let out = std::path::PathBuf::from(
        r.pick(
            "out",
            a.out.as_ref().map(|p| p.display().to_string()),
            Some("out".to_string()),
        )?
        .unwrap_or_default(),
    );
    ensure_out_dir(&out)?;
    let mut manifest = Manifest::new("evaluate", argv);
    manifest.seed = Some(seed);
    let mut outputs = vec!["predictions.csv", "skips.csv"];
    let corpus = load_corpus(&mut r, &a.data, &mut manifest, &out, &mut outputs)?;
    let stations: Vec<StationId> = match r.pick("stations", a.stations.clone(), None)? {
        Some(text) => text
            .split(',')
            .map(|s| parse_flag::<StationId>("stations", s.trim()))
            .collect::<Result<_>>()?,
        None => corpus.store.stations()?,
    };
    let mut config = ProtocolConfig::new(stations.clone(), from, to, seed);
    config.methods = methods;
    config.settings = settings;
    config.horizon = horizon;
    config.jobs = jobs;
    let output = run_protocol(&corpus.inputs(), &config)?;
    for w in &output.warnings {
        log::warn!("{w}");
    }
    write_predictions(create(&out, "predictions.csv")?, &output.predictions)?;
    write_skips(create(&out, "skips.csv")?, &output.skips)?;

    let first = corpus.clock.local_midnight(from);
    let last = corpus.clock.local_midnight(to);
    let truth = truth_for(&corpus.store, &stations, first, last, horizon)?;
    let report = score(
        &output.predictions,
        &truth,
        ScoreOptions {
            flexible_any_side: any_side,
        },
    );
    outputs.extend(write_reports(&out, &report)?);
    println!(
        "{} predictions, {} skipped builds; reports in {}",
        output.predictions.len(),
        output.skips.len(),
        out.display()
    );
    manifest.config = r.resolved;
    manifest.write(&out, &outputs)
}

fn report(a: ReportArgs, argv: &[String]) -> Result<()> {
    ensure_out_dir(&a.out)?;
    let mut manifest = Manifest::new("report", argv);
    manifest.input(&a.predictions)?;
    manifest.input(&a.store)?;
    manifest
        .config
        .insert("flexible_any_side".into(), a.flexible_any_side.to_string());
    let text = File::open(&a.predictions).with_context(|| format!("opening {}", a.predictions.display()))?;
    let predictions = read_predictions(std::io::BufReader::new(text), &a.predictions.display().to_string())?;
    let store = SnapshotStore::open(&a.store)?;
    let mut stations: Vec<StationId> = predictions.iter().map(|p| p.station_id).collect();
    stations.sort_unstable();
    stations.dedup();
    let mut truth = Truth::new();
    if let (Some(start), Some(end)) = (
        predictions.iter().map(|p| p.target_time).min(),
        predictions.iter().map(|p| p.target_time).max(),
    ) {
        for &s in &stations {
            truth.insert(resample(&store, s, start, end + occ_core::types::grid_step())?);
        }
    }
    let report = score(
        &predictions,
        &truth,
        ScoreOptions {
            flexible_any_side: a.flexible_any_side,
        },
    );
    let outputs = write_reports(&a.out, &report)?;
    println!("scored {} predictions", predictions.len());
    manifest.write(&a.out, &outputs)
}
