use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_occ-forecast"))
}

fn scenario() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/four_stations.cfg")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn synth(dir: &Path) {
    let out = run(
        dir,
        &[
            "synth",
            "--config",
            scenario().to_str().unwrap(),
            "--seed",
            "5",
            "--out",
            "data",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

fn evaluate(dir: &Path, jobs: &str, out: &str) -> Output {
    run(
        dir,
        &[
            "--jobs",
            jobs,
            "evaluate",
            "--from",
            "2015-02-05",
            "--to",
            "2015-02-05",
            "--stations",
            "50,124",
            "--seed",
            "9",
            "--trees",
            "15",
            "--arima-max-order",
            "1",
            "--horizon-hours",
            "24",
            "--out",
            out,
        ],
    )
}

fn manifest(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path.join("run-manifest.json")).unwrap()).unwrap()
}

#[test]
fn synth_writes_corpus_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let data = dir.path().join("data");
    assert!(data.join("store").is_dir());
    assert!(data.join("weather.csv").is_file());
    assert!(data.join("holidays.txt").is_file());
    let m = manifest(&data);
    assert_eq!(m["command"], "synth");
    assert_eq!(m["seed"], 5);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 3);
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path());
    synth(b.path());
    let outputs = |d: &Path| manifest(&d.join("data"))["outputs"].clone();
    assert_eq!(outputs(a.path()), outputs(b.path()));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["synth", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_required_setting_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["evaluate", "--to", "2015-02-05"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--from"));
}

#[test]
fn missing_store_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &[
            "train",
            "--station",
            "1",
            "--at",
            "2015-01-01",
            "--seed",
            "1",
            "--data",
            "absent",
            "--out",
            "o",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_feed_in_strict_mode_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let feed = dir.path().join("feed.csv");
    fs::write(
        &feed,
        "timestamp,station_id,lat,lon,elevation_m,status,bikes,free_slots\n2015-01-01T00:00:00Z,7,0,0,,OPN,x,3\n",
    )
    .unwrap();
    let strict = run(
        dir.path(),
        &[
            "ingest",
            "--store",
            "s1",
            "--input",
            "feed.csv",
            "--parse-mode",
            "strict",
        ],
    );
    assert_eq!(strict.status.code(), Some(2));
    let lenient = run(dir.path(), &["ingest", "--store", "s2", "--input", "feed.csv"]);
    assert_eq!(lenient.status.code(), Some(0));
    let ledger = fs::read_to_string(dir.path().join("s2/ingest-ledger.ndjson")).unwrap();
    assert_eq!(ledger.lines().count(), 1);
}

#[test]
fn evaluate_is_identical_across_thread_counts_and_report_rescores() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let one = evaluate(dir.path(), "1", "one");
    assert_eq!(one.status.code(), Some(0), "{}", String::from_utf8_lossy(&one.stderr));
    let two = evaluate(dir.path(), "2", "two");
    assert_eq!(two.status.code(), Some(0), "{}", String::from_utf8_lossy(&two.stderr));
    for name in [
        "predictions.csv",
        "report.csv",
        "durability.csv",
        "confusion.csv",
        "skips.csv",
    ] {
        let a = fs::read(dir.path().join("one").join(name)).unwrap();
        let b = fs::read(dir.path().join("two").join(name)).unwrap();
        assert!(a == b, "{name} differs between thread counts");
    }
    let predictions = fs::read_to_string(dir.path().join("one/predictions.csv")).unwrap();
    assert_eq!(predictions.lines().count(), 1 + 2 * 3 * 96);

    let rescored = run(
        dir.path(),
        &[
            "report",
            "--predictions",
            "one/predictions.csv",
            "--store",
            "data/store",
            "--out",
            "rep",
        ],
    );
    assert_eq!(rescored.status.code(), Some(0));
    assert_eq!(
        fs::read(dir.path().join("rep/report.csv")).unwrap(),
        fs::read(dir.path().join("one/report.csv")).unwrap()
    );
    let m = manifest(&dir.path().join("one"));
    assert_eq!(m["seed"], 9);
    assert_eq!(m["config"]["trees"], "15");
}

#[test]
fn train_then_predict_round_trips_a_model() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let train = run(
        dir.path(),
        &[
            "train",
            "--station",
            "305",
            "--at",
            "2015-02-05",
            "--seed",
            "4",
            "--trees",
            "10",
            "--out",
            "m",
        ],
    );
    assert_eq!(
        train.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&train.stderr)
    );
    let predict = run(dir.path(), &["predict", "--model", "m/model.json", "--out", "p"]);
    assert_eq!(
        predict.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&predict.stderr)
    );
    let text = fs::read_to_string(dir.path().join("p/predictions.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 288);
    assert!(text
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("305,2015-02-04T23:00:00Z,2015-02-04T23:15:00Z,rf,"));
}
