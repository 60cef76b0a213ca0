use std::fmt::Write as _;
use std::path::Path;

use groupfair::data::{load_configured, synthesize, train_test_split, DatasetConfig};
use groupfair::eta;
use groupfair::frontier::{
    read_frontier, read_timings, report_file, run_frontier, timing_path, FrontierConfig, Method,
    NuGrid, Split,
};
use groupfair::matrix::argmax;
use groupfair::theory::example1_distribution;

/// Writes Example 1 draws as a CSV plus a config that reads it back.
fn example1_config(dir: &Path, n: usize) -> DatasetConfig {
    let dist = example1_distribution(0.5, &[0.6; 3], &[0.5; 3]).unwrap();
    let ds = synthesize(&dist, n, 11).unwrap();
    let mut csv = String::from("y,a1,a2,a3\n");
    for (a, y) in ds.attributes().iter().zip(ds.labels()) {
        writeln!(csv, "{y},{},{},{}", a[0], a[1], a[2]).unwrap();
    }
    std::fs::write(dir.join("ex1.csv"), csv).unwrap();
    let mut toml = String::from(
        "name = \"ex1\"\ncsv = \"ex1.csv\"\n[label]\ncolumn = \"y\"\nthreshold = 0.5\n",
    );
    for c in ["a1", "a2", "a3"] {
        writeln!(toml, "[[protected]]\ncolumn = \"{c}\"\nthreshold = 0.5").unwrap();
    }
    std::fs::write(dir.join("ex1.toml"), toml).unwrap();
    DatasetConfig::load(&dir.join("ex1.toml")).unwrap()
}

#[test]
fn plugin_frontier_tracks_the_slack() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = FrontierConfig::new(example1_config(dir.path(), 6000));
    cfg.methods = vec![Method::Plugin];
    cfg.grid = NuGrid::new(0.001, 1.0, 6).unwrap();
    let out = dir.path().join("front.csv");
    let run = run_frontier(&cfg, &out).unwrap();
    assert_eq!(run.rows.len(), 12);
    assert!(run.rows.iter().all(|r| r.is_ok()));
    let train: Vec<_> = run
        .rows
        .iter()
        .filter(|r| r.split == Split::Train)
        .collect();
    for r in &train {
        assert!(
            r.fairviol.unwrap() <= r.nu + 0.03,
            "nu {} fairviol {:?}",
            r.nu,
            r.fairviol
        );
    }
    let (tight, loose) = (train.first().unwrap(), train.last().unwrap());
    assert_eq!((tight.nu, loose.nu), (0.001, 1.0));
    assert!(tight.fairviol.unwrap() <= loose.fairviol.unwrap() + 0.02);
    // At ν = 1 no constraint is active: the row is the plain plugin error.
    let data = load_configured(&cfg.data).unwrap().dataset;
    let (train_ds, _) =
        train_test_split(&data, cfg.data.split.test_fraction, cfg.data.split.seed).unwrap();
    let model = eta::fit(&train_ds, &cfg.solver.eta_fit).unwrap();
    let wrong = model
        .predict_dataset(&train_ds)
        .unwrap()
        .iter()
        .zip(train_ds.labels())
        .filter(|(p, &y)| argmax(p) != y)
        .count();
    assert!((loose.error.unwrap() - wrong as f64 / train_ds.len() as f64).abs() < 1e-9);

    assert_eq!(read_frontier(&out).unwrap(), run.rows);
    let timings = read_timings(&timing_path(&out)).unwrap();
    assert_eq!(timings.len(), 6);
    assert!(timings.iter().all(|t| t.wall_seconds >= 0.0));
    let report = report_file(&out).unwrap();
    assert_eq!(report.summaries.len(), 2);
    assert!(report.comparisons.is_empty());
}

#[test]
fn reruns_reuse_cells_and_keep_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = FrontierConfig::new(example1_config(dir.path(), 1500));
    cfg.methods = vec![Method::Plugin, Method::Regularizer];
    cfg.grid = NuGrid::new(0.01, 0.5, 3).unwrap();
    cfg.solver.iterations = 30;
    let out = dir.path().join("front.csv");
    let first = run_frontier(&cfg, &out).unwrap();
    let bytes = std::fs::read(&out).unwrap();
    assert_eq!((first.computed, first.reused), (6, 0));

    let second = run_frontier(&cfg, &out).unwrap();
    assert_eq!((second.computed, second.reused), (0, 6));
    assert_eq!(std::fs::read(&out).unwrap(), bytes);

    // A changed solver setting changes the hash of the solver cells only.
    cfg.solver.iterations = 31;
    let third = run_frontier(&cfg, &out).unwrap();
    assert_eq!((third.computed, third.reused), (3, 3));
    assert_eq!(third.rows.len(), 12);
}

#[test]
fn removed_rows_are_recomputed() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = FrontierConfig::new(example1_config(dir.path(), 1000));
    cfg.methods = vec![Method::Regularizer];
    cfg.grid = NuGrid::new(0.1, 1.0, 3).unwrap();
    let out = dir.path().join("front.csv");
    run_frontier(&cfg, &out).unwrap();
    let full = std::fs::read_to_string(&out).unwrap();
    // Simulate an interrupted run: keep the header and the first two rows.
    let partial: String = full.lines().take(3).map(|l| format!("{l}\n")).collect();
    std::fs::write(&out, partial).unwrap();
    let resumed = run_frontier(&cfg, &out).unwrap();
    assert_eq!((resumed.computed, resumed.reused), (2, 1));
    assert_eq!(std::fs::read_to_string(&out).unwrap(), full);
}
