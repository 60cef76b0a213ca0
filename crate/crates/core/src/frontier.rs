//! Fairness-frontier sweeps over a slack grid and their summaries.
//!
//! Every `(method, grid point)` cell trains on the train split and is scored
//! on both splits. Cells are keyed by a hash of everything that determines
//! their result, so an interrupted sweep picks up where it stopped. Wall
//! times go to a sidecar `<out>.timing.csv` and the frontier file itself is
//! rewritten in canonical order at the end, which keeps it byte-stable
//! across runs.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{fit_regularizer, rho_grid, RegularizerConfig};
use crate::confusion::{hard_confusion_set, ConfusionSet};
use crate::data::{load_configured, train_test_split, Dataset, DatasetConfig};
use crate::error::{Error, Result};
use crate::groups::{enumerate_groups, GroupScheme, MembershipIndex, SchemeKind};
use crate::metrics::{
    build_dp, build_eo, eval_error, max_fairviol_dp, max_fairviol_eo, ConstraintSet, DpWeighting,
    LinearMetric, PositiveRates,
};
use crate::solver::{OracleKind, Solver, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Plugin,
    Werm,
    Regularizer,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Plugin, Method::Werm, Method::Regularizer];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Plugin => "plugin",
            Method::Werm => "werm",
            Method::Regularizer => "regularizer",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    Dp,
    Eo,
    /// Demographic parity with each group's gap scaled by its size.
    DpWeighted,
}

impl ConstraintKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConstraintKind::Dp => "dp",
            ConstraintKind::Eo => "eo",
            ConstraintKind::DpWeighted => "dp-weighted",
        }
    }

    /// Training constraints at slack `nu`.
    pub fn build(&self, scheme: &GroupScheme, train: &Dataset, nu: f64) -> Result<ConstraintSet> {
        let index = MembershipIndex::build(scheme, train.attributes())?;
        let fractions: Vec<f64> = index.stats().iter().map(|s| s.fraction).collect();
        match self {
            ConstraintKind::Dp => build_dp(scheme, &fractions, nu, DpWeighting::Uniform),
            ConstraintKind::DpWeighted => build_dp(scheme, &fractions, nu, DpWeighting::GroupSize),
            ConstraintKind::Eo => build_eo(
                scheme,
                nu,
                &PositiveRates::from_labels(train.labels(), &index)?,
            ),
        }
    }

    /// Largest violation of the matching unslackened constraint.
    pub fn fairviol(&self, set: &ConfusionSet, fractions: &[f64]) -> Result<f64> {
        match self {
            ConstraintKind::Dp => max_fairviol_dp(set, None),
            ConstraintKind::DpWeighted => max_fairviol_dp(set, Some(fractions)),
            ConstraintKind::Eo => max_fairviol_eo(set),
        }
    }
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConstraintKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dp" => Ok(ConstraintKind::Dp),
            "eo" => Ok(ConstraintKind::Eo),
            "dp-weighted" => Ok(ConstraintKind::DpWeighted),
            _ => Err(Error::Parameter(format!("unknown constraint `{s}`"))),
        }
    }
}

/// `count` log-spaced values from `lo` to `hi`, written `lo:hi:count`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuGrid {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Default for NuGrid {
    fn default() -> Self {
        Self {
            lo: 0.001,
            hi: 1.0,
            count: 20,
        }
    }
}

impl NuGrid {
    pub fn new(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) || count == 0 {
            return Err(Error::Parameter(format!(
                "grid needs 0 < lo ≤ hi and count ≥ 1, got {lo}:{hi}:{count}"
            )));
        }
        if count == 1 && lo != hi {
            return Err(Error::Parameter("a one-point grid needs lo = hi".into()));
        }
        Ok(Self { lo, hi, count })
    }

    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.lo];
        }
        let (a, b) = (self.lo.ln(), self.hi.ln());
        let last = (self.count - 1) as f64;
        (0..self.count)
            .map(|i| match i {
                0 => self.lo,
                i if i + 1 == self.count => self.hi,
                i => (a + (b - a) * i as f64 / last).exp(),
            })
            .collect()
    }
}

impl FromStr for NuGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Parameter(format!("grid `{s}` is not lo:hi:count"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let lo = parts[0].trim().parse().map_err(|_| bad())?;
        let hi = parts[1].trim().parse().map_err(|_| bad())?;
        let count = parts[2].trim().parse().map_err(|_| bad())?;
        NuGrid::new(lo, hi, count)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontierConfig {
    pub data: DatasetConfig,
    pub scheme: SchemeKind,
    pub constraint: ConstraintKind,
    pub methods: Vec<Method>,
    pub grid: NuGrid,
    /// Shared by both solver methods; `oracle` is set per method.
    pub solver: SolverConfig,
    pub regularizer: RegularizerConfig,
    /// Per-cell solver traces are written here when set.
    pub trace_dir: Option<PathBuf>,
}

impl FrontierConfig {
    pub fn new(data: DatasetConfig) -> Self {
        Self {
            data,
            scheme: SchemeKind::Independent,
            constraint: ConstraintKind::Dp,
            methods: Method::ALL.to_vec(),
            grid: NuGrid::default(),
            solver: SolverConfig::default(),
            regularizer: RegularizerConfig::default(),
            trace_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierRow {
    /// Constraint slack, or the penalty strength for the regularizer.
    pub nu: f64,
    pub method: Method,
    pub split: Split,
    pub error: Option<f64>,
    pub fairviol: Option<f64>,
    pub config_hash: String,
    pub status: String,
}

impl FrontierRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub nu: f64,
    pub method: Method,
    pub config_hash: String,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontierRun {
    pub rows: Vec<FrontierRow>,
    pub timings: Vec<TimingRow>,
    pub computed: usize,
    pub reused: usize,
}

/// Path of the wall-time sidecar for a frontier file.
pub fn timing_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".timing.csv");
    out.with_file_name(name)
}

#[derive(Debug, Clone)]
struct GridCell {
    order: (Method, usize),
    method: Method,
    param: f64,
    hash: String,
}

fn fingerprint(cfg: &FrontierConfig) -> Result<String> {
    let bytes = std::fs::read(cfg.data.csv_path())?;
    let d = &cfg.data;
    let mut text = String::new();
    let _ = write!(
        text,
        "data={};name={};missing={:?};label={:?};protected={:?};features={:?};split={:?};subsample={:?};",
        hex::encode(Sha256::digest(&bytes)),
        d.name,
        d.missing,
        d.label,
        d.protected,
        d.features,
        d.split,
        d.subsample
    );
    let _ = write!(text, "scheme={};constraint={};", cfg.scheme, cfg.constraint);
    Ok(text)
}

fn cell_hash(base: &str, method: Method, param: f64, cfg: &FrontierConfig) -> String {
    let mut text = format!("{base}method={method};param={:016x};", param.to_bits());
    match method {
        Method::Plugin | Method::Werm => {
            let s = &cfg.solver;
            let _ = write!(
                text,
                "T={};B={:016x};eps={:016x};step={:?};dual={:?};seed={};eta={:?};surrogate={:?};split={:?}",
                s.iterations,
                s.bound.to_bits(),
                s.buffer.to_bits(),
                s.step,
                s.dual,
                s.seed,
                s.eta_fit,
                s.surrogate,
                s.plugin_split
            );
        }
        Method::Regularizer => {
            let _ = write!(text, "regularizer={:?}", cfg.regularizer);
        }
    }
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

fn grid_cells(cfg: &FrontierConfig, num_attributes: usize) -> Result<Vec<GridCell>> {
    let base = fingerprint(cfg)?;
    let nus = cfg.grid.values();
    let rhos = rho_grid(num_attributes, cfg.grid.count);
    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();
    let mut cells = Vec::new();
    for method in methods {
        let params = if method == Method::Regularizer {
            &rhos
        } else {
            &nus
        };
        for (i, &param) in params.iter().enumerate() {
            cells.push(GridCell {
                order: (method, i),
                method,
                param,
                hash: cell_hash(&base, method, param, cfg),
            });
        }
    }
    Ok(cells)
}

struct Splits {
    train: Dataset,
    test: Dataset,
    scheme: GroupScheme,
}

struct Scored {
    train: (f64, f64),
    test: (f64, f64),
    seconds: f64,
}

fn score(
    preds: &[usize],
    ds: &Dataset,
    scheme: &GroupScheme,
    kind: ConstraintKind,
) -> Result<(f64, f64)> {
    let index = MembershipIndex::build(scheme, ds.attributes())?;
    let set = hard_confusion_set(ds.labels(), preds, &index, ds.num_classes())?;
    score_set(&set, &index, kind)
}

fn score_set(
    set: &ConfusionSet,
    index: &MembershipIndex,
    kind: ConstraintKind,
) -> Result<(f64, f64)> {
    let fractions: Vec<f64> = index.stats().iter().map(|s| s.fraction).collect();
    let error = eval_error(
        &LinearMetric::zero_one(set.overall.num_classes()),
        &set.overall,
    )?;
    Ok((error, kind.fairviol(set, &fractions)?))
}

fn run_cell(cell: &GridCell, cfg: &FrontierConfig, splits: &Splits) -> Result<Scored> {
    let Splits {
        train,
        test,
        scheme,
    } = splits;
    match cell.method {
        Method::Plugin | Method::Werm => {
            let oracle = if cell.method == Method::Plugin {
                OracleKind::Plugin
            } else {
                OracleKind::Werm
            };
            let started = Instant::now();
            let constraints = cfg.constraint.build(scheme, train, cell.param)?;
            let solver_cfg = SolverConfig {
                oracle,
                ..cfg.solver.clone()
            };
            let mut solver =
                Solver::new(train, LinearMetric::zero_one(2), constraints, solver_cfg)?;
            let out = solver.run()?;
            let seconds = started.elapsed().as_secs_f64();
            if let Some(dir) = &cfg.trace_dir {
                std::fs::create_dir_all(dir)?;
                out.trace.save_csv(
                    &dir.join(format!("trace_{}_{:02}.csv", cell.method, cell.order.1)),
                )?;
            }
            let train_index = MembershipIndex::build(scheme, train.attributes())?;
            let test_index = MembershipIndex::build(scheme, test.attributes())?;
            Ok(Scored {
                train: score_set(&out.train_confusions, &train_index, cfg.constraint)?,
                test: score_set(
                    &out.ensemble.confusions(test, scheme)?,
                    &test_index,
                    cfg.constraint,
                )?,
                seconds,
            })
        }
        Method::Regularizer => {
            let started = Instant::now();
            let model = fit_regularizer(train, scheme, cell.param, &cfg.regularizer)?;
            let seconds = started.elapsed().as_secs_f64();
            Ok(Scored {
                train: score(
                    &model.predict_dataset(train)?,
                    train,
                    scheme,
                    cfg.constraint,
                )?,
                test: score(&model.predict_dataset(test)?, test, scheme, cfg.constraint)?,
                seconds,
            })
        }
    }
}

fn cell_rows(cell: &GridCell, result: &Result<Scored>) -> ([FrontierRow; 2], Option<TimingRow>) {
    let row = |split, values: Option<(f64, f64)>, status: String| FrontierRow {
        nu: cell.param,
        method: cell.method,
        split,
        error: values.map(|v| v.0),
        fairviol: values.map(|v| v.1),
        config_hash: cell.hash.clone(),
        status,
    };
    match result {
        Ok(s) => (
            [
                row(Split::Train, Some(s.train), "ok".into()),
                row(Split::Test, Some(s.test), "ok".into()),
            ],
            Some(TimingRow {
                nu: cell.param,
                method: cell.method,
                config_hash: cell.hash.clone(),
                wall_seconds: s.seconds,
            }),
        ),
        Err(e) => {
            let status = format!("error: {e}");
            (
                [
                    row(Split::Train, None, status.clone()),
                    row(Split::Test, None, status),
                ],
                None,
            )
        }
    }
}

pub fn read_frontier(path: &Path) -> Result<Vec<FrontierRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn read_timings(path: &Path) -> Result<Vec<TimingRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(BufWriter::new(File::create(&tmp)?));
        w.write_record(header)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

const FRONTIER_HEADER: [&str; 7] = [
    "nu",
    "method",
    "split",
    "error",
    "fairviol",
    "config_hash",
    "status",
];
const TIMING_HEADER: [&str; 4] = ["nu", "method", "config_hash", "wall_seconds"];

/// Appends finished cells to the frontier file as they complete.
struct Appender {
    frontier: csv::Writer<File>,
    timing: csv::Writer<File>,
}

impl Appender {
    fn open(out: &Path) -> Result<Self> {
        let open = |path: &Path, header: &[&str]| -> Result<csv::Writer<File>> {
            let fresh = std::fs::metadata(path)
                .map(|m| m.len() == 0)
                .unwrap_or(true);
            let file = OpenOptions::new().create(true).append(true).open(path)?;
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(file);
            if fresh {
                w.write_record(header)?;
                w.flush()?;
            }
            Ok(w)
        };
        Ok(Self {
            frontier: open(out, &FRONTIER_HEADER)?,
            timing: open(&timing_path(out), &TIMING_HEADER)?,
        })
    }

    fn append(&mut self, rows: &[FrontierRow], timing: Option<&TimingRow>) -> Result<()> {
        for r in rows {
            self.frontier.serialize(r)?;
        }
        self.frontier.flush()?;
        if let Some(t) = timing {
            self.timing.serialize(t)?;
            self.timing.flush()?;
        }
        Ok(())
    }
}

/// Loads the data, trains every pending cell and leaves `out` holding one
/// train and one test row per cell in method/grid order.
pub fn run_frontier(cfg: &FrontierConfig, out: &Path) -> Result<FrontierRun> {
    if cfg.methods.is_empty() {
        return Err(Error::Parameter("no methods selected".into()));
    }
    let loaded = load_configured(&cfg.data)?;
    if loaded.dropped_rows > 0 {
        info!(
            "{}: dropped {} rows while loading",
            cfg.data.name, loaded.dropped_rows
        );
    }
    let (train, test) = train_test_split(
        &loaded.dataset,
        cfg.data.split.test_fraction,
        cfg.data.split.seed,
    )?;
    let scheme = enumerate_groups(train.schema(), cfg.scheme)?;
    let cells = grid_cells(cfg, train.schema().num_attributes())?;

    let mut done: HashMap<String, Vec<FrontierRow>> = HashMap::new();
    if out.exists() && std::fs::metadata(out)?.len() > 0 {
        for row in read_frontier(out)? {
            done.entry(row.config_hash.clone()).or_default().push(row);
        }
        done.retain(|_, rows| {
            rows.retain(FrontierRow::is_ok);
            rows.iter().any(|r| r.split == Split::Train)
                && rows.iter().any(|r| r.split == Split::Test)
        });
    }
    let mut old_timings: HashMap<String, TimingRow> = HashMap::new();
    let tpath = timing_path(out);
    if tpath.exists() && std::fs::metadata(&tpath)?.len() > 0 {
        for t in read_timings(&tpath)? {
            old_timings.insert(t.config_hash.clone(), t);
        }
    }
    let pending: Vec<&GridCell> = cells
        .iter()
        .filter(|c| !done.contains_key(&c.hash))
        .collect();
    info!(
        "{}: {} cells, {} already done",
        cfg.data.name,
        cells.len(),
        cells.len() - pending.len()
    );

    let splits = Splits {
        train,
        test,
        scheme,
    };
    let appender = Mutex::new(Appender::open(out)?);
    let results: Vec<(String, [FrontierRow; 2], Option<TimingRow>)> = pending
        .par_iter()
        .map(|cell| {
            let result = run_cell(cell, cfg, &splits);
            if let Err(e) = &result {
                warn!("{} at {}: {e}", cell.method, cell.param);
            }
            let (rows, timing) = cell_rows(cell, &result);
            appender
                .lock()
                .map_err(|_| Error::Parameter("frontier writer poisoned".into()))?
                .append(&rows, timing.as_ref())?;
            Ok((cell.hash.clone(), rows, timing))
        })
        .collect::<Result<_>>()?;
    drop(appender);

    let mut fresh: HashMap<String, ([FrontierRow; 2], Option<TimingRow>)> = results
        .into_iter()
        .map(|(h, rows, t)| (h, (rows, t)))
        .collect();
    let mut rows = Vec::with_capacity(2 * cells.len());
    let mut timings = Vec::new();
    let mut ordered: BTreeMap<(Method, usize), &GridCell> = BTreeMap::new();
    for c in &cells {
        ordered.insert(c.order, c);
    }
    let reused = cells.len() - pending.len();
    for cell in ordered.values() {
        if let Some((pair, t)) = fresh.remove(&cell.hash) {
            rows.extend(pair);
            timings.extend(t);
        } else if let Some(mut old) = done.remove(&cell.hash) {
            old.sort_by_key(|r| r.split);
            old.dedup_by_key(|r| r.split);
            rows.extend(old);
            timings.extend(old_timings.remove(&cell.hash));
        }
    }
    write_rows(out, &rows, &FRONTIER_HEADER)?;
    write_rows(&tpath, &timings, &TIMING_HEADER)?;
    Ok(FrontierRun {
        rows,
        timings,
        computed: pending.len(),
        reused,
    })
}

/// Per method and split: row counts and means over the ok rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub split: Split,
    pub ok: usize,
    pub failed: usize,
    pub mean_error: Option<f64>,
    pub mean_fairviol: Option<f64>,
    pub best_error: Option<f64>,
    pub best_nu: Option<f64>,
    pub mean_wall_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub summaries: Vec<MethodSummary>,
    /// `(nu, method, split, error, fairviol)` for every ok row.
    pub points: Vec<(f64, Method, Split, f64, f64)>,
    /// Solver methods against the regularizer, when both are present.
    pub comparisons: Vec<MatchedComparison>,
}

/// Test-error tolerance for matching a solver row to regularizer rows.
pub const MATCH_TOLERANCE: f64 = 0.01;

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn report(rows: &[FrontierRow], timings: &[TimingRow]) -> Result<Report> {
    if rows.is_empty() {
        return Err(Error::Data("the frontier file has no rows".into()));
    }
    let mut groups: BTreeMap<(Method, Split), Vec<&FrontierRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.method, r.split)).or_default().push(r);
    }
    let mut summaries = Vec::new();
    for ((method, split), members) in groups {
        let ok: Vec<&FrontierRow> = members.iter().copied().filter(|r| r.is_ok()).collect();
        let errors: Vec<f64> = ok.iter().filter_map(|r| r.error).collect();
        let fairviols: Vec<f64> = ok.iter().filter_map(|r| r.fairviol).collect();
        let best = ok
            .iter()
            .filter_map(|r| r.error.map(|e| (e, r.nu)))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let walls: Vec<f64> = timings
            .iter()
            .filter(|t| t.method == method && ok.iter().any(|r| r.config_hash == t.config_hash))
            .map(|t| t.wall_seconds)
            .collect();
        summaries.push(MethodSummary {
            method,
            split,
            ok: ok.len(),
            failed: members.len() - ok.len(),
            mean_error: mean(&errors),
            mean_fairviol: mean(&fairviols),
            best_error: best.map(|b| b.0),
            best_nu: best.map(|b| b.1),
            mean_wall_seconds: mean(&walls),
        });
    }
    let mut points: Vec<(f64, Method, Split, f64, f64)> = rows
        .iter()
        .filter(|r| r.is_ok())
        .filter_map(|r| Some((r.nu, r.method, r.split, r.error?, r.fairviol?)))
        .collect();
    points.sort_by(|a, b| a.1.cmp(&b.1).then(a.2.cmp(&b.2)).then(a.0.total_cmp(&b.0)));
    let has = |m: Method| rows.iter().any(|r| r.method == m);
    let comparisons = if has(Method::Regularizer) {
        [Method::Plugin, Method::Werm]
            .into_iter()
            .filter(|&m| has(m))
            .map(|m| matched_error_comparison(rows, m, MATCH_TOLERANCE))
            .collect()
    } else {
        Vec::new()
    };
    Ok(Report {
        summaries,
        points,
        comparisons,
    })
}

/// Test-split comparison of one method against the regularizer.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedComparison {
    pub method: Method,
    /// Ok test rows of `method`.
    pub points: usize,
    /// Of those, rows with at least one regularizer row within the error tolerance.
    pub matched: usize,
    /// Matched rows whose fairviol is strictly below every such regularizer row.
    pub wins: usize,
}

/// For every ok test row of `method`, collects the regularizer test rows
/// whose error is within `tolerance` and counts a win when the row's
/// fairviol is strictly below the smallest of theirs.
pub fn matched_error_comparison(
    rows: &[FrontierRow],
    method: Method,
    tolerance: f64,
) -> MatchedComparison {
    let test = |m: Method| {
        rows.iter()
            .filter(move |r| r.method == m && r.split == Split::Test && r.is_ok())
            .filter_map(|r| Some((r.error?, r.fairviol?)))
    };
    let baseline: Vec<(f64, f64)> = test(Method::Regularizer).collect();
    let mut out = MatchedComparison {
        method,
        points: 0,
        matched: 0,
        wins: 0,
    };
    for (err, viol) in test(method) {
        out.points += 1;
        let best = baseline
            .iter()
            .filter(|(e, _)| (e - err).abs() <= tolerance)
            .map(|&(_, v)| v)
            .min_by(f64::total_cmp);
        if let Some(best) = best {
            out.matched += 1;
            if viol < best {
                out.wins += 1;
            }
        }
    }
    out
}

/// Reads `path` and its timing sidecar, if any.
pub fn report_file(path: &Path) -> Result<Report> {
    let rows = read_frontier(path)?;
    let tpath = timing_path(path);
    let timings = if tpath.exists() {
        read_timings(&tpath)?
    } else {
        Vec::new()
    };
    report(&rows, &timings)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

impl Report {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<12} {:<6} {:>4} {:>6} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "method",
            "split",
            "ok",
            "failed",
            "mean_err",
            "mean_viol",
            "best_err",
            "best_nu",
            "mean_time"
        );
        for m in &self.summaries {
            let split = match m.split {
                Split::Train => "train",
                Split::Test => "test",
            };
            let _ = writeln!(
                s,
                "{:<12} {:<6} {:>4} {:>6} {:>10} {:>10} {:>10} {:>10} {:>10}",
                m.method.as_str(),
                split,
                m.ok,
                m.failed,
                cell(m.mean_error),
                cell(m.mean_fairviol),
                cell(m.best_error),
                m.best_nu
                    .map_or_else(|| "-".to_string(), |x| format!("{x:.4e}")),
                cell(m.mean_wall_seconds),
            );
        }
        for c in &self.comparisons {
            let _ = writeln!(
                s,
                "{} vs regularizer at test error within {MATCH_TOLERANCE}: lower fairviol on {}/{} points ({} matched)",
                c.method, c.wins, c.points, c.matched
            );
        }
        s
    }

    /// Long format: one `(method, split, nu, measure, value)` line per number.
    pub fn write_long_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "split", "nu", "measure", "value"])?;
        for &(nu, method, split, error, fairviol) in &self.points {
            let split = match split {
                Split::Train => "train",
                Split::Test => "test",
            };
            for (measure, value) in [("error", error), ("fairviol", fairviol)] {
                w.write_record([
                    method.as_str(),
                    split,
                    &nu.to_string(),
                    measure,
                    &value.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
