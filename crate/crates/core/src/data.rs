//! Datasets: CSV ingestion driven by a TOML config, sampling from a finite
//! distribution, and seeded splits.
//!
//! A config looks like
//!
//! ```toml
//! name = "credit"
//! csv = "credit.csv"            # relative to the config file
//! missing = "drop"              # or "mean-impute"
//!
//! [label]
//! column = "default"
//! equals = "yes"                # or threshold = 0.5 (positive when value > threshold)
//!
//! [[protected]]
//! column = "age"
//! threshold = "median"          # default; a number also works
//!
//! [[protected]]
//! column = "sex"
//! equals = "female"
//!
//! [features]
//! numeric = ["income", "duration"]
//! categorical = ["purpose"]
//!
//! [split]
//! test_fraction = 0.3
//! seed = 0
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{check_len, Error, Result};
use crate::groups::AttributeSchema;
use crate::theory::FiniteDistribution;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    feature_names: Vec<String>,
    attributes: Vec<Vec<usize>>,
    labels: Vec<usize>,
    k: usize,
    schema: AttributeSchema,
    provenance: String,
}

impl Dataset {
    /// `features` is row-major `n × dim`.
    pub fn new(
        features: Vec<f64>,
        feature_names: Vec<String>,
        attributes: Vec<Vec<usize>>,
        labels: Vec<usize>,
        k: usize,
        schema: AttributeSchema,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::Data("dataset has no rows".into()));
        }
        let dim = feature_names.len();
        check_len(n * dim, features.len(), "feature matrix")?;
        check_len(n, attributes.len(), "attribute rows")?;
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite feature value".into()));
        }
        for a in &attributes {
            schema.validate(a)?;
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Label { label, classes: k });
        }
        Ok(Self {
            features,
            dim,
            feature_names,
            attributes,
            labels,
            k,
            schema,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.dim
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn attributes(&self) -> &[Vec<usize>] {
        &self.attributes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Data(format!("row {i} out of range")));
        }
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Dataset::new(
            features,
            self.feature_names.clone(),
            indices
                .iter()
                .map(|&i| self.attributes[i].clone())
                .collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.k,
            self.schema.clone(),
            self.provenance.clone(),
        )
    }

    /// `P̂(A_m = v)` for every attribute and value.
    pub fn attribute_marginals(&self) -> Vec<Vec<f64>> {
        let n = self.len() as f64;
        let mut out: Vec<Vec<f64>> = self
            .schema
            .cardinalities()
            .iter()
            .map(|&c| vec![0.0; c])
            .collect();
        for a in &self.attributes {
            for (m, &v) in a.iter().enumerate() {
                out[m][v] += 1.0 / n;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    #[default]
    Drop,
    MeanImpute,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Threshold {
    Value(f64),
    Keyword(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelConfig {
    pub column: String,
    pub equals: Option<String>,
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtectedConfig {
    pub column: String,
    pub name: Option<String>,
    pub equals: Option<String>,
    pub threshold: Option<Threshold>,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    #[serde(default)]
    pub numeric: Vec<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_test_fraction() -> f64 {
    0.3
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_fraction: default_test_fraction(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub csv: PathBuf,
    #[serde(default)]
    pub missing: MissingPolicy,
    pub label: LabelConfig,
    pub protected: Vec<ProtectedConfig>,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub split: SplitConfig,
    /// Keep a seeded random subset of this many rows after loading.
    pub subsample: Option<usize>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl DatasetConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: DatasetConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn csv_path(&self) -> PathBuf {
        self.base_dir.join(&self.csv)
    }

    fn validate(&self) -> Result<()> {
        if self.label.equals.is_some() == self.label.threshold.is_some() {
            return Err(Error::Config(
                "label needs exactly one of `equals` or `threshold`".into(),
            ));
        }
        if self.protected.is_empty() {
            return Err(Error::Config(
                "at least one protected column is required".into(),
            ));
        }
        let protected: BTreeSet<&String> = self.protected.iter().map(|p| &p.column).collect();
        let mut seen = BTreeSet::new();
        let columns = std::iter::once(&self.label.column)
            .chain(protected.iter().copied())
            .chain(&self.features.numeric)
            .chain(&self.features.categorical);
        for c in columns {
            if !seen.insert(c) {
                return Err(Error::Config(format!("column `{c}` is used twice")));
            }
        }
        // One categorical column may feed several attributes, one level each.
        let mut names = BTreeSet::new();
        let mut levels = BTreeSet::new();
        for p in &self.protected {
            let name = p.name.as_ref().unwrap_or(&p.column);
            if !names.insert(name) {
                return Err(Error::Config(format!(
                    "protected attribute `{name}` is defined twice"
                )));
            }
            if !levels.insert((&p.column, p.equals.as_ref())) {
                return Err(Error::Config(format!(
                    "protected column `{}` is used twice",
                    p.column
                )));
            }
        }
        for p in &self.protected {
            if p.equals.is_some() && p.threshold.is_some() {
                return Err(Error::Config(format!(
                    "protected column `{}` has both `equals` and `threshold`",
                    p.column
                )));
            }
            if let Some(Threshold::Keyword(k)) = &p.threshold {
                if k != "median" {
                    return Err(Error::Config(format!("unknown threshold `{k}`")));
                }
            }
        }
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            return Err(Error::Config(
                "split.test_fraction must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub dropped_rows: usize,
}

fn is_missing(field: &str) -> bool {
    matches!(field.trim(), "" | "?" | "NA" | "na" | "NaN" | "nan")
}

fn parse_number(field: &str) -> Option<f64> {
    field.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

enum Cell {
    Value(f64),
    Missing,
    Malformed,
}

fn numeric_cell(field: Option<&str>) -> Cell {
    match field {
        None => Cell::Malformed,
        Some(f) if is_missing(f) => Cell::Missing,
        Some(f) => parse_number(f).map_or(Cell::Malformed, Cell::Value),
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn load_csv_dataset(path: &Path, config: &DatasetConfig) -> Result<LoadedDataset> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| {
                Error::Config(format!("column `{name}` not found in {}", path.display()))
            })
    };
    let label_col = column(&config.label.column)?;
    let protected_cols = config
        .protected
        .iter()
        .map(|p| column(&p.column))
        .collect::<Result<Vec<_>>>()?;
    let numeric_cols = config
        .features
        .numeric
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;
    let categorical_cols = config
        .features
        .categorical
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;
    let records = reader
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()?;

    // First pass: keep rows whose required fields are usable.
    let mut kept = Vec::new();
    let mut dropped = 0usize;
    for (r, rec) in records.iter().enumerate() {
        let label_ok = match rec.get(label_col) {
            Some(f) if !is_missing(f) => config.label.equals.is_some() || parse_number(f).is_some(),
            _ => false,
        };
        let protected_ok =
            config
                .protected
                .iter()
                .zip(&protected_cols)
                .all(|(p, &c)| match rec.get(c) {
                    Some(f) if !is_missing(f) => p.equals.is_some() || parse_number(f).is_some(),
                    _ => false,
                });
        let numeric_ok = numeric_cols
            .iter()
            .all(|&c| match numeric_cell(rec.get(c)) {
                Cell::Value(_) => true,
                Cell::Missing => config.missing == MissingPolicy::MeanImpute,
                Cell::Malformed => false,
            });
        let categorical_ok = categorical_cols.iter().all(|&c| match rec.get(c) {
            Some(f) => !is_missing(f) || config.missing == MissingPolicy::MeanImpute,
            None => false,
        });
        if label_ok && protected_ok && numeric_ok && categorical_ok {
            kept.push(r);
        } else {
            dropped += 1;
        }
    }
    if dropped > 0 {
        warn!("{}: dropped {dropped} unusable rows", path.display());
    }
    if kept.is_empty() {
        return Err(Error::Data(format!(
            "{} has no usable rows",
            path.display()
        )));
    }

    let thresholds: Vec<Option<f64>> = config
        .protected
        .iter()
        .zip(&protected_cols)
        .map(|(p, &c)| match (&p.equals, &p.threshold) {
            (Some(_), _) => None,
            (None, Some(Threshold::Value(t))) => Some(*t),
            (None, _) => {
                let mut v: Vec<f64> = kept
                    .iter()
                    .filter_map(|&r| records[r].get(c).and_then(parse_number))
                    .collect();
                Some(median(&mut v))
            }
        })
        .collect();
    let means: Vec<f64> = numeric_cols
        .iter()
        .map(|&c| {
            let v: Vec<f64> = kept
                .iter()
                .filter_map(|&r| records[r].get(c).and_then(parse_number))
                .collect();
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        })
        .collect();
    let levels: Vec<Vec<String>> = categorical_cols
        .iter()
        .map(|&c| {
            let set: BTreeSet<String> = kept
                .iter()
                .filter_map(|&r| records[r].get(c))
                .filter(|f| !is_missing(f))
                .map(|f| f.trim().to_string())
                .collect();
            set.into_iter().collect()
        })
        .collect();

    let mut feature_names: Vec<String> = config.features.numeric.clone();
    for (name, lv) in config.features.categorical.iter().zip(&levels) {
        feature_names.extend(lv.iter().map(|l| format!("{name}={l}")));
    }
    let dim = feature_names.len();
    let mut features = Vec::with_capacity(kept.len() * dim);
    let mut attributes = Vec::with_capacity(kept.len());
    let mut labels = Vec::with_capacity(kept.len());
    for &r in &kept {
        let rec = &records[r];
        let label_field = rec.get(label_col).unwrap_or_default().trim();
        let positive = match (&config.label.equals, config.label.threshold) {
            (Some(e), _) => label_field == e.trim(),
            (None, Some(t)) => parse_number(label_field).is_some_and(|v| v > t),
            (None, None) => unreachable!("validated config"),
        };
        labels.push(usize::from(positive));
        let a = config
            .protected
            .iter()
            .zip(&protected_cols)
            .zip(&thresholds)
            .map(|((p, &c), t)| {
                let f = rec.get(c).unwrap_or_default().trim();
                match (&p.equals, t) {
                    (Some(e), _) => usize::from(f == e.trim()),
                    (None, Some(t)) => usize::from(parse_number(f).is_some_and(|v| v > *t)),
                    (None, None) => 0,
                }
            })
            .collect();
        attributes.push(a);
        for (&c, &mean) in numeric_cols.iter().zip(&means) {
            features.push(match numeric_cell(rec.get(c)) {
                Cell::Value(v) => v,
                _ => mean,
            });
        }
        for (&c, lv) in categorical_cols.iter().zip(&levels) {
            let f = rec.get(c).unwrap_or_default().trim();
            features.extend(lv.iter().map(|l| if l == f { 1.0 } else { 0.0 }));
        }
    }
    let names = config
        .protected
        .iter()
        .map(|p| p.name.clone().unwrap_or_else(|| p.column.clone()))
        .collect();
    let schema = AttributeSchema::new(vec![2; config.protected.len()], names)?;
    let dataset = Dataset::new(
        features,
        feature_names,
        attributes,
        labels,
        2,
        schema,
        format!("{} ({})", config.name, path.display()),
    )?;
    let dataset = match config.subsample {
        Some(m) if m < dataset.len() => {
            let mut idx: Vec<usize> = (0..dataset.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(config.split.seed));
            idx.truncate(m);
            idx.sort_unstable();
            dataset.subset(&idx)?
        }
        _ => dataset,
    };
    Ok(LoadedDataset {
        dataset,
        dropped_rows: dropped,
    })
}

/// Loads the CSV a config points to.
pub fn load_configured(config: &DatasetConfig) -> Result<LoadedDataset> {
    load_csv_dataset(&config.csv_path(), config)
}

fn draw(rng: &mut ChaCha8Rng, weights: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// i.i.d. draws of `(cell, label)`; features are the one-hot cell index.
pub fn synthesize(dist: &FiniteDistribution, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Parameter("n must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = dist.cells();
    let dim = cells.len();
    let mut features = vec![0.0; n * dim];
    let mut attributes = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = draw(&mut rng, cells.iter().map(|c| c.mass));
        let y = draw(&mut rng, cells[c].eta.iter().copied());
        features[i * dim + c] = 1.0;
        attributes.push(cells[c].attributes.clone());
        labels.push(y);
    }
    let names = cells
        .iter()
        .map(|c| {
            let v: Vec<String> = c.attributes.iter().map(|x| x.to_string()).collect();
            format!("cell={}", v.join(""))
        })
        .collect();
    Dataset::new(
        features,
        names,
        attributes,
        labels,
        dist.num_classes(),
        dist.schema().clone(),
        format!("synthetic n={n} seed={seed}"),
    )
}

/// Seeded shuffle; the test part gets `round(n · fraction)` rows.
pub fn train_test_split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "test fraction {fraction} is outside (0, 1)"
        )));
    }
    let n = dataset.len();
    let n_test = (n as f64 * fraction).round() as usize;
    if n_test == 0 || n_test == n {
        return Err(Error::Data(format!(
            "splitting {n} rows at {fraction} leaves an empty part"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (test_idx, train_idx) = idx.split_at_mut(n_test);
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    let train = dataset.subset(train_idx)?;
    let test = dataset.subset(test_idx)?;
    info!(
        "split {n} rows into {} train / {} test; attribute marginals train {:?} test {:?}",
        train.len(),
        test.len(),
        train.attribute_marginals(),
        test.attribute_marginals()
    );
    Ok((train, test))
}
