//! Multinomial logistic estimate `η̂(x) ≈ P(Y | x)` on `x = (z, a)`.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::confusion::ClassDistribution;
use crate::data::Dataset;
use crate::error::{check_len, Error, Result};
use crate::softmax::{scores, softmax_in_place, FeatureMap, SoftmaxProblem};

const MAGIC: &str = "groupfair-eta v1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            iterations: 2000,
            l2: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityModel {
    map: FeatureMap,
    /// `(dim + 1) × K`, intercepts in the last row.
    weights: Vec<f64>,
    k: usize,
}

/// The training objective of [`fit`]: mean cross-entropy plus the L2 term.
pub fn objective(ds: &Dataset, l2: f64) -> Result<(SoftmaxProblem, FeatureMap)> {
    let map = FeatureMap::fit(ds);
    let design = map.design(ds)?;
    let k = ds.num_classes();
    let mut targets = vec![0.0; ds.len() * k];
    for (i, &y) in ds.labels().iter().enumerate() {
        targets[i * k + y] = 1.0;
    }
    let weights = vec![1.0 / ds.len() as f64; ds.len()];
    Ok((
        SoftmaxProblem::new(&design, &targets, &weights, k, l2)?,
        map,
    ))
}

pub fn fit(ds: &Dataset, cfg: &FitConfig) -> Result<ProbabilityModel> {
    let k = ds.num_classes();
    if ds.len() < k {
        return Err(Error::Data(format!(
            "{} rows cannot fit {k} classes",
            ds.len()
        )));
    }
    let (problem, map) = objective(ds, cfg.l2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut theta: Vec<f64> = (0..problem.num_params())
        .map(|_| rng.gen_range(-0.01..0.01))
        .collect();
    problem.descend(&mut theta, cfg.learning_rate, cfg.iterations);
    Ok(ProbabilityModel {
        map,
        weights: theta,
        k,
    })
}

impl ProbabilityModel {
    pub fn new(map: FeatureMap, weights: Vec<f64>, k: usize) -> Result<Self> {
        check_len((map.dim() + 1) * k, weights.len(), "model weights")?;
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Parameter("model weights must be finite".into()));
        }
        Ok(Self { map, weights, k })
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn predict_proba(&self, z: &[f64], a: &[usize]) -> Result<ClassDistribution> {
        let p = self.map.dim() + 1;
        let mut x = vec![0.0; p];
        self.map.encode(z, a, &mut x[..p - 1])?;
        x[p - 1] = 1.0;
        let mut s = vec![0.0; self.k];
        scores(&x, &self.weights, self.k, &mut s);
        softmax_in_place(&mut s);
        ClassDistribution::new(s)
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<ClassDistribution>> {
        (0..ds.len())
            .map(|i| self.predict_proba(ds.row(i), &ds.attributes()[i]))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "rows {} cols {}", self.map.dim() + 1, self.k);
        let _ = writeln!(s, "raw {}", self.map.num_raw());
        let cards: Vec<String> = self
            .map
            .cardinalities()
            .iter()
            .map(|c| c.to_string())
            .collect();
        let _ = writeln!(s, "cardinalities {}", cards.join(" "));
        let _ = writeln!(s, "mean {}", join(self.map.mean()));
        let _ = writeln!(s, "scale {}", join(self.map.scale()));
        for row in self.weights.chunks(self.k) {
            let _ = writeln!(s, "{}", join(row));
        }
        s
    }

    pub fn from_text(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        let mut next = |what: &str| lines.next().ok_or_else(|| format!("missing {what}"));
        if next("header")?.trim() != MAGIC {
            return Err("not a model file".into());
        }
        let dims: Vec<&str> = next("dimensions")?.split_whitespace().collect();
        let (rows, cols) = match dims.as_slice() {
            ["rows", r, "cols", c] => (
                r.parse::<usize>().map_err(|e| e.to_string())?,
                c.parse::<usize>().map_err(|e| e.to_string())?,
            ),
            _ => return Err("malformed dimension line".into()),
        };
        let field = |line: &str, key: &str| -> std::result::Result<Vec<String>, String> {
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(format!("expected `{key}`"));
            }
            Ok(parts.map(str::to_string).collect())
        };
        let nums = |v: Vec<String>| -> std::result::Result<Vec<f64>, String> {
            v.iter()
                .map(|x| x.parse::<f64>().map_err(|e| e.to_string()))
                .collect()
        };
        let raw = field(next("raw")?, "raw")?;
        let raw: usize = raw
            .first()
            .ok_or("empty raw line")?
            .parse()
            .map_err(|e: std::num::ParseIntError| e.to_string())?;
        let cards = field(next("cardinalities")?, "cardinalities")?
            .iter()
            .map(|c| c.parse::<usize>().map_err(|e| e.to_string()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mean = nums(field(next("mean")?, "mean")?)?;
        let scale = nums(field(next("scale")?, "scale")?)?;
        let mut weights = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = nums(
                next(&format!("weight row {r}"))?
                    .split_whitespace()
                    .map(str::to_string)
                    .collect(),
            )?;
            if row.len() != cols {
                return Err(format!(
                    "weight row {r} has {} entries, expected {cols}",
                    row.len()
                ));
            }
            weights.extend(row);
        }
        let map = FeatureMap::from_parts(raw, cards, mean, scale).map_err(|e| e.to_string())?;
        if map.dim() + 1 != rows {
            return Err(format!(
                "{rows} weight rows do not match feature width {}",
                map.dim()
            ));
        }
        ProbabilityModel::new(map, weights, cols).map_err(|e| e.to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text).map_err(|message| Error::ModelFile {
            path: path.to_path_buf(),
            message,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthesize;
    use crate::groups::AttributeSchema;
    use crate::theory::example1_distribution;

    fn blobs(n: usize, seed: u64, separable: bool) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Vec::new();
        let mut attributes = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = i % 2;
            let centre = if y == 1 { 2.0 } else { -2.0 };
            let spread = if separable { 0.5 } else { 3.0 };
            features.push(centre + rng.gen_range(-spread..spread));
            features.push(rng.gen_range(-1.0..1.0));
            attributes.push(vec![rng.gen_range(0..2)]);
            labels.push(y);
        }
        Dataset::new(
            features,
            vec!["x0".into(), "x1".into()],
            attributes,
            labels,
            2,
            AttributeSchema::binary(1).unwrap(),
            "blobs",
        )
        .unwrap()
    }

    #[test]
    fn separable_data_is_fit() {
        let ds = blobs(400, 1, true);
        let model = fit(&ds, &FitConfig::default()).unwrap();
        let correct = (0..ds.len())
            .filter(|&i| {
                let p = model.predict_proba(ds.row(i), &ds.attributes()[i]).unwrap();
                usize::from(p[1] > p[0]) == ds.labels()[i]
            })
            .count();
        assert!(correct as f64 / ds.len() as f64 >= 0.99);
    }

    #[test]
    fn constant_labels_give_constant_prediction() {
        let mut ds = blobs(100, 2, false);
        ds = Dataset::new(
            ds.features().to_vec(),
            ds.feature_names().to_vec(),
            ds.attributes().to_vec(),
            vec![1; 100],
            2,
            ds.schema().clone(),
            "constant",
        )
        .unwrap();
        let model = fit(&ds, &FitConfig::default()).unwrap();
        for i in 0..10 {
            let p = model.predict_proba(ds.row(i), &ds.attributes()[i]).unwrap();
            assert!(p[1] > 0.99, "{p:?}");
        }
    }

    #[test]
    fn example1_cells_are_recovered() {
        let dist = example1_distribution(0.5, &[0.6; 3], &[0.5; 3]).unwrap();
        // 1000 rows per cell with exact label frequencies.
        let mut features = Vec::new();
        let mut attributes = Vec::new();
        let mut labels = Vec::new();
        for (c, cell) in dist.cells().iter().enumerate() {
            let positives = (cell.eta[1] * 1000.0).round() as usize;
            for r in 0..1000 {
                let mut onehot = vec![0.0; 8];
                onehot[c] = 1.0;
                features.extend(onehot);
                attributes.push(cell.attributes.clone());
                labels.push(usize::from(r < positives));
            }
        }
        let names = (0..8).map(|c| format!("c{c}")).collect();
        let ds = Dataset::new(
            features,
            names,
            attributes,
            labels,
            2,
            dist.schema().clone(),
            "cells",
        )
        .unwrap();
        let model = fit(&ds, &FitConfig::default()).unwrap();
        for (c, cell) in dist.cells().iter().enumerate() {
            let mut z = vec![0.0; 8];
            z[c] = 1.0;
            let p = model.predict_proba(&z, &cell.attributes).unwrap();
            assert!(
                (p[1] - cell.eta[1]).abs() < 0.02,
                "{:?}: {} vs {}",
                cell.attributes,
                p[1],
                cell.eta[1]
            );
        }
    }

    #[test]
    fn zero_weights_predict_uniform() {
        let ds = blobs(10, 3, true);
        let map = FeatureMap::fit(&ds);
        let model = ProbabilityModel::new(map.clone(), vec![0.0; (map.dim() + 1) * 3], 3).unwrap();
        let p = model.predict_proba(&[0.4, 0.1], &[1]).unwrap();
        for v in p.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(model.predict_proba(&[0.4], &[1]).is_err());
    }

    #[test]
    fn save_and_load_round_trip() {
        let ds = synthesize(
            &example1_distribution(0.5, &[0.6; 3], &[0.5; 3]).unwrap(),
            300,
            4,
        )
        .unwrap();
        let model = fit(
            &ds,
            &FitConfig {
                iterations: 50,
                ..FitConfig::default()
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eta.txt");
        model.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("rows 15 cols 2"));
        assert_eq!(ProbabilityModel::load(&path).unwrap(), model);
        std::fs::write(&path, text.replace("cols 2", "cols 3")).unwrap();
        assert!(matches!(
            ProbabilityModel::load(&path),
            Err(Error::ModelFile { .. })
        ));
    }

    #[test]
    fn fit_is_deterministic() {
        let ds = blobs(200, 5, false);
        let cfg = FitConfig {
            iterations: 100,
            seed: 9,
            ..FitConfig::default()
        };
        assert_eq!(fit(&ds, &cfg).unwrap(), fit(&ds, &cfg).unwrap());
    }

    #[test]
    fn loss_is_monotone_at_small_step() {
        let ds = blobs(200, 6, false);
        let (problem, _) = objective(&ds, 1e-4).unwrap();
        let mut theta = vec![0.0; problem.num_params()];
        let mut grad = vec![0.0; theta.len()];
        let mut prev = f64::INFINITY;
        for _ in 0..200 {
            let loss = problem.evaluate(&theta, &mut grad);
            assert!(loss <= prev + 1e-15);
            prev = loss;
            for (t, g) in theta.iter_mut().zip(&grad) {
                *t -= 0.01 * g;
            }
        }
    }
}
