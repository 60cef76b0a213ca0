//! Logistic regression with a squared group-rate penalty: the loss is the mean
//! logistic loss plus `ρ Σ_g (mean_{i∈g} σ_i − mean_i σ_i)²`.

use std::collections::BTreeMap;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{check_len, Error, Result};
use crate::groups::GroupScheme;
use crate::softmax::{Design, FeatureMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizerConfig {
    /// First trial step of the backtracking line search.
    pub learning_rate: f64,
    pub iterations: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            iterations: 2000,
            l2: 1e-4,
            seed: 0,
        }
    }
}

/// `count` log-spaced penalties from `0.01/M` to `1000/M`.
pub fn rho_grid(num_attributes: usize, count: usize) -> Vec<f64> {
    let m = num_attributes.max(1) as f64;
    let (lo, hi) = ((0.01 / m).ln(), (1000.0 / m).ln());
    match count {
        0 => Vec::new(),
        1 => vec![lo.exp()],
        _ => (0..count)
            .map(|i| (lo + (hi - lo) * i as f64 / (count - 1) as f64).exp())
            .collect(),
    }
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^s)` without overflow.
fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

/// The penalized objective over a fixed design, with the rows grouped by
/// attribute cell so the penalty costs one pass over cells.
#[derive(Debug, Clone)]
pub struct RegularizerObjective {
    design: Design,
    labels: Vec<f64>,
    cell_of: Vec<usize>,
    /// Penalized groups containing each cell.
    cell_groups: Vec<Vec<usize>>,
    group_sizes: Vec<f64>,
    rho: f64,
    l2: f64,
}

impl RegularizerObjective {
    pub fn new(
        ds: &Dataset,
        map: &FeatureMap,
        scheme: &GroupScheme,
        rho: f64,
        l2: f64,
    ) -> Result<Self> {
        if ds.num_classes() != 2 {
            return Err(Error::Parameter(format!(
                "the regularizer needs binary labels, got {} classes",
                ds.num_classes()
            )));
        }
        if ds.is_empty() {
            return Err(Error::Data("no rows to fit".into()));
        }
        if !(rho >= 0.0 && rho.is_finite()) || !(l2 >= 0.0) {
            return Err(Error::Parameter(format!(
                "invalid penalty ρ={rho}, l2={l2}"
            )));
        }
        if scheme.schema() != ds.schema() {
            return Err(Error::Schema(
                "scheme and data use different schemas".into(),
            ));
        }
        let mut cells: BTreeMap<&[usize], usize> = BTreeMap::new();
        let cell_of: Vec<usize> = ds
            .attributes()
            .iter()
            .map(|a| {
                let next = cells.len();
                *cells.entry(a.as_slice()).or_insert(next)
            })
            .collect();
        let mut group_sizes = vec![0.0; scheme.len()];
        let mut cell_counts = vec![0.0; cells.len()];
        for &c in &cell_of {
            cell_counts[c] += 1.0;
        }
        let mut raw_groups = vec![Vec::new(); cells.len()];
        for (a, &c) in &cells {
            for g in scheme.groups_containing(a) {
                if !scheme.groups()[g].is_population() {
                    group_sizes[g] += cell_counts[c];
                    raw_groups[c].push(g);
                }
            }
        }
        let empty = scheme
            .groups()
            .iter()
            .zip(&group_sizes)
            .filter(|(g, n)| !g.is_population() && **n == 0.0)
            .count();
        if empty > 0 {
            warn!("{empty} empty groups dropped from the penalty");
        }
        Ok(Self {
            design: map.design(ds)?,
            labels: ds.labels().iter().map(|&y| y as f64).collect(),
            cell_of,
            cell_groups: raw_groups,
            group_sizes,
            rho,
            l2,
        })
    }

    pub fn num_params(&self) -> usize {
        self.design.cols()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    fn probabilities(&self, w: &[f64]) -> Vec<f64> {
        (0..self.design.rows())
            .map(|i| sigmoid(dot(self.design.row(i), w)))
            .collect()
    }

    /// Per-group mean probabilities (NaN for groups that are not penalized)
    /// and the population mean.
    fn group_means(&self, sigma: &[f64]) -> (Vec<f64>, f64) {
        let mut cell_sums = vec![0.0; self.cell_groups.len()];
        for (&c, s) in self.cell_of.iter().zip(sigma) {
            cell_sums[c] += s;
        }
        let mut sums = vec![0.0; self.group_sizes.len()];
        for (c, groups) in self.cell_groups.iter().enumerate() {
            for &g in groups {
                sums[g] += cell_sums[c];
            }
        }
        let means = sums
            .iter()
            .zip(&self.group_sizes)
            .map(|(s, n)| if *n > 0.0 { s / n } else { f64::NAN })
            .collect();
        (means, sigma.iter().sum::<f64>() / sigma.len() as f64)
    }

    /// `ρ Σ_g (m_g − m)²` at the given probabilities.
    pub fn penalty_at(&self, sigma: &[f64]) -> f64 {
        let (means, m) = self.group_means(sigma);
        self.rho
            * means
                .iter()
                .filter(|v| !v.is_nan())
                .map(|v| (v - m).powi(2))
                .sum::<f64>()
    }

    pub fn evaluate(&self, w: &[f64], grad: &mut [f64]) -> Result<f64> {
        let p = self.num_params();
        check_len(p, w.len(), "weights")?;
        check_len(p, grad.len(), "gradient")?;
        let n = self.design.rows() as f64;
        let sigma = self.probabilities(w);
        let (means, m) = self.group_means(&sigma);
        let gaps: Vec<f64> = means
            .iter()
            .map(|v| if v.is_nan() { 0.0 } else { v - m })
            .collect();
        let total_gap: f64 = gaps.iter().sum();
        let cell_coef: Vec<f64> = self
            .cell_groups
            .iter()
            .map(|groups| {
                groups
                    .iter()
                    .map(|&g| gaps[g] / self.group_sizes[g])
                    .sum::<f64>()
            })
            .collect();
        let mut loss = 0.0;
        grad.fill(0.0);
        for i in 0..self.design.rows() {
            let x = self.design.row(i);
            let s = dot(x, w);
            loss += softplus(s) - self.labels[i] * s;
            let sg = sigma[i];
            let coef = (sg - self.labels[i]) / n
                + 2.0 * self.rho * sg * (1.0 - sg) * (cell_coef[self.cell_of[i]] - total_gap / n);
            for (g, xj) in grad.iter_mut().zip(x) {
                *g += coef * xj;
            }
        }
        loss /= n;
        loss += self.rho * gaps.iter().map(|g| g * g).sum::<f64>();
        for (gj, wj) in grad[..p - 1].iter_mut().zip(&w[..p - 1]) {
            *gj += self.l2 * wj;
            loss += 0.5 * self.l2 * wj * wj;
        }
        Ok(loss)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedModel {
    map: FeatureMap,
    weights: Vec<f64>,
    rho: f64,
}

impl RegularizedModel {
    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `P(Y = 1)` under the fitted model.
    pub fn probability(&self, z: &[f64], a: &[usize]) -> Result<f64> {
        let p = self.weights.len();
        let mut x = vec![0.0; p];
        self.map.encode(z, a, &mut x[..p - 1])?;
        x[p - 1] = 1.0;
        Ok(sigmoid(dot(&x, &self.weights)))
    }

    pub fn predict(&self, z: &[f64], a: &[usize]) -> Result<usize> {
        Ok(usize::from(self.probability(z, a)? >= 0.5))
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<usize>> {
        (0..ds.len())
            .map(|i| self.predict(ds.row(i), &ds.attributes()[i]))
            .collect()
    }
}

/// Gradient descent with Armijo backtracking from a seeded near-zero start.
pub fn fit_regularizer(
    ds: &Dataset,
    scheme: &GroupScheme,
    rho: f64,
    cfg: &RegularizerConfig,
) -> Result<RegularizedModel> {
    let map = FeatureMap::fit(ds);
    let objective = RegularizerObjective::new(ds, &map, scheme, rho, cfg.l2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w: Vec<f64> = (0..objective.num_params())
        .map(|_| rng.gen_range(-0.01..0.01))
        .collect();
    let mut grad = vec![0.0; w.len()];
    let mut scratch = vec![0.0; w.len()];
    let mut trial = vec![0.0; w.len()];
    let mut step = cfg.learning_rate;
    let mut loss = objective.evaluate(&w, &mut grad)?;
    for _ in 0..cfg.iterations {
        let norm2: f64 = grad.iter().map(|g| g * g).sum();
        if norm2 < 1e-20 {
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            for ((t, wj), g) in trial.iter_mut().zip(&w).zip(&grad) {
                *t = wj - step * g;
            }
            let next = objective.evaluate(&trial, &mut scratch)?;
            if next <= loss - 0.5 * step * norm2 {
                std::mem::swap(&mut w, &mut trial);
                std::mem::swap(&mut grad, &mut scratch);
                loss = next;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        step = (step * 2.0).min(cfg.learning_rate.max(1.0));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter(format!(
            "regularizer weights diverged at ρ={rho}"
        )));
    }
    Ok(RegularizedModel {
        map,
        weights: w,
        rho,
    })
}
