//! Best responses to a dual vector `λ`.
//!
//! Both oracles minimize the empirical Lagrangian, which is a weighted
//! classification error with per-instance loss matrix
//! `W(x) = D + Σ_j λ_j (U_j − Σ_{g ∋ a} V_j^g / π̂_g)`.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use log::warn;

use crate::confusion::ClassDistribution;
use crate::data::Dataset;
use crate::error::{check_len, Error, Result};
use crate::eta::ProbabilityModel;
use crate::matrix::{argmax, argmin, SquareMatrix};
use crate::metrics::{ConstraintSet, LinearMetric};
use crate::softmax::{scores, DescentReport, Design, FeatureMap, SoftmaxProblem};

/// A class-probability estimate `η̂(x)`.
pub trait ProbabilityEstimate: fmt::Debug + Send + Sync {
    fn num_classes(&self) -> usize;
    fn predict_proba(&self, z: &[f64], a: &[usize]) -> Result<ClassDistribution>;
}

impl ProbabilityEstimate for ProbabilityModel {
    fn num_classes(&self) -> usize {
        ProbabilityModel::num_classes(self)
    }

    fn predict_proba(&self, z: &[f64], a: &[usize]) -> Result<ClassDistribution> {
        ProbabilityModel::predict_proba(self, z, a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightContext {
    metric: LinearMetric,
    constraints: Arc<ConstraintSet>,
    lambda: Vec<f64>,
    fractions: Vec<f64>,
}

impl WeightContext {
    /// `fractions[g]` is `π̂_g` for every group of the constraint scheme.
    pub fn new(
        metric: LinearMetric,
        constraints: impl Into<Arc<ConstraintSet>>,
        lambda: Vec<f64>,
        fractions: Vec<f64>,
        bound: f64,
    ) -> Result<Self> {
        let constraints = constraints.into();
        check_len(constraints.len(), lambda.len(), "dual vector")?;
        check_len(
            constraints.scheme().len(),
            fractions.len(),
            "group fractions",
        )?;
        check_len(
            constraints.num_classes(),
            metric.num_classes(),
            "metric classes",
        )?;
        if let Some(l) = lambda.iter().find(|l| !(**l >= 0.0 && **l <= bound)) {
            return Err(Error::Parameter(format!(
                "λ entry {l} outside [0, {bound}]"
            )));
        }
        Ok(Self {
            metric,
            constraints,
            lambda,
            fractions,
        })
    }

    pub fn metric(&self) -> &LinearMetric {
        &self.metric
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    pub fn with_lambda(&self, lambda: Vec<f64>, bound: f64) -> Result<Self> {
        Self::new(
            self.metric.clone(),
            Arc::clone(&self.constraints),
            lambda,
            self.fractions.clone(),
            bound,
        )
    }
}

/// `W(x)`; depends on `x` only through its attributes.
pub fn instance_weights(a: &[usize], ctx: &WeightContext) -> Result<SquareMatrix> {
    let scheme = ctx.constraints.scheme();
    scheme.schema().validate(a)?;
    let member = scheme.groups_containing(a);
    let mut w = ctx.metric.matrix().clone();
    for (con, &lam) in ctx.constraints.constraints().iter().zip(&ctx.lambda) {
        if lam == 0.0 {
            continue;
        }
        w.add_scaled(&con.u, lam);
        for (g, v) in &con.v {
            if member.binary_search(g).is_err() {
                continue;
            }
            let pi = ctx.fractions[*g];
            if !(pi > 0.0) {
                if v.as_slice().iter().any(|x| *x != 0.0) {
                    return Err(Error::Oracle(format!(
                        "`{}` weights group {g}, which has π̂ = 0",
                        con.label
                    )));
                }
                continue;
            }
            w.add_scaled(v, -lam / pi);
        }
    }
    Ok(w)
}

/// `W` for each distinct attribute vector in `rows`.
pub fn weight_table(
    rows: &[Vec<usize>],
    ctx: &WeightContext,
) -> Result<HashMap<Vec<usize>, SquareMatrix>> {
    let mut table = HashMap::new();
    for a in rows {
        if !table.contains_key(a) {
            table.insert(a.clone(), instance_weights(a, ctx)?);
        }
    }
    Ok(table)
}

/// `argmin_k (pᵀW)_k`.
pub fn weighted_decision(p: &[f64], w: &SquareMatrix) -> usize {
    argmin(&w.left_mul(p))
}

#[derive(Debug, Clone)]
pub struct PluginClassifier {
    eta: Arc<dyn ProbabilityEstimate>,
    ctx: Arc<WeightContext>,
    table: HashMap<Vec<usize>, SquareMatrix>,
}

impl PluginClassifier {
    pub fn estimate(&self) -> &Arc<dyn ProbabilityEstimate> {
        &self.eta
    }

    pub fn context(&self) -> &WeightContext {
        &self.ctx
    }

    fn weights_for(&self, a: &[usize]) -> Result<std::borrow::Cow<'_, SquareMatrix>> {
        match self.table.get(a) {
            Some(w) => Ok(std::borrow::Cow::Borrowed(w)),
            None => Ok(std::borrow::Cow::Owned(instance_weights(a, &self.ctx)?)),
        }
    }

    /// Decision given a precomputed `η̂(x)`.
    pub fn decide_with_eta(&self, eta: &[f64], a: &[usize]) -> Result<usize> {
        let w = self.weights_for(a)?;
        Ok(weighted_decision(eta, &w))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    map: Arc<FeatureMap>,
    theta: Vec<f64>,
    k: usize,
}

impl LinearClassifier {
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// `argmax` of the scores of an encoded row (intercept included).
    pub fn decide_encoded(&self, x: &[f64]) -> usize {
        let mut s = vec![0.0; self.k];
        scores(x, &self.theta, self.k, &mut s);
        argmax(&s)
    }
}

#[derive(Debug, Clone)]
pub enum DeterministicClassifier {
    Plugin(PluginClassifier),
    Linear(LinearClassifier),
}

impl DeterministicClassifier {
    pub fn predict(&self, z: &[f64], a: &[usize]) -> Result<usize> {
        match self {
            DeterministicClassifier::Plugin(p) => {
                let eta = p.eta.predict_proba(z, a)?;
                p.decide_with_eta(&eta, a)
            }
            DeterministicClassifier::Linear(l) => {
                let p = l.map.dim() + 1;
                let mut x = vec![0.0; p];
                l.map.encode(z, a, &mut x[..p - 1])?;
                x[p - 1] = 1.0;
                Ok(l.decide_encoded(&x))
            }
        }
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<usize>> {
        (0..ds.len())
            .map(|i| self.predict(ds.row(i), &ds.attributes()[i]))
            .collect()
    }
}

/// `h(x) = argmin_k (η̂(x)ᵀ W(x))_k`; `rows` pre-populates the weight cache.
pub fn plugin_best_response(
    eta: &Arc<dyn ProbabilityEstimate>,
    ctx: &WeightContext,
    rows: &[Vec<usize>],
) -> Result<PluginClassifier> {
    check_len(ctx.metric.num_classes(), eta.num_classes(), "model classes")?;
    Ok(PluginClassifier {
        eta: Arc::clone(eta),
        table: weight_table(rows, ctx)?,
        ctx: Arc::new(ctx.clone()),
    })
}

/// Per-sample costs of the weighted-ERM reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct WermWeights {
    /// `n × K`, row `i` is `(1/n) · W(x_i)[y_i, ·]`.
    pub raw: Vec<f64>,
    /// `s_i = K · max_k w_ik − Σ_k w_ik`.
    pub scale: Vec<f64>,
    /// `n × K`, `η̃_ik = (max_k w_ik − w_ik) / s_i`; uniform where `s_i = 0`.
    pub soft_labels: Vec<f64>,
    pub k: usize,
}

impl WermWeights {
    /// `w_i` after adding `(K − 1) · max − Σ` to every entry.
    pub fn shifted(&self, i: usize) -> Vec<f64> {
        let k = self.k;
        let w = &self.raw[i * k..(i + 1) * k];
        let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let c = (k as f64 - 1.0) * max - w.iter().sum::<f64>();
        w.iter().map(|x| x + c).collect()
    }
}

pub fn werm_weights(ds: &Dataset, ctx: &WeightContext) -> Result<WermWeights> {
    let k = ds.num_classes();
    check_len(ctx.metric.num_classes(), k, "metric classes")?;
    if k < 2 {
        return Err(Error::Oracle(
            "the reduction needs at least two classes".into(),
        ));
    }
    let table = weight_table(ds.attributes(), ctx)?;
    let n = ds.len() as f64;
    let mut raw = Vec::with_capacity(ds.len() * k);
    let mut scale = Vec::with_capacity(ds.len());
    let mut soft_labels = Vec::with_capacity(ds.len() * k);
    for (a, &y) in ds.attributes().iter().zip(ds.labels()) {
        let w: Vec<f64> = table[a].row(y).iter().map(|v| v / n).collect();
        let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = w.iter().map(|v| max - v).sum();
        if s > 0.0 {
            soft_labels.extend(w.iter().map(|v| (max - v) / s));
        } else {
            soft_labels.extend(std::iter::repeat(1.0 / k as f64).take(k));
        }
        raw.extend(w);
        scale.push(s.max(0.0));
    }
    Ok(WermWeights {
        raw,
        scale,
        soft_labels,
        k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub l2: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            iterations: 500,
            l2: 1e-4,
        }
    }
}

/// Encoded training rows shared by every call of [`werm_best_response`].
#[derive(Debug, Clone)]
pub struct WermData {
    map: Arc<FeatureMap>,
    design: Design,
}

impl WermData {
    pub fn new(ds: &Dataset) -> Result<Self> {
        let map = FeatureMap::fit(ds);
        let design = map.design(ds)?;
        Ok(Self {
            map: Arc::new(map),
            design,
        })
    }

    pub fn num_params(&self, k: usize) -> usize {
        self.design.cols() * k
    }
}

#[derive(Debug, Clone)]
pub struct WermFit {
    pub classifier: LinearClassifier,
    pub report: DescentReport,
}

/// Minimizes `Σ_i s_i η̃_iᵀ ℓ(f(x_i))` (normalized by `Σ s_i`) over linear
/// scores, starting from `warm` when given.
pub fn werm_best_response(
    data: &WermData,
    ds: &Dataset,
    ctx: &WeightContext,
    cfg: &SurrogateConfig,
    warm: Option<&[f64]>,
) -> Result<WermFit> {
    let k = ds.num_classes();
    check_len(ds.len(), data.design.rows(), "encoded rows")?;
    let weights = werm_weights(ds, ctx)?;
    let total: f64 = weights.scale.iter().sum();
    let mut theta = match warm {
        Some(t) => {
            check_len(data.num_params(k), t.len(), "warm start")?;
            t.to_vec()
        }
        None => vec![0.0; data.num_params(k)],
    };
    if !(total > 0.0) {
        // Every sample is indifferent: any classifier is a best response.
        let report = DescentReport {
            initial_loss: 0.0,
            final_loss: 0.0,
            converged: true,
        };
        return Ok(WermFit {
            classifier: LinearClassifier {
                map: Arc::clone(&data.map),
                theta,
                k,
            },
            report,
        });
    }
    let normalized: Vec<f64> = weights.scale.iter().map(|s| s / total).collect();
    let problem = SoftmaxProblem::new(&data.design, &weights.soft_labels, &normalized, k, cfg.l2)?;
    let report = problem.descend(&mut theta, cfg.learning_rate, cfg.iterations);
    if !report.converged {
        warn!("weighted-ERM surrogate flagged as not converged");
    }
    Ok(WermFit {
        classifier: LinearClassifier {
            map: Arc::clone(&data.map),
            theta,
            k,
        },
        report,
    })
}
