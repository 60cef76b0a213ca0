//! The primal/dual loop: at each round the oracle best-responds to `λ^t`, the
//! violations of its response drive a dual step, and the uniform average of
//! all responses is returned.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::confusion::{hard_confusion_set, ClassDistribution, ConfusionSet};
use crate::data::Dataset;
use crate::error::{check_len, Error, Result};
use crate::eta::{self, FitConfig};
use crate::groups::{GroupScheme, MembershipIndex};
use crate::metrics::{eval_error, eval_violations, ConstraintSet, LinearMetric};
use crate::oracles::{
    plugin_best_response, werm_best_response, DeterministicClassifier, ProbabilityEstimate,
    SurrogateConfig, WeightContext, WermData,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    Fixed(f64),
    /// `η = 1 / (B √T)`.
    InverseSqrt,
}

impl StepRule {
    pub fn step(&self, bound: f64, iterations: usize) -> f64 {
        match *self {
            StepRule::Fixed(eta) => eta,
            StepRule::InverseSqrt => 1.0 / (bound * (iterations as f64).sqrt()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualRule {
    ProjectedGradient,
    ExponentiatedGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKind {
    Plugin,
    Werm,
}

/// Which rows estimate `η̂` and `π̂` for the plugin oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PluginSplit {
    Shared,
    /// A seeded half fits `η̂`, the other half gives `π̂`.
    Halves,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub iterations: usize,
    pub bound: f64,
    pub buffer: f64,
    pub step: StepRule,
    pub dual: DualRule,
    pub oracle: OracleKind,
    pub seed: u64,
    pub eta_fit: FitConfig,
    pub surrogate: SurrogateConfig,
    pub plugin_split: PluginSplit,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            bound: 50.0,
            buffer: 0.0,
            step: StepRule::Fixed(0.1),
            dual: DualRule::ProjectedGradient,
            oracle: OracleKind::Plugin,
            seed: 0,
            eta_fit: FitConfig::default(),
            surrogate: SurrogateConfig::default(),
            plugin_split: PluginSplit::Shared,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Parameter("T must be at least 1".into()));
        }
        if !(self.bound > 0.0) {
            return Err(Error::Parameter(format!(
                "B must be positive, got {}",
                self.bound
            )));
        }
        if !(self.buffer >= 0.0) {
            return Err(Error::Parameter(format!(
                "ε must be nonnegative, got {}",
                self.buffer
            )));
        }
        let eta = self.step.step(self.bound, self.iterations);
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Parameter(format!(
                "step size must be positive, got {eta}"
            )));
        }
        Ok(())
    }
}

/// `clamp(λ + η v, 0, B)`.
pub fn projected_gradient_update(lambda: &[f64], v: &[f64], eta: f64, bound: f64) -> Vec<f64> {
    lambda
        .iter()
        .zip(v)
        .map(|(l, vj)| (l + eta * vj).clamp(0.0, bound))
        .collect()
}

/// `λ'_j = B exp(log λ_j + η v_j) / (B − Σλ + Σ_i exp(log λ_i + η v_i))`.
pub fn exponentiated_gradient_update(
    lambda: &[f64],
    v: &[f64],
    eta: f64,
    bound: f64,
) -> Result<Vec<f64>> {
    check_len(lambda.len(), v.len(), "violation vector")?;
    if let Some(l) = lambda.iter().find(|l| !(**l > 0.0)) {
        return Err(Error::Parameter(format!(
            "exponentiated gradient needs a strictly positive start, found {l}"
        )));
    }
    let rest = (bound - lambda.iter().sum::<f64>()).max(0.0);
    let logs: Vec<f64> = lambda
        .iter()
        .zip(v)
        .map(|(l, vj)| l.ln() + eta * vj)
        .collect();
    let top = logs.iter().copied().fold(rest.ln(), f64::max);
    let denom = (rest.ln() - top).exp() + logs.iter().map(|x| (x - top).exp()).sum::<f64>();
    Ok(logs
        .iter()
        .map(|x| (bound * (x - top).exp() / denom).max(f64::MIN_POSITIVE))
        .collect())
}

#[derive(Debug, Clone)]
pub struct EnsembleClassifier {
    members: Vec<DeterministicClassifier>,
}

impl EnsembleClassifier {
    pub fn new(members: Vec<DeterministicClassifier>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Parameter(
                "an ensemble needs at least one member".into(),
            ));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[DeterministicClassifier] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Every member's hard predictions on `ds`.
    pub fn member_predictions(&self, ds: &Dataset) -> Result<Vec<Vec<usize>>> {
        let mut cache: Option<(Arc<dyn ProbabilityEstimate>, Vec<ClassDistribution>)> = None;
        let mut out = Vec::with_capacity(self.members.len());
        for m in &self.members {
            match m {
                DeterministicClassifier::Plugin(p) => {
                    let same = cache.as_ref().is_some_and(|(e, _)| {
                        std::ptr::addr_eq(Arc::as_ptr(e), Arc::as_ptr(p.estimate()))
                    });
                    if !same {
                        let probs = (0..ds.len())
                            .map(|i| p.estimate().predict_proba(ds.row(i), &ds.attributes()[i]))
                            .collect::<Result<Vec<_>>>()?;
                        cache = Some((Arc::clone(p.estimate()), probs));
                    }
                    let Some((_, probs)) = cache.as_ref() else {
                        unreachable!()
                    };
                    out.push(
                        (0..ds.len())
                            .map(|i| p.decide_with_eta(&probs[i], &ds.attributes()[i]))
                            .collect::<Result<Vec<_>>>()?,
                    );
                }
                DeterministicClassifier::Linear(_) => out.push(m.predict_dataset(ds)?),
            }
        }
        Ok(out)
    }

    /// The mixture's per-row class probabilities.
    pub fn decision_distributions(&self, ds: &Dataset) -> Result<Vec<ClassDistribution>> {
        let k = ds.num_classes();
        let preds = self.member_predictions(ds)?;
        let share = 1.0 / preds.len() as f64;
        (0..ds.len())
            .map(|i| {
                let mut p = vec![0.0; k];
                for member in &preds {
                    p[member[i]] += share;
                }
                ClassDistribution::new(p)
            })
            .collect()
    }

    /// Mean of the members' confusion sets.
    pub fn confusions(&self, ds: &Dataset, scheme: &GroupScheme) -> Result<ConfusionSet> {
        let index = MembershipIndex::build(scheme, ds.attributes())?;
        let sets = self
            .member_predictions(ds)?
            .iter()
            .map(|p| hard_confusion_set(ds.labels(), p, &index, ds.num_classes()))
            .collect::<Result<Vec<_>>>()?;
        ConfusionSet::mean(&sets).ok_or_else(|| Error::Parameter("empty ensemble".into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverTrace {
    pub lambdas: Vec<Vec<f64>>,
    /// `Φ̂(h^t) − ε`, slack included.
    pub violations: Vec<Vec<f64>>,
    pub errors: Vec<f64>,
    pub lagrangians: Vec<f64>,
    pub step: f64,
    pub lambda_bar: Vec<f64>,
}

impl SolverTrace {
    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn max_violation(&self, t: usize) -> f64 {
        self.violations[t]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let j = self.lambda_bar.len();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=j).map(|i| format!("lambda_{i}")));
        header.extend(["err", "max_viol", "lagrangian"].map(String::from));
        w.write_record(&header)?;
        for t in 0..self.len() {
            let mut row = vec![(t + 1).to_string()];
            row.extend(self.lambdas[t].iter().map(|l| l.to_string()));
            row.push(self.errors[t].to_string());
            row.push(self.max_violation(t).to_string());
            row.push(self.lagrangians[t].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

#[derive(Debug, Clone)]
pub struct SolverOutput {
    pub ensemble: EnsembleClassifier,
    pub lambda_bar: Vec<f64>,
    pub trace: SolverTrace,
    /// Mean training confusions of the ensemble.
    pub train_confusions: ConfusionSet,
}

enum Oracle {
    Plugin {
        eta: Arc<dyn ProbabilityEstimate>,
        train_eta: Vec<ClassDistribution>,
    },
    Werm {
        data: WermData,
        warm: Option<Vec<f64>>,
    },
}

/// A training set plus everything the oracle needs precomputed.
pub struct Solver {
    train: Dataset,
    metric: LinearMetric,
    constraints: Arc<ConstraintSet>,
    cfg: SolverConfig,
    index: MembershipIndex,
    fractions: Vec<f64>,
    oracle: Oracle,
}

impl Solver {
    pub fn new(
        train: &Dataset,
        metric: LinearMetric,
        constraints: ConstraintSet,
        cfg: SolverConfig,
    ) -> Result<Self> {
        Self::build(train, metric, constraints, cfg, None)
    }

    /// Uses the supplied `η̂` instead of fitting one.
    pub fn with_estimate(
        train: &Dataset,
        metric: LinearMetric,
        constraints: ConstraintSet,
        cfg: SolverConfig,
        eta: Arc<dyn ProbabilityEstimate>,
    ) -> Result<Self> {
        Self::build(train, metric, constraints, cfg, Some(eta))
    }

    fn build(
        train: &Dataset,
        metric: LinearMetric,
        constraints: ConstraintSet,
        cfg: SolverConfig,
        eta: Option<Arc<dyn ProbabilityEstimate>>,
    ) -> Result<Self> {
        cfg.validate()?;
        check_len(train.num_classes(), metric.num_classes(), "metric classes")?;
        if constraints.scheme().schema() != train.schema() {
            return Err(Error::Schema(
                "constraints and data use different schemas".into(),
            ));
        }
        let scheme = constraints.scheme().clone();
        let index = MembershipIndex::build(&scheme, train.attributes())?;
        let train_fractions: Vec<f64> = index.stats().iter().map(|s| s.fraction).collect();
        let (oracle, fractions) = match cfg.oracle {
            OracleKind::Plugin => {
                let (fit_part, pi_part) = match cfg.plugin_split {
                    PluginSplit::Shared => (None, None),
                    PluginSplit::Halves => {
                        if train.len() < 2 {
                            return Err(Error::Data("halving needs at least two rows".into()));
                        }
                        let mut idx: Vec<usize> = (0..train.len()).collect();
                        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
                        let (a, b) = idx.split_at_mut(train.len() / 2);
                        a.sort_unstable();
                        b.sort_unstable();
                        (Some(train.subset(a)?), Some(train.subset(b)?))
                    }
                };
                let eta = match eta {
                    Some(e) => e,
                    None => {
                        let fit_cfg = FitConfig {
                            seed: cfg.seed,
                            ..cfg.eta_fit
                        };
                        Arc::new(eta::fit(fit_part.as_ref().unwrap_or(train), &fit_cfg)?)
                            as Arc<dyn ProbabilityEstimate>
                    }
                };
                check_len(train.num_classes(), eta.num_classes(), "estimate classes")?;
                let fractions = match &pi_part {
                    Some(part) => MembershipIndex::build(&scheme, part.attributes())?
                        .stats()
                        .iter()
                        .map(|s| s.fraction)
                        .collect(),
                    None => train_fractions,
                };
                let train_eta = (0..train.len())
                    .map(|i| eta.predict_proba(train.row(i), &train.attributes()[i]))
                    .collect::<Result<Vec<_>>>()?;
                (Oracle::Plugin { eta, train_eta }, fractions)
            }
            OracleKind::Werm => (
                Oracle::Werm {
                    data: WermData::new(train)?,
                    warm: None,
                },
                train_fractions,
            ),
        };
        Ok(Self {
            train: train.clone(),
            metric,
            constraints: Arc::new(constraints),
            cfg,
            index,
            fractions,
            oracle,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    fn context(&self, lambda: &[f64]) -> Result<WeightContext> {
        WeightContext::new(
            self.metric.clone(),
            Arc::clone(&self.constraints),
            lambda.to_vec(),
            self.fractions.clone(),
            self.cfg.bound,
        )
    }

    /// Best response at `λ` with its training predictions.
    fn respond(&mut self, lambda: &[f64]) -> Result<(DeterministicClassifier, Vec<usize>)> {
        let ctx = self.context(lambda)?;
        match &mut self.oracle {
            Oracle::Plugin { eta, train_eta } => {
                let h = plugin_best_response(eta, &ctx, self.train.attributes())?;
                let preds = train_eta
                    .iter()
                    .zip(self.train.attributes())
                    .map(|(p, a)| h.decide_with_eta(p, a))
                    .collect::<Result<Vec<_>>>()?;
                Ok((DeterministicClassifier::Plugin(h), preds))
            }
            Oracle::Werm { data, warm } => {
                let fit = werm_best_response(
                    data,
                    &self.train,
                    &ctx,
                    &self.cfg.surrogate,
                    warm.as_deref(),
                )?;
                *warm = Some(fit.classifier.theta().to_vec());
                let h = DeterministicClassifier::Linear(fit.classifier);
                let preds = h.predict_dataset(&self.train)?;
                Ok((h, preds))
            }
        }
    }

    fn confusions_of(&self, preds: &[usize]) -> Result<ConfusionSet> {
        hard_confusion_set(
            self.train.labels(),
            preds,
            &self.index,
            self.train.num_classes(),
        )
    }

    /// `(error, Φ̂ − ε)` of a training confusion set.
    fn evaluate(&self, conf: &ConfusionSet) -> Result<(f64, Vec<f64>)> {
        let err = eval_error(&self.metric, &conf.overall)?;
        let v = eval_violations(&self.constraints, conf)?
            .values
            .into_iter()
            .map(|x| x - self.cfg.buffer)
            .collect();
        Ok((err, v))
    }

    fn initial_lambda(&self) -> Vec<f64> {
        let j = self.constraints.len();
        match self.cfg.dual {
            DualRule::ProjectedGradient => vec![0.0; j],
            DualRule::ExponentiatedGradient => vec![self.cfg.bound / (2.0 * j as f64); j],
        }
    }

    pub fn run(&mut self) -> Result<SolverOutput> {
        let t_max = self.cfg.iterations;
        let step = self.cfg.step.step(self.cfg.bound, t_max);
        let mut lambda = self.initial_lambda();
        let mut members = Vec::with_capacity(t_max);
        let mut sets = Vec::with_capacity(t_max);
        let mut trace = SolverTrace {
            lambdas: Vec::with_capacity(t_max),
            violations: Vec::with_capacity(t_max),
            errors: Vec::with_capacity(t_max),
            lagrangians: Vec::with_capacity(t_max),
            step,
            lambda_bar: vec![0.0; lambda.len()],
        };
        if let Oracle::Werm { warm, .. } = &mut self.oracle {
            *warm = None;
        }
        for t in 0..t_max {
            let attach = |source: Error| Error::Solver {
                iteration: t + 1,
                source: Box::new(source),
            };
            let (h, preds) = self.respond(&lambda).map_err(attach)?;
            let conf = self.confusions_of(&preds).map_err(attach)?;
            let (err, v) = self.evaluate(&conf).map_err(attach)?;
            let lagrangian = err + lambda.iter().zip(&v).map(|(l, x)| l * x).sum::<f64>();
            debug!("t={} err={err:.5} lagrangian={lagrangian:.5}", t + 1);
            for (bar, l) in trace.lambda_bar.iter_mut().zip(&lambda) {
                *bar += l / t_max as f64;
            }
            trace.lambdas.push(lambda.clone());
            trace.errors.push(err);
            trace.lagrangians.push(lagrangian);
            let next = match self.cfg.dual {
                DualRule::ProjectedGradient => {
                    projected_gradient_update(&lambda, &v, step, self.cfg.bound)
                }
                DualRule::ExponentiatedGradient => {
                    exponentiated_gradient_update(&lambda, &v, step, self.cfg.bound)
                        .map_err(attach)?
                }
            };
            trace.violations.push(v);
            members.push(h);
            sets.push(conf);
            lambda = next;
        }
        let train_confusions = ConfusionSet::mean(&sets)
            .ok_or_else(|| Error::Parameter("no iterations were run".into()))?;
        Ok(SolverOutput {
            ensemble: EnsembleClassifier::new(members)?,
            lambda_bar: trace.lambda_bar.clone(),
            trace,
            train_confusions,
        })
    }

    /// `L̂(h, λ) = err(h) + λᵀ(Φ̂(h) − ε)` from a training confusion set.
    pub fn lagrangian(&self, conf: &ConfusionSet, lambda: &[f64]) -> Result<f64> {
        check_len(self.constraints.len(), lambda.len(), "dual vector")?;
        let (err, v) = self.evaluate(conf)?;
        Ok(err + lambda.iter().zip(&v).map(|(l, x)| l * x).sum::<f64>())
    }

    /// `max_λ L̂(h̄, λ) − L̂(h*, λ̄)` with `λ` probed at `0`, every `B e_j` and,
    /// for the box domain, `B · 1[v̄ > 0]`; `h*` is one oracle call at `λ̄`.
    pub fn empirical_duality_gap(&mut self, out: &SolverOutput) -> Result<f64> {
        let b = self.cfg.bound;
        let (err, v) = self.evaluate(&out.train_confusions)?;
        let mut best = err;
        for &vj in &v {
            best = best.max(err + b * vj);
        }
        if self.cfg.dual == DualRule::ProjectedGradient {
            best = best.max(err + b * v.iter().map(|x| x.max(0.0)).sum::<f64>());
        }
        let (_, preds) = self.respond(&out.lambda_bar)?;
        let conf = self.confusions_of(&preds)?;
        Ok(best - self.lagrangian(&conf, &out.lambda_bar)?)
    }
}

/// Builds a [`Solver`] and runs it once.
pub fn run(
    train: &Dataset,
    metric: LinearMetric,
    constraints: ConstraintSet,
    cfg: SolverConfig,
) -> Result<SolverOutput> {
    Solver::new(train, metric, constraints, cfg)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projected_gradient_examples() {
        assert_eq!(
            projected_gradient_update(&[0.0], &[0.1], 1.0, 50.0),
            vec![0.1]
        );
        assert_eq!(
            projected_gradient_update(&[49.9], &[5.0], 1.0, 50.0),
            vec![50.0]
        );
        assert_eq!(
            projected_gradient_update(&[0.05], &[-1.0], 1.0, 50.0),
            vec![0.0]
        );
    }

    #[test]
    fn exponentiated_gradient_examples() {
        let same = exponentiated_gradient_update(&[1.0, 2.0, 3.0], &[0.0; 3], 1.0, 50.0).unwrap();
        for (a, b) in same.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let e = std::f64::consts::E;
        let up = exponentiated_gradient_update(&[1.0], &[1.0], 1.0, 50.0).unwrap();
        assert!((up[0] - 50.0 * e / (49.0 + e)).abs() < 1e-12);
        assert!((up[0] - 2.62797).abs() < 1e-5);
        assert!(exponentiated_gradient_update(&[0.0, 1.0], &[0.0, 0.0], 1.0, 50.0).is_err());
    }

    #[test]
    fn exponentiated_gradient_is_monotone_and_bounded() {
        let lam = [5.0, 10.0, 1.0];
        let lo = exponentiated_gradient_update(&lam, &[0.1, 0.0, -0.3], 0.7, 20.0).unwrap();
        let hi = exponentiated_gradient_update(&lam, &[0.4, 0.0, -0.3], 0.7, 20.0).unwrap();
        assert!(hi[0] > lo[0]);
        let big = exponentiated_gradient_update(&lam, &[900.0, 800.0, 5.0], 1.0, 20.0).unwrap();
        assert!(big.iter().sum::<f64>() <= 20.0 * (1.0 + 1e-12));
        assert!(big.iter().all(|x| x.is_finite() && *x > 0.0));
    }

    #[test]
    fn inverse_sqrt_step() {
        assert!((StepRule::InverseSqrt.step(50.0, 400) - 1.0 / 1000.0).abs() < 1e-18);
        assert_eq!(StepRule::Fixed(0.3).step(50.0, 400), 0.3);
    }
}
