//! Linear performance metrics `ψ(C) = ⟨D, C⟩` and linear fairness constraints
//! `φ_j = ⟨U_j, C⟩ − Σ_g ⟨V_j^g, C^g⟩ − ν_j ≤ 0`.
//!
//! Demographic parity constrains the positive-prediction rate `C_{·,1}` of every
//! group against the population. A `+` constraint measures `rate_g − rate` and
//! its `−` twin measures `rate − rate_g`.

use log::info;

use crate::confusion::{ConfusionMatrix, ConfusionSet};
use crate::error::{check_len, Error, Result};
use crate::groups::{GroupScheme, MembershipIndex};
use crate::matrix::SquareMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearMetric {
    d: SquareMatrix,
}

impl LinearMetric {
    pub fn new(d: SquareMatrix) -> Result<Self> {
        if !d.is_finite() {
            return Err(Error::Parameter(
                "metric matrix has non-finite entries".into(),
            ));
        }
        Ok(Self { d })
    }

    /// `D = 1 − I`.
    pub fn zero_one(k: usize) -> Self {
        Self {
            d: SquareMatrix::from_fn(k, |i, j| if i == j { 0.0 } else { 1.0 }),
        }
    }

    /// `D_ij = 1 − |i − j| / (K − 1)`, an accuracy-type metric (larger is better).
    pub fn ordinal_accuracy(k: usize) -> Self {
        let span = (k.max(2) - 1) as f64;
        Self {
            d: SquareMatrix::from_fn(k, |i, j| 1.0 - (i as f64 - j as f64).abs() / span),
        }
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.d
    }

    pub fn num_classes(&self) -> usize {
        self.d.dim()
    }
}

pub fn eval_error(metric: &LinearMetric, c: &ConfusionMatrix) -> Result<f64> {
    metric.d.dot(c.matrix())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub u: SquareMatrix,
    /// Sparse `g → V^g`; groups missing here contribute nothing.
    pub v: Vec<(usize, SquareMatrix)>,
    pub slack: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    constraints: Vec<LinearConstraint>,
    scheme: GroupScheme,
    k: usize,
    dropped_groups: Vec<usize>,
}

impl ConstraintSet {
    pub fn new(constraints: Vec<LinearConstraint>, scheme: &GroupScheme, k: usize) -> Result<Self> {
        if constraints.is_empty() {
            return Err(Error::Constraint(
                "a constraint set needs at least one constraint".into(),
            ));
        }
        for c in &constraints {
            check_len(k, c.u.dim(), "constraint U dimension")?;
            if !(c.slack >= 0.0) {
                return Err(Error::Constraint(format!(
                    "slack of `{}` must be nonnegative, got {}",
                    c.label, c.slack
                )));
            }
            for (g, v) in &c.v {
                if *g >= scheme.len() {
                    return Err(Error::Constraint(format!(
                        "`{}` references group {g} outside the scheme",
                        c.label
                    )));
                }
                check_len(k, v.dim(), "constraint V dimension")?;
            }
        }
        Ok(Self {
            constraints,
            scheme: scheme.clone(),
            k,
            dropped_groups: Vec::new(),
        })
    }

    pub fn constraints(&self) -> &[LinearConstraint] {
        &self.constraints
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn scheme(&self) -> &GroupScheme {
        &self.scheme
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    /// Scheme groups left out at build time (empty, or with zero positive rate for EO).
    pub fn dropped_groups(&self) -> &[usize] {
        &self.dropped_groups
    }

    /// Same constraints with every slack replaced by `slack`.
    pub fn with_slack(&self, slack: f64) -> Result<Self> {
        if !(slack >= 0.0) {
            return Err(Error::Constraint(format!(
                "slack must be nonnegative, got {slack}"
            )));
        }
        let mut out = self.clone();
        for c in &mut out.constraints {
            c.slack = slack;
        }
        Ok(out)
    }

    /// Scales `U_j`, `V_j^g` and `ν_j` jointly by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for c in &mut out.constraints {
            c.u = c.u.scaled(factor);
            for (_, v) in &mut c.v {
                *v = v.scaled(factor);
            }
            c.slack *= factor;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violations {
    pub values: Vec<f64>,
    /// Set when a constraint referenced at least one absent group.
    pub flagged: Vec<bool>,
}

impl Violations {
    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `v_j = ⟨U_j, C⟩ − Σ_g ⟨V_j^g, C^g⟩ − ν_j`.
///
/// Absent groups are skipped and flag the constraint; a constraint whose groups
/// are all absent evaluates to `−ν_j`.
pub fn eval_violations(cs: &ConstraintSet, set: &ConfusionSet) -> Result<Violations> {
    check_len(cs.scheme.len(), set.groups.len(), "group confusions")?;
    check_len(cs.k, set.overall.num_classes(), "confusion classes")?;
    let mut values = Vec::with_capacity(cs.len());
    let mut flagged = Vec::with_capacity(cs.len());
    for c in &cs.constraints {
        let mut group_term = 0.0;
        let mut present = 0usize;
        for (g, v) in &c.v {
            if let Some(cg) = &set.groups[*g] {
                group_term += v.dot(cg.matrix())?;
                present += 1;
            }
        }
        let absent = c.v.len() - present;
        if absent > 0 && present == 0 {
            values.push(-c.slack);
        } else {
            values.push(c.u.dot(set.overall.matrix())? - group_term - c.slack);
        }
        flagged.push(absent > 0);
    }
    Ok(Violations { values, flagged })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpWeighting {
    Uniform,
    /// Both sides of each group's constraint are multiplied by `π̂_g`.
    GroupSize,
}

/// Column indicator of the positive prediction, `[[0, 1], [0, 1]]`.
fn positive_column() -> SquareMatrix {
    SquareMatrix::from_fn(2, |_, j| if j == 1 { 1.0 } else { 0.0 })
}

/// Demographic parity: a `±` pair per nonempty group.
///
/// `fractions[g]` is `π̂_g` (or the exact `π_g`); groups with zero mass are
/// dropped and logged.
pub fn build_dp(
    scheme: &GroupScheme,
    fractions: &[f64],
    slack: f64,
    weighting: DpWeighting,
) -> Result<ConstraintSet> {
    check_len(scheme.len(), fractions.len(), "group fractions")?;
    let labels = scheme.labels();
    let mut constraints = Vec::new();
    let mut dropped = Vec::new();
    for (g, &pi) in fractions.iter().enumerate() {
        if !(pi > 0.0) {
            dropped.push(g);
            continue;
        }
        let scale = match weighting {
            DpWeighting::Uniform => 1.0,
            DpWeighting::GroupSize => pi,
        };
        for (sign, tag) in [(1.0, "+"), (-1.0, "-")] {
            let m = positive_column().scaled(-sign * scale);
            constraints.push(LinearConstraint {
                u: m.clone(),
                v: vec![(g, m)],
                slack,
                label: format!("dp{tag}[{}]", labels[g]),
            });
        }
    }
    if !dropped.is_empty() {
        info!("demographic parity: dropped {} empty groups", dropped.len());
    }
    if constraints.is_empty() {
        return Err(Error::Constraint("every group is empty".into()));
    }
    let mut cs = ConstraintSet::new(constraints, scheme, 2)?;
    cs.dropped_groups = dropped;
    Ok(cs)
}

/// Positive-label rates `ω_1` and `ω_1^g` (`None` for empty groups).
#[derive(Debug, Clone, PartialEq)]
pub struct PositiveRates {
    pub overall: f64,
    pub groups: Vec<Option<f64>>,
}

impl PositiveRates {
    pub fn from_labels(labels: &[usize], index: &MembershipIndex) -> Result<Self> {
        check_len(labels.len(), index.num_rows(), "membership rows")?;
        if labels.is_empty() {
            return Err(Error::Data("no labels".into()));
        }
        let mut positives = vec![0usize; index.stats().len()];
        let mut total = 0usize;
        for (i, &y) in labels.iter().enumerate() {
            if y == 1 {
                total += 1;
                for &g in index.groups_of(i) {
                    positives[g as usize] += 1;
                }
            }
        }
        let groups = index
            .stats()
            .iter()
            .zip(positives)
            .map(|(s, p)| (s.count > 0).then(|| p as f64 / s.count as f64))
            .collect();
        Ok(Self {
            overall: total as f64 / labels.len() as f64,
            groups,
        })
    }
}

/// Equal opportunity: `±(C^g_{11}/ω_1^g − C_{11}/ω_1) − ν`, a pair per group
/// with a positive label rate.
pub fn build_eo(scheme: &GroupScheme, slack: f64, rates: &PositiveRates) -> Result<ConstraintSet> {
    check_len(scheme.len(), rates.groups.len(), "group label rates")?;
    if !(rates.overall > 0.0) {
        return Err(Error::Constraint("no positive labels: ω_1 = 0".into()));
    }
    let labels = scheme.labels();
    let e11 = SquareMatrix::from_fn(2, |i, j| if i == 1 && j == 1 { 1.0 } else { 0.0 });
    let mut constraints = Vec::new();
    let mut dropped = Vec::new();
    for (g, rate) in rates.groups.iter().enumerate() {
        let omega_g = match rate {
            Some(r) if *r > 0.0 => *r,
            _ => {
                dropped.push(g);
                continue;
            }
        };
        for (sign, tag) in [(1.0, "+"), (-1.0, "-")] {
            constraints.push(LinearConstraint {
                u: e11.scaled(-sign / rates.overall),
                v: vec![(g, e11.scaled(-sign / omega_g))],
                slack,
                label: format!("eo{tag}[{}]", labels[g]),
            });
        }
    }
    if !dropped.is_empty() {
        info!(
            "equal opportunity: dropped {} groups without positive labels",
            dropped.len()
        );
    }
    if constraints.is_empty() {
        return Err(Error::Constraint("no group has positive labels".into()));
    }
    let mut cs = ConstraintSet::new(constraints, scheme, 2)?;
    cs.dropped_groups = dropped;
    Ok(cs)
}

fn check_binary(c: &ConfusionMatrix) -> Result<()> {
    if c.num_classes() != 2 {
        return Err(Error::Parameter(format!(
            "demographic parity needs K = 2, got {}",
            c.num_classes()
        )));
    }
    Ok(())
}

/// `max_g w_g |Ĉ^g_{0,1} + Ĉ^g_{1,1} − Ĉ_{0,1} − Ĉ_{1,1}|` over nonempty groups,
/// with `w_g = 1` or the supplied group weights (typically `n_g / n`).
pub fn max_fairviol_dp(set: &ConfusionSet, weights: Option<&[f64]>) -> Result<f64> {
    check_binary(&set.overall)?;
    if let Some(w) = weights {
        check_len(set.groups.len(), w.len(), "group weights")?;
    }
    let rate = set.overall[(0, 1)] + set.overall[(1, 1)];
    let gaps = set.groups.iter().enumerate().filter_map(|(g, cg)| {
        cg.as_ref().map(|cg| {
            let gap = (cg[(0, 1)] + cg[(1, 1)] - rate).abs();
            weights.map_or(gap, |w| w[g] * gap)
        })
    });
    max_of(gaps)
}

/// `max_g |TPR_g − TPR|` over groups with positive labels.
pub fn max_fairviol_eo(set: &ConfusionSet) -> Result<f64> {
    check_binary(&set.overall)?;
    let omega = set.overall[(1, 0)] + set.overall[(1, 1)];
    if !(omega > 0.0) {
        return Err(Error::Parameter("no positive labels".into()));
    }
    let tpr = set.overall[(1, 1)] / omega;
    let gaps = set.groups.iter().filter_map(|cg| {
        let cg = cg.as_ref()?;
        let omega_g = cg[(1, 0)] + cg[(1, 1)];
        (omega_g > 0.0).then(|| (cg[(1, 1)] / omega_g - tpr).abs())
    });
    max_of(gaps)
}

fn max_of(values: impl Iterator<Item = f64>) -> Result<f64> {
    values
        .fold(None, |acc: Option<f64>, x| {
            Some(acc.map_or(x, |a| a.max(x)))
        })
        .ok_or_else(|| Error::Data("no nonempty groups".into()))
}
