//! Confusion matrices: `C[k][l]` is the joint mass of true label `k` and
//! prediction `l`, overall or conditioned on a group.
//!
//! Group confusions are returned as `Option<ConfusionMatrix>` indexed like the
//! scheme's groups; `None` marks a group with no mass. An empty group is never
//! represented by a zero matrix, which would silently satisfy constraints.

use std::ops::Deref;

use crate::error::{check_len, Error, Result};
use crate::groups::{GroupScheme, MembershipIndex};
use crate::matrix::SquareMatrix;
use crate::theory::FiniteDistribution;

const SIMPLEX_TOL: f64 = 1e-9;

/// A randomized decision: a point of the probability simplex over classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution(Vec<f64>);

impl ClassDistribution {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::Distribution("empty distribution".into()));
        }
        if probabilities
            .iter()
            .any(|p| !p.is_finite() || *p < -SIMPLEX_TOL)
        {
            return Err(Error::Distribution(format!(
                "negative or non-finite entry in {probabilities:?}"
            )));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Distribution(format!(
                "entries sum to {total}, not 1"
            )));
        }
        Ok(Self(probabilities))
    }

    pub fn one_hot(class: usize, k: usize) -> Self {
        let mut p = vec![0.0; k];
        p[class] = 1.0;
        Self(p)
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ClassDistribution {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix(SquareMatrix);

impl ConfusionMatrix {
    /// Validates nonnegativity and total mass ≤ 1 + 1e-12.
    pub fn from_matrix(m: SquareMatrix) -> Result<Self> {
        if m.as_slice().iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::Distribution(
                "confusion entries must be nonnegative".into(),
            ));
        }
        if m.sum() > 1.0 + 1e-12 {
            return Err(Error::Distribution(format!(
                "confusion mass {} exceeds 1",
                m.sum()
            )));
        }
        Ok(Self(m))
    }

    pub fn num_classes(&self) -> usize {
        self.0.dim()
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.0
    }

    /// Label prevalences `ω_k` (row sums).
    pub fn label_rates(&self) -> Vec<f64> {
        self.0.row_sums()
    }

    /// Prediction rates (column sums); entry 1 is the positive-prediction rate when K = 2.
    pub fn prediction_rates(&self) -> Vec<f64> {
        self.0.col_sums()
    }

    /// Uniform mixture of several confusion matrices.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a ConfusionMatrix>) -> Option<Self> {
        let mut iter = items.into_iter();
        let first = iter.next()?;
        let mut acc = first.0.clone();
        let mut count = 1usize;
        for c in iter {
            acc.add_scaled(&c.0, 1.0);
            count += 1;
        }
        Some(Self(acc.scaled(1.0 / count as f64)))
    }
}

impl Deref for ConfusionMatrix {
    type Target = SquareMatrix;

    fn deref(&self) -> &SquareMatrix {
        &self.0
    }
}

/// Overall and per-group confusions of one classifier on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionSet {
    pub overall: ConfusionMatrix,
    pub groups: Vec<Option<ConfusionMatrix>>,
}

impl ConfusionSet {
    /// Uniform mixture; valid by linearity of confusions in the classifier.
    /// Groups absent in any member are absent in the mixture.
    pub fn mean(items: &[ConfusionSet]) -> Option<Self> {
        let overall = ConfusionMatrix::mean(items.iter().map(|s| &s.overall))?;
        let num_groups = items[0].groups.len();
        let groups = (0..num_groups)
            .map(|g| {
                let members: Option<Vec<&ConfusionMatrix>> =
                    items.iter().map(|s| s.groups[g].as_ref()).collect();
                members.and_then(ConfusionMatrix::mean)
            })
            .collect();
        Some(Self { overall, groups })
    }
}

fn check_labels(labels: &[usize], k: usize) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Data("confusion of an empty sample".into()));
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Label { label, classes: k });
    }
    Ok(())
}

fn check_decisions(decisions: &[ClassDistribution], k: usize) -> Result<()> {
    for d in decisions {
        check_len(k, d.num_classes(), "decision classes")?;
    }
    Ok(())
}

/// `Ĉ[k][l] = (1/n) Σ_i 1{y_i = k} h_l(x_i)`.
pub fn empirical_confusion(
    labels: &[usize],
    decisions: &[ClassDistribution],
    k: usize,
) -> Result<ConfusionMatrix> {
    check_len(labels.len(), decisions.len(), "decisions")?;
    check_labels(labels, k)?;
    check_decisions(decisions, k)?;
    let mut acc = SquareMatrix::zeros(k);
    for (&y, h) in labels.iter().zip(decisions) {
        let row = &mut acc.as_mut_slice()[y * k..(y + 1) * k];
        for (c, p) in row.iter_mut().zip(h.iter()) {
            *c += p;
        }
    }
    Ok(ConfusionMatrix(acc.scaled(1.0 / labels.len() as f64)))
}

/// Confusion of a deterministic classifier given as predicted class indices.
pub fn empirical_confusion_hard(
    labels: &[usize],
    predictions: &[usize],
    k: usize,
) -> Result<ConfusionMatrix> {
    check_len(labels.len(), predictions.len(), "predictions")?;
    check_labels(labels, k)?;
    let mut counts = vec![0usize; k * k];
    for (&y, &p) in labels.iter().zip(predictions) {
        if p >= k {
            return Err(Error::Label {
                label: p,
                classes: k,
            });
        }
        counts[y * k + p] += 1;
    }
    let n = labels.len() as f64;
    Ok(ConfusionMatrix(SquareMatrix::from_fn(k, |i, j| {
        counts[i * k + j] as f64 / n
    })))
}

/// `Ĉ^g = (1/|g|) Σ_{i∈g} Ĉ^(i)` for every group of the scheme.
pub fn group_confusions(
    labels: &[usize],
    decisions: &[ClassDistribution],
    attributes: &[Vec<usize>],
    scheme: &GroupScheme,
) -> Result<Vec<Option<ConfusionMatrix>>> {
    check_len(labels.len(), attributes.len(), "attribute rows")?;
    let index = MembershipIndex::build(scheme, attributes)?;
    Ok(soft_confusion_set(labels, decisions, &index, None)?.groups)
}

/// Overall and group confusions of soft decisions using a precomputed index.
/// `k` defaults to the width of the first decision.
pub fn soft_confusion_set(
    labels: &[usize],
    decisions: &[ClassDistribution],
    index: &MembershipIndex,
    k: Option<usize>,
) -> Result<ConfusionSet> {
    let k = k.unwrap_or_else(|| decisions.first().map_or(0, |d| d.num_classes()));
    check_len(labels.len(), decisions.len(), "decisions")?;
    check_len(labels.len(), index.num_rows(), "membership rows")?;
    check_labels(labels, k)?;
    check_decisions(decisions, k)?;
    let num_groups = index.stats().len();
    let mut overall = vec![0.0; k * k];
    let mut sums = vec![0.0; num_groups * k * k];
    for (i, (&y, h)) in labels.iter().zip(decisions).enumerate() {
        for (l, &p) in h.iter().enumerate() {
            overall[y * k + l] += p;
        }
        for &g in index.groups_of(i) {
            let base = g as usize * k * k + y * k;
            for (l, &p) in h.iter().enumerate() {
                sums[base + l] += p;
            }
        }
    }
    Ok(finish_set(k, labels.len(), overall, &sums, index))
}

/// Overall and group confusions of hard predictions using a precomputed index.
pub fn hard_confusion_set(
    labels: &[usize],
    predictions: &[usize],
    index: &MembershipIndex,
    k: usize,
) -> Result<ConfusionSet> {
    check_len(labels.len(), predictions.len(), "predictions")?;
    check_len(labels.len(), index.num_rows(), "membership rows")?;
    check_labels(labels, k)?;
    let num_groups = index.stats().len();
    let mut overall = vec![0.0; k * k];
    let mut sums = vec![0.0; num_groups * k * k];
    for (i, (&y, &p)) in labels.iter().zip(predictions).enumerate() {
        if p >= k {
            return Err(Error::Label {
                label: p,
                classes: k,
            });
        }
        let cell = y * k + p;
        overall[cell] += 1.0;
        for &g in index.groups_of(i) {
            sums[g as usize * k * k + cell] += 1.0;
        }
    }
    Ok(finish_set(k, labels.len(), overall, &sums, index))
}

fn finish_set(
    k: usize,
    n: usize,
    overall: Vec<f64>,
    sums: &[f64],
    index: &MembershipIndex,
) -> ConfusionSet {
    let n = n as f64;
    let overall = ConfusionMatrix(SquareMatrix::from_fn(k, |i, j| overall[i * k + j] / n));
    let groups = index
        .stats()
        .iter()
        .enumerate()
        .map(|(g, stat)| {
            (stat.count > 0).then(|| {
                let count = stat.count as f64;
                let block = &sums[g * k * k..(g + 1) * k * k];
                ConfusionMatrix(SquareMatrix::from_fn(k, |i, j| block[i * k + j] / count))
            })
        })
        .collect();
    ConfusionSet { overall, groups }
}

/// Exact population confusions of a per-cell randomized classifier.
///
/// `decisions[c]` is the decision used on cell `c` of the distribution. Group
/// confusions condition on the exact group mass; groups with zero mass are `None`.
pub fn exact_confusion(
    dist: &FiniteDistribution,
    decisions: &[ClassDistribution],
    scheme: &GroupScheme,
) -> Result<ConfusionSet> {
    check_len(dist.cells().len(), decisions.len(), "per-cell decisions")?;
    let k = dist.num_classes();
    check_decisions(decisions, k)?;
    let mut overall = SquareMatrix::zeros(k);
    let mut group_sums = vec![SquareMatrix::zeros(k); scheme.len()];
    let mut group_mass = vec![0.0; scheme.len()];
    for (cell, h) in dist.cells().iter().zip(decisions) {
        let joint = SquareMatrix::from_fn(k, |i, j| cell.mass * cell.eta[i] * h[j]);
        overall.add_scaled(&joint, 1.0);
        for g in scheme.groups_containing(&cell.attributes) {
            group_sums[g].add_scaled(&joint, 1.0);
            group_mass[g] += cell.mass;
        }
    }
    let groups = group_sums
        .into_iter()
        .zip(group_mass)
        .map(|(sum, mass)| (mass > 0.0).then(|| ConfusionMatrix(sum.scaled(1.0 / mass))))
        .collect();
    Ok(ConfusionSet {
        overall: ConfusionMatrix(overall),
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::{enumerate_groups, AttributeSchema, SchemeKind};
    use crate::theory::example1_distribution;

    fn assert_matrix(c: &ConfusionMatrix, expected: &[&[f64]]) {
        let e = SquareMatrix::from_rows(expected).unwrap();
        assert!(c.max_abs_diff(&e) < 1e-15, "{c:?} != {e:?}");
    }

    #[test]
    fn perfect_deterministic_classifier() {
        let decisions = vec![
            ClassDistribution::one_hot(0, 2),
            ClassDistribution::one_hot(1, 2),
        ];
        let c = empirical_confusion(&[0, 1], &decisions, 2).unwrap();
        assert_matrix(&c, &[&[0.5, 0.0], &[0.0, 0.5]]);
    }

    #[test]
    fn uniform_randomization() {
        let decisions = vec![ClassDistribution::uniform(2); 2];
        let c = empirical_confusion(&[0, 0], &decisions, 2).unwrap();
        assert_matrix(&c, &[&[0.5, 0.5], &[0.0, 0.0]]);
    }

    #[test]
    fn constant_prediction_hand_sum() {
        let decisions = vec![ClassDistribution::one_hot(0, 2); 4];
        let c = empirical_confusion(&[0, 1, 1, 1], &decisions, 2).unwrap();
        assert_matrix(&c, &[&[0.25, 0.0], &[0.75, 0.0]]);
        let hard = empirical_confusion_hard(&[0, 1, 1, 1], &[0; 4], 2).unwrap();
        assert_eq!(c, hard);
    }

    #[test]
    fn errors_on_bad_input() {
        let d = vec![ClassDistribution::uniform(2)];
        assert!(matches!(
            empirical_confusion(&[0, 1], &d, 2),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            empirical_confusion(&[2], &d, 2),
            Err(Error::Label { label: 2, .. })
        ));
        assert!(ClassDistribution::new(vec![0.7, 0.7]).is_err());
        assert!(ClassDistribution::new(vec![-0.5, 1.5]).is_err());
    }

    #[test]
    fn population_group_equals_overall() {
        let schema = AttributeSchema::binary(2).unwrap();
        let scheme = enumerate_groups(&schema, SchemeKind::Gerrymandering).unwrap();
        let labels = [0, 1, 1, 0, 1];
        let attrs = vec![vec![0, 0], vec![0, 1], vec![1, 1], vec![1, 0], vec![1, 1]];
        let decisions: Vec<_> = [0.2, 0.9, 0.4, 0.5, 1.0]
            .iter()
            .map(|&p| ClassDistribution::new(vec![1.0 - p, p]).unwrap())
            .collect();
        let overall = empirical_confusion(&labels, &decisions, 2).unwrap();
        let groups = group_confusions(&labels, &decisions, &attrs, &scheme).unwrap();
        assert!(scheme.groups()[0].is_population());
        assert!(groups[0].as_ref().unwrap().max_abs_diff(&overall) < 1e-15);
    }

    #[test]
    fn one_sample_per_cell_group_confusions() {
        // Example 1 cells, one sample each, label = the cell's majority class,
        // prediction = always positive.
        let dist = example1_distribution(0.5, &[0.6; 3], &[0.5; 3]).unwrap();
        let schema = AttributeSchema::binary(3).unwrap();
        let scheme = enumerate_groups(&schema, SchemeKind::Independent).unwrap();
        let attrs: Vec<Vec<usize>> = dist.cells().iter().map(|c| c.attributes.clone()).collect();
        let labels: Vec<usize> = dist
            .cells()
            .iter()
            .map(|c| usize::from(c.eta[1] > 0.5))
            .collect();
        let decisions = vec![ClassDistribution::one_hot(1, 2); 8];
        let groups = group_confusions(&labels, &decisions, &attrs, &scheme).unwrap();
        // Hand enumeration: cells with a_m = 1 have 3 or 2 positive coordinates
        // for 3 of their 4 members (0.864, 0.576, 0.576 are > 0.5; 0.384 is not).
        for (group, c) in scheme.groups().iter().zip(&groups) {
            let c = c.as_ref().unwrap();
            let expected_pos = if group.values()[0] == 1 { 0.75 } else { 0.25 };
            assert!((c[(1, 1)] - expected_pos).abs() < 1e-15);
            assert!((c[(0, 1)] - (1.0 - expected_pos)).abs() < 1e-15);
            assert_eq!(c[(0, 0)] + c[(1, 0)], 0.0);
        }
    }

    #[test]
    fn exact_constant_classifier() {
        let dist = example1_distribution(0.3, &[0.5], &[0.5]).unwrap();
        let schema = AttributeSchema::binary(1).unwrap();
        let scheme = enumerate_groups(&schema, SchemeKind::Independent).unwrap();
        let decisions = vec![ClassDistribution::one_hot(0, 2); dist.cells().len()];
        let set = exact_confusion(&dist, &decisions, &scheme).unwrap();
        assert!((set.overall[(1, 0)] - 0.3).abs() < 1e-15);
        assert!((set.overall[(0, 0)] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn exact_bayes_error_on_example1() {
        let dist = example1_distribution(0.5, &[0.6; 3], &[0.5; 3]).unwrap();
        let schema = AttributeSchema::binary(3).unwrap();
        let scheme = enumerate_groups(&schema, SchemeKind::Intersectional).unwrap();
        let decisions: Vec<_> = dist
            .cells()
            .iter()
            .map(|c| ClassDistribution::one_hot(usize::from(c.eta[1] > 0.5), 2))
            .collect();
        let set = exact_confusion(&dist, &decisions, &scheme).unwrap();
        let error = set.overall[(0, 1)] + set.overall[(1, 0)];
        // Brute force over the 8 cells: Σ min(p, 1 − p) / 8.
        let brute: f64 = dist
            .cells()
            .iter()
            .map(|c| c.mass * c.eta[1].min(1.0 - c.eta[1]))
            .sum();
        assert!((error - brute).abs() < 1e-15);
        assert!((error - (0.136 + 3.0 * 0.424 + 3.0 * 0.384 + 0.256) / 8.0).abs() < 1e-12);
    }
}
