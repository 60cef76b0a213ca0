//! Exact finite distributions and brute-force ground truth.
//!
//! A [`FiniteDistribution`] lists every attribute cell with its mass and its
//! class-conditional distribution. On such tables the fair-optimal randomized
//! classifier is a small LP over per-cell decisions, solved here by
//! [`simplex`].

pub mod simplex;

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::confusion::{exact_confusion, ClassDistribution, ConfusionSet};
use crate::data::Dataset;
use crate::error::{check_len, Error, Result};
use crate::groups::{enumerate_groups, AttributeSchema, Group, SchemeKind};
use crate::matrix::SquareMatrix;
use crate::metrics::{build_dp, max_fairviol_dp, ConstraintSet, DpWeighting, LinearMetric};
use simplex::{LinearProgram, LpStatus, Relation};

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub attributes: Vec<usize>,
    pub mass: f64,
    pub eta: ClassDistribution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDistribution {
    schema: AttributeSchema,
    cells: Vec<Cell>,
    k: usize,
}

impl FiniteDistribution {
    pub fn new(schema: AttributeSchema, cells: Vec<Cell>) -> Result<Self> {
        let first = cells
            .first()
            .ok_or_else(|| Error::Distribution("no cells".into()))?;
        let k = first.eta.num_classes();
        let mut total = 0.0;
        for c in &cells {
            schema.validate(&c.attributes)?;
            check_len(k, c.eta.num_classes(), "cell class distribution")?;
            if !(c.mass >= 0.0) {
                return Err(Error::Distribution(format!(
                    "negative cell mass {}",
                    c.mass
                )));
            }
            total += c.mass;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Distribution(format!(
                "cell masses sum to {total}, not 1"
            )));
        }
        Ok(Self { schema, cells, k })
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn group_mass(&self, group: &Group) -> f64 {
        self.cells
            .iter()
            .filter(|c| group.contains(&c.attributes))
            .map(|c| c.mass)
            .sum()
    }

    /// `P(Y | a ∈ group)`, summed over member cells.
    pub fn conditional(&self, group: &Group) -> Result<ClassDistribution> {
        let mass = self.group_mass(group);
        if !(mass > 0.0) {
            return Err(Error::Distribution(format!(
                "group {} has zero mass",
                group.label(&self.schema)
            )));
        }
        let mut p = vec![0.0; self.k];
        for c in self.cells.iter().filter(|c| group.contains(&c.attributes)) {
            for (pk, ek) in p.iter_mut().zip(c.eta.iter()) {
                *pk += c.mass * ek / mass;
            }
        }
        ClassDistribution::new(p)
    }

    /// Cell masses and label frequencies of a sample, ignoring its features.
    pub fn empirical(ds: &Dataset) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::Data("empty sample".into()));
        }
        let k = ds.num_classes();
        let mut counts: BTreeMap<&[usize], Vec<f64>> = BTreeMap::new();
        for (a, &y) in ds.attributes().iter().zip(ds.labels()) {
            counts.entry(a.as_slice()).or_insert_with(|| vec![0.0; k])[y] += 1.0;
        }
        let n = ds.len() as f64;
        let cells = counts
            .into_iter()
            .map(|(a, c)| {
                let total: f64 = c.iter().sum();
                Ok(Cell {
                    attributes: a.to_vec(),
                    mass: total / n,
                    eta: ClassDistribution::new(c.iter().map(|v| v / total).collect())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(ds.schema().clone(), cells)
    }
}

fn check_probability(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Parameter(format!("{name} = {v} is outside [0, 1]")));
    }
    Ok(())
}

/// `P(Y = 1 | A_j = b_j, j ∈ I) = P(Y) Π_{j∈I} (q_j/a_j)^{b_j} ((1−q_j)/(1−a_j))^{1−b_j}`
/// for attributes independent given `Y` and unconditionally.
pub fn independence_conditional(p_y: f64, q: &[f64], a: &[f64], group: &Group) -> f64 {
    group
        .indices()
        .iter()
        .zip(group.values())
        .fold(p_y, |acc, (&j, &b)| {
            acc * if b == 1 {
                q[j] / a[j]
            } else {
                (1.0 - q[j]) / (1.0 - a[j])
            }
        })
}

/// Binary attributes with `P(A_j = 1 | Y = 1) = q_j` and `P(A_j = 1) = a_j`,
/// independent in both senses, and `P(Y = 1) = p_y`.
pub fn example1_distribution(p_y: f64, q: &[f64], a: &[f64]) -> Result<FiniteDistribution> {
    check_len(q.len(), a.len(), "attribute rates")?;
    let schema = AttributeSchema::binary(q.len())?;
    check_probability("P(Y)", p_y)?;
    for (j, (&qj, &aj)) in q.iter().zip(a).enumerate() {
        check_probability(&format!("q_{}", j + 1), qj)?;
        if !(aj > 0.0 && aj < 1.0) {
            return Err(Error::Parameter(format!(
                "a_{} = {aj} must lie in (0, 1)",
                j + 1
            )));
        }
    }
    let mut cells = Vec::with_capacity(schema.num_cells());
    for attributes in schema.cells() {
        let pairs = attributes.iter().copied().enumerate().collect();
        let group = Group::new(&schema, pairs)?;
        let eta1 = independence_conditional(p_y, q, a, &group);
        check_probability(&format!("P(Y | {})", group.label(&schema)), eta1)?;
        let mass = attributes
            .iter()
            .zip(a)
            .map(|(&b, &aj)| if b == 1 { aj } else { 1.0 - aj })
            .product();
        cells.push(Cell {
            attributes,
            mass,
            eta: ClassDistribution::new(vec![1.0 - eta1, eta1])?,
        });
    }
    FiniteDistribution::new(schema, cells)
}

fn check_binary(dist: &FiniteDistribution) -> Result<()> {
    if dist.num_classes() != 2 {
        return Err(Error::Parameter(format!(
            "binary labels required, got K = {}",
            dist.num_classes()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MedianPredictor {
    pub rate: f64,
    pub error: f64,
}

/// Constant positive rate at the lower weighted median of `P(Y = 1 | cell)`,
/// scored by `Σ P(cell) |P(Y = 1 | cell) − p*|`.
pub fn weighted_median_fair_predictor(dist: &FiniteDistribution) -> Result<MedianPredictor> {
    check_binary(dist)?;
    let mut order: Vec<(f64, f64)> = dist.cells().iter().map(|c| (c.eta[1], c.mass)).collect();
    order.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut cumulative = 0.0;
    let mut rate = order[order.len() - 1].0;
    for &(eta, mass) in &order {
        cumulative += mass;
        if cumulative >= 0.5 - 1e-12 {
            rate = eta;
            break;
        }
    }
    let error = order
        .iter()
        .map(|&(eta, mass)| mass * (eta - rate).abs())
        .sum();
    Ok(MedianPredictor { rate, error })
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpObjective {
    Metric(LinearMetric),
    /// `Σ P(cell) |η_1(cell) − h_1(cell)|`, binary only.
    AbsoluteDeviation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub value: f64,
    pub decisions: Vec<ClassDistribution>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
}

impl LpOutcome {
    pub fn optimal(self) -> Result<LpSolution> {
        match self {
            LpOutcome::Optimal(s) => Ok(s),
            LpOutcome::Infeasible => Err(Error::Constraint("the fairness LP is infeasible".into())),
        }
    }
}

/// Minimizes the objective over per-cell randomized decisions subject to
/// `Φ(C, {C^g}) ≤ 0` with exact group masses.
///
/// Among optimal decisions, the one with the smallest maximum per-cell
/// deviation `|h_k(cell) − η_k(cell)|` is returned.
pub fn lp_fair_optimum(
    dist: &FiniteDistribution,
    objective: &LpObjective,
    constraints: &ConstraintSet,
) -> Result<LpOutcome> {
    let k = dist.num_classes();
    let cells = dist.cells();
    let nc = cells.len();
    if constraints.scheme().schema() != dist.schema() {
        return Err(Error::Schema(
            "constraint scheme and distribution disagree".into(),
        ));
    }
    check_len(k, constraints.num_classes(), "constraint classes")?;
    let groups = constraints.scheme().groups();
    let group_mass: Vec<f64> = groups.iter().map(|g| dist.group_mass(g)).collect();
    let h = |c: usize, l: usize| c * k + l;
    let n_h = nc * k;

    // Objective coefficients over h, plus the t_c epigraph variables when needed.
    let (mut cost, base) = match objective {
        LpObjective::Metric(metric) => {
            check_len(k, metric.num_classes(), "metric classes")?;
            let d = metric.matrix();
            let mut cost = vec![0.0; n_h];
            for (c, cell) in cells.iter().enumerate() {
                for l in 0..k {
                    cost[h(c, l)] =
                        cell.mass * (0..k).map(|i| d[(i, l)] * cell.eta[i]).sum::<f64>();
                }
            }
            (cost, 0.0)
        }
        LpObjective::AbsoluteDeviation => {
            check_binary(dist)?;
            let mut cost = vec![0.0; n_h + nc];
            for (c, cell) in cells.iter().enumerate() {
                cost[n_h + c] = cell.mass;
            }
            (cost, 0.0)
        }
    };
    let n_vars = cost.len();

    let mut rows: Vec<(Vec<(usize, f64)>, Relation, f64)> = Vec::new();
    for c in 0..nc {
        rows.push(((0..k).map(|l| (h(c, l), 1.0)).collect(), Relation::Eq, 1.0));
    }
    if matches!(objective, LpObjective::AbsoluteDeviation) {
        for (c, cell) in cells.iter().enumerate() {
            let eta = cell.eta[1];
            rows.push((vec![(n_h + c, 1.0), (h(c, 1), 1.0)], Relation::Ge, eta));
            rows.push((vec![(n_h + c, 1.0), (h(c, 1), -1.0)], Relation::Ge, -eta));
        }
    }
    for con in constraints.constraints() {
        let mut terms = Vec::with_capacity(n_h);
        for (c, cell) in cells.iter().enumerate() {
            for l in 0..k {
                let mut coef = cell.mass * (0..k).map(|i| con.u[(i, l)] * cell.eta[i]).sum::<f64>();
                for (g, v) in &con.v {
                    if group_mass[*g] > 0.0 && groups[*g].contains(&cell.attributes) {
                        coef -= cell.mass / group_mass[*g]
                            * (0..k).map(|i| v[(i, l)] * cell.eta[i]).sum::<f64>();
                    }
                }
                terms.push((h(c, l), coef));
            }
        }
        rows.push((terms, Relation::Le, con.slack));
    }

    let mut lp = LinearProgram::new(cost.clone());
    for (terms, rel, rhs) in &rows {
        lp.add_row(terms, *rel, *rhs);
    }
    let opt = match simplex::solve(&lp) {
        LpStatus::Optimal { value, .. } => value + base,
        LpStatus::Infeasible => return Ok(LpOutcome::Infeasible),
        LpStatus::Unbounded => {
            return Err(Error::Constraint("the fairness LP is unbounded".into()));
        }
    };

    // Second pass: minimize z ≥ |h − η| subject to staying optimal.
    let z = n_vars;
    let mut tie = vec![0.0; n_vars + 1];
    tie[z] = 1.0;
    let mut lp2 = LinearProgram::new(tie);
    for (terms, rel, rhs) in &rows {
        lp2.add_row(terms, *rel, *rhs);
    }
    cost.push(0.0);
    let objective_terms: Vec<(usize, f64)> = cost.iter().copied().enumerate().collect();
    lp2.add_row(&objective_terms, Relation::Le, opt + 1e-10);
    for (c, cell) in cells.iter().enumerate() {
        for l in 0..k {
            let eta = cell.eta[l];
            lp2.add_row(&[(z, 1.0), (h(c, l), -1.0)], Relation::Ge, -eta);
            lp2.add_row(&[(z, 1.0), (h(c, l), 1.0)], Relation::Ge, eta);
        }
    }
    let x = match simplex::solve(&lp2) {
        LpStatus::Optimal { x, .. } => x,
        other => {
            return Err(Error::Constraint(format!(
                "tie-break pass failed after an optimal first pass: {other:?}"
            )))
        }
    };
    let decisions = (0..nc)
        .map(|c| {
            let mut p: Vec<f64> = (0..k).map(|l| x[h(c, l)].clamp(0.0, 1.0)).collect();
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= s);
            ClassDistribution::new(p)
        })
        .collect::<Result<Vec<_>>>()?;
    let value = match objective {
        LpObjective::Metric(metric) => {
            let scheme = constraints.scheme();
            crate::metrics::eval_error(metric, &exact_confusion(dist, &decisions, scheme)?.overall)?
        }
        LpObjective::AbsoluteDeviation => absolute_deviation(dist, &decisions),
    };
    Ok(LpOutcome::Optimal(LpSolution { value, decisions }))
}

/// `Σ P(cell) |η_1(cell) − h_1(cell)|`.
pub fn absolute_deviation(dist: &FiniteDistribution, decisions: &[ClassDistribution]) -> f64 {
    dist.cells()
        .iter()
        .zip(decisions)
        .map(|(c, h)| c.mass * (c.eta[1] - h[1]).abs())
        .sum()
}

/// Exact demographic-parity constraints over `kind` for the distribution.
pub fn exact_dp(dist: &FiniteDistribution, kind: SchemeKind, slack: f64) -> Result<ConstraintSet> {
    let scheme = enumerate_groups(dist.schema(), kind)?;
    let fractions: Vec<f64> = scheme.groups().iter().map(|g| dist.group_mass(g)).collect();
    build_dp(&scheme, &fractions, slack, DpWeighting::Uniform)
}

/// Exact `max_g |C^g_{·,1} − C_{·,1}|` over the groups of `kind`.
pub fn exact_fairviol(
    dist: &FiniteDistribution,
    decisions: &[ClassDistribution],
    kind: SchemeKind,
) -> Result<f64> {
    let scheme = enumerate_groups(dist.schema(), kind)?;
    max_fairviol_dp(&exact_confusion(dist, decisions, &scheme)?, None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardImplicationReport {
    pub trials: usize,
    pub groups_checked: usize,
    pub failures: usize,
    /// Largest `φ_g − ν` seen over overlapping groups.
    pub max_excess: f64,
    pub independent_error: f64,
    pub intersectional_fairviol: f64,
}

impl ForwardImplicationReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.intersectional_fairviol > 0.0
    }
}

impl fmt::Display for ForwardImplicationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "forward direction: {} trials, {} group checks, {} failures, max excess {:.3e}",
            self.trials, self.groups_checked, self.failures, self.max_excess
        )?;
        write!(
            f,
            "converse: independent-fair optimum error {:.6}, intersectional fairviol {:.6}",
            self.independent_error, self.intersectional_fairviol
        )
    }
}

fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

fn phi(u: &SquareMatrix, v: &SquareMatrix, c: &SquareMatrix, cg: &SquareMatrix) -> f64 {
    u.dot(c).unwrap_or(f64::NAN) - v.dot(cg).unwrap_or(f64::NAN)
}

/// Random linear constraints whose slack makes every intersectional group
/// feasible; every gerrymandering group is then checked against the same slack.
pub fn check_forward_implication(trials: usize, seed: u64) -> Result<ForwardImplicationReport> {
    if trials == 0 {
        return Err(Error::Parameter("trials must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut groups_checked = 0;
    let mut max_excess = f64::NEG_INFINITY;
    for _ in 0..trials {
        let m = rng.gen_range(1..=3);
        let cards: Vec<usize> = (0..m).map(|_| rng.gen_range(2..=3)).collect();
        let names = (1..=m).map(|j| format!("a{j}")).collect();
        let schema = AttributeSchema::new(cards, names)?;
        let k = rng.gen_range(2..=3);
        let cells = schema.cells();
        let mass = random_simplex(&mut rng, cells.len());
        let omega = random_simplex(&mut rng, k);
        let confusions: Vec<SquareMatrix> = (0..cells.len())
            .map(|_| {
                let mut c = SquareMatrix::zeros(k);
                for (i, &w) in omega.iter().enumerate() {
                    for (j, p) in random_simplex(&mut rng, k).into_iter().enumerate() {
                        c[(i, j)] = w * p;
                    }
                }
                c
            })
            .collect();
        let mut overall = SquareMatrix::zeros(k);
        for (c, &w) in confusions.iter().zip(&mass) {
            overall.add_scaled(c, w);
        }
        let u = SquareMatrix::from_fn(k, |_, _| rng.gen_range(-1.0..1.0));
        let v = SquareMatrix::from_fn(k, |_, _| rng.gen_range(-1.0..1.0));
        let slack = confusions
            .iter()
            .map(|c| phi(&u, &v, &overall, c))
            .fold(f64::NEG_INFINITY, f64::max);
        let scheme = enumerate_groups(&schema, SchemeKind::Gerrymandering)?;
        for g in scheme.groups() {
            let mut cg = SquareMatrix::zeros(k);
            let mut pg = 0.0;
            for ((cell, c), &w) in cells.iter().zip(&confusions).zip(&mass) {
                if g.contains(cell) {
                    cg.add_scaled(c, w);
                    pg += w;
                }
            }
            let excess = phi(&u, &v, &overall, &cg.scaled(1.0 / pg)) - slack;
            max_excess = max_excess.max(excess);
            groups_checked += 1;
            if !(excess <= 1e-12) {
                failures += 1;
            }
        }
    }

    let dist = example1_distribution(0.5, &[0.6; 3], &[0.5; 3])?;
    let indep = lp_fair_optimum(
        &dist,
        &LpObjective::AbsoluteDeviation,
        &exact_dp(&dist, SchemeKind::Independent, 0.0)?,
    )?
    .optimal()?;
    let intersectional_fairviol =
        exact_fairviol(&dist, &indep.decisions, SchemeKind::Intersectional)?;
    Ok(ForwardImplicationReport {
        trials,
        groups_checked,
        failures,
        max_excess,
        independent_error: indep.value,
        intersectional_fairviol,
    })
}

/// Everything `verify-theory` prints, computed on the standard example.
#[derive(Debug, Clone)]
pub struct TheoryReport {
    pub distribution: FiniteDistribution,
    /// `(group label, P(Y = 1 | group))` for every gerrymandering group.
    pub conditionals: Vec<(String, f64)>,
    pub median: MedianPredictor,
    pub independent: LpSolution,
    pub intersectional: LpSolution,
    pub bayes: LpSolution,
    pub forward: ForwardImplicationReport,
}

pub fn theory_report(trials: usize, seed: u64) -> Result<TheoryReport> {
    let dist = example1_distribution(0.5, &[0.6; 3], &[0.5; 3])?;
    let scheme = enumerate_groups(dist.schema(), SchemeKind::Gerrymandering)?;
    let conditionals = scheme
        .groups()
        .iter()
        .map(|g| Ok((g.label(dist.schema()), dist.conditional(g)?[1])))
        .collect::<Result<Vec<_>>>()?;
    let abs = LpObjective::AbsoluteDeviation;
    let independent =
        lp_fair_optimum(&dist, &abs, &exact_dp(&dist, SchemeKind::Independent, 0.0)?)?.optimal()?;
    let intersectional = lp_fair_optimum(
        &dist,
        &abs,
        &exact_dp(&dist, SchemeKind::Intersectional, 0.0)?,
    )?
    .optimal()?;
    let bayes = lp_fair_optimum(
        &dist,
        &LpObjective::Metric(LinearMetric::zero_one(2)),
        &exact_dp(&dist, SchemeKind::Independent, 1.0)?,
    )?
    .optimal()?;
    Ok(TheoryReport {
        median: weighted_median_fair_predictor(&dist)?,
        forward: check_forward_implication(trials, seed)?,
        distribution: dist,
        conditionals,
        independent,
        intersectional,
        bayes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// `P(Y = 1 | group)` on the standard example, keyed by group label.
const EXAMPLE_CONDITIONALS: [(&str, f64); 10] = [
    ("all", 0.5),
    ("a1=1", 0.6),
    ("a1=0", 0.4),
    ("a1=1&a2=1", 0.72),
    ("a1=1&a2=0", 0.48),
    ("a1=0&a2=0", 0.32),
    ("a1=1&a2=1&a3=1", 0.864),
    ("a1=1&a2=1&a3=0", 0.576),
    ("a1=1&a2=0&a3=0", 0.384),
    ("a1=0&a2=0&a3=0", 0.256),
];

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

impl TheoryReport {
    /// Pass/fail checks against the known values of the standard example.
    pub fn checks(&self) -> Vec<TheoryCheck> {
        let lookup = |label: &str| {
            self.conditionals
                .iter()
                .find(|(l, _)| l == label)
                .map(|c| c.1)
        };
        let worst = EXAMPLE_CONDITIONALS
            .iter()
            .map(|(l, want)| lookup(l).map_or(f64::INFINITY, |got| (got - want).abs()))
            .fold(0.0, f64::max);
        let by_ones = |sol: &LpSolution, ones: usize| {
            self.distribution
                .cells()
                .iter()
                .zip(&sol.decisions)
                .filter(|(c, _)| c.attributes.iter().sum::<usize>() == ones)
                .map(|(_, h)| h[1])
                .collect::<Vec<_>>()
        };
        let expected = [0.656, 0.384, 0.576, 0.464];
        let decisions_ok = (0..4).all(|ones| {
            by_ones(&self.independent, ones)
                .iter()
                .all(|h| close(*h, expected[ones], 1e-6))
        });
        vec![
            TheoryCheck {
                name: "conditionals",
                passed: worst <= 1e-12,
                detail: format!("max deviation {worst:.3e}"),
            },
            TheoryCheck {
                name: "median predictor",
                passed: close(self.median.rate, 0.384, 1e-9)
                    && close(self.median.error, 0.148, 1e-9),
                detail: format!(
                    "p* = {:.9}, error {:.9}",
                    self.median.rate, self.median.error
                ),
            },
            TheoryCheck {
                name: "independent DP optimum",
                passed: close(self.independent.value, 0.1, 1e-6) && decisions_ok,
                detail: format!(
                    "value {:.9}, decisions by number of ones {:?}",
                    self.independent.value,
                    (0..4)
                        .map(|o| by_ones(&self.independent, o))
                        .collect::<Vec<_>>()
                ),
            },
            TheoryCheck {
                name: "intersectional DP optimum",
                passed: close(self.intersectional.value, 0.148, 1e-6),
                detail: format!("value {:.9}", self.intersectional.value),
            },
            TheoryCheck {
                name: "forward implication",
                passed: self.forward.failures == 0,
                detail: format!(
                    "{} trials, {} failures, max excess {:.3e}",
                    self.forward.trials, self.forward.failures, self.forward.max_excess
                ),
            },
            TheoryCheck {
                name: "counterexample",
                passed: close(self.forward.intersectional_fairviol, 0.156, 1e-9),
                detail: format!(
                    "intersectional fairviol {:.9}",
                    self.forward.intersectional_fairviol
                ),
            },
        ]
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "P(Y=1 | group), P(Y)=0.5, q=0.6, a=0.5, M=3");
        for (label, p) in &self.conditionals {
            let _ = writeln!(s, "  {label:<16} {p:.6}");
        }
        let _ = writeln!(
            s,
            "intersectional median predictor: p* = {:.6}, error {:.6}",
            self.median.rate, self.median.error
        );
        let _ = writeln!(
            s,
            "LP optimum, intersectional DP (nu=0): {:.6}",
            self.intersectional.value
        );
        let _ = writeln!(
            s,
            "LP optimum, independent DP (nu=0):    {:.6}",
            self.independent.value
        );
        let _ = writeln!(
            s,
            "LP optimum, unconstrained 0-1 error:  {:.6}",
            self.bayes.value
        );
        let _ = writeln!(s, "{}", self.forward);
        for c in self.checks() {
            let _ = writeln!(
                s,
                "{} {}: {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            );
        }
        s
    }

    /// One row per (solution, cell) with the optimal positive-prediction probability.
    pub fn write_decisions_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let m = self.distribution.schema().num_attributes();
        let attrs: Vec<String> = self.distribution.schema().names().to_vec();
        writeln!(w, "solution,{},mass,eta_1,h_1", attrs.join(","))?;
        for (name, sol) in [
            ("intersectional_dp", &self.intersectional),
            ("independent_dp", &self.independent),
            ("unconstrained", &self.bayes),
        ] {
            for (cell, h) in self.distribution.cells().iter().zip(&sol.decisions) {
                let a: Vec<String> = cell.attributes.iter().map(|v| v.to_string()).collect();
                debug_assert_eq!(a.len(), m);
                writeln!(
                    w,
                    "{name},{},{},{},{}",
                    a.join(","),
                    cell.mass,
                    cell.eta[1],
                    h[1]
                )?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Exact confusions of per-cell decisions under `kind`, for callers that
/// want more than the fairness summary.
pub fn exact_confusions(
    dist: &FiniteDistribution,
    decisions: &[ClassDistribution],
    kind: SchemeKind,
) -> Result<ConfusionSet> {
    exact_confusion(dist, decisions, &enumerate_groups(dist.schema(), kind)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::eval_error;

    fn example1() -> FiniteDistribution {
        example1_distribution(0.5, &[0.6; 3], &[0.5; 3]).unwrap()
    }

    fn cell_eta(dist: &FiniteDistribution, a: &[usize]) -> f64 {
        dist.cells().iter().find(|c| c.attributes == a).unwrap().eta[1]
    }

    #[test]
    fn example1_corner_cells() {
        let d = example1();
        assert!((cell_eta(&d, &[1, 1, 1]) - 0.864).abs() < 1e-12);
        assert!((cell_eta(&d, &[0, 0, 0]) - 0.256).abs() < 1e-12);
        assert_eq!(d.cells().len(), 8);
        assert!(d.cells().iter().all(|c| (c.mass - 0.125).abs() < 1e-15));
    }

    #[test]
    fn uninformative_attributes_collapse() {
        let d = example1_distribution(0.3, &[0.4, 0.7], &[0.4, 0.7]).unwrap();
        assert!(d.cells().iter().all(|c| (c.eta[1] - 0.3).abs() < 1e-12));
    }

    #[test]
    fn inconsistent_parameters_are_rejected() {
        assert!(matches!(
            example1_distribution(0.9, &[0.9; 3], &[0.5; 3]),
            Err(Error::Parameter(_))
        ));
        assert!(example1_distribution(0.5, &[0.6], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn subset_conditionals_agree_with_closed_form() {
        let d = example1();
        let scheme = enumerate_groups(d.schema(), SchemeKind::Gerrymandering).unwrap();
        for g in scheme.groups() {
            let summed = d.conditional(g).unwrap()[1];
            let closed = independence_conditional(0.5, &[0.6; 3], &[0.5; 3], g);
            assert!((summed - closed).abs() < 1e-12, "{}", g.label(d.schema()));
        }
    }

    #[test]
    fn median_two_cell_example() {
        let schema = AttributeSchema::binary(1).unwrap();
        let cells = [0.3, 0.7]
            .iter()
            .enumerate()
            .map(|(b, &p)| Cell {
                attributes: vec![b],
                mass: 0.5,
                eta: ClassDistribution::new(vec![1.0 - p, p]).unwrap(),
            })
            .collect();
        let d = FiniteDistribution::new(schema, cells).unwrap();
        let m = weighted_median_fair_predictor(&d).unwrap();
        assert_eq!(m.rate, 0.3);
        assert!((m.error - 0.2).abs() < 1e-12);
    }

    #[test]
    fn median_example1() {
        let m = weighted_median_fair_predictor(&example1()).unwrap();
        assert!((m.rate - 0.384).abs() < 1e-9);
        assert!((m.error - 0.148).abs() < 1e-9);
    }

    #[test]
    fn unconstrained_lp_is_bayes() {
        let d = example1();
        let sol = lp_fair_optimum(
            &d,
            &LpObjective::Metric(LinearMetric::zero_one(2)),
            &exact_dp(&d, SchemeKind::Independent, 10.0).unwrap(),
        )
        .unwrap()
        .optimal()
        .unwrap();
        let bayes: f64 = d
            .cells()
            .iter()
            .map(|c| c.mass * c.eta[1].min(1.0 - c.eta[1]))
            .sum();
        assert!((sol.value - bayes).abs() < 1e-9);
        for (c, h) in d.cells().iter().zip(&sol.decisions) {
            assert!((h[1] - if c.eta[1] > 0.5 { 1.0 } else { 0.0 }).abs() < 1e-6);
        }
        let conf = exact_confusions(&d, &sol.decisions, SchemeKind::Intersectional).unwrap();
        let direct = eval_error(&LinearMetric::zero_one(2), &conf.overall).unwrap();
        assert!((direct - sol.value).abs() < 1e-9);
    }

    #[test]
    fn independent_and_intersectional_optima() {
        let d = example1();
        let abs = LpObjective::AbsoluteDeviation;
        let indep = lp_fair_optimum(
            &d,
            &abs,
            &exact_dp(&d, SchemeKind::Independent, 0.0).unwrap(),
        )
        .unwrap()
        .optimal()
        .unwrap();
        assert!((indep.value - 0.1).abs() < 1e-6);
        for (c, h) in d.cells().iter().zip(&indep.decisions) {
            let ones = c.attributes.iter().sum::<usize>();
            let expected = [0.656, 0.384, 0.576, 0.464][ones];
            assert!(
                (h[1] - expected).abs() < 1e-6,
                "{:?}: {}",
                c.attributes,
                h[1]
            );
        }
        let inter = lp_fair_optimum(
            &d,
            &abs,
            &exact_dp(&d, SchemeKind::Intersectional, 0.0).unwrap(),
        )
        .unwrap()
        .optimal()
        .unwrap();
        assert!((inter.value - 0.148).abs() < 1e-6);
        let median = weighted_median_fair_predictor(&d).unwrap();
        assert!((inter.value - median.error).abs() < 1e-6);
    }

    #[test]
    fn infeasible_lp_is_reported() {
        // P(h = 0) ≤ 0 and P(h = 1) ≤ 0 cannot both hold.
        let d = example1();
        let scheme = enumerate_groups(d.schema(), SchemeKind::Intersectional).unwrap();
        let column = |l: usize| SquareMatrix::from_fn(2, |_, j| if j == l { 1.0 } else { 0.0 });
        let constraint = |l: usize| crate::metrics::LinearConstraint {
            u: column(l),
            v: vec![],
            slack: 0.0,
            label: format!("never predict {l}"),
        };
        let one = ConstraintSet::new(vec![constraint(1)], &scheme, 2).unwrap();
        let sol = lp_fair_optimum(&d, &LpObjective::AbsoluteDeviation, &one)
            .unwrap()
            .optimal()
            .unwrap();
        assert!(sol.decisions.iter().all(|h| h[1].abs() < 1e-9));
        let both = ConstraintSet::new(vec![constraint(0), constraint(1)], &scheme, 2).unwrap();
        assert_eq!(
            lp_fair_optimum(&d, &LpObjective::AbsoluteDeviation, &both).unwrap(),
            LpOutcome::Infeasible
        );
    }

    #[test]
    fn forward_implication_holds() {
        let r = check_forward_implication(200, 7).unwrap();
        assert_eq!(r.failures, 0);
        assert!((r.intersectional_fairviol - 0.156).abs() < 1e-9);
        assert!(r.passed());
    }

    #[test]
    fn identical_intersections_satisfy_everything() {
        let d = example1();
        let h = vec![ClassDistribution::new(vec![0.4, 0.6]).unwrap(); 8];
        for kind in [SchemeKind::Intersectional, SchemeKind::Gerrymandering] {
            let cs = exact_dp(&d, kind, 0.0).unwrap();
            let conf = exact_confusions(&d, &h, kind).unwrap();
            let v = crate::metrics::eval_violations(&cs, &conf).unwrap();
            assert!(v.values.iter().all(|x| *x <= 1e-12));
        }
    }

    #[test]
    fn report_renders_and_writes() {
        let r = theory_report(20, 1).unwrap();
        let text = r.render();
        assert!(text.contains("PASS forward implication"));
        let checks = r.checks();
        assert_eq!(checks.len(), 6);
        assert!(checks.iter().all(|c| c.passed), "{checks:?}");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cells.csv");
        r.write_decisions_csv(&path).unwrap();
        let csv = std::fs::read_to_string(path).unwrap();
        assert_eq!(csv.lines().count(), 1 + 3 * 8);
        assert!(csv.starts_with("solution,a1,a2,a3,mass,eta_1,h_1"));
    }
}
