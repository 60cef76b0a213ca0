use std::sync::Arc;

use groupfair::confusion::ClassDistribution;
use groupfair::data::{synthesize, Dataset};
use groupfair::eta::{self, FitConfig};
use groupfair::groups::{enumerate_groups, MembershipIndex, SchemeKind};
use groupfair::matrix::argmax;
use groupfair::metrics::{build_dp, max_fairviol_dp, ConstraintSet, DpWeighting, LinearMetric};
use groupfair::oracles::ProbabilityEstimate;
use groupfair::solver::{Solver, SolverConfig};
use groupfair::theory::{
    exact_confusions, exact_dp, example1_distribution, lp_fair_optimum, FiniteDistribution,
    LpObjective,
};

#[derive(Debug)]
struct CellTable(FiniteDistribution);

impl ProbabilityEstimate for CellTable {
    fn num_classes(&self) -> usize {
        self.0.num_classes()
    }

    fn predict_proba(&self, _z: &[f64], a: &[usize]) -> groupfair::Result<ClassDistribution> {
        let cell = self.0.cells().iter().find(|c| c.attributes == a).unwrap();
        Ok(cell.eta.clone())
    }
}

fn example1() -> FiniteDistribution {
    example1_distribution(0.5, &[0.6; 3], &[0.5; 3]).unwrap()
}

fn dp(ds: &Dataset, slack: f64) -> ConstraintSet {
    let scheme = enumerate_groups(ds.schema(), SchemeKind::Independent).unwrap();
    let index = MembershipIndex::build(&scheme, ds.attributes()).unwrap();
    let fr: Vec<f64> = index.stats().iter().map(|s| s.fraction).collect();
    build_dp(&scheme, &fr, slack, DpWeighting::Uniform).unwrap()
}

fn zero_one_error(labels: &[usize], predictions: &[usize]) -> f64 {
    let wrong = labels
        .iter()
        .zip(predictions)
        .filter(|(y, p)| y != p)
        .count();
    wrong as f64 / labels.len() as f64
}

#[test]
fn huge_slack_reproduces_the_unconstrained_plugin() {
    let ds = synthesize(&example1(), 3000, 1).unwrap();
    let cfg = SolverConfig {
        iterations: 20,
        ..SolverConfig::default()
    };
    let out = Solver::new(&ds, LinearMetric::zero_one(2), dp(&ds, 10.0), cfg.clone())
        .unwrap()
        .run()
        .unwrap();
    let model = eta::fit(&ds, &cfg.eta_fit).unwrap();
    let bayes: Vec<usize> = model
        .predict_dataset(&ds)
        .unwrap()
        .iter()
        .map(|p| argmax(p))
        .collect();
    let c = out.train_confusions.overall.matrix();
    let err = c[(0, 1)] + c[(1, 0)];
    assert!((err - zero_one_error(ds.labels(), &bayes)).abs() < 1e-9);
    assert!(out.lambda_bar.iter().all(|l| l.abs() < 1e-12));
}

#[test]
fn one_iteration_is_one_response() {
    let ds = synthesize(&example1(), 2000, 2).unwrap();
    let cfg = SolverConfig {
        iterations: 1,
        ..SolverConfig::default()
    };
    let out = Solver::new(&ds, LinearMetric::zero_one(2), dp(&ds, 0.0), cfg.clone())
        .unwrap()
        .run()
        .unwrap();
    assert_eq!(out.ensemble.len(), 1);
    assert_eq!(out.trace.len(), 1);
    assert_eq!(out.trace.lambdas[0], vec![0.0; out.lambda_bar.len()]);
    let model = eta::fit(&ds, &FitConfig::default()).unwrap();
    let direct: Vec<usize> = model
        .predict_dataset(&ds)
        .unwrap()
        .iter()
        .map(|p| argmax(p))
        .collect();
    assert_eq!(
        out.ensemble.members()[0].predict_dataset(&ds).unwrap(),
        direct
    );
}

#[test]
fn inactive_constraints_have_no_gap() {
    let ds = synthesize(&example1(), 5000, 3).unwrap();
    let exact: Arc<dyn ProbabilityEstimate> =
        Arc::new(CellTable(FiniteDistribution::empirical(&ds).unwrap()));
    let cfg = SolverConfig {
        iterations: 25,
        ..SolverConfig::default()
    };
    let mut solver =
        Solver::with_estimate(&ds, LinearMetric::zero_one(2), dp(&ds, 1.0), cfg, exact).unwrap();
    let out = solver.run().unwrap();
    let gap = solver.empirical_duality_gap(&out).unwrap();
    assert!((-1e-9..=1e-6).contains(&gap), "gap {gap}");
    assert!(out
        .trace
        .lambdas
        .iter()
        .all(|l| l.iter().all(|x| *x == 0.0)));
}

#[test]
fn exact_eta_decisions_match_the_lp_optimum() {
    let dist = example1();
    let ds = synthesize(&dist, 20000, 7).unwrap();
    let eta: Arc<dyn ProbabilityEstimate> = Arc::new(CellTable(dist.clone()));
    let mut solver = Solver::with_estimate(
        &ds,
        LinearMetric::zero_one(2),
        dp(&ds, 0.01),
        SolverConfig::default(),
        eta,
    )
    .unwrap();
    let out = solver.run().unwrap();
    // Per-cell decision probabilities of the ensemble, evaluated under the exact law.
    let decisions: Vec<ClassDistribution> = dist
        .cells()
        .iter()
        .map(|cell| {
            let i = ds
                .attributes()
                .iter()
                .position(|a| *a == cell.attributes)
                .unwrap();
            let one = ds.subset(&[i]).unwrap();
            out.ensemble.decision_distributions(&one).unwrap()[0].clone()
        })
        .collect();
    let set = exact_confusions(&dist, &decisions, SchemeKind::Independent).unwrap();
    let c = set.overall.matrix();
    let err = c[(0, 1)] + c[(1, 0)];
    let lp = lp_fair_optimum(
        &dist,
        &LpObjective::Metric(LinearMetric::zero_one(2)),
        &exact_dp(&dist, SchemeKind::Independent, 0.01).unwrap(),
    )
    .unwrap()
    .optimal()
    .unwrap();
    assert!(
        (err - lp.value).abs() <= 0.02,
        "ensemble {err}, LP {}",
        lp.value
    );
    assert!(max_fairviol_dp(&set, None).unwrap() <= 0.03);
}
