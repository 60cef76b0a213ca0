//! Dense two-phase tableau simplex with Bland's rule.
//!
//! Minimizes `cᵀx` over `x ≥ 0` subject to rows `aᵀx {≤, ≥, =} b`.

const PIVOT_EPS: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpRow {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<LpRow>,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        Self {
            objective,
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    /// Adds a sparse row; `terms` may repeat indices.
    pub fn add_row(&mut self, terms: &[(usize, f64)], relation: Relation, rhs: f64) {
        let mut coeffs = vec![0.0; self.num_vars()];
        for &(j, a) in terms {
            coeffs[j] += a;
        }
        self.rows.push(LpRow {
            coeffs,
            relation,
            rhs,
        });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpStatus {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

struct Tableau {
    /// `m` constraint rows followed by the objective row; last column is the rhs.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn m(&self) -> usize {
        self.basis.len()
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Runs Bland pivots on entering columns `< allowed`. Returns false if unbounded.
    fn optimize(&mut self, allowed: usize) -> bool {
        let m = self.m();
        let rhs = self.cols;
        loop {
            let obj = &self.t[m];
            let Some(c) = (0..allowed).find(|&j| obj[j] < -PIVOT_EPS) else {
                return true;
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..m {
                let a = self.t[i][c];
                if a > PIVOT_EPS {
                    let ratio = self.t[i][rhs] / a;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-12
                                || (ratio <= br + 1e-12 && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            match best {
                Some((r, _)) => self.pivot(r, c),
                None => return false,
            }
        }
    }

    /// Sets the objective row to `cost` (over all columns) and prices out the basis.
    fn set_objective(&mut self, cost: &[f64]) {
        let m = self.m();
        let mut row = vec![0.0; self.cols + 1];
        row[..cost.len()].copy_from_slice(cost);
        for i in 0..m {
            let cb = row[self.basis[i]];
            if cb != 0.0 {
                for (v, a) in row.iter_mut().zip(&self.t[i]) {
                    *v -= cb * a;
                }
            }
        }
        self.t[m] = row;
    }
}

pub fn solve(lp: &LinearProgram) -> LpStatus {
    let n = lp.num_vars();
    let rows: Vec<LpRow> = lp
        .rows
        .iter()
        .map(|r| {
            if r.rhs < 0.0 {
                LpRow {
                    coeffs: r.coeffs.iter().map(|a| -a).collect(),
                    relation: match r.relation {
                        Relation::Le => Relation::Ge,
                        Relation::Ge => Relation::Le,
                        Relation::Eq => Relation::Eq,
                    },
                    rhs: -r.rhs,
                }
            } else {
                r.clone()
            }
        })
        .collect();
    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.relation != Relation::Eq).count();
    let n_art = rows.iter().filter(|r| r.relation != Relation::Le).count();
    let first_art = n + n_slack;
    let cols = first_art + n_art;

    let mut t = vec![vec![0.0; cols + 1]; m + 1];
    let mut basis = vec![0; m];
    let (mut s, mut a) = (n, first_art);
    for (i, r) in rows.iter().enumerate() {
        t[i][..n].copy_from_slice(&r.coeffs);
        t[i][cols] = r.rhs;
        match r.relation {
            Relation::Le => {
                t[i][s] = 1.0;
                basis[i] = s;
                s += 1;
            }
            Relation::Ge => {
                t[i][s] = -1.0;
                s += 1;
                t[i][a] = 1.0;
                basis[i] = a;
                a += 1;
            }
            Relation::Eq => {
                t[i][a] = 1.0;
                basis[i] = a;
                a += 1;
            }
        }
    }
    let mut tab = Tableau { t, basis, cols };

    if n_art > 0 {
        let mut phase1 = vec![0.0; cols];
        for c in phase1.iter_mut().skip(first_art) {
            *c = 1.0;
        }
        tab.set_objective(&phase1);
        tab.optimize(cols);
        let infeasibility = -tab.t[m][cols];
        if infeasibility > FEAS_TOL {
            return LpStatus::Infeasible;
        }
        // Drive remaining zero-level artificials out of the basis, dropping redundant rows.
        let mut i = 0;
        while i < tab.m() {
            if tab.basis[i] >= first_art {
                match (0..first_art).find(|&j| tab.t[i][j].abs() > PIVOT_EPS) {
                    Some(j) => tab.pivot(i, j),
                    None => {
                        tab.t.remove(i);
                        tab.basis.remove(i);
                        continue;
                    }
                }
            }
            i += 1;
        }
    }

    let m = tab.m();
    let mut cost = vec![0.0; cols];
    cost[..n].copy_from_slice(&lp.objective);
    tab.set_objective(&cost);
    if !tab.optimize(first_art) {
        return LpStatus::Unbounded;
    }
    let mut x = vec![0.0; n];
    for (i, &b) in tab.basis.iter().enumerate() {
        if b < n {
            x[b] = tab.t[i][cols].max(0.0);
        }
    }
    let value = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    debug_assert_eq!(tab.t.len(), m + 1);
    LpStatus::Optimal { x, value }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn optimal(status: LpStatus) -> (Vec<f64>, f64) {
        match status {
            LpStatus::Optimal { x, value } => (x, value),
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn textbook_maximization() {
        // max 3x + 5y s.t. x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 → (2, 6), 36.
        let mut lp = LinearProgram::new(vec![-3.0, -5.0]);
        lp.add_row(&[(0, 1.0)], Relation::Le, 4.0);
        lp.add_row(&[(1, 2.0)], Relation::Le, 12.0);
        lp.add_row(&[(0, 3.0), (1, 2.0)], Relation::Le, 18.0);
        let (x, v) = optimal(solve(&lp));
        assert!((v + 36.0).abs() < 1e-9);
        assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_ge_rows() {
        // min x + 2y s.t. x + y = 1, y ≥ 0.25 → (0.75, 0.25), 1.25.
        let mut lp = LinearProgram::new(vec![1.0, 2.0]);
        lp.add_row(&[(0, 1.0), (1, 1.0)], Relation::Eq, 1.0);
        lp.add_row(&[(1, 1.0)], Relation::Ge, 0.25);
        let (x, v) = optimal(solve(&lp));
        assert!((v - 1.25).abs() < 1e-12);
        assert!((x[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn negative_rhs_is_normalized() {
        // min x s.t. −x ≤ −2 → 2.
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.add_row(&[(0, -1.0)], Relation::Le, -2.0);
        assert!((optimal(solve(&lp)).1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.add_row(&[(0, 1.0)], Relation::Le, 1.0);
        lp.add_row(&[(0, 1.0)], Relation::Ge, 2.0);
        assert_eq!(solve(&lp), LpStatus::Infeasible);
        let mut lp = LinearProgram::new(vec![-1.0, 0.0]);
        lp.add_row(&[(0, 1.0), (1, -1.0)], Relation::Le, 1.0);
        assert_eq!(solve(&lp), LpStatus::Unbounded);
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::new(vec![1.0, 1.0, 0.0]);
        lp.add_row(&[(0, 1.0), (1, 1.0), (2, 1.0)], Relation::Eq, 1.0);
        lp.add_row(&[(0, 2.0), (1, 2.0), (2, 2.0)], Relation::Eq, 2.0);
        let (x, v) = optimal(solve(&lp));
        assert!(v.abs() < 1e-12);
        assert!((x[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_cycling_example() {
        // Beale's example cycles under the largest-coefficient rule.
        let mut lp = LinearProgram::new(vec![-0.75, 150.0, -0.02, 6.0]);
        lp.add_row(
            &[(0, 0.25), (1, -60.0), (2, -0.04), (3, 9.0)],
            Relation::Le,
            0.0,
        );
        lp.add_row(
            &[(0, 0.5), (1, -90.0), (2, -0.02), (3, 3.0)],
            Relation::Le,
            0.0,
        );
        lp.add_row(&[(2, 1.0)], Relation::Le, 1.0);
        let (_, v) = optimal(solve(&lp));
        assert!((v + 0.05).abs() < 1e-9);
    }
}
