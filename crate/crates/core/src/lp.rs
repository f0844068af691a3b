//! Dense two-phase primal simplex for small linear programs.
//!
//! Minimizes `c·x` subject to linear rows and `x >= 0`. Pivoting follows
//! Bland's rule, which never cycles and makes the result a deterministic
//! function of the input. Besides the primal solution the solver reports the
//! final reduced costs of structural and slack columns; the calibration
//! stage uses them to describe the face of optimal solutions.

use thiserror::Error;

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Row {
    pub fn new(coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> Self {
        Self { coeffs, sense, rhs }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearProgram {
    pub costs: Vec<f64>,
    pub rows: Vec<Row>,
}

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        Self {
            costs: vec![0.0; num_vars],
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.costs.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> usize {
        self.rows.push(Row::new(coeffs, sense, rhs));
        self.rows.len() - 1
    }

    /// Largest violation of any row or sign constraint at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = x.iter().fold(0.0f64, |w, v| w.max(-v));
        for row in &self.rows {
            let lhs: f64 = row.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            let v = match row.sense {
                Sense::Le => lhs - row.rhs,
                Sense::Ge => row.rhs - lhs,
                Sense::Eq => (lhs - row.rhs).abs(),
            };
            worst = worst.max(v);
        }
        worst
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex exceeded {0} pivots")]
    PivotLimit(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Final reduced cost of every structural variable.
    pub reduced_costs: Vec<f64>,
    /// Final reduced cost of each row's slack (inequality rows only). A
    /// positive value means the row is tight in every optimal solution.
    pub slack_reduced_costs: Vec<Option<f64>>,
    pub pivots: usize,
}

struct Tableau {
    /// m rows of `ncols + 1` entries, the last one is the right-hand side.
    a: Vec<Vec<f64>>,
    basis: Vec<usize>,
    ncols: usize,
    pivots: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.a[r][c];
        for v in self.a[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.a[r].clone();
        for (i, row) in self.a.iter_mut().enumerate() {
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
        self.pivots += 1;
    }

    fn reduced_costs(&self, costs: &[f64]) -> Vec<f64> {
        let mut red = costs.to_vec();
        for (row, &b) in self.a.iter().zip(&self.basis) {
            let cb = costs[b];
            if cb != 0.0 {
                for (j, r) in red.iter_mut().enumerate() {
                    *r -= cb * row[j];
                }
            }
        }
        red
    }

    /// Runs Bland's rule on `costs` over the columns allowed by `eligible`.
    fn optimize(&mut self, costs: &[f64], eligible: &dyn Fn(usize) -> bool) -> Result<(), LpError> {
        loop {
            if self.pivots > MAX_PIVOTS {
                return Err(LpError::PivotLimit(MAX_PIVOTS));
            }
            let red = self.reduced_costs(costs);
            let Some(enter) = (0..self.ncols).find(|&j| eligible(j) && red[j] < -COST_TOL) else {
                return Ok(());
            };
            let rhs = self.ncols;
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.a.iter().enumerate() {
                if row[enter] > PIVOT_TOL {
                    let ratio = row[rhs] / row[enter];
                    leave = match leave {
                        Some((l, best))
                            if ratio > best + 1e-12
                                || ((ratio - best).abs() <= 1e-12 && self.basis[i] > self.basis[l]) =>
                        {
                            Some((l, best))
                        }
                        _ => Some((i, ratio)),
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Err(LpError::Unbounded);
            };
            self.pivot(r, enter);
        }
    }
}

pub fn solve(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    let n = lp.num_vars();
    let m = lp.rows.len();

    // Normalize to non-negative right-hand sides.
    let rows: Vec<Row> = lp
        .rows
        .iter()
        .map(|r| {
            if r.rhs < 0.0 {
                let sense = match r.sense {
                    Sense::Le => Sense::Ge,
                    Sense::Ge => Sense::Le,
                    Sense::Eq => Sense::Eq,
                };
                Row::new(r.coeffs.iter().map(|&(j, a)| (j, -a)).collect(), sense, -r.rhs)
            } else {
                r.clone()
            }
        })
        .collect();

    // Column layout: structural | slack per inequality row | artificials.
    let mut slack_col = vec![None; m];
    let mut next = n;
    for (i, r) in lp.rows.iter().enumerate() {
        if r.sense != Sense::Eq {
            slack_col[i] = Some(next);
            next += 1;
        }
    }
    let first_artificial = next;
    let mut artificial_of_row = vec![None; m];
    for (i, r) in rows.iter().enumerate() {
        if r.sense != Sense::Le {
            artificial_of_row[i] = Some(next);
            next += 1;
        }
    }
    let ncols = next;

    let mut a = vec![vec![0.0; ncols + 1]; m];
    let mut basis = vec![0; m];
    for (i, r) in rows.iter().enumerate() {
        for &(j, v) in &r.coeffs {
            a[i][j] += v;
        }
        if let Some(s) = slack_col[i] {
            a[i][s] = if r.sense == Sense::Le { 1.0 } else { -1.0 };
        }
        if let Some(art) = artificial_of_row[i] {
            a[i][art] = 1.0;
            basis[i] = art;
        } else {
            basis[i] = slack_col[i].expect("inequality row has a slack");
        }
        a[i][ncols] = r.rhs;
    }
    let mut t = Tableau {
        a,
        basis,
        ncols,
        pivots: 0,
    };

    if first_artificial < ncols {
        let mut phase1 = vec![0.0; ncols];
        for c in phase1.iter_mut().skip(first_artificial) {
            *c = 1.0;
        }
        t.optimize(&phase1, &|_| true)?;
        let infeasibility: f64 = t
            .basis
            .iter()
            .enumerate()
            .filter(|(_, &b)| b >= first_artificial)
            .map(|(i, _)| t.a[i][ncols])
            .sum();
        if infeasibility > FEAS_TOL {
            return Err(LpError::Infeasible);
        }
        // Drive remaining zero-level artificials out of the basis; rows where
        // that is impossible are redundant and dropped.
        let mut i = 0;
        while i < t.a.len() {
            if t.basis[i] >= first_artificial {
                match (0..first_artificial).find(|&j| t.a[i][j].abs() > 1e-9) {
                    Some(j) => {
                        t.pivot(i, j);
                        i += 1;
                    }
                    None => {
                        t.a.remove(i);
                        t.basis.remove(i);
                    }
                }
            } else {
                i += 1;
            }
        }
    }

    let mut costs = vec![0.0; ncols];
    costs[..n].copy_from_slice(&lp.costs);
    t.optimize(&costs, &|j| j < first_artificial)?;

    let mut x = vec![0.0; n];
    for (row, &b) in t.a.iter().zip(&t.basis) {
        if b < n {
            x[b] = row[ncols];
        }
    }
    let red = t.reduced_costs(&costs);
    let objective = lp.costs.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution {
        x,
        objective,
        reduced_costs: red[..n].to_vec(),
        slack_reduced_costs: slack_col.iter().map(|s| s.map(|c| red[c])).collect(),
        pivots: t.pivots,
    })
}
