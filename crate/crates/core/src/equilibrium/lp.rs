//! Dense two-phase primal simplex for small linear programs
//! `maximize cᵀx  s.t.  Ax ≤ b, x ≥ 0` (b may be negative).
//!
//! Bland's rule throughout, so the solver cannot cycle. Sized for the
//! pairwise-Lipschitz dual programs this crate builds (tens of variables,
//! hundreds of constraints).

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LpProblem {
    /// Number of structural variables.
    pub n: usize,
    /// Objective coefficients (maximized).
    pub objective: Vec<f64>,
    /// Rows (coefficients, rhs) of `Ax ≤ b`.
    pub constraints: Vec<(Vec<f64>, f64)>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
}

const EPS: f64 = 1e-9;

struct Tableau {
    /// rows x cols, last column = rhs.
    a: Vec<Vec<f64>>,
    /// objective row (reduced costs), last entry = negated objective value.
    z: Vec<f64>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let pv = self.a[row][col];
        for v in &mut self.a[row] {
            *v /= pv;
        }
        for r in 0..self.a.len() {
            if r != row {
                let f = self.a[r][col];
                if f != 0.0 {
                    for c in 0..=self.cols {
                        self.a[r][c] -= f * self.a[row][c];
                    }
                }
            }
        }
        let f = self.z[col];
        if f != 0.0 {
            for c in 0..=self.cols {
                self.z[c] -= f * self.a[row][c];
            }
        }
        self.basis[row] = col;
    }

    /// Bland's rule: entering = lowest-index column with positive reduced
    /// cost (maximization), leaving = lowest-index basic variable among the
    /// minimizing ratios.
    fn run(&mut self) -> Result<()> {
        for _ in 0..200_000 {
            let Some(col) = (0..self.cols).find(|&c| self.z[c] > EPS) else {
                return Ok(());
            };
            let mut best: Option<(usize, f64)> = None;
            for r in 0..self.a.len() {
                if self.a[r][col] > EPS {
                    let ratio = self.a[r][self.cols] / self.a[r][col];
                    match best {
                        None => best = Some((r, ratio)),
                        Some((br, bratio)) => {
                            if ratio < bratio - EPS
                                || ((ratio - bratio).abs() <= EPS
                                    && self.basis[r] < self.basis[br])
                            {
                                best = Some((r, ratio));
                            }
                        }
                    }
                }
            }
            let Some((row, _)) = best else {
                return Err(Error::Config("unbounded linear program".into()));
            };
            self.pivot(row, col);
        }
        Err(Error::Config("simplex iteration limit".into()))
    }
}

/// Solve the program; infeasibility is an error.
pub fn solve(p: &LpProblem) -> Result<LpSolution> {
    let m = p.constraints.len();
    let n = p.n;
    assert_eq!(p.objective.len(), n);

    // columns: structural (n) + slack (m) + artificial (added as needed)
    let mut need_artificial = Vec::new();
    for (i, (_, b)) in p.constraints.iter().enumerate() {
        if *b < 0.0 {
            need_artificial.push(i);
        }
    }
    let n_art = need_artificial.len();
    let cols = n + m + n_art;
    let mut a = vec![vec![0.0; cols + 1]; m];
    let mut basis = vec![0usize; m];
    let mut art_col = n + m;
    for (i, (row, b)) in p.constraints.iter().enumerate() {
        assert_eq!(row.len(), n);
        let negate = *b < 0.0;
        let sgn = if negate { -1.0 } else { 1.0 };
        for (j, &v) in row.iter().enumerate() {
            a[i][j] = sgn * v;
        }
        // slack: +1 normally; after negation it becomes a surplus (-1)
        a[i][n + i] = sgn;
        a[i][cols] = sgn * b;
        if negate {
            a[i][art_col] = 1.0;
            basis[i] = art_col;
            art_col += 1;
        } else {
            basis[i] = n + i;
        }
    }

    let mut t = Tableau {
        a,
        z: vec![0.0; cols + 1],
        basis,
        cols,
    };

    if n_art > 0 {
        // phase 1: maximize -(sum of artificials)
        for c in n + m..cols {
            t.z[c] = -1.0;
        }
        // make the objective row consistent with the artificial basis
        for r in 0..m {
            if t.basis[r] >= n + m {
                for c in 0..=cols {
                    t.z[c] += t.a[r][c];
                }
            }
        }
        t.run()?;
        if t.z[cols].abs() > 1e-7 {
            return Err(Error::Config("infeasible linear program".into()));
        }
        // drive any artificial still in the basis out if possible
        for r in 0..m {
            if t.basis[r] >= n + m {
                if let Some(c) = (0..n + m).find(|&c| t.a[r][c].abs() > EPS) {
                    t.pivot(r, c);
                }
            }
        }
    }

    // phase 2 objective on structural columns
    t.z = vec![0.0; cols + 1];
    for j in 0..n {
        t.z[j] = p.objective[j];
    }
    // forbid artificial columns from re-entering
    for c in n + m..cols {
        for r in 0..m {
            t.a[r][c] = 0.0;
        }
    }
    // reduce objective row against the current basis
    for r in 0..m {
        let b = t.basis[r];
        let f = t.z[b];
        if f != 0.0 {
            for c in 0..=cols {
                t.z[c] -= f * t.a[r][c];
            }
        }
    }
    t.run()?;

    let mut x = vec![0.0; n];
    for r in 0..m {
        if t.basis[r] < n {
            x[t.basis[r]] = t.a[r][cols];
        }
    }
    let value = p
        .objective
        .iter()
        .zip(&x)
        .map(|(c, v)| c * v)
        .sum::<f64>();
    Ok(LpSolution { x, value })
}
