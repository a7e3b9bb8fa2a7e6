//! Dense two-phase simplex for small linear programs.
//!
//! Problems are stated as
//!
//! ```text
//! minimize    c·x
//! subject to  A x <= b
//!             E x  = d
//!             l <= x <= u
//! ```
//!
//! and rewritten into the standard form `min c'·y, A' y = b', y >= 0,
//! b' >= 0` before solving. Pivoting follows Bland's rule (lowest eligible
//! index enters, ties on the ratio test go to the lowest basic index), which
//! makes the pivot sequence deterministic and rules out cycling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Entries with magnitude below this are treated as zero when pivoting.
pub const PIVOT_TOL: f64 = 1e-9;

/// Hard cap on pivots per solve.
pub const MAX_ITERATIONS: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("iteration limit of {0} pivots exceeded")]
    IterationLimit(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub ineq_rows: Vec<Vec<f64>>,
    pub ineq_rhs: Vec<f64>,
    pub eq_rows: Vec<Vec<f64>>,
    pub eq_rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LpProblem {
    /// `n` variables, zero objective, bounds `[0, +inf)`, no rows.
    pub fn new(n: usize) -> Self {
        LpProblem {
            objective: vec![0.0; n],
            ineq_rows: Vec::new(),
            ineq_rhs: Vec::new(),
            eq_rows: Vec::new(),
            eq_rhs: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) {
        self.ineq_rows.push(row);
        self.ineq_rhs.push(rhs);
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
    }

    pub fn set_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        self.lower[j] = lower;
        self.upper[j] = upper;
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        let bad = |m: String| Err(LpError::Malformed(m));
        if self.lower.len() != n || self.upper.len() != n {
            return bad(format!("bounds have length {}/{} for {n} variables", self.lower.len(), self.upper.len()));
        }
        if self.ineq_rows.len() != self.ineq_rhs.len() || self.eq_rows.len() != self.eq_rhs.len() {
            return bad("row and right-hand-side counts differ".into());
        }
        for row in self.ineq_rows.iter().chain(&self.eq_rows) {
            if row.len() != n {
                return bad(format!("row of length {} for {n} variables", row.len()));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return bad("non-finite constraint coefficient".into());
            }
        }
        if self.objective.iter().chain(&self.ineq_rhs).chain(&self.eq_rhs).any(|v| !v.is_finite()) {
            return bad("non-finite objective or right-hand side".into());
        }
        for j in 0..n {
            let (l, u) = (self.lower[j], self.upper[j]);
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return bad(format!("variable {j} has invalid bounds [{l}, {u}]"));
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        dot(&self.objective, x)
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (row, b) in self.ineq_rows.iter().zip(&self.ineq_rhs) {
            worst = worst.max(dot(row, x) - b);
        }
        for (row, d) in self.eq_rows.iter().zip(&self.eq_rhs) {
            worst = worst.max((dot(row, x) - d).abs());
        }
        for j in 0..x.len() {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        worst
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal values in the original variables; empty unless optimal.
    pub primal: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// How an original variable maps onto standard-form columns:
/// `x = offset + sum(coef * y[col])`.
#[derive(Debug, Clone, PartialEq)]
struct VarMap {
    offset: f64,
    terms: Vec<(usize, f64)>,
}

/// `min c·y  s.t.  A y = b, y >= 0` with `b >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardForm {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    /// Constant added to `c·y` to recover the original objective.
    pub objective_offset: f64,
    /// Per row, a column that is a +1 unit vector in that row, if any.
    basis_hint: Vec<Option<usize>>,
    vars: Vec<VarMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StandardSolution {
    pub status: LpStatus,
    pub y: Vec<f64>,
    /// Row duals of the standard form; `b·duals == c·y` at optimality.
    pub duals: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl StandardForm {
    pub fn num_rows(&self) -> usize {
        self.b.len()
    }

    pub fn num_cols(&self) -> usize {
        self.c.len()
    }

    /// Maps a standard-form point back to the original variables.
    pub fn recover(&self, y: &[f64]) -> Vec<f64> {
        self.vars
            .iter()
            .map(|v| v.offset + v.terms.iter().map(|&(c, k)| k * y[c]).sum::<f64>())
            .collect()
    }
}

/// Rewrites `p` into standard form. Finite upper bounds become rows unless a
/// non-negative equality row already implies them.
pub fn to_standard_form(p: &LpProblem) -> Result<StandardForm, LpError> {
    p.validate()?;
    let n = p.num_vars();

    let mut vars = Vec::with_capacity(n);
    let mut ncols = 0usize;
    // Upper limit on the shifted column, for variables with two finite bounds.
    let mut span: Vec<Option<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let (l, u) = (p.lower[j], p.upper[j]);
        if l.is_finite() {
            vars.push(VarMap { offset: l, terms: vec![(ncols, 1.0)] });
            span.push(u.is_finite().then(|| u - l));
            ncols += 1;
        } else if u.is_finite() {
            vars.push(VarMap { offset: u, terms: vec![(ncols, -1.0)] });
            span.push(None);
            ncols += 1;
        } else {
            vars.push(VarMap { offset: 0.0, terms: vec![(ncols, 1.0), (ncols + 1, -1.0)] });
            span.push(None);
            ncols += 2;
        }
    }
    let structural = ncols;

    let offsets: Vec<f64> = vars.iter().map(|v| v.offset).collect();
    let expand = |row: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; structural];
        for (j, v) in vars.iter().enumerate() {
            for &(col, k) in &v.terms {
                out[col] += k * row[j];
            }
        }
        out
    };

    struct Row {
        coeffs: Vec<f64>,
        rhs: f64,
        slack: bool,
    }
    let mut rows: Vec<Row> = Vec::new();
    for (row, b) in p.ineq_rows.iter().zip(&p.ineq_rhs) {
        rows.push(Row { coeffs: expand(row), rhs: b - dot(row, &offsets), slack: true });
    }
    let eq_start = rows.len();
    for (row, d) in p.eq_rows.iter().zip(&p.eq_rhs) {
        rows.push(Row { coeffs: expand(row), rhs: d - dot(row, &offsets), slack: false });
    }

    // An equality row with non-negative coefficients and right-hand side
    // bounds each of its columns by rhs / coefficient.
    let mut implied = vec![f64::INFINITY; structural];
    for r in &rows[eq_start..] {
        if r.rhs >= 0.0 && r.coeffs.iter().all(|&a| a >= 0.0) {
            for (col, &a) in r.coeffs.iter().enumerate() {
                if a > 0.0 {
                    implied[col] = implied[col].min(r.rhs / a);
                }
            }
        }
    }
    for (j, s) in span.iter().enumerate() {
        if let Some(s) = *s {
            let col = vars[j].terms[0].0;
            if implied[col] <= s {
                continue;
            }
            let mut coeffs = vec![0.0; structural];
            coeffs[col] = 1.0;
            rows.push(Row { coeffs, rhs: s, slack: true });
        }
    }

    let slack_count = rows.iter().filter(|r| r.slack).count();
    let total_cols = structural + slack_count;
    let mut a = Vec::with_capacity(rows.len());
    let mut b = Vec::with_capacity(rows.len());
    let mut basis_hint = Vec::with_capacity(rows.len());
    let mut next_slack = structural;
    for r in rows {
        let mut coeffs = r.coeffs;
        coeffs.resize(total_cols, 0.0);
        let mut rhs = r.rhs;
        let mut slack_col = None;
        if r.slack {
            coeffs[next_slack] = 1.0;
            slack_col = Some(next_slack);
            next_slack += 1;
        }
        if rhs < 0.0 {
            coeffs.iter_mut().for_each(|v| *v = -*v);
            rhs = -rhs;
            slack_col = None;
        }
        a.push(coeffs);
        b.push(rhs);
        basis_hint.push(slack_col);
    }

    let mut c = vec![0.0; total_cols];
    for (j, v) in vars.iter().enumerate() {
        for &(col, k) in &v.terms {
            c[col] += k * p.objective[j];
        }
    }

    Ok(StandardForm {
        a,
        b,
        c,
        objective_offset: dot(&p.objective, &offsets),
        basis_hint,
        vars,
    })
}

struct Tableau {
    /// m rows of `ncols + 1` entries; the last entry is the right-hand side.
    rows: Vec<Vec<f64>>,
    /// Reduced costs, last entry is `-objective`.
    reduced: Vec<f64>,
    basis: Vec<usize>,
    /// Columns `>= first_artificial` are artificial.
    first_artificial: usize,
    ncols: usize,
    iterations: usize,
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.ncols]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let width = self.ncols + 1;
        let inv = 1.0 / self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v *= inv;
        }
        self.rows[r][c] = 1.0;
        let pivot_row = std::mem::take(&mut self.rows[r]);
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for k in 0..width {
                    row[k] -= f * pivot_row[k];
                }
                row[c] = 0.0;
            }
        }
        let f = self.reduced[c];
        if f != 0.0 {
            for k in 0..width {
                self.reduced[k] -= f * pivot_row[k];
            }
            self.reduced[c] = 0.0;
        }
        self.rows[r] = pivot_row;
        self.basis[r] = c;
    }

    /// Sets reduced costs for `cost` given the current basis.
    fn price(&mut self, cost: &[f64]) {
        let mut d = cost.to_vec();
        d.push(0.0);
        for (i, row) in self.rows.iter().enumerate() {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                for k in 0..=self.ncols {
                    d[k] -= cb * row[k];
                }
            }
        }
        self.reduced = d;
    }

    fn run(&mut self, allow_artificial: bool) -> Result<PhaseEnd, LpError> {
        let limit = if allow_artificial { self.ncols } else { self.first_artificial };
        loop {
            let entering = (0..limit).find(|&j| self.reduced[j] < -PIVOT_TOL);
            let Some(c) = entering else {
                return Ok(PhaseEnd::Optimal);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][c];
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - PIVOT_TOL * lr.abs().max(1.0)
                                || (ratio <= lr + PIVOT_TOL * lr.abs().max(1.0)
                                    && self.basis[i] < self.basis[li])
                            {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Ok(PhaseEnd::Unbounded);
            };
            if self.iterations >= MAX_ITERATIONS {
                return Err(LpError::IterationLimit(MAX_ITERATIONS));
            }
            self.iterations += 1;
            self.pivot(r, c);
        }
    }
}

/// Solves a standard-form program.
pub fn solve_standard(sf: &StandardForm) -> Result<StandardSolution, LpError> {
    let m = sf.num_rows();
    let n = sf.num_cols();

    // Row equilibration; duals are unscaled on the way out.
    let scale: Vec<f64> = sf
        .a
        .iter()
        .map(|row| {
            let big = row.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            if big > 0.0 { 1.0 / big } else { 1.0 }
        })
        .collect();

    let art_rows: Vec<usize> = (0..m).filter(|&i| sf.basis_hint[i].is_none()).collect();
    let ncols = n + art_rows.len();
    let mut rows = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    // Column that started as the unit vector of each row.
    let mut unit_col = vec![0usize; m];
    let mut art_iter = n;
    for i in 0..m {
        let mut row: Vec<f64> = sf.a[i].iter().map(|v| v * scale[i]).collect();
        row.resize(ncols + 1, 0.0);
        row[ncols] = sf.b[i] * scale[i];
        match sf.basis_hint[i] {
            Some(col) => {
                // Keep the unit column exact after scaling.
                let s = row[col];
                for v in row.iter_mut() {
                    *v /= s;
                }
                basis.push(col);
                unit_col[i] = col;
            }
            None => {
                row[art_iter] = 1.0;
                basis.push(art_iter);
                unit_col[i] = art_iter;
                art_iter += 1;
            }
        }
        rows.push(row);
    }
    // Rows with a slack hint were divided by the scaled slack coefficient.
    let row_scale: Vec<f64> = (0..m)
        .map(|i| match sf.basis_hint[i] {
            Some(col) => 1.0 / sf.a[i][col],
            None => scale[i],
        })
        .collect();

    let mut t = Tableau {
        rows,
        reduced: Vec::new(),
        basis,
        first_artificial: n,
        ncols,
        iterations: 0,
    };

    if !art_rows.is_empty() {
        let mut phase1 = vec![0.0; ncols];
        phase1[n..].iter_mut().for_each(|v| *v = 1.0);
        t.price(&phase1);
        t.run(true)?;
        let infeasibility = -t.reduced[ncols];
        let b_norm = t.rows.iter().map(|r| r[ncols].abs()).fold(1.0, f64::max);
        if infeasibility > 1e-9 * b_norm {
            return Ok(StandardSolution {
                status: LpStatus::Infeasible,
                y: Vec::new(),
                duals: Vec::new(),
                objective: f64::NAN,
                iterations: t.iterations,
            });
        }
        // Drive zero-valued artificials out of the basis where possible;
        // rows where no structural column is available are redundant.
        for i in 0..m {
            if t.basis[i] >= n {
                if let Some(c) = (0..n).find(|&j| t.rows[i][j].abs() > PIVOT_TOL) {
                    t.pivot(i, c);
                }
            }
        }
    }

    let mut cost = sf.c.clone();
    cost.resize(ncols, 0.0);
    t.price(&cost);
    if let PhaseEnd::Unbounded = t.run(false)? {
        return Ok(StandardSolution {
            status: LpStatus::Unbounded,
            y: Vec::new(),
            duals: Vec::new(),
            objective: f64::NEG_INFINITY,
            iterations: t.iterations,
        });
    }

    let mut y = vec![0.0; n];
    for (i, &bcol) in t.basis.iter().enumerate() {
        if bcol < n {
            y[bcol] = t.rhs(i).max(0.0);
        }
    }
    let duals: Vec<f64> = (0..m)
        .map(|i| -t.reduced[unit_col[i]] * row_scale[i])
        .collect();
    let objective = dot(&sf.c, &y);
    Ok(StandardSolution {
        status: LpStatus::Optimal,
        y,
        duals,
        objective,
        iterations: t.iterations,
    })
}

/// Solves `p` to optimality or reports infeasibility/unboundedness.
pub fn simplex_solve(p: &LpProblem) -> Result<LpSolution, LpError> {
    let sf = to_standard_form(p)?;
    let sol = solve_standard(&sf)?;
    Ok(match sol.status {
        LpStatus::Optimal => {
            let primal = sf.recover(&sol.y);
            LpSolution {
                status: LpStatus::Optimal,
                objective: p.objective_value(&primal),
                primal,
                iterations: sol.iterations,
            }
        }
        status => LpSolution {
            status,
            primal: Vec::new(),
            objective: sol.objective,
            iterations: sol.iterations,
        },
    })
}
