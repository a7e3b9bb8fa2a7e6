//! Shared oracles for integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use carbon_sched::lp::LpProblem;
use rand::Rng;

pub fn bundled_trace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/uk_regional_intensity.csv")
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[r][k] -= f * a[col][k];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

fn combinations(n: usize, k: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, f);
            cur.pop();
        }
    }
    rec(0, n, k, &mut Vec::new(), f);
}

/// Minimum of `p` over its vertices, or `None` if no vertex is feasible.
/// Every finite bound becomes a half-space; equalities are always active.
/// Only meaningful for bounded problems.
pub fn vertex_enumeration(p: &LpProblem) -> Option<(f64, Vec<f64>)> {
    let n = p.num_vars();
    let mut halfspaces: Vec<(Vec<f64>, f64)> = Vec::new();
    for (row, b) in p.ineq_rows.iter().zip(&p.ineq_rhs) {
        halfspaces.push((row.clone(), *b));
    }
    for j in 0..n {
        let mut e = vec![0.0; n];
        if p.lower[j].is_finite() {
            e[j] = -1.0;
            halfspaces.push((e.clone(), -p.lower[j]));
        }
        if p.upper[j].is_finite() {
            e[j] = 1.0;
            halfspaces.push((e, p.upper[j]));
        }
    }
    let e = p.eq_rows.len();
    if e > n {
        return None;
    }
    let feasible = |x: &[f64]| p.max_violation(x) <= 1e-7;
    let mut best: Option<(f64, Vec<f64>)> = None;
    combinations(halfspaces.len(), n - e, &mut |idx| {
        let mut a: Vec<Vec<f64>> = p.eq_rows.clone();
        let mut b: Vec<f64> = p.eq_rhs.clone();
        for &i in idx {
            a.push(halfspaces[i].0.clone());
            b.push(halfspaces[i].1);
        }
        if let Some(x) = solve_square(a, b) {
            if feasible(&x) {
                let v = p.objective_value(&x);
                if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
                    best = Some((v, x));
                }
            }
        }
    });
    best
}

/// A feasible, bounded LP with `n` non-negative variables: a box-like sum
/// row keeps it bounded and every other row is satisfied by a random
/// interior point.
pub fn random_lp<R: Rng>(rng: &mut R, n: usize, rows: usize, equalities: usize) -> LpProblem {
    let mut p = LpProblem::new(n);
    p.objective = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x0: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    p.add_le(vec![1.0; n], n as f64);
    for r in 1..rows {
        let mut row: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.25) { 0.0 } else { rng.random_range(-1.0..1.0) })
            .collect();
        // an all-zero row is either vacuous or, as an equality, rank-deficient
        if row.iter().all(|v| *v == 0.0) {
            row[rng.random_range(0..n)] = 1.0;
        }
        let ax: f64 = row.iter().zip(&x0).map(|(a, x)| a * x).sum();
        if r <= equalities {
            p.add_eq(row, ax);
        } else {
            p.add_le(row, ax + rng.random_range(0.0..0.5));
        }
    }
    p
}
