//! Rounding of fractional assignments: R3DRA dependent rounding, independent
//! randomized rounding (IRR), a capacity repair pass, and an exhaustive
//! oracle for small instances.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{assignment_emission, FEASIBILITY_TOL};
use crate::error::{Error, Result};
use crate::model::{Assignment, Location, MlTask, SlotObservation};
use crate::subproblem::{minimal_purchase, subproblem_objective, Stage};

/// Values this close to 0 or 1 count as integral.
pub const SNAP_TOL: f64 = 1e-9;

/// Largest instance the exhaustive oracle accepts.
pub const ORACLE_MAX_TASKS: usize = 8;
pub const ORACLE_MAX_LOCATIONS: usize = 5;

fn snap(p: f64) -> f64 {
    if p.abs() <= SNAP_TOL {
        0.0
    } else if (p - 1.0).abs() <= SNAP_TOL {
        1.0
    } else {
        p
    }
}

fn is_integral(p: f64) -> bool {
    p == 0.0 || p == 1.0
}

/// One weighted probability transfer between two floating entries. At least
/// one of the returned values is integral.
pub fn pair_adjust<R: Rng + ?Sized>(
    p1: f64,
    p2: f64,
    s1: f64,
    s2: f64,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if !(s1 > 0.0 && s2 > 0.0) {
        return Err(Error::validation(format!("weights must be positive, got {s1}, {s2}")));
    }
    let e1 = (1.0 - p1).min(s2 / s1 * p2);
    let e2 = p1.min(s2 / s1 * (1.0 - p2));
    if !(e1 + e2 > 0.0) {
        return Err(Error::validation(format!("degenerate pair ({p1}, {p2})")));
    }
    let out = if rng.random_bool((e2 / (e1 + e2)).clamp(0.0, 1.0)) {
        (p1 + e1, p2 - s1 / s2 * e1)
    } else {
        (p1 - e2, p2 + s1 / s2 * e2)
    };
    Ok((snap(out.0), snap(out.1)))
}

/// One repair action: `from` is `None` for an orphaned row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairMove {
    pub task: usize,
    pub from: Option<usize>,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundingOutcome {
    pub assignment: Assignment,
    /// Rows left all-zero; cleared by [`repair_capacity`].
    pub dropped: Vec<bool>,
    /// Rows the final capacity check emptied, before any repair.
    pub orphans: usize,
    pub repairs: Vec<RepairMove>,
    pub iterations: usize,
}

fn check_fractional(frac: &Assignment) -> Result<()> {
    for i in 0..frac.tasks() {
        let row = frac.row(i);
        if let Some(bad) = row.iter().find(|v| !(**v >= -SNAP_TOL && **v <= 1.0 + SNAP_TOL)) {
            return Err(Error::validation(format!("row {i}: entry {bad} outside [0, 1]")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::validation(format!("row {i} sums to {sum}, expected 1")));
        }
    }
    Ok(())
}

/// Dependent rounding of `frac`, task by task. Weights are the task's
/// workload, so every transfer conserves the row mass. When a single
/// floating entry remains it is rounded up unless that would overload its
/// edge given the rows already rounded, in which case it is zeroed and the
/// task is left orphaned.
pub fn r3dra_round<R: Rng + ?Sized>(
    frac: &Assignment,
    tasks: &[MlTask],
    locations: &[Location],
    rng: &mut R,
) -> Result<RoundingOutcome> {
    if frac.tasks() != tasks.len() || frac.locations() != locations.len() {
        return Err(Error::validation("fractional matrix does not match tasks/locations"));
    }
    check_fractional(frac)?;
    let m = locations.len();
    let mut out = Assignment::zeros(tasks.len(), m);
    let mut dropped = vec![false; tasks.len()];
    let mut load = vec![0.0; m];
    let mut iterations = 0;
    let mut orphans = 0;

    for (i, task) in tasks.iter().enumerate() {
        let s = task.workload_cycles;
        let mut p: Vec<f64> = frac.row(i).iter().map(|&v| snap(v.clamp(0.0, 1.0))).collect();
        let mut floating: Vec<usize> = (0..m).filter(|&j| !is_integral(p[j])).collect();

        while floating.len() >= 2 {
            let pick = rand::seq::index::sample(rng, floating.len(), 2);
            let (a, b) = (pick.index(0), pick.index(1));
            let (j1, j2) = (floating[a], floating[b]);
            let (q1, q2) = pair_adjust(p[j1], p[j2], s, s, rng)?;
            p[j1] = q1;
            p[j2] = q2;
            iterations += 1;
            floating.retain(|&j| !is_integral(p[j]));
        }
        // A leftover entry only survives through drift in the row sum; it
        // takes the row's mass unless the row is already placed.
        if let Some(&j) = floating.first() {
            let placed = p.iter().any(|&v| v == 1.0);
            let fits = load[j] + s <= locations[j].capacity_cycles;
            p[j] = if fits && !placed { 1.0 } else { 0.0 };
        }
        if p.iter().all(|&v| v == 0.0) {
            dropped[i] = true;
            orphans += 1;
        }
        for (j, &v) in p.iter().enumerate() {
            out.set(i, j, v);
            if v == 1.0 {
                load[j] += s;
            }
        }
    }

    Ok(RoundingOutcome {
        assignment: out,
        dropped,
        orphans,
        repairs: Vec::new(),
        iterations,
    })
}

/// Independent randomized rounding: one categorical draw per row with the
/// fractional values as probabilities. Capacity is not considered.
pub fn irr_round<R: Rng + ?Sized>(frac: &Assignment, rng: &mut R) -> Result<RoundingOutcome> {
    check_fractional(frac)?;
    let mut choices = Vec::with_capacity(frac.tasks());
    for i in 0..frac.tasks() {
        let weights: Vec<f64> = frac.row(i).iter().map(|v| v.max(0.0)).collect();
        let dist = WeightedIndex::new(&weights)
            .map_err(|e| Error::validation(format!("row {i}: {e}")))?;
        choices.push(dist.sample(rng));
    }
    Ok(RoundingOutcome {
        assignment: Assignment::one_hot(frac.locations(), &choices),
        dropped: vec![false; frac.tasks()],
        orphans: 0,
        repairs: Vec::new(),
        iterations: 0,
    })
}

/// Sends orphaned rows to the cloud, then, while any edge is over capacity,
/// moves its largest task (lowest index on ties) to the cloud.
pub fn repair_capacity(
    mut outcome: RoundingOutcome,
    tasks: &[MlTask],
    locations: &[Location],
) -> Result<RoundingOutcome> {
    let a = &mut outcome.assignment;
    if a.tasks() != tasks.len() || a.locations() != locations.len() {
        return Err(Error::validation("outcome does not match tasks/locations"));
    }
    for i in 0..tasks.len() {
        if outcome.dropped[i] || a.row_sum(i) == 0.0 {
            a.set(i, 0, 1.0);
            outcome.dropped[i] = false;
            outcome.repairs.push(RepairMove { task: i, from: None, to: 0 });
        }
    }
    for (j, loc) in locations.iter().enumerate() {
        if loc.capacity_cycles.is_infinite() {
            continue;
        }
        loop {
            let on_edge: Vec<usize> = (0..tasks.len()).filter(|&i| a.get(i, j) == 1.0).collect();
            let load: f64 = on_edge.iter().map(|&i| tasks[i].workload_cycles).sum();
            if load - loc.capacity_cycles <= FEASIBILITY_TOL {
                break;
            }
            let mut victim = on_edge[0];
            for &i in &on_edge[1..] {
                if tasks[i].workload_cycles > tasks[victim].workload_cycles {
                    victim = i;
                }
            }
            a.set(victim, j, 0.0);
            a.set(victim, 0, 1.0);
            outcome.repairs.push(RepairMove { task: victim, from: Some(j), to: 0 });
        }
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub assignment: Assignment,
    pub purchase: f64,
    pub objective: f64,
    pub feasible_assignments: usize,
}

/// Exhaustive minimizer of the integral subproblem over every capacity
/// feasible assignment, each paired with its minimal purchase.
pub fn brute_force_opt(
    stage: Stage,
    obs: &SlotObservation,
    q: f64,
    v: f64,
    locations: &[Location],
) -> Result<OracleSolution> {
    let n = obs.tasks.len();
    let m = locations.len();
    if n > ORACLE_MAX_TASKS || m > ORACLE_MAX_LOCATIONS {
        return Err(Error::TooLarge(format!(
            "{n} tasks x {m} locations exceeds {ORACLE_MAX_TASKS} x {ORACLE_MAX_LOCATIONS}"
        )));
    }
    if m == 0 {
        return Err(Error::validation("no locations"));
    }
    let mut choice = vec![0usize; n];
    let mut best: Option<OracleSolution> = None;
    let mut feasible = 0;
    loop {
        let mut load = vec![0.0; m];
        for (i, &j) in choice.iter().enumerate() {
            load[j] += obs.tasks[i].workload_cycles;
        }
        if load
            .iter()
            .zip(locations)
            .all(|(l, loc)| *l - loc.capacity_cycles <= FEASIBILITY_TOL)
        {
            feasible += 1;
            let a = Assignment::one_hot(m, &choice);
            let purchase = minimal_purchase(stage, assignment_emission(&a, obs, locations)?);
            let objective = subproblem_objective(stage, &a, purchase, obs, q, v, locations)?;
            if best.as_ref().is_none_or(|b| objective < b.objective) {
                best = Some(OracleSolution {
                    assignment: a,
                    purchase,
                    objective,
                    feasible_assignments: 0,
                });
            }
        }
        // odometer increment
        let mut k = 0;
        while k < n {
            choice[k] += 1;
            if choice[k] < m {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
        if k == n {
            break;
        }
    }
    let mut best = best.ok_or(Error::InfeasibleSubproblem { slot: obs.slot })?;
    best.feasible_assignments = feasible;
    Ok(best)
}
