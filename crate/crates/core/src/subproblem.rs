//! Relaxed frame-start and per-slot subproblems, and purchase recovery for
//! fixed assignments.
//!
//! Variable layout for both problems: `x_ij` at index `i * M + j`, the
//! purchase variable (`r_lt` or `r_rt`) last.

use serde::{Deserialize, Serialize};

use crate::cost::{accuracy_loss, assignment_emission};
use crate::error::{Error, Result};
use crate::lp::{simplex_solve, LpProblem, LpStatus};
use crate::model::{Assignment, Location, SlotObservation};

/// Which of the two subproblems is being posed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Frame start: buys `r_lt` on the future market, no spot purchase.
    FrameStart { frame_length: usize },
    /// Mid-frame slot with the frame's per-slot future share already fixed.
    Slot { future_share: f64 },
}

impl Stage {
    /// Price applied to the purchase variable in the objective, per unit.
    fn unit_price(&self, obs: &SlotObservation) -> f64 {
        match *self {
            Stage::FrameStart { frame_length } => obs.future_price / frame_length as f64,
            Stage::Slot { .. } => obs.spot_price,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Stage::FrameStart { frame_length: 0 } => Err(Error::validation("frame length must be positive")),
            Stage::Slot { future_share } if !(future_share >= 0.0 && future_share.is_finite()) => {
                Err(Error::validation(format!("future share {future_share} must be non-negative")))
            }
            _ => Ok(()),
        }
    }
}

fn check_queue(q: f64, v: f64) -> Result<()> {
    if !(q >= 0.0 && q.is_finite()) {
        return Err(Error::validation(format!("queue value {q} must be non-negative")));
    }
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::validation(format!("penalty weight {v} must be non-negative")));
    }
    Ok(())
}

fn build(stage: Stage, obs: &SlotObservation, q: f64, v: f64, locations: &[Location]) -> Result<LpProblem> {
    stage.validate()?;
    check_queue(q, v)?;
    obs.validate(locations.len(), usize::MAX)?;
    let n = obs.tasks.len();
    let m = locations.len();
    let nv = n * m + 1;
    let r = n * m;

    let mut p = LpProblem::new(nv);
    for i in 0..n {
        for (j, loc) in locations.iter().enumerate() {
            p.objective[i * m + j] = v * loc.accuracy_loss;
            p.set_bounds(i * m + j, 0.0, 1.0);
        }
    }
    p.objective[r] = q * stage.unit_price(obs);

    for i in 0..n {
        let mut row = vec![0.0; nv];
        row[i * m..(i + 1) * m].iter_mut().for_each(|v| *v = 1.0);
        p.add_eq(row, 1.0);
    }
    // Capacity rows are normalized by W_j so every row has unit scale.
    for (j, loc) in locations.iter().enumerate() {
        if loc.capacity_cycles.is_infinite() || n == 0 {
            continue;
        }
        let mut row = vec![0.0; nv];
        for (i, t) in obs.tasks.iter().enumerate() {
            row[i * m + j] = t.workload_cycles / loc.capacity_cycles;
        }
        p.add_le(row, 1.0);
    }
    let mut row = vec![0.0; nv];
    for i in 0..n {
        for j in 0..m {
            row[i * m + j] = obs.emission(locations, i, j);
        }
    }
    match stage {
        Stage::FrameStart { frame_length } => {
            row[r] = -1.0 / frame_length as f64;
            p.add_le(row, 0.0);
        }
        Stage::Slot { future_share } => {
            row[r] = -1.0;
            p.add_le(row, future_share);
        }
    }
    Ok(p)
}

/// Relaxed frame-start problem: assignment plus future purchase `r_lt`.
pub fn build_p3(
    obs: &SlotObservation,
    q: f64,
    v: f64,
    frame_length: usize,
    locations: &[Location],
) -> Result<LpProblem> {
    build(Stage::FrameStart { frame_length }, obs, q, v, locations)
}

/// Relaxed per-slot problem: assignment plus spot purchase `r_rt`.
pub fn build_p4(
    obs: &SlotObservation,
    q: f64,
    future_share: f64,
    v: f64,
    locations: &[Location],
) -> Result<LpProblem> {
    build(Stage::Slot { future_share }, obs, q, v, locations)
}

/// Least purchase covering the emission `car`.
pub fn minimal_purchase(stage: Stage, car: f64) -> f64 {
    match stage {
        Stage::FrameStart { frame_length } => frame_length as f64 * car,
        Stage::Slot { future_share } => (car - future_share).max(0.0),
    }
}

/// Least purchase covering the emission of a fixed assignment.
pub fn minimal_cer(
    stage: Stage,
    a: &Assignment,
    obs: &SlotObservation,
    locations: &[Location],
) -> Result<f64> {
    stage.validate()?;
    Ok(minimal_purchase(stage, assignment_emission(a, obs, locations)?))
}

/// Subproblem objective of an assignment and purchase:
/// `V * A(x) + Q * price * purchase`.
pub fn subproblem_objective(
    stage: Stage,
    a: &Assignment,
    purchase: f64,
    obs: &SlotObservation,
    q: f64,
    v: f64,
    locations: &[Location],
) -> Result<f64> {
    Ok(v * accuracy_loss(a, locations)? + q * stage.unit_price(obs) * purchase)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedSolution {
    pub assignment: Assignment,
    pub purchase: f64,
    pub objective: f64,
    pub iterations: usize,
}

/// Builds and solves the relaxed subproblem. The purchase is then reset to
/// its minimal feasible value, which only matters when the queue term is
/// zero and the solver is free to over-buy.
pub fn solve_relaxed(
    stage: Stage,
    obs: &SlotObservation,
    q: f64,
    v: f64,
    locations: &[Location],
) -> Result<RelaxedSolution> {
    let p = build(stage, obs, q, v, locations)?;
    let sol = simplex_solve(&p)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(Error::InfeasibleSubproblem { slot: obs.slot }),
        LpStatus::Unbounded => {
            return Err(Error::Invariant(format!(
                "slot {}: relaxed subproblem reported unbounded",
                obs.slot
            )))
        }
    }
    let n = obs.tasks.len();
    let m = locations.len();
    let values: Vec<f64> = sol.primal[..n * m].iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let assignment = Assignment::from_values(n, m, values)?;
    let purchase = minimal_cer(stage, &assignment, obs, locations)?;
    let objective = subproblem_objective(stage, &assignment, purchase, obs, q, v, locations)?;
    Ok(RelaxedSolution {
        assignment,
        purchase,
        objective,
        iterations: sol.iterations,
    })
}
