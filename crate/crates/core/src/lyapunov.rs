//! Budget virtual queue and the frame-level drift-plus-penalty bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One step of the budget queue: `max(q + cost - budget, 0)`.
pub fn queue_update(q: f64, slot_cost: f64, budget: f64) -> Result<f64> {
    if !(q >= 0.0) {
        return Err(Error::Invariant(format!("queue backlog {q} is negative")));
    }
    if !(slot_cost >= 0.0) {
        return Err(Error::Invariant(format!("slot cost {slot_cost} is negative")));
    }
    if !(budget > 0.0) {
        return Err(Error::validation(format!("budget {budget} must be positive")));
    }
    Ok((q + slot_cost - budget).max(0.0))
}

/// Quadratic Lyapunov function `q^2 / 2`.
pub fn lyapunov_value(q: f64) -> f64 {
    0.5 * q * q
}

/// Virtual queue tracking cumulative overspend against the per-slot budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualQueue {
    backlog: f64,
    budget: f64,
    history: Vec<f64>,
}

impl VirtualQueue {
    pub fn new(budget: f64) -> Result<Self> {
        if !(budget > 0.0) {
            return Err(Error::validation(format!("budget {budget} must be positive")));
        }
        Ok(VirtualQueue {
            backlog: 0.0,
            budget,
            history: Vec::new(),
        })
    }

    pub fn backlog(&self) -> f64 {
        self.backlog
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    /// Backlog before each recorded update, oldest first.
    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// Applies one slot's realized cost and returns the new backlog.
    pub fn update(&mut self, slot_cost: f64) -> Result<f64> {
        let next = queue_update(self.backlog, slot_cost, self.budget)?;
        self.history.push(self.backlog);
        self.backlog = next;
        Ok(next)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    /// `(c_max^2 + r_bug^2) / 2`
    pub b1: f64,
    /// `b1 + c_max^2 (T - 1) / 2`
    pub b2: f64,
    pub c_max: f64,
    pub r_bug: f64,
}

pub fn bound_constants(c_max: f64, budget: f64, frame_length: usize) -> BoundConstants {
    let b1 = (c_max * c_max + budget * budget) / 2.0;
    let b2 = b1 + c_max * c_max * (frame_length.saturating_sub(1)) as f64 / 2.0;
    BoundConstants {
        b1,
        b2,
        c_max,
        r_bug: budget,
    }
}

/// One frame of realized trajectory: `queue` holds `Q(t) .. Q(t+T)`
/// (T + 1 values), `accuracy_loss` and `cost` hold the T slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTrajectory {
    pub queue: Vec<f64>,
    pub accuracy_loss: Vec<f64>,
    pub cost: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundVerdict {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Checks the sample-path T-slot drift-plus-penalty inequality
///
/// `L(Q(t+T)) - L(Q(t)) + V sum A <= B2 T + V sum A + sum Q(t) (C - R_bug)`
///
/// on one frame. The relative tolerance absorbs rounding in the two sides.
pub fn verify_frame_bound(
    frame: &FrameTrajectory,
    v: f64,
    constants: &BoundConstants,
) -> Result<BoundVerdict> {
    let t = frame.cost.len();
    if t == 0 || frame.accuracy_loss.len() != t || frame.queue.len() != t + 1 {
        return Err(Error::validation(format!(
            "incomplete frame trajectory: {} queue values, {} losses, {} costs",
            frame.queue.len(),
            frame.accuracy_loss.len(),
            t
        )));
    }
    let q_start = frame.queue[0];
    let q_end = frame.queue[t];
    let penalty = v * frame.accuracy_loss.iter().sum::<f64>();
    let lhs = lyapunov_value(q_end) - lyapunov_value(q_start) + penalty;
    let drift_term: f64 = frame
        .cost
        .iter()
        .map(|c| q_start * (c - constants.r_bug))
        .sum();
    let rhs = constants.b2 * t as f64 + penalty + drift_term;
    let tol = 1e-9 * lhs.abs().max(rhs.abs()).max(1.0);
    Ok(BoundVerdict {
        lhs,
        rhs,
        holds: lhs <= rhs + tol,
    })
}
