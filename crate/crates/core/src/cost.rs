//! Emission, purchase cost, accuracy loss and feasibility of a slot decision.
//!
//! Emission is accounted per task and per chosen location:
//! `sum_i sum_j x_ij * H_i * P_j * C_j`, with the cloud's energy coefficient
//! and intensity at `j = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Assignment, Location, SlotDecision, SlotObservation};

/// Absolute slack tolerance for every feasibility check.
pub const FEASIBILITY_TOL: f64 = 1e-9;

fn check_dims(a: &Assignment, obs: &SlotObservation, locations: &[Location]) -> Result<()> {
    if a.tasks() != obs.tasks.len() || a.locations() != locations.len() {
        return Err(Error::validation(format!(
            "assignment is {}x{}, slot {} has {} tasks and {} locations",
            a.tasks(),
            a.locations(),
            obs.slot,
            obs.tasks.len(),
            locations.len()
        )));
    }
    if obs.carbon_intensity.len() != locations.len() {
        return Err(Error::validation(format!(
            "slot {}: {} intensities for {} locations",
            obs.slot,
            obs.carbon_intensity.len(),
            locations.len()
        )));
    }
    Ok(())
}

/// Emission (kg) of an arbitrary, possibly fractional, assignment.
pub fn assignment_emission(
    a: &Assignment,
    obs: &SlotObservation,
    locations: &[Location],
) -> Result<f64> {
    check_dims(a, obs, locations)?;
    let mut total = 0.0;
    for i in 0..a.tasks() {
        for (j, &x) in a.row(i).iter().enumerate() {
            if x != 0.0 {
                total += x * obs.emission(locations, i, j);
            }
        }
    }
    Ok(total)
}

/// Car(τ) in kg.
pub fn carbon_emission(
    decision: &SlotDecision,
    obs: &SlotObservation,
    locations: &[Location],
) -> Result<f64> {
    assignment_emission(&decision.assignment, obs, locations)
}

/// C(R(τ)) in $: the slot's share of the frame purchase at the frame's
/// future price plus the spot purchase at the slot's spot price.
pub fn purchase_cost(
    decision: &SlotDecision,
    obs: &SlotObservation,
    frame_future_price: f64,
) -> Result<f64> {
    if decision.cer_spot < 0.0 || decision.cer_future_share < 0.0 {
        return Err(Error::validation(format!(
            "slot {}: negative purchase quantities (spot {}, share {})",
            obs.slot, decision.cer_spot, decision.cer_future_share
        )));
    }
    if !(frame_future_price > 0.0 && obs.spot_price > 0.0) {
        return Err(Error::validation(format!(
            "slot {}: prices must be positive",
            obs.slot
        )));
    }
    Ok(decision.cer_future_share * frame_future_price + decision.cer_spot * obs.spot_price)
}

/// A(X(τ)): total accuracy loss of the slot.
pub fn accuracy_loss(a: &Assignment, locations: &[Location]) -> Result<f64> {
    if a.locations() != locations.len() {
        return Err(Error::validation(format!(
            "assignment has {} columns for {} locations",
            a.locations(),
            locations.len()
        )));
    }
    let mut total = 0.0;
    for i in 0..a.tasks() {
        for (j, &x) in a.row(i).iter().enumerate() {
            total += x * locations[j].accuracy_loss;
        }
    }
    Ok(total)
}

/// Per-constraint slacks for a decision. Positive slack means room to spare.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    /// Largest distance of any entry from {0, 1}.
    pub binary_deviation: f64,
    /// Largest |row sum - 1| over non-dropped tasks.
    pub row_sum_deviation: f64,
    /// `W_j - load_j` per location (infinite for the cloud).
    pub capacity_slack: Vec<f64>,
    /// `share + spot - Car(τ)`.
    pub cer_slack: f64,
    pub worst_violation: f64,
}

impl ConstraintReport {
    pub fn binary_ok(&self) -> bool {
        self.binary_deviation <= FEASIBILITY_TOL
    }

    pub fn assignment_ok(&self) -> bool {
        self.row_sum_deviation <= FEASIBILITY_TOL
    }

    pub fn capacity_ok(&self) -> bool {
        self.capacity_slack.iter().all(|s| *s >= -FEASIBILITY_TOL)
    }

    pub fn cer_ok(&self) -> bool {
        self.cer_slack >= -FEASIBILITY_TOL
    }

    pub fn feasible(&self) -> bool {
        self.binary_ok() && self.assignment_ok() && self.capacity_ok() && self.cer_ok()
    }

    /// Smallest finite capacity slack, or `f64::INFINITY` with no edges.
    pub fn min_capacity_slack(&self) -> f64 {
        self.capacity_slack
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Evaluates binariness, one-location-per-task, edge capacity and CER
/// coverage. Reporting only: never fails on an infeasible decision, only on
/// mismatched shapes.
pub fn check_constraints(
    decision: &SlotDecision,
    obs: &SlotObservation,
    locations: &[Location],
) -> Result<ConstraintReport> {
    let a = &decision.assignment;
    check_dims(a, obs, locations)?;
    let dropped = |i: usize| decision.dropped.get(i).copied().unwrap_or(false);

    let binary_deviation = a
        .values()
        .iter()
        .map(|&v| v.abs().min((v - 1.0).abs()))
        .fold(0.0, f64::max);

    let row_sum_deviation = (0..a.tasks())
        .filter(|&i| !dropped(i))
        .map(|i| (a.row_sum(i) - 1.0).abs())
        .fold(0.0, f64::max);

    let capacity_slack: Vec<f64> = locations
        .iter()
        .enumerate()
        .map(|(j, loc)| {
            if loc.capacity_cycles.is_infinite() {
                return f64::INFINITY;
            }
            let load: f64 = (0..a.tasks())
                .map(|i| a.get(i, j) * obs.tasks[i].workload_cycles)
                .sum();
            loc.capacity_cycles - load
        })
        .collect();

    let car = assignment_emission(a, obs, locations)?;
    let cer_slack = decision.cer_future_share + decision.cer_spot - car;

    let worst_violation = [
        binary_deviation,
        row_sum_deviation,
        -capacity_slack.iter().copied().fold(f64::INFINITY, f64::min),
        -cer_slack,
    ]
    .into_iter()
    .fold(0.0, f64::max);

    Ok(ConstraintReport {
        binary_deviation,
        row_sum_deviation,
        capacity_slack,
        cer_slack,
        worst_violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MlTask, TaskId};
    use proptest::prelude::*;

    fn two_locations() -> Vec<Location> {
        vec![
            Location::cloud(0.02, 3e-4),
            Location::edge(1, 0.12, 2e-5, 5e12),
        ]
    }

    fn obs_with(tasks: Vec<MlTask>, intensity: Vec<f64>) -> SlotObservation {
        SlotObservation {
            slot: 0,
            carbon_intensity: intensity,
            spot_price: 3.0,
            future_price: 1.5,
            tasks,
        }
    }

    fn task(h: f64, f: f64) -> MlTask {
        MlTask::new(TaskId(0), h, f).unwrap()
    }

    #[test]
    fn emission_of_empty_slot_is_zero() {
        let locs = two_locations();
        let obs = obs_with(vec![], vec![9.7222e-8, 5.5556e-8]);
        let d = SlotDecision::empty(2);
        assert_eq!(carbon_emission(&d, &obs, &locs).unwrap(), 0.0);
        assert_eq!(accuracy_loss(&d.assignment, &locs).unwrap(), 0.0);
    }

    #[test]
    fn emission_hand_values() {
        let locs = two_locations();
        let obs = obs_with(vec![task(1e8, 1e12)], vec![9.7222e-8, 5.5556e-8]);
        let edge = SlotDecision::new(Assignment::one_hot(2, &[1]), 0.0, 0.0);
        let e = carbon_emission(&edge, &obs, &locs).unwrap();
        assert!((e / 1.1111e-4 - 1.0).abs() < 1e-4, "{e}");
        let cloud = SlotDecision::new(Assignment::one_hot(2, &[0]), 0.0, 0.0);
        let c = carbon_emission(&cloud, &obs, &locs).unwrap();
        assert!((c / 2.9167e-3 - 1.0).abs() < 1e-4, "{c}");
    }

    #[test]
    fn emission_rejects_bad_shape() {
        let locs = two_locations();
        let obs = obs_with(vec![task(1e8, 1e12)], vec![1e-8, 1e-8]);
        let d = SlotDecision::new(Assignment::one_hot(2, &[0, 1]), 0.0, 0.0);
        assert!(carbon_emission(&d, &obs, &locs).is_err());
    }

    #[test]
    fn purchase_cost_hand_values() {
        let obs = obs_with(vec![], vec![0.0, 0.0]);
        // r_lt = 10 over T = 5 at 1.5, plus 2 kg spot at 3.
        let d = SlotDecision::new(Assignment::zeros(0, 2), 2.0, 10.0 / 5.0);
        assert!((purchase_cost(&d, &obs, 1.5).unwrap() - 9.0).abs() < 1e-12);

        let zero = SlotDecision::empty(2);
        assert_eq!(purchase_cost(&zero, &obs, 1.5).unwrap(), 0.0);

        let d = SlotDecision::new(Assignment::zeros(0, 2), 0.0, 6.0 / 3.0);
        assert!((purchase_cost(&d, &obs, 2.0).unwrap() - 4.0).abs() < 1e-12);

        let neg = SlotDecision::new(Assignment::zeros(0, 2), -1.0, 0.0);
        assert!(purchase_cost(&neg, &obs, 1.5).is_err());
    }

    #[test]
    fn accuracy_loss_hand_values() {
        let locs = two_locations();
        let a = Assignment::one_hot(2, &[1, 0]);
        assert!((accuracy_loss(&a, &locs).unwrap() - 0.14).abs() < 1e-12);
        let all_cloud = Assignment::one_hot(2, &[0; 7]);
        assert!((accuracy_loss(&all_cloud, &locs).unwrap() - 0.02 * 7.0).abs() < 1e-12);
    }

    #[test]
    fn constraints_equality_case() {
        let locs = two_locations();
        let obs = obs_with(vec![task(1e8, 1e12), task(2e8, 1e12)], vec![1e-7, 5e-8]);
        let mut d = SlotDecision::new(Assignment::one_hot(2, &[0, 0]), 0.0, 0.0);
        d.cer_spot = carbon_emission(&d, &obs, &locs).unwrap();
        let r = check_constraints(&d, &obs, &locs).unwrap();
        assert!(r.feasible());
        assert_eq!(r.cer_slack, 0.0);
    }

    #[test]
    fn constraints_capacity_violation() {
        let locs = two_locations();
        let obs = obs_with(vec![task(1e8, 3e12), task(1e8, 3e12)], vec![1e-7, 5e-8]);
        let mut d = SlotDecision::new(Assignment::one_hot(2, &[1, 1]), 0.0, 0.0);
        d.cer_spot = carbon_emission(&d, &obs, &locs).unwrap();
        let r = check_constraints(&d, &obs, &locs).unwrap();
        assert!(!r.capacity_ok());
        assert!((r.capacity_slack[1] + 1e12).abs() < 1.0);
        assert!((r.worst_violation - 1e12).abs() < 1.0);
        assert!(!r.feasible());
    }

    #[test]
    fn constraints_cer_split_between_markets() {
        // Car = 5 kg covered by 2 kg share and 3 kg spot.
        let locs = vec![Location::cloud(0.02, 1.0)];
        let obs = obs_with(vec![task(5.0, 1.0)], vec![1.0]);
        let d = SlotDecision::new(Assignment::one_hot(1, &[0]), 3.0, 2.0);
        let r = check_constraints(&d, &obs, &locs).unwrap();
        assert!(r.feasible(), "{r:?}");
        let short = SlotDecision::new(Assignment::one_hot(1, &[0]), 2.0, 2.0);
        assert!(!check_constraints(&short, &obs, &locs).unwrap().cer_ok());
    }

    #[test]
    fn dropped_rows_are_exempt_from_row_sum() {
        let locs = two_locations();
        let obs = obs_with(vec![task(1e8, 1e12), task(1e8, 1e12)], vec![1e-7, 5e-8]);
        let mut a = Assignment::one_hot(2, &[0, 0]);
        a.set(1, 0, 0.0);
        let mut d = SlotDecision::new(a, 1.0, 0.0);
        assert!(!check_constraints(&d, &obs, &locs).unwrap().assignment_ok());
        d.dropped[1] = true;
        assert!(check_constraints(&d, &obs, &locs).unwrap().assignment_ok());
    }

    fn arb_slot() -> impl Strategy<Value = (Vec<(f64, f64, usize)>, Vec<f64>)> {
        (
            prop::collection::vec((1e8f64..1e9, 5e11f64..1e12, 0usize..3), 0..8),
            prop::collection::vec(0.0f64..1e-7, 3),
        )
    }

    fn three_locations() -> Vec<Location> {
        vec![
            Location::cloud(0.02, 4e-4),
            Location::edge(1, 0.11, 3e-5, 4e12),
            Location::edge(2, 0.14, 2e-5, 3e12),
        ]
    }

    proptest! {
        #[test]
        fn emission_scales_linearly((spec, intensity) in arb_slot(), lambda in 0.1f64..10.0) {
            let locs = three_locations();
            let tasks: Vec<MlTask> = spec.iter().map(|&(h, f, _)| task(h, f)).collect();
            let scaled: Vec<MlTask> = spec.iter().map(|&(h, f, _)| task(h * lambda, f)).collect();
            let choices: Vec<usize> = spec.iter().map(|s| s.2).collect();
            let d = SlotDecision::new(Assignment::one_hot(3, &choices), 0.0, 0.0);
            let base = carbon_emission(&d, &obs_with(tasks, intensity.clone()), &locs).unwrap();
            let big = carbon_emission(&d, &obs_with(scaled, intensity), &locs).unwrap();
            prop_assert!(base >= 0.0);
            prop_assert!((big - lambda * base).abs() <= 1e-12 * (lambda * base).max(1e-300));
        }

        #[test]
        fn accuracy_loss_bounded((spec, _) in arb_slot()) {
            let locs = three_locations();
            let choices: Vec<usize> = spec.iter().map(|s| s.2).collect();
            let n = choices.len() as f64;
            let loss = accuracy_loss(&Assignment::one_hot(3, &choices), &locs).unwrap();
            prop_assert!(loss >= n * 0.02 - 1e-12 && loss <= n * 0.14 + 1e-12);
        }

        #[test]
        fn purchase_cost_non_negative(spot in 0.0f64..10.0, share in 0.0f64..10.0, pf in 0.01f64..5.0) {
            let obs = obs_with(vec![], vec![0.0, 0.0]);
            let d = SlotDecision::new(Assignment::zeros(0, 2), spot, share);
            prop_assert!(purchase_cost(&d, &obs, pf).unwrap() >= 0.0);
        }
    }
}
