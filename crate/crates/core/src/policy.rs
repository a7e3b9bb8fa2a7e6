//! Online controllers: the two-timescale policy and its three baselines.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::assignment_emission;
use crate::error::{Error, Result};
use crate::lyapunov::VirtualQueue;
use crate::model::{Assignment, FrameDecision, Location, SimConfig, SlotDecision, SlotObservation};
use crate::rounding::{r3dra_round, repair_capacity, RoundingOutcome};
use crate::subproblem::{minimal_cer, solve_relaxed, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Ttoa,
    Acloud,
    Otime,
    Greedy,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [PolicyKind::Ttoa, PolicyKind::Acloud, PolicyKind::Otime, PolicyKind::Greedy];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Ttoa => "ttoa",
            PolicyKind::Acloud => "acloud",
            PolicyKind::Otime => "otime",
            PolicyKind::Greedy => "greedy",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::validation(format!("unknown policy {s:?} (expected ttoa, acloud, otime or greedy)")))
    }
}

/// What a policy produced for one slot, beyond the decision itself.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    pub decision: SlotDecision,
    /// Future price the slot's share is charged at.
    pub frame_future_price: f64,
    pub orphans: usize,
    pub repairs: usize,
    pub lp_iterations: usize,
    /// Set at TTOA frame starts.
    pub frame: Option<FrameDecision>,
}

/// Per-run controller state.
#[derive(Debug, Clone)]
pub struct PolicyState {
    kind: PolicyKind,
    queue: VirtualQueue,
    /// Q(t) frozen at the current frame's start.
    frame_queue: f64,
    frame_share: f64,
    frame_future_price: f64,
    frame_start: usize,
    cumulative_spend: f64,
    slots_recorded: usize,
    repair: bool,
    rng: ChaCha8Rng,
}

impl PolicyState {
    pub fn new(kind: PolicyKind, budget: f64, rng: ChaCha8Rng) -> Result<Self> {
        Ok(PolicyState {
            kind,
            queue: VirtualQueue::new(budget)?,
            frame_queue: 0.0,
            frame_share: 0.0,
            frame_future_price: 0.0,
            frame_start: 0,
            cumulative_spend: 0.0,
            slots_recorded: 0,
            repair: true,
            rng,
        })
    }

    /// Disables the capacity repair pass (fault injection).
    pub fn with_repair(mut self, repair: bool) -> Self {
        self.repair = repair;
        self
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn queue(&self) -> &VirtualQueue {
        &self.queue
    }

    pub fn frame_share(&self) -> f64 {
        self.frame_share
    }

    pub fn frame_start(&self) -> usize {
        self.frame_start
    }

    pub fn cumulative_spend(&self) -> f64 {
        self.cumulative_spend
    }

    /// Chooses the decision for `obs`. Does not touch the queue; call
    /// [`PolicyState::record`] with the realized cost afterwards.
    pub fn decide(&mut self, obs: &SlotObservation, locations: &[Location], cfg: &SimConfig) -> Result<SlotOutcome> {
        match self.kind {
            PolicyKind::Ttoa if obs.slot % cfg.frame_length == 0 => self.ttoa_frame_start(obs, locations, cfg),
            PolicyKind::Ttoa => self.ttoa_slot(obs, locations, cfg),
            PolicyKind::Acloud => Ok(acloud_slot(obs, locations)),
            PolicyKind::Otime => self.otime_slot(obs, locations, cfg),
            PolicyKind::Greedy => Ok(self.greedy_slot(obs, locations, cfg)),
        }
    }

    /// Applies the slot's realized purchase cost to the queue.
    pub fn record(&mut self, slot_cost: f64) -> Result<f64> {
        self.cumulative_spend += slot_cost;
        self.slots_recorded += 1;
        self.queue.update(slot_cost)
    }

    fn round(&mut self, frac: &Assignment, obs: &SlotObservation, locations: &[Location]) -> Result<RoundingOutcome> {
        let out = r3dra_round(frac, &obs.tasks, locations, &mut self.rng)?;
        if self.repair {
            repair_capacity(out, &obs.tasks, locations)
        } else {
            Ok(out)
        }
    }

    fn solve_and_round(
        &mut self,
        stage: Stage,
        obs: &SlotObservation,
        q: f64,
        locations: &[Location],
        cfg: &SimConfig,
    ) -> Result<(RoundingOutcome, f64, usize)> {
        let relaxed = solve_relaxed(stage, obs, q, cfg.penalty_weight(), locations)?;
        let rounded = self.round(&relaxed.assignment, obs, locations)?;
        let purchase = minimal_cer(stage, &rounded.assignment, obs, locations)?;
        Ok((rounded, purchase, relaxed.iterations))
    }

    /// Frame start: relaxed frame problem, rounding, and the future
    /// purchase covering this slot's emission for every slot of the frame.
    pub fn ttoa_frame_start(&mut self, obs: &SlotObservation, locations: &[Location], cfg: &SimConfig) -> Result<SlotOutcome> {
        if obs.slot % cfg.frame_length != 0 {
            return Err(Error::Invariant(format!("slot {} is not a frame start", obs.slot)));
        }
        let q = self.queue.backlog();
        let stage = Stage::FrameStart { frame_length: cfg.frame_length };
        let (rounded, r_lt, iters) = self.solve_and_round(stage, obs, q, locations, cfg)?;
        let mut sd = SlotDecision::new(rounded.assignment, 0.0, 0.0);
        sd.dropped = rounded.dropped;
        let frame = FrameDecision::new(r_lt, cfg.frame_length, sd)?;

        self.frame_queue = q;
        self.frame_share = frame.share();
        self.frame_future_price = obs.future_price;
        self.frame_start = obs.slot;
        Ok(SlotOutcome {
            decision: frame.slot_decision.clone(),
            frame_future_price: obs.future_price,
            orphans: rounded.orphans,
            repairs: rounded.repairs.len(),
            lp_iterations: iters,
            frame: Some(frame),
        })
    }

    /// Mid-frame slot with the queue frozen at the frame-start value.
    pub fn ttoa_slot(&mut self, obs: &SlotObservation, locations: &[Location], cfg: &SimConfig) -> Result<SlotOutcome> {
        if obs.slot < self.frame_start || obs.slot >= self.frame_start + cfg.frame_length || obs.slot % cfg.frame_length == 0 {
            return Err(Error::Invariant(format!("slot {} outside the current frame", obs.slot)));
        }
        let share = self.frame_share;
        let (rounded, r_rt, iters) =
            self.solve_and_round(Stage::Slot { future_share: share }, obs, self.frame_queue, locations, cfg)?;
        let mut decision = SlotDecision::new(rounded.assignment, r_rt, share);
        decision.dropped = rounded.dropped;
        Ok(SlotOutcome {
            decision,
            frame_future_price: self.frame_future_price,
            orphans: rounded.orphans,
            repairs: rounded.repairs.len(),
            lp_iterations: iters,
            frame: None,
        })
    }

    /// Single-timescale variant: spot-only, current queue, every slot.
    pub fn otime_slot(&mut self, obs: &SlotObservation, locations: &[Location], cfg: &SimConfig) -> Result<SlotOutcome> {
        let q = self.queue.backlog();
        let (rounded, r_rt, iters) = self.solve_and_round(Stage::Slot { future_share: 0.0 }, obs, q, locations, cfg)?;
        let mut decision = SlotDecision::new(rounded.assignment, r_rt, 0.0);
        decision.dropped = rounded.dropped;
        Ok(spot_only(decision, obs, rounded.orphans, rounded.repairs.len(), iters))
    }

    /// Arrival-order greedy: lowest accuracy loss first as long as capacity
    /// and the running average spend allow it, otherwise the feasible
    /// location with the least emission.
    pub fn greedy_slot(&self, obs: &SlotObservation, locations: &[Location], cfg: &SimConfig) -> SlotOutcome {
        let m = locations.len();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| locations[a].accuracy_loss.total_cmp(&locations[b].accuracy_loss).then(a.cmp(&b)));
        let mut load = vec![0.0; m];
        let mut slot_spend = 0.0;
        let allowance = cfg.budget_per_slot * (self.slots_recorded + 1) as f64 - self.cumulative_spend;
        let mut choices = Vec::with_capacity(obs.tasks.len());
        for (i, t) in obs.tasks.iter().enumerate() {
            let fits = |j: usize, load: &[f64]| load[j] + t.workload_cycles <= locations[j].capacity_cycles;
            let price = |j: usize| obs.emission(locations, i, j) * obs.spot_price;
            let pick = order
                .iter()
                .copied()
                .find(|&j| fits(j, &load) && slot_spend + price(j) <= allowance)
                .unwrap_or_else(|| {
                    (0..m)
                        .filter(|&j| fits(j, &load))
                        .min_by(|&a, &b| price(a).total_cmp(&price(b)).then(a.cmp(&b)))
                        .unwrap_or(0)
                });
            load[pick] += t.workload_cycles;
            slot_spend += price(pick);
            choices.push(pick);
        }
        let a = Assignment::one_hot(m, &choices);
        let car = assignment_emission(&a, obs, locations).unwrap_or(0.0);
        spot_only(SlotDecision::new(a, car, 0.0), obs, 0, 0, 0)
    }
}

fn spot_only(decision: SlotDecision, obs: &SlotObservation, orphans: usize, repairs: usize, iters: usize) -> SlotOutcome {
    SlotOutcome {
        decision,
        frame_future_price: obs.future_price,
        orphans,
        repairs,
        lp_iterations: iters,
        frame: None,
    }
}

/// Every task to the cloud, emission bought on the spot market.
pub fn acloud_slot(obs: &SlotObservation, locations: &[Location]) -> SlotOutcome {
    let a = Assignment::one_hot(locations.len(), &vec![0; obs.tasks.len()]);
    let car = assignment_emission(&a, obs, locations).unwrap_or(0.0);
    spot_only(SlotDecision::new(a, car, 0.0), obs, 0, 0, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{accuracy_loss, check_constraints, purchase_cost};
    use crate::model::{MlTask, TaskId};
    use rand::SeedableRng;

    fn locs() -> Vec<Location> {
        vec![
            Location::cloud(0.02, 4e-4),
            Location::edge(1, 0.12, 3e-5, 2e12),
            Location::edge(2, 0.11, 4e-5, 2e12),
        ]
    }

    fn obs(slot: usize, n: usize) -> SlotObservation {
        SlotObservation {
            slot,
            carbon_intensity: vec![1e-7, 5e-8, 3e-8],
            spot_price: 3.0,
            future_price: 1.5,
            tasks: (0..n).map(|i| MlTask::new(TaskId(i as u64), 5e8, 8e11).unwrap()).collect(),
        }
    }

    fn state(kind: PolicyKind, cfg: &SimConfig) -> PolicyState {
        PolicyState::new(kind, cfg.budget_per_slot, ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn parses_policy_names() {
        assert_eq!("TTOA".parse::<PolicyKind>().unwrap(), PolicyKind::Ttoa);
        assert_eq!("greedy".parse::<PolicyKind>().unwrap(), PolicyKind::Greedy);
        assert!("random".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn empty_frame_start() {
        let cfg = SimConfig { frame_length: 5, ..SimConfig::default() };
        let mut s = state(PolicyKind::Ttoa, &cfg);
        let out = s.decide(&obs(0, 0), &locs(), &cfg).unwrap();
        assert_eq!(out.frame.unwrap().cer_future_total, 0.0);
        assert_eq!(out.decision.assignment.tasks(), 0);
    }

    #[test]
    fn zero_queue_frame_start_goes_to_cloud() {
        let cfg = SimConfig { frame_length: 5, ..SimConfig::default() };
        let l = locs();
        let o = obs(0, 1);
        let mut s = state(PolicyKind::Ttoa, &cfg);
        let out = s.decide(&o, &l, &cfg).unwrap();
        assert_eq!(out.decision.assignment.location_of(0), Some(0));
        let car = o.emission(&l, 0, 0);
        assert!((out.frame.unwrap().cer_future_total - 5.0 * car).abs() < 1e-15);
        assert!((s.frame_share() - car).abs() < 1e-15);
    }

    #[test]
    fn share_constant_within_frame() {
        let cfg = SimConfig { frame_length: 4, ..SimConfig::default() };
        let l = locs();
        let mut s = state(PolicyKind::Ttoa, &cfg);
        let first = s.decide(&obs(0, 3), &l, &cfg).unwrap();
        let share = first.decision.cer_future_share;
        s.record(purchase_cost(&first.decision, &obs(0, 3), first.frame_future_price).unwrap()).unwrap();
        for slot in 1..4 {
            let o = obs(slot, 2);
            let out = s.decide(&o, &l, &cfg).unwrap();
            assert_eq!(out.decision.cer_future_share, share);
            assert!(check_constraints(&out.decision, &o, &l).unwrap().feasible());
            s.record(purchase_cost(&out.decision, &o, out.frame_future_price).unwrap()).unwrap();
        }
    }

    #[test]
    fn empty_slot_drains_queue() {
        let cfg = SimConfig { frame_length: 4, ..SimConfig::default() };
        let l = locs();
        let mut s = state(PolicyKind::Ttoa, &cfg);
        let out = s.decide(&obs(0, 10), &l, &cfg).unwrap();
        let c = purchase_cost(&out.decision, &obs(0, 10), out.frame_future_price).unwrap();
        let q1 = s.record(c).unwrap();
        let o = obs(1, 0);
        let out = s.decide(&o, &l, &cfg).unwrap();
        assert_eq!(out.decision.cer_spot, 0.0);
        let c = purchase_cost(&out.decision, &o, out.frame_future_price).unwrap();
        assert!((c - s.frame_share() * 1.5).abs() < 1e-15);
        let q2 = s.record(c).unwrap();
        assert!((q2 - (q1 + c - cfg.budget_per_slot).max(0.0)).abs() < 1e-15);
    }

    #[test]
    fn acloud_all_cloud() {
        let l = locs();
        let o = obs(0, 4);
        let out = acloud_slot(&o, &l);
        assert!((accuracy_loss(&out.decision.assignment, &l).unwrap() - 4.0 * 0.02).abs() < 1e-15);
        let car: f64 = (0..4).map(|i| o.tasks[i].input_bits * 4e-4 * 1e-7).sum();
        assert!((out.decision.cer_spot - car).abs() < 1e-15);
        assert_eq!(acloud_slot(&obs(0, 0), &l).decision.cer_spot, 0.0);
    }

    #[test]
    fn otime_matches_ttoa_with_zero_share() {
        let cfg = SimConfig { frame_length: 4, ..SimConfig::default() };
        let l = locs();
        let o = obs(1, 5);
        let mut ot = state(PolicyKind::Otime, &cfg);
        let mut tt = state(PolicyKind::Ttoa, &cfg);
        tt.frame_start = 0;
        let a = ot.otime_slot(&o, &l, &cfg).unwrap();
        let b = tt.ttoa_slot(&o, &l, &cfg).unwrap();
        assert_eq!(a.decision.assignment, b.decision.assignment);
        assert_eq!(a.decision.cer_spot, b.decision.cer_spot);
    }

    #[test]
    fn greedy_behaviour() {
        let l = locs();
        // ample budget: everything to the cloud
        let rich = SimConfig { budget_per_slot: 1e9, ..SimConfig::default() };
        let s = state(PolicyKind::Greedy, &rich);
        let out = s.greedy_slot(&obs(0, 3), &l, &rich);
        assert_eq!(out.decision.assignment, acloud_slot(&obs(0, 3), &l).decision.assignment);

        // no budget: cheapest emission first, spilling when an edge fills
        let poor = SimConfig { budget_per_slot: 1e-12, ..SimConfig::default() };
        let s = state(PolicyKind::Greedy, &poor);
        let out = s.greedy_slot(&obs(0, 4), &l, &poor);
        let choices: Vec<_> = (0..4).map(|i| out.decision.assignment.location_of(i).unwrap()).collect();
        // edge 2 is the cleanest (4e-5 * 3e-8) and holds two 8e11 tasks
        assert_eq!(choices, vec![2, 2, 1, 1]);
        assert!(check_constraints(&out.decision, &obs(0, 4), &l).unwrap().feasible());
    }
}
