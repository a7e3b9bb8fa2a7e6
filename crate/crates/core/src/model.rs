//! Domain types shared across the simulator.
//!
//! Every quantity is held in one canonical unit:
//!
//! | quantity          | unit          |
//! |-------------------|---------------|
//! | task input        | bits          |
//! | task workload     | CPU cycles    |
//! | energy            | Joules        |
//! | carbon intensity  | kgCO2 / J     |
//! | emission, CER     | kgCO2         |
//! | price             | $ / kgCO2     |
//! | cost, budget, Q   | $             |
//!
//! One slot is 30 simulated minutes, the cadence of the regional intensity
//! trace.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grams per kilogram times Joules per kWh.
pub const TRACE_UNITS_PER_KG_PER_J: f64 = 1e3 * 3.6e6;

/// Minutes of simulated time per slot.
pub const SLOT_MINUTES: i64 = 30;

/// Converts a trace intensity in gCO2/kWh to kgCO2/J.
pub fn intensity_from_trace_units(g_per_kwh: f64) -> Result<f64> {
    if !g_per_kwh.is_finite() || g_per_kwh < 0.0 {
        return Err(Error::validation(format!(
            "carbon intensity must be a finite non-negative gCO2/kWh value, got {g_per_kwh}"
        )));
    }
    Ok(g_per_kwh * 1e-3 / 3.6e6)
}

/// Inverse of [`intensity_from_trace_units`].
pub fn intensity_to_trace_units(kg_per_j: f64) -> f64 {
    kg_per_j * 3.6e6 / 1e-3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub u64);

/// One inference job arriving at a slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlTask {
    pub id: TaskId,
    pub input_bits: f64,
    pub workload_cycles: f64,
}

impl MlTask {
    pub fn new(id: TaskId, input_bits: f64, workload_cycles: f64) -> Result<Self> {
        let task = MlTask {
            id,
            input_bits,
            workload_cycles,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.input_bits > 0.0 && self.input_bits.is_finite()) {
            return Err(Error::validation(format!(
                "task {:?}: input_bits must be positive, got {}",
                self.id, self.input_bits
            )));
        }
        if !(self.workload_cycles > 0.0 && self.workload_cycles.is_finite()) {
            return Err(Error::validation(format!(
                "task {:?}: workload_cycles must be positive, got {}",
                self.id, self.workload_cycles
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationKind {
    Cloud,
    Edge,
}

/// An offloading target. Index 0 is always the cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Location {
    pub id: usize,
    pub kind: LocationKind,
    pub accuracy_loss: f64,
    /// Joules consumed per input bit.
    pub energy_per_bit: f64,
    /// Cycles per slot; `f64::INFINITY` for the cloud (serialized as `null`).
    #[serde(with = "unbounded")]
    pub capacity_cycles: f64,
}

impl Location {
    pub fn cloud(accuracy_loss: f64, energy_per_bit: f64) -> Self {
        Location {
            id: 0,
            kind: LocationKind::Cloud,
            accuracy_loss,
            energy_per_bit,
            capacity_cycles: f64::INFINITY,
        }
    }

    pub fn edge(id: usize, accuracy_loss: f64, energy_per_bit: f64, capacity_cycles: f64) -> Self {
        Location {
            id,
            kind: LocationKind::Edge,
            accuracy_loss,
            energy_per_bit,
            capacity_cycles,
        }
    }

    pub fn is_cloud(&self) -> bool {
        self.kind == LocationKind::Cloud
    }
}

mod unbounded {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Checks the structural invariants of a location set: cloud first, ids
/// match positions, the cloud is strictly the most accurate site.
pub fn validate_locations(locations: &[Location]) -> Result<()> {
    if locations.len() < 2 {
        return Err(Error::validation(
            "need at least two locations (one cloud, one edge)",
        ));
    }
    if !locations[0].is_cloud() {
        return Err(Error::validation("location 0 must be the cloud"));
    }
    let cloud = &locations[0];
    if !cloud.capacity_cycles.is_infinite() {
        return Err(Error::validation("cloud capacity must be unbounded"));
    }
    for (j, loc) in locations.iter().enumerate() {
        if loc.id != j {
            return Err(Error::validation(format!(
                "location at position {j} has id {}",
                loc.id
            )));
        }
        if !(0.0..=1.0).contains(&loc.accuracy_loss) {
            return Err(Error::validation(format!(
                "location {j}: accuracy_loss {} outside [0, 1]",
                loc.accuracy_loss
            )));
        }
        if !(loc.energy_per_bit >= 0.0 && loc.energy_per_bit.is_finite()) {
            return Err(Error::validation(format!(
                "location {j}: energy_per_bit must be finite and non-negative"
            )));
        }
        if j > 0 {
            if loc.is_cloud() {
                return Err(Error::validation(format!("location {j}: only one cloud allowed")));
            }
            if !(loc.capacity_cycles > 0.0 && loc.capacity_cycles.is_finite()) {
                return Err(Error::validation(format!(
                    "edge {j}: capacity must be positive and finite"
                )));
            }
            if loc.accuracy_loss <= cloud.accuracy_loss {
                return Err(Error::validation(format!(
                    "edge {j}: accuracy loss {} must exceed the cloud's {}",
                    loc.accuracy_loss, cloud.accuracy_loss
                )));
            }
        }
    }
    Ok(())
}

/// Everything revealed at one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotObservation {
    pub slot: usize,
    /// kgCO2/J per location, indexed like the location list.
    pub carbon_intensity: Vec<f64>,
    pub spot_price: f64,
    /// Only consulted at frame starts.
    pub future_price: f64,
    pub tasks: Vec<MlTask>,
}

impl SlotObservation {
    pub fn validate(&self, location_count: usize, max_tasks: usize) -> Result<()> {
        if self.carbon_intensity.len() != location_count {
            return Err(Error::validation(format!(
                "slot {}: {} intensities for {} locations",
                self.slot,
                self.carbon_intensity.len(),
                location_count
            )));
        }
        if let Some(bad) = self
            .carbon_intensity
            .iter()
            .find(|c| !(**c >= 0.0 && c.is_finite()))
        {
            return Err(Error::validation(format!(
                "slot {}: invalid carbon intensity {bad}",
                self.slot
            )));
        }
        if !(self.spot_price > 0.0 && self.future_price > 0.0) {
            return Err(Error::validation(format!(
                "slot {}: prices must be positive",
                self.slot
            )));
        }
        if self.tasks.len() > max_tasks {
            return Err(Error::validation(format!(
                "slot {}: {} tasks exceeds N_max = {max_tasks}",
                self.slot,
                self.tasks.len()
            )));
        }
        for t in &self.tasks {
            t.validate()?;
        }
        Ok(())
    }

    /// Emission in kg of running task `i` at location `j`.
    pub fn emission(&self, locations: &[Location], i: usize, j: usize) -> f64 {
        self.tasks[i].input_bits * locations[j].energy_per_bit * self.carbon_intensity[j]
    }
}

/// A tasks × locations offloading matrix. Entries are 0/1 for decisions and
/// fractional for relaxed solutions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    tasks: usize,
    locations: usize,
    values: Vec<f64>,
}

impl Assignment {
    pub fn zeros(tasks: usize, locations: usize) -> Self {
        Assignment {
            tasks,
            locations,
            values: vec![0.0; tasks * locations],
        }
    }

    pub fn from_values(tasks: usize, locations: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != tasks * locations {
            return Err(Error::validation(format!(
                "assignment has {} entries, expected {tasks}x{locations}",
                values.len()
            )));
        }
        Ok(Assignment {
            tasks,
            locations,
            values,
        })
    }

    /// One-hot rows; `choices[i]` is the location of task `i`.
    pub fn one_hot(locations: usize, choices: &[usize]) -> Self {
        let mut a = Assignment::zeros(choices.len(), locations);
        for (i, &j) in choices.iter().enumerate() {
            a.set(i, j, 1.0);
        }
        a
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn locations(&self) -> usize {
        self.locations
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.locations + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.locations + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.locations..(i + 1) * self.locations]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).iter().sum()
    }

    /// The unique location holding a 1 in row `i`, if the row is one-hot.
    pub fn location_of(&self, i: usize) -> Option<usize> {
        let row = self.row(i);
        let mut found = None;
        for (j, &v) in row.iter().enumerate() {
            if v == 1.0 {
                if found.is_some() {
                    return None;
                }
                found = Some(j);
            } else if v != 0.0 {
                return None;
            }
        }
        found
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

/// The per-slot output of a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotDecision {
    pub assignment: Assignment,
    /// kgCO2 bought on the spot market this slot.
    pub cer_spot: f64,
    /// kgCO2 available this slot from the frame's future purchase.
    pub cer_future_share: f64,
    /// Rows intentionally left empty; such rows are exempt from the
    /// one-location-per-task check.
    pub dropped: Vec<bool>,
}

impl SlotDecision {
    pub fn new(assignment: Assignment, cer_spot: f64, cer_future_share: f64) -> Self {
        let dropped = vec![false; assignment.tasks()];
        SlotDecision {
            assignment,
            cer_spot,
            cer_future_share,
            dropped,
        }
    }

    pub fn empty(locations: usize) -> Self {
        SlotDecision::new(Assignment::zeros(0, locations), 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cer_spot >= 0.0 && self.cer_future_share >= 0.0) {
            return Err(Error::validation(format!(
                "negative CER purchase (spot {}, future share {})",
                self.cer_spot, self.cer_future_share
            )));
        }
        if self.dropped.len() != self.assignment.tasks() {
            return Err(Error::validation("dropped flags do not match task count"));
        }
        Ok(())
    }
}

/// The frame-start output: the future purchase and the frame-start slot's
/// own decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDecision {
    pub cer_future_total: f64,
    pub frame_length: usize,
    pub slot_decision: SlotDecision,
}

impl FrameDecision {
    /// Builds a frame decision whose per-slot share is `total / frame_length`.
    pub fn new(
        cer_future_total: f64,
        frame_length: usize,
        mut slot_decision: SlotDecision,
    ) -> Result<Self> {
        if !(cer_future_total >= 0.0) || frame_length == 0 {
            return Err(Error::validation(format!(
                "invalid frame purchase {cer_future_total} over {frame_length} slots"
            )));
        }
        slot_decision.cer_future_share = cer_future_total / frame_length as f64;
        slot_decision.cer_spot = 0.0;
        Ok(FrameDecision {
            cer_future_total,
            frame_length,
            slot_decision,
        })
    }

    pub fn share(&self) -> f64 {
        self.cer_future_total / self.frame_length as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceDistribution {
    Uniform,
    Gaussian,
}

/// Distribution of the per-slot CER prices.
///
/// For `uniform` the spread is the half-width of the support; for `gaussian`
/// it is the standard deviation (draws at or below zero are redrawn).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriceModel {
    pub distribution: PriceDistribution,
    pub future_mean: f64,
    pub future_spread: f64,
    pub spot_mean: f64,
    pub spot_spread: f64,
}

impl Default for PriceModel {
    fn default() -> Self {
        PriceModel {
            distribution: PriceDistribution::Uniform,
            future_mean: 1.5,
            future_spread: 0.5,
            spot_mean: 3.0,
            spot_spread: 1.0,
        }
    }
}

impl PriceModel {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.future_mean,
            self.future_spread,
            self.spot_mean,
            self.spot_spread,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::validation("price model parameters must be finite"));
        }
        if !(self.future_mean > 0.0) {
            return Err(Error::validation("future_mean must be positive"));
        }
        if !(self.spot_mean > self.future_mean) {
            return Err(Error::validation(format!(
                "spot_mean ({}) must exceed future_mean ({})",
                self.spot_mean, self.future_mean
            )));
        }
        if self.future_spread < 0.0 || self.spot_spread < 0.0 {
            return Err(Error::validation("price spreads must be non-negative"));
        }
        if self.distribution == PriceDistribution::Uniform
            && (self.future_mean - self.future_spread <= 0.0
                || self.spot_mean - self.spot_spread <= 0.0)
        {
            return Err(Error::validation(
                "uniform price support must stay strictly positive",
            ));
        }
        Ok(())
    }

    /// Same shape with both means (and spreads) rescaled so the future mean
    /// becomes `future_mean`; the spot mean stays in the same ratio.
    pub fn with_future_mean(&self, future_mean: f64) -> Self {
        let k = future_mean / self.future_mean;
        PriceModel {
            distribution: self.distribution,
            future_mean,
            future_spread: self.future_spread * k,
            spot_mean: self.spot_mean * k,
            spot_spread: self.spot_spread * k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub min_per_slot: usize,
    /// N_max.
    pub max_per_slot: usize,
    pub input_bits: [f64; 2],
    pub workload_cycles: [f64; 2],
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            min_per_slot: 1,
            max_per_slot: 10,
            input_bits: [1e8, 1e9],
            workload_cycles: [5e11, 1e12],
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_per_slot == 0 || self.min_per_slot > self.max_per_slot {
            return Err(Error::validation(format!(
                "task count range [{}, {}] is empty",
                self.min_per_slot, self.max_per_slot
            )));
        }
        check_positive_range("tasks.input_bits", self.input_bits)?;
        check_positive_range("tasks.workload_cycles", self.workload_cycles)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocationConfig {
    /// Total number of locations including the cloud.
    pub count: usize,
    pub cloud_accuracy_loss: f64,
    pub edge_accuracy_loss: [f64; 2],
    pub cloud_energy_per_bit: [f64; 2],
    pub edge_energy_per_bit: [f64; 2],
    pub edge_capacity_cycles: [f64; 2],
    /// Explicit location list; overrides the generator ranges when present.
    pub fixed: Option<Vec<Location>>,
}

impl Default for LocationConfig {
    fn default() -> Self {
        LocationConfig {
            count: 5,
            cloud_accuracy_loss: 0.02,
            edge_accuracy_loss: [0.10, 0.15],
            cloud_energy_per_bit: [3e-4, 5e-4],
            edge_energy_per_bit: [2e-5, 5e-5],
            edge_capacity_cycles: [2e12, 5e12],
            fixed: None,
        }
    }
}

impl LocationConfig {
    pub fn location_count(&self) -> usize {
        self.fixed.as_ref().map_or(self.count, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(fixed) = &self.fixed {
            return validate_locations(fixed);
        }
        if self.count < 2 {
            return Err(Error::validation("locations.count must be at least 2"));
        }
        check_positive_range("locations.edge_accuracy_loss", self.edge_accuracy_loss)?;
        check_positive_range("locations.cloud_energy_per_bit", self.cloud_energy_per_bit)?;
        check_positive_range("locations.edge_energy_per_bit", self.edge_energy_per_bit)?;
        check_positive_range("locations.edge_capacity_cycles", self.edge_capacity_cycles)?;
        if !(0.0..=1.0).contains(&self.cloud_accuracy_loss) || self.edge_accuracy_loss[1] > 1.0 {
            return Err(Error::validation("accuracy losses must lie in [0, 1]"));
        }
        if self.edge_accuracy_loss[0] <= self.cloud_accuracy_loss {
            return Err(Error::validation(
                "every edge accuracy loss must exceed the cloud's",
            ));
        }
        Ok(())
    }
}

fn check_positive_range(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite()) {
        return Err(Error::validation(format!(
            "{name}: range [{}, {}] must be positive and ordered",
            r[0], r[1]
        )));
    }
    Ok(())
}

/// Legacy cost units per dollar. Budgets in those units were computed from
/// emissions accounted in J x gCO2/kWh.
pub const COST_UNITS_PER_DOLLAR: f64 = TRACE_UNITS_PER_KG_PER_J;

/// Full run configuration. The defaults describe the standard scenario
/// (M = 5, N_max = 10, T = 15, K = 100).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub frame_length: usize,
    pub frame_count: usize,
    pub locations: LocationConfig,
    /// R_bug in $ per slot.
    pub budget_per_slot: f64,
    pub lyapunov_v: f64,
    /// $^2 per unit of `lyapunov_v`; the drift-plus-penalty weight on
    /// accuracy loss is `lyapunov_v * v_scale`.
    pub v_scale: f64,
    pub prices: PriceModel,
    pub tasks: TaskConfig,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            frame_length: 15,
            frame_count: 100,
            locations: LocationConfig::default(),
            budget_per_slot: 3.25e8 / COST_UNITS_PER_DOLLAR,
            lyapunov_v: 3e8,
            v_scale: 10.0 / COST_UNITS_PER_DOLLAR,
            prices: PriceModel::default(),
            tasks: TaskConfig::default(),
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn total_slots(&self) -> usize {
        self.frame_length * self.frame_count
    }

    /// Effective weight on accuracy loss in the drift-plus-penalty objective.
    pub fn penalty_weight(&self) -> f64 {
        self.lyapunov_v * self.v_scale
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_length == 0 {
            return Err(Error::validation("frame_length must be at least 1"));
        }
        if self.frame_count == 0 {
            return Err(Error::validation("frame_count must be at least 1"));
        }
        if !(self.budget_per_slot > 0.0 && self.budget_per_slot.is_finite()) {
            return Err(Error::validation("budget_per_slot must be positive"));
        }
        if !(self.lyapunov_v >= 0.0 && self.lyapunov_v.is_finite()) {
            return Err(Error::validation("lyapunov_v must be non-negative"));
        }
        if !(self.v_scale > 0.0 && self.v_scale.is_finite()) {
            return Err(Error::validation("v_scale must be positive"));
        }
        self.locations.validate()?;
        self.prices.validate()?;
        self.tasks.validate()
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }
}
