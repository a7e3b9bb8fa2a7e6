//! Slot loop, per-run reports and parameter sweeps.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{accuracy_loss, carbon_emission, check_constraints, purchase_cost, ConstraintReport};
use crate::error::{Error, Result};
use crate::ingest::{stream_rng, Scenario, Stream, TraceTable};
use crate::lyapunov::{bound_constants, verify_frame_bound, BoundVerdict, FrameTrajectory};
use crate::model::{PriceDistribution, SimConfig, SlotDecision, SlotObservation};
use crate::policy::{PolicyKind, PolicyState};

pub const SCHEMA_VERSION: u32 = 1;

/// One row of the per-slot report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: usize,
    pub frame: usize,
    pub tasks: usize,
    pub accuracy_loss: f64,
    pub purchase_cost: f64,
    pub emission: f64,
    pub cer_spot: f64,
    pub cer_future_share: f64,
    /// Backlog after this slot's update.
    pub queue: f64,
    pub cloud_offloads: usize,
    pub edge_offloads: usize,
    pub dropped: usize,
    pub orphans: usize,
    pub repairs: usize,
    pub min_capacity_slack: f64,
    pub cer_slack: f64,
    pub lp_iterations: usize,
    pub avg_accuracy_loss: f64,
    pub avg_purchase_cost: f64,
    pub avg_emission: f64,
    pub avg_queue: f64,
}

/// State of the slot that failed its constraint check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotDump {
    pub slot: usize,
    pub policy: PolicyKind,
    pub queue_backlog: f64,
    pub observation: SlotObservation,
    pub decision: SlotDecision,
    pub report: ConstraintReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub slots: usize,
    pub tasks: usize,
    /// Per-slot time average.
    pub avg_accuracy_loss: f64,
    pub loss_per_task: f64,
    pub avg_purchase_cost: f64,
    pub cost_budget_ratio: f64,
    pub avg_emission: f64,
    pub avg_queue: f64,
    pub final_queue: f64,
    pub orphans: usize,
    pub repairs: usize,
    pub cloud_share: f64,
    pub frames: usize,
    pub frames_bound_ok: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub schema_version: u32,
    pub policy: PolicyKind,
    pub seed: u64,
    pub config: SimConfig,
    pub task_stream_hash: String,
    pub price_redraws: usize,
    pub trace_wrapped: bool,
    /// Largest per-slot cost (floored at the budget) used for the frame bound.
    pub c_max: f64,
    pub summary: RunSummary,
    pub frame_bounds: Vec<BoundVerdict>,
    pub wall_clock_ms: f64,
    #[serde(skip)]
    pub records: Vec<SlotRecord>,
}

impl SimReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut sink = CsvSink::create(path)?;
        for r in &self.records {
            sink.push(r)?;
        }
        sink.finish()
    }
}

/// Writes slot records as they are produced, flushing every row so an
/// aborted run leaves its prefix on disk.
pub struct CsvSink<W: Write> {
    writer: csv::Writer<W>,
    path: std::path::PathBuf,
}

impl CsvSink<std::fs::File> {
    pub fn create(path: &Path) -> Result<Self> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(CsvSink {
            writer: csv::Writer::from_writer(f),
            path: path.to_path_buf(),
        })
    }
}

impl<W: Write> CsvSink<W> {
    pub fn push(&mut self, r: &SlotRecord) -> Result<()> {
        self.writer.serialize(r)?;
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub repair: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { repair: true }
    }
}

pub fn run_simulation(cfg: &SimConfig, policy: PolicyKind, seed: u64, trace: &TraceTable) -> Result<SimReport> {
    run_simulation_with(cfg, policy, seed, trace, RunOptions::default(), &mut |_| Ok(()))
}

/// Runs every slot in order, checking each decision before it is recorded
/// and handing each record to `sink` as soon as it exists.
pub fn run_simulation_with(
    cfg: &SimConfig,
    policy: PolicyKind,
    seed: u64,
    trace: &TraceTable,
    opts: RunOptions,
    sink: &mut dyn FnMut(&SlotRecord) -> Result<()>,
) -> Result<SimReport> {
    let started = Instant::now();
    let scenario = Scenario::build(cfg, seed, trace)?;
    let locations = &scenario.locations;
    let mut state =
        PolicyState::new(policy, cfg.budget_per_slot, stream_rng(seed, Stream::Rounding))?.with_repair(opts.repair);

    let n_slots = cfg.total_slots();
    let mut records: Vec<SlotRecord> = Vec::with_capacity(n_slots);
    let (mut sum_loss, mut sum_cost, mut sum_emission, mut sum_queue) = (0.0, 0.0, 0.0, 0.0);
    let (mut tasks, mut cloud, mut orphans, mut repairs) = (0, 0, 0, 0);

    for obs in &scenario.observations {
        obs.validate(locations.len(), cfg.tasks.max_per_slot)?;
        let out = state.decide(obs, locations, cfg)?;
        let d = &out.decision;
        d.validate()?;
        let report = check_constraints(d, obs, locations)?;
        if !report.feasible() {
            return Err(Error::ConstraintViolation(Box::new(SlotDump {
                slot: obs.slot,
                policy,
                queue_backlog: state.queue().backlog(),
                observation: obs.clone(),
                decision: d.clone(),
                report,
            })));
        }
        let cost = purchase_cost(d, obs, out.frame_future_price)?;
        let emission = carbon_emission(d, obs, locations)?;
        let loss = accuracy_loss(&d.assignment, locations)?;
        let queue = state.record(cost)?;

        let a = &d.assignment;
        let cloud_n = (0..a.tasks()).filter(|&i| a.get(i, 0) == 1.0).count();
        let placed = (0..a.tasks()).filter(|&i| a.row_sum(i) > 0.0).count();
        let n = records.len() as f64 + 1.0;
        sum_loss += loss;
        sum_cost += cost;
        sum_emission += emission;
        sum_queue += queue;
        tasks += obs.tasks.len();
        cloud += cloud_n;
        orphans += out.orphans;
        repairs += out.repairs;

        let finite_slack = report.capacity_slack.iter().copied().filter(|s| s.is_finite()).fold(f64::INFINITY, f64::min);
        let rec = SlotRecord {
            slot: obs.slot,
            frame: obs.slot / cfg.frame_length,
            tasks: obs.tasks.len(),
            accuracy_loss: loss,
            purchase_cost: cost,
            emission,
            cer_spot: d.cer_spot,
            cer_future_share: d.cer_future_share,
            queue,
            cloud_offloads: cloud_n,
            edge_offloads: placed - cloud_n,
            dropped: d.dropped.iter().filter(|x| **x).count(),
            orphans: out.orphans,
            repairs: out.repairs,
            min_capacity_slack: if finite_slack.is_finite() { finite_slack } else { 0.0 },
            cer_slack: report.cer_slack,
            lp_iterations: out.lp_iterations,
            avg_accuracy_loss: sum_loss / n,
            avg_purchase_cost: sum_cost / n,
            avg_emission: sum_emission / n,
            avg_queue: sum_queue / n,
        };
        sink(&rec)?;
        records.push(rec);
    }

    let (c_max, frame_bounds) = check_frames(cfg, &records)?;
    let frames_bound_ok = frame_bounds.iter().filter(|v| v.holds).count();
    let slots = records.len();
    let s = slots.max(1) as f64;
    let summary = RunSummary {
        slots,
        tasks,
        avg_accuracy_loss: sum_loss / s,
        loss_per_task: if tasks > 0 { sum_loss / tasks as f64 } else { 0.0 },
        avg_purchase_cost: sum_cost / s,
        cost_budget_ratio: sum_cost / s / cfg.budget_per_slot,
        avg_emission: sum_emission / s,
        avg_queue: sum_queue / s,
        final_queue: state.queue().backlog(),
        orphans,
        repairs,
        cloud_share: if tasks > 0 { cloud as f64 / tasks as f64 } else { 0.0 },
        frames: frame_bounds.len(),
        frames_bound_ok,
    };
    if frames_bound_ok < frame_bounds.len() {
        log::warn!("{policy}: {} of {} frames violate the drift bound", frame_bounds.len() - frames_bound_ok, frame_bounds.len());
    }
    Ok(SimReport {
        schema_version: SCHEMA_VERSION,
        policy,
        seed,
        config: cfg.clone(),
        task_stream_hash: scenario.task_stream_hash,
        price_redraws: scenario.price_redraws,
        trace_wrapped: scenario.trace_wrapped,
        c_max,
        summary,
        frame_bounds,
        wall_clock_ms: started.elapsed().as_secs_f64() * 1e3,
        records,
    })
}

/// Frame-by-frame drift bound with the run's largest slot cost. The bound's
/// constant is only valid when it dominates the budget too, hence the floor.
fn check_frames(cfg: &SimConfig, records: &[SlotRecord]) -> Result<(f64, Vec<BoundVerdict>)> {
    let c_max = records.iter().map(|r| r.purchase_cost).fold(cfg.budget_per_slot, f64::max);
    let t = cfg.frame_length;
    let consts = bound_constants(c_max, cfg.budget_per_slot, t);
    let mut queue = vec![0.0];
    queue.extend(records.iter().map(|r| r.queue));
    let mut out = Vec::new();
    for start in (0..records.len()).step_by(t) {
        let end = start + t;
        if end > records.len() {
            break;
        }
        let frame = FrameTrajectory {
            queue: queue[start..=end].to_vec(),
            accuracy_loss: records[start..end].iter().map(|r| r.accuracy_loss).collect(),
            cost: records[start..end].iter().map(|r| r.purchase_cost).collect(),
        };
        out.push(verify_frame_bound(&frame, cfg.penalty_weight(), &consts)?);
    }
    Ok((c_max, out))
}

/// Parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    V,
    T,
    RBug,
    FutureMean,
    NMax,
    M,
    PriceModel,
}

impl SweepParam {
    pub const ALL: [SweepParam; 7] = [
        SweepParam::V,
        SweepParam::T,
        SweepParam::RBug,
        SweepParam::FutureMean,
        SweepParam::NMax,
        SweepParam::M,
        SweepParam::PriceModel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::V => "v",
            SweepParam::T => "t",
            SweepParam::RBug => "r_bug",
            SweepParam::FutureMean => "future_mean",
            SweepParam::NMax => "n_max",
            SweepParam::M => "m",
            SweepParam::PriceModel => "price_model",
        }
    }

    /// `cfg` with this parameter set to `value`. A frame-length change keeps
    /// the horizon fixed by adjusting the frame count.
    pub fn apply(self, cfg: &SimConfig, value: &str) -> Result<SimConfig> {
        let bad = || Error::validation(format!("invalid value {value:?} for sweep parameter {}", self.name()));
        let num = || value.trim().parse::<f64>().map_err(|_| bad());
        let count = || value.trim().parse::<usize>().map_err(|_| bad());
        let mut c = cfg.clone();
        match self {
            SweepParam::V => c.lyapunov_v = num()?,
            SweepParam::T => {
                let t = count()?;
                if t == 0 {
                    return Err(bad());
                }
                let horizon = cfg.total_slots();
                c.frame_length = t;
                c.frame_count = (horizon / t).max(1);
            }
            SweepParam::RBug => c.budget_per_slot = num()?,
            SweepParam::FutureMean => {
                let m = num()?;
                if !(m > 0.0) {
                    return Err(bad());
                }
                c.prices = c.prices.with_future_mean(m);
            }
            SweepParam::NMax => {
                c.tasks.max_per_slot = count()?;
                c.tasks.min_per_slot = c.tasks.min_per_slot.min(c.tasks.max_per_slot);
            }
            SweepParam::M => {
                if c.locations.fixed.is_some() {
                    return Err(Error::validation("cannot sweep M with a fixed location list"));
                }
                c.locations.count = count()?;
            }
            SweepParam::PriceModel => {
                c.prices.distribution = match value.trim() {
                    "uniform" => PriceDistribution::Uniform,
                    "gaussian" => PriceDistribution::Gaussian,
                    _ => return Err(bad()),
                }
            }
        }
        c.validate()?;
        Ok(c)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        let alias = match key.as_str() {
            "lyapunov_v" => "v",
            "frame_length" => "t",
            "budget" | "budget_per_slot" => "r_bug",
            "e_r_lt" | "future_price" => "future_mean",
            "max_tasks" => "n_max",
            "locations" => "m",
            "price_distribution" => "price_model",
            k => k,
        };
        SweepParam::ALL
            .into_iter()
            .find(|p| p.name() == alias)
            .ok_or_else(|| {
                let names: Vec<_> = SweepParam::ALL.iter().map(|p| p.name()).collect();
                Error::validation(format!("unknown sweep parameter {s:?} (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: String,
    pub policy: PolicyKind,
    pub seed: u64,
    pub slots: usize,
    pub tasks: usize,
    pub avg_accuracy_loss: f64,
    pub loss_per_task: f64,
    pub avg_purchase_cost: f64,
    pub cost_budget_ratio: f64,
    pub avg_queue: f64,
    pub final_queue: f64,
    pub avg_emission: f64,
    pub orphans: usize,
    pub repairs: usize,
    pub frames: usize,
    pub frames_bound_ok: usize,
    pub task_stream_hash: String,
}

impl SweepRow {
    fn new(param: SweepParam, value: &str, r: &SimReport) -> Self {
        let s = &r.summary;
        SweepRow {
            param: param.name().to_string(),
            value: value.to_string(),
            policy: r.policy,
            seed: r.seed,
            slots: s.slots,
            tasks: s.tasks,
            avg_accuracy_loss: s.avg_accuracy_loss,
            loss_per_task: s.loss_per_task,
            avg_purchase_cost: s.avg_purchase_cost,
            cost_budget_ratio: s.cost_budget_ratio,
            avg_queue: s.avg_queue,
            final_queue: s.final_queue,
            avg_emission: s.avg_emission,
            orphans: s.orphans,
            repairs: s.repairs,
            frames: s.frames,
            frames_bound_ok: s.frames_bound_ok,
            task_stream_hash: r.task_stream_hash.clone(),
        }
    }
}

pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub reports: Vec<SimReport>,
}

impl SweepResult {
    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(f);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Runs the Cartesian product values × policies × seeds on up to `jobs`
/// threads. All arms of one seed share the same generated streams wherever
/// the swept parameter leaves them unchanged. Output order is the input
/// order regardless of scheduling.
pub fn sweep(
    cfg: &SimConfig,
    param: SweepParam,
    values: &[String],
    policies: &[PolicyKind],
    seeds: &[u64],
    trace: &TraceTable,
    jobs: usize,
) -> Result<SweepResult> {
    if values.is_empty() || policies.is_empty() || seeds.is_empty() {
        return Err(Error::validation("sweep needs at least one value, policy and seed"));
    }
    let configs: Vec<SimConfig> = values.iter().map(|v| param.apply(cfg, v)).collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for (vi, c) in configs.iter().enumerate() {
        for &p in policies {
            for &s in seeds {
                cells.push((vi, c, p, s));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Invariant(format!("thread pool: {e}")))?;
    let reports: Vec<SimReport> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(_, c, p, s)| run_simulation(c, p, s, trace))
            .collect::<Result<_>>()
    })?;
    let rows = cells
        .iter()
        .zip(&reports)
        .map(|(&(vi, ..), r)| SweepRow::new(param, &values[vi], r))
        .collect();
    Ok(SweepResult { rows, reports })
}
