//! Rounding quality on random small subproblems: R3DRA and IRR against the
//! exhaustive optimum.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::cost::{check_constraints, FEASIBILITY_TOL};
use crate::error::{Error, Result};
use crate::ingest::gen_locations;
use crate::model::{
    intensity_from_trace_units, Location, LocationConfig, MlTask, SimConfig, SlotDecision, SlotObservation, TaskId,
};
use crate::rounding::{brute_force_opt, irr_round, r3dra_round, repair_capacity, ORACLE_MAX_LOCATIONS, ORACLE_MAX_TASKS};
use crate::subproblem::{minimal_cer, solve_relaxed, subproblem_objective, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleInstance {
    pub stage: Stage,
    pub q: f64,
    pub v: f64,
    pub locations: Vec<Location>,
    pub observation: SlotObservation,
}

/// Draws an instance with 1..=`max_tasks` tasks and 2..=`max_locations`
/// locations from the default generator ranges, intensities in
/// 20..350 g/kWh, queue in [0, 10] $ and V in [1, 10]e8.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R, max_tasks: usize, max_locations: usize) -> Result<OracleInstance> {
    if max_tasks == 0 || max_tasks > ORACLE_MAX_TASKS || !(2..=ORACLE_MAX_LOCATIONS).contains(&max_locations) {
        return Err(Error::TooLarge(format!(
            "oracle instances need 1..={ORACLE_MAX_TASKS} tasks and 2..={ORACLE_MAX_LOCATIONS} locations"
        )));
    }
    let defaults = SimConfig::default();
    let m = rng.random_range(2..=max_locations);
    let n = rng.random_range(1..=max_tasks);
    let locations = gen_locations(&LocationConfig { count: m, ..defaults.locations.clone() }, rng)?;
    let t = &defaults.tasks;
    let tasks = (0..n)
        .map(|i| {
            let h = rng.random_range(t.input_bits[0]..=t.input_bits[1]);
            let f = rng.random_range(t.workload_cycles[0]..=t.workload_cycles[1]);
            MlTask::new(TaskId(i as u64), h, f)
        })
        .collect::<Result<Vec<_>>>()?;
    let carbon_intensity = (0..m)
        .map(|_| intensity_from_trace_units(rng.random_range(20.0..350.0)))
        .collect::<Result<Vec<_>>>()?;
    let p = &defaults.prices;
    let observation = SlotObservation {
        slot: 0,
        carbon_intensity,
        spot_price: rng.random_range(p.spot_mean - p.spot_spread..=p.spot_mean + p.spot_spread),
        future_price: rng.random_range(p.future_mean - p.future_spread..=p.future_mean + p.future_spread),
        tasks,
    };
    let stage = if rng.random_bool(0.5) {
        Stage::FrameStart { frame_length: defaults.frame_length }
    } else {
        // A share between nothing and roughly the all-cloud emission.
        let cloud: f64 = (0..n).map(|i| observation.emission(&locations, i, 0)).sum();
        Stage::Slot { future_share: cloud * rng.random::<f64>() }
    };
    let q = 10.0 * rng.random::<f64>();
    let v = rng.random_range(1e8..=1e9) * defaults.v_scale;
    Ok(OracleInstance { stage, q, v, locations, observation })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub instance: usize,
    pub tasks: usize,
    pub locations: usize,
    pub frame_start: bool,
    pub lp_objective: f64,
    pub opt_objective: f64,
    pub r3dra_objective: f64,
    pub irr_objective: f64,
    pub r3dra_ratio: f64,
    pub irr_ratio: f64,
    pub r3dra_feasible: bool,
    pub irr_feasible: bool,
    pub r3dra_orphans: usize,
}

fn evaluate(inst: &OracleInstance, a: crate::model::Assignment) -> Result<(f64, bool)> {
    let obs = &inst.observation;
    let purchase = minimal_cer(inst.stage, &a, obs, &inst.locations)?;
    let obj = subproblem_objective(inst.stage, &a, purchase, obs, inst.q, inst.v, &inst.locations)?;
    let (spot, share) = match inst.stage {
        Stage::FrameStart { frame_length } => (0.0, purchase / frame_length as f64),
        Stage::Slot { future_share } => (purchase, future_share),
    };
    let report = check_constraints(&SlotDecision::new(a, spot, share), obs, &inst.locations)?;
    Ok((obj, report.feasible()))
}

/// Solves one instance all four ways.
pub fn compare_instance(index: usize, inst: &OracleInstance, rng: &mut ChaCha8Rng) -> Result<OracleRow> {
    let obs = &inst.observation;
    let relaxed = solve_relaxed(inst.stage, obs, inst.q, inst.v, &inst.locations)?;
    let opt = brute_force_opt(inst.stage, obs, inst.q, inst.v, &inst.locations)?;
    let rounded = r3dra_round(&relaxed.assignment, &obs.tasks, &inst.locations, rng)?;
    let orphans = rounded.orphans;
    let rounded = repair_capacity(rounded, &obs.tasks, &inst.locations)?;
    let (r3dra, r3dra_feasible) = evaluate(inst, rounded.assignment)?;
    let (irr, irr_feasible) = evaluate(inst, irr_round(&relaxed.assignment, rng)?.assignment)?;
    if relaxed.objective > opt.objective * (1.0 + 1e-9) + FEASIBILITY_TOL {
        return Err(Error::Invariant(format!(
            "instance {index}: relaxation {} above integral optimum {}",
            relaxed.objective, opt.objective
        )));
    }
    Ok(OracleRow {
        instance: index,
        tasks: obs.tasks.len(),
        locations: inst.locations.len(),
        frame_start: matches!(inst.stage, Stage::FrameStart { .. }),
        lp_objective: relaxed.objective,
        opt_objective: opt.objective,
        r3dra_objective: r3dra,
        irr_objective: irr,
        r3dra_ratio: r3dra / opt.objective,
        irr_ratio: irr / opt.objective,
        r3dra_feasible,
        irr_feasible,
        r3dra_orphans: orphans,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioStats {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
    /// Fraction of instances with ratio <= 1.5.
    pub within_1_5: f64,
    pub infeasible: usize,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let k = ((p * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1);
    sorted[k]
}

fn stats(ratios: &[f64], feasible: &[bool]) -> RatioStats {
    let mut s = ratios.to_vec();
    s.sort_by(f64::total_cmp);
    RatioStats {
        mean: s.iter().sum::<f64>() / s.len() as f64,
        p50: percentile(&s, 0.5),
        p95: percentile(&s, 0.95),
        max: *s.last().expect("non-empty"),
        within_1_5: s.iter().filter(|r| **r <= 1.5).count() as f64 / s.len() as f64,
        infeasible: feasible.iter().filter(|f| !**f).count(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub seed: u64,
    pub instances: usize,
    pub r3dra: RatioStats,
    pub irr: RatioStats,
    pub rows: Vec<OracleRow>,
}

pub fn oracle_compare(instances: usize, max_tasks: usize, max_locations: usize, seed: u64) -> Result<OracleReport> {
    if instances == 0 {
        return Err(Error::validation("instance count must be positive"));
    }
    let mut gen = ChaCha8Rng::seed_from_u64(seed);
    let mut round_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_a11);
    let mut rows = Vec::with_capacity(instances);
    for k in 0..instances {
        let inst = random_instance(&mut gen, max_tasks, max_locations)?;
        rows.push(compare_instance(k, &inst, &mut round_rng)?);
    }
    let col = |f: fn(&OracleRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let r3dra = stats(&col(|r| r.r3dra_ratio), &rows.iter().map(|r| r.r3dra_feasible).collect::<Vec<_>>());
    let irr = stats(&col(|r| r.irr_ratio), &rows.iter().map(|r| r.irr_feasible).collect::<Vec<_>>());
    Ok(OracleReport { seed, instances, r3dra, irr, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_sizes() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        assert!(random_instance(&mut r, 9, 4).is_err());
        assert!(random_instance(&mut r, 4, 6).is_err());
        assert!(oracle_compare(0, 4, 3, 1).is_err());
    }

    #[test]
    fn small_comparison_is_deterministic() {
        let a = oracle_compare(20, 4, 3, 7).unwrap();
        let b = oracle_compare(20, 4, 3, 7).unwrap();
        assert_eq!(a, b);
        for row in &a.rows {
            assert!(row.r3dra_feasible);
            assert!(row.r3dra_ratio >= 1.0 - 1e-9);
            assert!(row.lp_objective <= row.opt_objective * (1.0 + 1e-9));
        }
    }
}
