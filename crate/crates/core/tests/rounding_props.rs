use carbon_sched::cost::check_constraints;
use carbon_sched::model::{Assignment, Location, MlTask, SlotDecision, SlotObservation, TaskId};
use carbon_sched::oracle::random_instance;
use carbon_sched::rounding::{irr_round, pair_adjust, r3dra_round, repair_capacity};
use carbon_sched::subproblem::solve_relaxed;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Rows drawn from a Dirichlet-like normalisation of random weights.
fn arb_fractional(n: usize, m: usize) -> impl Strategy<Value = Assignment> {
    prop::collection::vec(prop::collection::vec(0.0f64..1.0, m), n).prop_map(move |rows| {
        let mut values = Vec::with_capacity(n * m);
        for row in rows {
            let s: f64 = row.iter().sum::<f64>() + 1e-12;
            let mut r: Vec<f64> = row.iter().map(|v| v / s).collect();
            let drift: f64 = 1.0 - r.iter().sum::<f64>();
            r[0] += drift;
            values.extend(r);
        }
        Assignment::from_values(n, m, values).unwrap()
    })
}

fn uncapacitated(m: usize) -> Vec<Location> {
    let mut l = vec![Location::cloud(0.02, 4e-4)];
    for j in 1..m {
        l.push(Location::edge(j, 0.1 + 0.01 * j as f64, 3e-5, f64::INFINITY));
    }
    l
}

fn tasks(n: usize) -> Vec<MlTask> {
    (0..n).map(|i| MlTask::new(TaskId(i as u64), 5e8, 6e11 + 5e10 * i as f64).unwrap()).collect()
}

proptest! {
    #[test]
    fn pair_adjust_conserves_mass_and_expectation(p1 in 0.01f64..0.99, p2 in 0.01f64..0.99, seed in any::<u64>()) {
        let (a, b) = pair_adjust(p1, p2, 1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!((a + b - (p1 + p2)).abs() <= 1e-9);
        prop_assert!(a == 0.0 || a == 1.0 || b == 0.0 || b == 1.0);
        // The two outcomes average back to the input.
        let e1 = (1.0 - p1).min(p2);
        let e2 = p1.min(1.0 - p2);
        let mean = e2 / (e1 + e2) * (p1 + e1) + e1 / (e1 + e2) * (p1 - e2);
        prop_assert!((mean - p1).abs() <= 1e-12);
    }

    #[test]
    fn r3dra_outputs_one_hot_rows(frac in arb_fractional(5, 4), seed in any::<u64>()) {
        let out = r3dra_round(&frac, &tasks(5), &uncapacitated(4), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(out.assignment.is_binary());
        prop_assert_eq!(out.orphans, 0);
        prop_assert!(out.iterations <= 5 * 3);
        for i in 0..5 {
            prop_assert_eq!(out.assignment.row_sum(i), 1.0);
            // support never grows
            let j = out.assignment.location_of(i).unwrap();
            prop_assert!(frac.get(i, j) > 0.0);
        }
    }

    #[test]
    fn repaired_rounding_is_feasible(seed in any::<u64>()) {
        let inst = random_instance(&mut ChaCha8Rng::seed_from_u64(seed), 8, 5).unwrap();
        let obs: &SlotObservation = &inst.observation;
        let lp = solve_relaxed(inst.stage, obs, inst.q, inst.v, &inst.locations).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for out in [
            r3dra_round(&lp.assignment, &obs.tasks, &inst.locations, &mut rng).unwrap(),
            irr_round(&lp.assignment, &mut rng).unwrap(),
        ] {
            let fixed = repair_capacity(out, &obs.tasks, &inst.locations).unwrap();
            let d = SlotDecision::new(fixed.assignment, 1e9, 0.0);
            let r = check_constraints(&d, obs, &inst.locations).unwrap();
            prop_assert!(r.feasible(), "{:?}", r);
        }
    }

    #[test]
    fn same_seed_same_outcome(frac in arb_fractional(4, 3), seed in any::<u64>()) {
        let a = r3dra_round(&frac, &tasks(4), &uncapacitated(3), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = r3dra_round(&frac, &tasks(4), &uncapacitated(3), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn irr_ignores_capacity() {
    // Two tasks that each fit the edge alone but not together, both with
    // all their mass on the edge.
    let locs = vec![Location::cloud(0.02, 4e-4), Location::edge(1, 0.12, 3e-5, 1.5e12)];
    let t: Vec<MlTask> = (0..2).map(|i| MlTask::new(TaskId(i), 5e8, 1e12).unwrap()).collect();
    let frac = Assignment::from_values(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
    let obs = SlotObservation {
        slot: 0,
        carbon_intensity: vec![1e-7, 5e-8],
        spot_price: 3.0,
        future_price: 1.5,
        tasks: t.clone(),
    };
    let out = irr_round(&frac, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let r = check_constraints(&SlotDecision::new(out.assignment.clone(), 1.0, 0.0), &obs, &locs).unwrap();
    assert!(!r.capacity_ok());
    let fixed = repair_capacity(out, &t, &locs).unwrap();
    let r = check_constraints(&SlotDecision::new(fixed.assignment, 1.0, 0.0), &obs, &locs).unwrap();
    assert!(r.capacity_ok());
    assert_eq!(fixed.repairs.len(), 1);
}

#[test]
fn marginals_on_uncapacitated_instance() {
    let frac = Assignment::from_values(2, 3, vec![0.2, 0.5, 0.3, 0.6, 0.0, 0.4]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut hits = [0usize; 6];
    for _ in 0..10_000 {
        let out = r3dra_round(&frac, &tasks(2), &uncapacitated(3), &mut rng).unwrap();
        for (k, v) in out.assignment.values().iter().enumerate() {
            hits[k] += (*v == 1.0) as usize;
        }
    }
    for (k, h) in hits.iter().enumerate() {
        assert!((*h as f64 / 1e4 - frac.values()[k]).abs() <= 0.02, "entry {k}");
    }
}
