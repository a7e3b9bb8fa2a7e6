use carbon_sched::cost::{assignment_emission, check_constraints};
use carbon_sched::model::{Assignment, SlotDecision};
use carbon_sched::oracle::random_instance;
use carbon_sched::rounding::brute_force_opt;
use carbon_sched::subproblem::{build_p3, build_p4, minimal_cer, solve_relaxed, Stage};
use carbon_sched::lp::simplex_solve;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn relaxation_bounds_integral_optimum(seed in any::<u64>()) {
        let inst = random_instance(&mut ChaCha8Rng::seed_from_u64(seed), 6, 4).unwrap();
        let obs = &inst.observation;
        let lp = solve_relaxed(inst.stage, obs, inst.q, inst.v, &inst.locations).unwrap();
        let opt = brute_force_opt(inst.stage, obs, inst.q, inst.v, &inst.locations).unwrap();
        prop_assert!(lp.objective <= opt.objective * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn lp_solution_satisfies_rows(seed in any::<u64>()) {
        let inst = random_instance(&mut ChaCha8Rng::seed_from_u64(seed), 8, 5).unwrap();
        let obs = &inst.observation;
        let p = match inst.stage {
            Stage::FrameStart { frame_length } => build_p3(obs, inst.q, inst.v, frame_length, &inst.locations).unwrap(),
            Stage::Slot { future_share } => build_p4(obs, inst.q, future_share, inst.v, &inst.locations).unwrap(),
        };
        let s = simplex_solve(&p).unwrap();
        prop_assert!(p.max_violation(&s.primal) <= 1e-9);

        // The same point read as a decision: rows sum to one, capacities and
        // CER coverage hold up to the same tolerance.
        let n = obs.tasks.len();
        let m = inst.locations.len();
        let a = Assignment::from_values(n, m, s.primal[..n * m].to_vec()).unwrap();
        let r = s.primal[n * m];
        let (spot, share) = match inst.stage {
            Stage::FrameStart { frame_length } => (0.0, r / frame_length as f64),
            Stage::Slot { future_share } => (r, future_share),
        };
        let rep = check_constraints(&SlotDecision::new(a, spot, share), obs, &inst.locations).unwrap();
        prop_assert!(rep.row_sum_deviation <= 1e-9);
        prop_assert!(rep.capacity_slack.iter().all(|s| *s >= -1e-9 * 5e12));
        prop_assert!(rep.cer_slack >= -1e-9);
    }

    #[test]
    fn minimal_cer_is_least_cover(seed in any::<u64>(), share in 0.0f64..0.5) {
        let inst = random_instance(&mut ChaCha8Rng::seed_from_u64(seed), 6, 4).unwrap();
        let obs = &inst.observation;
        let n = obs.tasks.len();
        let a = Assignment::one_hot(inst.locations.len(), &vec![0; n]);
        let car = assignment_emission(&a, obs, &inst.locations).unwrap();
        let r = minimal_cer(Stage::Slot { future_share: share }, &a, obs, &inst.locations).unwrap();
        prop_assert!(r >= 0.0 && share + r >= car - 1e-15);
        prop_assert!(r == 0.0 || (share + r - car).abs() <= 1e-15);
    }
}

#[test]
fn zero_queue_minimizes_accuracy_loss() {
    for seed in 0..50 {
        let mut inst = random_instance(&mut ChaCha8Rng::seed_from_u64(seed), 6, 4).unwrap();
        inst.q = 0.0;
        let obs = &inst.observation;
        let lp = solve_relaxed(inst.stage, obs, 0.0, inst.v, &inst.locations).unwrap();
        // the cloud is uncapacitated and has the lowest loss
        for i in 0..obs.tasks.len() {
            assert!((lp.assignment.get(i, 0) - 1.0).abs() < 1e-9, "seed {seed}");
        }
        let expected = inst.v * inst.locations[0].accuracy_loss * obs.tasks.len() as f64;
        assert!((lp.objective - expected).abs() < 1e-12 * expected.max(1.0));
    }
}
