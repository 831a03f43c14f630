use coexist::allocation::{clamp_channel_budgets, run_allocation_untraced, DisturbanceEvent};
use coexist::foraging::{
    ess_deviation_check, run_selection, system_fitness, HybridMembership, StrategyPreset,
};
use coexist::mediator::{parse_request, replay, Mediator, Request, RequestBody};
use coexist::metrics::collision_occurred;
use coexist::model::{
    closed_form_equilibrium, fairness_index, interior_fixed_point, stability_eigenvalues, CompetitionParams,
    NetworkAllocState,
};
use coexist::scenario::{run_pipeline, Scenario};
use coexist::NetworkId;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn registered(channels: usize, n: usize) -> (Mediator, Vec<NetworkId>) {
    let mut mediator = Mediator::unlogged(channels);
    let ids: Vec<NetworkId> = (0..n).map(|i| NetworkId::from(format!("net{i}"))).collect();
    for id in &ids {
        mediator.register(id).unwrap();
    }
    (mediator, ids)
}

fn requirements() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(1u32..=5, 2..=6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn converges_to_the_interior_fixed_point(
        reqs in requirements(),
        extra in 4usize..=40,
        alpha in 0.5f64..0.9,
        r in 1.0f64..1.95,
    ) {
        let n = reqs.len();
        let channels = n + extra;
        let params = CompetitionParams::for_channels(alpha, r, channels, n).unwrap();
        let (mut mediator, ids) = registered(channels, n);
        let states = ids.iter().zip(&reqs)
            .map(|(id, &q)| NetworkAllocState::new(id.clone(), q, 0.1).unwrap())
            .collect();
        let report = run_allocation_untraced(states, &params, &[], &mut mediator).unwrap();
        prop_assert!(report.converged);
        let raw = interior_fixed_point(&reqs, channels, alpha).unwrap();
        let normalized = closed_form_equilibrium(&reqs, channels).unwrap();
        for i in 0..n {
            prop_assert!((report.raw_totals[i] - raw[i]).abs() < 1e-3);
            prop_assert!((report.normalized_totals[i] - normalized[i]).abs() < 1e-3);
        }
    }

    #[test]
    fn fairness_is_scale_invariant_and_bounded(
        pairs in prop::collection::vec((0.01f64..50.0, 1u32..=8), 1..=10),
        scale in 0.01f64..100.0,
    ) {
        let shares: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let reqs: Vec<u32> = pairs.iter().map(|p| p.1).collect();
        let f = fairness_index(&shares, &reqs).unwrap();
        let scaled: Vec<f64> = shares.iter().map(|s| s * scale).collect();
        prop_assert!(f > 0.0 && f <= 1.0 + 1e-12);
        prop_assert!((fairness_index(&scaled, &reqs).unwrap() - f).abs() < 1e-9);
        let proportional: Vec<f64> = reqs.iter().map(|&q| q as f64 * scale).collect();
        prop_assert!((fairness_index(&proportional, &reqs).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigenvalues_are_negative(alpha in 0.001f64..0.999, r in 0.001f64..10.0, l in 2usize..=200) {
        let params = CompetitionParams::new(alpha, r, 10.0).unwrap();
        let eig = stability_eigenvalues(l, &params);
        prop_assert!(eig.major < 0.0 && eig.minor < 0.0 && eig.is_stable());
    }

    #[test]
    fn perturbed_equilibrium_contracts_back(
        reqs in requirements(),
        signs in prop::collection::vec(any::<bool>(), 30),
    ) {
        let n = reqs.len();
        let channels = 20 + n;
        let params = CompetitionParams::for_channels(0.9, 1.95, channels, n).unwrap();
        let raw = interior_fixed_point(&reqs, channels, 0.9).unwrap();
        let (mut mediator, ids) = registered(channels, n);
        let mut sign = signs.iter().cycle();
        let states = ids.iter().zip(&reqs).zip(&raw)
            .map(|((id, &q), &total)| {
                let s = total / q as f64;
                let shares = (0..q)
                    .map(|_| if *sign.next().unwrap() { s * 1.1 } else { s * 0.9 })
                    .collect();
                NetworkAllocState::from_shares(id.clone(), shares).unwrap()
            })
            .collect();
        let report = run_allocation_untraced(states, &params, &[], &mut mediator).unwrap();
        prop_assert!(report.converged);
        for i in 0..n {
            prop_assert!((report.raw_totals[i] - raw[i]).abs() < 1e-3);
        }
    }

    #[test]
    fn clamped_budgets_are_feasible(
        entries in prop::collection::vec((1usize..=12, 0.0f64..1.0), 1..=12),
        slack in 0usize..=10,
    ) {
        let n = entries.len();
        let channels = n + slack;
        let counts: Vec<usize> = entries.iter().map(|e| e.0).collect();
        let fractions: Vec<f64> = entries.iter().map(|e| e.1).collect();
        let budgets = clamp_channel_budgets(&counts, &fractions, channels).unwrap();
        prop_assert!(budgets.iter().sum::<usize>() <= channels);
        prop_assert!(budgets.iter().all(|&m| m >= 1));
        prop_assert!(budgets.iter().zip(&counts).all(|(b, c)| b <= c));
        if counts.iter().sum::<usize>() <= channels {
            prop_assert_eq!(budgets, counts);
        }
    }

    #[test]
    fn greedy_selection_is_an_ideal_free_distribution(
        budgets in prop::collection::vec(1usize..=5, 1..=8),
        slack in 0usize..=6,
        seed in any::<u64>(),
    ) {
        let n = budgets.len();
        let channels = budgets.iter().sum::<usize>() + slack;
        let (mut mediator, _) = registered(channels, n);
        let strategies = StrategyPreset::AllShare.assign(n, HybridMembership::default());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let assignment = run_selection(&budgets, &strategies, &mut mediator, &mut rng).unwrap();
        prop_assert!(!collision_occurred(&assignment));
        prop_assert!(assignment.occupancy.iter().all(|&y| y <= 1));
        prop_assert_eq!(system_fitness(&assignment).unwrap(), 1.0);
        prop_assert!(ess_deviation_check(&assignment));
        for (held, &m) in assignment.channels.iter().zip(&budgets) {
            prop_assert_eq!(held.len(), m);
        }
    }

    #[test]
    fn request_lines_round_trip(
        seq in any::<u64>(),
        share in -1e6f64..1e6,
        channel in 0usize..1000,
        which in 0usize..5,
    ) {
        let body = match which {
            0 => RequestBody::Register,
            1 => RequestBody::ReportShare { share },
            2 => RequestBody::GetBeta,
            3 => RequestBody::GetSelectivity,
            _ => RequestBody::Select { channel },
        };
        let request = Request { seq, network: NetworkId::from("net-1"), body };
        prop_assert_eq!(parse_request(&request.to_line()).unwrap(), request);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn pipeline_is_deterministic_and_replayable(
        reqs in requirements(),
        extra in 0usize..=12,
        preset in prop::sample::select(StrategyPreset::ALL.to_vec()),
        seed in any::<u64>(),
        silence in any::<bool>(),
    ) {
        let n = reqs.len();
        let mut scenario = Scenario::with_requirements(n + extra, &reqs);
        scenario.strategy = preset;
        scenario.master_seed = Some(seed);
        if silence {
            scenario.disturbances.push(DisturbanceEvent::silence("net1", 1, 50, 59));
        }
        let first = run_pipeline(&scenario).unwrap();
        let second = run_pipeline(&scenario).unwrap();
        prop_assert_eq!(&first, &second);
        prop_assert_eq!(&first.request_log, &second.request_log);
        prop_assert!(replay(scenario.channels, &first.request_log).is_ok());
        for (i, entry) in first.request_log.iter().enumerate() {
            prop_assert_eq!(entry.seq, i as u64);
        }
    }
}
