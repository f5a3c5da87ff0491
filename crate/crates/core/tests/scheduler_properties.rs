mod common;

use proptest::prelude::*;
use ragsched::cost_model::{retrieval_time, CostModelFit};
use ragsched::memory_planner::check_feasible;
use ragsched::scheduler::{active_profile, avg_latency_equal_split, choose_generation_batch, max_batch_optimal, ProfileOptions};

const EPS: f64 = 1e-6;

/// Sequential replay of `k` equal batches, every request arriving at 0.
fn replay(n: u32, k: u32, fit: &CostModelFit) -> f64 {
    let size = n / k;
    let mut clock = 0.0;
    let mut sum = 0.0;
    for _ in 0..k {
        clock += fit.predict(size as f64);
        sum += clock * size as f64;
    }
    sum / n as f64
}

proptest! {
    #[test]
    fn below_threshold_the_whole_backlog_is_served_at_once(a in 1e-3..1e3f64, c in 0.0..(1.5_f64.log2() - EPS), half in 1u32..=128) {
        let n = 2 * half;
        let backlog = common::requests_at(&vec![0.0; n as usize]);
        let d = choose_generation_batch(&backlog, 0.0, &[half, n], &CostModelFit::new(a, c), n).unwrap();
        prop_assert_eq!(d.chosen_batch, n);
    }

    #[test]
    fn above_threshold_the_backlog_is_halved(a in 1e-3..1e3f64, c in (1.5_f64.log2() + EPS)..3.0, half in 1u32..=128) {
        let n = 2 * half;
        let backlog = common::requests_at(&vec![0.0; n as usize]);
        let d = choose_generation_batch(&backlog, 0.0, &[half, n], &CostModelFit::new(a, c), n).unwrap();
        prop_assert_eq!(d.chosen_batch, half);
    }

    #[test]
    fn split_advantage_changes_sign_at_the_root(k in 2u32..=4, a in 0.1..10.0f64, offset in 1e-4..0.5f64) {
        // root of 2 k^c = k + 1
        let root = ((k as f64 + 1.0) / 2.0).ln() / (k as f64).ln();
        let n = 12;
        let zeros = vec![0.0; n as usize];
        let gap = |c: f64| {
            let fit = CostModelFit::new(a, c);
            avg_latency_equal_split(n, &zeros, 1, &fit).unwrap() - avg_latency_equal_split(n, &zeros, k, &fit).unwrap()
        };
        prop_assert!(gap((root - offset).max(0.0)) < 0.0);
        prop_assert!(gap(root + offset) > 0.0);
        prop_assert!(gap(root).abs() <= 1e-9 * a * n as f64);
        prop_assert_eq!(max_batch_optimal(root - offset, k), true);
        prop_assert_eq!(max_batch_optimal(root + offset, k), false);
    }

    #[test]
    fn equal_split_matches_replay(n in 1u32..=16, a in 1e-3..1e2f64, c in 0.0..2.0f64, pick in 0usize..16, shift in -50.0..0.0f64) {
        let divisors: Vec<u32> = (1..=n).filter(|k| n % k == 0).collect();
        let k = divisors[pick % divisors.len()];
        let fit = CostModelFit::new(a, c);
        let got = avg_latency_equal_split(n, &vec![0.0; n as usize], k, &fit).unwrap();
        let want = replay(n, k, &fit);
        prop_assert!((got - want).abs() <= 1e-9 * want.max(1.0));
        // earlier arrivals shift the average by the mean wait
        let aged = avg_latency_equal_split(n, &vec![shift; n as usize], k, &fit).unwrap();
        prop_assert!((aged - (want - shift)).abs() <= 1e-9 * (want - shift).max(1.0));
    }

    #[test]
    fn chosen_batch_is_a_usable_candidate(
        n in 1usize..=200, cands in prop::collection::btree_set(1u32..=128, 1..6), limit in 1u32..=128, c in 0.0..1.5f64,
    ) {
        let candidates: Vec<u32> = cands.into_iter().collect();
        let backlog = common::requests_at(&vec![0.0; n]);
        match choose_generation_batch(&backlog, 0.0, &candidates, &CostModelFit::new(1.0, c), limit) {
            Ok(d) => {
                prop_assert!(candidates.contains(&d.chosen_batch));
                prop_assert!(d.chosen_batch <= limit);
                let best = d.evaluated.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
                prop_assert!(d.predicted_avg_latency <= best * (1.0 + 1e-9));
            }
            Err(_) => prop_assert!(candidates.iter().all(|&b| b > limit)),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn policy_tables_are_feasible_and_searches_descend(
        search in 0.2..2.0f64, decode in 1e-4..4e-3f64, kv_mib in 64u64..=512, probes in prop::collection::btree_set(prop_oneof![Just(8u32), Just(16), Just(32), Just(48), Just(64)], 1..4),
    ) {
        let mut sc = common::reference().scaled();
        sc.db.search_seconds_per_partition = search / 60.0;
        sc.model.compute_decode_per_layer = decode / 60.0;
        sc.model.kv_bytes_per_request = kv_mib << 20;
        let probes: Vec<u32> = probes.into_iter().collect();
        let options = ProfileOptions { fraction_step: 0.1, ..sc.profile_options };
        let table = active_profile(&sc.hw, &sc.model, &sc.db, &probes, &sc.partition_candidates, &options).unwrap();
        prop_assert!(table.check_ranges().is_ok());
        for e in &table.entries {
            prop_assert!(check_feasible(&e.placement, &sc.hw, &sc.model, &sc.db).feasible);
            prop_assert_eq!(e.retrieval_seconds, retrieval_time(e.placement.resident_partitions, &sc.db));
            let objectives: Vec<f64> = e.search_path.iter().map(|s| s.objective).collect();
            prop_assert!(!objectives.is_empty());
            prop_assert!(objectives.windows(2).all(|w| w[1] <= w[0]));
        }
        let chosen: Vec<u32> = table.entries.iter().map(|e| e.placement.gen_batch_size).collect();
        prop_assert!(chosen.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn reference_profile_scales_batch_with_backlog() {
    let sc = common::reference().scaled();
    let table = common::profile(&sc, &[16, 32, 48]);
    let chosen: Vec<u32> = table.entries.iter().map(|e| e.placement.gen_batch_size).collect();
    assert_eq!(chosen, vec![16, 32, 48]);
    let (first, _) = table.lookup(1).unwrap();
    let (last, _) = table.lookup(10_000).unwrap();
    assert_eq!((first, last), (0, 2));
}
