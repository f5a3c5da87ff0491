use proptest::prelude::*;
use ragsched::cost_model::{estimate_generation, fit_power_law, generation_time, retrieval_time, Jitter};
use ragsched::domain::{DatabaseProfile, HardwareProfile, ModelProfile, PlacementConfig, TierSplit};
use ragsched::prefetch::{queue_capacity, simulate_layer_timeline, Phase, PrefetchMode, QueueCapacity};
use ragsched::units::GIB;

fn hw() -> HardwareProfile {
    HardwareProfile {
        jitter_sigma: 0.0,
        ..HardwareProfile::pf_high()
    }
}

fn model(layers: u32, prefill: f64, decode: f64, tokens: u32) -> ModelProfile {
    ModelProfile {
        num_layers: layers,
        compute_prefill_per_layer: prefill,
        compute_decode_per_layer: decode,
        output_tokens: tokens,
        ..ModelProfile::llama_8b_like()
    }
}

fn mode() -> impl Strategy<Value = PrefetchMode> {
    prop_oneof![Just(PrefetchMode::ContinuousQueue), Just(PrefetchMode::NextLayerOnly)]
}

fn capacity() -> impl Strategy<Value = QueueCapacity> {
    prop_oneof![Just(QueueCapacity::Unbounded), (1u32..=8).prop_map(QueueCapacity::Bounded)]
}

fn layer_vectors() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..=64).prop_flat_map(|n| {
        (
            prop::collection::vec(0.0..0.05f64, n),
            prop::collection::vec(prop_oneof![Just(0.0), 0.0..0.08f64], n),
        )
    })
}

proptest! {
    #[test]
    fn fit_recovers_noiseless_power_laws(a in 1e-3..1e3f64, c in 0.01..2.5f64, batches in prop::collection::btree_set(1u32..=512, 2..10)) {
        let samples: Vec<(f64, f64)> = batches.iter().map(|&b| (b as f64, a * (b as f64).powf(c))).collect();
        let fit = fit_power_law(&samples).unwrap();
        prop_assert!(((fit.a - a) / a).abs() <= 1e-6);
        prop_assert!(((fit.c - c) / c).abs() <= 1e-6);
    }

    #[test]
    fn retrieval_is_affine_in_resident_partitions(n in 1u32..=64, search in 0.0..5.0f64, load in 1e-3..10.0f64, p in 0u32..64) {
        let db = DatabaseProfile {
            num_partitions: n,
            partition_bytes: GIB,
            search_seconds_per_partition: search,
            load_seconds_per_partition: load,
        };
        let p = p.min(n - 1);
        let slope = retrieval_time(p + 1, &db) - retrieval_time(p, &db);
        prop_assert!((slope + load).abs() <= 1e-9 * (1.0 + n as f64 * (search + load)));
        prop_assert!(retrieval_time(p + 1, &db) < retrieval_time(p, &db));
    }

    #[test]
    fn resident_generation_equals_compute_sum(
        layers in 1u32..=64, prefill in 0.0..0.02f64, decode in 0.0..0.005f64, tokens in 1u32..=32,
        batch in 1u32..=8, m in mode(),
    ) {
        let model = ModelProfile { weight_total: GIB, ..model(layers, prefill, decode, tokens) };
        let cfg = PlacementConfig::new(TierSplit::GPU_ONLY, TierSplit::GPU_ONLY, 0, batch);
        let est = estimate_generation(&cfg, batch, &hw(), &model, m, &mut Jitter::none()).unwrap();
        let l = layers as f64;
        let b = batch as f64;
        let prefill_sum: f64 = (0..layers).map(|_| prefill * b).sum();
        let decode_sum: f64 = (0..layers).map(|_| decode * b).sum();
        prop_assert_eq!(est.prefill, prefill_sum);
        prop_assert_eq!(est.decode_step, decode_sum);
        prop_assert_eq!(est.prefill_stall + est.decode_stall, 0.0);
        prop_assert!((est.total - l * b * (prefill + tokens as f64 * decode)).abs() <= 1e-12 * est.total.max(1.0));
    }

    #[test]
    fn generation_time_grows_with_offloaded_weights(
        gpu_a in 0u32..=20, gpu_b in 0u32..=20, to_disk in 0.0..=1.0f64, batch in 1u32..=16, m in mode(),
    ) {
        let model = model(32, 0.004, 0.0005, 8);
        let (lo, hi) = (gpu_a.min(gpu_b) as f64 / 20.0, gpu_a.max(gpu_b) as f64 / 20.0);
        let place = |gpu: f64| {
            let rest = 1.0 - gpu;
            PlacementConfig::new(
                TierSplit::new(gpu, rest * (1.0 - to_disk), rest * to_disk),
                TierSplit::GPU_ONLY,
                0,
                batch,
            )
        };
        let mut roomy = hw();
        roomy.gpu_mem = 64 * GIB;
        let more_offloaded = generation_time(&place(lo), &roomy, &model, m, 0).unwrap();
        let less_offloaded = generation_time(&place(hi), &roomy, &model, m, 0).unwrap();
        prop_assert!(more_offloaded >= less_offloaded);
    }

    #[test]
    fn timelines_satisfy_structural_invariants((compute, transfer) in layer_vectors(), cap in capacity(), m in mode()) {
        let t = simulate_layer_timeline(&compute, &transfer, cap, m).unwrap();
        prop_assert_eq!(t.layers.len(), compute.len());
        if let Err(e) = t.check_invariants() {
            prop_assert!(false, "{}", e);
        }
    }

    #[test]
    fn continuous_queue_dominates_next_layer((compute, transfer) in layer_vectors(), cap in capacity()) {
        let cq = simulate_layer_timeline(&compute, &transfer, cap, PrefetchMode::ContinuousQueue).unwrap();
        let nlo = simulate_layer_timeline(&compute, &transfer, cap, PrefetchMode::NextLayerOnly).unwrap();
        prop_assert!(cq.total <= nlo.total);
    }

    #[test]
    fn total_is_bounded_below_by_each_resource((compute, transfer) in layer_vectors(), cap in capacity(), m in mode()) {
        let t = simulate_layer_timeline(&compute, &transfer, cap, m).unwrap();
        let sc: f64 = compute.iter().sum();
        let st: f64 = transfer.iter().sum();
        let slack = 1e-12 * (sc + st).max(1.0);
        prop_assert!(t.total + slack >= sc.max(st));
    }

    #[test]
    fn unbounded_queue_meets_the_bound_when_one_resource_dominates(
        n in 1usize..=64, c in 1e-4..0.05f64, ratio in 1.01..5.0f64, transfer_bound in any::<bool>(),
    ) {
        let (compute, transfer) = if transfer_bound {
            // every fetch is longer than the compute of the layer before it
            (vec![c; n], vec![c * ratio; n])
        } else {
            // compute dominates and only the first layer has to wait
            let mut t = vec![c / ratio; n];
            t[0] = 0.0;
            (vec![c; n], t)
        };
        let t = simulate_layer_timeline(&compute, &transfer, QueueCapacity::Unbounded, PrefetchMode::ContinuousQueue).unwrap();
        let want = if transfer_bound {
            transfer.iter().sum::<f64>() + compute[n - 1]
        } else {
            compute.iter().sum::<f64>()
        };
        prop_assert!((t.total - want).abs() <= 1e-12 * want.max(1.0));
        if !transfer_bound {
            prop_assert_eq!(t.total_stall, 0.0);
        }
    }

    #[test]
    fn decode_queue_is_at_least_prefill_queue(
        gpu in 0u32..=19, kv_gpu in 0u32..=20, batch in 1u32..=64, frac in 0.0..=1.0f64,
    ) {
        let model = ModelProfile { decode_workspace_fraction: frac, ..ModelProfile::llama_70b_like() };
        let cfg = PlacementConfig::new(
            TierSplit::spill_to_disk(gpu as f64 / 20.0, 1.0 - gpu as f64 / 20.0),
            TierSplit::spill_to_disk(kv_gpu as f64 / 20.0, 1.0 - kv_gpu as f64 / 20.0),
            0,
            batch,
        );
        let slots = |p| queue_capacity(&cfg, &hw(), &model, p).as_limit();
        prop_assert!(slots(Phase::Decode) >= slots(Phase::Prefill));
    }
}
