use proptest::prelude::*;
use ragsched::domain::{DatabaseProfile, HardwareProfile, ModelProfile, PlacementConfig, TierSplit, Validate};
use ragsched::memory_planner::{
    check_feasible, enumerate_feasible, fill_placement, generation_usage, partition_usage, plan_transfer,
    DiskResidency, PlacementGrid,
};
use ragsched::units::GIB;

fn hardware() -> impl Strategy<Value = HardwareProfile> {
    (8u64..=80, 32u64..=512, 64u64..=4096, 1u64..=32, 1u64..=8).prop_map(|(g, c, d, bg, bd)| HardwareProfile {
        gpu_mem: g * GIB,
        cpu_mem: c * GIB,
        disk_capacity: d * GIB,
        bw_gpu_cpu: (bg * GIB) as f64,
        bw_cpu_disk: (bd * GIB) as f64,
        gpu_layer_rate: 1.0,
        jitter_sigma: 0.0,
    })
}

fn model() -> impl Strategy<Value = ModelProfile> {
    (1u32..=80, 4u64..=160, 1u64..=1024, 1u64..=512).prop_map(|(l, w, kv, ws)| ModelProfile {
        num_layers: l,
        weight_total: w * GIB,
        kv_bytes_per_request: kv << 20,
        workspace_bytes_per_request: ws << 20,
        compute_prefill_per_layer: 0.01,
        compute_decode_per_layer: 0.001,
        output_tokens: 8,
        decode_batch_exponent: 1.0,
        decode_workspace_fraction: 0.25,
        kv_traffic_fraction: 1.0,
    })
}

fn database() -> impl Strategy<Value = DatabaseProfile> {
    (1u32..=40, 1u64..=16).prop_map(|(n, size)| DatabaseProfile {
        num_partitions: n,
        partition_bytes: size * GIB,
        search_seconds_per_partition: 0.5,
        load_seconds_per_partition: size as f64 / 3.0,
    })
}

fn split() -> impl Strategy<Value = TierSplit> {
    (0.0..=1.0f64, 0.0..=1.0f64).prop_map(|(a, b)| TierSplit::spill_to_disk(a, (1.0 - a) * b))
}

fn grid(db_partitions: u32) -> impl Strategy<Value = PlacementGrid> {
    (
        prop::collection::vec(0u32..=20, 1..5),
        prop::collection::vec(0u32..=20, 1..5),
        prop::collection::vec(0..=db_partitions, 1..5),
        prop::collection::vec(1u32..=128, 1..4),
    )
        .prop_map(|(w, c, p, b)| PlacementGrid {
            w_gpu: w.into_iter().map(|x| x as f64 / 20.0).collect(),
            c_gpu: c.into_iter().map(|x| x as f64 / 20.0).collect(),
            partitions: p,
            batches: b,
        })
}

fn scenario() -> impl Strategy<Value = (HardwareProfile, ModelProfile, DatabaseProfile, PlacementGrid)> {
    (hardware(), model(), database()).prop_flat_map(|(hw, m, db)| {
        let n = db.num_partitions;
        (Just(hw), Just(m), Just(db), grid(n))
    })
}

fn key(c: &PlacementConfig) -> (u32, u32, u64, u64) {
    (c.gen_batch_size, c.resident_partitions, c.weights.gpu.to_bits(), c.cache.gpu.to_bits())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn feasible_configs_respect_every_capacity((hw, m, db, g) in scenario()) {
        for cfg in enumerate_feasible(&hw, &m, &db, &g) {
            let used = generation_usage(&cfg, &m) + partition_usage(cfg.resident_partitions, &db);
            prop_assert!(used.gpu <= hw.gpu_mem as f64);
            prop_assert!(used.cpu <= hw.cpu_mem as f64);
            prop_assert!(used.disk <= hw.disk_capacity as f64);
            prop_assert!(cfg.validate().is_ok());
        }
    }

    #[test]
    fn enumeration_equals_brute_force_filter((hw, m, db, g) in scenario()) {
        let mut brute = Vec::new();
        for &b in &g.batches {
            for &p in &g.partitions {
                for &w in &g.w_gpu {
                    for &c in &g.c_gpu {
                        let cfg = fill_placement(&hw, &m, &db, w, c, p, b);
                        if check_feasible(&cfg, &hw, &m, &db).feasible {
                            brute.push(cfg);
                        }
                    }
                }
            }
        }
        brute.sort_by_key(key);
        brute.dedup_by_key(|c| key(c));
        let listed = enumerate_feasible(&hw, &m, &db, &g);
        let mut sorted = listed.clone();
        sorted.sort_by_key(key);
        prop_assert_eq!(&listed, &sorted);
        prop_assert_eq!(listed, brute);
    }

    #[test]
    fn larger_batches_never_become_feasible(
        hw in hardware(), m in model(), db in database(),
        w in split(), c in split(), p in 0u32..=40, b in 1u32..=128, extra in 1u32..=128,
    ) {
        let p = p.min(db.num_partitions);
        let small = PlacementConfig::new(w, c, p, b);
        let large = small.with_batch(b + extra);
        if !check_feasible(&small, &hw, &m, &db).feasible {
            prop_assert!(!check_feasible(&large, &hw, &m, &db).feasible);
        }
    }

    #[test]
    fn transfer_duration_is_symmetric_without_history(
        hw in hardware(), m in model(), db in database(),
        w1 in split(), w2 in split(), p1 in 0u32..=40, p2 in 0u32..=40,
    ) {
        let a = PlacementConfig::new(w1, TierSplit::GPU_ONLY, p1.min(db.num_partitions), 8);
        let b = PlacementConfig::new(w2, TierSplit::GPU_ONLY, p2.min(db.num_partitions), 8);
        let empty = DiskResidency::new();
        let there = plan_transfer(&a, &b, &hw, &m, &db, &empty);
        let back = plan_transfer(&b, &a, &hw, &m, &db, &empty);
        prop_assert!((there.duration - back.duration).abs() <= 1e-9 * there.duration.max(1.0));
    }

    #[test]
    fn fractions_sum_to_one_after_construction(
        hw in hardware(), m in model(), db in database(),
        w in 0u32..=20, c in 0u32..=20, p in 0u32..=40, b in 1u32..=128, q in 0u32..=40, b2 in 1u32..=128,
    ) {
        let cfg = fill_placement(&hw, &m, &db, w as f64 / 20.0, c as f64 / 20.0, p.min(db.num_partitions), b);
        for cfg in [cfg, cfg.with_partitions(q), cfg.with_batch(b2)] {
            prop_assert!((cfg.weights.sum() - 1.0).abs() <= 1e-9);
            prop_assert!((cfg.cache.sum() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn parsed_placement_round_trips_through_text(w in split(), c in split(), p in 0u32..=64, b in 1u32..=256) {
        let cfg = PlacementConfig::new(w, c, p, b);
        let text = format!(
            "w={:?},{:?},{:?};c={:?},{:?},{:?};P={};B={}",
            w.gpu, w.cpu, w.disk, c.gpu, c.cpu, c.disk, p, b
        );
        let parsed: PlacementConfig = text.parse().unwrap();
        prop_assert_eq!(parsed, cfg);
    }

    #[test]
    fn placement_round_trips_through_json(w in split(), c in split(), p in 0u32..=64, b in 1u32..=256) {
        let cfg = PlacementConfig::new(w, c, p, b);
        let text = serde_json::to_string(&cfg).unwrap();
        prop_assert_eq!(serde_json::from_str::<PlacementConfig>(&text).unwrap(), cfg);
    }
}
