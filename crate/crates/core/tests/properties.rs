use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vodsim::adversary::{
    generate_stressless, greedy_pick, validate_sequence, AdversaryKind, AdversarySpec, VideoPicker,
};
use vodsim::allocation::{allocate, reserve_poor_capacity, AllocationMap};
use vodsim::bounds::{feasibility_report, min_replication_k};
use vodsim::engine::{run, run_sequence, Mode, RunOptions};
use vodsim::experiment::fit_catalog;
use vodsim::flow::{
    build_request_graph, decode, max_flow, schedule_maxflow, FlowNetwork, FlowRequest, SINK, SOURCE,
};
use vodsim::model::{AllocationMode, Rate, StripeId, SystemConfig};
use vodsim::state::{PlaybackId, SimState};

fn system(n: usize, s: u32, upload_slots: &[i64], storage: &[i64], k: u32) -> SystemConfig {
    let mut cfg = SystemConfig::homogeneous(n, Rate::from_integer(1), Rate::from_integer(1), s, k, 0);
    cfg.upload = upload_slots.iter().map(|&u| Rate::new(u, s as i64)).collect();
    cfg.storage = storage.iter().map(|&d| Rate::from_integer(d)).collect();
    fit_catalog(&mut cfg);
    cfg
}

fn alloc_config() -> impl Strategy<Value = (SystemConfig, u64)> {
    (4usize..=14, 1u32..=3, 1u32..=3).prop_flat_map(|(n, s, k)| {
        (
            prop::collection::vec(0i64..=4, n),
            prop::sample::select(vec![AllocationMode::Regular, AllocationMode::PurelyRandom]),
            any::<u64>(),
        )
            .prop_map(move |(storage, mode, seed)| {
                let mut cfg = system(n, s, &vec![s as i64 + 1; n], &storage, k);
                cfg.allocation = mode;
                (cfg, seed)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(64) })]

    #[test]
    fn allocation_replicas_and_capacity((cfg, seed) in alloc_config()) {
        prop_assume!(cfg.m > 0);
        let alloc = allocate(&cfg, seed).unwrap();
        for v in 0..cfg.m {
            for st in 0..cfg.s {
                prop_assert_eq!(alloc.holders(StripeId::new(v, st)).len(), cfg.k as usize);
            }
        }
        for b in 0..cfg.n {
            let held = alloc.holdings(b).len() as u32;
            let cap = cfg.storage_slots(b);
            match cfg.allocation {
                AllocationMode::Regular if cfg.replica_count() == cfg.total_storage_slots() => {
                    prop_assert_eq!(held, cap)
                }
                _ => prop_assert!(held <= cap),
            }
        }
    }

    #[test]
    fn allocation_is_reproducible((cfg, seed) in alloc_config()) {
        prop_assume!(cfg.m > 0);
        prop_assert_eq!(allocate(&cfg, seed).unwrap(), allocate(&cfg, seed).unwrap());
    }

    #[test]
    fn reservation_leaves_rich_boxes_above_mu(
        s in 1u32..=6,
        slots in prop::collection::vec(0i64..=24, 2..=12),
    ) {
        let n = slots.len();
        let cfg = system(n, s, &slots, &vec![1; n], 1);
        if let Ok(plan) = reserve_poor_capacity(&cfg) {
            for r in &plan.rich {
                prop_assert!(r.residual_upload >= cfg.mu);
                let expected = cfg.upload[r.box_id] - Rate::new(r.slots_given as i64, s as i64);
                prop_assert_eq!(r.residual_upload, expected);
            }
            for p in &plan.poor {
                let given: u32 = p.providers.iter().map(|(_, c)| *c).sum();
                prop_assert_eq!(given, p.reserved_slots);
                let lifted = cfg.upload[p.box_id] + Rate::new(p.reserved_slots as i64, s as i64);
                prop_assert!(lifted >= cfg.mu);
            }
        }
    }
}

/// Random bipartite request network: request `i` may use the listed boxes.
fn network() -> impl Strategy<Value = (Vec<Vec<usize>>, Vec<i64>)> {
    (1usize..=12, 1usize..=6).prop_flat_map(|(r, b)| {
        (
            prop::collection::vec(prop::collection::btree_set(0..b, 1..=b), r)
                .prop_map(|sets| sets.into_iter().map(|s| s.into_iter().collect()).collect()),
            prop::collection::vec(0i64..=4, b),
        )
    })
}

fn build(holders: &[Vec<usize>], caps: &[i64]) -> FlowNetwork {
    let requests = (0..holders.len())
        .map(|i| FlowRequest {
            downloader: 100 + i,
            playback: PlaybackId(i as u64),
            stripe: StripeId::new(0, i as u32),
        })
        .collect();
    FlowNetwork::bipartite(requests, holders, |b| caps[b])
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(256) })]

    #[test]
    fn flow_is_integral_and_conserved((holders, caps) in network()) {
        let net = build(&holders, &caps);
        let f = max_flow(&net);
        let nodes = net.node_count();
        let mut balance = vec![0i64; nodes];
        for (a, &x) in net.arcs.iter().zip(&f.arc_flow) {
            prop_assert!(x >= 0 && x <= a.capacity);
            if a.capacity == 1 {
                prop_assert!(x == 0 || x == 1);
            }
            balance[a.from] -= x;
            balance[a.to] += x;
        }
        for (v, &b) in balance.iter().enumerate() {
            if v != SOURCE && v != SINK {
                prop_assert_eq!(b, 0);
            }
        }
        prop_assert_eq!(balance[SINK], f.value);
    }

    #[test]
    fn flow_value_ignores_request_order((holders, caps) in network(), seed in any::<u64>()) {
        let mut shuffled = holders.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = max_flow(&build(&holders, &caps)).value;
        let b = max_flow(&build(&shuffled, &caps)).value;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn greedy_pick_is_scale_invariant(
        scores in prop::collection::vec(prop::option::of(0i64..1000), 1..20),
        factor in 1i64..1000,
    ) {
        let m = scores.len() as u32;
        let plain = greedy_pick(m, |v| scores[v as usize]);
        let scaled = greedy_pick(m, |v| scores[v as usize].map(|x| x * factor));
        prop_assert_eq!(plain, scaled);
    }

    #[test]
    fn picker_draws_repeat_per_seed(m in 1u32..50, gamma in 0.0f64..3.0, seed in any::<u64>()) {
        let picker = VideoPicker::zipf(m, gamma).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| picker.pick(&mut rng)).collect::<Vec<_>>()
        };
        let a = draw(seed);
        prop_assert!(a.iter().all(|&v| v < m));
        prop_assert_eq!(a, draw(seed));
    }

    #[test]
    fn replication_bound_is_monotone(u in 2i64..200, d in 1i64..500, s in 2u32..20) {
        let base = min_replication_k(Rate::new(u + 20, 20), Rate::from_integer(d), s).unwrap();
        let richer = min_replication_k(Rate::new(u + 21, 20), Rate::from_integer(d), s).unwrap();
        let larger = min_replication_k(Rate::new(u + 20, 20), Rate::from_integer(d + 1), s).unwrap();
        prop_assert!(base >= 1);
        prop_assert!(richer <= base);
        prop_assert!(larger >= base);
    }
}

/// Small system drawn from `seed` with upload at least `1 + 1/s`.
fn small_system(seed: u64) -> (SystemConfig, AllocationMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(6..=14usize);
    let s = rng.random_range(1..=3u32);
    let k = rng.random_range(1..=3u32);
    let slots: Vec<i64> = (0..n).map(|_| rng.random_range(s as i64 + 1..=2 * s as i64 + 2)).collect();
    let storage: Vec<i64> = (0..n).map(|_| rng.random_range(1..=3)).collect();
    let mut cfg = system(n, s, &slots, &storage, k);
    cfg.video_duration = 12;
    let alloc = allocate(&cfg, seed).unwrap();
    (cfg, alloc)
}

fn adversary(i: u8, seed: u64) -> AdversarySpec {
    let kind = match i % 3 {
        0 => AdversaryKind::Random,
        1 => AdversaryKind::Zipf { gamma: 1.0 },
        _ => AdversaryKind::Greedy,
    };
    AdversarySpec::new(kind, seed)
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(24) })]

    #[test]
    fn runs_are_deterministic_and_audited(
        seed in any::<u64>(),
        adv in 0u8..3,
        mode in prop::sample::select(vec![Mode::Static, Mode::DynamicDistributed, Mode::DynamicMaxflow]),
    ) {
        let (cfg, alloc) = small_system(seed);
        let opts = RunOptions { ticks: 40, ..RunOptions::default() };
        let spec = adversary(adv, seed ^ 1);
        let a = run(&cfg, &alloc, &spec, mode, seed ^ 2, &opts).unwrap();
        let b = run(&cfg, &alloc, &spec, mode, seed ^ 2, &opts).unwrap();
        prop_assert_eq!(&a.metrics, &b.metrics);
        prop_assert!(a.state == b.state);

        let audit = a.metrics.audit;
        prop_assert_eq!(audit.over_capacity, 0);
        prop_assert_eq!(audit.failed_box_busy, 0);
        if mode != Mode::DynamicMaxflow {
            prop_assert_eq!(audit.reserved_slot, 0);
            prop_assert_eq!(audit.cycles, 0);
            prop_assert_eq!(audit.ordering, 0);
        }
        for t in &a.metrics.ticks {
            prop_assert!(t.used_slots <= t.capacity_slots);
        }
        prop_assert_eq!(a.metrics.issued, a.metrics.satisfied + a.metrics.unsatisfied);
    }

    #[test]
    fn stressless_sequences_validate_and_play_safely(seed in any::<u64>(), p_f in 0.0f64..0.15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(8..=16usize);
        let s = rng.random_range(1..=2u32);
        // u ≥ μ + 1/s
        let slots: Vec<i64> = (0..n).map(|_| rng.random_range(2 * s as i64 + 1..=2 * s as i64 + 3)).collect();
        let mut cfg = system(n, s, &slots, &vec![2; n], 2);
        cfg.video_duration = 10;
        cfg.a = Rate::new(7, 10);
        let g = generate_stressless(&cfg, p_f, 2, n, seed);
        prop_assert!(validate_sequence(&cfg, &g.sequence, Some(2)).is_empty());

        let alloc = allocate(&cfg, seed).unwrap();
        let out = run_sequence(&cfg, &alloc, &g.sequence, Mode::DynamicDistributed, seed, &RunOptions::default()).unwrap();
        prop_assert_eq!(out.metrics.unexplained_stalls, 0);
        let logged: u64 = out.metrics.stall_causes.values().sum();
        prop_assert_eq!(logged, out.metrics.stalls);
        prop_assert!(out.metrics.audit.is_clean(), "{:?}", out.metrics.audit);
    }

    #[test]
    fn feasibility_report_is_pure(seed in any::<u64>()) {
        let (cfg, _) = small_system(seed);
        prop_assert_eq!(feasibility_report(&cfg), feasibility_report(&cfg.clone()));
    }
}

/// Requests in progress on a random small state.
fn random_state(seed: u64) -> (SimState, AllocationMap, SystemConfig) {
    let (cfg, alloc) = small_system(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
    let mut state = SimState::new(&cfg);
    for _ in 0..rng.random_range(1..=cfg.n) {
        let b = rng.random_range(0..cfg.n);
        let v = rng.random_range(0..cfg.m);
        state.add_playback(b, v);
        state.now += rng.random_range(0..=2);
    }
    (state, alloc, cfg)
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(128) })]

    #[test]
    fn decoded_schedule_respects_upload_slots(seed in any::<u64>()) {
        let (state, alloc, cfg) = random_state(seed);
        if let Ok(assign) = schedule_maxflow(&state, &alloc) {
            let per: BTreeMap<usize, usize> = assign.per_uploader();
            for (b, c) in per {
                prop_assert!(c as u32 <= cfg.upload_slots(b));
            }
            let mut per_request = BTreeMap::new();
            for l in &assign.links {
                prop_assert!(l.uploader != l.downloader);
                *per_request.entry((l.downloader, l.playback)).or_insert(0u32) += 1;
            }
            prop_assert!(per_request.values().all(|&c| c == cfg.s));
        }
        if let Ok(net) = build_request_graph(&state, &alloc) {
            let f = max_flow(&net);
            prop_assert_eq!(decode(&net, &f, &alloc).links.len() as i64, f.value);
        }
    }
}

