//! Exhaustive checks of connection flipping on swarms of at most 4 boxes.
//!
//! Box 0 stores the only copy of a one-stripe video and boxes `1..=q` watch
//! it. Every box has 2 upload slots, so with one slot reserved each viewer
//! forwards to at most one other viewer and the swarm must form a chain.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vodsim::allocation::{allocate_regular, AllocationMap};
use vodsim::distributed::{request_for, stripe_search, SchedulerPolicy};
use vodsim::model::{BoxId, EventKind, Rate, SimEvent, StripeId, SystemConfig};
use vodsim::state::{PlaybackId, SimState};

const STRIPE: StripeId = StripeId { video: 0, stripe: 0 };

fn permutations(items: &[BoxId]) -> Vec<Vec<BoxId>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let first = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, first);
            out.push(tail);
        }
    }
    out
}

fn setup(q: usize) -> (SystemConfig, AllocationMap, SimState) {
    let n = q + 1;
    let mut cfg = SystemConfig::homogeneous(n, Rate::from_integer(2), Rate::from_integer(0), 1, 1, 1);
    cfg.storage[0] = Rate::from_integer(1);
    cfg.video_duration = 100;
    let alloc = allocate_regular(&cfg, 0).unwrap();
    let state = SimState::new(&cfg);
    (cfg, alloc, state)
}

fn start(st: &mut SimState, b: BoxId) -> PlaybackId {
    st.apply_event(&SimEvent::new(st.now, b, EventKind::Start(0)))
        .unwrap()
        .started
        .unwrap()
        .1
}

#[test]
fn arrivals_build_a_position_ordered_chain() {
    for q in 1..=4 {
        for order in permutations(&(1..=q).collect::<Vec<_>>()) {
            let (cfg, alloc, mut st) = setup(q);
            let policy = SchedulerPolicy::dynamic(cfg.n, cfg.v_s);
            let mut rng = ChaCha8Rng::seed_from_u64(q as u64);
            for &b in &order {
                let pb = start(&mut st, b);
                let req = request_for(&st, b, pb, STRIPE).unwrap();
                let out = stripe_search(&mut st, &alloc, &req, &policy, &mut rng)
                    .unwrap_or_else(|e| panic!("order {order:?}, box {b}: {e}"));
                assert!(out.flips <= q, "order {order:?}: {} flips", out.flips);
                st.now += 2;
            }
            let mut parent = 0;
            for &b in &order {
                assert_eq!(st.parent_of(b, STRIPE), Some(parent), "order {order:?}");
                parent = b;
            }
            assert!(st.audit().is_clean(), "order {order:?}: {:?}", st.audit());
        }
    }
}

#[test]
fn any_search_order_stays_ordered_and_acyclic() {
    for q in 1..=4 {
        let boxes: Vec<BoxId> = (1..=q).collect();
        for positions in permutations(&boxes) {
            for searches in permutations(&boxes) {
                let (cfg, alloc, mut st) = setup(q);
                let policy = SchedulerPolicy::dynamic(cfg.n, cfg.v_s);
                let mut rng = ChaCha8Rng::seed_from_u64(7);
                let mut pbs = vec![PlaybackId(0); q + 1];
                for &b in &positions {
                    pbs[b] = start(&mut st, b);
                    st.now += 2;
                }
                let mut served = 0;
                for &b in &searches {
                    let req = request_for(&st, b, pbs[b], STRIPE).unwrap();
                    match stripe_search(&mut st, &alloc, &req, &policy, &mut rng) {
                        Ok(out) => {
                            assert!(out.flips <= q);
                            served += 1;
                        }
                        Err(e) => assert!(e.probes <= 2 * (q + 1) * q),
                    }
                    let audit = st.audit();
                    assert!(
                        audit.is_clean(),
                        "positions {positions:?}, searches {searches:?}: {audit:?}"
                    );
                }
                if positions == searches {
                    assert_eq!(served, q);
                }
            }
        }
    }
}
