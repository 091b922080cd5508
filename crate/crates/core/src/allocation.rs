//! Replica placement.
//!
//! Copies are numbered stripe-major: copy `i` of the `k·m·s` copies is
//! replica `i % k` of the stripe with dense index `i / k`.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use num_traits::{ToPrimitive, Zero};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{AllocationMode, BoxId, Rate, StripeId, SystemConfig};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AllocationError {
    #[error("k·m·s = {replicas} replicas but {slots} storage slots")]
    SlotMismatch { replicas: u64, slots: u64 },
    #[error("storage exhausted with {unplaced} replicas unplaced")]
    Exhausted { unplaced: u64 },
    #[error("stripe {0} is not in the catalog")]
    UnknownStripe(StripeId),
    #[error("malformed allocation table at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocationMap {
    mode: AllocationMode,
    n: usize,
    m: u32,
    s: u32,
    k: u32,
    placement: Vec<BoxId>,
    holdings: Vec<Vec<(StripeId, u32)>>,
}

impl AllocationMap {
    fn from_placement(
        mode: AllocationMode,
        n: usize,
        m: u32,
        s: u32,
        k: u32,
        placement: Vec<BoxId>,
    ) -> Self {
        let mut holdings = vec![Vec::new(); n];
        for (copy, &b) in placement.iter().enumerate() {
            let stripe = StripeId::from_linear(copy / k as usize, s);
            holdings[b].push((stripe, (copy % k as usize) as u32));
        }
        Self {
            mode,
            n,
            m,
            s,
            k,
            placement,
            holdings,
        }
    }

    pub fn mode(&self) -> AllocationMode {
        self.mode
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn catalog_size(&self) -> u32 {
        self.m
    }

    pub fn stripes_per_video(&self) -> u32 {
        self.s
    }

    /// Holders of `stripe` in replica-index order.
    pub fn replicas_of(&self, stripe: StripeId) -> Result<&[BoxId], AllocationError> {
        if stripe.video >= self.m || stripe.stripe >= self.s {
            return Err(AllocationError::UnknownStripe(stripe));
        }
        Ok(self.holders(stripe))
    }

    /// Unchecked variant of [`replicas_of`](Self::replicas_of).
    pub fn holders(&self, stripe: StripeId) -> &[BoxId] {
        let k = self.k as usize;
        let base = stripe.linear(self.s) * k;
        &self.placement[base..base + k]
    }

    /// Stripe replicas stored on `b`, as `(stripe, replica index)`.
    pub fn holdings(&self, b: BoxId) -> &[(StripeId, u32)] {
        &self.holdings[b]
    }

    pub fn holds(&self, b: BoxId, stripe: StripeId) -> bool {
        self.holders(stripe).contains(&b)
    }

    /// `video,stripe,replica,box` table with a header comment.
    pub fn to_table(&self) -> String {
        let mut out = String::with_capacity(self.placement.len() * 12);
        let mode = match self.mode {
            AllocationMode::Regular => "regular",
            AllocationMode::PurelyRandom => "purely_random",
        };
        let _ = writeln!(
            out,
            "# mode={mode} n={} m={} s={} k={}",
            self.n, self.m, self.s, self.k
        );
        out.push_str("video,stripe,replica,box\n");
        for (copy, b) in self.placement.iter().enumerate() {
            let stripe = StripeId::from_linear(copy / self.k as usize, self.s);
            let _ = writeln!(
                out,
                "{},{},{},{}",
                stripe.video,
                stripe.stripe,
                copy % self.k as usize,
                b
            );
        }
        out
    }

    pub fn from_table(text: &str) -> Result<Self, AllocationError> {
        let perr = |line: usize, reason: &str| AllocationError::Parse {
            line,
            reason: reason.to_string(),
        };
        let mut header = None;
        let mut rows = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line == "video,stripe,replica,box" {
                continue;
            }
            if let Some(h) = line.strip_prefix('#') {
                let mut mode = AllocationMode::Regular;
                let (mut n, mut m, mut s, mut k) = (None, None, None, None);
                for kv in h.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("mode", "regular")) => mode = AllocationMode::Regular,
                        Some(("mode", "purely_random")) => mode = AllocationMode::PurelyRandom,
                        Some(("n", v)) => n = v.parse::<usize>().ok(),
                        Some(("m", v)) => m = v.parse::<u32>().ok(),
                        Some(("s", v)) => s = v.parse::<u32>().ok(),
                        Some(("k", v)) => k = v.parse::<u32>().ok(),
                        _ => {}
                    }
                }
                match (n, m, s, k) {
                    (Some(n), Some(m), Some(s), Some(k)) if s > 0 && k > 0 => {
                        header = Some((mode, n, m, s, k))
                    }
                    _ => return Err(perr(ln + 1, "header needs n, m, s, k")),
                }
                continue;
            }
            let fields: Vec<_> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(perr(ln + 1, "expected 4 fields"));
            }
            let nums: Result<Vec<usize>, _> = fields.iter().map(|f| f.parse::<usize>()).collect();
            let nums = nums.map_err(|_| perr(ln + 1, "non-numeric field"))?;
            rows.push((ln + 1, nums[0], nums[1], nums[2], nums[3]));
        }
        let (mode, n, m, s, k) = header.ok_or_else(|| perr(0, "missing header"))?;
        let total = m as usize * s as usize * k as usize;
        let mut placement = vec![usize::MAX; total];
        for (ln, video, stripe, replica, b) in rows {
            if video >= m as usize || stripe >= s as usize || replica >= k as usize || b >= n {
                return Err(perr(ln, "index out of range"));
            }
            let copy = (video * s as usize + stripe) * k as usize + replica;
            placement[copy] = b;
        }
        if placement.contains(&usize::MAX) {
            return Err(perr(0, "missing replicas"));
        }
        Ok(Self::from_placement(mode, n, m, s, k, placement))
    }
}

/// Dispatches on `cfg.allocation`.
pub fn allocate(cfg: &SystemConfig, seed: u64) -> Result<AllocationMap, AllocationError> {
    match cfg.allocation {
        AllocationMode::Regular => allocate_regular(cfg, seed),
        AllocationMode::PurelyRandom => allocate_purely_random(cfg, seed),
    }
}

/// Places copy `i` in slot `π(i)` for a uniformly random permutation `π`;
/// slots `0..d_0·s` belong to box 0, the next `d_1·s` to box 1, and so on.
pub fn allocate_regular(cfg: &SystemConfig, seed: u64) -> Result<AllocationMap, AllocationError> {
    let replicas = cfg.replica_count();
    let slots = cfg.total_storage_slots();
    if replicas != slots {
        return Err(AllocationError::SlotMismatch { replicas, slots });
    }
    let mut slot_owner: Vec<BoxId> = Vec::with_capacity(slots as usize);
    for b in 0..cfg.n {
        slot_owner.extend(std::iter::repeat_n(b, cfg.storage_slots(b) as usize));
    }
    // Shuffling the owner array is the same as composing with a uniform π.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    slot_owner.shuffle(&mut rng);
    Ok(AllocationMap::from_placement(
        AllocationMode::Regular,
        cfg.n,
        cfg.m,
        cfg.s,
        cfg.k,
        slot_owner,
    ))
}

/// Each copy lands on box `i` with probability `d_i/(d·n)`; full boxes are
/// re-drawn, which is the same as dropping them from the distribution.
pub fn allocate_purely_random(
    cfg: &SystemConfig,
    seed: u64,
) -> Result<AllocationMap, AllocationError> {
    let replicas = cfg.replica_count();
    let mut free: Vec<u32> = (0..cfg.n).map(|b| cfg.storage_slots(b)).collect();
    let weights: Vec<f64> = cfg
        .storage
        .iter()
        .map(|d| d.to_f64().unwrap_or(0.0).max(0.0))
        .collect();
    let mut live = weights.clone();
    for (b, w) in live.iter_mut().enumerate() {
        if free[b] == 0 {
            *w = 0.0;
        }
    }
    let mut dist = match WeightedIndex::new(&live) {
        Ok(d) => d,
        Err(_) => return Err(AllocationError::Exhausted { unplaced: replicas }),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut placement = Vec::with_capacity(replicas as usize);
    for placed in 0..replicas {
        let b = dist.sample(&mut rng);
        placement.push(b);
        free[b] -= 1;
        if free[b] == 0 && placed + 1 < replicas && dist.update_weights(&[(b, &0.0)]).is_err() {
            return Err(AllocationError::Exhausted {
                unplaced: replicas - placed - 1,
            });
        }
    }
    Ok(AllocationMap::from_placement(
        AllocationMode::PurelyRandom,
        cfg.n,
        cfg.m,
        cfg.s,
        cfg.k,
        placement,
    ))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoorReservation {
    pub box_id: BoxId,
    /// `μ·s − u_b·s` unit slots borrowed from rich boxes.
    pub reserved_slots: u32,
    /// `(rich box, slots)` providing the reservation.
    pub providers: Vec<(BoxId, u32)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RichContribution {
    pub box_id: BoxId,
    /// `s_b`, slots reserved on this box for poor boxes.
    pub slots_given: u32,
    /// `u_b − s_b/s`.
    pub residual_upload: Rate,
    /// Extra cache capacity `s_b/(μ·s)`, in videos.
    pub extra_cache: Rate,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ReservationPlan {
    pub poor: Vec<PoorReservation>,
    pub rich: Vec<RichContribution>,
}

impl ReservationPlan {
    pub fn total_reserved(&self) -> u64 {
        self.poor.iter().map(|p| p.reserved_slots as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.poor.is_empty()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReservationError {
    #[error("average upload {u} is below μ = {mu}")]
    BelowGrowth { u: Rate, mu: Rate },
    #[error("poor deficit of {deficit} slots exceeds rich surplus of {surplus}")]
    Infeasible { deficit: u64, surplus: u64 },
}

/// Lends rich-box upload slots to every box with `u_b < μ` so all boxes
/// see at least `μ`. Slots are taken one at a time from the rich box with
/// the largest remaining surplus, which drains surpluses proportionally.
pub fn reserve_poor_capacity(cfg: &SystemConfig) -> Result<ReservationPlan, ReservationError> {
    let s = Rate::from_integer(cfg.s as i64);
    let mu_slots = cfg.mu * s;

    let mut needs = Vec::new();
    let mut surplus = Vec::new();
    for b in 0..cfg.n {
        let ub = cfg.upload[b] * s;
        if cfg.upload[b] < cfg.mu {
            let slots = (mu_slots - ub).ceil().to_integer().max(0) as u64;
            needs.push((b, slots));
        } else {
            let spare = (ub - mu_slots).floor().to_integer().max(0) as u64;
            if spare > 0 {
                surplus.push((b, spare));
            }
        }
    }
    let deficit: u64 = needs.iter().map(|(_, x)| x).sum();
    let total_surplus: u64 = surplus.iter().map(|(_, x)| x).sum();
    if needs.is_empty() {
        return Ok(ReservationPlan::default());
    }
    if cfg.avg_upload() < cfg.mu {
        return Err(ReservationError::BelowGrowth {
            u: cfg.avg_upload(),
            mu: cfg.mu,
        });
    }
    if total_surplus < deficit {
        return Err(ReservationError::Infeasible {
            deficit,
            surplus: total_surplus,
        });
    }

    let mut heap: BinaryHeap<(u64, Reverse<BoxId>)> =
        surplus.iter().map(|&(b, x)| (x, Reverse(b))).collect();
    let mut given = vec![0u32; cfg.n];
    let mut poor = Vec::with_capacity(needs.len());
    for (b, need) in needs {
        let mut providers: Vec<(BoxId, u32)> = Vec::new();
        for _ in 0..need {
            let (left, Reverse(r)) = heap.pop().expect("surplus checked above");
            given[r] += 1;
            match providers.iter_mut().find(|(p, _)| *p == r) {
                Some((_, c)) => *c += 1,
                None => providers.push((r, 1)),
            }
            if left > 1 {
                heap.push((left - 1, Reverse(r)));
            }
        }
        providers.sort_unstable();
        poor.push(PoorReservation {
            box_id: b,
            reserved_slots: need as u32,
            providers,
        });
    }
    let rich = surplus
        .iter()
        .map(|&(b, _)| {
            let sb = Rate::from_integer(given[b] as i64);
            RichContribution {
                box_id: b,
                slots_given: given[b],
                residual_upload: cfg.upload[b] - sb / s,
                extra_cache: if mu_slots.is_zero() {
                    Rate::zero()
                } else {
                    sb / mu_slots
                },
            }
        })
        .collect();
    Ok(ReservationPlan { poor, rich })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Rate;
    use std::collections::BTreeSet;

    fn tiny(n: usize, d: i64, s: u32, m: u32, k: u32) -> SystemConfig {
        SystemConfig::homogeneous(n, Rate::from_integer(1), Rate::from_integer(d), s, k, m)
    }

    #[test]
    fn regular_fills_every_slot() {
        let cfg = tiny(4, 2, 1, 4, 2);
        let map = allocate_regular(&cfg, 7).unwrap();
        for b in 0..4 {
            assert_eq!(map.holdings(b).len(), 2);
        }
    }

    #[test]
    fn regular_reference_scale() {
        let cfg = SystemConfig::simulation_setup(10);
        let map = allocate_regular(&cfg, 1).unwrap();
        assert_eq!(map.catalog_size(), 320);
        assert!((0..100).all(|b| map.holdings(b).len() == 480));
    }

    #[test]
    fn regular_is_deterministic_per_seed() {
        let cfg = tiny(10, 3, 2, 5, 6);
        assert_eq!(allocate_regular(&cfg, 3).unwrap(), allocate_regular(&cfg, 3).unwrap());
        assert_ne!(allocate_regular(&cfg, 3).unwrap(), allocate_regular(&cfg, 4).unwrap());
    }

    #[test]
    fn regular_rejects_mismatch() {
        let cfg = tiny(4, 2, 1, 5, 2);
        assert_eq!(
            allocate_regular(&cfg, 0),
            Err(AllocationError::SlotMismatch {
                replicas: 10,
                slots: 8
            })
        );
    }

    #[test]
    fn purely_random_overflow_by_one() {
        let mut cfg = tiny(3, 1, 1, 4, 1).with_allocation(AllocationMode::PurelyRandom);
        // 3 slots, 4 replicas
        assert_eq!(
            allocate_purely_random(&cfg, 0),
            Err(AllocationError::Exhausted { unplaced: 1 })
        );
        cfg.m = 3;
        let map = allocate_purely_random(&cfg, 0).unwrap();
        assert!((0..3).all(|b| map.holdings(b).len() == 1));
    }

    #[test]
    fn purely_random_respects_capacity() {
        let cfg = tiny(20, 4, 3, 30, 2).with_allocation(AllocationMode::PurelyRandom);
        let map = allocate_purely_random(&cfg, 11).unwrap();
        for b in 0..20 {
            assert!(map.holdings(b).len() <= 12);
        }
        for v in 0..30 {
            for st in cfg.stripes_of(v) {
                assert_eq!(map.replicas_of(st).unwrap().len(), 2);
            }
        }
    }

    #[test]
    fn purely_random_weighted_frequency() {
        // n=2, d=(3,1): box 0 drawn with probability 3/4. Storage is large
        // enough that no box fills during the 10^5 draws.
        let mut cfg = tiny(2, 1, 1, 100_000, 1).with_allocation(AllocationMode::PurelyRandom);
        cfg.storage = vec![Rate::from_integer(300_000), Rate::from_integer(100_000)];
        let map = allocate_purely_random(&cfg, 5).unwrap();
        let draws = 100_000f64;
        let hits = map.holdings(0).len() as f64;
        let sigma = (draws * 0.75 * 0.25).sqrt();
        assert!((hits - 0.75 * draws).abs() <= 3.0 * sigma, "{hits}");
    }

    #[test]
    fn replicas_inverse_consistency() {
        let cfg = tiny(6, 2, 2, 6, 2);
        let map = allocate_regular(&cfg, 9).unwrap();
        for v in 0..6 {
            for st in cfg.stripes_of(v) {
                for &b in map.replicas_of(st).unwrap() {
                    assert!(map.holdings(b).iter().any(|(x, _)| *x == st));
                }
            }
        }
        for b in 0..6 {
            for (st, r) in map.holdings(b) {
                assert_eq!(map.replicas_of(*st).unwrap()[*r as usize], b);
            }
        }
    }

    #[test]
    fn single_replica_partitions_slots() {
        // k=1 and m·s = Σd_i·s: every list is a singleton and together they
        // cover every slot exactly once.
        let cfg = tiny(3, 2, 2, 6, 1);
        let map = allocate_regular(&cfg, 2).unwrap();
        let mut per_box = [0usize; 3];
        let mut seen = BTreeSet::new();
        for v in 0..6 {
            for st in cfg.stripes_of(v) {
                let h = map.replicas_of(st).unwrap();
                assert_eq!(h.len(), 1);
                per_box[h[0]] += 1;
                assert!(seen.insert(st));
            }
        }
        assert_eq!(per_box, [4, 4, 4]);
    }

    #[test]
    fn unknown_stripe() {
        let cfg = tiny(4, 2, 1, 4, 2);
        let map = allocate_regular(&cfg, 0).unwrap();
        assert_eq!(
            map.replicas_of(StripeId::new(4, 0)),
            Err(AllocationError::UnknownStripe(StripeId::new(4, 0)))
        );
    }

    #[test]
    fn table_round_trip() {
        let cfg = tiny(5, 2, 3, 5, 2);
        let map = allocate_regular(&cfg, 4).unwrap();
        let text = map.to_table();
        assert!(text.lines().nth(1).unwrap() == "video,stripe,replica,box");
        assert_eq!(AllocationMap::from_table(&text).unwrap(), map);
    }

    fn two_box(u1: Rate, u2: Rate) -> SystemConfig {
        let mut cfg = tiny(2, 1, 4, 2, 1);
        cfg.mu = Rate::from_integer(1);
        cfg.upload = vec![u1, u2];
        cfg
    }

    #[test]
    fn reservation_no_poor_boxes() {
        let cfg = two_box(Rate::new(3, 2), Rate::new(3, 2));
        assert!(reserve_poor_capacity(&cfg).unwrap().is_empty());
    }

    #[test]
    fn reservation_two_box_example() {
        let cfg = two_box(Rate::new(1, 2), Rate::new(3, 2));
        let plan = reserve_poor_capacity(&cfg).unwrap();
        assert_eq!(plan.poor.len(), 1);
        assert_eq!(plan.poor[0].reserved_slots, 2);
        assert_eq!(plan.poor[0].providers, vec![(1, 2)]);
        assert_eq!(plan.rich[0].residual_upload, Rate::from_integer(1));
        assert_eq!(plan.rich[0].extra_cache, Rate::new(1, 2));
    }

    #[test]
    fn reservation_infeasible() {
        let cfg = two_box(Rate::new(1, 2), Rate::new(5, 4));
        assert!(reserve_poor_capacity(&cfg).is_err());
    }

    #[test]
    fn reservation_balances_rich_boxes() {
        let mut cfg = tiny(4, 1, 10, 4, 1);
        cfg.mu = Rate::from_integer(1);
        cfg.upload = vec![
            Rate::new(2, 10),
            Rate::new(6, 10),
            Rate::new(20, 10),
            Rate::new(16, 10),
        ];
        let plan = reserve_poor_capacity(&cfg).unwrap();
        assert_eq!(plan.total_reserved(), 8 + 4);
        let given: u32 = plan.rich.iter().map(|r| r.slots_given).sum();
        assert_eq!(given, 12);
        for r in &plan.rich {
            assert!(r.residual_upload >= cfg.mu);
        }
        // surpluses 10 and 6 are drained to 2 each
        assert_eq!(plan.rich[0].slots_given, 8);
        assert_eq!(plan.rich[1].slots_given, 4);
    }
}
