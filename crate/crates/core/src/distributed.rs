//! Playback-cache-first scheduler.
//!
//! A downloader searches a stripe by probing swarm members first and
//! allocation holders second; each probed box runs [`grant_connection`].
//! One upload slot per box is held back from cache traffic so allocated
//! stripes can always be served.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use thiserror::Error;

use crate::allocation::AllocationMap;
use crate::model::{BoxId, StripeId, Tick, VideoId};
use crate::state::{BreakCause, ConnId, ConnKind, Orphan, PlaybackId, SimState};

/// Global stand-in for the distributed index: swarm membership, cache
/// holders and seed-download counters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StripeIndex {
    swarms: BTreeMap<VideoId, BTreeMap<BoxId, u32>>,
    caches: BTreeMap<VideoId, BTreeSet<BoxId>>,
    active_seeds: BTreeMap<StripeId, u32>,
    seed_searches: BTreeMap<StripeId, u32>,
}

impl StripeIndex {
    pub(crate) fn join(&mut self, video: VideoId, b: BoxId) {
        *self.swarms.entry(video).or_default().entry(b).or_default() += 1;
    }

    pub(crate) fn leave(&mut self, video: VideoId, b: BoxId) {
        if let Some(sw) = self.swarms.get_mut(&video) {
            if let Some(c) = sw.get_mut(&b) {
                *c -= 1;
                if *c == 0 {
                    sw.remove(&b);
                }
            }
            if sw.is_empty() {
                self.swarms.remove(&video);
            }
        }
    }

    pub(crate) fn cache(&mut self, video: VideoId, b: BoxId) {
        self.caches.entry(video).or_default().insert(b);
    }

    pub(crate) fn uncache(&mut self, video: VideoId, b: BoxId) {
        if let Some(set) = self.caches.get_mut(&video) {
            set.remove(&b);
            if set.is_empty() {
                self.caches.remove(&video);
            }
        }
    }

    pub(crate) fn seed_started(&mut self, stripe: StripeId) {
        *self.active_seeds.entry(stripe).or_default() += 1;
    }

    pub(crate) fn seed_ended(&mut self, stripe: StripeId) {
        if let Some(c) = self.active_seeds.get_mut(&stripe) {
            *c -= 1;
            if *c == 0 {
                self.active_seeds.remove(&stripe);
            }
        }
    }

    pub fn record_seed_search(&mut self, stripe: StripeId) {
        *self.seed_searches.entry(stripe).or_default() += 1;
    }

    /// Number of playbacks of `video` in progress.
    pub fn swarm_size(&self, video: VideoId) -> usize {
        self.swarms
            .get(&video)
            .map_or(0, |sw| sw.values().map(|c| *c as usize).sum())
    }

    pub fn swarm_members(&self, video: VideoId) -> impl Iterator<Item = BoxId> + '_ {
        self.swarms.get(&video).into_iter().flat_map(|sw| sw.keys().copied())
    }

    /// Boxes whose playback cache holds `video` (playing or finished).
    pub fn cache_holders(&self, video: VideoId) -> impl Iterator<Item = BoxId> + '_ {
        self.caches.get(&video).into_iter().flat_map(|s| s.iter().copied())
    }

    pub fn active_seed_downloads(&self, stripe: StripeId) -> u32 {
        self.active_seeds.get(&stripe).copied().unwrap_or(0)
    }

    pub fn seed_searches(&self, stripe: StripeId) -> u32 {
        self.seed_searches.get(&stripe).copied().unwrap_or(0)
    }

    pub fn seed_search_counts(&self) -> &BTreeMap<StripeId, u32> {
        &self.seed_searches
    }

    pub fn active_videos(&self) -> impl Iterator<Item = (VideoId, usize)> + '_ {
        self.swarms
            .iter()
            .map(|(v, sw)| (*v, sw.values().map(|c| *c as usize).sum()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnectionRequest {
    pub requester: BoxId,
    pub playback: PlaybackId,
    pub stripe: StripeId,
    /// Ticks of data already consumed by the requester.
    pub position: Tick,
    pub kind: ConnKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrantDecision {
    Accept,
    /// Refused at the given step (1..=7).
    Refuse(u8),
    /// Accept after closing `victim` (steps 5 and 6).
    AcceptWithEviction { victim: ConnId, step: u8 },
    /// Refused, with the address of a better placed box (steps 4, 6, 7).
    FlipTo { target: BoxId, step: u8 },
}

impl GrantDecision {
    pub fn step(&self) -> u8 {
        match self {
            GrantDecision::Accept => 2,
            GrantDecision::Refuse(s) => *s,
            GrantDecision::AcceptWithEviction { step, .. } | GrantDecision::FlipTo { step, .. } => {
                *step
            }
        }
    }

    fn accepts(&self) -> bool {
        matches!(
            self,
            GrantDecision::Accept | GrantDecision::AcceptWithEviction { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchedulerPolicy {
    /// Boxes probed simultaneously.
    pub fanout: usize,
    /// Size of the swarm sample handed to a searcher.
    pub swarm_sample: usize,
    /// Steps 5 and 6 may close existing connections.
    pub eviction: bool,
    /// Steps 4, 6 and 7 may redirect the requester.
    pub flipping: bool,
    /// Allocation holders are probed only while the `v_S` gate is open.
    pub seed_gate: bool,
    /// Gate threshold `v_S`.
    pub v_s: u32,
}

impl SchedulerPolicy {
    /// Fanout 3 and a swarm sample of `8·⌈log₂ n⌉`.
    pub fn dynamic(n: usize, v_s: u32) -> Self {
        let log = (n.max(2) as f64).log2().ceil() as usize;
        Self {
            fanout: 3,
            swarm_sample: 8 * log,
            eviction: true,
            flipping: true,
            seed_gate: true,
            v_s,
        }
    }

    /// Established connections are never closed, and allocation holders
    /// are probed whenever no swarm member accepts.
    pub fn static_mode(n: usize, v_s: u32) -> Self {
        Self {
            eviction: false,
            seed_gate: false,
            ..Self::dynamic(n, v_s)
        }
    }

    fn holders_open(&self, state: &SimState, stripe: StripeId) -> bool {
        !self.seed_gate || seed_gate_open(state, stripe, self.v_s)
    }
}

/// Decision of box `x` on `req`.
pub fn grant_connection<R: Rng + ?Sized>(
    x: BoxId,
    req: &ConnectionRequest,
    state: &SimState,
    alloc: &AllocationMap,
    policy: &SchedulerPolicy,
    rng: &mut R,
) -> GrantDecision {
    let v = req.stripe.video;
    let viewing = state.box_state(x).is_playing(v);
    let slots = state.upload_slots(x);

    // 1: a box serving from storage uploads each stripe once.
    if !viewing && state.is_uploading_stripe(x, req.stripe) {
        return GrantDecision::Refuse(1);
    }

    let has_data = match req.kind {
        ConnKind::Seed => alloc.holds(x, req.stripe),
        ConnKind::Cache => state.has_data_ahead(x, v, req.position),
    };
    let cache_room = state.cache_uploads(x) < slots.saturating_sub(1);
    let room = state.used_slots(x) < slots && (req.kind == ConnKind::Seed || cache_room);

    // 2
    if has_data && room {
        return GrantDecision::Accept;
    }
    // 3
    if !viewing {
        return GrantDecision::Refuse(3);
    }
    // 4: not far enough ahead; climb towards x's own uploader.
    if !has_data {
        if policy.flipping {
            if let Some(p) = state.parent_of(x, req.stripe) {
                if p != req.requester {
                    return GrantDecision::FlipTo { target: p, step: 4 };
                }
            }
        }
        return GrantDecision::Refuse(4);
    }

    if policy.eviction {
        // Closing a seed upload for a cache one must keep the reserved slot.
        let swap_ok = |id: &ConnId| {
            req.kind == ConnKind::Seed
                || state.connection(*id).is_some_and(|c| c.kind == ConnKind::Cache)
                || state.cache_uploads(x) + 1 < slots
        };
        // 5
        let others: Vec<ConnId> = state
            .box_state(x)
            .uploads
            .iter()
            .copied()
            .filter(|id| state.connection(*id).is_some_and(|c| c.stripe.video != v))
            .collect();
        if others.len() >= 2 {
            let seeds = state.seed_uploads(x);
            let mut eligible: Vec<ConnId> = others
                .into_iter()
                .filter(|id| {
                    let c = state.connection(*id).unwrap();
                    (c.kind == ConnKind::Cache || seeds >= 2) && swap_ok(id)
                })
                .collect();
            eligible.sort_unstable();
            if let Some(&victim) = eligible.as_slice().choose(rng) {
                return GrantDecision::AcceptWithEviction { victim, step: 5 };
            }
        }
        // 6: only with us−1 uploads of v; replace a child y is ahead of.
        if state.uploads_of_video(x, v) + 1 >= slots {
            let t_s = state.t_s();
            let victim = state
                .children_of(x, req.stripe)
                .into_iter()
                .filter(|(id, _)| swap_ok(id))
                .filter_map(|(id, _)| state.downloader_position(id).map(|p| (p, id)))
                .filter(|(p, _)| p + t_s <= req.position)
                .min();
            if let Some((_, victim)) = victim {
                return GrantDecision::AcceptWithEviction { victim, step: 6 };
            }
        }
    }

    // 7: point the requester at a child of x that is still ahead of it.
    if policy.flipping {
        let child = state
            .children_of(x, req.stripe)
            .into_iter()
            .filter(|&(_, c)| c != req.requester && state.has_data_ahead(c, v, req.position))
            .filter_map(|(id, c)| state.downloader_position(id).map(|p| (p, c)))
            .min();
        if let Some((_, target)) = child {
            return GrantDecision::FlipTo { target, step: 7 };
        }
    }
    GrantDecision::Refuse(7)
}

/// Work created by an eviction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FollowUp {
    pub orphan: Orphan,
    /// Step 6: the displaced box is told about the newcomer.
    pub flip_to: Option<BoxId>,
    /// Step 5 closed a seed upload: search again among allocation holders.
    pub reseed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchOutcome {
    pub uploader: BoxId,
    pub kind: ConnKind,
    pub conn: ConnId,
    pub followups: Vec<FollowUp>,
    pub probes: usize,
    pub flips: usize,
    /// Allocation holders were consulted.
    pub seed_probed: bool,
    /// `(box, decision)` in probe order.
    pub trace: Vec<(BoxId, GrantDecision)>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("no box accepted stripe {stripe} after {probes} probes")]
pub struct SearchFailure {
    pub stripe: StripeId,
    pub probes: usize,
    pub seed_probed: bool,
    pub trace: Vec<(BoxId, GrantDecision)>,
}

#[derive(Default)]
struct Probe {
    probes: usize,
    flips: usize,
    seed_probed: bool,
    trace: Vec<(BoxId, GrantDecision)>,
}

/// Finds and installs an uploader for `req.stripe`. `req.kind` is ignored:
/// swarm members are probed as cache uploaders, holders as seed uploaders.
pub fn stripe_search<R: Rng + ?Sized>(
    state: &mut SimState,
    alloc: &AllocationMap,
    req: &ConnectionRequest,
    policy: &SchedulerPolicy,
    rng: &mut R,
) -> Result<SearchOutcome, SearchFailure> {
    let v = req.stripe.video;
    let mut probe = Probe::default();

    let mut swarm: Vec<BoxId> = state
        .index
        .cache_holders(v)
        .filter(|&b| b != req.requester && state.is_active(b))
        .collect();
    swarm.shuffle(rng);
    swarm.truncate(policy.swarm_sample);
    let cache_req = ConnectionRequest {
        kind: ConnKind::Cache,
        ..*req
    };
    if let Some(out) = probe_list(state, alloc, &cache_req, &swarm, policy, rng, &mut probe) {
        return Ok(out);
    }

    if policy.holders_open(state, req.stripe) {
        probe.seed_probed = true;
        let mut holders: Vec<BoxId> = alloc
            .holders(req.stripe)
            .iter()
            .copied()
            .filter(|&b| b != req.requester && state.is_active(b))
            .collect();
        holders.sort_unstable();
        holders.dedup();
        holders.shuffle(rng);
        let seed_req = ConnectionRequest {
            kind: ConnKind::Seed,
            ..*req
        };
        if let Some(out) = probe_list(state, alloc, &seed_req, &holders, policy, rng, &mut probe)
        {
            return Ok(out);
        }
    }
    Err(SearchFailure {
        stripe: req.stripe,
        probes: probe.probes,
        seed_probed: probe.seed_probed,
        trace: probe.trace,
    })
}

/// Dry run of a playback of `video` on `b`: searches every stripe with a
/// copy of `rng`, then rolls everything back. Returns the fewest free slots
/// left among the selected uploaders, or `None` if a stripe finds no
/// uploader. Evictions are disabled for the dry run so it has no side
/// effects on other playbacks.
pub fn preview_video<R: Rng + Clone>(
    state: &mut SimState,
    alloc: &AllocationMap,
    b: BoxId,
    video: VideoId,
    policy: &SchedulerPolicy,
    rng: &R,
) -> Option<u32> {
    let mut rng = rng.clone();
    let policy = SchedulerPolicy {
        eviction: false,
        ..*policy
    };
    let pb = state.add_playback(b, video);
    let mut uploaders = Vec::with_capacity(state.s() as usize);
    let mut ok = true;
    for stripe in 0..state.s() {
        let req = ConnectionRequest {
            requester: b,
            playback: pb,
            stripe: StripeId::new(video, stripe),
            position: 0,
            kind: ConnKind::Seed,
        };
        match stripe_search(state, alloc, &req, &policy, &mut rng) {
            Ok(out) => uploaders.push(out.uploader),
            Err(_) => {
                ok = false;
                break;
            }
        }
    }
    let score = ok.then(|| {
        uploaders
            .iter()
            .map(|&u| state.free_slots(u))
            .min()
            .unwrap_or(0)
    });
    state.remove_playback(b, pb);
    score
}

/// Allocation holders are probed only for small swarms or for stripes
/// fetched from allocation copies fewer than `v_S` times.
pub fn seed_gate_open(state: &SimState, stripe: StripeId, v_s: u32) -> bool {
    state.index.swarm_size(stripe.video) < v_s as usize
        || state.index.active_seed_downloads(stripe) < v_s
}

fn probe_list<R: Rng + ?Sized>(
    state: &mut SimState,
    alloc: &AllocationMap,
    req: &ConnectionRequest,
    candidates: &[BoxId],
    policy: &SchedulerPolicy,
    rng: &mut R,
    probe: &mut Probe,
) -> Option<SearchOutcome> {
    let v = req.stripe.video;
    for batch in candidates.chunks(policy.fanout.max(1)) {
        let decisions: Vec<(BoxId, GrantDecision)> = batch
            .iter()
            .map(|&x| (x, grant_connection(x, req, state, alloc, policy, rng)))
            .collect();
        probe.probes += batch.len();
        probe.trace.extend(decisions.iter().copied());

        let best = decisions
            .iter()
            .filter(|(_, d)| d.accepts())
            .min_by_key(|(x, d)| {
                (
                    !matches!(d, GrantDecision::Accept),
                    state.uploads_of_video(*x, v),
                    std::cmp::Reverse(state.free_slots(*x)),
                    *x,
                )
            })
            .copied();
        if let Some((x, d)) = best {
            return Some(commit(state, req, x, d, probe));
        }
        for (_, d) in decisions {
            if let GrantDecision::FlipTo { target, .. } = d {
                if let Ok(out) = flip_chain(state, alloc, req, target, policy, rng, probe) {
                    return Some(out);
                }
            }
        }
    }
    None
}

fn commit(
    state: &mut SimState,
    req: &ConnectionRequest,
    x: BoxId,
    decision: GrantDecision,
    probe: &mut Probe,
) -> SearchOutcome {
    let mut followups = Vec::new();
    if let GrantDecision::AcceptWithEviction { victim, step } = decision {
        if let Some(orphan) = state.sever(victim, BreakCause::Evicted) {
            followups.push(if step == 6 {
                FollowUp {
                    orphan,
                    flip_to: Some(req.requester),
                    reseed: false,
                }
            } else {
                FollowUp {
                    orphan,
                    flip_to: None,
                    reseed: orphan.kind == ConnKind::Seed,
                }
            });
        }
    }
    let conn = state.install(x, req.requester, req.playback, req.stripe, req.kind);
    SearchOutcome {
        uploader: x,
        kind: req.kind,
        conn,
        followups,
        probes: probe.probes,
        flips: probe.flips,
        seed_probed: probe.seed_probed,
        trace: std::mem::take(&mut probe.trace),
    }
}

/// Probes the flip target, following further redirections until a box
/// accepts. The chain is bounded by the swarm size.
fn flip_chain<R: Rng + ?Sized>(
    state: &mut SimState,
    alloc: &AllocationMap,
    req: &ConnectionRequest,
    first: BoxId,
    policy: &SchedulerPolicy,
    rng: &mut R,
    probe: &mut Probe,
) -> Result<SearchOutcome, ()> {
    let limit = state.index.swarm_size(req.stripe.video).max(1);
    let mut visited = BTreeSet::new();
    let mut target = first;
    for _ in 0..limit {
        if target == req.requester || !state.is_active(target) || !visited.insert(target) {
            return Err(());
        }
        let kind = if state.data_position(target, req.stripe.video).is_some() {
            ConnKind::Cache
        } else if alloc.holds(target, req.stripe) && policy.holders_open(state, req.stripe)
        {
            ConnKind::Seed
        } else {
            return Err(());
        };
        let r = ConnectionRequest { kind, ..*req };
        probe.flips += 1;
        probe.probes += 1;
        let d = grant_connection(target, &r, state, alloc, policy, rng);
        probe.trace.push((target, d));
        match d {
            GrantDecision::Accept | GrantDecision::AcceptWithEviction { .. } => {
                return Ok(commit(state, &r, target, d, probe));
            }
            GrantDecision::FlipTo { target: next, .. } => target = next,
            GrantDecision::Refuse(_) => return Err(()),
        }
    }
    Err(())
}

/// Redirects `req` to `target` and follows the resulting flip chain.
pub fn connection_flip<R: Rng + ?Sized>(
    state: &mut SimState,
    alloc: &AllocationMap,
    req: &ConnectionRequest,
    target: BoxId,
    policy: &SchedulerPolicy,
    rng: &mut R,
) -> Result<SearchOutcome, SearchFailure> {
    let mut probe = Probe::default();
    flip_chain(state, alloc, req, target, policy, rng, &mut probe).map_err(|_| SearchFailure {
        stripe: req.stripe,
        probes: probe.probes,
        seed_probed: false,
        trace: probe.trace,
    })
}

/// Seed request for the downloader orphaned by a canceled seed upload.
pub fn reseed_on_cancel(state: &SimState, orphan: &Orphan) -> Option<ConnectionRequest> {
    let p = state.playback(orphan.downloader, orphan.playback)?;
    Some(ConnectionRequest {
        requester: orphan.downloader,
        playback: orphan.playback,
        stripe: orphan.stripe,
        position: state.position(p),
        kind: ConnKind::Seed,
    })
}

/// Request for the next missing stripe slot of a playback.
pub fn request_for(
    state: &SimState,
    b: BoxId,
    playback: PlaybackId,
    stripe: StripeId,
) -> Option<ConnectionRequest> {
    let p = state.playback(b, playback)?;
    if p.stripes[stripe.stripe as usize].is_some() {
        return None;
    }
    Some(ConnectionRequest {
        requester: b,
        playback,
        stripe,
        position: state.position(p),
        kind: ConnKind::Cache,
    })
}
