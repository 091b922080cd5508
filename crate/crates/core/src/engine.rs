//! Tick loop binding workload, scheduler and state.
//!
//! Each tick: finished playbacks end and buffered uploads run out, the
//! workload fires its events, the mode's scheduler connects new and broken
//! downloads, and the tick is audited and recorded.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::adversary::{
    generate_stressless, next_request_greedy, AdversaryError, AdversaryKind, AdversarySpec,
    BoxPermutation, EventSequence, VideoPicker,
};
use crate::allocation::AllocationMap;
use crate::distributed::{
    connection_flip, request_for, stripe_search, ConnectionRequest, FollowUp, SchedulerPolicy,
};
use crate::flow::{request_graph_where, schedule_network, ConnectionAssignment};
use crate::metrics::{audit_total, Metrics, TickRecord};
use crate::model::{BoxId, EventKind, SimEvent, StripeId, SystemConfig, Tick, VideoId};
use crate::state::{BreakCause, ConnKind, PlaybackId, SimState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Connections are set up once per request and never revisited.
    Static,
    DynamicDistributed,
    /// Every tick recomputes all connections by max-flow.
    DynamicMaxflow,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Static => "static",
            Mode::DynamicDistributed => "distributed",
            Mode::DynamicMaxflow => "maxflow",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(Mode::Static),
            "distributed" | "dynamic" | "dynamic-distributed" => Ok(Mode::DynamicDistributed),
            "maxflow" | "dynamic-maxflow" => Ok(Mode::DynamicMaxflow),
            _ => Err(format!("unknown mode {s:?} (static, distributed, maxflow)")),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
    #[error("allocation built for n={alloc_n}, m={alloc_m}, s={alloc_s} does not match the config")]
    AllocationMismatch {
        alloc_n: usize,
        alloc_m: u32,
        alloc_s: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    /// Ticks simulated for request workloads. Sequences run until their last
    /// event plus one video duration.
    pub ticks: Tick,
    pub stop_at_first_failure: bool,
    /// Boxes set offline before the first tick.
    pub offline: Vec<BoxId>,
    /// Length of generated stress-less sequences; defaults to `n`.
    pub events: Option<usize>,
    pub record_ticks: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            ticks: 200,
            stop_at_first_failure: false,
            offline: Vec::new(),
            events: None,
            record_ticks: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Metrics,
    pub state: SimState,
}

enum Source {
    Requests {
        kind: AdversaryKind,
        picker: Option<VideoPicker>,
        perm: BoxPermutation,
        rng: ChaCha8Rng,
        rate: u32,
    },
    Sequence {
        events: Vec<SimEvent>,
        next: usize,
    },
}

#[derive(Debug, Clone, Copy)]
enum Task {
    Search {
        b: BoxId,
        pb: PlaybackId,
        stripe: StripeId,
        reseed: bool,
    },
    Flip {
        b: BoxId,
        pb: PlaybackId,
        stripe: StripeId,
        target: BoxId,
    },
}

struct Engine<'a> {
    alloc: &'a AllocationMap,
    mode: Mode,
    policy: SchedulerPolicy,
    state: SimState,
    rng: ChaCha8Rng,
    metrics: Metrics,
    record_ticks: bool,
    /// Upper bound on stripe searches per tick.
    guard: usize,
}

fn check_alloc(cfg: &SystemConfig, alloc: &AllocationMap) -> Result<(), EngineError> {
    if alloc.n() != cfg.n || alloc.catalog_size() != cfg.m || alloc.stripes_per_video() != cfg.s {
        return Err(EngineError::AllocationMismatch {
            alloc_n: alloc.n(),
            alloc_m: alloc.catalog_size(),
            alloc_s: alloc.stripes_per_video(),
        });
    }
    Ok(())
}

/// Runs `adversary` against the system. `seed` drives the scheduler; the
/// adversary draws from its own seed.
pub fn run(
    cfg: &SystemConfig,
    alloc: &AllocationMap,
    adversary: &AdversarySpec,
    mode: Mode,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunOutput, EngineError> {
    adversary.validate(cfg)?;
    check_alloc(cfg, alloc)?;
    if let AdversaryKind::Stressless {
        p_f,
        swarms_per_video,
    } = adversary.kind
    {
        let r = opts.events.unwrap_or(cfg.n);
        let g = generate_stressless(cfg, p_f, swarms_per_video, r, adversary.seed);
        return run_sequence(cfg, alloc, &g.sequence, mode, seed, opts);
    }
    let source = Source::Requests {
        picker: VideoPicker::for_kind(&adversary.kind, cfg.m)?,
        kind: adversary.kind.clone(),
        perm: BoxPermutation::new(cfg.n),
        rng: ChaCha8Rng::seed_from_u64(adversary.seed),
        rate: adversary.rate,
    };
    Ok(Engine::new(cfg, alloc, mode, seed, opts).drive(source, opts.ticks, opts))
}

/// Replays a fixed event sequence.
pub fn run_sequence(
    cfg: &SystemConfig,
    alloc: &AllocationMap,
    seq: &EventSequence,
    mode: Mode,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunOutput, EngineError> {
    check_alloc(cfg, alloc)?;
    let mut events = seq.events.clone();
    events.sort_by_key(|e| e.time);
    let horizon = seq.last_time().map_or(0, |t| t + cfg.video_duration + 2);
    let source = Source::Sequence { events, next: 0 };
    Ok(Engine::new(cfg, alloc, mode, seed, opts).drive(source, horizon, opts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Saturation {
    /// Requests satisfied before the first unsatisfied one.
    pub satisfied: u64,
    pub issued: u64,
    /// Streams the active upload capacity can carry: `⌊Σ u_i·s⌋ / s`.
    pub ceiling: u64,
}

/// Issues requests until the first one that cannot be satisfied. Playbacks
/// never end during the probe, so boxes accumulate videos.
pub fn saturation_probe(
    cfg: &SystemConfig,
    alloc: &AllocationMap,
    adversary: &AdversarySpec,
    mode: Mode,
    seed: u64,
    offline: &[BoxId],
) -> Result<Saturation, EngineError> {
    let mut probe_cfg = cfg.clone();
    probe_cfg.video_duration = Tick::MAX / 4;
    let down: BTreeSet<BoxId> = offline.iter().copied().collect();
    let active_slots: u64 = (0..cfg.n)
        .filter(|b| !down.contains(b))
        .map(|b| cfg.upload_slots(b) as u64)
        .sum();
    let ceiling = active_slots / cfg.s.max(1) as u64;
    let opts = RunOptions {
        ticks: (ceiling + 2) * 2 + cfg.n as Tick,
        stop_at_first_failure: true,
        offline: offline.to_vec(),
        events: None,
        record_ticks: false,
    };
    let out = run(&probe_cfg, alloc, adversary, mode, seed, &opts)?;
    Ok(Saturation {
        satisfied: out.metrics.saturation,
        issued: out.metrics.issued,
        ceiling,
    })
}

impl<'a> Engine<'a> {
    fn new(
        cfg: &SystemConfig,
        alloc: &'a AllocationMap,
        mode: Mode,
        seed: u64,
        opts: &RunOptions,
    ) -> Self {
        let policy = match mode {
            Mode::Static => SchedulerPolicy::static_mode(cfg.n, cfg.v_s),
            _ => SchedulerPolicy::dynamic(cfg.n, cfg.v_s),
        };
        let mut state = SimState::new(cfg);
        for &b in &opts.offline {
            state.set_offline(b);
        }
        Self {
            alloc,
            mode,
            policy,
            state,
            rng: ChaCha8Rng::seed_from_u64(seed),
            metrics: Metrics::default(),
            record_ticks: opts.record_ticks,
            guard: 20 * cfg.n * cfg.s as usize + 100,
        }
    }

    fn drive(mut self, mut source: Source, horizon: Tick, opts: &RunOptions) -> RunOutput {
        for now in 0..horizon {
            self.state.now = now;
            self.metrics.completed += self.state.complete_finished().len() as u64;
            let mut tasks = VecDeque::new();
            for o in self.state.expire_uploads() {
                tasks.push_back(Task::Search {
                    b: o.downloader,
                    pb: o.playback,
                    stripe: o.stripe,
                    reseed: false,
                });
            }

            let mut requests_left = true;
            match &mut source {
                Source::Requests {
                    kind,
                    picker,
                    perm,
                    rng,
                    rate,
                } => {
                    for _ in 0..*rate {
                        let pick = match kind {
                            AdversaryKind::Greedy => next_request_greedy(
                                &mut self.state,
                                self.alloc,
                                &self.policy,
                                &self.rng,
                                perm,
                                rng,
                            ),
                            _ => perm.next(&self.state, rng).map(|b| {
                                (b, picker.as_ref().expect("fixed distribution").pick(rng))
                            }),
                        };
                        match pick {
                            Some((b, v)) => {
                                let ev = SimEvent::new(now, b, EventKind::Start(v));
                                self.fire(&ev, &mut tasks);
                            }
                            None => requests_left = false,
                        }
                    }
                }
                Source::Sequence { events, next } => {
                    while *next < events.len() && events[*next].time == now {
                        let ev = events[*next];
                        *next += 1;
                        self.fire(&ev, &mut tasks);
                    }
                }
            }

            match self.mode {
                Mode::Static => {}
                Mode::DynamicDistributed => self.schedule_distributed(tasks),
                Mode::DynamicMaxflow => self.schedule_maxflow(),
            }
            self.update_playbacks(now);
            self.record(now);
            if (opts.stop_at_first_failure && self.metrics.first_failure_tick.is_some())
                || !requests_left
            {
                break;
            }
        }
        self.metrics.max_seed_searches_per_stripe = self
            .state
            .index
            .seed_search_counts()
            .values()
            .copied()
            .max()
            .unwrap_or(0);
        RunOutput {
            metrics: self.metrics,
            state: self.state,
        }
    }

    fn fire(&mut self, ev: &SimEvent, tasks: &mut VecDeque<Task>) {
        if self.mode == Mode::Static {
            match ev.kind {
                EventKind::Start(v) => return self.static_request(ev.box_id, v),
                EventKind::Zap(v) => {
                    let stop = SimEvent::new(ev.time, ev.box_id, EventKind::Stop);
                    if self.state.apply_event(&stop).is_err() {
                        self.metrics.skipped_events += 1;
                        return;
                    }
                    return self.static_request(ev.box_id, v);
                }
                _ => {}
            }
        }
        let delta = match self.state.apply_event(ev) {
            Ok(d) => d,
            Err(_) => {
                self.metrics.skipped_events += 1;
                return;
            }
        };
        if matches!(ev.kind, EventKind::Start(_) | EventKind::Zap(_)) {
            self.metrics.issued += 1;
        }
        for o in delta.orphans {
            tasks.push_back(Task::Search {
                b: o.downloader,
                pb: o.playback,
                stripe: o.stripe,
                reseed: false,
            });
        }
        if let Some((b, pb)) = delta.started {
            let video = self.state.playback(b, pb).map(|p| p.video);
            if let Some(v) = video {
                for stripe in 0..self.state.s() {
                    tasks.push_back(Task::Search {
                        b,
                        pb,
                        stripe: StripeId::new(v, stripe),
                        reseed: false,
                    });
                }
            }
        }
    }

    /// Connects every stripe now or not at all.
    fn static_request(&mut self, b: BoxId, v: VideoId) {
        if !self.state.is_active(b) {
            self.metrics.skipped_events += 1;
            return;
        }
        self.metrics.issued += 1;
        let pb = self.state.add_playback(b, v);
        let mut ok = true;
        for stripe in 0..self.state.s() {
            let req = ConnectionRequest {
                requester: b,
                playback: pb,
                stripe: StripeId::new(v, stripe),
                position: 0,
                kind: ConnKind::Seed,
            };
            match stripe_search(&mut self.state, self.alloc, &req, &self.policy, &mut self.rng) {
                Ok(out) => {
                    self.metrics.probes += out.probes as u64;
                    self.metrics.flips += out.flips as u64;
                    if out.seed_probed {
                        self.count_seed_search(req.stripe);
                    }
                }
                Err(f) => {
                    self.metrics.probes += f.probes as u64;
                    if f.seed_probed {
                        self.count_seed_search(req.stripe);
                    }
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            self.state.set_cache(b, v);
            self.state.mark_playback(b, pb, |p| {
                p.satisfied = true;
                p.running = true;
            });
            self.count_satisfied();
        } else {
            self.state.remove_playback(b, pb);
            self.count_unsatisfied();
        }
    }

    fn count_seed_search(&mut self, stripe: StripeId) {
        self.state.index.record_seed_search(stripe);
        self.metrics.seed_searches += 1;
    }

    fn count_satisfied(&mut self) {
        self.metrics.satisfied += 1;
        if self.metrics.first_failure_tick.is_none() {
            self.metrics.saturation += 1;
        }
    }

    fn count_unsatisfied(&mut self) {
        self.metrics.unsatisfied += 1;
        self.metrics.first_failure_tick.get_or_insert(self.state.now);
    }

    fn schedule_distributed(&mut self, mut tasks: VecDeque<Task>) {
        let mut touched = BTreeSet::new();
        let mut budget = self.guard;
        self.drain(&mut tasks, &mut touched, &mut budget, false);

        // Everything still missing retries once this tick.
        let mut waiting = Vec::new();
        for (b, bx) in self.state.boxes().iter().enumerate() {
            for p in &bx.playbacks {
                for (i, c) in p.stripes.iter().enumerate() {
                    let stripe = StripeId::new(p.video, i as u32);
                    if c.is_none() && !touched.contains(&(b, p.id, stripe)) {
                        waiting.push(Task::Search {
                            b,
                            pb: p.id,
                            stripe,
                            reseed: false,
                        });
                    }
                }
            }
        }
        let mut tasks: VecDeque<Task> = waiting.into();
        self.drain(&mut tasks, &mut touched, &mut budget, true);
    }

    fn drain(
        &mut self,
        tasks: &mut VecDeque<Task>,
        touched: &mut BTreeSet<(BoxId, PlaybackId, StripeId)>,
        budget: &mut usize,
        retry: bool,
    ) {
        while let Some(task) = tasks.pop_front() {
            if *budget == 0 {
                return;
            }
            *budget -= 1;
            let (b, pb, stripe) = match task {
                Task::Search { b, pb, stripe, .. } | Task::Flip { b, pb, stripe, .. } => {
                    (b, pb, stripe)
                }
            };
            let Some(mut req) = request_for(&self.state, b, pb, stripe) else {
                continue;
            };
            touched.insert((b, pb, stripe));
            if retry {
                self.metrics.retries += 1;
            }
            let result = match task {
                Task::Search { reseed, .. } => {
                    if reseed {
                        req.kind = ConnKind::Seed;
                        self.metrics.reseeds += 1;
                    }
                    stripe_search(&mut self.state, self.alloc, &req, &self.policy, &mut self.rng)
                }
                Task::Flip { target, .. } => {
                    match connection_flip(
                        &mut self.state,
                        self.alloc,
                        &req,
                        target,
                        &self.policy,
                        &mut self.rng,
                    ) {
                        Ok(out) => Ok(out),
                        Err(f) => {
                            self.metrics.probes += f.probes as u64;
                            stripe_search(
                                &mut self.state,
                                self.alloc,
                                &req,
                                &self.policy,
                                &mut self.rng,
                            )
                        }
                    }
                }
            };
            match result {
                Ok(out) => {
                    self.metrics.probes += out.probes as u64;
                    self.metrics.flips += out.flips as u64;
                    if out.seed_probed {
                        self.count_seed_search(stripe);
                    }
                    for f in out.followups {
                        self.metrics.evictions += 1;
                        tasks.push_back(followup_task(&f));
                    }
                }
                Err(f) => {
                    self.metrics.probes += f.probes as u64;
                    if f.seed_probed {
                        self.count_seed_search(stripe);
                    }
                }
            }
        }
    }

    /// Recomputes every connection; when the load is infeasible the newest
    /// playbacks are left out.
    fn schedule_maxflow(&mut self) {
        let mut order: Vec<(Tick, PlaybackId, BoxId)> = self
            .state
            .boxes()
            .iter()
            .enumerate()
            .flat_map(|(b, bx)| bx.playbacks.iter().map(move |p| (p.started_at, p.id, b)))
            .collect();
        order.sort_unstable();

        let attempt = |state: &SimState, keep: usize| {
            let kept: BTreeSet<PlaybackId> = order[..keep].iter().map(|x| x.1).collect();
            let net = request_graph_where(state, self.alloc, |_, pb| kept.contains(&pb));
            schedule_network(&net, self.alloc).ok()
        };
        let assignment = match attempt(&self.state, order.len()) {
            Some(a) => a,
            None => {
                // Feasibility is monotone in the kept prefix.
                let (mut lo, mut hi) = (0, order.len());
                let mut best = ConnectionAssignment::default();
                while lo < hi {
                    let mid = (lo + hi).div_ceil(2);
                    match attempt(&self.state, mid) {
                        Some(a) => {
                            lo = mid;
                            best = a;
                        }
                        None => hi = mid - 1,
                    }
                }
                if lo > 0 && best.links.is_empty() {
                    best = attempt(&self.state, lo).unwrap_or_default();
                }
                best
            }
        };

        let current: Vec<_> = self.state.connections().map(|(id, _)| id).collect();
        for id in current {
            self.state.sever(id, BreakCause::Rescheduled);
        }
        for l in assignment.links {
            self.state
                .install(l.uploader, l.downloader, l.playback, l.stripe, l.kind);
        }
    }

    fn update_playbacks(&mut self, now: Tick) {
        let t_s = self.state.t_s();
        let ids: Vec<(BoxId, PlaybackId)> = self
            .state
            .boxes()
            .iter()
            .enumerate()
            .flat_map(|(b, bx)| bx.playbacks.iter().map(move |p| (b, p.id)))
            .collect();
        for (b, id) in ids {
            let p = self.state.playback(b, id).expect("listed playback").clone();
            if p.is_complete() {
                if !p.running {
                    if !p.satisfied && !p.startup_failed && now < p.started_at + t_s {
                        self.count_satisfied();
                        self.state.mark_playback(b, id, |p| p.satisfied = true);
                    } else {
                        self.metrics.late_starts += 1;
                    }
                    self.state.mark_playback(b, id, |p| p.running = true);
                }
                if p.stalled {
                    self.state.mark_playback(b, id, |p| p.stalled = false);
                }
            } else if p.running {
                if !p.stalled {
                    self.metrics.stalls += 1;
                    match p.last_break {
                        Some(c) => *self.metrics.stall_causes.entry(c).or_default() += 1,
                        None => self.metrics.unexplained_stalls += 1,
                    }
                    self.state.mark_playback(b, id, |p| p.stalled = true);
                }
            } else if !p.satisfied && !p.startup_failed && now + 1 >= p.started_at + t_s {
                self.count_unsatisfied();
                self.state.mark_playback(b, id, |p| p.startup_failed = true);
            }
        }
    }

    fn record(&mut self, now: Tick) {
        let audit = self.state.audit();
        self.metrics.audit.add(&audit);
        if !self.record_ticks {
            return;
        }
        let st = &self.state;
        let mut used = 0u64;
        let mut cap = 0u64;
        let mut playbacks = 0;
        for (b, bx) in st.boxes().iter().enumerate() {
            if bx.is_active() {
                cap += st.upload_slots(b) as u64;
                used += st.used_slots(b) as u64;
            }
            playbacks += bx.playbacks.len();
        }
        let sizes: Vec<usize> = st.index.active_videos().map(|(_, s)| s).collect();
        let m = &self.metrics;
        self.metrics.ticks.push(TickRecord {
            tick: now,
            issued: m.issued,
            satisfied: m.satisfied,
            unsatisfied: m.unsatisfied,
            stalls: m.stalls,
            retries: m.retries,
            active_boxes: st.active_count(),
            playbacks,
            connections: st.connection_count(),
            used_slots: used,
            capacity_slots: cap,
            utilization: if cap == 0 { 0.0 } else { used as f64 / cap as f64 },
            swarms: sizes.len(),
            max_swarm: sizes.iter().copied().max().unwrap_or(0),
            seed_searches: m.seed_searches,
            audit_violations: audit_total(&audit),
        });
    }
}

fn followup_task(f: &FollowUp) -> Task {
    match f.flip_to {
        Some(target) => Task::Flip {
            b: f.orphan.downloader,
            pb: f.orphan.playback,
            stripe: f.orphan.stripe,
            target,
        },
        None => Task::Search {
            b: f.orphan.downloader,
            pb: f.orphan.playback,
            stripe: f.orphan.stripe,
            reseed: f.reseed,
        },
    }
}
