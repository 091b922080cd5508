//! Request and churn workloads.
//!
//! Request adversaries pick a box from a stream of random permutations of
//! the active boxes and a video from one of several popularity models. The
//! stress-less generator emits full event sequences whose swarm growth and
//! failure pattern stay within the model constraints, and
//! [`validate_sequence`] replays any sequence against those constraints.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use thiserror::Error;

use crate::allocation::AllocationMap;
use crate::distributed::{preview_video, SchedulerPolicy};
use crate::model::{BoxId, EventKind, ParseEventError, Rate, SimEvent, SystemConfig, Tick, VideoId};
use crate::state::SimState;

#[derive(Debug, Error, PartialEq)]
pub enum AdversaryError {
    #[error("zipf exponent must be positive, got {0}")]
    BadGamma(f64),
    #[error("failure probability {p_f} must lie in [0, 1/v_S = {limit})")]
    FailureRate { p_f: f64, limit: f64 },
    #[error("swarms per video must be at least 1")]
    NoSwarms,
    #[error("request rate must be at least 1")]
    ZeroRate,
    #[error("trace has no positive weight")]
    EmptyTrace,
    #[error("trace names video {video} outside a catalog of {m}")]
    OutsideCatalog { video: VideoId, m: u32 },
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("trace line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("cannot read trace: {0}")]
    Io(String),
}

/// Video popularity taken from a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct PopularityTrace {
    pub entries: Vec<(VideoId, f64)>,
}

impl PopularityTrace {
    /// One `video_id,weight` pair per line; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, AdversaryError> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |reason: &str| AdversaryError::Parse {
                line: i + 1,
                reason: reason.to_string(),
            };
            let (v, w) = line.split_once(',').ok_or_else(|| bad("expected video_id,weight"))?;
            let v: VideoId = v.trim().parse().map_err(|_| bad("bad video id"))?;
            let w: f64 = w.trim().parse().map_err(|_| bad("bad weight"))?;
            if !(w >= 0.0 && w.is_finite()) {
                return Err(bad("weight must be finite and non-negative"));
            }
            entries.push((v, w));
        }
        let trace = Self { entries };
        trace.total()?;
        Ok(trace)
    }

    pub fn load(path: &Path) -> Result<Self, AdversaryError> {
        let text = std::fs::read_to_string(path).map_err(|e| AdversaryError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    fn total(&self) -> Result<f64, AdversaryError> {
        let t: f64 = self.entries.iter().map(|(_, w)| w).sum();
        if t > 0.0 {
            Ok(t)
        } else {
            Err(AdversaryError::EmptyTrace)
        }
    }

    /// Normalized probability of each entry.
    pub fn distribution(&self) -> Result<Vec<(VideoId, f64)>, AdversaryError> {
        let t = self.total()?;
        Ok(self.entries.iter().map(|(v, w)| (*v, w / t)).collect())
    }

    pub fn check_catalog(&self, m: u32) -> Result<(), AdversaryError> {
        match self.entries.iter().find(|(v, _)| *v >= m) {
            Some((video, _)) => Err(AdversaryError::OutsideCatalog { video: *video, m }),
            None => Ok(()),
        }
    }

    /// `m` entries drawn uniformly, relabeled `0..m` in trace order.
    pub fn random_subset<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Self {
        let mut idx: Vec<usize> = (0..self.entries.len()).collect();
        idx.shuffle(rng);
        idx.truncate(m);
        idx.sort_unstable();
        Self::relabel(idx.iter().map(|&i| self.entries[i].1))
    }

    /// The `m` heaviest entries, relabeled `0..m` by decreasing weight.
    pub fn top_m(&self, m: usize) -> Self {
        let mut sorted = self.entries.clone();
        sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        sorted.truncate(m);
        Self::relabel(sorted.into_iter().map(|(_, w)| w))
    }

    fn relabel(weights: impl Iterator<Item = f64>) -> Self {
        Self {
            entries: weights.enumerate().map(|(i, w)| (i as VideoId, w)).collect(),
        }
    }
}

impl fmt::Display for PopularityTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (v, w) in &self.entries {
            writeln!(f, "{v},{w}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AdversaryKind {
    Greedy,
    Random,
    Zipf { gamma: f64 },
    Trace(PopularityTrace),
    Stressless { p_f: f64, swarms_per_video: u32 },
}

impl AdversaryKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Greedy => "greedy",
            Self::Random => "random",
            Self::Zipf { .. } => "zipf",
            Self::Trace(_) => "trace",
            Self::Stressless { .. } => "stressless",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversarySpec {
    pub kind: AdversaryKind,
    pub seed: u64,
    /// Events per tick.
    pub rate: u32,
}

impl AdversarySpec {
    pub fn new(kind: AdversaryKind, seed: u64) -> Self {
        Self { kind, seed, rate: 1 }
    }

    pub fn validate(&self, cfg: &SystemConfig) -> Result<(), AdversaryError> {
        if self.rate == 0 {
            return Err(AdversaryError::ZeroRate);
        }
        if cfg.m == 0 {
            return Err(AdversaryError::EmptyCatalog);
        }
        match &self.kind {
            AdversaryKind::Zipf { gamma } if !(*gamma > 0.0 && gamma.is_finite()) => {
                Err(AdversaryError::BadGamma(*gamma))
            }
            AdversaryKind::Trace(t) => {
                t.total()?;
                t.check_catalog(cfg.m)
            }
            AdversaryKind::Stressless {
                p_f,
                swarms_per_video,
            } => {
                let limit = 1.0 / cfg.v_s as f64;
                if !(*p_f >= 0.0 && *p_f < limit) {
                    Err(AdversaryError::FailureRate { p_f: *p_f, limit })
                } else if *swarms_per_video == 0 {
                    Err(AdversaryError::NoSwarms)
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Requesting boxes: successive random permutations of all boxes, skipping
/// the inactive ones.
#[derive(Debug, Clone)]
pub struct BoxPermutation {
    order: Vec<BoxId>,
    pos: usize,
}

impl BoxPermutation {
    pub fn new(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
        }
    }

    pub fn next<R: Rng + ?Sized>(&mut self, state: &SimState, rng: &mut R) -> Option<BoxId> {
        if state.active_count() == 0 {
            return None;
        }
        loop {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            let b = self.order[self.pos];
            self.pos += 1;
            if state.is_active(b) {
                return Some(b);
            }
        }
    }
}

/// Prebuilt sampler for the non-adaptive popularity models.
#[derive(Debug, Clone)]
pub enum VideoPicker {
    Uniform(u32),
    Zipf(Zipf<f64>),
    Weighted(Vec<VideoId>, WeightedIndex<f64>),
}

impl VideoPicker {
    /// `None` for adversaries that do not draw from a fixed distribution.
    pub fn for_kind(kind: &AdversaryKind, m: u32) -> Result<Option<Self>, AdversaryError> {
        if m == 0 {
            return Err(AdversaryError::EmptyCatalog);
        }
        Ok(match kind {
            AdversaryKind::Random => Some(Self::Uniform(m)),
            AdversaryKind::Zipf { gamma } => Some(Self::zipf(m, *gamma)?),
            AdversaryKind::Trace(t) => Some(Self::trace(t)?),
            AdversaryKind::Greedy | AdversaryKind::Stressless { .. } => None,
        })
    }

    /// Rank `r` (video `r−1`) has probability `r^−γ / Σ j^−γ`.
    pub fn zipf(m: u32, gamma: f64) -> Result<Self, AdversaryError> {
        if m == 0 {
            return Err(AdversaryError::EmptyCatalog);
        }
        Zipf::new(m as f64, gamma)
            .map(Self::Zipf)
            .map_err(|_| AdversaryError::BadGamma(gamma))
    }

    pub fn trace(t: &PopularityTrace) -> Result<Self, AdversaryError> {
        t.total()?;
        let ids = t.entries.iter().map(|(v, _)| *v).collect();
        let idx = WeightedIndex::new(t.entries.iter().map(|(_, w)| *w))
            .map_err(|_| AdversaryError::EmptyTrace)?;
        Ok(Self::Weighted(ids, idx))
    }

    pub fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> VideoId {
        match self {
            Self::Uniform(m) => rng.random_range(0..*m),
            Self::Zipf(z) => z.sample(rng) as VideoId - 1,
            Self::Weighted(ids, idx) => ids[idx.sample(rng)],
        }
    }
}

pub fn next_request_random<R: Rng + ?Sized>(m: u32, rng: &mut R) -> Result<VideoId, AdversaryError> {
    if m == 0 {
        return Err(AdversaryError::EmptyCatalog);
    }
    Ok(rng.random_range(0..m))
}

pub fn next_request_zipf<R: Rng + ?Sized>(
    m: u32,
    gamma: f64,
    rng: &mut R,
) -> Result<VideoId, AdversaryError> {
    Ok(VideoPicker::zipf(m, gamma)?.pick(rng))
}

pub fn next_request_trace<R: Rng + ?Sized>(
    trace: &PopularityTrace,
    rng: &mut R,
) -> Result<VideoId, AdversaryError> {
    Ok(VideoPicker::trace(trace)?.pick(rng))
}

/// Video whose score is smallest, lowest id on ties. A `None` score marks
/// a video the scheduler cannot serve; it is picked only when no video can
/// be served.
pub fn greedy_pick(m: u32, mut remaining: impl FnMut(VideoId) -> Option<i64>) -> Option<VideoId> {
    (0..m).min_by_key(|&v| {
        let r = remaining(v);
        (r.is_none(), r.unwrap_or(0), v)
    })
}

/// Greedy request: the next box of the permutation stream asks for the
/// video whose selected uploader would be left with the fewest free slots.
/// Selection is previewed with a copy of `sched_rng`, so the real search
/// made with `sched_rng` afterwards picks the same uploaders.
pub fn next_request_greedy<R: Rng + Clone, Q: Rng + ?Sized>(
    state: &mut SimState,
    alloc: &AllocationMap,
    policy: &SchedulerPolicy,
    sched_rng: &R,
    perm: &mut BoxPermutation,
    rng: &mut Q,
) -> Option<(BoxId, VideoId)> {
    let b = perm.next(state, rng)?;
    let v = greedy_pick(alloc.catalog_size(), |v| {
        preview_video(state, alloc, b, v, policy, sched_rng).map(i64::from)
    })?;
    Some((b, v))
}

/// Ordered list of events.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventSequence {
    pub events: Vec<SimEvent>,
}

impl EventSequence {
    /// Lines `time,box,kind[,video]`; blank lines and `#` comments skipped.
    pub fn parse(text: &str) -> Result<Self, ParseEventError> {
        let events = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::parse)
            .collect::<Result<Vec<SimEvent>, _>>()?;
        Ok(Self { events })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn last_time(&self) -> Option<Tick> {
        self.events.iter().map(|e| e.time).max()
    }
}

impl fmt::Display for EventSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.events {
            writeln!(f, "{e}")?;
        }
        Ok(())
    }
}

/// Replay bookkeeping shared by the generator and the validator.
#[derive(Debug, Clone)]
struct Replay {
    t_s: Tick,
    duration: Tick,
    mu: Rate,
    v_s: u32,
    failed: Vec<bool>,
    /// `(video, end tick)` per playback of each box.
    playing: Vec<Vec<(VideoId, Tick)>>,
    size: BTreeMap<VideoId, u64>,
    /// Swarm size at the end of each tick, per video.
    size_at: BTreeMap<VideoId, BTreeMap<Tick, u64>>,
    /// Swarm events per tick, per video.
    events_at: BTreeMap<VideoId, BTreeMap<Tick, u64>>,
    starts: BTreeMap<VideoId, u32>,
}

impl Replay {
    fn new(cfg: &SystemConfig) -> Self {
        Self {
            t_s: cfg.t_s.max(1),
            duration: cfg.video_duration,
            mu: cfg.mu,
            v_s: cfg.v_s,
            failed: vec![false; cfg.n],
            playing: vec![Vec::new(); cfg.n],
            size: BTreeMap::new(),
            size_at: BTreeMap::new(),
            events_at: BTreeMap::new(),
            starts: BTreeMap::new(),
        }
    }

    fn active(&self) -> usize {
        self.failed.iter().filter(|f| !**f).count()
    }

    fn size(&self, v: VideoId) -> u64 {
        self.size.get(&v).copied().unwrap_or(0)
    }

    fn size_end_of(&self, v: VideoId, tick: i64) -> u64 {
        if tick < 0 {
            return 0;
        }
        self.size_at
            .get(&v)
            .and_then(|m| m.range(..=tick as Tick).next_back())
            .map_or(0, |(_, s)| *s)
    }

    fn allowance(&self, p: u64) -> u64 {
        if p == 0 {
            self.v_s as u64
        } else {
            ((self.mu - 1) * Rate::from_integer(p as i64))
                .floor()
                .to_integer()
                .max(0) as u64
        }
    }

    fn events_in(&self, v: VideoId, from_excl: i64, to_incl: Tick) -> u64 {
        let lo = (from_excl + 1).max(0) as Tick;
        if lo > to_incl {
            return 0;
        }
        self.events_at
            .get(&v)
            .map_or(0, |m| m.range(lo..=to_incl).map(|(_, c)| c).sum())
    }

    /// Further events `v` may take at tick `now` without breaking any
    /// growth window that contains `now`.
    fn budget(&self, v: VideoId, now: Tick) -> u64 {
        let t_s = self.t_s as i64;
        let now_i = now as i64;
        (now_i - t_s..now_i)
            .map(|start| {
                let p = self.size_end_of(v, start);
                self.allowance(p)
                    .saturating_sub(self.events_in(v, start, now))
            })
            .min()
            .unwrap_or(0)
    }

    fn complete(&mut self, now: Tick) {
        for b in 0..self.playing.len() {
            let before = self.playing[b].len();
            let done: Vec<VideoId> = self.playing[b]
                .iter()
                .filter(|(_, end)| *end <= now)
                .map(|(v, _)| *v)
                .collect();
            self.playing[b].retain(|(_, end)| *end > now);
            debug_assert_eq!(before, self.playing[b].len() + done.len());
            for v in done {
                *self.size.entry(v).or_default() -= 1;
            }
        }
    }

    fn bump(&mut self, v: VideoId, now: Tick) {
        *self.events_at.entry(v).or_default().entry(now).or_default() += 1;
    }

    fn join(&mut self, b: BoxId, v: VideoId, now: Tick) {
        if self.size(v) == 0 {
            *self.starts.entry(v).or_default() += 1;
        }
        self.playing[b].push((v, now + self.duration));
        *self.size.entry(v).or_default() += 1;
        self.bump(v, now);
    }

    fn leave_last(&mut self, b: BoxId, now: Tick) -> bool {
        match self.playing[b].pop() {
            Some((v, _)) => {
                *self.size.entry(v).or_default() -= 1;
                self.bump(v, now);
                true
            }
            None => false,
        }
    }

    /// Applies `ev`; `Err` names an illegal transition.
    fn apply(&mut self, ev: &SimEvent) -> Result<(), String> {
        let b = ev.box_id;
        if b >= self.failed.len() {
            return Err(format!("box {b} does not exist"));
        }
        let alive = !self.failed[b];
        match ev.kind {
            EventKind::Start(v) if alive => self.join(b, v, ev.time),
            EventKind::Zap(v) if alive => {
                if !self.leave_last(b, ev.time) {
                    return Err(format!("zap on idle box {b}"));
                }
                self.join(b, v, ev.time);
            }
            EventKind::Stop if alive => {
                if !self.leave_last(b, ev.time) {
                    return Err(format!("stop on idle box {b}"));
                }
            }
            EventKind::Fail if alive => {
                while self.leave_last(b, ev.time) {}
                self.failed[b] = true;
            }
            EventKind::Resurrect if !alive => self.failed[b] = false,
            _ => return Err(format!("illegal {ev} for box {b}")),
        }
        Ok(())
    }

    fn close_tick(&mut self, now: Tick) {
        let touched: Vec<VideoId> = self
            .size
            .keys()
            .copied()
            .chain(self.size_at.keys().copied())
            .collect();
        for v in touched {
            let s = self.size(v);
            let hist = self.size_at.entry(v).or_default();
            if hist.values().next_back().copied() != Some(s) {
                hist.insert(now, s);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceViolation {
    pub time: Tick,
    pub message: String,
}

impl fmt::Display for SequenceViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={}: {}", self.time, self.message)
    }
}

/// Replays `seq` and reports every breach of the swarm growth bound, the
/// active-ratio floor `a`, the per-video swarm start limit (when given) and
/// every illegal transition. Empty iff compliant.
pub fn validate_sequence(
    cfg: &SystemConfig,
    seq: &EventSequence,
    swarms_per_video: Option<u32>,
) -> Vec<SequenceViolation> {
    let mut out = Vec::new();
    let mut r = Replay::new(cfg);
    let Some(last) = seq.last_time() else {
        return out;
    };
    let mut events = seq.events.clone();
    events.sort_by_key(|e| e.time);
    let n = cfg.n as i64;
    let floor = cfg.a * Rate::from_integer(n);
    let mut next = 0;
    for now in 0..=last {
        r.complete(now);
        while next < events.len() && events[next].time == now {
            if let Err(message) = r.apply(&events[next]) {
                out.push(SequenceViolation { time: now, message });
            }
            next += 1;
        }
        r.close_tick(now);
        let active = r.active() as i64;
        if Rate::from_integer(active) < floor {
            out.push(SequenceViolation {
                time: now,
                message: format!("active {active}/{n} below a = {}", cfg.a),
            });
        }
        // The window (now − t_S, now] is complete.
        let start = now as i64 - r.t_s as i64;
        let videos: Vec<VideoId> = r.events_at.keys().copied().collect();
        for v in videos {
            let e = r.events_in(v, start, now);
            let p = r.size_end_of(v, start);
            if e > r.allowance(p) {
                let message = if p == 0 {
                    format!("video {v}: {e} events from an empty swarm > v_S = {}", r.v_s)
                } else {
                    format!("video {v}: growth {} > {}·{}", p + e, r.mu, p)
                };
                out.push(SequenceViolation { time: now, message });
            }
        }
    }
    if let Some(limit) = swarms_per_video {
        for (v, c) in &r.starts {
            if *c > limit {
                out.push(SequenceViolation {
                    time: last,
                    message: format!("video {v} started {c} swarms > {limit}"),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generated {
    pub sequence: EventSequence,
    /// Set when fewer than the requested number of events could be emitted.
    pub warnings: Vec<String>,
}

/// Emits up to `r` stress-less events: swarm starts (at most
/// `swarms_per_video` per video), joins within the growth bound, and at each
/// swarm start one failure opportunity of probability `p_f` per active box.
/// A failure is skipped when it would breach the active floor or a swarm's
/// growth budget.
pub fn generate_stressless(
    cfg: &SystemConfig,
    p_f: f64,
    swarms_per_video: u32,
    r: usize,
    seed: u64,
) -> Generated {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = Replay::new(cfg);
    let mut events = Vec::new();
    let mut warnings = Vec::new();
    let min_active = (cfg.a * Rate::from_integer(cfg.n as i64))
        .ceil()
        .to_integer()
        .max(0) as usize;
    let max_ticks = (r as Tick + 1) * (cfg.video_duration + 1) * 4;
    let mut now: Tick = 0;

    while events.len() < r {
        if now >= max_ticks {
            warnings.push(format!("stopped at tick {now} with {} of {r} events", events.len()));
            break;
        }
        rep.complete(now);

        // New swarm, half of the ticks.
        if rng.random_bool(0.5) {
            let fresh: Vec<VideoId> = (0..cfg.m)
                .filter(|&v| rep.size(v) == 0)
                .filter(|v| rep.starts.get(v).copied().unwrap_or(0) < swarms_per_video)
                .filter(|&v| rep.budget(v, now) > 0)
                .collect();
            if let (Some(&v), Some(b)) = (fresh.choose(&mut rng), idle_box(&rep, &mut rng)) {
                let ev = SimEvent::new(now, b, EventKind::Start(v));
                rep.apply(&ev).expect("idle active box");
                events.push(ev);
                fail_opportunities(&mut rep, &mut events, now, p_f, min_active, r, &mut rng);
            }
        }

        // Growth of running swarms.
        let mut running: Vec<VideoId> = (0..cfg.m).filter(|&v| rep.size(v) > 0).collect();
        running.shuffle(&mut rng);
        for v in running {
            let budget = rep.budget(v, now).min((r - events.len().min(r)) as u64);
            let joins = rng.random_range(0..=budget);
            for _ in 0..joins {
                let Some(b) = idle_box(&rep, &mut rng) else {
                    break;
                };
                let ev = SimEvent::new(now, b, EventKind::Start(v));
                rep.apply(&ev).expect("idle active box");
                events.push(ev);
            }
        }
        rep.close_tick(now);

        let stuck = (0..cfg.m).all(|v| {
            rep.size(v) == 0 && rep.starts.get(&v).copied().unwrap_or(0) >= swarms_per_video
        });
        if stuck {
            warnings.push(format!(
                "every video used its {swarms_per_video} swarm start(s); {} of {r} events",
                events.len()
            ));
            break;
        }
        now += 1;
    }
    Generated {
        sequence: EventSequence { events },
        warnings,
    }
}

fn idle_box<R: Rng + ?Sized>(rep: &Replay, rng: &mut R) -> Option<BoxId> {
    let idle: Vec<BoxId> = (0..rep.failed.len())
        .filter(|&b| !rep.failed[b] && rep.playing[b].is_empty())
        .collect();
    idle.choose(rng).copied()
}

fn fail_opportunities<R: Rng + ?Sized>(
    rep: &mut Replay,
    events: &mut Vec<SimEvent>,
    now: Tick,
    p_f: f64,
    min_active: usize,
    r: usize,
    rng: &mut R,
) {
    for b in 0..rep.failed.len() {
        if rep.failed[b] || !rng.random_bool(p_f) {
            continue;
        }
        if events.len() >= r || rep.active() <= min_active {
            continue;
        }
        if rep.playing[b].iter().any(|(v, _)| rep.budget(*v, now) == 0) {
            continue;
        }
        let ev = SimEvent::new(now, b, EventKind::Fail);
        rep.apply(&ev).expect("active box");
        events.push(ev);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Rate;

    fn cfg() -> SystemConfig {
        SystemConfig::simulation_setup(10)
    }

    #[test]
    fn zipf_rank_one_mass() {
        // 1 / (1 + 1/4 + 1/9) = 36/49
        let p = VideoPicker::zipf(3, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws = 100_000;
        let hits = (0..draws).filter(|_| p.pick(&mut rng) == 0).count() as f64;
        let q = 36.0 / 49.0;
        let sigma = (draws as f64 * q * (1.0 - q)).sqrt();
        assert!((hits - draws as f64 * q).abs() < 3.0 * sigma, "{hits}");
    }

    #[test]
    fn zipf_zero_exponent_is_uniform() {
        let p = VideoPicker::zipf(4, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = [0usize; 4];
        for _ in 0..40_000 {
            counts[p.pick(&mut rng) as usize] += 1;
        }
        for c in counts {
            assert!((c as i64 - 10_000).abs() < 400, "{counts:?}");
        }
    }

    #[test]
    fn trace_degenerate_weight() {
        let t = PopularityTrace::parse("# comment\n0,0\n1,0\n2,5\n").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            assert_eq!(next_request_trace(&t, &mut rng).unwrap(), 2);
        }
        assert_eq!(
            PopularityTrace::parse("0,0\n"),
            Err(AdversaryError::EmptyTrace)
        );
        assert!(matches!(
            PopularityTrace::parse("0;1"),
            Err(AdversaryError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn trace_recipes() {
        let t = PopularityTrace::parse("10,1\n11,7\n12,3\n13,5\n").unwrap();
        let top = t.top_m(2);
        assert_eq!(top.entries, vec![(0, 7.0), (1, 5.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sub = t.random_subset(3, &mut rng);
        assert_eq!(sub.entries.len(), 3);
        assert!(sub.check_catalog(3).is_ok());
        assert!(t.check_catalog(12).is_err());
    }

    #[test]
    fn greedy_prefers_loaded_servable_videos() {
        let scores = [Some(15), Some(1), Some(15)];
        assert_eq!(greedy_pick(3, |v| scores[v as usize]), Some(1));
        assert_eq!(greedy_pick(3, |_| Some(4)), Some(0));
        let scores = [Some(3), None, Some(0)];
        assert_eq!(greedy_pick(3, |v| scores[v as usize]), Some(2));
        assert_eq!(greedy_pick(3, |_| None), Some(0));
        assert_eq!(greedy_pick(0, |_| Some(0)), None);
    }

    #[test]
    fn permutation_stream_covers_active_boxes() {
        let cfg = SystemConfig::homogeneous(5, Rate::from_integer(1), Rate::from_integer(1), 1, 1, 5);
        let mut st = SimState::new(&cfg);
        st.set_offline(2);
        let mut perm = BoxPermutation::new(5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut round: Vec<BoxId> = (0..4).map(|_| perm.next(&st, &mut rng).unwrap()).collect();
        round.sort_unstable();
        assert_eq!(round, vec![0, 1, 3, 4]);
    }

    #[test]
    fn spec_validation() {
        let c = cfg();
        assert!(AdversarySpec::new(AdversaryKind::Zipf { gamma: 0.0 }, 0)
            .validate(&c)
            .is_err());
        let bad = AdversaryKind::Stressless {
            p_f: 0.2,
            swarms_per_video: 1,
        };
        assert!(matches!(
            AdversarySpec::new(bad, 0).validate(&c),
            Err(AdversaryError::FailureRate { .. })
        ));
        let ok = AdversaryKind::Stressless {
            p_f: 0.19,
            swarms_per_video: 1,
        };
        assert!(AdversarySpec::new(ok, 0).validate(&c).is_ok());
    }

    #[test]
    fn growth_jump_is_reported() {
        let c = cfg();
        let mut events = Vec::new();
        for b in 0..3 {
            events.push(SimEvent::new(0, b, EventKind::Start(7)));
        }
        for b in 3..7 {
            events.push(SimEvent::new(1, b, EventKind::Start(7)));
        }
        let v = validate_sequence(&c, &EventSequence { events }, None);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].time, 1);
        assert!(v[0].message.ends_with("growth 7 > 2·3"), "{}", v[0]);
    }

    #[test]
    fn doubling_is_allowed() {
        let c = cfg();
        let mut events = Vec::new();
        for b in 0..4 {
            events.push(SimEvent::new(0, b, EventKind::Start(1)));
        }
        for b in 4..8 {
            events.push(SimEvent::new(1, b, EventKind::Start(1)));
        }
        assert!(validate_sequence(&c, &EventSequence { events }, Some(1)).is_empty());
    }

    #[test]
    fn empty_sequence_is_compliant() {
        assert!(validate_sequence(&cfg(), &EventSequence::default(), Some(1)).is_empty());
    }

    #[test]
    fn active_floor_and_illegal_events() {
        let c = cfg();
        let seq = EventSequence::parse("0,1,fail\n1,1,start,3\n").unwrap();
        let v = validate_sequence(&c, &seq, None);
        assert!(v.iter().any(|x| x.message.contains("below a")));
        assert!(v.iter().any(|x| x.message.contains("illegal")));
    }

    #[test]
    fn restarted_video_is_reported() {
        let mut c = cfg();
        c.video_duration = 2;
        let seq = EventSequence::parse("0,1,start,3\n5,2,start,3\n").unwrap();
        assert!(validate_sequence(&c, &seq, None).is_empty());
        let v = validate_sequence(&c, &seq, Some(1));
        assert_eq!(v.len(), 1);
        assert!(v[0].message.contains("started 2 swarms"));
    }

    #[test]
    fn sequence_text_round_trip() {
        let text = "0,1,start,3\n0,2,zap,4\n1,5,fail\n2,5,resurrect\n3,2,stop\n";
        let seq = EventSequence::parse(text).unwrap();
        assert_eq!(seq.to_string(), text);
        assert!(EventSequence::parse("0,1,start").is_err());
        assert!(EventSequence::parse("0,1,fail,2").is_err());
    }

    #[test]
    fn generated_sequences_validate() {
        let mut c = cfg();
        c.a = Rate::new(9, 10);
        for seed in 0..20 {
            let g = generate_stressless(&c, 0.01, 1, 100, seed);
            assert!(g.warnings.is_empty(), "{:?}", g.warnings);
            assert_eq!(g.sequence.len(), 100);
            let v = validate_sequence(&c, &g.sequence, Some(1));
            assert!(v.is_empty(), "seed {seed}: {:?}", v);
        }
    }

    #[test]
    fn single_swarm_per_video_never_restarts() {
        let mut c = cfg();
        c.video_duration = 3;
        let g = generate_stressless(&c, 0.0, 1, 100, 4);
        assert!(validate_sequence(&c, &g.sequence, Some(1)).is_empty());
    }
}
