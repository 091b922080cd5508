//! Per-box state machine and the connection table.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::distributed::StripeIndex;
use crate::model::{BoxId, EventKind, SimEvent, StripeId, SystemConfig, Tick, VideoId};

pub type ConnId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PlaybackId(pub u64);

/// Seed connections are fed from an allocated replica, cache connections
/// from a playback cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConnKind {
    Seed,
    Cache,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Connection {
    pub uploader: BoxId,
    pub downloader: BoxId,
    pub playback: PlaybackId,
    pub stripe: StripeId,
    pub kind: ConnKind,
    /// Set when the uploader stopped caching this video; the upload runs
    /// from buffered data until this tick.
    pub expires_at: Option<Tick>,
}

/// Why a download connection went away.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BreakCause {
    UploaderFailed,
    /// The uploader zapped or switched its cache and the buffered data ran out.
    UploaderLeft,
    /// Closed by the uploader to make room (grant steps 5 and 6).
    Evicted,
    /// Dropped by a centralized recomputation.
    Rescheduled,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Playback {
    pub id: PlaybackId,
    pub video: VideoId,
    pub started_at: Tick,
    /// Incoming connection per stripe.
    pub stripes: Vec<Option<ConnId>>,
    /// All stripes were connected within the start-up delay.
    pub satisfied: bool,
    /// The start-up deadline passed without a full set of stripes.
    pub startup_failed: bool,
    /// Currently in a stall episode.
    pub stalled: bool,
    /// All stripes have been connected at least once.
    pub running: bool,
    pub last_break: Option<BreakCause>,
}

impl Playback {
    pub fn connected(&self) -> usize {
        self.stripes.iter().filter(|c| c.is_some()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.stripes.iter().all(Option::is_some)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheEntry {
    pub video: VideoId,
    pub started_at: Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activity {
    Active,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoxState {
    pub activity: Activity,
    /// Concurrent playbacks; more than one when several devices share the box.
    pub playbacks: Vec<Playback>,
    /// Playback cache, capacity one video.
    pub cache: Option<CacheEntry>,
    pub uploads: Vec<ConnId>,
}

impl BoxState {
    fn new() -> Self {
        Self {
            activity: Activity::Active,
            playbacks: Vec::new(),
            cache: None,
            uploads: Vec::new(),
        }
    }

    pub fn is_active(&self) -> bool {
        self.activity == Activity::Active
    }

    pub fn is_playing(&self, video: VideoId) -> bool {
        self.playbacks.iter().any(|p| p.video == video)
    }
}

/// A download that lost its uploader and needs a new one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Orphan {
    pub downloader: BoxId,
    pub playback: PlaybackId,
    pub stripe: StripeId,
    pub kind: ConnKind,
    pub cause: BreakCause,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventDelta {
    pub orphans: Vec<Orphan>,
    pub started: Option<(BoxId, PlaybackId)>,
    pub ended: Vec<PlaybackId>,
    /// Uploads switched to buffered mode with an expiry.
    pub expiring: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("illegal transition {event}: {reason}")]
pub struct IllegalTransition {
    pub event: SimEvent,
    pub reason: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimState {
    pub now: Tick,
    s: u32,
    t_s: Tick,
    video_duration: Tick,
    upload_slots: Vec<u32>,
    boxes: Vec<BoxState>,
    conns: BTreeMap<ConnId, Connection>,
    next_conn: ConnId,
    next_playback: u64,
    pub index: StripeIndex,
}

impl SimState {
    pub fn new(cfg: &SystemConfig) -> Self {
        Self {
            now: 0,
            s: cfg.s,
            t_s: cfg.t_s,
            video_duration: cfg.video_duration,
            upload_slots: (0..cfg.n).map(|b| cfg.upload_slots(b)).collect(),
            boxes: (0..cfg.n).map(|_| BoxState::new()).collect(),
            conns: BTreeMap::new(),
            next_conn: 0,
            next_playback: 0,
            index: StripeIndex::default(),
        }
    }

    pub fn n(&self) -> usize {
        self.boxes.len()
    }

    pub fn s(&self) -> u32 {
        self.s
    }

    pub fn t_s(&self) -> Tick {
        self.t_s
    }

    pub fn video_duration(&self) -> Tick {
        self.video_duration
    }

    pub fn boxes(&self) -> &[BoxState] {
        &self.boxes
    }

    pub fn box_state(&self, b: BoxId) -> &BoxState {
        &self.boxes[b]
    }

    pub fn is_active(&self, b: BoxId) -> bool {
        self.boxes[b].is_active()
    }

    pub fn active_count(&self) -> usize {
        self.boxes.iter().filter(|b| b.is_active()).count()
    }

    pub fn connections(&self) -> impl Iterator<Item = (ConnId, &Connection)> {
        self.conns.iter().map(|(id, c)| (*id, c))
    }

    pub fn connection(&self, id: ConnId) -> Option<&Connection> {
        self.conns.get(&id)
    }

    pub fn connection_count(&self) -> usize {
        self.conns.len()
    }

    pub fn upload_slots(&self, b: BoxId) -> u32 {
        self.upload_slots[b]
    }

    pub fn used_slots(&self, b: BoxId) -> u32 {
        self.boxes[b].uploads.len() as u32
    }

    pub fn free_slots(&self, b: BoxId) -> u32 {
        self.upload_slots[b].saturating_sub(self.used_slots(b))
    }

    /// Cache-kind uploads, which may never take the last slot of a box.
    pub fn cache_uploads(&self, b: BoxId) -> u32 {
        self.count_uploads(b, |c| c.kind == ConnKind::Cache)
    }

    pub fn seed_uploads(&self, b: BoxId) -> u32 {
        self.count_uploads(b, |c| c.kind == ConnKind::Seed)
    }

    pub fn uploads_of_video(&self, b: BoxId, video: VideoId) -> u32 {
        self.count_uploads(b, |c| c.stripe.video == video)
    }

    pub fn is_uploading_stripe(&self, b: BoxId, stripe: StripeId) -> bool {
        self.count_uploads(b, |c| c.stripe == stripe) > 0
    }

    fn count_uploads(&self, b: BoxId, pred: impl Fn(&Connection) -> bool) -> u32 {
        self.boxes[b]
            .uploads
            .iter()
            .filter(|id| pred(&self.conns[id]))
            .count() as u32
    }

    pub fn playback(&self, b: BoxId, id: PlaybackId) -> Option<&Playback> {
        self.boxes[b].playbacks.iter().find(|p| p.id == id)
    }

    fn playback_mut(&mut self, b: BoxId, id: PlaybackId) -> Option<&mut Playback> {
        self.boxes[b].playbacks.iter_mut().find(|p| p.id == id)
    }

    /// Ticks of data consumed since the playback started.
    pub fn position(&self, p: &Playback) -> Tick {
        self.now.saturating_sub(p.started_at).min(self.video_duration)
    }

    /// Video held in `b`'s playback cache and how far it extends.
    pub fn cache_position(&self, b: BoxId) -> Option<(VideoId, Tick)> {
        self.boxes[b].cache.map(|c| {
            (
                c.video,
                self.now.saturating_sub(c.started_at).min(self.video_duration),
            )
        })
    }

    /// How far `b` holds `video`, from its cache or a playback in progress.
    pub fn data_position(&self, b: BoxId, video: VideoId) -> Option<Tick> {
        let cached = self
            .cache_position(b)
            .filter(|(v, _)| *v == video)
            .map(|(_, pos)| pos);
        let playing = self.boxes[b]
            .playbacks
            .iter()
            .filter(|p| p.video == video)
            .map(|p| self.position(p))
            .max();
        cached.max(playing)
    }

    /// True when `b` holds `video` at least `t_s` ahead of `position`, or
    /// holds the whole video.
    pub fn has_data_ahead(&self, b: BoxId, video: VideoId, position: Tick) -> bool {
        self.data_position(b, video).is_some_and(|pos| {
            pos >= self.video_duration || pos >= position.saturating_add(self.t_s)
        })
    }

    /// Box feeding stripe `stripe` of `b`'s playback of that video, if any.
    pub fn parent_of(&self, b: BoxId, stripe: StripeId) -> Option<BoxId> {
        self.boxes[b]
            .playbacks
            .iter()
            .filter(|p| p.video == stripe.video)
            .find_map(|p| p.stripes[stripe.stripe as usize])
            .map(|c| self.conns[&c].uploader)
    }

    /// `(conn, downloader)` for every upload of `stripe` from `b`.
    pub fn children_of(&self, b: BoxId, stripe: StripeId) -> Vec<(ConnId, BoxId)> {
        self.boxes[b]
            .uploads
            .iter()
            .filter(|id| self.conns[id].stripe == stripe)
            .map(|id| (*id, self.conns[id].downloader))
            .collect()
    }

    /// Position of the playback that owns connection `id` (its downloader side).
    pub fn downloader_position(&self, id: ConnId) -> Option<Tick> {
        let c = self.conns.get(&id)?;
        self.playback(c.downloader, c.playback)
            .map(|p| self.position(p))
    }

    pub fn add_playback(&mut self, b: BoxId, video: VideoId) -> PlaybackId {
        let id = PlaybackId(self.next_playback);
        self.next_playback += 1;
        self.boxes[b].playbacks.push(Playback {
            id,
            video,
            started_at: self.now,
            stripes: vec![None; self.s as usize],
            satisfied: false,
            startup_failed: false,
            stalled: false,
            running: false,
            last_break: None,
        });
        self.index.join(video, b);
        id
    }

    /// Drops the playback and its downloads. Uploads of the box are untouched.
    pub fn remove_playback(&mut self, b: BoxId, id: PlaybackId) -> Option<Playback> {
        let pos = self.boxes[b].playbacks.iter().position(|p| p.id == id)?;
        let conns: Vec<ConnId> = self.boxes[b].playbacks[pos]
            .stripes
            .iter()
            .flatten()
            .copied()
            .collect();
        for c in conns {
            self.sever(c, BreakCause::Rescheduled);
        }
        let p = self.boxes[b].playbacks.remove(pos);
        self.index.leave(p.video, b);
        self.drain_video(b, p.video);
        Some(p)
    }

    /// Cache uploads of `video` that `b` no longer holds far enough ahead of
    /// the downloader run on buffered data for `t_s` more ticks.
    fn drain_video(&mut self, b: BoxId, video: VideoId) -> usize {
        let deadline = self.now + self.t_s;
        let uncovered: Vec<ConnId> = self.boxes[b]
            .uploads
            .iter()
            .copied()
            .filter(|id| {
                let c = &self.conns[id];
                c.kind == ConnKind::Cache
                    && c.stripe.video == video
                    && c.expires_at.is_none()
                    && !self
                        .downloader_position(*id)
                        .is_some_and(|pos| self.has_data_ahead(b, video, pos))
            })
            .collect();
        for id in &uncovered {
            if let Some(c) = self.conns.get_mut(id) {
                c.expires_at = Some(deadline);
            }
        }
        if self.data_position(b, video).is_none() {
            self.index.uncache(video, b);
        }
        uncovered.len()
    }

    pub fn mark_playback(&mut self, b: BoxId, id: PlaybackId, f: impl FnOnce(&mut Playback)) {
        if let Some(p) = self.playback_mut(b, id) {
            f(p);
        }
    }

    /// Switches the cache to `video`. Cache uploads of the previous video
    /// that a playback in progress cannot cover run on buffered data for
    /// `t_s` ticks. A cache already holding `video` is kept as is.
    pub fn set_cache(&mut self, b: BoxId, video: VideoId) -> usize {
        let mut expiring = 0;
        let old = self.boxes[b].cache;
        if let Some(old) = old {
            if old.video == video {
                self.index.cache(video, b);
                return 0;
            }
        }
        self.boxes[b].cache = Some(CacheEntry {
            video,
            started_at: self.now,
        });
        self.index.cache(video, b);
        if let Some(old) = old {
            expiring = self.drain_video(b, old.video);
        }
        expiring
    }

    pub fn install(
        &mut self,
        uploader: BoxId,
        downloader: BoxId,
        playback: PlaybackId,
        stripe: StripeId,
        kind: ConnKind,
    ) -> ConnId {
        let id = self.next_conn;
        self.next_conn += 1;
        self.conns.insert(
            id,
            Connection {
                uploader,
                downloader,
                playback,
                stripe,
                kind,
                expires_at: None,
            },
        );
        self.boxes[uploader].uploads.push(id);
        let slot = stripe.stripe as usize;
        let p = self
            .playback_mut(downloader, playback)
            .expect("install into a live playback");
        debug_assert!(p.stripes[slot].is_none());
        p.stripes[slot] = Some(id);
        if kind == ConnKind::Seed {
            self.index.seed_started(stripe);
        }
        id
    }

    /// Removes a connection; returns the orphaned download when its
    /// playback is still live.
    pub fn sever(&mut self, id: ConnId, cause: BreakCause) -> Option<Orphan> {
        let c = self.conns.remove(&id)?;
        let ups = &mut self.boxes[c.uploader].uploads;
        if let Some(i) = ups.iter().position(|x| *x == id) {
            ups.swap_remove(i);
        }
        if c.kind == ConnKind::Seed {
            self.index.seed_ended(c.stripe);
        }
        let slot = c.stripe.stripe as usize;
        let p = self.playback_mut(c.downloader, c.playback)?;
        if p.stripes[slot] == Some(id) {
            p.stripes[slot] = None;
            p.last_break = Some(cause);
        }
        Some(Orphan {
            downloader: c.downloader,
            playback: c.playback,
            stripe: c.stripe,
            kind: c.kind,
            cause,
        })
    }

    /// Severs buffered uploads whose deadline has passed.
    pub fn expire_uploads(&mut self) -> Vec<Orphan> {
        let due: Vec<ConnId> = self
            .conns
            .iter()
            .filter(|(_, c)| c.expires_at.is_some_and(|t| t <= self.now))
            .map(|(id, _)| *id)
            .collect();
        due.into_iter()
            .filter_map(|id| self.sever(id, BreakCause::UploaderLeft))
            .collect()
    }

    /// Ends playbacks that reached the end of the video. Caches stay.
    pub fn complete_finished(&mut self) -> Vec<(BoxId, PlaybackId)> {
        let mut done = Vec::new();
        for b in 0..self.boxes.len() {
            for p in &self.boxes[b].playbacks {
                if self.now.saturating_sub(p.started_at) >= self.video_duration {
                    done.push((b, p.id));
                }
            }
        }
        for &(b, id) in &done {
            self.remove_playback(b, id);
        }
        done
    }

    pub fn apply_event(&mut self, ev: &SimEvent) -> Result<EventDelta, IllegalTransition> {
        let illegal = |reason| IllegalTransition { event: *ev, reason };
        let b = ev.box_id;
        if b >= self.boxes.len() {
            return Err(illegal("unknown box"));
        }
        let mut delta = EventDelta::default();
        match ev.kind {
            EventKind::Start(v) => {
                if !self.is_active(b) {
                    return Err(illegal("start on a failed box"));
                }
                let id = self.add_playback(b, v);
                delta.expiring = self.set_cache(b, v);
                delta.started = Some((b, id));
            }
            EventKind::Zap(v) => {
                if !self.is_active(b) {
                    return Err(illegal("zap on a failed box"));
                }
                let Some(last) = self.boxes[b].playbacks.last().map(|p| p.id) else {
                    return Err(illegal("zap on an idle box"));
                };
                self.remove_playback(b, last);
                delta.ended.push(last);
                let id = self.add_playback(b, v);
                delta.expiring = self.set_cache(b, v);
                delta.started = Some((b, id));
            }
            EventKind::Stop => {
                if !self.is_active(b) {
                    return Err(illegal("stop on a failed box"));
                }
                let Some(last) = self.boxes[b].playbacks.last().map(|p| p.id) else {
                    return Err(illegal("stop on an idle box"));
                };
                self.remove_playback(b, last);
                delta.ended.push(last);
            }
            EventKind::Fail => {
                if !self.is_active(b) {
                    return Err(illegal("fail on a failed box"));
                }
                for id in self.boxes[b].uploads.clone() {
                    if let Some(o) = self.sever(id, BreakCause::UploaderFailed) {
                        delta.orphans.push(o);
                    }
                }
                let ids: Vec<_> = self.boxes[b].playbacks.iter().map(|p| p.id).collect();
                for id in ids {
                    self.remove_playback(b, id);
                    delta.ended.push(id);
                }
                if let Some(c) = self.boxes[b].cache.take() {
                    self.index.uncache(c.video, b);
                }
                self.boxes[b].activity = Activity::Failed;
            }
            EventKind::Resurrect => {
                if self.is_active(b) {
                    return Err(illegal("resurrect on an active box"));
                }
                self.boxes[b].activity = Activity::Active;
            }
        }
        Ok(delta)
    }

    /// Marks `b` failed before any activity (static offline boxes).
    pub fn set_offline(&mut self, b: BoxId) {
        let ev = SimEvent::new(self.now, b, EventKind::Fail);
        let _ = self.apply_event(&ev);
    }

    pub fn audit(&self) -> Audit {
        let mut audit = Audit::default();
        let mut used = 0u64;
        let mut cap = 0u64;
        for (b, bx) in self.boxes.iter().enumerate() {
            let slots = self.upload_slots[b];
            if bx.is_active() {
                cap += slots as u64;
            } else if !bx.uploads.is_empty() || !bx.playbacks.is_empty() {
                audit.failed_box_busy += 1;
            }
            used += bx.uploads.len() as u64;
            if bx.uploads.len() as u32 > slots {
                audit.over_capacity += 1;
            }
            if self.cache_uploads(b) > slots.saturating_sub(1) {
                audit.reserved_slot += 1;
            }
        }
        if used > cap {
            audit.over_capacity += 1;
        }
        for c in self.conns.values() {
            if c.kind != ConnKind::Cache || c.expires_at.is_some() {
                continue;
            }
            let Some(pos) = self
                .playback(c.downloader, c.playback)
                .map(|p| self.position(p))
            else {
                continue;
            };
            if !self.has_data_ahead(c.uploader, c.stripe.video, pos) {
                audit.ordering += 1;
            }
        }
        audit.cycles = self.cache_cycles();
        audit
    }

    /// Stripes whose live cache-connection graph contains a cycle. Nodes are
    /// playbacks: a cache upload leaves the uploader's most advanced
    /// playback of the video, or its cache when that is further ahead.
    fn cache_cycles(&self) -> u64 {
        type Node = (BoxId, Option<PlaybackId>);
        let source = |b: BoxId, video: VideoId| -> Node {
            let cached = self
                .cache_position(b)
                .filter(|(v, _)| *v == video)
                .map(|(_, pos)| pos);
            let p = self.boxes[b]
                .playbacks
                .iter()
                .filter(|p| p.video == video)
                .max_by_key(|p| (self.position(p), p.id))
                .filter(|p| cached.is_none_or(|c| self.position(p) >= c));
            (b, p.map(|p| p.id))
        };
        let mut edges: BTreeMap<StripeId, Vec<(Node, Node)>> = BTreeMap::new();
        for c in self.conns.values() {
            if c.kind == ConnKind::Cache && c.expires_at.is_none() {
                edges
                    .entry(c.stripe)
                    .or_default()
                    .push((source(c.uploader, c.stripe.video), (c.downloader, Some(c.playback))));
            }
        }
        let mut cycles = 0;
        for list in edges.values() {
            // Kahn's algorithm on the playbacks touched by this stripe.
            let nodes: BTreeSet<Node> = list.iter().flat_map(|&(a, b)| [a, b]).collect();
            let mut indeg: BTreeMap<Node, usize> = nodes.iter().map(|&x| (x, 0)).collect();
            for &(_, d) in list {
                *indeg.get_mut(&d).unwrap() += 1;
            }
            let mut queue: Vec<Node> = indeg
                .iter()
                .filter(|(_, d)| **d == 0)
                .map(|(x, _)| *x)
                .collect();
            let mut seen = 0;
            while let Some(x) = queue.pop() {
                seen += 1;
                for &(a, d) in list {
                    if a == x {
                        let e = indeg.get_mut(&d).unwrap();
                        *e -= 1;
                        if *e == 0 {
                            queue.push(d);
                        }
                    }
                }
            }
            if seen != nodes.len() {
                cycles += 1;
            }
        }
        cycles
    }
}

/// Invariant violations found by [`SimState::audit`]; all zero when healthy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Audit {
    pub over_capacity: u64,
    pub reserved_slot: u64,
    pub failed_box_busy: u64,
    /// Cache connections whose uploader is not `t_s` ahead of its child.
    pub ordering: u64,
    pub cycles: u64,
}

impl Audit {
    pub fn is_clean(&self) -> bool {
        *self == Audit::default()
    }

    pub fn add(&mut self, other: &Audit) {
        self.over_capacity += other.over_capacity;
        self.reserved_slot += other.reserved_slot;
        self.failed_box_busy += other.failed_box_busy;
        self.ordering += other.ordering;
        self.cycles += other.cycles;
    }
}
