//! System parameters, identities and events.
//!
//! Capacities are carried as exact rationals. Upload and storage are both
//! consumed in unit slots of `1/s` (one stripe stream, one stripe copy), so
//! every `u_i·s` and `d_i·s` must be an integer for a config to be usable.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use thiserror::Error;

/// Exact rational used for capacities and ratios.
pub type Rate = Ratio<i64>;

pub type BoxId = usize;
pub type VideoId = u32;
pub type Tick = u64;

/// One stripe of one video. Orders video-major, stripe-minor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StripeId {
    pub video: VideoId,
    pub stripe: u32,
}

impl StripeId {
    pub fn new(video: VideoId, stripe: u32) -> Self {
        Self { video, stripe }
    }

    /// Dense index `video·s + stripe`.
    pub fn linear(&self, s: u32) -> usize {
        self.video as usize * s as usize + self.stripe as usize
    }

    pub fn from_linear(idx: usize, s: u32) -> Self {
        Self {
            video: (idx / s as usize) as VideoId,
            stripe: (idx % s as usize) as u32,
        }
    }
}

impl fmt::Display for StripeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.video, self.stripe)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum AllocationMode {
    /// Random permutation of replicas onto slots; every slot is filled.
    #[default]
    Regular,
    /// Each replica lands on an independently drawn box, weighted by storage.
    PurelyRandom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// Number of boxes.
    pub n: usize,
    /// Per-box upload `u_i`, in full video streams.
    pub upload: Vec<Rate>,
    /// Per-box storage `d_i`, in whole videos.
    pub storage: Vec<Rate>,
    /// Max download connections per video.
    pub c: u32,
    /// Stripes per video.
    pub s: u32,
    /// Catalog size.
    pub m: u32,
    /// Replicas per stripe.
    pub k: u32,
    /// Start-up delay, in ticks.
    pub t_s: Tick,
    /// Max arrivals during `t_s` for a cold video.
    pub v_s: u32,
    /// Swarm growth bound.
    pub mu: Rate,
    /// Minimum ratio of active boxes.
    pub a: Rate,
    /// Playback length, in ticks.
    pub video_duration: Tick,
    pub allocation: AllocationMode,
}

pub const DEFAULT_T_S: Tick = 1;
pub const DEFAULT_VIDEO_DURATION: Tick = 60;
pub const DEFAULT_V_S: u32 = 5;

pub fn default_mu() -> Rate {
    Rate::from_integer(2)
}

impl SystemConfig {
    /// Homogeneous system with `c = s` and default values of `mu`, `v_s`, `a`.
    pub fn homogeneous(n: usize, u: Rate, d: Rate, s: u32, k: u32, m: u32) -> Self {
        Self {
            n,
            upload: vec![u; n],
            storage: vec![d; n],
            c: s,
            s,
            m,
            k,
            t_s: DEFAULT_T_S,
            v_s: DEFAULT_V_S,
            mu: default_mu(),
            a: Rate::from_integer(1),
            video_duration: DEFAULT_VIDEO_DURATION,
            allocation: AllocationMode::Regular,
        }
    }

    /// The n=100 simulation setup: `d = 32`, `s = c = 15`, `u = 1 + 1/s`,
    /// and `m = ⌊n·d/k⌋`.
    pub fn simulation_setup(k: u32) -> Self {
        let s = 15;
        let n = 100;
        let d = 32;
        let m = (n as u32 * d) / k;
        Self::homogeneous(
            n,
            Rate::new(s as i64 + 1, s as i64),
            Rate::from_integer(d as i64),
            s,
            k,
            m,
        )
    }

    pub fn avg_upload(&self) -> Rate {
        if self.n == 0 {
            return Rate::zero();
        }
        self.upload.iter().sum::<Rate>() / Rate::from_integer(self.n as i64)
    }

    pub fn avg_storage(&self) -> Rate {
        if self.n == 0 {
            return Rate::zero();
        }
        self.storage.iter().sum::<Rate>() / Rate::from_integer(self.n as i64)
    }

    /// Upload slots `u_i·s` of box `i` (truncated if not integral).
    pub fn upload_slots(&self, i: BoxId) -> u32 {
        slots(self.upload[i], self.s)
    }

    /// Storage slots `d_i·s` of box `i` (truncated if not integral).
    pub fn storage_slots(&self, i: BoxId) -> u32 {
        slots(self.storage[i], self.s)
    }

    pub fn total_upload_slots(&self) -> u64 {
        (0..self.n).map(|i| self.upload_slots(i) as u64).sum()
    }

    pub fn total_storage_slots(&self) -> u64 {
        (0..self.n).map(|i| self.storage_slots(i) as u64).sum()
    }

    /// Replica count `k·m·s`.
    pub fn replica_count(&self) -> u64 {
        self.k as u64 * self.m as u64 * self.s as u64
    }

    pub fn stripe_count(&self) -> usize {
        self.m as usize * self.s as usize
    }

    /// True when `d_i = (d/u)·u_i` for every box.
    pub fn is_proportional(&self) -> bool {
        let u = self.avg_upload();
        let d = self.avg_storage();
        if u.is_zero() {
            return false;
        }
        let ratio = d / u;
        self.upload
            .iter()
            .zip(&self.storage)
            .all(|(ui, di)| *di == ratio * *ui)
    }

    pub fn stripes_of(&self, video: VideoId) -> impl Iterator<Item = StripeId> {
        (0..self.s).map(move |stripe| StripeId { video, stripe })
    }

    pub fn with_mu(mut self, mu: Rate) -> Self {
        self.mu = mu;
        self
    }

    pub fn with_allocation(mut self, mode: AllocationMode) -> Self {
        self.allocation = mode;
        self
    }
}

fn slots(x: Rate, s: u32) -> u32 {
    let v = x * Rate::from_integer(s as i64);
    v.floor().to_integer().max(0) as u32
}

pub fn rate_to_f64(r: Rate) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    /// Structural: the simulator cannot run this config.
    Error,
    /// Feasibility: runnable, but below a scalability threshold.
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    EmptySystem,
    CapacityLength,
    StripesExceedConnections,
    ZeroParameter(&'static str),
    NegativeCapacity(BoxId),
    NonIntegralUpload(BoxId),
    NonIntegralStorage(BoxId),
    GrowthNotAboveOne,
    ActiveRatioOutOfRange,
    SlotMismatch { replicas: u64, slots: u64 },
    BelowConnectionThreshold,
    BelowGrowthThreshold,
    CatalogAboveCap,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub severity: Severity,
    pub kind: ViolationKind,
    pub message: String,
}

impl Violation {
    fn error(kind: ViolationKind, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            kind,
            message: message.into(),
        }
    }

    fn warning(kind: ViolationKind, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            kind,
            message: message.into(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

/// Checks structural invariants (errors) and feasibility thresholds (warnings).
/// An empty list means the config is fully compliant.
pub fn validate_config(cfg: &SystemConfig) -> Vec<Violation> {
    use ViolationKind as K;
    let mut out = Vec::new();

    if cfg.n == 0 {
        out.push(Violation::error(K::EmptySystem, "n = 0"));
        return out;
    }
    if cfg.upload.len() != cfg.n || cfg.storage.len() != cfg.n {
        out.push(Violation::error(
            K::CapacityLength,
            format!(
                "expected {} capacities, got {} upload and {} storage",
                cfg.n,
                cfg.upload.len(),
                cfg.storage.len()
            ),
        ));
        return out;
    }
    for (name, value) in [
        ("s", cfg.s as u64),
        ("c", cfg.c as u64),
        ("m", cfg.m as u64),
        ("k", cfg.k as u64),
        ("t_S", cfg.t_s),
        ("v_S", cfg.v_s as u64),
        ("video_duration", cfg.video_duration),
    ] {
        if value == 0 {
            out.push(Violation::error(K::ZeroParameter(name), format!("{name} = 0")));
        }
    }
    if cfg.s > cfg.c {
        out.push(Violation::error(
            K::StripesExceedConnections,
            format!("s > c ({} > {})", cfg.s, cfg.c),
        ));
    }
    let s = Rate::from_integer(cfg.s as i64);
    for i in 0..cfg.n {
        if cfg.upload[i] < Rate::zero() || cfg.storage[i] < Rate::zero() {
            out.push(Violation::error(
                K::NegativeCapacity(i),
                format!("box {i} has negative capacity"),
            ));
            continue;
        }
        if !(cfg.upload[i] * s).is_integer() {
            out.push(Violation::error(
                K::NonIntegralUpload(i),
                format!("u_{i}·s = {} is not an integer", cfg.upload[i] * s),
            ));
        }
        if !(cfg.storage[i] * s).is_integer() {
            out.push(Violation::error(
                K::NonIntegralStorage(i),
                format!("d_{i}·s = {} is not an integer", cfg.storage[i] * s),
            ));
        }
    }
    if cfg.mu <= Rate::from_integer(1) {
        out.push(Violation::error(
            K::GrowthNotAboveOne,
            format!("mu = {} must exceed 1", cfg.mu),
        ));
    }
    if cfg.a <= Rate::zero() || cfg.a > Rate::from_integer(1) {
        out.push(Violation::error(
            K::ActiveRatioOutOfRange,
            format!("a = {} must lie in (0, 1]", cfg.a),
        ));
    }
    if cfg.allocation == AllocationMode::Regular {
        let replicas = cfg.replica_count();
        let slots = cfg.total_storage_slots();
        if replicas != slots {
            out.push(Violation::error(
                K::SlotMismatch { replicas, slots },
                format!("k·m·s ≠ Σd_i·s in regular mode ({replicas} ≠ {slots})"),
            ));
        }
    }

    let u = cfg.avg_upload();
    if cfg.c > 0 {
        let threshold = Rate::from_integer(1) + Rate::new(1, cfg.c as i64);
        if u < threshold {
            out.push(Violation::warning(
                K::BelowConnectionThreshold,
                format!("u < 1+1/c ({u} < {threshold})"),
            ));
        }
    }
    if u < cfg.mu {
        out.push(Violation::warning(
            K::BelowGrowthThreshold,
            format!("u < μ ({u} < {})", cfg.mu),
        ));
    }
    let cap = cfg.a * cfg.avg_storage() * Rate::from_integer(cfg.n as i64);
    if Rate::from_integer(cfg.m as i64) > cap {
        out.push(Violation::warning(
            K::CatalogAboveCap,
            format!("m > a·d·n ({} > {cap})", cfg.m),
        ));
    }
    out
}

/// Adversarial state change of one box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Start(VideoId),
    Zap(VideoId),
    Fail,
    Resurrect,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SimEvent {
    pub time: Tick,
    pub box_id: BoxId,
    pub kind: EventKind,
}

impl SimEvent {
    pub fn new(time: Tick, box_id: BoxId, kind: EventKind) -> Self {
        Self { time, box_id, kind }
    }
}

impl fmt::Display for SimEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            EventKind::Start(v) => write!(f, "{},{},start,{v}", self.time, self.box_id),
            EventKind::Zap(v) => write!(f, "{},{},zap,{v}", self.time, self.box_id),
            EventKind::Fail => write!(f, "{},{},fail", self.time, self.box_id),
            EventKind::Resurrect => write!(f, "{},{},resurrect", self.time, self.box_id),
            EventKind::Stop => write!(f, "{},{},stop", self.time, self.box_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad event line {line:?}: {reason}")]
pub struct ParseEventError {
    pub line: String,
    pub reason: &'static str,
}

impl FromStr for SimEvent {
    type Err = ParseEventError;

    /// Parses `time,box,kind[,video]`.
    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let err = |reason| ParseEventError {
            line: line.to_string(),
            reason,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 3 {
            return Err(err("expected time,box,kind[,video]"));
        }
        let time = fields[0].parse().map_err(|_| err("bad time"))?;
        let box_id = fields[1].parse().map_err(|_| err("bad box"))?;
        let video = || -> Result<VideoId, ParseEventError> {
            match fields.get(3) {
                Some(v) if fields.len() == 4 => v.parse().map_err(|_| err("bad video")),
                _ => Err(err("video field required")),
            }
        };
        let no_video = |kind| {
            if fields.len() == 3 {
                Ok(kind)
            } else {
                Err(err("unexpected video field"))
            }
        };
        let kind = match fields[2] {
            "start" => EventKind::Start(video()?),
            "zap" => EventKind::Zap(video()?),
            "fail" => no_video(EventKind::Fail)?,
            "resurrect" => no_video(EventKind::Resurrect)?,
            "stop" => no_video(EventKind::Stop)?,
            _ => return Err(err("unknown kind")),
        };
        Ok(SimEvent { time, box_id, kind })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(cfg: &SystemConfig) -> Vec<ViolationKind> {
        validate_config(cfg).into_iter().map(|v| v.kind).collect()
    }

    #[test]
    fn simulation_setup_has_no_structural_violations() {
        let cfg = SystemConfig::simulation_setup(10);
        assert_eq!(cfg.m, 320);
        let v = validate_config(&cfg);
        assert!(v.iter().all(|v| !v.is_error()), "{v:?}");
        // u = 16/15 sits below the default mu = 2; with mu at or below u the list is empty.
        let cfg = cfg.with_mu(Rate::new(16, 15));
        assert!(validate_config(&cfg).is_empty());
    }

    #[test]
    fn unit_upload_warns_below_one_plus_one_over_c() {
        let mut cfg = SystemConfig::simulation_setup(10).with_mu(Rate::new(11, 10));
        cfg.upload = vec![Rate::from_integer(1); cfg.n];
        let v = validate_config(&cfg);
        let w: Vec<_> = v.iter().filter(|v| !v.is_error()).collect();
        assert!(w
            .iter()
            .any(|v| v.kind == ViolationKind::BelowConnectionThreshold));
        assert!(w[0].message.contains("u < 1+1/c"));
    }

    #[test]
    fn more_stripes_than_connections_is_an_error() {
        let mut cfg = SystemConfig::simulation_setup(10);
        cfg.s = 16;
        cfg.c = 15;
        let v = validate_config(&cfg);
        let e = v
            .iter()
            .find(|v| v.kind == ViolationKind::StripesExceedConnections)
            .unwrap();
        assert!(e.is_error());
        assert!(e.message.contains("s > c"));
    }

    #[test]
    fn regular_mode_requires_exact_slot_count() {
        let mut cfg = SystemConfig::simulation_setup(10);
        cfg.m = 321;
        assert!(kinds(&cfg).contains(&ViolationKind::SlotMismatch {
            replicas: 10 * 321 * 15,
            slots: 100 * 32 * 15
        }));
        let cfg = cfg.with_allocation(AllocationMode::PurelyRandom);
        assert!(!kinds(&cfg)
            .iter()
            .any(|k| matches!(k, ViolationKind::SlotMismatch { .. })));
    }

    #[test]
    fn fractional_slots_rejected() {
        let mut cfg = SystemConfig::simulation_setup(10);
        cfg.upload[3] = Rate::new(1, 7);
        assert!(kinds(&cfg).contains(&ViolationKind::NonIntegralUpload(3)));
    }

    #[test]
    fn stripe_order_is_video_major() {
        let a = StripeId::new(0, 14);
        let b = StripeId::new(1, 0);
        assert!(a < b);
        assert_eq!(StripeId::from_linear(b.linear(15), 15), b);
    }

    #[test]
    fn averages_and_slots() {
        let cfg = SystemConfig::simulation_setup(10);
        assert_eq!(cfg.avg_upload(), Rate::new(16, 15));
        assert_eq!(cfg.upload_slots(0), 16);
        assert_eq!(cfg.storage_slots(0), 480);
        assert_eq!(cfg.total_upload_slots(), 1600);
        assert!(cfg.is_proportional());
    }
}
