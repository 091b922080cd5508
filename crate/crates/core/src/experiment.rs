//! Parameter sweeps over independent engine runs.
//!
//! Every sweep point is a saturation probe repeated over `runs` seeds; each
//! run derives its allocation, adversary and scheduler seeds from the base
//! seed and the run index, so a row can be replayed on its own.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::adversary::{AdversaryKind, AdversarySpec, PopularityTrace};
use crate::allocation::{allocate, AllocationError};
use crate::engine::{run, saturation_probe, EngineError, Mode, RunOptions};
use crate::metrics::Metrics;
use crate::model::{rate_to_f64, AllocationMode, BoxId, Rate, SystemConfig, Tick};

pub const SWEEP_SCHEMA: &str = "vodsim-sweep/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Experiment {
    KSweep,
    SSweep,
    HeteroSweep,
    FailureSweep,
    Single,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::KSweep,
        Experiment::SSweep,
        Experiment::HeteroSweep,
        Experiment::FailureSweep,
        Experiment::Single,
    ];

    /// Name of the swept parameter.
    pub fn parameter(&self) -> &'static str {
        match self {
            Experiment::KSweep => "k",
            Experiment::SSweep => "s",
            Experiment::HeteroSweep => "sd",
            Experiment::FailureSweep => "offline_fraction",
            Experiment::Single => "run",
        }
    }

    pub fn default_grid(&self) -> Vec<f64> {
        match self {
            Experiment::KSweep => (1..=20).map(f64::from).collect(),
            Experiment::SSweep => (1..=30).map(f64::from).collect(),
            Experiment::HeteroSweep => vec![0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0],
            Experiment::FailureSweep => (0..=12).map(|i| i as f64 * 0.05).collect(),
            Experiment::Single => vec![0.0],
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Experiment::KSweep => "k-sweep",
            Experiment::SSweep => "s-sweep",
            Experiment::HeteroSweep => "hetero-sweep",
            Experiment::FailureSweep => "failure-sweep",
            Experiment::Single => "single",
        })
    }
}

impl FromStr for Experiment {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.to_string() == s)
            .ok_or_else(|| ExperimentError::UnknownExperiment(s.to_string()))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ExperimentError {
    #[error("unknown experiment {0:?} (k-sweep, s-sweep, hetero-sweep, failure-sweep, single)")]
    UnknownExperiment(String),
    #[error("sweep value {value} is not valid for {experiment}")]
    BadValue { experiment: Experiment, value: f64 },
    #[error("at least one run is required")]
    NoRuns,
    #[error("no adversary given")]
    NoAdversary,
    #[error("{0}")]
    Upload(String),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Sets `m` to the largest catalog that fits, then trims single storage
/// slots round-robin so `k·m·s` equals the total exactly.
pub fn fit_catalog(cfg: &mut SystemConfig) {
    let per_video = cfg.k as u64 * cfg.s as u64;
    if per_video == 0 {
        cfg.m = 0;
        return;
    }
    let total = cfg.total_storage_slots();
    cfg.m = (total / per_video) as u32;
    let mut excess = total - cfg.m as u64 * per_video;
    let slot = Rate::new(1, cfg.s as i64);
    let mut b = 0;
    while excess > 0 {
        if cfg.storage_slots(b) > 0 {
            cfg.storage[b] = Rate::from_integer(cfg.storage_slots(b) as i64) * slot - slot;
            excess -= 1;
        }
        b = (b + 1) % cfg.n;
    }
}

/// Uploads drawn from `N(mean, sd²)` truncated to `[1/s, 2+2/s]` by
/// redrawing, rounded to whole slots, then nudged one slot at a time until
/// the average equals `mean`.
pub fn heterogeneous_uploads(
    n: usize,
    mean: Rate,
    sd: f64,
    s: u32,
    seed: u64,
) -> Result<Vec<Rate>, String> {
    let s_i = s as i64;
    let lo = 1i64;
    let hi = 2 * s_i + 2;
    let target = mean * Rate::from_integer(s_i * n as i64);
    if !target.is_integer() {
        return Err(format!("mean {mean} times s·n is not a whole number of slots"));
    }
    let target = target.to_integer();
    if target < lo * n as i64 || target > hi * n as i64 {
        return Err(format!("mean {mean} outside the truncation range"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slots: Vec<i64> = if sd == 0.0 {
        let base = target / n as i64;
        let mut v = vec![base; n];
        for x in v.iter_mut().take((target - base * n as i64) as usize) {
            *x += 1;
        }
        v
    } else {
        let normal = Normal::new(rate_to_f64(mean), sd).map_err(|e| e.to_string())?;
        let (lo_f, hi_f) = (1.0 / s as f64, 2.0 + 2.0 / s as f64);
        (0..n)
            .map(|_| loop {
                let x = normal.sample(&mut rng);
                if (lo_f..=hi_f).contains(&x) {
                    break ((x * s as f64).round() as i64).clamp(lo, hi);
                }
            })
            .collect()
    };
    let mut diff = target - slots.iter().sum::<i64>();
    while diff != 0 {
        let b = rng.random_range(0..n);
        if diff > 0 && slots[b] < hi {
            slots[b] += 1;
            diff -= 1;
        } else if diff < 0 && slots[b] > lo {
            slots[b] -= 1;
            diff += 1;
        }
    }
    Ok(slots.into_iter().map(|x| Rate::new(x, s_i)).collect())
}

/// The first `⌊f·n⌋` boxes of a seeded permutation.
pub fn offline_boxes(n: usize, fraction: f64, seed: u64) -> Vec<BoxId> {
    let count = ((fraction * n as f64) + 1e-9).floor() as usize;
    let mut order: Vec<BoxId> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.truncate(count.min(n));
    order.sort_unstable();
    order
}

/// Seed number `tag` of run `run`.
pub fn derive_seed(seed: u64, tag: u64, run: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng.set_word_pos(run as u128 * 2);
    rng.next_u64()
}

pub fn k_sweep_config(base: &SystemConfig, k: u32) -> SystemConfig {
    let mut cfg = base.clone();
    cfg.k = k;
    fit_catalog(&mut cfg);
    cfg
}

/// `u = 1 + 1/s` and `c = s` at each point.
pub fn s_sweep_config(base: &SystemConfig, s: u32) -> SystemConfig {
    let mut cfg = base.clone();
    cfg.s = s;
    cfg.c = s;
    cfg.upload = vec![Rate::from_integer(1) + Rate::new(1, s as i64); cfg.n];
    fit_catalog(&mut cfg);
    cfg
}

pub fn hetero_config(base: &SystemConfig, sd: f64, seed: u64) -> Result<SystemConfig, String> {
    let mut cfg = base.clone();
    cfg.upload = heterogeneous_uploads(cfg.n, base.avg_upload(), sd, cfg.s, seed)?;
    Ok(cfg)
}

/// How a popularity trace longer than the catalog is cut down to `m` videos.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceRecipe {
    /// `m` videos drawn uniformly from the trace.
    RandomSubset,
    /// The `m` most popular videos.
    TopM,
}

impl TraceRecipe {
    pub fn apply(&self, trace: &PopularityTrace, m: u32, seed: u64) -> PopularityTrace {
        match self {
            TraceRecipe::RandomSubset => {
                trace.random_subset(m as usize, &mut ChaCha8Rng::seed_from_u64(seed))
            }
            TraceRecipe::TopM => trace.top_m(m as usize),
        }
    }
}

impl fmt::Display for TraceRecipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraceRecipe::RandomSubset => "random-subset",
            TraceRecipe::TopM => "top-m",
        })
    }
}

impl FromStr for TraceRecipe {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random-subset" => Ok(TraceRecipe::RandomSubset),
            "top-m" => Ok(TraceRecipe::TopM),
            other => Err(format!("unknown trace recipe {other:?} (random-subset, top-m)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub experiment: Experiment,
    pub base: SystemConfig,
    pub adversaries: Vec<AdversaryKind>,
    pub mode: Mode,
    pub seed: u64,
    pub runs: usize,
    /// Sweep grid; `None` uses the experiment default.
    pub values: Option<Vec<f64>>,
    /// Horizon of `single` runs.
    pub ticks: Tick,
    /// Applied to trace adversaries at every point, against that point's `m`.
    pub trace_recipe: Option<TraceRecipe>,
}

impl ExperimentSpec {
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            base: SystemConfig::simulation_setup(10),
            adversaries: vec![AdversaryKind::Random],
            mode: Mode::Static,
            seed: 1,
            runs: 10,
            values: None,
            ticks: 200,
            trace_recipe: None,
        }
    }

    pub fn grid(&self) -> Vec<f64> {
        self.values
            .clone()
            .unwrap_or_else(|| self.experiment.default_grid())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub x: f64,
    pub adversary: String,
    pub run: usize,
    pub alloc_seed: u64,
    pub adversary_seed: u64,
    pub scheduler_seed: u64,
    pub satisfied: u64,
    pub issued: u64,
    pub ceiling: u64,
    /// Active boxes, the per-point target.
    pub active: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub x: f64,
    pub adversary: String,
    pub runs: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: u64,
    pub max: u64,
    pub ceiling: f64,
    pub active: f64,
    /// Share of runs with `satisfied ≥ active`.
    pub reach_active: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub rows: Vec<SweepRow>,
    pub summaries: Vec<SweepSummary>,
    /// Per-tick metrics of `single` runs, one per adversary.
    pub single: Vec<(String, Metrics)>,
}

fn point_config(
    spec: &ExperimentSpec,
    x: f64,
    run: usize,
) -> Result<(SystemConfig, Vec<BoxId>), ExperimentError> {
    let bad = || ExperimentError::BadValue {
        experiment: spec.experiment,
        value: x,
    };
    let whole = |x: f64| (x >= 1.0 && x.fract() == 0.0).then_some(x as u32).ok_or_else(bad);
    let base = &spec.base;
    Ok(match spec.experiment {
        Experiment::KSweep => (k_sweep_config(base, whole(x)?), vec![]),
        Experiment::SSweep => (s_sweep_config(base, whole(x)?), vec![]),
        Experiment::HeteroSweep => {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(bad());
            }
            let cfg = hetero_config(base, x, derive_seed(spec.seed, 4, run))
                .map_err(ExperimentError::Upload)?;
            (cfg, vec![])
        }
        Experiment::FailureSweep => {
            if !(0.0..1.0).contains(&x) {
                return Err(bad());
            }
            let off = offline_boxes(base.n, x, derive_seed(spec.seed, 5, run));
            (base.clone(), off)
        }
        Experiment::Single => (base.clone(), vec![]),
    })
}

fn adapt(spec: &ExperimentSpec, kind: &AdversaryKind, m: u32, run: usize) -> AdversaryKind {
    match (kind, spec.trace_recipe) {
        (AdversaryKind::Trace(t), Some(recipe)) => {
            AdversaryKind::Trace(recipe.apply(t, m, derive_seed(spec.seed, 6, run)))
        }
        _ => kind.clone(),
    }
}

fn sweep_point(
    spec: &ExperimentSpec,
    x: f64,
    adversary: &AdversaryKind,
    run: usize,
) -> Result<SweepRow, ExperimentError> {
    let (cfg, offline) = point_config(spec, x, run)?;
    let alloc_seed = derive_seed(spec.seed, 1, run);
    let adversary_seed = derive_seed(spec.seed, 2, run);
    let scheduler_seed = derive_seed(spec.seed, 3, run);
    let alloc = allocate(&cfg, alloc_seed)?;
    let adv = AdversarySpec::new(adapt(spec, adversary, cfg.m, run), adversary_seed);
    let sat = saturation_probe(&cfg, &alloc, &adv, spec.mode, scheduler_seed, &offline)?;
    Ok(SweepRow {
        x,
        adversary: adversary.name().to_string(),
        run,
        alloc_seed,
        adversary_seed,
        scheduler_seed,
        satisfied: sat.satisfied,
        issued: sat.issued,
        ceiling: sat.ceiling,
        active: cfg.n - offline.len(),
    })
}

pub fn summarize(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut out: Vec<SweepSummary> = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let j = rows[i..]
            .iter()
            .position(|r| r.x != rows[i].x || r.adversary != rows[i].adversary)
            .map_or(rows.len(), |p| i + p);
        let group = &rows[i..j];
        let k = group.len() as f64;
        let vals: Vec<f64> = group.iter().map(|r| r.satisfied as f64).collect();
        let mean = vals.iter().sum::<f64>() / k;
        let sd = if group.len() > 1 {
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        out.push(SweepSummary {
            x: group[0].x,
            adversary: group[0].adversary.clone(),
            runs: group.len(),
            mean,
            sd,
            min: group.iter().map(|r| r.satisfied).min().unwrap_or(0),
            max: group.iter().map(|r| r.satisfied).max().unwrap_or(0),
            ceiling: group.iter().map(|r| r.ceiling as f64).sum::<f64>() / k,
            active: group.iter().map(|r| r.active as f64).sum::<f64>() / k,
            reach_active: group.iter().filter(|r| r.satisfied >= r.active as u64).count() as f64 / k,
        });
        i = j;
    }
    out
}

/// Runs every `(value, adversary, run)` point on the rayon pool.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult, ExperimentError> {
    if spec.runs == 0 {
        return Err(ExperimentError::NoRuns);
    }
    if spec.adversaries.is_empty() {
        return Err(ExperimentError::NoAdversary);
    }
    if spec.experiment == Experiment::Single {
        let single = spec
            .adversaries
            .par_iter()
            .map(|kind| {
                let alloc = allocate(&spec.base, derive_seed(spec.seed, 1, 0))?;
                let adapted = adapt(spec, kind, spec.base.m, 0);
                let adv = AdversarySpec::new(adapted, derive_seed(spec.seed, 2, 0));
                let opts = RunOptions {
                    ticks: spec.ticks,
                    ..Default::default()
                };
                let out = run(&spec.base, &alloc, &adv, spec.mode, derive_seed(spec.seed, 3, 0), &opts)?;
                Ok((kind.name().to_string(), out.metrics))
            })
            .collect::<Result<Vec<_>, ExperimentError>>()?;
        return Ok(ExperimentResult {
            spec: spec.clone(),
            rows: vec![],
            summaries: vec![],
            single,
        });
    }
    let grid = spec.grid();
    let tasks: Vec<(usize, usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..spec.adversaries.len()).flat_map(move |a| (0..spec.runs).map(move |r| (g, a, r))))
        .collect();
    let mut rows = tasks
        .par_iter()
        .map(|&(g, a, r)| sweep_point(spec, grid[g], &spec.adversaries[a], r))
        .collect::<Result<Vec<_>, _>>()?;
    rows.sort_by(|a, b| {
        a.x.total_cmp(&b.x)
            .then_with(|| a.adversary.cmp(&b.adversary))
            .then(a.run.cmp(&b.run))
    });
    let summaries = summarize(&rows);
    Ok(ExperimentResult {
        spec: spec.clone(),
        rows,
        summaries,
        single: vec![],
    })
}

fn list(v: &[Rate]) -> String {
    if v.windows(2).all(|w| w[0] == w[1]) {
        v.first().map_or(String::new(), Rate::to_string)
    } else {
        format!("[{}]", v.iter().map(Rate::to_string).collect::<Vec<_>>().join(" "))
    }
}

/// Header comment carrying the config, grid and seed derivation.
pub fn header(spec: &ExperimentSpec) -> String {
    let c = &spec.base;
    let mut h = String::new();
    let _ = writeln!(
        h,
        "# {SWEEP_SCHEMA} experiment={} mode={} runs={} seed={}",
        spec.experiment, spec.mode, spec.runs, spec.seed
    );
    let _ = writeln!(
        h,
        "# base n={} u={} d={} c={} s={} k={} m={} t_S={} v_S={} mu={} a={} video_duration={} allocation={}",
        c.n,
        list(&c.upload),
        list(&c.storage),
        c.c,
        c.s,
        c.k,
        c.m,
        c.t_s,
        c.v_s,
        c.mu,
        c.a,
        c.video_duration,
        match c.allocation {
            AllocationMode::Regular => "regular",
            AllocationMode::PurelyRandom => "random",
        }
    );
    let adv: Vec<String> = spec
        .adversaries
        .iter()
        .map(|a| match a {
            AdversaryKind::Zipf { gamma } => format!("zipf(gamma={gamma})"),
            AdversaryKind::Stressless {
                p_f,
                swarms_per_video,
            } => format!("stressless(p_f={p_f},swarms_per_video={swarms_per_video})"),
            other => other.name().to_string(),
        })
        .collect();
    let _ = writeln!(h, "# adversaries {}", adv.join(" "));
    if let Some(recipe) = spec.trace_recipe {
        let _ = writeln!(h, "# trace recipe {recipe} (subset seed = derive_seed(seed, 6, run))");
    }
    let grid: Vec<String> = spec.grid().iter().map(|x| x.to_string()).collect();
    let _ = writeln!(h, "# {} = {}", spec.experiment.parameter(), grid.join(" "));
    let _ = writeln!(
        h,
        "# seeds: alloc/adversary/scheduler = derive_seed(seed, 1/2/3, run); uploads = derive_seed(seed, 4, run); offline = derive_seed(seed, 5, run)"
    );
    match spec.experiment {
        Experiment::KSweep => {
            let _ = writeln!(h, "# m = floor(sum d_i*s / (k*s)); leftover storage slots trimmed round-robin");
        }
        Experiment::SSweep => {
            let _ = writeln!(h, "# u = 1+1/s and c = s at each point");
        }
        Experiment::HeteroSweep => {
            let _ = writeln!(
                h,
                "# uploads ~ Normal(mean={}, sd) truncated to [1/s, 2+2/s] by redraw, rounded to slots, adjusted to keep the mean",
                c.avg_upload()
            );
        }
        Experiment::FailureSweep => {
            let _ = writeln!(h, "# floor(f*n) boxes offline for the whole run");
        }
        Experiment::Single => {}
    }
    h
}

impl ExperimentResult {
    pub fn runs_csv(&self) -> String {
        let mut s = header(&self.spec);
        let _ = writeln!(
            s,
            "{},adversary,run,alloc_seed,adversary_seed,scheduler_seed,satisfied,issued,ceiling,active",
            self.spec.experiment.parameter()
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.x,
                r.adversary,
                r.run,
                r.alloc_seed,
                r.adversary_seed,
                r.scheduler_seed,
                r.satisfied,
                r.issued,
                r.ceiling,
                r.active
            );
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = header(&self.spec);
        let _ = writeln!(
            s,
            "{},adversary,runs,mean,sd,min,max,ceiling,active,reach_active",
            self.spec.experiment.parameter()
        );
        for r in &self.summaries {
            let _ = writeln!(
                s,
                "{},{},{},{:.4},{:.4},{},{},{:.2},{:.2},{:.4}",
                r.x, r.adversary, r.runs, r.mean, r.sd, r.min, r.max, r.ceiling, r.active, r.reach_active
            );
        }
        s
    }

    /// `(file name, contents)` pairs to write.
    pub fn files(&self) -> Vec<(String, String)> {
        let name = self.spec.experiment.to_string();
        if self.spec.experiment == Experiment::Single {
            return self
                .single
                .iter()
                .map(|(adv, m)| {
                    let mut text = header(&self.spec);
                    text.push_str(&m.to_csv());
                    (format!("{name}-{adv}.csv"), text)
                })
                .collect();
        }
        vec![
            (format!("{name}.csv"), self.summary_csv()),
            (format!("{name}-runs.csv"), self.runs_csv()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_fits_storage_exactly() {
        for k in 1..=20 {
            let cfg = k_sweep_config(&SystemConfig::simulation_setup(10), k);
            assert_eq!(cfg.m, 3200 / k);
            assert_eq!(cfg.replica_count(), cfg.total_storage_slots());
            assert!(allocate(&cfg, 0).is_ok());
        }
    }

    #[test]
    fn s_sweep_points() {
        let cfg = s_sweep_config(&SystemConfig::simulation_setup(10), 4);
        assert_eq!(cfg.upload[0], Rate::new(5, 4));
        assert_eq!(cfg.m, 320);
        assert_eq!(cfg.c, 4);
    }

    #[test]
    fn hetero_uploads_keep_mean_and_bounds() {
        for (sd, seed) in [(0.0, 0), (0.3, 1), (1.0, 2), (5.0, 3)] {
            let u = heterogeneous_uploads(100, Rate::new(16, 15), sd, 15, seed).unwrap();
            let total: Rate = u.iter().sum();
            assert_eq!(total, Rate::new(1600, 15));
            assert!(u.iter().all(|x| *x >= Rate::new(1, 15) && *x <= Rate::new(32, 15)));
        }
        let flat = heterogeneous_uploads(10, Rate::new(16, 15), 0.0, 15, 0).unwrap();
        assert!(flat.iter().all(|x| *x == Rate::new(16, 15)));
    }

    #[test]
    fn offline_selection() {
        assert_eq!(offline_boxes(100, 0.1, 3).len(), 10);
        assert_eq!(offline_boxes(100, 0.35, 3).len(), 35);
        assert!(offline_boxes(100, 0.0, 3).is_empty());
        assert_eq!(offline_boxes(100, 0.1, 3), offline_boxes(100, 0.1, 3));
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(1, 1, 0);
        assert_ne!(a, derive_seed(1, 2, 0));
        assert_ne!(a, derive_seed(1, 1, 1));
        assert_eq!(a, derive_seed(1, 1, 0));
    }

    #[test]
    fn names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.to_string().parse::<Experiment>(), Ok(e));
        }
        assert!("x-sweep".parse::<Experiment>().is_err());
    }

    #[test]
    fn small_sweep_is_sorted_and_reproducible() {
        let mut spec = ExperimentSpec::new(Experiment::KSweep);
        spec.values = Some(vec![12.0, 10.0]);
        spec.runs = 3;
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 6);
        assert_eq!(a.rows[0].x, 10.0);
        assert_eq!(a.summaries.len(), 2);
        let csv = a.summary_csv();
        assert!(csv.starts_with("# vodsim-sweep/1 experiment=k-sweep"));
        assert!(csv.contains("k,adversary,runs,mean,sd"));
    }

    #[test]
    fn bad_values() {
        let mut spec = ExperimentSpec::new(Experiment::KSweep);
        spec.values = Some(vec![2.5]);
        assert!(matches!(run_experiment(&spec), Err(ExperimentError::BadValue { .. })));
        spec.runs = 0;
        assert_eq!(run_experiment(&spec), Err(ExperimentError::NoRuns));
    }
}
