//! Closed-form capacity and replication bounds.

use std::fmt::Write as _;

use num_traits::{One, Zero};
use thiserror::Error;

use crate::model::{rate_to_f64, Rate, SystemConfig};

pub const ASYMPTOTIC: &str = "asymptotic — not a desk-scale prediction";

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BoundsError {
    #[error("upload {0} must exceed 1 for a logarithm base")]
    UploadTooLow(Rate),
    #[error("storage must be positive")]
    NoStorage,
    #[error("at least 2 stripes are required, got {0}")]
    TooFewStripes(u32),
}

/// Smallest integer `k > 2·log_u(d) + 2·log_u(4e²) + 1`.
pub fn min_replication_k(u: Rate, d: Rate, s: u32) -> Result<u64, BoundsError> {
    if u <= Rate::one() {
        return Err(BoundsError::UploadTooLow(u));
    }
    if d <= Rate::zero() {
        return Err(BoundsError::NoStorage);
    }
    if s < 2 {
        return Err(BoundsError::TooFewStripes(s));
    }
    let ln_u = rate_to_f64(u).ln();
    let four_e2 = 4.0 * std::f64::consts::E.powi(2);
    let x = 2.0 * rate_to_f64(d).ln() / ln_u + 2.0 * four_e2.ln() / ln_u + 1.0;
    Ok(x.floor() as u64 + 1)
}

/// `C·(v_S/a)·(u/(u−1))·ln n`, the replication used by the
/// cache-first scheduler. `C` has no published value.
pub fn log_replication_k(cfg: &SystemConfig, c: f64) -> Option<f64> {
    let u = rate_to_f64(cfg.avg_upload());
    let a = rate_to_f64(cfg.a);
    if u <= 1.0 || a <= 0.0 || cfg.n < 2 {
        return None;
    }
    Some(c * (cfg.v_s as f64 / a) * (u / (u - 1.0)) * (cfg.n as f64).ln())
}

/// `d · min_E U_E/D_E` over box sets with storage. A ratio of sums is never
/// below the smallest member ratio, so the minimum sits on a single box.
pub fn balance_ratio(cfg: &SystemConfig) -> Option<Rate> {
    let min = (0..cfg.n)
        .filter(|&b| cfg.storage[b] > Rate::zero())
        .map(|b| cfg.upload[b] / cfg.storage[b])
        .min()?;
    Some(cfg.avg_storage() * min)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub n: usize,
    pub u: Rate,
    pub d: Rate,
    pub m: u32,
    /// `a·d·n`.
    pub catalog_cap: Rate,
    pub catalog_within_cap: bool,
    /// `1 + 1/c`.
    pub connection_threshold: Rate,
    pub upload_threshold: Rate,
    pub below_connection_threshold: bool,
    pub below_growth_threshold: bool,
    /// `max(2, μ)`.
    pub swarm_threshold: Rate,
    /// `√n`, the dominating term of the catalog bound with its constant and
    /// `n^ε` factor suppressed.
    pub catalog_scale: f64,
    pub k_min: Option<u64>,
    pub log_replication_k: Option<f64>,
    pub log_replication_c: f64,
    /// `u′`; equals `u` for proportional systems.
    pub balance_ratio: Option<Rate>,
    pub alpha: Option<Rate>,
    pub flags: Vec<String>,
}

pub fn feasibility_report(cfg: &SystemConfig) -> BoundReport {
    feasibility_report_with(cfg, 1.0)
}

pub fn feasibility_report_with(cfg: &SystemConfig, log_replication_c: f64) -> BoundReport {
    let u = cfg.avg_upload();
    let d = cfg.avg_storage();
    let n = Rate::from_integer(cfg.n as i64);
    let catalog_cap = cfg.a * d * n;
    let conn = if cfg.c == 0 {
        Rate::one()
    } else {
        Rate::one() + Rate::new(1, cfg.c as i64)
    };
    let upload_threshold = conn.max(cfg.mu);
    let below_connection_threshold = u < conn;
    let below_growth_threshold = u < cfg.mu;
    let catalog_within_cap = Rate::from_integer(cfg.m as i64) <= catalog_cap;

    let mut flags = Vec::new();
    if below_connection_threshold {
        flags.push(format!("u = {u} below threshold 1+1/c = {conn}"));
    }
    if below_growth_threshold {
        flags.push(format!("u = {u} below growth threshold μ = {}", cfg.mu));
    }
    if !catalog_within_cap {
        flags.push(format!("catalog m = {} above a·d·n = {catalog_cap}", cfg.m));
    }

    BoundReport {
        n: cfg.n,
        u,
        d,
        m: cfg.m,
        catalog_cap,
        catalog_within_cap,
        connection_threshold: conn,
        upload_threshold,
        below_connection_threshold,
        below_growth_threshold,
        swarm_threshold: Rate::from_integer(2).max(cfg.mu),
        catalog_scale: (cfg.n as f64).sqrt(),
        k_min: min_replication_k(u, d, cfg.s.max(2)).ok(),
        log_replication_k: log_replication_k(cfg, log_replication_c),
        log_replication_c,
        balance_ratio: balance_ratio(cfg),
        alpha: (cfg.mu > Rate::zero()).then(|| cfg.mu.recip()),
        flags,
    }
}

fn opt<T: ToString>(x: &Option<T>) -> String {
    x.as_ref().map_or_else(|| "undefined".to_string(), T::to_string)
}

impl BoundReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "system           n={} u={} d={} m={}", self.n, self.u, self.d, self.m);
        let _ = writeln!(
            s,
            "catalog cap      a·d·n = {} ({})",
            self.catalog_cap,
            if self.catalog_within_cap { "ok" } else { "exceeded" }
        );
        let _ = writeln!(
            s,
            "upload threshold max(1+1/c, μ) = {} (1+1/c = {})",
            self.upload_threshold, self.connection_threshold
        );
        let _ = writeln!(
            s,
            "scarce upload    u ≥ max(2, μ) = {} [{ASYMPTOTIC}]",
            self.swarm_threshold
        );
        let _ = writeln!(
            s,
            "catalog scale    O(n^(1/2+ε)) ~ {:.2} [{ASYMPTOTIC}]",
            self.catalog_scale
        );
        let _ = writeln!(s, "k_min            {}", opt(&self.k_min));
        let _ = writeln!(
            s,
            "cache-first k    C·(v_S/a)·(u/(u−1))·ln n = {} (C = {}, not a published constant)",
            self.log_replication_k.map_or("undefined".into(), |k| format!("{k:.2}")),
            self.log_replication_c
        );
        let _ = writeln!(s, "balance ratio u' {}", opt(&self.balance_ratio));
        let _ = writeln!(s, "alpha = 1/μ      {}", opt(&self.alpha));
        if self.flags.is_empty() {
            let _ = writeln!(s, "flags            none");
        }
        for f in &self.flags {
            let _ = writeln!(s, "flag             {f}");
        }
        s
    }

    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("n", self.n.to_string());
        kv("u", self.u.to_string());
        kv("d", self.d.to_string());
        kv("m", self.m.to_string());
        kv("catalog_cap", self.catalog_cap.to_string());
        kv("catalog_within_cap", self.catalog_within_cap.to_string());
        kv("connection_threshold", self.connection_threshold.to_string());
        kv("upload_threshold", self.upload_threshold.to_string());
        kv("below_connection_threshold", self.below_connection_threshold.to_string());
        kv("below_growth_threshold", self.below_growth_threshold.to_string());
        kv("swarm_threshold", self.swarm_threshold.to_string());
        kv("catalog_scale", format!("{:.6}", self.catalog_scale));
        kv("k_min", opt(&self.k_min));
        kv(
            "log_replication_k",
            self.log_replication_k.map_or("undefined".into(), |k| format!("{k:.6}")),
        );
        kv("log_replication_c", self.log_replication_c.to_string());
        kv("balance_ratio", opt(&self.balance_ratio));
        kv("alpha", opt(&self.alpha));
        kv("flags", self.flags.join("; "));
        s
    }
}
