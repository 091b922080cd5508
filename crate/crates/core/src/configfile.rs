//! TOML system description.
//!
//! Keys use the model symbols: `n`, `u`, `d`, `c`, `s`, `k`, `m`, `t_S`,
//! `v_S`, `mu`, `a`, `video_duration`, `allocation`. Rational values may be
//! integers, floats or `"p/q"` strings. `u` and `d` also accept a per-box
//! list or, for `u`, a truncated Gaussian `{ gaussian = { sd = 0.3, seed = 1 } }`
//! whose mean defaults to `1 + 1/s`. Omitted keys take the defaults of the
//! reference setup (n=100, d=32, s=c=15, u=1+1/s, k=10); an omitted `m`
//! fills the storage exactly.

use std::path::Path;

use num_rational::Ratio;
use thiserror::Error;
use toml::{Table, Value};

use crate::experiment::{fit_catalog, heterogeneous_uploads};
use crate::model::{AllocationMode, Rate, SystemConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(String),
    #[error("config is not valid TOML: {0}")]
    Syntax(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: {reason}")]
    BadValue { key: String, reason: String },
}

const KEYS: &[&str] = &[
    "n",
    "u",
    "d",
    "c",
    "s",
    "k",
    "m",
    "t_S",
    "v_S",
    "mu",
    "a",
    "video_duration",
    "allocation",
];

fn bad(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Parses `3`, `1.5` or `"16/15"`.
pub fn parse_rate(key: &str, v: &Value) -> Result<Rate, ConfigError> {
    match v {
        Value::Integer(i) => Ok(Rate::from_integer(*i)),
        Value::Float(f) => {
            Ratio::approximate_float(*f).ok_or_else(|| bad(key, format!("{f} is not representable")))
        }
        Value::String(s) => parse_rate_str(s).ok_or_else(|| bad(key, format!("{s:?} is not p/q"))),
        _ => Err(bad(key, "expected a number or \"p/q\"")),
    }
}

pub fn parse_rate_str(s: &str) -> Option<Rate> {
    let s = s.trim();
    if let Some((p, q)) = s.split_once('/') {
        let p: i64 = p.trim().parse().ok()?;
        let q: i64 = q.trim().parse().ok()?;
        (q != 0).then(|| Rate::new(p, q))
    } else if let Ok(i) = s.parse::<i64>() {
        Some(Rate::from_integer(i))
    } else {
        s.parse::<f64>().ok().and_then(Ratio::approximate_float)
    }
}

fn int<T: TryFrom<i64>>(t: &Table, key: &str) -> Result<Option<T>, ConfigError> {
    match t.get(key) {
        None => Ok(None),
        Some(Value::Integer(i)) => T::try_from(*i)
            .map(Some)
            .map_err(|_| bad(key, format!("{i} out of range"))),
        Some(_) => Err(bad(key, "expected an integer")),
    }
}

fn per_box(t: &Table, key: &str, n: usize) -> Result<Option<Vec<Rate>>, ConfigError> {
    match t.get(key) {
        None => Ok(None),
        Some(Value::Array(items)) => {
            if items.len() != n {
                return Err(bad(key, format!("{} entries for n = {n}", items.len())));
            }
            items.iter().map(|v| parse_rate(key, v)).collect::<Result<_, _>>().map(Some)
        }
        Some(Value::Table(_)) => Ok(None),
        Some(v) => Ok(Some(vec![parse_rate(key, v)?; n])),
    }
}

pub fn load_config(path: &Path) -> Result<SystemConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(e.to_string()))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<SystemConfig, ConfigError> {
    let t: Table = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    if let Some(k) = t.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(ConfigError::UnknownKey(k.clone()));
    }
    let n: usize = int(&t, "n")?.unwrap_or(100);
    let s: u32 = int(&t, "s")?.unwrap_or(15);
    let c: u32 = int(&t, "c")?.unwrap_or(s);
    let k: u32 = int(&t, "k")?.unwrap_or(10);
    let default_u = Rate::from_integer(1) + Rate::new(1, s.max(1) as i64);

    let upload = match t.get("u") {
        Some(Value::Table(g)) => Some(gaussian_uploads(g, n, s, default_u)?),
        _ => per_box(&t, "u", n)?,
    }
    .unwrap_or_else(|| vec![default_u; n]);
    let storage = per_box(&t, "d", n)?.unwrap_or_else(|| vec![Rate::from_integer(32); n]);

    let mut cfg = SystemConfig::homogeneous(n, default_u, Rate::from_integer(32), s, k, 0);
    cfg.upload = upload;
    cfg.storage = storage;
    cfg.c = c;
    if let Some(v) = int(&t, "t_S")? {
        cfg.t_s = v;
    }
    if let Some(v) = int(&t, "v_S")? {
        cfg.v_s = v;
    }
    if let Some(v) = int(&t, "video_duration")? {
        cfg.video_duration = v;
    }
    if let Some(v) = t.get("mu") {
        cfg.mu = parse_rate("mu", v)?;
    }
    if let Some(v) = t.get("a") {
        cfg.a = parse_rate("a", v)?;
    }
    cfg.allocation = match t.get("allocation") {
        None => AllocationMode::Regular,
        Some(Value::String(s)) => match s.as_str() {
            "regular" => AllocationMode::Regular,
            "random" | "purely-random" | "purely_random" => AllocationMode::PurelyRandom,
            other => return Err(bad("allocation", format!("{other:?} is not regular or random"))),
        },
        Some(_) => return Err(bad("allocation", "expected a string")),
    };
    match int::<u32>(&t, "m")? {
        Some(m) => cfg.m = m,
        None => fit_catalog(&mut cfg),
    }
    Ok(cfg)
}

fn gaussian_uploads(g: &Table, n: usize, s: u32, default_mean: Rate) -> Result<Vec<Rate>, ConfigError> {
    let spec = match g.get("gaussian") {
        Some(Value::Table(spec)) if g.len() == 1 => spec,
        _ => return Err(bad("u", "expected { gaussian = { sd = .., mean = .., seed = .. } }")),
    };
    let mean = match spec.get("mean") {
        Some(v) => parse_rate("u.mean", v)?,
        None => default_mean,
    };
    let sd = match spec.get("sd") {
        Some(Value::Float(f)) => *f,
        Some(Value::Integer(i)) => *i as f64,
        _ => return Err(bad("u.sd", "expected a number")),
    };
    if !(sd >= 0.0 && sd.is_finite()) {
        return Err(bad("u.sd", "must be finite and non-negative"));
    }
    let seed = int::<u64>(spec, "seed")?.unwrap_or(0);
    heterogeneous_uploads(n, mean, sd, s, seed).map_err(|e| bad("u", e))
}
