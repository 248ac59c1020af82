use std::fmt;
use std::str::FromStr;

use crate::attention::{AttentionConfig, FeatureMode};
use crate::error::{invalid, Error, Result};

/// A power-of-two rescale factor stored as its base-2 exponent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Factor(pub i32);

impl Factor {
    pub fn log2(self) -> i32 {
        self.0
    }

    pub fn value(self) -> f64 {
        2f64.powi(self.0)
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 >= 0 {
            write!(f, "{}", 1u64 << self.0)
        } else {
            write!(f, "1/{}", 1u64 << (-self.0))
        }
    }
}

fn pow2_exponent(v: f64) -> Option<i32> {
    if !(v > 0.0) || !v.is_finite() {
        return None;
    }
    let k = v.log2().round() as i32;
    ((2f64.powi(k) - v).abs() <= 1e-12 * v && k.abs() <= 16).then_some(k)
}

impl FromStr for Factor {
    type Err = Error;

    /// Accepts `4`, `1/2` or `0.5` style factors.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let value = match s.split_once('/') {
            Some((n, d)) => {
                let n: f64 = n
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad factor {s:?}")))?;
                let d: f64 = d
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad factor {s:?}")))?;
                n / d
            }
            None => s
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad factor {s:?}")))?,
        };
        match pow2_exponent(value) {
            Some(k) => Ok(Factor(k)),
            None => invalid(format!("factor {s:?} is not a power of two")),
        }
    }
}

/// Parses a comma-separated schedule such as `2,1/2,2,1/2,4`.
pub fn parse_schedule(s: &str) -> Result<Vec<Factor>> {
    s.split(',').map(str::parse).collect()
}

pub fn format_schedule(f: &[Factor]) -> String {
    f.iter()
        .map(Factor::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// The default alternating schedule `[2, 1/2, 2, 1/2, s]`.
pub fn default_schedule(scale: usize) -> Vec<Factor> {
    let s = Factor(scale.trailing_zeros() as i32);
    vec![Factor(1), Factor(-1), Factor(1), Factor(-1), s]
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Spectral bands of the input and output cubes.
    pub bands: usize,
    /// Feature width inside the network.
    pub channels: usize,
    pub scale: usize,
    pub schedule: Vec<Factor>,
    pub attention: AttentionConfig,
    /// Centre and normalize tokens (times `√C`) before the Q/K/V projections.
    pub pre_norm: bool,
}

impl ModelConfig {
    /// Desk-scale configuration with `C = 32`.
    pub fn desk(bands: usize, scale: usize) -> Self {
        Self {
            bands,
            channels: 32,
            scale,
            schedule: default_schedule(scale),
            attention: AttentionConfig::default(),
            pre_norm: false,
        }
    }

    /// Full-width configuration with `C = 256`.
    pub fn full(bands: usize, scale: usize) -> Self {
        Self {
            channels: 256,
            ..Self::desk(bands, scale)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands == 0 {
            return invalid("bands must be at least 1");
        }
        if self.channels < 2 {
            return invalid(format!(
                "channels must be at least 2, got {}",
                self.channels
            ));
        }
        if ![2, 4, 8].contains(&self.scale) {
            return invalid(format!("scale must be 2, 4 or 8, got {}", self.scale));
        }
        if self.schedule.is_empty() {
            return invalid("schedule needs at least one stage");
        }
        let total: i32 = self.schedule.iter().map(|f| f.0).sum();
        if 2f64.powi(total) != self.scale as f64 {
            return invalid(format!(
                "schedule {} multiplies to {}, expected scale {}",
                format_schedule(&self.schedule),
                Factor(total),
                self.scale
            ));
        }
        self.attention.head_width(self.channels)?;
        Ok(())
    }

    /// Canonical `key=value` lines in a fixed order.
    pub fn to_kv(&self) -> String {
        let a = &self.attention;
        format!(
            "bands={}\nchannels={}\nscale={}\nstages={}\nheads={}\norder={}\nmode={}\nsigma={:?}\nnormalize={}\nepsilon={:?}\npre_norm={}\n",
            self.bands,
            self.channels,
            self.scale,
            format_schedule(&self.schedule),
            a.heads,
            a.order,
            a.mode.as_str(),
            a.sigma,
            a.normalize,
            a.epsilon,
            self.pre_norm
        )
    }

    /// Inverse of [`ModelConfig::to_kv`]; every key is required.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::desk(1, 2);
        let mut seen = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("config line {line:?} lacks '='")))?;
            cfg.set(k.trim(), v.trim())?;
            seen.push(k.trim().to_string());
        }
        for key in CONFIG_KEYS {
            if !seen.iter().any(|s| s == key) {
                return invalid(format!("config lacks key {key:?}"));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<V: FromStr>(key: &str, v: &str) -> Result<V> {
            v.parse()
                .map_err(|_| Error::InvalidArgument(format!("bad value {v:?} for {key}")))
        }
        match key {
            "bands" => self.bands = num(key, value)?,
            "channels" => self.channels = num(key, value)?,
            "scale" => self.scale = num(key, value)?,
            "stages" => self.schedule = parse_schedule(value)?,
            "heads" => self.attention.heads = num(key, value)?,
            "order" => self.attention.order = num(key, value)?,
            "mode" => self.attention.mode = value.parse::<FeatureMode>()?,
            "sigma" => self.attention.sigma = num(key, value)?,
            "normalize" => self.attention.normalize = num(key, value)?,
            "epsilon" => self.attention.epsilon = num(key, value)?,
            "pre_norm" => self.pre_norm = num(key, value)?,
            other => return invalid(format!("unknown model key {other:?}")),
        }
        Ok(())
    }
}

pub const CONFIG_KEYS: [&str; 11] = [
    "bands",
    "channels",
    "scale",
    "stages",
    "heads",
    "order",
    "mode",
    "sigma",
    "normalize",
    "epsilon",
    "pre_norm",
];
