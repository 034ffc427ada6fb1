//! Run configuration, presets and the flat `key = value` config format.
//!
//! A config file holds one `key = value` pair per line; blank lines and lines
//! starting with `#` are ignored. Keys mirror the field names of
//! [`MashConfig`], [`NetConfig`] and [`SweepSpec`](super::SweepSpec), plus
//! the optimizer keys `base_lr`, `floor_lr` and `weight_decay`. Lists are
//! comma-separated.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::bsd::MashConfig;
use crate::error::{Error, Result};
use crate::net::{AdamConfig, NetConfig, Padding, DEFAULT_BASE_LR, DEFAULT_FLOOR_LR};

/// Problem scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preset {
    /// 128x128 crops, full network, 800 iterations.
    #[default]
    Desk,
    /// 64x64 crops, reduced network, 200 iterations.
    Ci,
}

impl Preset {
    pub fn crop_size(self) -> usize {
        match self {
            Preset::Desk => 128,
            Preset::Ci => 64,
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "ci" => Ok(Preset::Ci),
            _ => Err(Error::InvalidConfig(format!(
                "unknown preset {s:?} (expected desk or ci)"
            ))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Ci => "ci",
        })
    }
}

/// Everything needed to reproduce one training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub mash: MashConfig,
    /// `in_channels` is replaced by the image's channel count at run time.
    pub net: NetConfig,
    pub base_lr: f64,
    pub floor_lr: f64,
    pub weight_decay: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::preset(Preset::Desk)
    }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let mash = match preset {
            Preset::Desk => MashConfig::default(),
            Preset::Ci => MashConfig {
                iterations: 200,
                shuffle_start: 100,
                warmup_iters: 200,
                ..MashConfig::default()
            },
        };
        RunConfig {
            mash,
            net: NetConfig::preset(3, preset == Preset::Ci),
            base_lr: DEFAULT_BASE_LR,
            floor_lr: DEFAULT_FLOOR_LR,
            weight_decay: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mash.validate()?;
        self.net.validate()?;
        if !(self.base_lr > 0.0 && self.floor_lr >= 0.0 && self.floor_lr <= self.base_lr) {
            return Err(Error::InvalidConfig(format!(
                "need 0 <= floor_lr <= base_lr and base_lr > 0, got {} / {}",
                self.floor_lr, self.base_lr
            )));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }

    pub fn adam(&self, total_steps: usize) -> AdamConfig {
        AdamConfig {
            base_lr: self.base_lr,
            floor_lr: self.floor_lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::new(total_steps)
        }
    }

    pub fn net_for(&self, channels: usize) -> NetConfig {
        NetConfig {
            in_channels: channels,
            ..self.net
        }
    }

    /// Sets one field by name. Returns `Ok(false)` for keys this type does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let m = &mut self.mash;
        match key {
            "tau_low" => m.tau_low = parse(key, value)?,
            "tau_medium" => m.tau_medium = parse(key, value)?,
            "tau_high" => m.tau_high = parse(key, value)?,
            "eps_low" => m.eps_low = parse(key, value)?,
            "eps_high" => m.eps_high = parse(key, value)?,
            "iterations" => m.iterations = parse(key, value)?,
            "shuffle_start" => m.shuffle_start = parse(key, value)?,
            "warmup_iters" => m.warmup_iters = parse(key, value)?,
            "ensemble_k" => m.ensemble_k = parse(key, value)?,
            "tile" => m.tile = parse(key, value)?,
            "lambda" => m.lambda = parse(key, value)?,
            "sigma_window" => m.sigma_window = parse(key, value)?,
            "seed" => m.seed = parse(key, value)?,
            "base_width" => self.net.base_width = parse(key, value)?,
            "depth" => self.net.depth = parse(key, value)?,
            "leaky_slope" => self.net.leaky_slope = parse(key, value)?,
            "reduced" => {
                let reduced: bool = parse(key, value)?;
                let fresh = NetConfig::preset(self.net.in_channels, reduced);
                self.net = NetConfig {
                    padding: self.net.padding,
                    leaky_slope: self.net.leaky_slope,
                    ..fresh
                };
            }
            "padding" => {
                self.net.padding = match value {
                    "zero" => Padding::Zero,
                    "reflect" => Padding::Reflect,
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "padding must be zero or reflect, got {value:?}"
                        )))
                    }
                }
            }
            "base_lr" => self.base_lr = parse(key, value)?,
            "floor_lr" => self.floor_lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Flat snapshot in the config-file format.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let m = &self.mash;
        vec![
            ("tau_low", m.tau_low.to_string()),
            ("tau_medium", m.tau_medium.to_string()),
            ("tau_high", m.tau_high.to_string()),
            ("eps_low", m.eps_low.to_string()),
            ("eps_high", m.eps_high.to_string()),
            ("iterations", m.iterations.to_string()),
            ("shuffle_start", m.shuffle_start.to_string()),
            ("warmup_iters", m.warmup_iters.to_string()),
            ("ensemble_k", m.ensemble_k.to_string()),
            ("tile", m.tile.to_string()),
            ("lambda", m.lambda.to_string()),
            ("sigma_window", m.sigma_window.to_string()),
            ("seed", m.seed.to_string()),
            ("reduced", self.net.reduced.to_string()),
            ("base_width", self.net.base_width.to_string()),
            ("depth", self.net.depth.to_string()),
            ("leaky_slope", self.net.leaky_slope.to_string()),
            (
                "padding",
                match self.net.padding {
                    Padding::Zero => "zero",
                    Padding::Reflect => "reflect",
                }
                .to_string(),
            ),
            ("base_lr", self.base_lr.to_string()),
            ("floor_lr", self.floor_lr.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
        ]
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.to_pairs() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

pub(crate) fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value {value:?} for {key}")))
}

pub(crate) fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| parse(key, v))
        .collect()
}

/// Parsed config file: ordered `key -> value` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub entries: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::InvalidConfig(format!("line {}: empty key", n + 1)));
            }
            if entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::InvalidConfig(format!("line {}: duplicate key {k}", n + 1)));
            }
        }
        Ok(Settings { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Settings::parse(&text)
    }

    pub fn insert(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    /// Applies every entry through `set`; unknown keys are an error.
    /// `reduced` goes first since it resets the network shape.
    pub fn apply(&self, mut set: impl FnMut(&str, &str) -> Result<bool>) -> Result<()> {
        let ordered = self
            .entries
            .iter()
            .filter(|(k, _)| *k == "reduced")
            .chain(self.entries.iter().filter(|(k, _)| *k != "reduced"));
        for (k, v) in ordered {
            if !set(k, v)? {
                return Err(Error::InvalidConfig(format!("unknown key {k:?}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let ci = RunConfig::preset(Preset::Ci);
        assert!(ci.net.reduced);
        assert_eq!(
            (ci.mash.iterations, ci.mash.warmup_iters, ci.mash.shuffle_start),
            (200, 200, 100)
        );
        let desk = RunConfig::preset(Preset::Desk);
        assert_eq!(desk.net.base_width, 48);
        assert_eq!((desk.mash.iterations, desk.mash.shuffle_start), (800, 400));
        assert!(ci.validate().is_ok() && desk.validate().is_ok());
        assert_eq!("ci".parse::<Preset>().unwrap(), Preset::Ci);
        assert!("huge".parse::<Preset>().is_err());
    }

    #[test]
    fn snapshot_round_trips() {
        let mut cfg = RunConfig::preset(Preset::Ci);
        cfg.mash.seed = 99;
        cfg.mash.lambda = 3.5;
        cfg.net.padding = Padding::Reflect;
        cfg.base_lr = 3e-4;
        cfg.net.base_width = 24;
        let settings = Settings::parse(&cfg.to_string()).unwrap();
        let mut back = RunConfig::preset(Preset::Desk);
        settings.apply(|k, v| back.set(k, v)).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn parse_errors() {
        assert!(Settings::parse("no equals sign").is_err());
        assert!(Settings::parse("a = 1\na = 2").is_err());
        let s = Settings::parse("# comment\n\nbogus = 1").unwrap();
        let mut cfg = RunConfig::default();
        assert!(s.apply(|k, v| cfg.set(k, v)).is_err());
        assert!(cfg.set("tau_low", "abc").is_err());
        assert!(cfg.set("padding", "wrap").is_err());
    }

    #[test]
    fn lists() {
        assert_eq!(parse_list::<f64>("taus", "0.1, 0.2,0.3").unwrap(), vec![0.1, 0.2, 0.3]);
        assert!(parse_list::<f64>("taus", "0.1,x").is_err());
    }
}
