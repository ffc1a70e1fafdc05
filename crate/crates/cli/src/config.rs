//! `key = value` run configuration.

use std::collections::BTreeSet;
use std::path::Path;

use segcrf::guided::GuidedFilterConfig;
use segcrf::training::{ModelConfig, TrainConfig};
use segcrf::{Error, Result};

pub const KEYS: [&str; 14] = [
    "radius",
    "epsilon",
    "subsample",
    "lambda",
    "iters",
    "context.k",
    "net.k1",
    "net.k2",
    "net.channels",
    "train.lr",
    "train.decay",
    "train.momentum",
    "train.epochs",
    "seed",
];

/// Subsampling factor `--fast` uses unless `subsample` is set.
pub const FAST_SUBSAMPLE: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub radius: usize,
    pub epsilon: f64,
    pub subsample: usize,
    pub lambda: f64,
    pub iters: usize,
    pub context_k: usize,
    pub net_k1: usize,
    pub net_k2: usize,
    pub net_channels: usize,
    pub train: TrainConfig,
    /// Keys given explicitly, in the file or as overrides.
    explicit: BTreeSet<&'static str>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let filter = GuidedFilterConfig::default();
        let model = ModelConfig::default();
        Self {
            radius: filter.radius,
            epsilon: filter.epsilon,
            subsample: filter.subsample,
            lambda: model.lambda,
            iters: model.guidance_iters,
            context_k: model.context_iters,
            net_k1: model.k1,
            net_k2: model.k2,
            net_channels: model.net_channels,
            train: TrainConfig::default(),
            explicit: BTreeSet::new(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("{key}: cannot parse {value:?}")))
}

fn at_least(key: &str, v: usize, min: usize) -> Result<usize> {
    if v < min {
        return Err(Error::InvalidArgument(format!("{key} must be >= {min}, got {v}")));
    }
    Ok(v)
}

fn odd(key: &str, v: usize) -> Result<usize> {
    if v % 2 == 0 {
        return Err(Error::InvalidArgument(format!("{key} must be odd, got {v}")));
    }
    Ok(v)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::InvalidArgument(format!("line {}: {}", i + 1, strip(&e))))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text)
    }

    /// Sets one key, validating the value. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let k = *KEYS
            .iter()
            .find(|&&k| k == key)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown config key {key:?}")))?;
        match k {
            "radius" => self.radius = at_least(k, parse(k, value)?, 1)?,
            "epsilon" => {
                let v: f64 = parse(k, value)?;
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {v}")));
                }
                self.epsilon = v;
            }
            "subsample" => self.subsample = at_least(k, parse(k, value)?, 1)?,
            "lambda" => {
                let v: f64 = parse(k, value)?;
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {v}")));
                }
                self.lambda = v;
            }
            "iters" => self.iters = at_least(k, parse(k, value)?, 1)?,
            "context.k" => self.context_k = at_least(k, parse(k, value)?, 1)?,
            "net.k1" => self.net_k1 = odd(k, parse(k, value)?)?,
            "net.k2" => self.net_k2 = odd(k, parse(k, value)?)?,
            "net.channels" => self.net_channels = at_least(k, parse(k, value)?, 1)?,
            "train.lr" => self.train.learning_rate = parse(k, value)?,
            "train.decay" => self.train.weight_decay = parse(k, value)?,
            "train.momentum" => self.train.momentum = parse(k, value)?,
            "train.epochs" => self.train.epochs = parse(k, value)?,
            "seed" => self.train.seed = parse(k, value)?,
            _ => unreachable!("key list covers every arm"),
        }
        if k.starts_with("train.") {
            self.train.validate()?;
        }
        self.explicit.insert(k);
        Ok(())
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("override {o:?} is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn filter(&self) -> GuidedFilterConfig {
        GuidedFilterConfig::new(self.radius, self.epsilon).with_subsample(self.subsample)
    }

    pub fn model(&self, labels: usize) -> ModelConfig {
        ModelConfig {
            labels,
            net_channels: self.net_channels,
            k1: self.net_k1,
            k2: self.net_k2,
            context_iters: self.context_k,
            filter: self.filter(),
            lambda: self.lambda,
            guidance_iters: self.iters,
            learn_lambda: false,
        }
    }
}

fn strip(e: &Error) -> String {
    match e {
        Error::InvalidArgument(m) => m.clone(),
        other => other.to_string(),
    }
}
