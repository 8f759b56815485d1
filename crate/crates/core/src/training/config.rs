use std::collections::BTreeMap;
use std::fmt::Write;

use crate::error::{Error, Result};

/// Every knob of a training run. Config files are flat `key = value` text
/// with `#` comments; keys are the field names below.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub num_pooling_layers: usize,
    /// Propagation steps.
    pub k: usize,
    /// Teleport probability.
    pub alpha: f64,
    /// Epochs per phase per EM round.
    pub epochs: usize,
    pub hidden: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Weight of the prediction-correction term.
    pub gamma: f64,
    /// Edge-score survival threshold.
    pub s_thre: f64,
    pub em_rounds_max: usize,
    pub em_tolerance: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl TrainingConfig {
    /// Full-scale profile: 100 epochs per phase, up to 10 EM rounds.
    pub fn paper() -> Self {
        TrainingConfig {
            batch_size: 32,
            num_pooling_layers: 14,
            k: 10,
            alpha: 0.3,
            epochs: 100,
            hidden: 200,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            gamma: 0.2,
            s_thre: 0.5,
            em_rounds_max: 10,
            em_tolerance: 1e-3,
            seed: 0,
        }
    }

    /// Laptop profile: 20 epochs per phase, up to 5 EM rounds.
    pub fn desk() -> Self {
        TrainingConfig {
            epochs: 20,
            em_rounds_max: 5,
            ..Self::paper()
        }
    }

    pub fn profile(name: &str) -> Option<Self> {
        match name {
            "paper" => Some(Self::paper()),
            "desk" => Some(Self::desk()),
            _ => None,
        }
    }

    pub const KEYS: [&'static str; 15] = [
        "batch_size",
        "num_pooling_layers",
        "k",
        "alpha",
        "epochs",
        "hidden",
        "lr",
        "beta1",
        "beta2",
        "adam_eps",
        "gamma",
        "s_thre",
        "em_rounds_max",
        "em_tolerance",
        "seed",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
        }
        match key {
            "batch_size" => self.batch_size = num(key, value)?,
            "num_pooling_layers" => self.num_pooling_layers = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "adam_eps" => self.adam_eps = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "s_thre" => self.s_thre = num(key, value)?,
            "em_rounds_max" => self.em_rounds_max = num(key, value)?,
            "em_tolerance" => self.em_tolerance = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "batch_size" => self.batch_size.to_string(),
            "num_pooling_layers" => self.num_pooling_layers.to_string(),
            "k" => self.k.to_string(),
            "alpha" => self.alpha.to_string(),
            "epochs" => self.epochs.to_string(),
            "hidden" => self.hidden.to_string(),
            "lr" => self.lr.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "adam_eps" => self.adam_eps.to_string(),
            "gamma" => self.gamma.to_string(),
            "s_thre" => self.s_thre.to_string(),
            "em_rounds_max" => self.em_rounds_max.to_string(),
            "em_tolerance" => self.em_tolerance.to_string(),
            "seed" => self.seed.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        self.validate()
    }

    /// Parses a config file body on top of the full-profile defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::paper();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        Self::KEYS
            .iter()
            .map(|k| (k.to_string(), self.get(k).expect("known key")))
            .collect()
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Self::paper();
        for (k, v) in map {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in Self::KEYS {
            writeln!(out, "{k} = {}", self.get(k).expect("known key")).expect("string write");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let positive_counts = [
            ("batch_size", self.batch_size),
            ("k", self.k),
            ("epochs", self.epochs),
            ("hidden", self.hidden),
            ("em_rounds_max", self.em_rounds_max),
        ];
        for (name, v) in positive_counts {
            if v == 0 {
                return Err(Error::Config(format!("`{name}` must be positive")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("`alpha` = {} outside (0, 1]", self.alpha)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("`gamma` = {} must be finite and >= 0", self.gamma)));
        }
        if !(self.s_thre > 0.0 && self.s_thre < 1.0) {
            return Err(Error::Config(format!("`s_thre` = {} outside (0, 1)", self.s_thre)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("`lr` = {} must be finite and >= 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("Adam needs beta1, beta2 in [0, 1) and adam_eps > 0".into()));
        }
        if !(self.em_tolerance > 0.0) {
            return Err(Error::Config(format!("`em_tolerance` = {} must be positive", self.em_tolerance)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = TrainingConfig::desk();
        cfg.gamma = 0.15;
        cfg.em_tolerance = f64::INFINITY;
        assert_eq!(TrainingConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(TrainingConfig::from_map(&cfg.to_map()).unwrap(), cfg);
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = TrainingConfig::parse("# desk profile\n\nepochs = 20 # per phase\nem_rounds_max=5\n").unwrap();
        assert_eq!(cfg, TrainingConfig::desk());
    }

    #[test]
    fn bad_input_rejected() {
        assert!(TrainingConfig::parse("nope = 1").is_err());
        assert!(TrainingConfig::parse("alpha = 0").is_err());
        assert!(TrainingConfig::parse("gamma = -0.1").is_err());
        assert!(TrainingConfig::parse("epochs").is_err());
        assert!(TrainingConfig::parse("k = ten").is_err());
    }
}
