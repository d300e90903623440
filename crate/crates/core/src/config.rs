//! Flat `key = value` experiment files.
//!
//! One setting per line; `#` starts a comment. Unknown and repeated keys are
//! errors. Keys not present keep their defaults.

use std::path::Path;

use thiserror::Error;

use crate::eval::ExperimentConfig;
use crate::graspnet::ArchConfig;
use crate::policy::PolicyConfig;
use crate::simenv::{Domain, RealProxyStrengths};
use crate::trainer::{LossWeights, TrainConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {message}")]
    Value { line: usize, key: String, message: String },
    #[error("cannot read config: {0}")]
    Io(String),
}

/// Everything a run needs beyond its input files.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentFile {
    pub train: TrainConfig,
    pub weights: LossWeights,
    /// Square image side for collection, training and evaluation.
    pub image_size: usize,
    pub policy: PolicyConfig,
    pub sim_episodes: usize,
    pub real_episodes: usize,
    pub sim_seed: u64,
    pub real_seed: u64,
    pub texture_seed: u64,
    pub real_proxy: RealProxyStrengths,
    pub n_trials: usize,
    pub objects_per_scene: usize,
    pub eval_domain: Domain,
    pub eval_seed: u64,
}

impl Default for ExperimentFile {
    fn default() -> Self {
        let eval = ExperimentConfig::default();
        Self {
            train: TrainConfig::default(),
            weights: LossWeights::default(),
            image_size: 64,
            policy: PolicyConfig::default(),
            sim_episodes: 2000,
            real_episodes: 2000,
            sim_seed: 0,
            real_seed: 1_000_000,
            texture_seed: eval.texture_seed,
            real_proxy: eval.real_proxy,
            n_trials: eval.n_trials,
            objects_per_scene: eval.objects_per_scene,
            eval_domain: eval.domain,
            eval_seed: 1_000_000_000,
        }
    }
}

pub const KEYS: &[&str] = &[
    "base_lr",
    "lr_decay",
    "decay_period",
    "momentum",
    "batch_per_domain",
    "adversarial_warmup",
    "total_iterations",
    "seed",
    "log_period",
    "checkpoint_period",
    "probe_per_domain",
    "alpha",
    "beta",
    "lambda",
    "image_size",
    "cem_iterations",
    "samples_per_iteration",
    "elite_fraction",
    "grasp_threshold",
    "max_steps",
    "sim_episodes",
    "real_episodes",
    "sim_seed",
    "real_seed",
    "texture_seed",
    "noise_std",
    "texture_strength",
    "lighting_gradient_strength",
    "color_jitter_strength",
    "camera_jitter",
    "n_trials",
    "objects_per_scene",
    "eval_domain",
    "eval_seed",
];

fn parse<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| ConfigError::Value {
        line,
        key: key.into(),
        message: e.to_string(),
    })
}

impl ExperimentFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen: Vec<&str> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((k, v)) = body.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("expected `key = value`, found `{body}`"),
                });
            };
            let (k, v) = (k.trim(), v.trim());
            let Some(&key) = KEYS.iter().find(|&&known| known == k) else {
                return Err(ConfigError::UnknownKey { line, key: k.into() });
            };
            if seen.contains(&key) {
                return Err(ConfigError::Duplicate { line, key: key.into() });
            }
            seen.push(key);
            cfg.set(line, key, v)?;
        }
        cfg.validate().map_err(|message| ConfigError::Value {
            line: 0,
            key: "(combined)".into(),
            message,
        })?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(&text)
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<(), ConfigError> {
        let t = &mut self.train;
        let p = &mut self.policy;
        match key {
            "base_lr" => t.base_lr = parse(line, key, v)?,
            "lr_decay" => t.lr_decay = parse(line, key, v)?,
            "decay_period" => t.decay_period = parse(line, key, v)?,
            "momentum" => t.momentum = parse(line, key, v)?,
            "batch_per_domain" => t.batch_per_domain = parse(line, key, v)?,
            "adversarial_warmup" => t.adversarial_warmup = parse(line, key, v)?,
            "total_iterations" => t.total_iterations = parse(line, key, v)?,
            "seed" => t.seed = parse(line, key, v)?,
            "log_period" => t.log_period = parse(line, key, v)?,
            "checkpoint_period" => t.checkpoint_period = parse(line, key, v)?,
            "probe_per_domain" => t.probe_per_domain = parse(line, key, v)?,
            "alpha" => self.weights.alpha = parse(line, key, v)?,
            "beta" => self.weights.beta = parse(line, key, v)?,
            "lambda" => self.weights.lambda = parse(line, key, v)?,
            "image_size" => self.image_size = parse(line, key, v)?,
            "cem_iterations" => p.cem_iterations = parse(line, key, v)?,
            "samples_per_iteration" => p.samples_per_iteration = parse(line, key, v)?,
            "elite_fraction" => p.elite_fraction = parse(line, key, v)?,
            "grasp_threshold" => p.grasp_threshold = parse(line, key, v)?,
            "max_steps" => p.max_steps = parse(line, key, v)?,
            "sim_episodes" => self.sim_episodes = parse(line, key, v)?,
            "real_episodes" => self.real_episodes = parse(line, key, v)?,
            "sim_seed" => self.sim_seed = parse(line, key, v)?,
            "real_seed" => self.real_seed = parse(line, key, v)?,
            "texture_seed" => self.texture_seed = parse(line, key, v)?,
            "noise_std" => self.real_proxy.noise_std = parse(line, key, v)?,
            "texture_strength" => self.real_proxy.texture_strength = parse(line, key, v)?,
            "lighting_gradient_strength" => self.real_proxy.lighting_gradient_strength = parse(line, key, v)?,
            "color_jitter_strength" => self.real_proxy.color_jitter_strength = parse(line, key, v)?,
            "camera_jitter" => self.real_proxy.camera_jitter = parse(line, key, v)?,
            "n_trials" => self.n_trials = parse(line, key, v)?,
            "objects_per_scene" => self.objects_per_scene = parse(line, key, v)?,
            "eval_domain" => self.eval_domain = parse(line, key, v)?,
            "eval_seed" => self.eval_seed = parse(line, key, v)?,
            _ => unreachable!("key list and match arms agree"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.train.validate().map_err(|e| e.to_string())?;
        self.weights.validate().map_err(|e| e.to_string())?;
        self.policy.validate().map_err(|e| e.to_string())?;
        self.arch().validate().map_err(|e| e.to_string())?;
        if self.n_trials == 0 || self.sim_episodes == 0 || self.real_episodes == 0 {
            return Err("n_trials, sim_episodes and real_episodes must be positive".into());
        }
        if !(1..=crate::simenv::MAX_OBJECTS).contains(&self.objects_per_scene) {
            return Err(format!(
                "objects_per_scene must lie in 1..={}",
                crate::simenv::MAX_OBJECTS
            ));
        }
        Ok(())
    }

    pub fn arch(&self) -> ArchConfig {
        ArchConfig::desk(self.image_size, self.image_size)
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            n_trials: self.n_trials,
            objects_per_scene: self.objects_per_scene,
            domain: self.eval_domain,
            seed: self.eval_seed,
            height: self.image_size,
            width: self.image_size,
            texture_seed: self.texture_seed,
            real_proxy: self.real_proxy,
            policy: self.policy.clone(),
            ..Default::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(
            ExperimentFile::parse("# nothing\n\n").unwrap(),
            ExperimentFile::default()
        );
    }

    #[test]
    fn values_override_defaults() {
        let c = ExperimentFile::parse(
            "total_iterations = 500\nadversarial_warmup = 100\nlambda=0 # off\neval_domain = sim\nimage_size = 32\n",
        )
        .unwrap();
        assert_eq!(c.train.total_iterations, 500);
        assert_eq!(c.weights.lambda, 0.0);
        assert_eq!(c.eval_domain, Domain::Sim);
        assert_eq!(c.arch().image_height, 32);
        assert_eq!(c.experiment().height, 32);
        assert_eq!(c.train.adversarial_warmup, 100);
        assert_eq!(c.train.lr_decay, TrainConfig::default().lr_decay);
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(
            ExperimentFile::parse("seed = 1\nlearning_rate = 3\n"),
            Err(ConfigError::UnknownKey {
                line: 2,
                key: "learning_rate".into()
            })
        );
        assert_eq!(
            ExperimentFile::parse("seed = 1\nseed = 2\n"),
            Err(ConfigError::Duplicate {
                line: 2,
                key: "seed".into()
            })
        );
        assert!(matches!(
            ExperimentFile::parse("seed 1"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            ExperimentFile::parse("seed = x"),
            Err(ConfigError::Value { line: 1, .. })
        ));
        assert!(matches!(
            ExperimentFile::parse("n_trials = 0"),
            Err(ConfigError::Value { .. })
        ));
        assert!(matches!(
            ExperimentFile::parse("eval_domain = mars"),
            Err(ConfigError::Value { .. })
        ));
    }

    #[test]
    fn every_key_is_settable() {
        let d = ExperimentFile::default();
        for k in KEYS {
            let v = match *k {
                "eval_domain" => "sim".to_string(),
                "total_iterations" => "20000".into(),
                "elite_fraction"
                | "grasp_threshold"
                | "noise_std"
                | "texture_strength"
                | "lighting_gradient_strength"
                | "color_jitter_strength"
                | "camera_jitter"
                | "base_lr"
                | "lr_decay"
                | "momentum"
                | "alpha"
                | "beta"
                | "lambda" => "0.5".into(),
                "image_size" => "32".into(),
                "objects_per_scene" => "3".into(),
                "adversarial_warmup" => "10".into(),
                _ => "7".into(),
            };
            let c = ExperimentFile::parse(&format!("{k} = {v}")).unwrap_or_else(|e| panic!("{k}: {e}"));
            assert!(c != d, "{k} had no effect");
        }
    }
}
