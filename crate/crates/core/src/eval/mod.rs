//! Paired evaluation of trained checkpoints on held-out scenes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graspnet::{constant_mask, load_checkpoint, CheckpointError, GraspNetError, NetworkParams, Task};
use crate::policy::{servo_episode, PolicyConfig};
use crate::simenv::{
    classify_outcome, mix_seed, render_mask, Domain, EnvConfig, ObjectPool, OutcomeClass, RealProxyStrengths,
    RenderConfig, SimError, Simulator,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error("checkpoint for method `{method}` not found at {path}")]
    MissingCheckpoint { method: String, path: PathBuf },
    #[error("checkpoint for method `{method}`: {source}")]
    Checkpoint {
        method: String,
        #[source]
        source: CheckpointError,
    },
    #[error("checkpoint expects {expected:?} images, experiment renders {found:?}")]
    ImageExtent {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error(transparent)]
    Net(#[from] GraspNetError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub seed: u64,
    pub target_object_id: u32,
    pub grasped_object_id: Option<u32>,
    pub class: OutcomeClass,
    /// Fingerprint of the trial's initial scene.
    pub scene_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub trials: usize,
    pub instance_successes: usize,
    pub wrong_object_grasps: usize,
    pub failed_grasps: usize,
    pub instance_success_rate: f64,
    pub outcomes: Vec<TrialOutcome>,
}

impl EvalReport {
    /// Aggregates per-trial outcomes; the result does not depend on their order.
    pub fn from_outcomes(method: impl Into<String>, outcomes: Vec<TrialOutcome>) -> Self {
        let count = |c: OutcomeClass| outcomes.iter().filter(|o| o.class == c).count();
        let (s, w, f) = (
            count(OutcomeClass::InstanceSuccess),
            count(OutcomeClass::WrongObject),
            count(OutcomeClass::Failed),
        );
        let trials = outcomes.len();
        Self {
            method: method.into(),
            trials,
            instance_successes: s,
            wrong_object_grasps: w,
            failed_grasps: f,
            instance_success_rate: if trials == 0 { 0.0 } else { s as f64 / trials as f64 },
            outcomes,
        }
    }

    /// Aggregate counts without per-trial detail.
    pub fn from_counts(method: impl Into<String>, successes: usize, wrong: usize, failed: usize) -> Self {
        let trials = successes + wrong + failed;
        Self {
            method: method.into(),
            trials,
            instance_successes: successes,
            wrong_object_grasps: wrong,
            failed_grasps: failed,
            instance_success_rate: if trials == 0 {
                0.0
            } else {
                successes as f64 / trials as f64
            },
            outcomes: Vec::new(),
        }
    }

    /// Fraction of trials that grasped any object at all.
    pub fn any_object_rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            (self.instance_successes + self.wrong_object_grasps) as f64 / self.trials as f64
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.instance_successes + self.wrong_object_grasps + self.failed_grasps == self.trials
            && (self.outcomes.is_empty() || self.outcomes.len() == self.trials)
            && self.trials > 0
            && self.instance_success_rate == self.instance_successes as f64 / self.trials as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub checkpoint: PathBuf,
    pub n_trials: usize,
    pub objects_per_scene: usize,
    pub domain: Domain,
    pub pool: ObjectPool,
    /// Trial `i` uses scene seed `seed + i`.
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub texture_seed: u64,
    pub real_proxy: RealProxyStrengths,
    pub env: EnvConfig,
    pub policy: PolicyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::new(),
            n_trials: 200,
            objects_per_scene: 5,
            domain: Domain::RealProxy,
            pool: ObjectPool::Eval,
            seed: 0,
            height: 64,
            width: 64,
            texture_seed: 0,
            real_proxy: RealProxyStrengths::default(),
            env: EnvConfig::default(),
            policy: PolicyConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(EvalError::Config("n_trials must be positive".into()));
        }
        self.policy.validate().map_err(|e| EvalError::Config(e.to_string()))?;
        self.render_config().validate()?;
        Ok(())
    }

    pub fn render_config(&self) -> RenderConfig {
        RenderConfig::for_domain_with(
            self.domain,
            self.height,
            self.width,
            self.texture_seed,
            &self.real_proxy,
        )
    }

    pub fn trial_seeds(&self) -> Vec<u64> {
        (0..self.n_trials as u64).map(|i| self.seed.wrapping_add(i)).collect()
    }
}

const TARGET_TAG: u64 = 0x54_4152;

/// One trial: a seeded scene, a uniformly drawn target, and a servo episode.
/// `Task::Indiscriminate` servos with the constant mask and is scored
/// against the target all the same.
fn run_trial(
    net: &NetworkParams,
    task: Task,
    cfg: &ExperimentConfig,
    sim: &Simulator,
    seed: u64,
) -> Result<TrialOutcome> {
    let scene = sim.spawn_scene(seed, cfg.objects_per_scene, cfg.pool)?;
    let ids = scene.object_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, TARGET_TAG]));
    let target = ids[rng.gen_range(0..ids.len())];
    let render = cfg.render_config();
    let mask = match task {
        Task::Instance => render_mask(&scene, target, &sim.env, &render)?.mask,
        Task::Indiscriminate => constant_mask(cfg.height, cfg.width),
    };
    let (_, outcome) = servo_episode(net, sim, &scene, &mask, Some(target), task, &render, &cfg.policy, seed)?;
    Ok(TrialOutcome {
        seed,
        target_object_id: target,
        grasped_object_id: outcome.grasped_object_id,
        class: classify_outcome(outcome, target),
        scene_hash: scene.fingerprint(),
    })
}

/// Evaluates an in-memory network.
pub fn evaluate_network(method: &str, net: &NetworkParams, task: Task, cfg: &ExperimentConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let expected = (net.arch.image_height, net.arch.image_width);
    if expected != (cfg.height, cfg.width) {
        return Err(EvalError::ImageExtent {
            expected,
            found: (cfg.height, cfg.width),
        });
    }
    let sim = Simulator::new(cfg.env.clone());
    let outcomes = cfg
        .trial_seeds()
        .into_iter()
        .map(|s| run_trial(net, task, cfg, &sim, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_outcomes(method, outcomes))
}

fn load(method: &str, path: &Path) -> Result<NetworkParams> {
    if !path.is_file() {
        return Err(EvalError::MissingCheckpoint {
            method: method.into(),
            path: path.to_path_buf(),
        });
    }
    load_checkpoint(path)
        .map(|c| c.net)
        .map_err(|source| EvalError::Checkpoint {
            method: method.into(),
            source,
        })
}

/// Evaluates `cfg.checkpoint`, servoing with `task`'s head.
pub fn run_eval(method: &str, task: Task, cfg: &ExperimentConfig) -> Result<EvalReport> {
    let net = load(method, &cfg.checkpoint)?;
    evaluate_network(method, &net, task, cfg)
}

/// A method in the comparison matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixEntry {
    pub method: String,
    pub checkpoint: PathBuf,
    pub task: Task,
}

/// Evaluates every entry on the same scene seeds. Every checkpoint is
/// checked before any trial runs.
pub fn run_matrix(entries: &[MatrixEntry], cfg: &ExperimentConfig) -> Result<Vec<EvalReport>> {
    cfg.validate()?;
    let nets = entries
        .iter()
        .map(|e| load(&e.method, &e.checkpoint))
        .collect::<Result<Vec<_>>>()?;
    entries
        .iter()
        .zip(&nets)
        .map(|(e, net)| evaluate_network(&e.method, net, e.task, cfg))
        .collect()
}

pub const REPORT_HEADER: &str = "method,trials,instance_success,wrong_object,failed,rate";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format `{other}` (expected csv|json)")),
        }
    }
}

/// Rate is printed with three decimals.
pub fn report_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.3}",
            r.method, r.trials, r.instance_successes, r.wrong_object_grasps, r.failed_grasps, r.instance_success_rate
        );
    }
    s
}

pub fn report_json(reports: &[EvalReport]) -> Result<String> {
    let mut s = serde_json::to_string_pretty(reports)?;
    s.push('\n');
    Ok(s)
}

pub fn parse_report_json(text: &str) -> Result<Vec<EvalReport>> {
    Ok(serde_json::from_str(text)?)
}

pub fn export_metrics(reports: &[EvalReport], path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => report_csv(reports),
        ReportFormat::Json => report_json(reports)?,
    };
    std::fs::write(path, text)?;
    Ok(())
}
