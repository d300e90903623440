//! Grasp episodes, hindsight relabeling and the on-disk dataset format.
//!
//! Indiscriminate episodes are collected in either domain. Successful
//! simulated ones are relabeled after the fact into instance episodes: the
//! grasped object's mask makes a positive, and the mask of one other object,
//! drawn uniformly, makes a negative. Real-proxy data never becomes instance
//! data.

mod format;

pub use format::{
    read_dataset, read_dataset_bytes, write_dataset, write_dataset_bytes, DATASET_MAGIC, DATASET_VERSION,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::action::ActionCommand;
use crate::graspnet::{constant_mask, NetworkParams, Task};
use crate::policy::{random_episode, servo_episode, PolicyConfig};
use crate::simenv::{
    mix_seed, render_mask, Domain, EnvConfig, Image, Mask, ObjectPool, RealProxyStrengths, RenderConfig, SimError,
    SimScene, Simulator, MAX_OBJECTS,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("not a dataset file (bad magic)")]
    BadMagic,
    #[error("dataset version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("dataset truncated at byte {0}")]
    Truncated(usize),
    #[error("corrupt dataset: {0}")]
    Corrupt(String),
    #[error("invalid episode: {0}")]
    InvalidEpisode(String),
    #[error("relabeling needs a simulated indiscriminate episode, got {domain:?}/{task:?}")]
    RelabelPrecondition { domain: Domain, task: Task },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// One grasp attempt. `images[t]` is the view before action `t`; `images[0]`
/// is the initial image `I₀`.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub domain: Domain,
    pub task: Task,
    pub seed: u64,
    pub n_objects: usize,
    pub pool: ObjectPool,
    pub images: Vec<Image>,
    /// `actions[t]`: displacement from the pose at step `t` to the pose where
    /// the gripper closed.
    pub actions: Vec<ActionCommand>,
    /// All ones for indiscriminate episodes.
    pub target_mask: Mask,
    /// The object `target_mask` was rendered from (instance episodes only).
    pub target_object_id: Option<u32>,
    pub grasped_object_id: Option<u32>,
    pub label: bool,
}

impl Episode {
    pub fn initial_image(&self) -> &Image {
        &self.images[0]
    }

    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DataError::InvalidEpisode(m));
        if self.images.is_empty() || self.images.len() != self.actions.len() {
            return bad(format!(
                "{} images vs {} actions",
                self.images.len(),
                self.actions.len()
            ));
        }
        if !(1..=MAX_OBJECTS).contains(&self.n_objects) {
            return bad(format!("object count {}", self.n_objects));
        }
        let (h, w) = (self.images[0].height, self.images[0].width);
        if self
            .images
            .iter()
            .any(|i| (i.height, i.width) != (h, w) || i.data.len() != h * w * 3)
            || (self.target_mask.height, self.target_mask.width) != (h, w)
            || self.target_mask.data.len() != h * w
        {
            return bad("image and mask extents disagree".into());
        }
        if !self.target_mask.is_binary() {
            return bad("mask values outside {0, 1}".into());
        }
        if let Some(a) = self.actions.iter().find(|a| !a.is_valid()) {
            return bad(format!("invalid action {a:?}"));
        }
        match self.task {
            Task::Indiscriminate => {
                if !self.target_mask.is_constant_ones() || self.target_object_id.is_some() {
                    return bad("indiscriminate episodes carry the constant mask and no target".into());
                }
                if self.label != self.grasped_object_id.is_some() {
                    return bad("indiscriminate label must equal 'something was grasped'".into());
                }
            }
            Task::Instance => {
                let Some(target) = self.target_object_id else {
                    return bad("instance episode without a target object".into());
                };
                if self.label != (self.grasped_object_id == Some(target)) {
                    return bad("instance label must equal 'the target was grasped'".into());
                }
            }
        }
        Ok(())
    }

    /// The scene this episode started from.
    pub fn initial_scene(&self, sim: &Simulator) -> Result<SimScene> {
        Ok(sim.spawn_scene(self.seed, self.n_objects, self.pool)?)
    }
}

/// A homogeneous collection: every record shares the header's domain, task
/// and image extent.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub domain: Domain,
    pub task: Task,
    pub height: usize,
    pub width: usize,
    pub episodes: Vec<Episode>,
}

impl Dataset {
    pub fn new(domain: Domain, task: Task, height: usize, width: usize) -> Self {
        Self {
            domain,
            task,
            height,
            width,
            episodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn push(&mut self, episode: Episode) -> Result<()> {
        self.check(&episode)?;
        self.episodes.push(episode);
        Ok(())
    }

    fn check(&self, e: &Episode) -> Result<()> {
        if e.domain != self.domain || e.task != self.task {
            return Err(DataError::InvalidEpisode(format!(
                "{:?}/{:?} record in a {:?}/{:?} dataset",
                e.domain, e.task, self.domain, self.task
            )));
        }
        if (e.images[0].height, e.images[0].width) != (self.height, self.width) {
            return Err(DataError::InvalidEpisode(
                "image extent differs from the dataset header".into(),
            ));
        }
        e.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.episodes.iter().try_for_each(|e| self.check(e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelStats {
    pub count: usize,
    pub positives: usize,
    /// `None` for an empty dataset.
    pub positive_fraction: Option<f64>,
}

pub fn label_stats(dataset: &Dataset) -> LabelStats {
    let positives = dataset.episodes.iter().filter(|e| e.label).count();
    let count = dataset.len();
    LabelStats {
        count,
        positives,
        positive_fraction: (count > 0).then(|| positives as f64 / count as f64),
    }
}

/// Turns one simulated indiscriminate episode into instance episodes.
///
/// `scene` must be the episode's initial scene. Failures yield nothing; a
/// success yields the positive and, if the scene has other objects, one
/// negative. Images and actions are reused unchanged.
pub fn hindsight_relabel(episode: &Episode, scene: &SimScene, env: &EnvConfig) -> Result<Vec<Episode>> {
    if episode.task != Task::Indiscriminate || episode.domain != Domain::Sim {
        return Err(DataError::RelabelPrecondition {
            domain: episode.domain,
            task: episode.task,
        });
    }
    if scene.seed != episode.seed || scene.objects.len() != episode.n_objects || scene.gripper != env.start_pose() {
        return Err(DataError::InvalidEpisode(
            "scene is not this episode's initial scene".into(),
        ));
    }
    let Some(grasped) = episode.grasped_object_id else {
        return Ok(Vec::new());
    };
    let cfg = RenderConfig::sim(episode.images[0].height, episode.images[0].width);
    let instance = |target: u32| -> Result<Episode> {
        Ok(Episode {
            task: Task::Instance,
            target_mask: render_mask(scene, target, env, &cfg)?.mask,
            target_object_id: Some(target),
            label: target == grasped,
            ..episode.clone()
        })
    };
    let mut out = vec![instance(grasped)?];
    let others: Vec<u32> = scene.object_ids().into_iter().filter(|&id| id != grasped).collect();
    if !others.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[episode.seed, NEGATIVE_TAG]));
        out.push(instance(others[rng.gen_range(0..others.len())])?);
    }
    Ok(out)
}

const NEGATIVE_TAG: u64 = 0x4E45_47;
const OBJECT_COUNT_TAG: u64 = 0x4F42_4A;

/// Relabels every episode of a simulated indiscriminate dataset.
pub fn relabel_dataset(dataset: &Dataset, env: &EnvConfig) -> Result<Dataset> {
    let sim = Simulator::new(env.clone());
    let mut out = Dataset::new(Domain::Sim, Task::Instance, dataset.height, dataset.width);
    for e in &dataset.episodes {
        let scene = e.initial_scene(&sim)?;
        for r in hindsight_relabel(e, &scene, env)? {
            out.push(r)?;
        }
    }
    Ok(out)
}

/// Objects per collected scene: uniform in `1..=6`, fixed by the episode seed.
pub fn objects_for_seed(seed: u64) -> usize {
    1 + (mix_seed(&[seed, OBJECT_COUNT_TAG]) % MAX_OBJECTS as u64) as usize
}

/// Simulated scenes use the training object pool; the real-proxy cell sees
/// every object.
pub fn collection_pool(domain: Domain) -> ObjectPool {
    match domain {
        Domain::Sim => ObjectPool::Train,
        Domain::RealProxy => ObjectPool::All,
    }
}

/// How episodes choose actions during collection.
#[derive(Clone, Copy, Debug)]
pub enum CollectPolicy<'a> {
    Random,
    Cem(&'a NetworkParams),
    /// Random for the first half of the episodes, CEM for the rest.
    Mixed(&'a NetworkParams),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollectConfig {
    pub env: EnvConfig,
    pub height: usize,
    pub width: usize,
    /// Appearance seed of the real-proxy renderer.
    pub texture_seed: u64,
    pub real_proxy: RealProxyStrengths,
    pub policy: PolicyConfig,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            height: 64,
            width: 64,
            texture_seed: 0,
            real_proxy: RealProxyStrengths::default(),
            policy: PolicyConfig::default(),
        }
    }
}

impl CollectConfig {
    pub fn render_config(&self, domain: Domain) -> RenderConfig {
        RenderConfig::for_domain_with(domain, self.height, self.width, self.texture_seed, &self.real_proxy)
    }
}

/// Collects `n_episodes` indiscriminate episodes with seeds `seed0 + i`.
pub fn collect_indiscriminate(
    policy: CollectPolicy<'_>,
    n_episodes: usize,
    domain: Domain,
    seed0: u64,
    cfg: &CollectConfig,
) -> Result<Dataset> {
    if n_episodes == 0 {
        return Err(DataError::InvalidEpisode("n_episodes must be positive".into()));
    }
    let sim = Simulator::new(cfg.env.clone());
    let render = cfg.render_config(domain);
    let ones = constant_mask(cfg.height, cfg.width);
    let mut out = Dataset::new(domain, Task::Indiscriminate, cfg.height, cfg.width);
    for i in 0..n_episodes {
        let seed = seed0.wrapping_add(i as u64);
        let scene = sim.spawn_scene(seed, objects_for_seed(seed), collection_pool(domain))?;
        let net = match policy {
            CollectPolicy::Random => None,
            CollectPolicy::Cem(net) => Some(net),
            CollectPolicy::Mixed(net) => (i >= n_episodes / 2).then_some(net),
        };
        let episode = match net {
            None => random_episode(&sim, &scene, &render, seed, cfg.policy.max_steps).0,
            Some(net) => {
                let task = Task::Indiscriminate;
                servo_episode(net, &sim, &scene, &ones, None, task, &render, &cfg.policy, seed)
                    .map_err(|e| DataError::InvalidEpisode(e.to_string()))?
                    .0
            }
        };
        out.push(episode)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
