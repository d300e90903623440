//! Action selection: uniform random exploration and cross-entropy-method
//! servoing over the 5-dimensional action space.
//!
//! An action is read as the displacement from the current gripper pose to
//! the pose at which the gripper will close. The servo loop executes the
//! chosen displacement one bounded step at a time, re-planning from each new
//! view, and closes early once the best score clears the threshold and the
//! remaining displacement fits in the step just taken.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{wrap_angle, ActionCommand, ACTION_DIM};
use crate::datapipe::Episode;
use crate::graspnet::{ActionScorer, GraspNetError, NetworkParams, Task};
use crate::simenv::{mix_seed, render_rgb, GraspOutcome, GripperPose, Image, Mask, RenderConfig, SimScene, Simulator};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("stddev must be finite and positive, got {0:?}")]
    Stddev([f64; ACTION_DIM]),
    #[error("invalid policy configuration: {0}")]
    Config(String),
}

/// Diagonal Gaussian over raw 5-vectors. Samples are projected so their
/// rotation pair lies on the unit circle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub mean: [f64; ACTION_DIM],
    pub stddev: [f64; ACTION_DIM],
}

impl ActionDistribution {
    pub fn new(mean: [f64; ACTION_DIM], stddev: [f64; ACTION_DIM]) -> Result<Self, PolicyError> {
        if stddev.iter().any(|s| !(s.is_finite() && *s > 0.0)) || mean.iter().any(|m| !m.is_finite()) {
            return Err(PolicyError::Stddev(stddev));
        }
        Ok(Self { mean, stddev })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> ActionCommand {
        let mut v = [0.0; ACTION_DIM];
        for (i, x) in v.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(rng);
            *x = self.mean[i] + self.stddev[i] * z;
        }
        ActionCommand::from_array(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub cem_iterations: usize,
    pub samples_per_iteration: usize,
    pub elite_fraction: f64,
    pub grasp_threshold: f64,
    /// Episode horizon `T`: the gripper closes after at most this many steps.
    pub max_steps: usize,
    /// Per-coordinate extent of the action space searched by CEM; the
    /// initial distribution is centered at zero with half these as stddev.
    pub action_bounds: [f64; ACTION_DIM],
    pub stddev_floor: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            cem_iterations: 3,
            samples_per_iteration: 64,
            elite_fraction: 0.1,
            grasp_threshold: 0.7,
            max_steps: 4,
            action_bounds: [1.0, 1.0, 0.1, 1.0, 1.0],
            stddev_floor: 1e-3,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: &str| Err(PolicyError::Config(m.into()));
        if self.cem_iterations == 0 {
            return bad("cem_iterations must be at least 1");
        }
        if self.samples_per_iteration == 0 {
            return bad("samples_per_iteration must be at least 1");
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 1.0) {
            return bad("elite_fraction must lie in (0, 1]");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        if !(self.stddev_floor > 0.0) {
            return bad("stddev_floor must be positive");
        }
        ActionDistribution::new([0.0; ACTION_DIM], self.action_bounds.map(|b| b / 2.0))?;
        Ok(())
    }

    /// Zero mean, stddev half the action bounds. A zero rotation mean makes
    /// the projected yaw uniform.
    pub fn initial_distribution(&self) -> ActionDistribution {
        ActionDistribution {
            mean: [0.0; ACTION_DIM],
            stddev: self.action_bounds.map(|b| b / 2.0),
        }
    }

    pub fn elite_count(&self) -> usize {
        elite_count(self.samples_per_iteration, self.elite_fraction)
    }
}

/// Scores a batch of candidate actions; higher is better.
pub trait Scorer {
    fn score(&mut self, actions: &[ActionCommand]) -> Vec<f64>;
}

impl<F: FnMut(&ActionCommand) -> f64> Scorer for F {
    fn score(&mut self, actions: &[ActionCommand]) -> Vec<f64> {
        actions.iter().map(|a| self(a)).collect()
    }
}

impl Scorer for ActionScorer<'_> {
    fn score(&mut self, actions: &[ActionCommand]) -> Vec<f64> {
        ActionScorer::score(self, actions).expect("inputs validated when the scorer was built")
    }
}

/// `⌈fraction · n⌉`, at least one.
pub fn elite_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).ceil() as usize).clamp(1, n.max(1))
}

/// Indices of the `⌈fraction · n⌉` best scores, best first; ties keep the
/// earlier sample.
pub fn select_elites(scores: &[f64], fraction: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(elite_count(scores.len(), fraction));
    idx
}

/// Per-coordinate mean and (population) stddev of the elites, stddev floored.
pub fn refit(samples: &[ActionCommand], elites: &[usize], floor: f64) -> ActionDistribution {
    let k = elites.len() as f64;
    let mut mean = [0.0; ACTION_DIM];
    for &i in elites {
        for (m, v) in mean.iter_mut().zip(samples[i].to_array()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k);
    let mut var = [0.0; ACTION_DIM];
    for &i in elites {
        for ((s, v), m) in var.iter_mut().zip(samples[i].to_array()).zip(mean) {
            *s += (v - m) * (v - m);
        }
    }
    ActionDistribution {
        mean,
        stddev: var.map(|s| (s / k).sqrt().max(floor)),
    }
}

/// One CEM iteration, kept for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct CemIteration {
    pub distribution: ActionDistribution,
    pub samples: Vec<ActionCommand>,
    pub scores: Vec<f64>,
    pub elites: Vec<usize>,
    /// Best score seen up to and including this iteration.
    pub best_so_far: f64,
}

/// Cross-entropy method: returns the highest-scoring action seen across all
/// iterations and its score.
pub fn cem_select(
    scorer: &mut dyn Scorer,
    init: &ActionDistribution,
    cfg: &PolicyConfig,
    seed: u64,
) -> (ActionCommand, f64) {
    let (a, s, _) = cem_trace(scorer, init, cfg, seed);
    (a, s)
}

/// [`cem_select`] plus the per-iteration record.
pub fn cem_trace(
    scorer: &mut dyn Scorer,
    init: &ActionDistribution,
    cfg: &PolicyConfig,
    seed: u64,
) -> (ActionCommand, f64, Vec<CemIteration>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dist = init.clone();
    let mut best: Option<(ActionCommand, f64)> = None;
    let mut trace = Vec::with_capacity(cfg.cem_iterations);
    for _ in 0..cfg.cem_iterations {
        let samples: Vec<ActionCommand> = (0..cfg.samples_per_iteration).map(|_| dist.sample(&mut rng)).collect();
        let scores = scorer.score(&samples);
        assert_eq!(
            scores.len(),
            samples.len(),
            "scorer returned the wrong number of scores"
        );
        for (a, &s) in samples.iter().zip(&scores) {
            if best.map_or(true, |(_, b)| s > b) {
                best = Some((*a, s));
            }
        }
        let best_so_far = best.expect("at least one sample").1;
        let elites = select_elites(&scores, cfg.elite_fraction);
        let next = refit(&samples, &elites, cfg.stddev_floor);
        trace.push(CemIteration {
            distribution: dist,
            samples,
            scores,
            elites,
            best_so_far,
        });
        dist = next;
    }
    let (a, score) = best.expect("at least one iteration");
    (a, score, trace)
}

/// Uniform exploration: translation uniform within `step_bound`, yaw change
/// uniform in `(-π, π]`.
pub fn random_policy(seed: u64, step_index: usize, step_bound: [f64; 3]) -> ActionCommand {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, step_index as u64, RANDOM_TAG]));
    let t = step_bound.map(|b| if b > 0.0 { rng.gen_range(-b..=b) } else { 0.0 });
    let yaw = PI - rng.gen_range(0.0..2.0 * PI);
    ActionCommand::new(t[0], t[1], t[2], yaw)
}

const RANDOM_TAG: u64 = 0x52_414E;
const CEM_TAG: u64 = 0x43_454D;

/// What a rollout observed and how it ended.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub images: Vec<Image>,
    pub poses: Vec<GripperPose>,
    /// Pose where the gripper closed (before descending).
    pub final_pose: GripperPose,
    pub outcome: GraspOutcome,
}

impl Rollout {
    /// Displacements from each step's pose to the closing pose.
    pub fn relabeled_actions(&self) -> Vec<ActionCommand> {
        let f = self.final_pose;
        self.poses
            .iter()
            .map(|p| ActionCommand::new(f.x - p.x, f.y - p.y, f.z - p.z, wrap_angle(f.yaw - p.yaw)))
            .collect()
    }
}

fn close(sim: &Simulator, scene: &SimScene) -> GraspOutcome {
    sim.close_gripper(&sim.descend(scene))
        .expect("descended gripper is at grasp height")
}

/// Closed-loop servoing with a per-step scorer built from `(I₀, I_t, scene)`.
pub fn servo_with<'s, F>(
    sim: &Simulator,
    scene: &SimScene,
    render: &RenderConfig,
    cfg: &PolicyConfig,
    seed: u64,
    mut scorer_for: F,
) -> Rollout
where
    F: FnMut(&Image, &Image, &SimScene) -> Box<dyn Scorer + 's>,
{
    let init = cfg.initial_distribution();
    let i0 = render_rgb(scene, &sim.env, render);
    let mut images = Vec::with_capacity(cfg.max_steps);
    let mut poses = Vec::with_capacity(cfg.max_steps);
    let mut cur = scene.clone();
    for t in 0..cfg.max_steps {
        let it = if t == 0 {
            i0.clone()
        } else {
            render_rgb(&cur, &sim.env, render)
        };
        let mut scorer = scorer_for(&i0, &it, &cur);
        images.push(it);
        poses.push(cur.gripper);
        let (action, score) = cem_select(scorer.as_mut(), &init, cfg, mix_seed(&[seed, t as u64, CEM_TAG]));
        let target = sim.displace(&cur, &action);
        if score >= cfg.grasp_threshold && target.gripper.z <= sim.env.z_grasp {
            cur = target;
            break;
        }
        cur = sim.step(&cur, &action);
    }
    Rollout {
        images,
        poses,
        final_pose: cur.gripper,
        outcome: close(sim, &cur),
    }
}

fn episode_from(
    rollout: &Rollout,
    scene: &SimScene,
    render: &RenderConfig,
    target_mask: Mask,
    target_object_id: Option<u32>,
    seed: u64,
) -> Episode {
    let grasped = rollout.outcome.grasped_object_id;
    let (task, label) = match target_object_id {
        Some(t) => (Task::Instance, grasped == Some(t)),
        None => (Task::Indiscriminate, grasped.is_some()),
    };
    Episode {
        domain: render.domain,
        task,
        seed,
        n_objects: scene.objects.len(),
        pool: scene.pool,
        images: rollout.images.clone(),
        actions: rollout.relabeled_actions(),
        target_mask,
        target_object_id,
        grasped_object_id: grasped,
        label,
    }
}

/// Servo with the grasp network, scoring with `task`'s head and `target_mask`.
/// A `target_object_id` makes the record an instance episode; without one it
/// is indiscriminate.
#[allow(clippy::too_many_arguments)]
pub fn servo_episode(
    net: &NetworkParams,
    sim: &Simulator,
    scene: &SimScene,
    target_mask: &Mask,
    target_object_id: Option<u32>,
    task: Task,
    render: &RenderConfig,
    cfg: &PolicyConfig,
    seed: u64,
) -> Result<(Episode, GraspOutcome), GraspNetError> {
    // surface shape errors here rather than inside the loop
    ActionScorer::new(
        net,
        target_mask,
        &render_rgb(scene, &sim.env, render),
        &render_rgb(scene, &sim.env, render),
        task,
    )?;
    let rollout = servo_with(sim, scene, render, cfg, seed, |i0, it, _| {
        Box::new(ActionScorer::new(net, target_mask, i0, it, task).expect("validated above"))
    });
    let episode = episode_from(
        &rollout,
        scene,
        render,
        target_mask.clone(),
        target_object_id,
        scene.seed,
    );
    Ok((episode, rollout.outcome))
}

/// `steps` uniform random moves, then close. Recorded as an indiscriminate
/// episode.
pub fn random_rollout(sim: &Simulator, scene: &SimScene, render: &RenderConfig, seed: u64, steps: usize) -> Rollout {
    let mut images = Vec::with_capacity(steps);
    let mut poses = Vec::with_capacity(steps);
    let mut cur = scene.clone();
    for t in 0..steps {
        images.push(render_rgb(&cur, &sim.env, render));
        poses.push(cur.gripper);
        cur = sim.step(&cur, &random_policy(seed, t, sim.env.step_bound));
    }
    Rollout {
        images,
        poses,
        final_pose: cur.gripper,
        outcome: close(sim, &cur),
    }
}

/// A random-policy rollout recorded as an indiscriminate episode.
pub fn random_episode(
    sim: &Simulator,
    scene: &SimScene,
    render: &RenderConfig,
    seed: u64,
    steps: usize,
) -> (Episode, GraspOutcome) {
    let rollout = random_rollout(sim, scene, render, seed, steps);
    let ones = Mask::ones(render.height, render.width);
    (
        episode_from(&rollout, scene, render, ones, None, scene.seed),
        rollout.outcome,
    )
}
