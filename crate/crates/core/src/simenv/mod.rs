//! Top-down tray-grasping simulator.
//!
//! The world is a square tray of flat procedural objects (disks, squares,
//! bars) seen by a camera that rides with the gripper. The gripper has a 3D
//! position and a yaw; a grasp succeeds on the nearest object whose center
//! lies within its grasp radius and, for bars, whose long axis is aligned
//! with the gripper yaw.
//!
//! Two visual domains are rendered from the same scene state: [`Domain::Sim`]
//! draws flat colors, [`Domain::RealProxy`] layers texture, a lighting
//! gradient, color jitter, pixel noise and a camera offset on top.

mod image;
mod render;

pub use image::{dequantize, quantize, Image, Mask};
pub use render::{render_mask, render_rgb, MaskRender, RealProxyStrengths, RenderConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use thiserror::Error;

use crate::action::{wrap_angle, ActionCommand};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("object count {0} outside [1, 6]")]
    ObjectCount(usize),
    #[error("could not place {n_objects} non-overlapping objects for seed {seed}")]
    Placement { seed: u64, n_objects: usize },
    #[error("object id {0} is not in the scene")]
    UnknownObject(u32),
    #[error("gripper at z = {z} is above the grasp height {z_grasp}")]
    GripperTooHigh { z: f64, z_grasp: f64 },
    #[error("invalid render configuration: {0}")]
    RenderConfig(String),
}

pub const MAX_OBJECTS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    Sim,
    RealProxy,
}

impl Domain {
    /// Domain-classifier target: 1 for the real-proxy domain, 0 for simulation.
    pub fn label(self) -> f64 {
        match self {
            Domain::Sim => 0.0,
            Domain::RealProxy => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Sim => "sim",
            Domain::RealProxy => "realproxy",
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sim" => Ok(Domain::Sim),
            "realproxy" => Ok(Domain::RealProxy),
            other => Err(format!("unknown domain `{other}` (expected sim|realproxy)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ShapeKind {
    Disk,
    Square,
    Bar,
}

/// Bars are this fraction as wide as they are long.
pub const BAR_ASPECT: f64 = 0.35;

/// Which color bins objects are drawn from. Evaluation scenes use hues that
/// never appear in the training pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectPool {
    Train,
    Eval,
    All,
}

const HUE_BINS: usize = 8;
const EVAL_HUE_BINS: [usize; 2] = [2, 6];

impl ObjectPool {
    fn hue_bins(self) -> Vec<usize> {
        (0..HUE_BINS)
            .filter(|b| match self {
                ObjectPool::Train => !EVAL_HUE_BINS.contains(b),
                ObjectPool::Eval => EVAL_HUE_BINS.contains(b),
                ObjectPool::All => true,
            })
            .collect()
    }

    pub fn code(self) -> u8 {
        match self {
            ObjectPool::Train => 0,
            ObjectPool::Eval => 1,
            ObjectPool::All => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(ObjectPool::Train),
            1 => Some(ObjectPool::Eval),
            2 => Some(ObjectPool::All),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u32,
    pub shape: ShapeKind,
    /// Half the side (square), radius (disk) or half length (bar), in tray units.
    pub half_extent: f64,
    pub color: [f64; 3],
    pub position: [f64; 2],
    pub orientation: f64,
    pub grasp_radius: f64,
}

impl SceneObject {
    /// Whether the world point `p` lies on the object's footprint.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let (dx, dy) = (p[0] - self.position[0], p[1] - self.position[1]);
        let (s, c) = self.orientation.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        let r = self.half_extent;
        match self.shape {
            ShapeKind::Disk => u * u + v * v <= r * r,
            ShapeKind::Square => u.abs() <= r && v.abs() <= r,
            ShapeKind::Bar => u.abs() <= r && v.abs() <= r * BAR_ASPECT,
        }
    }

    /// Radius of a circle enclosing the footprint.
    pub fn bounding_radius(&self) -> f64 {
        let r = self.half_extent;
        match self.shape {
            ShapeKind::Disk => r,
            ShapeKind::Square => r * std::f64::consts::SQRT_2,
            ShapeKind::Bar => r * (1.0 + BAR_ASPECT * BAR_ASPECT).sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GripperPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimScene {
    pub objects: Vec<SceneObject>,
    pub gripper: GripperPose,
    pub tray_half_extent: f64,
    pub seed: u64,
    pub pool: ObjectPool,
}

impl SimScene {
    pub fn object(&self, id: u32) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn object_ids(&self) -> Vec<u32> {
        self.objects.iter().map(|o| o.id).collect()
    }

    /// SHA-256 over the scene's canonical JSON; equal scenes hash equally.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("scene serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraspOutcome {
    pub grasped_object_id: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeClass {
    InstanceSuccess,
    WrongObject,
    Failed,
}

pub fn classify_outcome(outcome: GraspOutcome, target_id: u32) -> OutcomeClass {
    match outcome.grasped_object_id {
        Some(id) if id == target_id => OutcomeClass::InstanceSuccess,
        Some(_) => OutcomeClass::WrongObject,
        None => OutcomeClass::Failed,
    }
}

/// Workspace and physics constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// The tray spans `[-h, h]²`; the gripper workspace is the same square.
    pub tray_half_extent: f64,
    /// Tray units visible across the image width.
    pub view_width: f64,
    pub z_max: f64,
    pub z_grasp: f64,
    pub start_z: f64,
    /// Per-step translation bound for each of x, y, z.
    pub step_bound: [f64; 3],
    pub align_tolerance: f64,
    pub half_extent_range: (f64, f64),
    /// Grasp radius as a fraction of the half extent, per shape (disk, square, bar).
    pub grasp_radius_factor: [f64; 3],
    pub min_gap: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            tray_half_extent: 1.0,
            view_width: 2.0,
            z_max: 1.0,
            z_grasp: 0.3,
            start_z: 0.2,
            step_bound: [0.35, 0.35, 0.05],
            align_tolerance: 20f64.to_radians(),
            half_extent_range: (0.14, 0.22),
            grasp_radius_factor: [1.4, 1.4, 0.9],
            min_gap: 0.02,
        }
    }
}

impl EnvConfig {
    pub fn start_pose(&self) -> GripperPose {
        GripperPose {
            x: 0.0,
            y: 0.0,
            z: self.start_z,
            yaw: 0.0,
        }
    }

    /// Image pixels per tray unit for an image `width` pixels wide.
    pub fn pixels_per_unit(&self, width: usize) -> f64 {
        width as f64 / self.view_width
    }
}

/// Deterministic simulator over an [`EnvConfig`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Simulator {
    pub env: EnvConfig,
}

const PLACEMENT_TRIES: usize = 200;
const SCENE_RESTARTS: usize = 50;

impl Simulator {
    pub fn new(env: EnvConfig) -> Self {
        Self { env }
    }

    pub fn spawn_scene(&self, seed: u64, n_objects: usize, pool: ObjectPool) -> Result<SimScene, SimError> {
        if !(1..=MAX_OBJECTS).contains(&n_objects) {
            return Err(SimError::ObjectCount(n_objects));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = self.env.tray_half_extent;
        let bins = pool.hue_bins();
        // Whole-scene restarts continue the same stream, so the result is
        // still a pure function of the seed.
        for _ in 0..SCENE_RESTARTS {
            if let Some(objects) = self.try_place(&mut rng, n_objects, &bins) {
                return Ok(SimScene {
                    objects,
                    gripper: self.env.start_pose(),
                    tray_half_extent: h,
                    seed,
                    pool,
                });
            }
        }
        Err(SimError::Placement { seed, n_objects })
    }

    fn try_place(&self, rng: &mut ChaCha8Rng, n_objects: usize, bins: &[usize]) -> Option<Vec<SceneObject>> {
        let h = self.env.tray_half_extent;
        let mut objects: Vec<SceneObject> = Vec::with_capacity(n_objects);
        for id in 0..n_objects as u32 {
            let shape = match rng.gen_range(0..3) {
                0 => ShapeKind::Disk,
                1 => ShapeKind::Square,
                _ => ShapeKind::Bar,
            };
            let (lo, hi) = self.env.half_extent_range;
            let half_extent = rng.gen_range(lo..hi);
            let bin = bins[rng.gen_range(0..bins.len())];
            let hue = (bin as f64 + rng.gen_range(0.15..0.85)) / HUE_BINS as f64;
            let color = hsv_to_rgb(hue, rng.gen_range(0.65..0.95), rng.gen_range(0.7..0.95));
            let orientation = rng.gen_range(-PI..PI);
            let factor = self.env.grasp_radius_factor[shape as usize];
            let mut obj = SceneObject {
                id,
                shape,
                half_extent,
                color,
                position: [0.0, 0.0],
                orientation,
                grasp_radius: half_extent * factor,
            };
            let bound = obj.bounding_radius();
            let margin = h - bound;
            let mut placed = false;
            for _ in 0..PLACEMENT_TRIES {
                let p = [rng.gen_range(-margin..margin), rng.gen_range(-margin..margin)];
                let clear = objects.iter().all(|o| {
                    let d = (o.position[0] - p[0]).hypot(o.position[1] - p[1]);
                    d >= o.bounding_radius() + bound + self.env.min_gap
                });
                if clear {
                    obj.position = p;
                    placed = true;
                    break;
                }
            }
            if !placed {
                return None;
            }
            objects.push(obj);
        }
        Some(objects)
    }

    /// Applies one action. Translation is clamped to the per-step bound and
    /// the resulting pose to the workspace; objects never move.
    pub fn step(&self, scene: &SimScene, action: &ActionCommand) -> SimScene {
        self.move_gripper(scene, action, Some(self.env.step_bound))
    }

    /// Moves by the full translation of `action`, clamped only to the
    /// workspace. This is where a multi-step approach along `action` ends.
    pub fn displace(&self, scene: &SimScene, action: &ActionCommand) -> SimScene {
        self.move_gripper(scene, action, None)
    }

    /// Whether `action`'s translation fits in one step.
    pub fn within_step(&self, action: &ActionCommand) -> bool {
        action
            .translation
            .iter()
            .zip(self.env.step_bound)
            .all(|(v, b)| v.abs() <= b)
    }

    fn move_gripper(&self, scene: &SimScene, action: &ActionCommand, bound: Option<[f64; 3]>) -> SimScene {
        let mut next = scene.clone();
        let g = &mut next.gripper;
        let b = bound.unwrap_or([f64::INFINITY; 3]);
        let t = action.translation.map(|v| if v.is_finite() { v } else { 0.0 });
        let h = self.env.tray_half_extent;
        g.x = (g.x + t[0].clamp(-b[0], b[0])).clamp(-h, h);
        g.y = (g.y + t[1].clamp(-b[1], b[1])).clamp(-h, h);
        g.z = (g.z + t[2].clamp(-b[2], b[2])).clamp(0.0, self.env.z_max);
        let dyaw = if action.rotation.iter().all(|v| v.is_finite()) {
            action.yaw_delta()
        } else {
            0.0
        };
        g.yaw = wrap_angle(g.yaw + dyaw);
        next
    }

    /// Lowers the gripper to the tray surface.
    pub fn descend(&self, scene: &SimScene) -> SimScene {
        let mut next = scene.clone();
        next.gripper.z = 0.0;
        next
    }

    pub fn is_aligned(&self, object: &SceneObject, yaw: f64) -> bool {
        match object.shape {
            ShapeKind::Disk | ShapeKind::Square => true,
            ShapeKind::Bar => {
                let d = wrap_angle(object.orientation - yaw).abs();
                d.min(PI - d) <= self.env.align_tolerance
            }
        }
    }

    pub fn close_gripper(&self, scene: &SimScene) -> Result<GraspOutcome, SimError> {
        let g = scene.gripper;
        if g.z > self.env.z_grasp {
            return Err(SimError::GripperTooHigh {
                z: g.z,
                z_grasp: self.env.z_grasp,
            });
        }
        let mut best: Option<(f64, u32)> = None;
        for o in &scene.objects {
            let d = (o.position[0] - g.x).hypot(o.position[1] - g.y);
            if d <= o.grasp_radius && self.is_aligned(o, g.yaw) && best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, o.id));
            }
        }
        Ok(GraspOutcome {
            grasped_object_id: best.map(|(_, id)| id),
        })
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Folds several seeds into one, so derived random streams are independent
/// of each other yet reproducible.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        state ^= p;
        // splitmix64 finalizer
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        state = z ^ (z >> 31);
    }
    state
}
