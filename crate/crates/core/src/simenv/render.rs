use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{mix_seed, Domain, EnvConfig, Image, Mask, SimError, SimScene};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub domain: Domain,
    pub height: usize,
    pub width: usize,
    pub noise_std: f64,
    pub background_texture_seed: u64,
    pub texture_strength: f64,
    pub lighting_gradient_strength: f64,
    pub color_jitter_strength: f64,
    /// Maximum camera offset in pixels, per axis.
    pub camera_jitter: f64,
}

/// Perturbation strengths of the real-proxy renderer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealProxyStrengths {
    pub noise_std: f64,
    pub texture_strength: f64,
    pub lighting_gradient_strength: f64,
    pub color_jitter_strength: f64,
    /// Pixels, per axis.
    pub camera_jitter: f64,
}

impl Default for RealProxyStrengths {
    fn default() -> Self {
        Self {
            noise_std: 0.05,
            texture_strength: 0.12,
            lighting_gradient_strength: 0.25,
            color_jitter_strength: 0.15,
            camera_jitter: 2.0,
        }
    }
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self::sim(64, 64)
    }
}

impl RenderConfig {
    pub fn sim(height: usize, width: usize) -> Self {
        Self {
            domain: Domain::Sim,
            height,
            width,
            noise_std: 0.0,
            background_texture_seed: 0,
            texture_strength: 0.0,
            lighting_gradient_strength: 0.0,
            color_jitter_strength: 0.0,
            camera_jitter: 0.0,
        }
    }

    pub fn real_proxy(height: usize, width: usize, seed: u64) -> Self {
        Self::real_proxy_with(height, width, seed, &RealProxyStrengths::default())
    }

    pub fn real_proxy_with(height: usize, width: usize, seed: u64, s: &RealProxyStrengths) -> Self {
        Self {
            domain: Domain::RealProxy,
            height,
            width,
            noise_std: s.noise_std,
            background_texture_seed: seed,
            texture_strength: s.texture_strength,
            lighting_gradient_strength: s.lighting_gradient_strength,
            color_jitter_strength: s.color_jitter_strength,
            camera_jitter: s.camera_jitter,
        }
    }

    pub fn for_domain(domain: Domain, height: usize, width: usize, seed: u64) -> Self {
        Self::for_domain_with(domain, height, width, seed, &RealProxyStrengths::default())
    }

    /// `strengths` apply to the real-proxy domain only.
    pub fn for_domain_with(
        domain: Domain,
        height: usize,
        width: usize,
        seed: u64,
        strengths: &RealProxyStrengths,
    ) -> Self {
        match domain {
            Domain::Sim => Self::sim(height, width),
            Domain::RealProxy => Self::real_proxy_with(height, width, seed, strengths),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.height == 0 || self.width == 0 {
            return Err(SimError::RenderConfig("image extents must be positive".into()));
        }
        let strengths = [
            self.noise_std,
            self.texture_strength,
            self.lighting_gradient_strength,
            self.color_jitter_strength,
            self.camera_jitter,
        ];
        if strengths.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(SimError::RenderConfig(
                "perturbation strengths must be finite and ≥ 0".into(),
            ));
        }
        if self.domain == Domain::Sim && strengths.iter().any(|&s| s != 0.0) {
            return Err(SimError::RenderConfig("the sim domain takes no perturbations".into()));
        }
        Ok(())
    }
}

const TRAY_COLOR: [f64; 3] = [0.42, 0.40, 0.38];
const FLOOR_COLOR: [f64; 3] = [0.12, 0.12, 0.12];
const MARKER_COLOR: [f64; 3] = [0.95, 0.95, 0.95];
const MARKER_HALF_LENGTH: f64 = 0.18;

/// Per-scene appearance draws for the real-proxy domain.
struct Perturbation {
    offset: [f64; 2],
    gains: [f64; 3],
    light_dir: [f64; 2],
    /// (frequency, direction, phase, amplitude)
    layers: Vec<(f64, f64, f64, f64)>,
}

impl Perturbation {
    fn draw(scene: &SimScene, cfg: &RenderConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.background_texture_seed, scene.seed, 1]));
        let j = cfg.camera_jitter.round() as i64;
        let offset = [rng.gen_range(-j..=j) as f64, rng.gen_range(-j..=j) as f64];
        let gains = [0; 3].map(|_| 1.0 + cfg.color_jitter_strength * rng.gen_range(-1.0..1.0));
        let angle: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let layers = (0..3)
            .map(|k| {
                (
                    rng.gen_range(3.0..9.0) * (k + 1) as f64,
                    rng.gen_range(0.0..std::f64::consts::PI),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                    cfg.texture_strength / (k + 1) as f64,
                )
            })
            .collect();
        Self {
            offset,
            gains,
            light_dir: [angle.cos(), angle.sin()],
            layers,
        }
    }

    fn texture(&self, wx: f64, wy: f64) -> f64 {
        self.layers
            .iter()
            .map(|&(f, dir, phase, amp)| amp * (f * (dir.cos() * wx + dir.sin() * wy) + phase).sin())
            .sum()
    }
}

/// Maps pixel centers to world coordinates for one rendering.
struct Camera {
    cx: f64,
    cy: f64,
    ppu: f64,
    half_h: f64,
    half_w: f64,
    offset: [f64; 2],
}

impl Camera {
    fn new(scene: &SimScene, env: &EnvConfig, cfg: &RenderConfig, offset: [f64; 2]) -> Self {
        Self {
            cx: scene.gripper.x,
            cy: scene.gripper.y,
            ppu: env.pixels_per_unit(cfg.width),
            half_h: cfg.height as f64 / 2.0,
            half_w: cfg.width as f64 / 2.0,
            offset,
        }
    }

    #[inline]
    fn world(&self, row: usize, col: usize) -> [f64; 2] {
        [
            self.cx + (col as f64 + 0.5 - self.half_w - self.offset[0]) / self.ppu,
            self.cy - (row as f64 + 0.5 - self.half_h - self.offset[1]) / self.ppu,
        ]
    }
}

fn camera_offset(scene: &SimScene, cfg: &RenderConfig) -> ([f64; 2], Option<Perturbation>) {
    match cfg.domain {
        Domain::Sim => ([0.0, 0.0], None),
        Domain::RealProxy => {
            let p = Perturbation::draw(scene, cfg);
            (p.offset, Some(p))
        }
    }
}

/// Renders the camera view. The camera is centered on the gripper's `(x, y)`,
/// so moving the gripper by one tray unit shifts every object by
/// [`EnvConfig::pixels_per_unit`] pixels in the opposite direction. The
/// gripper marker is drawn beneath objects.
pub fn render_rgb(scene: &SimScene, env: &EnvConfig, cfg: &RenderConfig) -> Image {
    let (offset, perturb) = camera_offset(scene, cfg);
    let cam = Camera::new(scene, env, cfg, offset);
    let (h, w) = (cfg.height, cfg.width);
    let (yaw_s, yaw_c) = scene.gripper.yaw.sin_cos();
    let marker_half_width = (0.6 / cam.ppu).max(0.02);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
        cfg.background_texture_seed,
        scene.seed,
        scene.gripper.x.to_bits(),
        scene.gripper.y.to_bits(),
        scene.gripper.z.to_bits(),
        scene.gripper.yaw.to_bits(),
    ]));
    let mut out = vec![0.0; h * w * 3];
    for row in 0..h {
        for col in 0..w {
            let p = cam.world(row, col);
            let on_tray = p[0].abs() <= scene.tray_half_extent && p[1].abs() <= scene.tray_half_extent;
            let mut rgb = if on_tray { TRAY_COLOR } else { FLOOR_COLOR };
            if on_tray {
                if let Some(pt) = &perturb {
                    let t = pt.texture(p[0], p[1]);
                    rgb = rgb.map(|v| v + t);
                }
            }
            let (dx, dy) = (p[0] - scene.gripper.x, p[1] - scene.gripper.y);
            let along = yaw_c * dx + yaw_s * dy;
            let across = -yaw_s * dx + yaw_c * dy;
            if along.abs() <= MARKER_HALF_LENGTH && across.abs() <= marker_half_width {
                rgb = MARKER_COLOR;
            }
            if let Some(o) = scene.objects.iter().find(|o| o.contains(p)) {
                rgb = o.color;
            }
            if let Some(pt) = &perturb {
                let u = (col as f64 + 0.5) / cam.half_w - 1.0;
                let v = (row as f64 + 0.5) / cam.half_h - 1.0;
                let light = 1.0 + cfg.lighting_gradient_strength * (pt.light_dir[0] * u + pt.light_dir[1] * v);
                for c in 0..3 {
                    let n: f64 = StandardNormal.sample(&mut noise_rng);
                    rgb[c] = rgb[c] * light * pt.gains[c] + cfg.noise_std * n;
                }
            }
            let base = (row * w + col) * 3;
            for c in 0..3 {
                out[base + c] = rgb[c].clamp(0.0, 1.0);
            }
        }
    }
    Image::from_unit(h, w, &out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskRender {
    pub mask: Mask,
    /// False when no pixel of the object is in view.
    pub visible: bool,
}

/// Ground-truth segmentation of one object at the scene's current viewpoint,
/// aligned with [`render_rgb`] under the same configuration.
pub fn render_mask(
    scene: &SimScene,
    object_id: u32,
    env: &EnvConfig,
    cfg: &RenderConfig,
) -> Result<MaskRender, SimError> {
    let obj = scene.object(object_id).ok_or(SimError::UnknownObject(object_id))?;
    let (offset, _) = camera_offset(scene, cfg);
    let cam = Camera::new(scene, env, cfg, offset);
    let mut mask = Mask::zeros(cfg.height, cfg.width);
    for row in 0..cfg.height {
        for col in 0..cfg.width {
            if obj.contains(cam.world(row, col)) {
                mask.data[row * cfg.width + col] = 1;
            }
        }
    }
    let visible = mask.count() > 0;
    Ok(MaskRender { mask, visible })
}
