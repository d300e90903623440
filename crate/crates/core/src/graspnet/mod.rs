//! Mask-conditioned grasp-success network and the domain classifier head.
//!
//! The grasp network `g(M₀, I₀, I_t, v_t; θ)` has two convolutional streams:
//! an RGB stream over the channel-concatenated initial and current images,
//! with the encoded action added after its second block, and a mask stream
//! over `M₀`. The streams meet at the final convolutional layer and feed two
//! fully connected layers. The first of those is the adaptation point read by
//! the domain classifier `D(·; φ)`.
//!
//! Indiscriminate grasping is the same network fed [`constant_mask`]; the
//! [`HeadLayout::Split`] variant exists only for the ablation that gives the
//! indiscriminate task its own fully connected head.

mod checkpoint;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{ActionCommand, ACTION_DIM};
use crate::simenv::{Image, Mask};
use crate::tensor::{
    check_gradients, conv_output_extent, GradCheckReport, Graph, Mode, NormMode, Padding, ParamSet, Tensor,
    TensorError, Var,
};

#[derive(Debug, Error)]
pub enum GraspNetError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("stream extents disagree: rgb stream ends at {rgb:?}, mask stream at {mask:?}")]
    StreamMismatch { rgb: (usize, usize), mask: (usize, usize) },
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("{what}: expected {expected}, found {found}")]
    InputShape {
        what: &'static str,
        expected: String,
        found: String,
    },
}

pub type Result<T> = std::result::Result<T, GraspNetError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub const fn new(filters: usize, kernel: usize, stride: usize) -> Self {
        Self {
            filters,
            kernel,
            stride,
        }
    }
}

/// How the indiscriminate task reaches a prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HeadLayout {
    /// One head for both tasks; indiscriminate inputs carry the constant mask.
    Shared,
    /// The indiscriminate task has its own fully connected head over RGB
    /// features only. Convolutional parameters stay shared.
    Split,
}

/// Architecture descriptor. Parameter shapes are a pure function of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub rgb_stream: Vec<ConvSpec>,
    pub mask_stream: Vec<ConvSpec>,
    pub action_width: usize,
    /// The action encoding is added after this many RGB blocks (1-based),
    /// between the block's normalization and its ReLU.
    pub action_after_block: usize,
    pub fusion_width: usize,
    pub classifier_width: usize,
    pub norm_epsilon: f64,
    pub heads: HeadLayout,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::desk(64, 64)
    }
}

impl ArchConfig {
    /// The desk-scale structure at the given image size.
    pub fn desk(image_height: usize, image_width: usize) -> Self {
        Self {
            image_height,
            image_width,
            rgb_stream: vec![
                ConvSpec::new(16, 5, 2),
                ConvSpec::new(16, 3, 2),
                ConvSpec::new(16, 3, 2),
            ],
            mask_stream: vec![ConvSpec::new(8, 5, 2), ConvSpec::new(8, 3, 2), ConvSpec::new(8, 3, 2)],
            action_width: 16,
            action_after_block: 2,
            fusion_width: 64,
            classifier_width: 32,
            norm_epsilon: 1e-5,
            heads: HeadLayout::Shared,
        }
    }

    fn stream_extents(&self, stream: &[ConvSpec]) -> Result<Vec<(usize, usize)>> {
        let mut hw = (self.image_height, self.image_width);
        let mut out = Vec::with_capacity(stream.len());
        for s in stream {
            let h = conv_output_extent(hw.0, s.kernel, s.stride, Padding::Same);
            let w = conv_output_extent(hw.1, s.kernel, s.stride, Padding::Same);
            match (h, w) {
                (Some((h, _)), Some((w, _))) if s.filters > 0 => hw = (h, w),
                _ => return Err(GraspNetError::InvalidArch(format!("degenerate conv layer {s:?}"))),
            }
            out.push(hw);
        }
        Ok(out)
    }

    /// Checks internal consistency and returns the final spatial extent.
    pub fn validate(&self) -> Result<(usize, usize)> {
        if self.image_height == 0 || self.image_width == 0 {
            return Err(GraspNetError::InvalidArch("image extents must be positive".into()));
        }
        if self.rgb_stream.is_empty() || self.mask_stream.is_empty() {
            return Err(GraspNetError::InvalidArch(
                "both streams need at least one layer".into(),
            ));
        }
        if !(self.norm_epsilon > 0.0) {
            return Err(GraspNetError::InvalidArch("norm_epsilon must be positive".into()));
        }
        if self.fusion_width == 0 || self.classifier_width == 0 {
            return Err(GraspNetError::InvalidArch("head widths must be positive".into()));
        }
        if !(1..=self.rgb_stream.len()).contains(&self.action_after_block) {
            return Err(GraspNetError::InvalidArch(format!(
                "action_after_block {} outside 1..={}",
                self.action_after_block,
                self.rgb_stream.len()
            )));
        }
        let host = self.rgb_stream[self.action_after_block - 1].filters;
        if self.action_width != host {
            return Err(GraspNetError::InvalidArch(format!(
                "action width {} must equal the filters of the block it joins ({host})",
                self.action_width
            )));
        }
        let rgb = *self.stream_extents(&self.rgb_stream)?.last().unwrap();
        let mask = *self.stream_extents(&self.mask_stream)?.last().unwrap();
        if rgb != mask {
            return Err(GraspNetError::StreamMismatch { rgb, mask });
        }
        Ok(rgb)
    }

    /// Spatial extent of the RGB stream where the action joins.
    fn action_extent(&self) -> (usize, usize) {
        self.stream_extents(&self.rgb_stream).expect("validated")[self.action_after_block - 1]
    }

    fn rgb_features(&self) -> usize {
        self.rgb_stream.last().unwrap().filters
    }

    fn mask_features(&self) -> usize {
        self.mask_stream.last().unwrap().filters
    }
}

/// Which grasping task a forward pass serves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    Instance,
    Indiscriminate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Layer {
    w: usize,
    b: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Layout {
    rgb: Vec<Layer>,
    action: Layer,
    mask: Vec<Layer>,
    head: [Layer; 2],
    indiscriminate_head: Option<[Layer; 2]>,
}

/// θ: every grasp-network weight, plus the descriptor that shaped it.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub arch: ArchConfig,
    pub theta: ParamSet,
    layout: Layout,
}

/// φ: the domain classifier weights. Disjoint from θ.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    pub phi: ParamSet,
}

/// Uniform in `±1/sqrt(fan_in)`.
fn init_weight(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let a = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-a..a))
}

fn push_conv(params: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, spec: &ConvSpec, in_c: usize) -> Layer {
    let fan_in = spec.kernel * spec.kernel * in_c;
    let w = params.push(
        format!("{name}.w"),
        init_weight(rng, &[spec.kernel, spec.kernel, in_c, spec.filters], fan_in),
    );
    let b = params.push(format!("{name}.b"), Tensor::zeros(&[spec.filters]));
    Layer { w, b }
}

fn push_dense(params: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, inputs: usize, outputs: usize) -> Layer {
    let w = params.push(format!("{name}.w"), init_weight(rng, &[inputs, outputs], inputs));
    let b = params.push(format!("{name}.b"), Tensor::zeros(&[outputs]));
    Layer { w, b }
}

/// Builds θ and φ for `arch`, deterministically from `seed`.
pub fn build_network(arch: &ArchConfig, seed: u64) -> Result<(NetworkParams, ClassifierParams)> {
    let (fh, fw) = arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = ParamSet::new();

    let mut in_c = 6;
    let mut rgb = Vec::new();
    for (i, spec) in arch.rgb_stream.iter().enumerate() {
        rgb.push(push_conv(
            &mut theta,
            &mut rng,
            &format!("rgb.conv{}", i + 1),
            spec,
            in_c,
        ));
        in_c = spec.filters;
    }
    let action = push_dense(&mut theta, &mut rng, "action.dense", ACTION_DIM, arch.action_width);
    let mut in_c = 1;
    let mut mask = Vec::new();
    for (i, spec) in arch.mask_stream.iter().enumerate() {
        mask.push(push_conv(
            &mut theta,
            &mut rng,
            &format!("mask.conv{}", i + 1),
            spec,
            in_c,
        ));
        in_c = spec.filters;
    }
    let fused = fh * fw * (arch.rgb_features() + arch.mask_features());
    let head = [
        push_dense(&mut theta, &mut rng, "head.fc1", fused, arch.fusion_width),
        push_dense(&mut theta, &mut rng, "head.fc2", arch.fusion_width, 1),
    ];
    let indiscriminate_head = match arch.heads {
        HeadLayout::Shared => None,
        HeadLayout::Split => Some([
            push_dense(
                &mut theta,
                &mut rng,
                "ind_head.fc1",
                fh * fw * arch.rgb_features(),
                arch.fusion_width,
            ),
            push_dense(&mut theta, &mut rng, "ind_head.fc2", arch.fusion_width, 1),
        ]),
    };

    let mut phi = ParamSet::new();
    let mut crng = ChaCha8Rng::seed_from_u64(crate::simenv::mix_seed(&[seed, 0xD0]));
    push_dense(&mut phi, &mut crng, "cls.fc1", arch.fusion_width, arch.classifier_width);
    push_dense(&mut phi, &mut crng, "cls.fc2", arch.classifier_width, 1);

    let net = NetworkParams {
        arch: arch.clone(),
        theta,
        layout: Layout {
            rgb,
            action,
            mask,
            head,
            indiscriminate_head,
        },
    };
    Ok((net, ClassifierParams { phi }))
}

/// The all-ones target mask: every pixel is a grasp candidate.
pub fn constant_mask(height: usize, width: usize) -> Mask {
    Mask::ones(height, width)
}

/// A batch of network inputs in NHWC layout, pixel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GraspBatch {
    pub masks: Tensor,
    pub initial: Tensor,
    pub current: Tensor,
    pub actions: Tensor,
}

/// One network input by reference.
#[derive(Clone, Copy, Debug)]
pub struct GraspInput<'a> {
    pub mask: &'a Mask,
    pub initial: &'a Image,
    pub current: &'a Image,
    pub action: &'a ActionCommand,
}

impl GraspBatch {
    pub fn from_inputs(items: &[GraspInput<'_>]) -> Result<Self> {
        let first = items.first().ok_or_else(|| GraspNetError::InputShape {
            what: "batch size",
            expected: "at least 1".into(),
            found: "0".into(),
        })?;
        let (h, w) = (first.initial.height, first.initial.width);
        let n = items.len();
        let mut masks = Vec::with_capacity(n * h * w);
        let mut initial = Vec::with_capacity(n * h * w * 3);
        let mut current = Vec::with_capacity(n * h * w * 3);
        let mut actions = Vec::with_capacity(n * ACTION_DIM);
        for it in items {
            for (what, dims) in [
                ("mask extent", (it.mask.height, it.mask.width)),
                ("initial image extent", (it.initial.height, it.initial.width)),
                ("current image extent", (it.current.height, it.current.width)),
            ] {
                if dims != (h, w) {
                    return Err(GraspNetError::InputShape {
                        what,
                        expected: format!("{h}x{w}"),
                        found: format!("{}x{}", dims.0, dims.1),
                    });
                }
            }
            masks.extend(it.mask.data.iter().map(|&v| v as f64));
            initial.extend(it.initial.to_unit());
            current.extend(it.current.to_unit());
            actions.extend_from_slice(&it.action.to_array());
        }
        Ok(Self {
            masks: Tensor::new(vec![n, h, w, 1], masks)?,
            initial: Tensor::new(vec![n, h, w, 3], initial)?,
            current: Tensor::new(vec![n, h, w, 3], current)?,
            actions: Tensor::new(vec![n, ACTION_DIM], actions)?,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Graph handles produced by one tower.
#[derive(Clone, Copy, Debug)]
pub struct TowerOutput {
    /// `[N, 1]` success probabilities.
    pub prob: Var,
    /// `[N, fusion_width]` adaptation-point activations.
    pub features: Var,
}

/// Intermediate results reused across candidate actions.
struct Prefix {
    /// RGB stream after the action block's normalization, pre-ReLU.
    rgb: Var,
    /// Final mask-stream features, or `None` for the split indiscriminate head.
    mask: Option<Var>,
}

impl NetworkParams {
    /// Registers θ on `g`; pass the handles to [`NetworkParams::tower`].
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        if trainable {
            self.theta.bind(g)
        } else {
            self.theta.tensors().iter().map(|t| g.constant(t.clone())).collect()
        }
    }

    fn check_batch(&self, batch: &GraspBatch) -> Result<()> {
        let (h, w) = (self.arch.image_height, self.arch.image_width);
        let n = batch.len();
        for (what, t, c) in [
            ("mask", &batch.masks, 1),
            ("initial image", &batch.initial, 3),
            ("current image", &batch.current, 3),
        ] {
            if t.shape() != [n, h, w, c] {
                return Err(GraspNetError::InputShape {
                    what,
                    expected: format!("{:?}", [n, h, w, c]),
                    found: format!("{:?}", t.shape()),
                });
            }
        }
        if batch.actions.shape() != [n, ACTION_DIM] {
            return Err(GraspNetError::InputShape {
                what: "actions",
                expected: format!("{:?}", [n, ACTION_DIM]),
                found: format!("{:?}", batch.actions.shape()),
            });
        }
        Ok(())
    }

    fn block(&self, g: &mut Graph, x: Var, vars: &[Var], layer: Layer, spec: &ConvSpec, relu: bool) -> Result<Var> {
        let y = g.conv2d(x, vars[layer.w], vars[layer.b], spec.stride, Padding::Same)?;
        let y = g.normalize(y, NormMode::Instance, self.arch.norm_epsilon)?;
        Ok(if relu { g.relu(y) } else { y })
    }

    fn prefix(&self, g: &mut Graph, vars: &[Var], batch: &GraspBatch, task: Task) -> Result<Prefix> {
        let i0 = g.constant(batch.initial.clone());
        let it = g.constant(batch.current.clone());
        let mut x = g.concat_channels(i0, it)?;
        let k = self.arch.action_after_block;
        for (i, (layer, spec)) in self.layout.rgb.iter().zip(&self.arch.rgb_stream).take(k).enumerate() {
            x = self.block(g, x, vars, *layer, spec, i + 1 < k)?;
        }
        let mask = if task == Task::Indiscriminate && self.layout.indiscriminate_head.is_some() {
            None
        } else {
            let mut m = g.constant(batch.masks.clone());
            for (layer, spec) in self.layout.mask.iter().zip(&self.arch.mask_stream) {
                m = self.block(g, m, vars, *layer, spec, true)?;
            }
            Some(m)
        };
        Ok(Prefix { rgb: x, mask })
    }

    /// Runs the rest of the network given a prefix of batch 1 (broadcast to
    /// every action) or of batch `n`.
    fn suffix(&self, g: &mut Graph, vars: &[Var], prefix: &Prefix, actions: Var, task: Task) -> Result<TowerOutput> {
        let n = g.shape(actions)[0];
        let broadcast =
            |g: &mut Graph, v: Var| -> Result<Var> { Ok(if g.shape(v)[0] == n { v } else { g.repeat_batch(v, n)? }) };
        let a = g.dense(actions, vars[self.layout.action.w], vars[self.layout.action.b])?;
        let a = g.normalize(a, NormMode::Layer, self.arch.norm_epsilon)?;
        let a = g.relu(a);
        let (ah, aw) = self.arch.action_extent();
        let a = g.tile(a, ah, aw)?;
        let rgb = broadcast(g, prefix.rgb)?;
        let mut x = g.add(rgb, a)?;
        x = g.relu(x);
        let k = self.arch.action_after_block;
        for (layer, spec) in self.layout.rgb.iter().zip(&self.arch.rgb_stream).skip(k) {
            x = self.block(g, x, vars, *layer, spec, true)?;
        }
        let head = match (task, self.layout.indiscriminate_head) {
            (Task::Indiscriminate, Some(h)) => h,
            _ => self.layout.head,
        };
        if let Some(m) = prefix.mask {
            let m = broadcast(g, m)?;
            x = g.concat_channels(x, m)?;
        }
        let flat = g.flatten(x)?;
        let f = g.dense(flat, vars[head[0].w], vars[head[0].b])?;
        let f = g.normalize(f, NormMode::Layer, self.arch.norm_epsilon)?;
        let features = g.relu(f);
        let logit = g.dense(features, vars[head[1].w], vars[head[1].b])?;
        let prob = g.sigmoid(logit);
        Ok(TowerOutput { prob, features })
    }

    /// One tower on `g` with θ bound as `vars`.
    pub fn tower(&self, g: &mut Graph, vars: &[Var], batch: &GraspBatch, task: Task) -> Result<TowerOutput> {
        self.check_batch(batch)?;
        let prefix = self.prefix(g, vars, batch, task)?;
        let actions = g.constant(batch.actions.clone());
        self.suffix(g, vars, &prefix, actions, task)
    }

    fn eval_tower(&self, batch: &GraspBatch, task: Task) -> Result<(Graph, TowerOutput)> {
        let mut g = Graph::with_mode(Mode::Eval);
        let vars = self.bind(&mut g, false);
        let out = self.tower(&mut g, &vars, batch, task)?;
        Ok((g, out))
    }

    /// Instance-grasp success probabilities, one per batch row.
    pub fn predict_success(&self, batch: &GraspBatch) -> Result<Vec<f64>> {
        self.predict(batch, Task::Instance)
    }

    pub fn predict(&self, batch: &GraspBatch, task: Task) -> Result<Vec<f64>> {
        let (g, out) = self.eval_tower(batch, task)?;
        Ok(g.value(out.prob).values().to_vec())
    }

    /// Adaptation-point activations, `[N, fusion_width]`.
    pub fn extract_da_features(&self, batch: &GraspBatch, task: Task) -> Result<Tensor> {
        let (g, out) = self.eval_tower(batch, task)?;
        Ok(g.value(out.features).clone())
    }

    /// Whether this network can serve `task` through a distinct head.
    pub fn has_split_heads(&self) -> bool {
        self.layout.indiscriminate_head.is_some()
    }
}

/// Scores many candidate actions against one observation, computing the
/// action-independent part of the network once.
pub struct ActionScorer<'a> {
    net: &'a NetworkParams,
    task: Task,
    rgb: Tensor,
    mask: Option<Tensor>,
}

impl<'a> ActionScorer<'a> {
    pub fn new(net: &'a NetworkParams, mask: &Mask, initial: &Image, current: &Image, task: Task) -> Result<Self> {
        let batch = GraspBatch::from_inputs(&[GraspInput {
            mask,
            initial,
            current,
            action: &ActionCommand::IDENTITY,
        }])?;
        net.check_batch(&batch)?;
        let mut g = Graph::with_mode(Mode::Eval);
        let vars = net.bind(&mut g, false);
        let p = net.prefix(&mut g, &vars, &batch, task)?;
        Ok(Self {
            net,
            task,
            rgb: g.value(p.rgb).clone(),
            mask: p.mask.map(|m| g.value(m).clone()),
        })
    }

    pub fn score(&self, actions: &[ActionCommand]) -> Result<Vec<f64>> {
        if actions.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::with_mode(Mode::Eval);
        let vars = self.net.bind(&mut g, false);
        let prefix = Prefix {
            rgb: g.constant(self.rgb.clone()),
            mask: self.mask.as_ref().map(|m| g.constant(m.clone())),
        };
        let flat: Vec<f64> = actions.iter().flat_map(|a| a.to_array()).collect();
        let a = g.constant(Tensor::new(vec![actions.len(), ACTION_DIM], flat)?);
        let out = self.net.suffix(&mut g, &vars, &prefix, a, self.task)?;
        Ok(g.value(out.prob).values().to_vec())
    }
}

impl ClassifierParams {
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        if trainable {
            self.phi.bind(g)
        } else {
            self.phi.tensors().iter().map(|t| g.constant(t.clone())).collect()
        }
    }

    pub fn feature_width(&self) -> usize {
        self.phi.get(0).shape()[0]
    }

    /// `D(features)` on the graph: reversal, dense, ReLU, dense, sigmoid.
    /// Returns `[N, 1]` probabilities of the real-proxy domain.
    pub fn head(&self, g: &mut Graph, vars: &[Var], features: Var, reversal_scale: f64) -> Result<Var> {
        let width = g.shape(features).get(1).copied().unwrap_or(0);
        if width != self.feature_width() {
            return Err(GraspNetError::InputShape {
                what: "domain classifier features",
                expected: self.feature_width().to_string(),
                found: width.to_string(),
            });
        }
        let x = g.gradient_reversal(features, reversal_scale);
        let h = g.dense(x, vars[0], vars[1])?;
        let h = g.relu(h);
        let logit = g.dense(h, vars[2], vars[3])?;
        Ok(g.sigmoid(logit))
    }

    /// Probability that each feature row comes from the real-proxy domain.
    pub fn classify_domain(&self, features: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::with_mode(Mode::Eval);
        let vars = self.bind(&mut g, false);
        let f = g.constant(features.clone());
        let p = self.head(&mut g, &vars, f, 1.0)?;
        Ok(g.value(p).values().to_vec())
    }
}

fn as_tensor_error(e: GraspNetError) -> TensorError {
    match e {
        GraspNetError::Tensor(t) => t,
        other => TensorError::Invalid(other.to_string()),
    }
}

/// Central-difference check of θ (both tasks) and φ on seeded random inputs:
/// uniform images, random binary masks, random actions and labels. Samples
/// `coords_per_tensor` coordinates of each parameter tensor and returns the
/// worst of the three reports.
pub fn gradient_check(arch: &ArchConfig, seed: u64, coords_per_tensor: usize) -> Result<GradCheckReport> {
    const N: usize = 3;
    // small enough that a stencil rarely straddles a ReLU kink
    const EPS: f64 = 1e-6;
    let (net, clf) = build_network(arch, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6743);
    let (h, w) = (arch.image_height, arch.image_width);
    let image = |rng: &mut ChaCha8Rng| Tensor::from_fn(&[N, h, w, 3], |_| rng.gen::<f64>());
    let masks = Tensor::from_fn(&[N, h, w, 1], |_| (rng.gen::<f64>() < 0.3) as u8 as f64);
    let initial = image(&mut rng);
    let current = image(&mut rng);
    let actions: Vec<f64> = (0..N)
        .flat_map(|_| {
            let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            ActionCommand::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-0.1..0.1),
                yaw,
            )
            .to_array()
        })
        .collect();
    let batch = GraspBatch {
        masks,
        initial,
        current,
        actions: Tensor::new(vec![N, ACTION_DIM], actions)?,
    };
    let labels = Tensor::from_fn(&[N, 1], |i| (i % 2) as f64);
    let sample = Some((coords_per_tensor, seed));
    let mut worst: Option<GradCheckReport> = None;
    let mut keep = |r: GradCheckReport| {
        let better = worst
            .as_ref()
            .map_or(true, |w| r.max_rel_error > w.max_rel_error || r.max_rel_error.is_nan());
        let checked = worst.as_ref().map_or(0, |w| w.coordinates_checked) + r.coordinates_checked;
        if better {
            worst = Some(r);
        }
        if let Some(w) = worst.as_mut() {
            w.coordinates_checked = checked;
        }
    };
    for task in [Task::Instance, Task::Indiscriminate] {
        keep(check_gradients(
            |g, vars| {
                let out = net.tower(g, vars, &batch, task).map_err(as_tensor_error)?;
                g.binary_cross_entropy(out.prob, &labels)
            },
            net.theta.tensors(),
            EPS,
            sample,
        )?);
    }
    let features = net.extract_da_features(&batch, Task::Indiscriminate)?;
    keep(check_gradients(
        |g, vars| {
            let f = g.constant(features.clone());
            let p = clf.head(g, vars, f, 1.0).map_err(as_tensor_error)?;
            g.binary_cross_entropy(p, &labels)
        },
        clf.phi.tensors(),
        EPS,
        sample,
    )?);
    Ok(worst.expect("three reports"))
}
