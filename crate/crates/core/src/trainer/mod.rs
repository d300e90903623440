//! Three-tower multi-task training with adversarial domain adaptation.
//!
//! Each iteration draws one batch per task domain: real-proxy indiscriminate
//! (`X_R^A`), simulated indiscriminate (`X_S^A`) and simulated instance
//! (`X_S^B`). All towers share θ. The domain classifier φ sees the adaptation
//! features of the indiscriminate batches through a gradient reversal layer,
//! so a single descent step trains φ to tell the domains apart and θ to make
//! that hard.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datapipe::{Dataset, Episode};
use crate::graspnet::{
    build_network, save_checkpoint, ArchConfig, Checkpoint, CheckpointError, ClassifierParams, GraspBatch, GraspInput,
    GraspNetError, HeadLayout, NetworkParams, Task,
};
use crate::simenv::{mix_seed, Domain};
use crate::tensor::{sgd_momentum_step, Gradients, Graph, OptimizerState, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("invalid training data: {0}")]
    Data(String),
    #[error("real-proxy data must not contain instance records (record {index})")]
    RealInstanceRecord { index: usize },
    #[error("non-finite {term} at iteration {iter}")]
    NonFinite { term: &'static str, iter: usize },
    #[error("unknown ablation `{0}` (expected one of three_tower, two_tower, no_constant_mask, indiscriminate_only)")]
    UnknownAblation(String),
    #[error(transparent)]
    Net(#[from] GraspNetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

pub const METRICS_HEADER: &str =
    "iter,lr,loss_total,loss_inst_sim,loss_ind_real,loss_ind_sim,loss_adv,domain_acc_probe";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the real-proxy indiscriminate term.
    pub alpha: f64,
    /// Weight of the simulated indiscriminate term.
    pub beta: f64,
    /// Weight of the adversarial term; also the reversal scale.
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            lambda: 4.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.alpha, self.beta, self.lambda]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0)
        {
            Ok(())
        } else {
            Err(TrainError::Config(format!(
                "loss weights must be finite and non-negative: {self:?}"
            )))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub lr_decay: f64,
    pub decay_period: usize,
    pub momentum: f64,
    pub batch_per_domain: usize,
    /// Iterations before the reversal reaches θ.
    pub adversarial_warmup: usize,
    pub total_iterations: usize,
    pub seed: u64,
    pub log_period: usize,
    /// 0 disables intermediate checkpoints; the final one is always written.
    pub checkpoint_period: usize,
    /// Indiscriminate episodes held out of training per domain.
    pub probe_per_domain: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            lr_decay: 0.94,
            decay_period: 2000,
            momentum: 0.9,
            batch_per_domain: 16,
            adversarial_warmup: 2000,
            total_iterations: 10_000,
            seed: 0,
            log_period: 100,
            checkpoint_period: 2000,
            probe_per_domain: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.decay_period == 0 || self.batch_per_domain == 0 || self.total_iterations == 0 || self.log_period == 0 {
            return bad("decay_period, batch_per_domain, total_iterations and log_period must be positive");
        }
        if self.adversarial_warmup > self.total_iterations {
            return bad("adversarial_warmup exceeds total_iterations");
        }
        if self.probe_per_domain == 0 {
            return bad("probe_per_domain must be positive");
        }
        Ok(())
    }

    /// `base_lr · lr_decay^⌊iter / decay_period⌋`.
    pub fn learning_rate(&self, iter: usize) -> f64 {
        self.base_lr * self.lr_decay.powi((iter / self.decay_period) as i32)
    }

    pub fn adversarial_active(&self, iter: usize) -> bool {
        iter >= self.adversarial_warmup
    }

    pub fn log_rows(&self) -> usize {
        self.total_iterations.div_ceil(self.log_period)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ablation {
    ThreeTower,
    /// Drops simulated indiscriminate data; the classifier compares real
    /// indiscriminate with simulated instance features.
    TwoTower,
    /// Shared convolutions, separate fully connected head per task; the
    /// indiscriminate head sees no mask.
    NoConstantMask,
    /// Indiscriminate towers and adaptation only.
    IndiscriminateOnly,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::IndiscriminateOnly,
        Ablation::TwoTower,
        Ablation::NoConstantMask,
        Ablation::ThreeTower,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::ThreeTower => "three_tower",
            Ablation::TwoTower => "two_tower",
            Ablation::NoConstantMask => "no_constant_mask",
            Ablation::IndiscriminateOnly => "indiscriminate_only",
        }
    }

    /// The task the trained network is evaluated with.
    pub fn eval_task(self) -> Task {
        match self {
            Ablation::IndiscriminateOnly => Task::Indiscriminate,
            _ => Task::Instance,
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = TrainError;
    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| TrainError::UnknownAblation(s.into()))
    }
}

/// Which towers and adaptation pairs a run uses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerSetup {
    pub ablation: Ablation,
    pub weights: LossWeights,
    pub heads: HeadLayout,
    pub use_sim_indiscriminate: bool,
    pub use_instance: bool,
}

impl TrainerSetup {
    pub fn arch(&self, base: &ArchConfig) -> ArchConfig {
        ArchConfig {
            heads: self.heads,
            ..base.clone()
        }
    }
}

/// The trainer configuration for a named variant. Only the documented
/// difference from `three_tower` changes.
pub fn make_ablation(name: &str) -> Result<TrainerSetup> {
    let ablation: Ablation = name.parse()?;
    let base = TrainerSetup {
        ablation,
        weights: LossWeights::default(),
        heads: HeadLayout::Shared,
        use_sim_indiscriminate: true,
        use_instance: true,
    };
    Ok(match ablation {
        Ablation::ThreeTower => base,
        Ablation::TwoTower => TrainerSetup {
            use_sim_indiscriminate: false,
            ..base
        },
        Ablation::NoConstantMask => TrainerSetup {
            heads: HeadLayout::Split,
            ..base
        },
        Ablation::IndiscriminateOnly => TrainerSetup {
            use_instance: false,
            ..base
        },
    })
}

/// The three training sets.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub sim_indiscriminate: Dataset,
    pub real_indiscriminate: Dataset,
    pub sim_instance: Dataset,
}

impl TrainingData {
    pub fn validate(&self) -> Result<()> {
        let expect = |d: &Dataset, domain: Domain, task: Task, what: &str| -> Result<()> {
            if d.is_empty() {
                return Err(TrainError::Data(format!("{what} dataset is empty")));
            }
            if d.domain != domain || d.task != task {
                return Err(TrainError::Data(format!(
                    "{what} dataset is {:?}/{:?}, expected {domain:?}/{task:?}",
                    d.domain, d.task
                )));
            }
            Ok(())
        };
        if let Some(index) = self
            .real_indiscriminate
            .episodes
            .iter()
            .position(|e| e.domain == Domain::RealProxy && e.task == Task::Instance)
        {
            return Err(TrainError::RealInstanceRecord { index });
        }
        if self.real_indiscriminate.task == Task::Instance {
            return Err(TrainError::RealInstanceRecord { index: 0 });
        }
        expect(
            &self.sim_indiscriminate,
            Domain::Sim,
            Task::Indiscriminate,
            "sim indiscriminate",
        )?;
        expect(
            &self.real_indiscriminate,
            Domain::RealProxy,
            Task::Indiscriminate,
            "real-proxy indiscriminate",
        )?;
        expect(&self.sim_instance, Domain::Sim, Task::Instance, "sim instance")?;
        let extent = (self.sim_indiscriminate.height, self.sim_indiscriminate.width);
        for d in [&self.real_indiscriminate, &self.sim_instance] {
            if (d.height, d.width) != extent {
                return Err(TrainError::Data("datasets disagree on image extent".into()));
            }
            d.validate().map_err(|e| TrainError::Data(e.to_string()))?;
        }
        self.sim_indiscriminate
            .validate()
            .map_err(|e| TrainError::Data(e.to_string()))
    }
}

/// One tower's input: a batch plus its labels and provenance.
#[derive(Clone, Debug)]
pub struct SubBatch {
    pub domain: Domain,
    pub task: Task,
    pub batch: GraspBatch,
    pub labels: Tensor,
    /// `(episode index, timestep)` of every row.
    pub picks: Vec<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct TriBatch {
    pub real_indiscriminate: SubBatch,
    pub sim_indiscriminate: SubBatch,
    pub sim_instance: SubBatch,
}

/// An episode uniformly with replacement, then a timestep uniformly within it.
pub(crate) fn draw(rng: &mut ChaCha8Rng, episodes: &[Episode]) -> (usize, usize) {
    let e = rng.gen_range(0..episodes.len());
    (e, rng.gen_range(0..episodes[e].steps()))
}

fn sub_batch(episodes: &[Episode], picks: Vec<(usize, usize)>, domain: Domain, task: Task) -> Result<SubBatch> {
    let inputs: Vec<GraspInput<'_>> = picks
        .iter()
        .map(|&(e, t)| {
            let ep = &episodes[e];
            GraspInput {
                mask: &ep.target_mask,
                initial: ep.initial_image(),
                current: &ep.images[t],
                action: &ep.actions[t],
            }
        })
        .collect();
    let batch = GraspBatch::from_inputs(&inputs)?;
    let labels = Tensor::new(
        vec![picks.len(), 1],
        picks.iter().map(|&(e, _)| episodes[e].label as u8 as f64).collect(),
    )?;
    Ok(SubBatch {
        domain,
        task,
        batch,
        labels,
        picks,
    })
}

fn sample_from(episodes: &[Episode], n: usize, rng: &mut ChaCha8Rng, domain: Domain, task: Task) -> Result<SubBatch> {
    let picks = (0..n).map(|_| draw(rng, episodes)).collect();
    sub_batch(episodes, picks, domain, task)
}

/// Draws `batch_per_domain` tuples from each dataset.
pub fn sample_tri_batch(data: &TrainingData, batch_per_domain: usize, rng: &mut ChaCha8Rng) -> Result<TriBatch> {
    data.validate()?;
    if batch_per_domain == 0 {
        return Err(TrainError::Config("batch_per_domain must be positive".into()));
    }
    sample_unchecked(
        &data.real_indiscriminate.episodes,
        &data.sim_indiscriminate.episodes,
        &data.sim_instance.episodes,
        batch_per_domain,
        rng,
    )
}

fn sample_unchecked(
    real: &[Episode],
    sim: &[Episode],
    inst: &[Episode],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TriBatch> {
    Ok(TriBatch {
        real_indiscriminate: sample_from(real, n, rng, Domain::RealProxy, Task::Indiscriminate)?,
        sim_indiscriminate: sample_from(sim, n, rng, Domain::Sim, Task::Indiscriminate)?,
        sim_instance: sample_from(inst, n, rng, Domain::Sim, Task::Instance)?,
    })
}

/// Per-term losses of one tri-batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub inst_sim: f64,
    pub ind_real: f64,
    pub ind_sim: f64,
    pub adv: f64,
    pub total: f64,
}

/// `L_S^B + α·L_R^A + β·L_S^A + λ·L_adv`, without the last term while the
/// adversarial phase is inactive.
pub fn combine_losses(
    inst_sim: f64,
    ind_real: f64,
    ind_sim: f64,
    adv: f64,
    w: &LossWeights,
    adversarial_active: bool,
) -> f64 {
    let grasp = inst_sim + w.alpha * ind_real + w.beta * ind_sim;
    if adversarial_active {
        grasp + w.lambda * adv
    } else {
        grasp
    }
}

struct Objective {
    /// Descended by the optimizer: grasp terms plus the classifier's own loss.
    loss: Var,
    breakdown: LossBreakdown,
}

/// Builds the training objective on `g`. θ receives `−λ·∂L_adv/∂θ` through
/// the reversal layer while active and nothing from `L_adv` otherwise; φ
/// always descends `L_adv`.
#[allow(clippy::too_many_arguments)]
fn objective(
    g: &mut Graph,
    net: &NetworkParams,
    theta: &[Var],
    clf: &ClassifierParams,
    phi: &[Var],
    batch: &TriBatch,
    setup: &TrainerSetup,
    adversarial_active: bool,
) -> Result<Objective> {
    let w = setup.weights;
    let real = net.tower(g, theta, &batch.real_indiscriminate.batch, Task::Indiscriminate)?;
    let l_real = g.binary_cross_entropy(real.prob, &batch.real_indiscriminate.labels)?;
    let mut terms = vec![(l_real, w.alpha)];

    let sim = if setup.use_sim_indiscriminate {
        let out = net.tower(g, theta, &batch.sim_indiscriminate.batch, Task::Indiscriminate)?;
        let l = g.binary_cross_entropy(out.prob, &batch.sim_indiscriminate.labels)?;
        terms.push((l, w.beta));
        Some((out, l))
    } else {
        None
    };
    let inst = if setup.use_instance {
        let out = net.tower(g, theta, &batch.sim_instance.batch, Task::Instance)?;
        let l = g.binary_cross_entropy(out.prob, &batch.sim_instance.labels)?;
        terms.push((l, 1.0));
        Some((out, l))
    } else {
        None
    };

    // the simulated side of the domain pair
    let sim_features = match (&sim, &inst) {
        (Some((s, _)), _) => s.features,
        (None, Some((i, _))) => i.features,
        (None, None) => return Err(TrainError::Config("no simulated tower to adapt against".into())),
    };
    let n_real = g.shape(real.features)[0];
    let n_sim = g.shape(sim_features)[0];
    let features = g.concat_batch(&[real.features, sim_features])?;
    let scale = if adversarial_active { w.lambda } else { 0.0 };
    let domain_prob = clf.head(g, phi, features, scale)?;
    let mut domain_labels = vec![Domain::RealProxy.label(); n_real];
    domain_labels.extend(std::iter::repeat(Domain::Sim.label()).take(n_sim));
    let domain_labels = Tensor::new(vec![n_real + n_sim, 1], domain_labels)?;
    let l_adv = g.binary_cross_entropy(domain_prob, &domain_labels)?;
    terms.push((l_adv, 1.0));
    let loss = g.weighted_sum(&terms)?;

    let value = |g: &Graph, v: Option<Var>| v.map_or(0.0, |v| g.value(v).values()[0]);
    let (inst_sim, ind_real, ind_sim, adv) = (
        value(g, inst.map(|(_, l)| l)),
        value(g, Some(l_real)),
        value(g, sim.map(|(_, l)| l)),
        value(g, Some(l_adv)),
    );
    let total = combine_losses(inst_sim, ind_real, ind_sim, adv, &w, adversarial_active);
    Ok(Objective {
        loss,
        breakdown: LossBreakdown {
            inst_sim,
            ind_real,
            ind_sim,
            adv,
            total,
        },
    })
}

/// The reported loss of one tri-batch, without updating anything.
pub fn total_loss(
    net: &NetworkParams,
    clf: &ClassifierParams,
    batch: &TriBatch,
    setup: &TrainerSetup,
    adversarial_active: bool,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let theta = net.bind(&mut g, false);
    let phi = clf.bind(&mut g, false);
    Ok(objective(&mut g, net, &theta, clf, &phi, batch, setup, adversarial_active)?.breakdown)
}

/// Gradients of the training objective w.r.t. θ and φ, in [`ParamSet`] order.
///
/// [`ParamSet`]: crate::tensor::ParamSet
pub fn objective_gradients(
    net: &NetworkParams,
    clf: &ClassifierParams,
    batch: &TriBatch,
    setup: &TrainerSetup,
    adversarial_active: bool,
) -> Result<(LossBreakdown, Gradients, Gradients)> {
    let mut g = Graph::new();
    let theta = net.bind(&mut g, true);
    let phi = clf.bind(&mut g, true);
    let obj = objective(&mut g, net, &theta, clf, &phi, batch, setup, adversarial_active)?;
    g.backward(obj.loss)?;
    Ok((
        obj.breakdown,
        Gradients::collect(&g, &theta),
        Gradients::collect(&g, &phi),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_inst_sim: f64,
    pub loss_ind_real: f64,
    pub loss_ind_sim: f64,
    pub loss_adv: f64,
    pub domain_acc_probe: f64,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:e},{:.6},{:.6},{:.6},{:.6},{:.6},{:.4}",
            self.iter,
            self.lr,
            self.loss_total,
            self.loss_inst_sim,
            self.loss_ind_real,
            self.loss_ind_sim,
            self.loss_adv,
            self.domain_acc_probe
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.csv_line());
    }
    s
}

/// Held-out indiscriminate tuples from both domains.
#[derive(Clone, Debug)]
pub struct ProbeSet {
    pub real: SubBatch,
    pub sim: SubBatch,
}

/// Splits `episodes` into (train, held out) with a seeded shuffle.
fn hold_out(episodes: &[Episode], n: usize, seed: u64) -> Result<(Vec<Episode>, Vec<Episode>)> {
    if episodes.len() <= n {
        return Err(TrainError::Data(format!(
            "{} episodes cannot spare {n} for the probe set",
            episodes.len()
        )));
    }
    let mut order: Vec<usize> = (0..episodes.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held: Vec<Episode> = order[..n].iter().map(|&i| episodes[i].clone()).collect();
    let mut rest: Vec<usize> = order[n..].to_vec();
    rest.sort_unstable();
    Ok((rest.into_iter().map(|i| episodes[i].clone()).collect(), held))
}

fn probe_batch(episodes: &[Episode], seed: u64, domain: Domain) -> Result<SubBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = (0..episodes.len())
        .map(|e| (e, rng.gen_range(0..episodes[e].steps())))
        .collect();
    sub_batch(episodes, picks, domain, Task::Indiscriminate)
}

/// Fraction of probe tuples whose domain the classifier gets right at the
/// 0.5 threshold.
pub fn domain_accuracy(net: &NetworkParams, clf: &ClassifierParams, probe: &ProbeSet) -> Result<f64> {
    let mut correct = 0;
    let mut total = 0;
    for sb in [&probe.real, &probe.sim] {
        let f = net.extract_da_features(&sb.batch, Task::Indiscriminate)?;
        let p = clf.classify_domain(&f)?;
        let truth = sb.domain.label() == 1.0;
        correct += p.iter().filter(|&&p| (p >= 0.5) == truth).count();
        total += p.len();
    }
    Ok(correct as f64 / total as f64)
}

const PROBE_TAG: u64 = 0x50_524F;

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricsRow>,
    /// Intermediate and final checkpoint files, if an output directory was given.
    pub checkpoint_files: Vec<PathBuf>,
    pub probe: ProbeSet,
}

fn check_finite(b: &LossBreakdown, iter: usize) -> Result<()> {
    for (term, v) in [
        ("loss_inst_sim", b.inst_sim),
        ("loss_ind_real", b.ind_real),
        ("loss_ind_sim", b.ind_sim),
        ("loss_adv", b.adv),
        ("loss_total", b.total),
    ] {
        if !v.is_finite() {
            return Err(TrainError::NonFinite { term, iter });
        }
    }
    Ok(())
}

fn check_gradients_finite(theta: &Gradients, phi: &Gradients, iter: usize) -> Result<()> {
    let finite = |g: &Gradients| g.0.iter().flatten().all(Tensor::all_finite);
    if !finite(theta) {
        return Err(TrainError::NonFinite {
            term: "theta gradient",
            iter,
        });
    }
    if !finite(phi) {
        return Err(TrainError::NonFinite {
            term: "phi gradient",
            iter,
        });
    }
    Ok(())
}

/// Trains a network from scratch. With `out_dir`, writes `metrics.csv` and
/// checkpoints under `out_dir/checkpoints/`.
pub fn train(
    cfg: &TrainConfig,
    setup: &TrainerSetup,
    data: &TrainingData,
    arch: &ArchConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    setup.weights.validate()?;
    data.validate()?;
    let arch = setup.arch(arch);
    if (arch.image_height, arch.image_width) != (data.sim_indiscriminate.height, data.sim_indiscriminate.width) {
        return Err(TrainError::Data(format!(
            "architecture expects {}x{} images, data has {}x{}",
            arch.image_height, arch.image_width, data.sim_indiscriminate.height, data.sim_indiscriminate.width
        )));
    }
    let (mut net, mut clf) = build_network(&arch, cfg.seed)?;

    let n = cfg.probe_per_domain;
    let (real, real_probe) = hold_out(
        &data.real_indiscriminate.episodes,
        n,
        mix_seed(&[cfg.seed, PROBE_TAG, 1]),
    )?;
    let (sim, sim_probe) = hold_out(
        &data.sim_indiscriminate.episodes,
        n,
        mix_seed(&[cfg.seed, PROBE_TAG, 0]),
    )?;
    let probe = ProbeSet {
        real: probe_batch(&real_probe, mix_seed(&[cfg.seed, PROBE_TAG, 3]), Domain::RealProxy)?,
        sim: probe_batch(&sim_probe, mix_seed(&[cfg.seed, PROBE_TAG, 2]), Domain::Sim)?,
    };
    let inst = &data.sim_instance.episodes;

    let ckpt_dir = out_dir.map(|d| d.join("checkpoints"));
    if let Some(d) = &ckpt_dir {
        std::fs::create_dir_all(d)?;
    }
    let mut theta_opt = OptimizerState::new(&net.theta, cfg.base_lr, cfg.momentum);
    let mut phi_opt = OptimizerState::new(&clf.phi, cfg.base_lr, cfg.momentum);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut metrics = Vec::with_capacity(cfg.log_rows());
    let mut files = Vec::new();

    for iter in 0..cfg.total_iterations {
        let batch = sample_unchecked(&real, &sim, inst, cfg.batch_per_domain, &mut rng)?;
        let active = cfg.adversarial_active(iter);
        let (breakdown, g_theta, g_phi) = objective_gradients(&net, &clf, &batch, setup, active)?;
        check_finite(&breakdown, iter)?;
        check_gradients_finite(&g_theta, &g_phi, iter)?;
        let lr = cfg.learning_rate(iter);
        theta_opt.learning_rate = lr;
        phi_opt.learning_rate = lr;
        sgd_momentum_step(&mut net.theta, &g_theta, &mut theta_opt)?;
        sgd_momentum_step(&mut clf.phi, &g_phi, &mut phi_opt)?;

        if iter % cfg.log_period == 0 {
            metrics.push(MetricsRow {
                iter,
                lr,
                loss_total: breakdown.total,
                loss_inst_sim: breakdown.inst_sim,
                loss_ind_real: breakdown.ind_real,
                loss_ind_sim: breakdown.ind_sim,
                loss_adv: breakdown.adv,
                domain_acc_probe: domain_accuracy(&net, &clf, &probe)?,
            });
            if let Some(d) = out_dir {
                std::fs::write(d.join("metrics.csv"), metrics_csv(&metrics))?;
            }
        }
        let done = iter + 1;
        if let Some(d) = &ckpt_dir {
            if cfg.checkpoint_period > 0 && done % cfg.checkpoint_period == 0 && done < cfg.total_iterations {
                let path = d.join(format!("iter_{done:07}.ckpt"));
                save_checkpoint(
                    &path,
                    &Checkpoint {
                        net: net.clone(),
                        classifier: clf.clone(),
                    },
                )?;
                files.push(path);
            }
        }
    }
    let checkpoint = Checkpoint { net, classifier: clf };
    if let Some(d) = &ckpt_dir {
        let path = d.join("final.ckpt");
        save_checkpoint(&path, &checkpoint)?;
        files.push(path);
    }
    Ok(TrainOutcome {
        checkpoint,
        metrics,
        checkpoint_files: files,
        probe,
    })
}

#[cfg(test)]
mod tests;
