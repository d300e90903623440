use super::*;
use crate::datapipe::{collect_indiscriminate, relabel_dataset, CollectConfig, CollectPolicy};
use crate::simenv::EnvConfig;
use std::sync::OnceLock;

const HW: usize = 16;

fn data() -> &'static TrainingData {
    static DATA: OnceLock<TrainingData> = OnceLock::new();
    DATA.get_or_init(|| {
        let cfg = CollectConfig {
            height: HW,
            width: HW,
            ..Default::default()
        };
        let sim = collect_indiscriminate(CollectPolicy::Random, 160, Domain::Sim, 0, &cfg).unwrap();
        let real = collect_indiscriminate(CollectPolicy::Random, 160, Domain::RealProxy, 50_000, &cfg).unwrap();
        let inst = relabel_dataset(&sim, &EnvConfig::default()).unwrap();
        TrainingData {
            sim_indiscriminate: sim,
            real_indiscriminate: real,
            sim_instance: inst,
        }
    })
}

fn small_run(total: usize) -> TrainConfig {
    TrainConfig {
        total_iterations: total,
        adversarial_warmup: total / 2,
        decay_period: total.max(1),
        log_period: 3,
        checkpoint_period: 4,
        probe_per_domain: 16,
        batch_per_domain: 4,
        ..Default::default()
    }
}

fn setup() -> TrainerSetup {
    make_ablation("three_tower").unwrap()
}

#[test]
fn learning_rate_schedule() {
    let c = TrainConfig::default();
    assert_eq!(c.learning_rate(0), 1e-4);
    assert_eq!(c.learning_rate(c.decay_period - 1), 1e-4);
    assert!((c.learning_rate(c.decay_period) - 9.4e-5).abs() < 1e-18);
    assert!((c.learning_rate(2 * c.decay_period) - 1e-4 * 0.94 * 0.94).abs() < 1e-18);
    assert!(!c.adversarial_active(c.adversarial_warmup - 1));
    assert!(c.adversarial_active(c.adversarial_warmup));
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    for c in [
        TrainConfig {
            base_lr: 0.0,
            ..Default::default()
        },
        TrainConfig {
            lr_decay: 1.5,
            ..Default::default()
        },
        TrainConfig {
            momentum: 1.0,
            ..Default::default()
        },
        TrainConfig {
            adversarial_warmup: 20_000,
            ..Default::default()
        },
        TrainConfig {
            batch_per_domain: 0,
            ..Default::default()
        },
    ] {
        assert!(c.validate().is_err(), "{c:?}");
    }
    assert!(LossWeights {
        alpha: -1.0,
        ..Default::default()
    }
    .validate()
    .is_err());
}

#[test]
fn loss_assembly_arithmetic() {
    let w = LossWeights::default();
    assert_eq!(combine_losses(0.2, 0.3, 0.4, 0.1, &w, true), 1.3);
    assert_eq!(combine_losses(0.2, 0.3, 0.4, 0.1, &w, false), 0.2 + 0.3 + 0.4);
}

#[test]
fn perfect_towers_and_chance_classifier() {
    let mut g = Graph::new();
    let bce = |g: &mut Graph, p: f64, d: f64| {
        let v = g.constant(Tensor::full(&[4, 1], p));
        let l = g.binary_cross_entropy(v, &Tensor::full(&[4, 1], d)).unwrap();
        g.value(l).values()[0]
    };
    let (a, b, c) = (bce(&mut g, 1.0, 1.0), bce(&mut g, 0.0, 0.0), bce(&mut g, 1.0, 1.0));
    let adv = bce(&mut g, 0.5, 1.0);
    let total = combine_losses(a, b, c, adv, &LossWeights::default(), true);
    assert!((total - 4.0 * std::f64::consts::LN_2).abs() < 1e-5);
    assert!((total - 2.7726).abs() < 1e-4);
}

#[test]
fn adversarial_term_is_exactly_absent_before_warmup() {
    let d = data();
    let (net, clf) = build_network(&ArchConfig::desk(HW, HW), 1).unwrap();
    let batch = sample_tri_batch(d, 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let off = total_loss(&net, &clf, &batch, &setup(), false).unwrap();
    let on = total_loss(&net, &clf, &batch, &setup(), true).unwrap();
    assert_eq!(off.total, off.inst_sim + off.ind_real + off.ind_sim);
    assert_eq!(on.total, off.total + 4.0 * on.adv);
    assert_eq!(on.adv, off.adv);
}

#[test]
fn gradient_flow_signs() {
    let d = data();
    let (net, clf) = build_network(&ArchConfig::desk(HW, HW), 2).unwrap();
    let batch = sample_tri_batch(d, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let s = setup();
    let (_, theta_off, phi_g) = objective_gradients(&net, &clf, &batch, &s, false).unwrap();
    let (_, theta_on, phi_on) = objective_gradients(&net, &clf, &batch, &s, true).unwrap();
    assert_eq!(phi_g, phi_on);

    let adv = |net: &NetworkParams, clf: &ClassifierParams| total_loss(net, clf, &batch, &s, false).unwrap().adv;
    let base = adv(&net, &clf);
    let eps = 1e-3;

    // φ descends the classifier loss
    let mut c2 = clf.clone();
    for (i, g) in phi_g.0.iter().enumerate() {
        let g = g.as_ref().unwrap();
        for (p, g) in c2.phi.get_mut(i).values_mut().iter_mut().zip(g.values()) {
            *p -= eps * g;
        }
    }
    assert!(adv(&net, &c2) < base);

    // θ's share of the adversarial gradient ascends it
    let mut n2 = net.clone();
    let mut moved = 0.0;
    for (i, (on, off)) in theta_on.0.iter().zip(&theta_off.0).enumerate() {
        let (on, off) = (on.as_ref().unwrap(), off.as_ref().unwrap());
        for ((p, a), b) in n2
            .theta
            .get_mut(i)
            .values_mut()
            .iter_mut()
            .zip(on.values())
            .zip(off.values())
        {
            *p -= eps * (a - b);
            moved += (a - b).abs();
        }
    }
    assert!(moved > 0.0);
    assert!(adv(&n2, &clf) > base);
}

#[test]
fn tri_batch_composition() {
    let d = data();
    let b = sample_tri_batch(d, 16, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    for (sb, domain, task) in [
        (&b.real_indiscriminate, Domain::RealProxy, Task::Indiscriminate),
        (&b.sim_indiscriminate, Domain::Sim, Task::Indiscriminate),
        (&b.sim_instance, Domain::Sim, Task::Instance),
    ] {
        assert_eq!(sb.batch.len(), 16);
        assert_eq!(sb.labels.len(), 16);
        assert_eq!((sb.domain, sb.task), (domain, task));
    }
    for sb in [&b.real_indiscriminate, &b.sim_indiscriminate] {
        assert!(sb.batch.masks.values().iter().all(|&m| m == 1.0));
    }
    assert!(b.sim_instance.batch.masks.values().iter().any(|&m| m == 0.0));
    for &(e, t) in &b.sim_instance.picks {
        let ep = &d.sim_instance.episodes[e];
        assert!(t < ep.steps());
    }
    assert!(sample_tri_batch(d, 0, &mut ChaCha8Rng::seed_from_u64(3)).is_err());
}

#[test]
fn real_instance_records_are_rejected() {
    let d = data();
    let mut bad = d.clone();
    let mut real_inst = Dataset::new(Domain::RealProxy, Task::Instance, HW, HW);
    let e = d.real_indiscriminate.episodes[0].clone();
    let target = 1;
    real_inst
        .push(Episode {
            task: Task::Instance,
            target_object_id: Some(target),
            label: e.grasped_object_id == Some(target),
            ..e
        })
        .unwrap();
    bad.real_indiscriminate = real_inst;
    assert!(matches!(
        sample_tri_batch(&bad, 4, &mut ChaCha8Rng::seed_from_u64(0)),
        Err(TrainError::RealInstanceRecord { index: 0 })
    ));
    let mut swapped = d.clone();
    swapped.sim_instance = d.sim_indiscriminate.clone();
    assert!(matches!(
        sample_tri_batch(&swapped, 4, &mut ChaCha8Rng::seed_from_u64(0)),
        Err(TrainError::Data(_))
    ));
}

#[test]
fn episode_sampling_is_uniform() {
    const N: usize = 20;
    const DRAWS: usize = 100_000;
    let episodes: Vec<Episode> = data().sim_indiscriminate.episodes[..N].to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut counts = [0usize; N];
    for _ in 0..DRAWS {
        counts[draw(&mut rng, &episodes).0] += 1;
    }
    let expected = DRAWS as f64 / N as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99th percentile of chi-square with 19 degrees of freedom
    assert!(chi2 < 36.191, "chi2 {chi2}");
}

#[test]
fn ablations_differ_only_as_documented() {
    let three = make_ablation("three_tower").unwrap();
    let two = make_ablation("two_tower").unwrap();
    let split = make_ablation("no_constant_mask").unwrap();
    let ind = make_ablation("indiscriminate_only").unwrap();
    assert_eq!(
        two,
        TrainerSetup {
            ablation: Ablation::TwoTower,
            use_sim_indiscriminate: false,
            ..three
        }
    );
    assert_eq!(
        split,
        TrainerSetup {
            ablation: Ablation::NoConstantMask,
            heads: HeadLayout::Split,
            ..three
        }
    );
    assert_eq!(
        ind,
        TrainerSetup {
            ablation: Ablation::IndiscriminateOnly,
            use_instance: false,
            ..three
        }
    );
    let err = make_ablation("four_tower").unwrap_err().to_string();
    for a in Ablation::ALL {
        assert!(err.contains(a.name()));
    }
}

#[test]
fn ablations_drop_their_towers() {
    let d = data();
    let batch = sample_tri_batch(d, 4, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let two = make_ablation("two_tower").unwrap();
    let (net, clf) = build_network(&two.arch(&ArchConfig::desk(HW, HW)), 0).unwrap();
    let l = total_loss(&net, &clf, &batch, &two, true).unwrap();
    assert_eq!(l.ind_sim, 0.0);
    assert_eq!(l.total, l.inst_sim + l.ind_real + 4.0 * l.adv);

    let ind = make_ablation("indiscriminate_only").unwrap();
    let l = total_loss(&net, &clf, &batch, &ind, true).unwrap();
    assert_eq!(l.inst_sim, 0.0);
    assert!(l.ind_sim > 0.0);

    // with split heads the indiscriminate towers do not depend on masks
    let split = make_ablation("no_constant_mask").unwrap();
    let (net, clf) = build_network(&split.arch(&ArchConfig::desk(HW, HW)), 0).unwrap();
    assert!(net.has_split_heads());
    let a = total_loss(&net, &clf, &batch, &split, true).unwrap();
    assert!(a.total.is_finite());
}

#[test]
fn training_run_logs_checkpoints_and_is_deterministic() {
    let d = data();
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run(7);
    let a = train(&cfg, &setup(), d, &ArchConfig::desk(HW, HW), Some(dir.path())).unwrap();
    assert_eq!(a.metrics.len(), cfg.log_rows());
    assert_eq!(a.metrics.len(), 3);
    assert_eq!(a.metrics.iter().map(|r| r.iter).collect::<Vec<_>>(), vec![0, 3, 6]);
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), METRICS_HEADER);
    assert_eq!(csv.lines().count(), 4);
    assert_eq!(a.checkpoint_files.len(), 2);
    let loaded = crate::graspnet::load_checkpoint(a.checkpoint_files.last().unwrap()).unwrap();
    assert_eq!(loaded, a.checkpoint);
    for r in &a.metrics {
        assert!((0.0..=1.0).contains(&r.domain_acc_probe));
        let active = cfg.adversarial_active(r.iter);
        let expect = combine_losses(
            r.loss_inst_sim,
            r.loss_ind_real,
            r.loss_ind_sim,
            r.loss_adv,
            &LossWeights::default(),
            active,
        );
        assert_eq!(r.loss_total, expect);
    }

    let b = train(&cfg, &setup(), d, &ArchConfig::desk(HW, HW), None).unwrap();
    assert_eq!(metrics_csv(&a.metrics), metrics_csv(&b.metrics));
    assert_eq!(a.checkpoint, b.checkpoint);
    let c = train(
        &TrainConfig { seed: 1, ..cfg },
        &setup(),
        d,
        &ArchConfig::desk(HW, HW),
        None,
    )
    .unwrap();
    assert_ne!(a.checkpoint, c.checkpoint);
}

#[test]
fn training_rejects_bad_inputs() {
    let d = data();
    let wrong_arch = ArchConfig::desk(32, 32);
    assert!(matches!(
        train(&small_run(2), &setup(), d, &wrong_arch, None),
        Err(TrainError::Data(_))
    ));
    let greedy = TrainConfig {
        probe_per_domain: 10_000,
        ..small_run(2)
    };
    assert!(matches!(
        train(&greedy, &setup(), d, &ArchConfig::desk(HW, HW), None),
        Err(TrainError::Data(_))
    ));
}

#[test]
fn non_finite_losses_name_the_term() {
    let b = LossBreakdown {
        adv: f64::NAN,
        ..Default::default()
    };
    let err = check_finite(&b, 12).unwrap_err();
    assert!(matches!(
        err,
        TrainError::NonFinite {
            term: "loss_adv",
            iter: 12
        }
    ));
    assert!(err.to_string().contains("loss_adv"));
}

#[test]
fn smoke_run_reduces_the_instance_loss() {
    let d = data();
    let cfg = TrainConfig {
        total_iterations: 200,
        adversarial_warmup: 100,
        decay_period: 100,
        log_period: 1,
        probe_per_domain: 8,
        ..Default::default()
    };
    let out = train(&cfg, &setup(), d, &ArchConfig::desk(HW, HW), None).unwrap();
    let l: Vec<f64> = out.metrics.iter().map(|r| r.loss_inst_sim).collect();
    let window = |s: usize| l[s..s + 50].iter().sum::<f64>() / 50.0;
    let (first, last) = (window(0), window(150));
    assert!(last < first, "smoothed instance loss {first} -> {last}");
}
