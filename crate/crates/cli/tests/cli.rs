use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
image_size = 16
sim_episodes = 40
real_episodes = 40
total_iterations = 6
adversarial_warmup = 2
log_period = 2
checkpoint_period = 4
batch_per_domain = 2
probe_per_domain = 4
cem_iterations = 1
samples_per_iteration = 8
max_steps = 2
n_trials = 3
";

fn graspda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graspda")).args(args).output().unwrap()
}

fn code(args: &[&str]) -> i32 {
    graspda(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["gradcheck", "--bogus"]), 1);
    assert_eq!(
        code(&["collect", "--domain", "mars", "--episodes", "1", "--out", "x"]),
        1
    );
    let o = graspda(&["frobnicate"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn help_exits_zero_for_every_subcommand() {
    assert_eq!(code(&["--help"]), 0);
    for sub in ["collect", "relabel", "train", "eval", "matrix", "gradcheck"] {
        let o = graspda(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"), "{sub}");
    }
}

#[test]
fn gradcheck_passes() {
    let o = graspda(&["gradcheck", "--seed", "0"]);
    assert_eq!(o.status.code(), Some(0));
    let out = String::from_utf8_lossy(&o.stdout);
    let err: f64 = out
        .split_whitespace()
        .nth(3)
        .and_then(|t| t.parse().ok())
        .unwrap_or_else(|| panic!("unexpected output: {out}"));
    assert!(err < 1e-4);
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.gad");
    let o = dir.path().join("o");
    assert_eq!(code(&["relabel", "--in", s(&missing), "--out", s(&o)]), 2);
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let o = graspda(&["matrix", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_key"));
    assert_eq!(
        code(&[
            "collect",
            "--domain",
            "sim",
            "--episodes",
            "2",
            "--policy",
            "cem",
            "--out",
            s(&missing)
        ]),
        2
    );
}

#[test]
fn collect_relabel_train_eval_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let (sim, real, inst) = (d.join("sim.gad"), d.join("real.gad"), d.join("inst.gad"));
    let c = s(&cfg);
    assert_eq!(
        code(&[
            "collect",
            "--domain",
            "sim",
            "--episodes",
            "40",
            "--config",
            c,
            "--out",
            s(&sim)
        ]),
        0
    );
    assert_eq!(
        code(&[
            "collect",
            "--domain",
            "realproxy",
            "--episodes",
            "40",
            "--seed",
            "900",
            "--config",
            c,
            "--out",
            s(&real)
        ]),
        0
    );
    assert_eq!(code(&["relabel", "--in", s(&sim), "--out", s(&inst)]), 0);
    // real-proxy episodes cannot be relabeled
    let x = d.join("x.gad");
    assert_eq!(code(&["relabel", "--in", s(&real), "--out", s(&x)]), 2);

    let runs = d.join("runs");
    for method in ["indiscriminate_only", "two_tower", "no_constant_mask", "three_tower"] {
        let out = runs.join(method);
        let args = [
            "train",
            "--config",
            c,
            "--data-sim-ind",
            s(&sim),
            "--data-real-ind",
            s(&real),
            "--data-sim-inst",
            s(&inst),
            "--out",
            s(&out),
            "--ablation",
            method,
        ];
        assert_eq!(code(&args), 0, "{method}");
        let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
        assert!(metrics
            .starts_with("iter,lr,loss_total,loss_inst_sim,loss_ind_real,loss_ind_sim,loss_adv,domain_acc_probe\n"));
        assert_eq!(metrics.lines().count(), 4);
        assert!(out.join("checkpoints/iter_0000004.ckpt").is_file());
        assert_eq!(std::fs::read_to_string(out.join("config.txt")).unwrap(), TINY);
    }
    let bad_out = d.join("bad");
    let bad = [
        "train",
        "--config",
        c,
        "--data-sim-ind",
        s(&sim),
        "--data-real-ind",
        s(&real),
        "--data-sim-inst",
        s(&inst),
        "--out",
        s(&bad_out),
        "--ablation",
        "four_tower",
    ];
    assert_eq!(code(&bad), 2);

    let ev = d.join("eval");
    let ckpt = runs.join("three_tower/checkpoints/final.ckpt");
    assert_eq!(
        code(&[
            "eval",
            "--config",
            c,
            "--checkpoint",
            s(&ckpt),
            "--method",
            "three_tower",
            "--out",
            s(&ev)
        ]),
        0
    );
    let csv = std::fs::read_to_string(ev.join("report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,trials,instance_success,wrong_object,failed,rate");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("three_tower,3,"));
    assert!(ev.join("report.json").is_file());

    let m = d.join("matrix");
    assert_eq!(
        code(&["matrix", "--config", c, "--checkpoints", s(&runs), "--out", s(&m)]),
        0
    );
    let csv = std::fs::read_to_string(m.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);

    std::fs::remove_file(runs.join("two_tower/checkpoints/final.ckpt")).unwrap();
    let o = graspda(&["matrix", "--config", c, "--checkpoints", s(&runs), "--out", s(&m)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("two_tower"));
}

#[test]
fn matrix_without_checkpoints_runs_everything() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("run");
    assert_eq!(code(&["matrix", "--config", s(&cfg), "--out", s(&out)]), 0);
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let methods: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        methods,
        ["indiscriminate_only", "two_tower", "no_constant_mask", "three_tower"]
    );
    for f in ["sim_ind.gad", "real_ind.gad", "sim_inst.gad"] {
        assert!(out.join("data").join(f).is_file());
    }
    assert!(out.join("config.txt").is_file());
}
