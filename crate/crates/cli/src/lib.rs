//! Argument handling for the `graspda` binary.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use graspda::config::ExperimentFile;
use graspda::datapipe::{
    collect_indiscriminate, label_stats, read_dataset, relabel_dataset, write_dataset, CollectPolicy,
};
use graspda::eval::{run_eval, EvalReport};
use graspda::graspnet::{gradient_check, load_checkpoint, ArchConfig, Task};
use graspda::pipeline::{collect_config, evaluate_run, run_full, train_method, write_reports};
use graspda::simenv::{Domain, EnvConfig};
use graspda::trainer::{Ablation, TrainingData};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Largest relative gradient error `gradcheck` accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(
    name = "graspda",
    version,
    about = "Instance grasping with domain-adversarial transfer at desk scale"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DomainArg {
    Sim,
    Realproxy,
}

impl From<DomainArg> for Domain {
    fn from(d: DomainArg) -> Self {
        match d {
            DomainArg::Sim => Domain::Sim,
            DomainArg::Realproxy => Domain::RealProxy,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CollectTask {
    Indiscriminate,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PolicyArg {
    Random,
    Cem,
    /// Random for the first half of the episodes, CEM for the rest.
    Mixed,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    Instance,
    Indiscriminate,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Instance => Task::Instance,
            TaskArg::Indiscriminate => Task::Indiscriminate,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Collect indiscriminate grasping episodes.
    Collect {
        #[arg(long, value_enum)]
        domain: DomainArg,
        #[arg(long, value_enum, default_value = "indiscriminate")]
        task: CollectTask,
        #[arg(long)]
        episodes: usize,
        #[arg(long, value_enum, default_value = "random")]
        policy: PolicyArg,
        /// Network for the `cem` and `mixed` policies.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Episode `i` uses scene seed `seed + i`.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Image size, texture seed and policy settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn successful simulated episodes into instance episodes.
    Relabel {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one method.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data_sim_ind: PathBuf,
        #[arg(long)]
        data_real_ind: PathBuf,
        #[arg(long)]
        data_sim_inst: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// three_tower, two_tower, no_constant_mask or indiscriminate_only.
        #[arg(long, default_value = "three_tower")]
        ablation: String,
    },
    /// Evaluate one checkpoint on held-out scenes.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "model")]
        method: String,
        #[arg(long, value_enum, default_value = "instance")]
        task: TaskArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate all four methods on paired scenes. Without --checkpoints,
    /// collects data and trains every method under --out first.
    Matrix {
        #[arg(long)]
        config: PathBuf,
        /// Run directory holding `<method>/checkpoints/final.ckpt`.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the full network's gradients.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Square image side of the checked network.
        #[arg(long, default_value_t = 16)]
        size: usize,
        /// Coordinates sampled per parameter tensor.
        #[arg(long, default_value_t = 6)]
        coords: usize,
    },
}

type Outcome = Result<(), String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn load_config(path: &Path) -> Result<ExperimentFile, String> {
    ExperimentFile::load(path).map_err(|e| format!("{}: {e}", path.display()))
}

/// Copies the config next to the outputs so the run can be reproduced.
fn copy_config(config: &Path, out: &Path) -> Outcome {
    std::fs::create_dir_all(out).map_err(|e| format!("{}: {e}", out.display()))?;
    std::fs::copy(config, out.join("config.txt")).map_err(|e| format!("{}: {e}", config.display()))?;
    Ok(())
}

fn print_reports(reports: &[EvalReport]) {
    for r in reports {
        println!(
            "{}: {}/{} instance successes ({:.3}), {} wrong object, {} failed",
            r.method, r.instance_successes, r.trials, r.instance_success_rate, r.wrong_object_grasps, r.failed_grasps
        );
    }
}

fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Collect {
            domain,
            task: CollectTask::Indiscriminate,
            episodes,
            policy,
            checkpoint,
            seed,
            config,
            out,
        } => {
            let file = match &config {
                Some(p) => load_config(p)?,
                None => ExperimentFile::default(),
            };
            let cfg = collect_config(&file);
            let net = match (&checkpoint, policy) {
                (_, PolicyArg::Random) => None,
                (Some(p), _) => Some(load_checkpoint(p).map_err(|e| format!("{}: {e}", p.display()))?.net),
                (None, _) => return Err("--policy cem and mixed need --checkpoint".into()),
            };
            let policy = match (policy, &net) {
                (PolicyArg::Cem, Some(n)) => CollectPolicy::Cem(n),
                (PolicyArg::Mixed, Some(n)) => CollectPolicy::Mixed(n),
                _ => CollectPolicy::Random,
            };
            let ds = collect_indiscriminate(policy, episodes, domain.into(), seed, &cfg).map_err(err)?;
            write_dataset(&ds, &out).map_err(err)?;
            let s = label_stats(&ds);
            println!(
                "wrote {} episodes ({} successful) to {}",
                s.count,
                s.positives,
                out.display()
            );
            Ok(())
        }
        Command::Relabel { input, out } => {
            let ds = read_dataset(&input).map_err(err)?;
            let inst = relabel_dataset(&ds, &EnvConfig::default()).map_err(err)?;
            write_dataset(&inst, &out).map_err(err)?;
            let s = label_stats(&inst);
            println!(
                "wrote {} instance episodes ({} positive) to {}",
                s.count,
                s.positives,
                out.display()
            );
            Ok(())
        }
        Command::Train {
            config,
            data_sim_ind,
            data_real_ind,
            data_sim_inst,
            out,
            ablation,
        } => {
            let file = load_config(&config)?;
            let ablation: Ablation = ablation.parse().map_err(err)?;
            let data = TrainingData {
                sim_indiscriminate: read_dataset(&data_sim_ind).map_err(err)?,
                real_indiscriminate: read_dataset(&data_real_ind).map_err(err)?,
                sim_instance: read_dataset(&data_sim_inst).map_err(err)?,
            };
            copy_config(&config, &out)?;
            let o = train_method(&file, ablation, &data, Some(&out)).map_err(err)?;
            if let Some(last) = o.metrics.last() {
                println!("{}", graspda::trainer::METRICS_HEADER);
                println!("{}", last.csv_line());
            }
            println!(
                "final checkpoint: {}",
                out.join("checkpoints").join("final.ckpt").display()
            );
            Ok(())
        }
        Command::Eval {
            config,
            checkpoint,
            method,
            task,
            out,
        } => {
            let file = load_config(&config)?;
            copy_config(&config, &out)?;
            let mut exp = file.experiment();
            exp.checkpoint = checkpoint;
            let report = run_eval(&method, task.into(), &exp).map_err(err)?;
            write_reports(std::slice::from_ref(&report), &out).map_err(err)?;
            print_reports(&[report]);
            Ok(())
        }
        Command::Matrix {
            config,
            checkpoints,
            out,
        } => {
            let file = load_config(&config)?;
            copy_config(&config, &out)?;
            let reports = match checkpoints {
                Some(dir) => evaluate_run(&file, &dir, &out),
                None => run_full(&file, &out),
            }
            .map_err(err)?;
            print_reports(&reports);
            println!("report: {}", out.join("report.csv").display());
            Ok(())
        }
        Command::Gradcheck { seed, size, coords } => {
            let arch = ArchConfig::desk(size, size);
            let r = gradient_check(&arch, seed, coords).map_err(err)?;
            println!(
                "max relative error {:.3e} over {} coordinates",
                r.max_rel_error, r.coordinates_checked
            );
            if r.max_rel_error < GRADCHECK_TOLERANCE {
                Ok(())
            } else {
                Err(format!(
                    "gradient check failed: {:.3e} >= {GRADCHECK_TOLERANCE:e}",
                    r.max_rel_error
                ))
            }
        }
    }
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(msg) => {
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
    }
}
