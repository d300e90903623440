//! End-to-end runs driven by an [`ExperimentFile`]: collect, relabel, train
//! every method, evaluate them on paired scenes.
//!
//! Layout of a run directory:
//!
//! ```text
//! <out>/data/{sim_ind,real_ind,sim_inst}.gad
//! <out>/<method>/metrics.csv
//! <out>/<method>/checkpoints/{iter_NNNNNNN,final}.ckpt
//! <out>/report.csv, <out>/report.json
//! ```

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::ExperimentFile;
use crate::datapipe::{
    collect_indiscriminate, read_dataset, relabel_dataset, write_dataset, CollectConfig, CollectPolicy, DataError,
};
use crate::eval::{export_metrics, run_matrix, EvalError, EvalReport, MatrixEntry, ReportFormat};
use crate::simenv::{Domain, EnvConfig};
use crate::trainer::{make_ablation, train, Ablation, TrainError, TrainOutcome, TrainingData};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub const SIM_IND_FILE: &str = "sim_ind.gad";
pub const REAL_IND_FILE: &str = "real_ind.gad";
pub const SIM_INST_FILE: &str = "sim_inst.gad";

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|source| PipelineError::Io {
        path: p.to_path_buf(),
        source,
    })
}

pub fn collect_config(file: &ExperimentFile) -> CollectConfig {
    CollectConfig {
        env: EnvConfig::default(),
        height: file.image_size,
        width: file.image_size,
        texture_seed: file.texture_seed,
        real_proxy: file.real_proxy,
        policy: file.policy.clone(),
    }
}

/// Random-policy collection in both domains plus the relabeled instance set.
pub fn collect_training_data(file: &ExperimentFile) -> Result<TrainingData> {
    let cfg = collect_config(file);
    let sim = collect_indiscriminate(
        CollectPolicy::Random,
        file.sim_episodes,
        Domain::Sim,
        file.sim_seed,
        &cfg,
    )?;
    let real = collect_indiscriminate(
        CollectPolicy::Random,
        file.real_episodes,
        Domain::RealProxy,
        file.real_seed,
        &cfg,
    )?;
    let inst = relabel_dataset(&sim, &cfg.env)?;
    Ok(TrainingData {
        sim_indiscriminate: sim,
        real_indiscriminate: real,
        sim_instance: inst,
    })
}

pub fn save_training_data(data: &TrainingData, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write_dataset(&data.sim_indiscriminate, dir.join(SIM_IND_FILE))?;
    write_dataset(&data.real_indiscriminate, dir.join(REAL_IND_FILE))?;
    write_dataset(&data.sim_instance, dir.join(SIM_INST_FILE))?;
    Ok(())
}

pub fn load_training_data(dir: &Path) -> Result<TrainingData> {
    Ok(TrainingData {
        sim_indiscriminate: read_dataset(dir.join(SIM_IND_FILE))?,
        real_indiscriminate: read_dataset(dir.join(REAL_IND_FILE))?,
        sim_instance: read_dataset(dir.join(SIM_INST_FILE))?,
    })
}

/// Trains one method with the file's loss weights.
pub fn train_method(
    file: &ExperimentFile,
    ablation: Ablation,
    data: &TrainingData,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut setup = make_ablation(ablation.name())?;
    setup.weights = file.weights;
    if let Some(d) = out_dir {
        create_dir(d)?;
    }
    Ok(train(&file.train, &setup, data, &file.arch(), out_dir)?)
}

/// Final checkpoint of `method` under a run directory.
pub fn final_checkpoint(root: &Path, method: &str) -> PathBuf {
    root.join(method).join("checkpoints").join("final.ckpt")
}

/// One matrix entry per method, in `Ablation::ALL` order.
pub fn matrix_entries(root: &Path) -> Vec<MatrixEntry> {
    Ablation::ALL
        .into_iter()
        .map(|a| MatrixEntry {
            method: a.name().to_string(),
            checkpoint: final_checkpoint(root, a.name()),
            task: a.eval_task(),
        })
        .collect()
}

/// Evaluates existing checkpoints under `checkpoints` and writes
/// `report.csv` and `report.json` into `out`.
pub fn evaluate_run(file: &ExperimentFile, checkpoints: &Path, out: &Path) -> Result<Vec<EvalReport>> {
    let reports = run_matrix(&matrix_entries(checkpoints), &file.experiment())?;
    write_reports(&reports, out)?;
    Ok(reports)
}

pub fn write_reports(reports: &[EvalReport], out: &Path) -> Result<()> {
    create_dir(out)?;
    export_metrics(reports, out.join("report.csv"), ReportFormat::Csv)?;
    export_metrics(reports, out.join("report.json"), ReportFormat::Json)?;
    Ok(())
}

/// Collects, trains every method and evaluates the matrix under `out`.
pub fn run_full(file: &ExperimentFile, out: &Path) -> Result<Vec<EvalReport>> {
    let data = collect_training_data(file)?;
    save_training_data(&data, &out.join("data"))?;
    for a in Ablation::ALL {
        train_method(file, a, &data, Some(&out.join(a.name())))?;
    }
    evaluate_run(file, out, out)
}
