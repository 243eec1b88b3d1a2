//! The five pipeline stages. Each writes into its own directory under the
//! configured output root:
//!
//! | command    | directory   | reads                         |
//! |------------|-------------|-------------------------------|
//! | `gen`      | `dataset/`  | nothing                       |
//! | `train`    | `train/`    | `dataset/`                    |
//! | `evolve`   | `evolve/`   | `dataset/`                    |
//! | `simulate` | `simulate/` | `train/model.json`, `dataset/` |
//! | `eval`     | `eval/`     | `train/model.json`, `dataset/` |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use datesort_core::adaptor::ab_compare;
use datesort_core::evalmetrics::{write_report, RateSet};
use datesort_core::evolver::{run_ga, CvFitness};
use datesort_core::neuralmodel::{TrainReport, TrainingSample};
use datesort_core::pipeline::{
    prepare_all, stratified_split, to_training_sample, train_pipeline, Evaluation, Pipeline,
};
use datesort_core::preprocess::CalibrationReference;
use datesort_core::synthcrop::store::{read_dataset, write_dataset};
use datesort_core::synthcrop::{generate_dataset, sensor_reference, FruitSample};
use serde::Serialize;

use crate::config::{labels, RunConfig};
use crate::error::{CliError, Result};
use crate::manifest::{RunManifest, Stage};

/// Smallest held-out split `eval` accepts.
pub const MIN_EVAL_SAMPLES: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Gen,
    Train,
    Evolve,
    Simulate,
    Eval,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Train => "train",
            Command::Evolve => "evolve",
            Command::Simulate => "simulate",
            Command::Eval => "eval",
        }
    }

    pub fn stage_dir(self) -> &'static str {
        match self {
            Command::Gen => "dataset",
            other => other.name(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Invocation {
    pub command: Command,
    pub config: RunConfig,
    pub force: bool,
    /// Dataset directory; defaults to `<out>/dataset`.
    pub dataset: Option<PathBuf>,
    /// Model file; defaults to `<out>/train/model.json`.
    pub model: Option<PathBuf>,
}

impl Invocation {
    pub fn new(command: Command, config: RunConfig) -> Self {
        Self {
            command,
            config,
            force: false,
            dataset: None,
            model: None,
        }
    }

    pub fn stage_path(&self) -> PathBuf {
        self.config.out.join(self.command.stage_dir())
    }

    fn dataset_path(&self) -> PathBuf {
        self.dataset
            .clone()
            .unwrap_or_else(|| self.config.out.join(Command::Gen.stage_dir()))
    }

    fn model_path(&self) -> PathBuf {
        self.model
            .clone()
            .unwrap_or_else(|| self.config.out.join(Command::Train.stage_dir()).join("model.json"))
    }
}

pub fn execute(inv: &Invocation) -> Result<RunManifest> {
    inv.config.validate()?;
    let config_json = inv.config.to_json()?;
    let mut stage = Stage::open(inv.stage_path(), inv.command.name(), inv.force)?;
    match inv.command {
        Command::Gen => gen(inv, &mut stage)?,
        Command::Train => train(inv, &mut stage)?,
        Command::Evolve => evolve(inv, &mut stage)?,
        Command::Simulate => simulate(inv, &mut stage)?,
        Command::Eval => eval(inv, &mut stage)?,
    }
    stage.finish(&config_json)
}

fn pretty(value: &impl Serialize) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn gen(inv: &Invocation, stage: &mut Stage) -> Result<()> {
    let cfg = &inv.config;
    let spec = cfg.dataset_spec();
    let samples = stage.time("generate", || generate_dataset(&spec, &cfg.dataset.sim))?;
    let echo = serde_json::json!({
        "seed": cfg.seed,
        "dataset": cfg.dataset,
        "spec": spec,
    });
    let dir = stage.dir().to_path_buf();
    let files = stage.time("write", || write_dataset(&dir, &samples, &sensor_reference(), echo))?;
    stage.record(files);
    log::info!("gen: {} samples in {}", samples.len(), dir.display());
    Ok(())
}

struct Loaded {
    reference: CalibrationReference,
    train: Vec<FruitSample>,
    eval: Vec<FruitSample>,
}

fn load_split(inv: &Invocation, stage: &mut Stage) -> Result<Loaded> {
    let path = inv.dataset_path();
    stage.input(&path);
    let (manifest, samples) = stage.time("load dataset", || read_dataset(&path))?;
    let (train_idx, eval_idx) = stratified_split(
        &samples,
        inv.config.split.eval_fraction,
        inv.config.derived_seed(labels::SPLIT),
    )?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    Ok(Loaded {
        reference: manifest.reference,
        train: pick(&train_idx),
        eval: pick(&eval_idx),
    })
}

fn load_model(inv: &Invocation, stage: &mut Stage) -> Result<Pipeline> {
    let path = inv.model_path();
    stage.input(&path);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    Pipeline::from_json(&text).map_err(|e| CliError::Core(datesort_core::Error::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    }))
}

fn loss_csv(report: &TrainReport) -> String {
    let mut out = String::from("epoch,total,variety,spoilage,shelf_life\n");
    for e in &report.epochs {
        let _ = writeln!(out, "{},{},{},{},{}", e.epoch, e.total, e.variety, e.spoilage, e.shelf_life);
    }
    out
}

fn write_model(stage: &mut Stage, pipeline: &Pipeline, report: &TrainReport) -> Result<()> {
    stage.write("model.json", pipeline.to_json()?)?;
    stage.write("train_report.json", pretty(report)?)?;
    stage.write("loss.csv", loss_csv(report))
}

fn train(inv: &Invocation, stage: &mut Stage) -> Result<()> {
    let data = load_split(inv, stage)?;
    let model_config = inv.config.model_config();
    let (pipeline, report) = stage.time("train", || {
        train_pipeline(&data.train, &data.reference, &inv.config.preprocess, &model_config)
    })?;
    write_model(stage, &pipeline, &report)?;
    let ids = |s: &[FruitSample]| s.iter().map(|x| x.id).collect::<Vec<_>>();
    stage.write(
        "split.json",
        pretty(&serde_json::json!({ "train": ids(&data.train), "eval": ids(&data.eval) }))?,
    )?;
    Ok(())
}

fn evolve(inv: &Invocation, stage: &mut Stage) -> Result<()> {
    let cfg = &inv.config;
    let data = load_split(inv, stage)?;
    let subset: Vec<FruitSample> = match cfg.evolve.sample_limit {
        Some(n) if n < data.train.len() => {
            let fraction = n as f64 / data.train.len() as f64;
            let (_, keep) =
                stratified_split(&data.train, fraction, cfg.derived_seed(labels::EVOLVE_SUBSET))?;
            keep.into_iter().map(|i| data.train[i].clone()).collect()
        }
        _ => data.train.clone(),
    };
    let base = cfg.evolve_base_model();
    let prepared = stage.time("prepare", || {
        prepare_all(&subset, &data.reference, &cfg.preprocess, (base.input_height, base.input_width))
    })?;
    let fit_data: Vec<TrainingSample> = subset
        .iter()
        .zip(prepared)
        .map(|(s, p)| to_training_sample(s, p))
        .collect();
    let ga = cfg.ga_config();
    let fitness = CvFitness::new(&fit_data, base, ga.k);
    let report = stage.time("search", || run_ga(&fitness, &ga))?;
    stage.write("ga_report.json", report.to_json()?)?;
    stage.write("ga_report.csv", report.to_csv())?;
    stage.write("best_genome.json", pretty(&report.best_genome)?)?;
    let final_config = report.best_genome.model_config(&cfg.model_config());
    let (pipeline, train_report) = stage.time("retrain best", || {
        train_pipeline(&data.train, &data.reference, &cfg.preprocess, &final_config)
    })?;
    write_model(stage, &pipeline, &train_report)
}

fn simulate(inv: &Invocation, stage: &mut Stage) -> Result<()> {
    let cfg = &inv.config;
    let pipeline = load_model(inv, stage)?;
    let data = load_split(inv, stage)?;
    let sim = &cfg.simulate;
    let (summary, adaptive, frozen) = stage.time("a/b runs", || {
        ab_compare(
            &pipeline,
            &data.eval,
            &sim.drift,
            &sim.adapt,
            cfg.derived_seed(labels::SIMULATE),
            sim.tail_steps,
        )
    })?;
    stage.write("adaptive_log.csv", adaptive.log_csv())?;
    stage.write("frozen_log.csv", frozen.log_csv())?;
    stage.write("qtable.json", adaptive.qtable.to_json()?)?;
    stage.write("summary.json", pretty(&summary)?)?;
    stage.write(
        "summary.csv",
        format!(
            "steps,tail_steps,drift_enabled,baseline_accuracy,adaptive_accuracy,gap_points\n{},{},{},{},{},{}\n",
            summary.steps,
            summary.tail_steps,
            summary.drift_enabled,
            summary.baseline_accuracy,
            summary.adaptive_accuracy,
            summary.gap_points
        ),
    )?;
    log::info!(
        "simulate: baseline {:.4}, adaptive {:.4}, gap {:+.2} points",
        summary.baseline_accuracy,
        summary.adaptive_accuracy,
        summary.gap_points
    );
    Ok(())
}

/// Human-readable table with the row names used for the headline results.
pub fn summary_table(ev: &Evaluation) -> String {
    let m = &ev.metrics;
    let v: &RateSet = &m.variety.metrics.macro_avg;
    let s: RateSet = m.spoilage.metrics.binary.unwrap_or_default();
    let spoil_auc = m.spoilage.roc.as_ref().map(|r| format!("{:.4}", r.auc));
    let rows = [
        ("Accuracy", m.variety.metrics.accuracy, Some(format!("{:.4}", m.spoilage.metrics.accuracy))),
        ("Precision", v.precision, Some(format!("{:.4}", s.precision))),
        ("Recall", v.recall, Some(format!("{:.4}", s.recall))),
        ("F1-Score", v.f1, Some(format!("{:.4}", s.f1))),
        ("Specificity", v.specificity, Some(format!("{:.4}", s.specificity))),
        ("AUC-ROC", m.variety.macro_auc, spoil_auc),
    ];
    let mut out = format!("{:<24}{:>10}{:>10}\n", "Metric", "Variety", "Spoilage");
    for (name, var, sp) in rows {
        let _ = writeln!(out, "{name:<24}{var:>10.4}{:>10}", sp.unwrap_or_else(|| "n/a".into()));
    }
    let _ = writeln!(out, "{:<24}{:>10.2}", "Shelf-life MAE (days)", m.shelf_life_mae_days);
    out
}

fn eval(inv: &Invocation, stage: &mut Stage) -> Result<()> {
    let pipeline = load_model(inv, stage)?;
    let data = load_split(inv, stage)?;
    if data.eval.len() < MIN_EVAL_SAMPLES {
        return Err(CliError::Invalid(format!(
            "split: eval_fraction {} leaves {} evaluation samples, need at least {MIN_EVAL_SAMPLES}",
            inv.config.split.eval_fraction,
            data.eval.len()
        )));
    }
    let evaluation = stage.time("evaluate", || pipeline.evaluate(&data.eval))?;
    let dir = stage.dir().to_path_buf();
    stage.record(write_report(&dir, &evaluation.metrics)?);
    stage.write("chemistry.json", pretty(&evaluation.chemistry)?)?;
    let table = summary_table(&evaluation);
    stage.write("summary.txt", &table)?;
    log::info!("eval:\n{table}");
    Ok(())
}

/// Path of a stage directory under `out`.
pub fn stage_dir(out: &Path, command: Command) -> PathBuf {
    out.join(command.stage_dir())
}
