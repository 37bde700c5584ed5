//! The `moekd` command line.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use moekd_core::data::{gen_preference_pairs, gen_samples, CorruptionMix, GridConfig, TaskMix};
use moekd_core::eval::{
    eval_accuracy, eval_hallucination, eval_kl_to_teacher, eval_margin, eval_utilization, EvalConfig, EvalSet,
};
use moekd_core::pipeline::TeacherRecipe;
use moekd_core::Mllm;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::jsonl;
use crate::metrics;
use crate::plan;

#[derive(Debug, Parser)]
#[command(name = "moekd", version, about = "Progressive distillation of a tiny multimodal mixture-of-experts student")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset as JSON Lines.
    GenData(GenData),
    /// Train the teacher and save its checkpoint.
    TrainTeacher(TrainTeacher),
    /// Run a staged distillation plan.
    RunPlan(RunPlan),
    /// Evaluate a checkpoint.
    Eval(Eval),
    /// Re-render stored metrics as CSV and a JSON summary.
    Report(Report),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mix {
    Caption,
    Conversation,
    Multitask,
    Preference,
}

#[derive(Debug, Args)]
pub struct GenData {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, value_enum, default_value = "multitask")]
    pub mix: Mix,
    /// Grid configuration (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainTeacher {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Teacher recipe (JSON); overrides `--weak`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use the 1.5x-student variant instead of the 2x default.
    #[arg(long)]
    pub weak: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunPlan {
    /// Plan file (JSON).
    pub plan: Option<PathBuf>,
    /// Plan file, as an alternative to the positional argument.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the plan's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Kl,
    Acc,
    Hall,
    Util,
    Margin,
    All,
}

#[derive(Debug, Args)]
pub struct Eval {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Teacher checkpoint, required for `kl`, `margin` and `all`.
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    pub metric: Metric,
    /// Seed of the held-out evaluation set.
    #[arg(long, default_value_t = 1_000_003)]
    pub seed: u64,
    /// Held-out samples and preference pairs to draw.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Evaluation set configuration (JSON); overrides `--seed` and `--n`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV destination; a JSON summary is written next to it. Defaults to
    /// standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Report {
    /// `report.json` written by `run-plan`, or a metrics CSV.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for `metrics.csv` and `summary.json`; prints the CSV
    /// when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn emit(out: Option<&Path>, rows: &[(usize, String, f64)]) -> Result<()> {
    let csv = metrics::csv(rows);
    match out {
        Some(path) => {
            metrics::write(path, &csv)?;
            let summary = metrics::summary_json(&metrics::summary_from_rows(rows));
            metrics::write(&path.with_extension("json"), &summary)
        }
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn gen_data(a: &GenData) -> Result<()> {
    let grid: GridConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => GridConfig::default(),
    };
    let mix = match a.mix {
        Mix::Caption => TaskMix::CAPTION,
        Mix::Conversation => TaskMix::CONVERSATION,
        Mix::Multitask => TaskMix::MULTITASK,
        Mix::Preference => {
            let pairs = gen_preference_pairs(a.seed, a.n, &CorruptionMix::default(), &grid)?;
            return jsonl::write(&a.out, &pairs);
        }
    };
    jsonl::write(&a.out, &gen_samples(a.seed, a.n, &mix, &grid)?)
}

fn train_teacher(a: &TrainTeacher) -> Result<()> {
    let recipe = match &a.config {
        Some(p) => read_json(p)?,
        None if a.weak => TeacherRecipe::weak(a.seed),
        None => TeacherRecipe::standard(a.seed),
    };
    let outcome = recipe.train()?;
    checkpoint::save(&outcome.model, &a.out)?;
    println!(
        "teacher accuracy {:.4} after {} updates, sha256 {}",
        outcome.accuracy,
        outcome.updates,
        checkpoint::hash(&outcome.model)
    );
    Ok(())
}

fn run_plan(a: &RunPlan) -> Result<()> {
    let path = a
        .plan
        .as_ref()
        .or(a.config.as_ref())
        .ok_or_else(|| Error::Config("a plan file is required".into()))?;
    let record = plan::run_plan(path, &a.out, a.seed)?;
    println!("final checkpoint sha256 {}", record.final_hash);
    Ok(())
}

fn eval(a: &Eval) -> Result<()> {
    let model = checkpoint::load(&a.ckpt)?;
    let needs_teacher = matches!(a.metric, Metric::Kl | Metric::Margin | Metric::All);
    let teacher: Option<Mllm<f32>> = match (&a.teacher, needs_teacher) {
        (Some(p), _) => Some(checkpoint::load(p)?),
        (None, true) => return Err(Error::MissingArtifact("teacher checkpoint (--teacher)".into())),
        (None, false) => None,
    };
    let cfg: EvalConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => EvalConfig {
            n_samples: a.n,
            n_pairs: a.n,
            seed: a.seed,
            ..EvalConfig::default()
        },
    };
    let set = EvalSet::synthetic(&cfg, &GridConfig::default())?;
    let want = |m: Metric| a.metric == m || a.metric == Metric::All;
    let mut rows = Vec::new();
    if let (true, Some(t)) = (want(Metric::Kl), &teacher) {
        rows.push((0, "kl_to_teacher".to_string(), eval_kl_to_teacher(&model, t, &set.samples)?));
    }
    if want(Metric::Acc) {
        rows.push((0, "accuracy".to_string(), eval_accuracy(&model, &set.samples)?));
    }
    if want(Metric::Hall) {
        let h = eval_hallucination(&model, &set.probes())?;
        rows.push((0, "hallucination_rate".to_string(), h.resp_rate));
        rows.push((0, "mention_hallucination_rate".to_string(), h.ment_rate));
    }
    if let (true, Some(t)) = (want(Metric::Margin), &teacher) {
        rows.push((0, "mean_margin".to_string(), eval_margin(&model, t, &set.pairs, set.beta)?));
    }
    if want(Metric::Util) {
        let stats = eval_utilization(&model, &set.samples)?;
        if stats.is_empty() && a.metric == Metric::Util {
            return Err(Error::Config("utilization needs a sparse checkpoint".into()));
        }
        if !stats.is_empty() {
            let mean = stats.iter().map(|s| s.entropy).sum::<f64>() / stats.len() as f64;
            rows.push((0, "utilization_entropy".to_string(), mean));
            if let Some(out) = &a.out {
                let path = out.with_file_name(format!(
                    "{}_utilization.csv",
                    out.file_stem().and_then(|s| s.to_str()).unwrap_or("eval")
                ));
                metrics::write(&path, &metrics::utilization_csv(&stats))?;
            }
        }
    }
    emit(a.out.as_deref(), &rows)
}

fn report(a: &Report) -> Result<()> {
    let rows = if a.config.extension().is_some_and(|e| e == "csv") {
        let text = fs::read_to_string(&a.config).map_err(|e| Error::io(&a.config, e))?;
        metrics::parse_csv(&text)?
    } else {
        let report: moekd_core::eval::MetricsReport = read_json(&a.config)?;
        report.rows()
    };
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            metrics::write(&dir.join("metrics.csv"), &metrics::csv(&rows))?;
            let evals: Vec<_> = rows.iter().filter(|(_, m, _)| !m.ends_with("/loss") && !m.ends_with("/lr")).cloned().collect();
            metrics::write(&dir.join("summary.json"), &metrics::summary_json(&metrics::summary_from_rows(&evals)))
        }
        None => {
            print!("{}", metrics::csv(&rows));
            Ok(())
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::TrainTeacher(a) => train_teacher(a),
        Command::RunPlan(a) => run_plan(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
    }
}
