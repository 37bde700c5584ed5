//! Plan files and the `run-plan` driver.

use std::fs;
use std::path::{Path, PathBuf};

use moekd_core::data::{student_config, GridConfig, PreferencePair, Sample};
use moekd_core::eval::{eval_utilization, EvalConfig, EvalSet};
use moekd_core::pipeline::{execute_plan, DataRegistry, StageConfig, StageDataset, StagePlan, SyntheticRegistry};
use moekd_core::{Mllm, ModelConfig, MoeConfig};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::jsonl;
use crate::metrics;

fn default_moe() -> MoeConfig {
    MoeConfig::E4T2
}

fn default_samples() -> usize {
    512
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub seed: u64,
    #[serde(default = "student_config")]
    pub student: ModelConfig,
    /// Resolved relative to the plan file.
    pub teacher_ckpt: PathBuf,
    #[serde(default = "default_moe")]
    pub moe: MoeConfig,
    /// Size of each synthetic training set.
    #[serde(default = "default_samples")]
    pub samples_per_stage: usize,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    pub stages: Vec<StageConfig>,
}

impl PlanFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn stage_plan(&self) -> StagePlan {
        StagePlan {
            stages: self.stages.clone(),
            moe: self.moe,
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Record {
    Pair(PreferencePair),
    Sample(Sample),
}

/// Built-in synthetic datasets plus `*.jsonl` files relative to `base`.
pub struct FileRegistry {
    pub base: PathBuf,
    pub synthetic: SyntheticRegistry,
}

impl FileRegistry {
    fn load_file(&self, id: &str) -> Result<StageDataset> {
        let records: Vec<Record> = jsonl::read(&self.base.join(id))?;
        let (mut samples, mut pairs) = (Vec::new(), Vec::new());
        for r in records {
            match r {
                Record::Pair(p) => pairs.push(p),
                Record::Sample(s) => samples.push(s),
            }
        }
        match (samples.is_empty(), pairs.is_empty()) {
            (false, true) => Ok(StageDataset::Samples(samples)),
            (true, false) => Ok(StageDataset::Pairs(pairs)),
            (true, true) => Err(Error::Config(format!("dataset {id} is empty"))),
            (false, false) => Err(Error::Config(format!("dataset {id} mixes samples and pairs"))),
        }
    }
}

impl DataRegistry for FileRegistry {
    fn dataset(&self, id: &str) -> moekd_core::Result<StageDataset> {
        if id.ends_with(".jsonl") {
            return self
                .load_file(id)
                .map_err(|e| moekd_core::Error::InvalidConfig(e.to_string()));
        }
        self.synthetic.dataset(id)
    }
}

/// Hashes of everything a plan run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub teacher_hash: Option<String>,
    pub stage_hashes: Vec<String>,
    pub final_hash: String,
}

/// Runs a plan file, writing `stage_<n>.ckpt`, `metrics.csv`,
/// `summary.json`, `report.json`, `run.json` and, for a sparse final model,
/// `utilization.csv` into `out`.
pub fn run_plan(plan_path: &Path, out: &Path, seed: Option<u64>) -> Result<RunRecord> {
    let plan = PlanFile::load(plan_path)?;
    let seed = seed.unwrap_or(plan.seed);
    let base = plan_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let stage_plan = plan.stage_plan();
    stage_plan.validate()?;

    let teacher_path = base.join(&plan.teacher_ckpt);
    let teacher = if stage_plan.needs_teacher() {
        Some(checkpoint::load(&teacher_path)?)
    } else {
        None
    };
    let teacher_hash = teacher.as_ref().map(checkpoint::hash);

    let student = Mllm::<f32>::new(ModelConfig { seed, ..plan.student })?;
    let registry = FileRegistry {
        base,
        synthetic: SyntheticRegistry {
            seed,
            n_samples: plan.samples_per_stage,
            grid: plan.grid,
        },
    };
    let eval = EvalSet::synthetic(&plan.eval, &plan.grid)?;

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut stage_hashes = Vec::new();
    let mut io_error = None;
    let outcome = execute_plan(&stage_plan, student, teacher.as_ref(), &registry, Some(&eval), &mut |n, _, model, _| {
        let path = out.join(format!("stage_{n}.ckpt"));
        if let Err(e) = checkpoint::save(model, &path) {
            io_error = Some(e);
            return Err(moekd_core::Error::InvalidConfig(format!("cannot write {}", path.display())));
        }
        stage_hashes.push(checkpoint::hash(model));
        Ok(())
    });
    if let Some(e) = io_error {
        return Err(e);
    }
    let outcome = outcome?;

    if let (Some(t), Some(h)) = (&teacher, &teacher_hash) {
        if &checkpoint::hash(t) != h {
            return Err(Error::Config("teacher changed during the plan".into()));
        }
    }

    metrics::write(&out.join("metrics.csv"), &metrics::csv(&outcome.report.rows()))?;
    metrics::write(&out.join("summary.json"), &metrics::summary_json(&metrics::summary(&outcome.report)))?;
    let report = serde_json::to_string_pretty(&outcome.report).expect("report serializes") + "\n";
    metrics::write(&out.join("report.json"), &report)?;
    if outcome.model.is_sparse() {
        let stats = eval_utilization(&outcome.model, &eval.samples)?;
        metrics::write(&out.join("utilization.csv"), &metrics::utilization_csv(&stats))?;
    }
    let record = RunRecord {
        seed,
        teacher_hash,
        final_hash: checkpoint::hash(&outcome.model),
        stage_hashes,
    };
    let json = serde_json::to_string_pretty(&record).expect("record serializes") + "\n";
    metrics::write(&out.join("run.json"), &json)?;
    Ok(record)
}
