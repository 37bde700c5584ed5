//! Stage kinds, their freeze schedules, plans and the plan executor.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{encode_pair, gen_preference_pairs, gen_samples, CorruptionMix, EncodedSample, GridConfig, PreferencePair, Sample, TaskMix};
use crate::error::{Error, Result};
use crate::eval::{EvalRecord, EvalSet, MetricsReport};
use crate::losses::D2sWeights;
use crate::model::{Mllm, ParamGroup};
use crate::moe::MoeConfig;
use crate::pipeline::optim::AdamConfig;
use crate::pipeline::trainer::{train, Objective, TrainData, TrainSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    Init,
    D2d,
    D2s,
    Pd,
}

impl StageKind {
    pub const ALL: [StageKind; 4] = [Self::Init, Self::D2d, Self::D2s, Self::Pd];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Init => "init",
            Self::D2d => "d2d",
            Self::D2s => "d2s",
            Self::Pd => "pd",
        }
    }

    /// The parameter groups a stage of this kind may change.
    pub fn trainable_groups(self) -> &'static [ParamGroup] {
        match self {
            Self::Init => &[ParamGroup::Omega],
            Self::D2d => &[ParamGroup::Omega, ParamGroup::Phi],
            Self::D2s | Self::Pd => &[ParamGroup::Omega, ParamGroup::PhiE],
        }
    }

    pub fn default_lr(self) -> f64 {
        match self {
            Self::Init => 1e-4,
            Self::D2d | Self::D2s => 2e-5,
            Self::Pd => 2e-6,
        }
    }

    pub fn default_dataset(self) -> &'static str {
        match self {
            Self::Init => "caption",
            Self::D2d => "conversation",
            Self::D2s => "multitask",
            Self::Pd => "preference",
        }
    }

    pub fn needs_teacher(self) -> bool {
        self != Self::Init
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_warmup() -> f64 {
    0.03
}
fn one() -> f64 {
    1.0
}
fn default_beta() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub kind: StageKind,
    /// Optional; when present it must equal the kind's schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trainable_groups: Option<Vec<ParamGroup>>,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default = "default_warmup")]
    pub warmup_ratio: f64,
    pub dataset_id: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub ce_weight: f64,
    #[serde(default = "one")]
    pub kl_weight: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    /// Replace the stage's objective by plain cross-entropy on the same
    /// response tokens (the supervised baseline).
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub sft: bool,
}

impl StageConfig {
    pub fn new(kind: StageKind) -> Self {
        Self {
            kind,
            trainable_groups: None,
            lr: kind.default_lr(),
            batch_size: 32,
            epochs: 1,
            warmup_ratio: default_warmup(),
            dataset_id: kind.default_dataset().into(),
            seed: 0,
            ce_weight: 1.0,
            kl_weight: 1.0,
            beta: default_beta(),
            grad_clip: None,
            sft: false,
        }
    }

    pub fn groups(&self) -> &'static [ParamGroup] {
        self.kind.trainable_groups()
    }

    pub fn objective(&self) -> Objective {
        if self.sft {
            return Objective::Ce;
        }
        match self.kind {
            StageKind::Init => Objective::Ce,
            StageKind::D2d => Objective::Kl,
            StageKind::D2s => Objective::D2s(D2sWeights {
                ce: self.ce_weight,
                kl: self.kl_weight,
            }),
            StageKind::Pd => Objective::Dpo { beta: self.beta },
        }
    }

    pub fn settings(&self) -> TrainSettings {
        TrainSettings {
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            warmup_ratio: self.warmup_ratio,
            seed: self.seed,
            grad_clip: self.grad_clip,
            adam: AdamConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("{} stage: {m}", self.kind)));
        if let Some(groups) = &self.trainable_groups {
            let mut g = groups.clone();
            g.sort();
            g.dedup();
            if g != self.groups() {
                return bad(format!("trainable groups {groups:?} differ from {:?}", self.groups()));
            }
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return bad(format!("warmup_ratio {} outside [0, 1)", self.warmup_ratio));
        }
        for w in [self.ce_weight, self.kl_weight] {
            if !(w >= 0.0) || !w.is_finite() {
                return bad(format!("loss weight {w} must be non-negative"));
            }
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidBeta(self.beta));
        }
        if self.sft && self.kind == StageKind::Pd {
            return bad("the preference stage has no supervised variant".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip {c} must be positive"));
            }
        }
        Ok(())
    }
}

/// Stages in order with the expert layout used at the upcycle point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stages: Vec<StageConfig>,
    pub moe: MoeConfig,
}

impl StagePlan {
    /// Kinds must appear in Init, D2D, D2S, PD order, each at most once.
    /// Stages may be omitted, so a plan can stop after D2S.
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::StageOrderError("plan has no stages".into()));
        }
        self.moe.validate()?;
        for w in self.stages.windows(2) {
            if w[0].kind >= w[1].kind {
                return Err(Error::StageOrderError(format!("{} may not follow {}", w[1].kind, w[0].kind)));
            }
        }
        self.stages.iter().try_for_each(StageConfig::validate)
    }

    pub fn needs_teacher(&self) -> bool {
        self.stages.iter().any(|s| s.kind.needs_teacher())
    }
}

/// Raw examples a stage trains on.
#[derive(Debug, Clone, PartialEq)]
pub enum StageDataset {
    Samples(Vec<Sample>),
    Pairs(Vec<PreferencePair>),
}

impl StageDataset {
    pub fn encode(&self, n_image: usize) -> Result<TrainData> {
        Ok(match self {
            Self::Samples(s) => TrainData::Sequences(
                s.iter()
                    .map(|s| Ok(EncodedSample::from_sample(s)?.scored(n_image)))
                    .collect::<Result<_>>()?,
            ),
            Self::Pairs(p) => TrainData::Pairs(p.iter().map(|p| encode_pair(p, n_image)).collect::<Result<_>>()?),
        })
    }
}

/// Resolves a stage's `dataset_id` to examples.
pub trait DataRegistry {
    fn dataset(&self, id: &str) -> Result<StageDataset>;
}

/// Built-in synthetic datasets: `caption`, `conversation`, `multitask`
/// (instruction samples) and `preference` (pairs).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticRegistry {
    pub seed: u64,
    pub n_samples: usize,
    pub grid: GridConfig,
}

/// Stable per-name seed offset (FNV-1a).
pub fn name_seed(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl DataRegistry for SyntheticRegistry {
    fn dataset(&self, id: &str) -> Result<StageDataset> {
        let seed = self.seed ^ name_seed(id);
        let mix = match id {
            "caption" => TaskMix::CAPTION,
            "conversation" => TaskMix::CONVERSATION,
            "multitask" => TaskMix::MULTITASK,
            "preference" => {
                return Ok(StageDataset::Pairs(gen_preference_pairs(
                    seed,
                    self.n_samples,
                    &CorruptionMix::default(),
                    &self.grid,
                )?))
            }
            other => return Err(Error::InvalidConfig(format!("unknown dataset id {other:?}"))),
        };
        Ok(StageDataset::Samples(gen_samples(seed, self.n_samples, &mix, &self.grid)?))
    }
}

/// Trains `student` for one stage. Only the stage's groups can change.
pub fn run_stage(
    mut student: Mllm<f32>,
    teacher: Option<&Mllm<f32>>,
    stage: &StageConfig,
    data: &StageDataset,
    eval: Option<&EvalSet>,
    label: &str,
) -> Result<(Mllm<f32>, MetricsReport)> {
    stage.validate()?;
    let present = student.param_groups();
    for &g in stage.groups() {
        if present.is_empty(g) {
            return Err(Error::StageOrderError(format!(
                "{} stage trains group {g}, which the model does not have",
                stage.kind
            )));
        }
    }
    if stage.objective().needs_teacher() && teacher.is_none() {
        return Err(Error::TeacherUnavailable);
    }
    match (stage.kind, data) {
        (StageKind::Pd, StageDataset::Samples(_)) => {
            return Err(Error::InvalidConfig("pd stage needs preference pairs".into()))
        }
        (k, StageDataset::Pairs(_)) if k != StageKind::Pd => {
            return Err(Error::InvalidConfig(format!("{k} stage needs instruction samples")))
        }
        _ => {}
    }
    let train_data = data.encode(student.config.n_image_tokens)?;
    let groups = stage.groups();
    let select = |_: &str, g: ParamGroup| groups.contains(&g);
    let mut report = MetricsReport::default();
    let updates = train(
        &mut student,
        teacher,
        &stage.objective(),
        &train_data,
        &select,
        &stage.settings(),
        label,
        &mut report,
        &mut |_, _| Ok(false),
    )?;
    if let Some(set) = eval {
        report.evals.push(EvalRecord::compute(label, updates, &student, teacher, set)?);
    }
    Ok((student, report))
}

pub fn stage_label(index: usize, kind: StageKind) -> String {
    format!("stage{}_{}", index + 1, kind)
}

pub struct PlanOutcome {
    pub model: Mllm<f32>,
    pub report: MetricsReport,
}

/// Runs every stage in order, upcycling the dense student right before the
/// D2S stage. `observer` sees the model after each stage (1-based index).
pub fn execute_plan(
    plan: &StagePlan,
    student: Mllm<f32>,
    teacher: Option<&Mllm<f32>>,
    registry: &dyn DataRegistry,
    eval: Option<&EvalSet>,
    observer: &mut dyn FnMut(usize, &StageConfig, &Mllm<f32>, &MetricsReport) -> Result<()>,
) -> Result<PlanOutcome> {
    plan.validate()?;
    if plan.needs_teacher() && teacher.is_none() {
        return Err(Error::TeacherUnavailable);
    }
    let mut model = student;
    let mut report = MetricsReport::default();
    for (i, stage) in plan.stages.iter().enumerate() {
        if stage.kind == StageKind::D2s && !model.is_sparse() {
            model = model.upcycle(plan.moe)?;
        }
        let data = registry.dataset(&stage.dataset_id)?;
        let (next, stage_report) = run_stage(model, teacher, stage, &data, eval, &stage_label(i, stage.kind))?;
        model = next;
        observer(i + 1, stage, &model, &stage_report)?;
        report.extend(stage_report);
    }
    Ok(PlanOutcome { model, report })
}
