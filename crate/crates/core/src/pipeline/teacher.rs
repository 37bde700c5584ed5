//! Trains the frozen teacher the students distill from.

use serde::{Deserialize, Serialize};

use alloc::vec::Vec;

use crate::data::{gen_samples, student_config, teacher_config, EncodedSample, GridConfig, Sample, TaskMix};
use crate::error::{Error, Result};
use crate::eval::{eval_accuracy, MetricsReport};
use crate::model::{Mllm, ModelConfig, ParamGroup};
use crate::pipeline::optim::AdamConfig;
use crate::pipeline::stage::name_seed;
use crate::pipeline::trainer::{train, Objective, TrainData, TrainSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub batch_size: usize,
    /// Step budget, expressed in epochs over the training set.
    pub max_epochs: usize,
    pub warmup_ratio: f64,
    pub seed: u64,
    /// Held-out accuracy is checked every this many updates.
    pub eval_every: usize,
    pub target_accuracy: f64,
}

impl TeacherConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            model,
            lr: 6e-3,
            batch_size: 16,
            max_epochs: 12,
            warmup_ratio: 0.03,
            seed: 0,
            eval_every: 250,
            target_accuracy: 0.95,
        }
    }
}

#[derive(Debug)]
pub struct TeacherOutcome {
    pub model: Mllm<f32>,
    pub accuracy: f64,
    pub updates: usize,
    pub report: MetricsReport,
}

/// The teacher must be at least as wide and deep as the student and
/// strictly larger in one of the two.
pub fn check_teacher_larger(teacher: &ModelConfig, student: &ModelConfig) -> Result<()> {
    let wider = teacher.d_model >= student.d_model && teacher.n_layers >= student.n_layers;
    let strictly = teacher.d_model > student.d_model || teacher.n_layers > student.n_layers;
    if !(wider && strictly) {
        return Err(Error::InvalidConfig("teacher must be strictly larger than the student".into()));
    }
    if teacher.vocab_size != student.vocab_size || teacher.n_image_tokens != student.n_image_tokens {
        return Err(Error::InvalidConfig(
            "teacher and student must share vocabulary and image token count".into(),
        ));
    }
    Ok(())
}

/// Plain cross-entropy training of every parameter except the vision stub,
/// until held-out accuracy reaches the target or the budget runs out.
pub fn train_teacher(
    cfg: &TeacherConfig,
    student: &ModelConfig,
    train_set: &[Sample],
    heldout: &[Sample],
) -> Result<TeacherOutcome> {
    check_teacher_larger(&cfg.model, student)?;
    if heldout.is_empty() {
        return Err(Error::EmptyEval);
    }
    if cfg.eval_every == 0 {
        return Err(Error::InvalidConfig("eval_every must be at least 1".into()));
    }
    let mut model = Mllm::<f32>::new(cfg.model)?;
    let n_image = cfg.model.n_image_tokens;
    let data = TrainData::Sequences(
        train_set
            .iter()
            .map(|s| Ok(EncodedSample::from_sample(s)?.scored(n_image)))
            .collect::<Result<_>>()?,
    );
    let settings = TrainSettings {
        lr: cfg.lr,
        batch_size: cfg.batch_size,
        epochs: cfg.max_epochs,
        warmup_ratio: cfg.warmup_ratio,
        seed: cfg.seed,
        grad_clip: Some(1.0),
        adam: AdamConfig::default(),
    };
    let mut report = MetricsReport::default();
    let mut accuracy = 0.0;
    let target = cfg.target_accuracy;
    let every = cfg.eval_every;
    let select = |_: &str, g: ParamGroup| g != ParamGroup::Chi;
    let updates = train(
        &mut model,
        None,
        &Objective::Ce,
        &data,
        &select,
        &settings,
        "teacher",
        &mut report,
        &mut |n, m| {
            if n % every != 0 {
                return Ok(false);
            }
            accuracy = eval_accuracy(m, heldout)?;
            Ok(accuracy >= target)
        },
    )?;
    if updates % every != 0 {
        accuracy = eval_accuracy(&model, heldout)?;
    }
    if accuracy < target {
        return Err(Error::TeacherTrainingFailed {
            accuracy,
            steps: updates,
            target,
        });
    }
    Ok(TeacherOutcome {
        model,
        accuracy,
        updates,
        report,
    })
}

/// Everything needed to reproduce a teacher: model, optimizer budget, data
/// sizes and the seed the synthetic data is drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherRecipe {
    pub teacher: TeacherConfig,
    pub student: ModelConfig,
    pub grid: GridConfig,
    pub n_train: usize,
    pub n_heldout: usize,
    pub data_seed: u64,
}

impl TeacherRecipe {
    /// Twice the default student's width and depth.
    pub fn standard(seed: u64) -> Self {
        let mut teacher = TeacherConfig::new(teacher_config());
        teacher.seed = seed;
        teacher.model.seed = seed.wrapping_add(1);
        Self {
            teacher,
            student: student_config(),
            grid: GridConfig::default(),
            n_train: 8000,
            n_heldout: 200,
            data_seed: seed,
        }
    }

    /// 1.5x the default student's width and depth.
    pub fn weak(seed: u64) -> Self {
        let mut r = Self::standard(seed);
        let s = r.student;
        r.teacher.model = ModelConfig {
            d_model: s.d_model * 3 / 2,
            n_layers: s.n_layers * 3 / 2,
            n_heads: s.n_heads * 3 / 2,
            d_ff: s.d_ff * 3 / 2,
            ..r.teacher.model
        };
        r
    }

    pub fn train_set(&self) -> Result<Vec<Sample>> {
        gen_samples(self.data_seed, self.n_train, &TaskMix::MULTITASK, &self.grid)
    }

    /// Drawn from a seed disjoint from the training set's.
    pub fn heldout_set(&self) -> Result<Vec<Sample>> {
        gen_samples(self.data_seed ^ name_seed("heldout"), self.n_heldout, &TaskMix::MULTITASK, &self.grid)
    }

    pub fn train(&self) -> Result<TeacherOutcome> {
        train_teacher(&self.teacher, &self.student, &self.train_set()?, &self.heldout_set()?)
    }
}
