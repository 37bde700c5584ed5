//! Staged training: schedule, optimizer, objectives, stages and plans.

pub mod optim;
pub mod schedule;
pub mod stage;
pub mod teacher;
pub mod trainer;

pub use optim::{AdamConfig, AdamW, Selector};
pub use schedule::{lr_at, update_lr, warmup_steps};
pub use stage::{
    execute_plan, name_seed, run_stage, stage_label, DataRegistry, PlanOutcome, StageConfig, StageDataset, StageKind,
    StagePlan, SyntheticRegistry,
};
pub use teacher::{check_teacher_larger, train_teacher, TeacherConfig, TeacherOutcome, TeacherRecipe};
pub use trainer::{batch_loss_grad, total_updates, train, Objective, TrainData, TrainSettings};
