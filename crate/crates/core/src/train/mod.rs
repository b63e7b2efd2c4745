//! Training: learning-rate schedule, optimizer with decoupled weight decay,
//! the gradient-accumulating loop with early stopping, and the cumulative
//! phase ladder.

mod config;
mod optim;
mod run;
mod schedule;
mod trainer;

pub use config::{Schedule, TrainConfig};
pub use optim::{is_decay_excluded, optimizer_step, OptimizerState};
pub use run::{
    apply_values, parse_assignment, run_phase_ladder, LadderReport, LadderRow, PathsSection, PhaseDelta, PhaseSpec, PipelineSection, RunConfig,
    VocabConfig,
};
pub use schedule::{lr_at, warmup_steps};
pub use trainer::{
    evaluate, overfitting_gap, overfitting_indicator, predict_probabilities, train, EarlyStopping, EpochRecord,
    Evaluation, Observation, StepRecord, TrainingLog,
};
