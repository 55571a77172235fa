//! Combinatorial training, Adam with warmup, early stopping and the
//! training loop.

mod fit;
pub mod loss;
mod optim;
mod plan;

pub use fit::{train, EpochRecord, Seeds, SetSchedule, TrainConfig, TrainData, TrainOutcome};
pub use optim::{Adam, AdamConfig, EarlyStop};
pub use plan::{ct_epoch_plan, CtConfig, EpochPlan, FixedSets, SampleSet};
