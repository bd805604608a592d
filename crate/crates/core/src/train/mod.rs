//! Losses, the RMSprop optimizer, configuration and the training loop.

pub mod config;
pub mod gradcheck;
pub mod loss;
pub mod optim;
pub mod trainer;

pub use config::{Schedule, TrainConfig};
pub use gradcheck::{network_gradcheck, NetGradReport};
pub use loss::{entry_loss, total_loss};
pub use optim::RmsProp;
pub use trainer::{
    init_model, metrics_csv, train, train_step, training_batch, validation_set, MetricsRow, Progress, StepReport,
    TrainOutcome,
};
