//! Optimisation, the training loop, repeated runs and the three-way
//! comparison protocol.

pub mod adam;
pub mod config;
pub mod data;
pub mod protocol;
pub mod scheduler;
pub mod train;

pub use adam::{adam_update, Adam, AdamConfig};
pub use config::{TrainConfig, WarmStart};
pub use data::{Datasets, Item};
pub use protocol::{comparative_protocol, multi_run, MultiRun, ProtocolConfig, ProtocolManifests, ProtocolResult, RunSummary};
pub use scheduler::{PlateauScheduler, SchedulerConfig};
pub use train::{best_index, evaluate, train, train_on, EpochLog, RunRecord, TrainOutcome};
