//! The round engine: selection, local training, defense, global update and
//! telemetry.

mod config;
mod engine;

pub use config::{AnalysisConfig, DatasetConfig, PartitionConfig, SimConfig};
pub use engine::{
    run_simulation, select_participants, GlobalState, RoundOutput, RoundRecord, Simulation,
};
