//! Datasets, non-IID partitioning, triggers and batch poisoning.

mod dataset;
pub mod idx;
mod partition;
mod poison;
mod synth;
mod trigger;

pub use dataset::{Dataset, LabeledExample, SoftExample};
pub use idx::load_idx;
pub use partition::{dirichlet_partition, PartitionPlan};
pub use poison::{poison_batch, poison_count, PoisonMode, Teacher};
pub use synth::{synth_blobs, synth_blobs_split};
pub use trigger::{apply_trigger, split_trigger_dba, TriggerPixel, TriggerSpec};
