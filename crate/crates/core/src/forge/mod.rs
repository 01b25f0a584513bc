//! Synthetic data, polygon triggers, and labelled clean/poisoned model corpora.

pub mod arch;
pub mod corpus;
pub mod dataset;
pub mod train;
pub mod trigger;

pub use corpus::{forge_corpus, read_eval_slice, write_eval_slice, Corpus, ForgeParams, ManifestEntry, Status, TargetRule};
pub use dataset::{gen_dataset, SyntheticDataset};
pub use trigger::{inject_trigger, TriggerSpec};
