//! Oddball-serial visual search (OSVS) task toolkit.
//!
//! - [`protocol`]: session plans and their invariants
//! - [`runtime`]: administering a plan against a clock, the event log
//! - [`scoring`]: response attribution and behavioural metrics
//! - [`erp`]: EEG container, epoching and peak measures
//! - [`stats`]: Friedman, Wilcoxon signed-rank and Spearman machinery
//! - [`simulate`]: synthetic participants, logs and EEG

pub mod erp;
pub mod protocol;
pub mod runtime;
pub mod scoring;
pub mod seed;
pub mod simulate;
pub mod stats;
