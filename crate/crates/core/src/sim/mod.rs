//! Simulation harness: data-generating processes, replication studies and
//! the timing study.

pub mod dgp;
pub mod study;
pub mod timing;

pub use dgp::{draw, DgpSpec, Draw, Scenario};
pub use study::{replicate, SimMethod, Specification, StudyConfig, StudyResult, Summary};
pub use timing::{timing_study, TimingConfig, TimingRow};
