//! Chiplet-pool and accelerator codesign: workload modeling, an analytical
//! stage model, manufacturing cost, and a four-layer search (pool annealing,
//! fusion GA, exact stage assignment, place and route), plus a pipeline
//! simulator and serving scenarios.

// `!(x > 0.0)` is the NaN-rejecting form used throughout validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cht;
pub mod compare;
pub mod config;
pub mod costmodel;
pub mod error;
pub mod fixtures;
pub mod fusion;
pub mod perfmodel;
pub mod pipesim;
pub mod pnr;
pub mod pool;
pub mod records;
pub mod report;
pub mod scenarios;
pub mod workload;

pub use cht::{AcceleratorDesign, LatencyConstraint, ObjectiveKind, StageCost, StageOption, StageSolution};
pub use config::Config;
pub use costmodel::{CostMode, CostParams, MetricSet};
pub use error::{Error, Result};
pub use perfmodel::{ChipletConfig, ChipletKey, Dataflow, MemoryKind, MemoryModule, StageCandidate};
pub use workload::{OpKind, OperatorGraph, OperatorNode};
