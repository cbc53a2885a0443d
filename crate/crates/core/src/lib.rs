// SPDX-License-Identifier: Apache-2.0

//! Algorithmic core of HyperTendril: search spaces, the ask/tell optimizers
//! (random, TPE, Hyperband, BOHB, PBT), fANOVA hyperparameter importance, and
//! the small streaming/analytics primitives the service builds on.
//!
//! The crate is `no_std` and only needs an allocator. Everything that touches
//! files, processes, or sockets lives in the `hypertendril` crate.
#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod event;
pub mod importance;
pub mod objectives;
pub mod optimizer;
pub mod pareto;
pub mod reservoir;
pub mod rng;
pub mod series;
pub mod space;

pub use event::{EventKind, ExplorationEvent};
pub use optimizer::{
    build_optimizer, Observation, Optimizer, OptimizerConfig, OptimizerError, Origin, Status,
    Suggestion, TrialId,
};
pub use space::{Edit, ParamAssignment, ParamSpec, ParamValue, Scale, SearchSpace, SpaceError};
