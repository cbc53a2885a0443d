// SPDX-License-Identifier: Apache-2.0

//! Service side of HyperTendril: process configs, the on-disk trial store,
//! the worker runner, the shared analytics query layer, the HTTP API, and
//! static plots. The `hypertendril` binary wraps all of it in a CLI.

pub mod api;
pub mod config;
pub mod plot;
pub mod protocol;
pub mod query;
pub mod runner;
pub mod store;
pub mod worker;

/// Version stamped on every stored record and API response.
pub const SCHEMA_VERSION: u32 = 1;
