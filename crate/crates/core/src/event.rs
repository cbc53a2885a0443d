// SPDX-License-Identifier: Apache-2.0

use alloc::string::String;
use serde::{Deserialize, Serialize};

use crate::optimizer::TrialId;

/// One observable optimizer decision. `iteration` is the algorithm's own
/// iteration index (random/TPE trial number, Hyperband round, PBT generation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationEvent {
    pub iteration: u64,
    pub trial_id: TrialId,
    #[serde(flatten)]
    pub kind: EventKind,
    pub budget: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Sample,
    /// `objective` is `None` for failed trials.
    Evaluate { objective: Option<f64> },
    Discard,
    Survive,
    Mutate { parent: TrialId },
    Promote { parent: TrialId },
    Resample,
    Diagnostic { message: String },
}
