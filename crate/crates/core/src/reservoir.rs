// SPDX-License-Identifier: Apache-2.0

//! Fixed-capacity uniform sample of a metric stream (Algorithm R).

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum ReservoirError {
    #[error("step {step} does not follow previous step {last}")]
    NonMonotoneStep { step: u64, last: u64 },
    #[error("capacity must be at least 1")]
    ZeroCapacity,
}

pub const DEFAULT_CAPACITY: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reservoir {
    capacity: usize,
    seen: u64,
    /// Slot order, not step order; see [`Reservoir::view`].
    samples: Vec<(u64, f64)>,
    last_step: Option<u64>,
}

impl Reservoir {
    pub fn new(capacity: usize) -> Result<Self, ReservoirError> {
        if capacity == 0 {
            return Err(ReservoirError::ZeroCapacity);
        }
        Ok(Reservoir {
            capacity,
            seen: 0,
            samples: Vec::new(),
            last_step: None,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of points offered so far.
    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Offers one point. Steps must be strictly increasing.
    pub fn append<R: Rng + ?Sized>(&mut self, step: u64, value: f64, rng: &mut R) -> Result<(), ReservoirError> {
        if let Some(last) = self.last_step {
            if step <= last {
                return Err(ReservoirError::NonMonotoneStep { step, last });
            }
        }
        self.last_step = Some(step);
        if self.samples.len() < self.capacity {
            self.samples.push((step, value));
        } else {
            let slot = rng.random_range(0..=self.seen);
            if (slot as usize) < self.capacity {
                self.samples[slot as usize] = (step, value);
            }
        }
        self.seen += 1;
        Ok(())
    }

    /// Retained points in ascending step order.
    pub fn view(&self) -> Vec<(u64, f64)> {
        let mut v = self.samples.clone();
        v.sort_by_key(|(s, _)| *s);
        v
    }
}
