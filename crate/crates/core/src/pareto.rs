// SPDX-License-Identifier: Apache-2.0

//! Two-metric Pareto fronts for the trade-off view.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Maximize,
    Minimize,
}

impl Direction {
    /// Maps a value so that larger is always better.
    pub fn orient(self, v: f64) -> f64 {
        match self {
            Direction::Maximize => v,
            Direction::Minimize => -v,
        }
    }

    /// Whether `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        self.orient(a) > self.orient(b)
    }
}

/// `a` dominates `b`: no worse on both metrics and strictly better on one.
pub fn dominates(a: (f64, f64), b: (f64, f64), x: Direction, y: Direction) -> bool {
    let (ax, ay, bx, by) = (x.orient(a.0), y.orient(a.1), x.orient(b.0), y.orient(b.1));
    ax >= bx && ay >= by && (ax > bx || ay > by)
}

/// Marks each point as non-dominated (`true`) or dominated (`false`).
/// Runs in `O(n log n)`.
pub fn pareto_front(points: &[(f64, f64)], x: Direction, y: Direction) -> Vec<bool> {
    let oriented: Vec<(f64, f64)> = points.iter().map(|p| (x.orient(p.0), y.orient(p.1))).collect();
    let mut order: Vec<usize> = (0..points.len()).collect();
    // Best x first; within equal x, best y first.
    order.sort_by(|&a, &b| {
        let (pa, pb) = (oriented[a], oriented[b]);
        pb.0.partial_cmp(&pa.0)
            .unwrap_or(Ordering::Equal)
            .then(pb.1.partial_cmp(&pa.1).unwrap_or(Ordering::Equal))
    });
    let mut front = vec![false; points.len()];
    let mut best_y_before = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        let group_x = oriented[order[i]].0;
        let mut j = i;
        while j < order.len() && oriented[order[j]].0 == group_x {
            j += 1;
        }
        let group_best = oriented[order[i]].1;
        if group_best > best_y_before {
            for &k in &order[i..j] {
                if oriented[k].1 == group_best {
                    front[k] = true;
                }
            }
            best_y_before = group_best;
        }
        i = j;
    }
    front
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn incomparable_then_dominated() {
        let (x, y) = (Direction::Minimize, Direction::Maximize);
        // Smaller model with lower accuracy vs larger model with higher accuracy.
        let pts = [(10.0, 0.8), (20.0, 0.9)];
        assert_eq!(pareto_front(&pts, x, y), vec![true, true]);
        let pts = [(10.0, 0.8), (20.0, 0.9), (25.0, 0.7)];
        assert_eq!(pareto_front(&pts, x, y), vec![true, true, false]);
        assert!(dominates(pts[0], pts[2], x, y) && dominates(pts[1], pts[2], x, y));
        // A smaller and more accurate model dominates outright.
        assert_eq!(pareto_front(&[(10.0, 0.9), (20.0, 0.8)], x, y), vec![true, false]);
    }

    #[test]
    fn duplicates_and_ties() {
        let (x, y) = (Direction::Maximize, Direction::Maximize);
        let pts = [(1.0, 1.0), (1.0, 1.0), (1.0, 0.5), (0.5, 1.0)];
        assert_eq!(pareto_front(&pts, x, y), vec![true, true, false, false]);
    }
}
