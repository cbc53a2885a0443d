// SPDX-License-Identifier: Apache-2.0

//! Random-forest surrogate over the encoded unit cube.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ImportanceError;
use crate::rng;
use crate::space::{ParamAssignment, SearchSpace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    #[serde(default = "default_trees")]
    pub n_trees: usize,
    #[serde(default = "default_depth")]
    pub max_depth: usize,
    #[serde(default = "default_min_leaf")]
    pub min_leaf: usize,
}

fn default_trees() -> usize {
    64
}
fn default_depth() -> usize {
    12
}
fn default_min_leaf() -> usize {
    3
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: default_trees(),
            max_depth: default_depth(),
            min_leaf: default_min_leaf(),
        }
    }
}

/// Axis-aligned cell `[lower, upper)` (closed at 1) with a constant prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub value: f64,
}

impl Leaf {
    pub fn width(&self, dim: usize) -> f64 {
        self.upper[dim] - self.lower[dim]
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }

    /// Whether coordinate `x` on `dim` falls inside the cell.
    pub fn contains(&self, dim: usize, x: f64) -> bool {
        let (lo, hi) = (self.lower[dim], self.upper[dim]);
        x >= lo && (x < hi || (hi >= 1.0 && x <= hi))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Split {
        dim: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        leaf: usize,
    },
}

/// A regression tree whose leaves partition `[0, 1]^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
    leaves: Vec<Leaf>,
}

impl Tree {
    /// A tree with a single leaf predicting `value` everywhere.
    pub fn constant(dims: usize, value: f64) -> Tree {
        Tree {
            nodes: vec![Node::Leaf { leaf: 0 }],
            leaves: vec![Leaf {
                lower: vec![0.0; dims],
                upper: vec![1.0; dims],
                value,
            }],
        }
    }

    /// Builds a tree from explicit leaves. The caller guarantees they
    /// partition the cube; used for analytic test fixtures.
    pub fn from_leaves(leaves: Vec<Leaf>) -> Tree {
        Tree {
            nodes: Vec::new(),
            leaves,
        }
    }

    pub fn leaves(&self) -> &[Leaf] {
        &self.leaves
    }

    pub fn dims(&self) -> usize {
        self.leaves.first().map_or(0, |l| l.lower.len())
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        if self.nodes.is_empty() {
            return self
                .leaves
                .iter()
                .find(|l| (0..x.len()).all(|d| l.contains(d, x[d])))
                .map_or(0.0, |l| l.value);
        }
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { leaf } => return self.leaves[*leaf].value,
                Node::Split {
                    dim,
                    threshold,
                    left,
                    right,
                } => at = if x[*dim] < *threshold { *left } else { *right },
            }
        }
    }

    /// Exact mean over the cube: volume-weighted leaf mean.
    pub fn mean(&self) -> f64 {
        self.leaves.iter().map(|l| l.volume() * l.value).sum()
    }

    /// Exact variance over the cube.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let second: f64 = self.leaves.iter().map(|l| l.volume() * l.value * l.value).sum();
        (second - m * m).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateForest {
    pub trees: Vec<Tree>,
    pub config: ForestConfig,
    pub seed: u64,
    dims: usize,
}

impl SurrogateForest {
    pub fn from_trees(trees: Vec<Tree>, config: ForestConfig, seed: u64) -> Self {
        let dims = trees.first().map_or(0, Tree::dims);
        SurrogateForest {
            trees,
            config,
            seed,
            dims,
        }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len().max(1) as f64
    }
}

struct Builder<'a> {
    points: &'a [Vec<f64>],
    targets: &'a [f64],
    cardinalities: &'a [Option<usize>],
    config: ForestConfig,
    nodes: Vec<Node>,
    leaves: Vec<Leaf>,
}

struct Split {
    dim: usize,
    threshold: f64,
    sse: f64,
}

impl Builder<'_> {
    fn sse(&self, idx: &[usize]) -> (f64, f64) {
        let n = idx.len() as f64;
        let sum: f64 = idx.iter().map(|&i| self.targets[i]).sum();
        let sq: f64 = idx.iter().map(|&i| self.targets[i] * self.targets[i]).sum();
        (sum / n, (sq - sum * sum / n).max(0.0))
    }

    fn threshold(&self, dim: usize, a: f64, b: f64) -> f64 {
        let mid = 0.5 * (a + b);
        match self.cardinalities[dim] {
            // Snap to a bin boundary so a split never cuts a category in two.
            Some(k) => libm::round(mid * k as f64) / k as f64,
            None => mid,
        }
    }

    fn best_split(&self, idx: &[usize]) -> Option<Split> {
        let min_leaf = self.config.min_leaf.max(1);
        let mut best: Option<Split> = None;
        let mut order = idx.to_vec();
        for dim in 0..self.cardinalities.len() {
            order.sort_by(|&a, &b| {
                self.points[a][dim]
                    .partial_cmp(&self.points[b][dim])
                    .unwrap_or(core::cmp::Ordering::Equal)
            });
            let total: f64 = order.iter().map(|&i| self.targets[i]).sum();
            let total_sq: f64 = order.iter().map(|&i| self.targets[i] * self.targets[i]).sum();
            let n = order.len();
            let (mut left, mut left_sq) = (0.0, 0.0);
            for cut in 1..n {
                let y = self.targets[order[cut - 1]];
                left += y;
                left_sq += y * y;
                let (a, b) = (self.points[order[cut - 1]][dim], self.points[order[cut]][dim]);
                if cut < min_leaf || n - cut < min_leaf || a == b {
                    continue;
                }
                let (nl, nr) = (cut as f64, (n - cut) as f64);
                let right = total - left;
                let right_sq = total_sq - left_sq;
                let sse = (left_sq - left * left / nl) + (right_sq - right * right / nr);
                if best.as_ref().is_none_or(|s| sse < s.sse - 1e-12) {
                    best = Some(Split {
                        dim,
                        threshold: self.threshold(dim, a, b),
                        sse,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, lower: Vec<f64>, upper: Vec<f64>, depth: usize) -> usize {
        let (mean, sse) = self.sse(&idx);
        let at = self.nodes.len();
        let can_split =
            depth < self.config.max_depth && idx.len() >= 2 * self.config.min_leaf.max(1) && sse > 1e-14;
        let split = if can_split { self.best_split(&idx) } else { None };
        let Some(split) = split else {
            self.nodes.push(Node::Leaf {
                leaf: self.leaves.len(),
            });
            self.leaves.push(Leaf {
                lower,
                upper,
                value: mean,
            });
            return at;
        };
        self.nodes.push(Node::Leaf { leaf: usize::MAX });
        let (l_idx, r_idx): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.points[i][split.dim] < split.threshold);
        let mut l_upper = upper.clone();
        l_upper[split.dim] = split.threshold;
        let mut r_lower = lower.clone();
        r_lower[split.dim] = split.threshold;
        let left = self.grow(l_idx, lower, l_upper, depth + 1);
        let right = self.grow(r_idx, r_lower, upper, depth + 1);
        self.nodes[at] = Node::Split {
            dim: split.dim,
            threshold: split.threshold,
            left,
            right,
        };
        at
    }
}

/// Fits one CART tree on the given rows.
pub fn fit_tree(
    points: &[Vec<f64>],
    targets: &[f64],
    cardinalities: &[Option<usize>],
    rows: Vec<usize>,
    config: ForestConfig,
) -> Tree {
    let dims = cardinalities.len();
    let mut builder = Builder {
        points,
        targets,
        cardinalities,
        config,
        nodes: Vec::new(),
        leaves: Vec::new(),
    };
    builder.grow(rows, vec![0.0; dims], vec![1.0; dims], 0);
    Tree {
        nodes: builder.nodes,
        leaves: builder.leaves,
    }
}

/// Fits a bootstrap forest on encoded points. `cardinalities[d]` is the
/// number of categories of dimension `d`, or `None` when numeric.
pub fn fit_forest_encoded(
    points: &[Vec<f64>],
    targets: &[f64],
    cardinalities: &[Option<usize>],
    config: ForestConfig,
    seed: u64,
) -> Result<SurrogateForest, ImportanceError> {
    let dims = cardinalities.len();
    let n = points.len();
    if n < dims + 2 {
        return Err(ImportanceError::InsufficientData {
            have: n,
            need: dims + 2,
        });
    }
    if targets.iter().any(|y| !y.is_finite()) {
        return Err(ImportanceError::NonFiniteObjective);
    }
    let trees = (0..config.n_trees.max(1))
        .map(|t| {
            let mut rng = rng::seeded(rng::derive(seed, t as u64));
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            fit_tree(points, targets, cardinalities, rows, config)
        })
        .collect();
    Ok(SurrogateForest {
        trees,
        config,
        seed,
        dims,
    })
}

/// Fits a forest on native trials (`objective` in the caller's units).
pub fn fit_forest(
    trials: &[(ParamAssignment, f64)],
    space: &SearchSpace,
    config: ForestConfig,
    seed: u64,
) -> Result<SurrogateForest, ImportanceError> {
    let mut points = Vec::with_capacity(trials.len());
    let mut targets = Vec::with_capacity(trials.len());
    for (a, y) in trials {
        points.push(space.encode(a)?);
        targets.push(*y);
    }
    let cards: Vec<Option<usize>> = space.params().iter().map(|p| p.cardinality()).collect();
    fit_forest_encoded(&points, &targets, &cards, config, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaves_partition_cube(tree: &Tree, dims: usize) -> bool {
        let vol: f64 = tree.leaves().iter().map(Leaf::volume).sum();
        (vol - 1.0).abs() < 1e-12
            && tree
                .leaves()
                .iter()
                .all(|l| (0..dims).all(|d| l.lower[d] < l.upper[d]) && l.value.is_finite())
    }

    fn grid_data(f: impl Fn(f64, f64) -> f64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut pts = Vec::new();
        let mut ys = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                let (a, b) = ((i as f64 + 0.5) / 20.0, (j as f64 + 0.5) / 20.0);
                pts.push(vec![a, b]);
                ys.push(f(a, b));
            }
        }
        (pts, ys)
    }

    #[test]
    fn insufficient_data() {
        let err = fit_forest_encoded(&[vec![0.1, 0.2]], &[1.0], &[None, None], ForestConfig::default(), 0);
        assert_eq!(err, Err(ImportanceError::InsufficientData { have: 1, need: 4 }));
    }

    #[test]
    fn constant_data_gives_constant_leaves() {
        let (pts, _) = grid_data(|_, _| 0.0);
        let ys = vec![2.5; pts.len()];
        let forest = fit_forest_encoded(&pts, &ys, &[None, None], ForestConfig::default(), 1).unwrap();
        for t in &forest.trees {
            assert!(t.leaves().iter().all(|l| l.value == 2.5));
            assert_eq!(t.variance(), 0.0);
        }
    }

    #[test]
    fn deterministic_and_partitioning() {
        let (pts, ys) = grid_data(|a, b| a * b);
        let cfg = ForestConfig {
            n_trees: 8,
            ..ForestConfig::default()
        };
        let f1 = fit_forest_encoded(&pts, &ys, &[None, None], cfg, 7).unwrap();
        let f2 = fit_forest_encoded(&pts, &ys, &[None, None], cfg, 7).unwrap();
        assert_eq!(f1, f2);
        for t in &f1.trees {
            assert!(leaves_partition_cube(t, 2));
        }
        let p = f1.predict(&[0.9, 0.9]);
        assert!((p - 0.81).abs() < 0.1, "{p}");
    }

    #[test]
    fn categorical_splits_land_on_bin_boundaries() {
        // Category 1 of 3 never observed: the split between 0 and 2 must still
        // sit on a boundary j/3.
        let mut pts = Vec::new();
        let mut ys = Vec::new();
        for i in 0..30 {
            let cat = if i % 2 == 0 { 0.5 / 3.0 } else { 2.5 / 3.0 };
            pts.push(vec![cat]);
            ys.push(if i % 2 == 0 { 0.0 } else { 1.0 });
        }
        let tree = fit_tree(&pts, &ys, &[Some(3)], (0..30).collect(), ForestConfig::default());
        for l in tree.leaves() {
            for b in [l.lower[0], l.upper[0]] {
                let scaled = b * 3.0;
                assert!((scaled - libm::round(scaled)).abs() < 1e-12, "{b}");
            }
        }
    }
}
