// SPDX-License-Identifier: Apache-2.0

//! Functional ANOVA over a random-forest surrogate.
//!
//! For each tree the function is piecewise constant on its leaf cells, so
//! every marginal (the tree averaged over the dimensions outside a subset
//! `U`, under the uniform measure on the encoded cube) is itself piecewise
//! constant on the grid induced by the tree's split points on `U`. All
//! variances below are computed exactly from that structure.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::space::{ParamValue, SearchSpace, SpaceError};

mod forest;

pub use forest::{fit_forest, fit_forest_encoded, fit_tree, ForestConfig, Leaf, SurrogateForest, Tree};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ImportanceError {
    #[error("need at least {need} finished trials, have {have}")]
    InsufficientData { have: usize, need: usize },
    #[error("objective values must be finite")]
    NonFiniteObjective,
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("subset must name one or two distinct parameters")]
    BadSubset,
    #[error("brushed range on `{0}` is empty")]
    EmptyBrush(String),
    #[error("no leaf overlaps the brushed region")]
    EmptyIntersection,
    #[error("grid resolution must be at least 2")]
    Resolution,
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// Default number of top single parameters whose pairs are analysed.
pub const DEFAULT_TOP_PAIRS: usize = 6;

fn cell_contains(lower: f64, upper: f64, x: f64) -> bool {
    x >= lower && (x < upper || (upper >= 1.0 && x <= upper))
}

/// Marginal prediction of `tree` at `theta` over the dimensions in `dims`,
/// integrating every other dimension out under the uniform measure.
pub fn tree_marginal(tree: &Tree, dims: &[usize], theta: &[f64]) -> f64 {
    debug_assert_eq!(dims.len(), theta.len());
    tree.leaves()
        .iter()
        .filter(|l| dims.iter().zip(theta).all(|(&d, &x)| cell_contains(l.lower[d], l.upper[d], x)))
        .map(|l| {
            let weight: f64 = (0..l.lower.len())
                .filter(|d| !dims.contains(d))
                .map(|d| l.width(d))
                .product();
            l.value * weight
        })
        .sum()
}

/// Sorted distinct split coordinates of `tree` on `dim`, including 0 and 1.
fn breakpoints(tree: &Tree, dim: usize) -> Vec<f64> {
    let mut b: Vec<f64> = tree
        .leaves()
        .iter()
        .flat_map(|l| [l.lower[dim], l.upper[dim]])
        .chain([0.0, 1.0])
        .collect();
    b.sort_by(|a, c| a.partial_cmp(c).unwrap_or(core::cmp::Ordering::Equal));
    b.dedup();
    b
}

fn locate(points: &[f64], x: f64) -> usize {
    points.partition_point(|&p| p < x)
}

/// Exact variance of the one-dimensional marginal on `dim`.
pub fn single_variance(tree: &Tree, dim: usize) -> f64 {
    let bp = breakpoints(tree, dim);
    let mut diff = vec![0.0; bp.len()];
    for l in tree.leaves() {
        let c = l.value * l.volume() / l.width(dim);
        diff[locate(&bp, l.lower[dim])] += c;
        diff[locate(&bp, l.upper[dim])] -= c;
    }
    let mean = tree.mean();
    let mut level = 0.0;
    let mut second = 0.0;
    for i in 0..bp.len() - 1 {
        level += diff[i];
        second += (bp[i + 1] - bp[i]) * level * level;
    }
    (second - mean * mean).max(0.0)
}

/// Exact variance of the two-dimensional marginal on `(u, v)`.
pub fn pair_marginal_variance(tree: &Tree, u: usize, v: usize) -> f64 {
    let bu = breakpoints(tree, u);
    let bv = breakpoints(tree, v);
    let (nu, nv) = (bu.len(), bv.len());
    let mut diff = vec![0.0; nu * nv];
    for l in tree.leaves() {
        let c = l.value * l.volume() / (l.width(u) * l.width(v));
        let (i0, i1) = (locate(&bu, l.lower[u]), locate(&bu, l.upper[u]));
        let (j0, j1) = (locate(&bv, l.lower[v]), locate(&bv, l.upper[v]));
        diff[i0 * nv + j0] += c;
        diff[i0 * nv + j1] -= c;
        diff[i1 * nv + j0] -= c;
        diff[i1 * nv + j1] += c;
    }
    // 2-D prefix sums turn the difference array into cell levels.
    for i in 0..nu {
        for j in 0..nv {
            let mut acc = diff[i * nv + j];
            if i > 0 {
                acc += diff[(i - 1) * nv + j];
            }
            if j > 0 {
                acc += diff[i * nv + j - 1];
            }
            if i > 0 && j > 0 {
                acc -= diff[(i - 1) * nv + j - 1];
            }
            diff[i * nv + j] = acc;
        }
    }
    let mean = tree.mean();
    let mut second = 0.0;
    for i in 0..nu - 1 {
        for j in 0..nv - 1 {
            let level = diff[i * nv + j];
            second += (bu[i + 1] - bu[i]) * (bv[j + 1] - bv[j]) * level * level;
        }
    }
    (second - mean * mean).max(0.0)
}

/// Per-tree variance decomposition restricted to subsets of size one or two.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeDecomposition {
    pub total: f64,
    pub singles: Vec<f64>,
    /// `(u, v, V_uv)` with `V_uv` not yet floored.
    pub pairs: Vec<(usize, usize, f64)>,
}

pub fn decompose_tree(tree: &Tree, pairs: &[(usize, usize)]) -> TreeDecomposition {
    let dims = tree.dims();
    let singles: Vec<f64> = (0..dims).map(|d| single_variance(tree, d)).collect();
    let pairs = pairs
        .iter()
        .map(|&(u, v)| (u, v, pair_marginal_variance(tree, u, v) - singles[u] - singles[v]))
        .collect();
    TreeDecomposition {
        total: tree.variance(),
        singles,
        pairs,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub params: Vec<String>,
    pub fraction: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    /// Variance of each tree over the cube.
    pub total_variance: Vec<f64>,
    /// Sorted by fraction, descending.
    pub entries: Vec<ImportanceEntry>,
    /// Set when every tree is constant; all fractions are then 0.
    pub zero_variance: bool,
    /// Set when the trials come from population-based training, where a
    /// final model has trained under several assignments.
    #[serde(default)]
    pub unreliable_for_pbt: bool,
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

impl ImportanceReport {
    pub fn fraction(&self, params: &[&str]) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| {
                e.params.len() == params.len() && params.iter().all(|p| e.params.iter().any(|q| q == p))
            })
            .map(|e| e.fraction)
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

/// Variance fractions for every single parameter and, when `pairs` is set,
/// for every pair among the `top` most important singles.
pub fn variance_fractions(
    forest: &SurrogateForest,
    space: &SearchSpace,
    pairs: bool,
    top: usize,
) -> ImportanceReport {
    let dims = space.len();
    let names: Vec<String> = space.names().map(String::from).collect();
    let totals: Vec<f64> = forest.trees.iter().map(Tree::variance).collect();
    let live: Vec<usize> = (0..forest.trees.len()).filter(|&t| totals[t] > 0.0).collect();
    let mut diagnostics = Vec::new();

    if live.is_empty() {
        let mut entries: Vec<ImportanceEntry> = names
            .iter()
            .map(|n| ImportanceEntry {
                params: vec![n.clone()],
                fraction: 0.0,
                std: 0.0,
            })
            .collect();
        if pairs {
            for u in 0..dims.min(top) {
                for v in u + 1..dims.min(top) {
                    entries.push(ImportanceEntry {
                        params: vec![names[u].clone(), names[v].clone()],
                        fraction: 0.0,
                        std: 0.0,
                    });
                }
            }
        }
        return ImportanceReport {
            total_variance: totals,
            entries,
            zero_variance: true,
            unreliable_for_pbt: false,
            diagnostics,
        };
    }

    let singles: Vec<Vec<f64>> = live
        .iter()
        .map(|&t| (0..dims).map(|d| single_variance(&forest.trees[t], d) / totals[t]).collect())
        .collect();
    let mut entries: Vec<ImportanceEntry> = (0..dims)
        .map(|d| {
            let column: Vec<f64> = singles.iter().map(|s| s[d]).collect();
            let (fraction, std) = mean_std(&column);
            ImportanceEntry {
                params: vec![names[d].clone()],
                fraction,
                std,
            }
        })
        .collect();

    if pairs && dims >= 2 {
        let mut order: Vec<usize> = (0..dims).collect();
        order.sort_by(|&a, &b| {
            entries[b]
                .fraction
                .partial_cmp(&entries[a].fraction)
                .unwrap_or(core::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        order.truncate(top.max(2).min(dims));
        order.sort_unstable();
        let mut pair_list = Vec::new();
        for (i, &u) in order.iter().enumerate() {
            for &v in &order[i + 1..] {
                pair_list.push((u, v));
            }
        }
        let mut per_pair: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        for (row, &t) in live.iter().enumerate() {
            let tree = &forest.trees[t];
            for &(u, v) in &pair_list {
                let raw = pair_marginal_variance(tree, u, v)
                    - singles[row][u] * totals[t]
                    - singles[row][v] * totals[t];
                if raw < -1e-9 * totals[t] {
                    diagnostics.push(format!(
                        "tree {t}: negative interaction variance {raw:e} for ({}, {})",
                        names[u], names[v]
                    ));
                }
                per_pair.entry((u, v)).or_default().push(raw.max(0.0) / totals[t]);
            }
        }
        for ((u, v), column) in per_pair {
            let (fraction, std) = mean_std(&column);
            entries.push(ImportanceEntry {
                params: vec![names[u].clone(), names[v].clone()],
                fraction,
                std,
            });
        }
    }

    entries.sort_by(|a, b| {
        b.fraction
            .partial_cmp(&a.fraction)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.params.len().cmp(&b.params.len()))
    });
    ImportanceReport {
        total_variance: totals,
        entries,
        zero_variance: false,
        unreliable_for_pbt: false,
        diagnostics,
    }
}

/// Mean and across-tree spread of a marginal over a regular grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalCurve {
    pub params: Vec<String>,
    /// Grid coordinates per axis, in encoded units.
    pub axes: Vec<Vec<f64>>,
    /// The same coordinates decoded to native values.
    pub native_axes: Vec<Vec<ParamValue>>,
    /// Row-major over the axes (first axis outermost).
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn linspace(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

fn resolve(space: &SearchSpace, params: &[&str]) -> Result<Vec<usize>, ImportanceError> {
    let dims: Vec<usize> = params
        .iter()
        .map(|p| space.index_of(p).ok_or_else(|| ImportanceError::UnknownParam(String::from(*p))))
        .collect::<Result<_, _>>()?;
    if dims.is_empty() || dims.len() > 2 || (dims.len() == 2 && dims[0] == dims[1]) {
        return Err(ImportanceError::BadSubset);
    }
    Ok(dims)
}

fn curve_over(
    space: &SearchSpace,
    params: &[&str],
    dims: &[usize],
    resolution: usize,
    mut eval: impl FnMut(&[f64]) -> Result<(f64, f64), ImportanceError>,
) -> Result<MarginalCurve, ImportanceError> {
    if resolution < 2 {
        return Err(ImportanceError::Resolution);
    }
    let axis = linspace(resolution);
    let axes: Vec<Vec<f64>> = dims.iter().map(|_| axis.clone()).collect();
    let native_axes = dims
        .iter()
        .map(|&d| axis.iter().map(|&u| space.params()[d].decode(u)).collect())
        .collect();
    let mut mean = Vec::new();
    let mut std = Vec::new();
    if dims.len() == 1 {
        for &x in &axis {
            let (m, s) = eval(&[x])?;
            mean.push(m);
            std.push(s);
        }
    } else {
        for &x in &axis {
            for &y in &axis {
                let (m, s) = eval(&[x, y])?;
                mean.push(m);
                std.push(s);
            }
        }
    }
    Ok(MarginalCurve {
        params: params.iter().map(|p| String::from(*p)).collect(),
        axes,
        native_axes,
        mean,
        std,
    })
}

/// Marginal curve (one parameter) or heatmap (two) on a regular grid.
pub fn marginal_curve(
    forest: &SurrogateForest,
    space: &SearchSpace,
    params: &[&str],
    resolution: usize,
) -> Result<MarginalCurve, ImportanceError> {
    let dims = resolve(space, params)?;
    let mut buf = Vec::with_capacity(forest.trees.len());
    curve_over(space, params, &dims, resolution, |theta| {
        buf.clear();
        buf.extend(forest.trees.iter().map(|t| tree_marginal(t, &dims, theta)));
        Ok(mean_std(&buf))
    })
}

/// Marginal of `target` with the uniform measure restricted to the brushed
/// encoded ranges.
pub fn conditional_effect(
    forest: &SurrogateForest,
    space: &SearchSpace,
    brushed: &[(&str, f64, f64)],
    target: &str,
    resolution: usize,
) -> Result<MarginalCurve, ImportanceError> {
    let t = resolve(space, &[target])?[0];
    let mut brush: Vec<(usize, f64, f64)> = Vec::new();
    for &(name, lo, hi) in brushed {
        let d = space
            .index_of(name)
            .ok_or_else(|| ImportanceError::UnknownParam(String::from(name)))?;
        let (lo, hi) = (lo.clamp(0.0, 1.0), hi.clamp(0.0, 1.0));
        if !(hi > lo) {
            return Err(ImportanceError::EmptyBrush(String::from(name)));
        }
        if d != t {
            brush.push((d, lo, hi));
        }
    }
    let mut buf = Vec::with_capacity(forest.trees.len());
    curve_over(space, &[target], &[t], resolution, |theta| {
        buf.clear();
        for tree in &forest.trees {
            let mut value = 0.0;
            let mut mass = 0.0;
            for l in tree.leaves().iter().filter(|l| cell_contains(l.lower[t], l.upper[t], theta[0])) {
                let mut weight = 1.0;
                for d in (0..l.lower.len()).filter(|&d| d != t) {
                    weight *= match brush.iter().find(|b| b.0 == d) {
                        Some(&(_, lo, hi)) => {
                            (l.upper[d].min(hi) - l.lower[d].max(lo)).max(0.0) / (hi - lo)
                        }
                        None => l.width(d),
                    };
                }
                value += l.value * weight;
                mass += weight;
            }
            if mass <= 0.0 {
                return Err(ImportanceError::EmptyIntersection);
            }
            buf.push(value / mass);
        }
        Ok(mean_std(&buf))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{ParamSpec, Scale};

    fn unit_space(d: usize) -> SearchSpace {
        SearchSpace::new(
            (0..d)
                .map(|i| ParamSpec::continuous(&format!("x{}", i + 1), 0.0, 1.0, Scale::Linear).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn step_tree() -> Tree {
        Tree::from_leaves(vec![
            Leaf {
                lower: vec![0.0, 0.0],
                upper: vec![0.5, 1.0],
                value: 0.0,
            },
            Leaf {
                lower: vec![0.5, 0.0],
                upper: vec![1.0, 1.0],
                value: 1.0,
            },
        ])
    }

    #[test]
    fn single_leaf_marginal_is_constant() {
        let t = Tree::constant(3, 4.0);
        for x in [0.0, 0.3, 1.0] {
            assert_eq!(tree_marginal(&t, &[1], &[x]), 4.0);
            assert_eq!(tree_marginal(&t, &[0, 2], &[x, 1.0 - x]), 4.0);
        }
    }

    #[test]
    fn step_tree_marginals() {
        let t = step_tree();
        assert_eq!(tree_marginal(&t, &[0], &[0.25]), 0.0);
        assert_eq!(tree_marginal(&t, &[0], &[0.75]), 1.0);
        for x in [0.0, 0.4, 0.9, 1.0] {
            assert_eq!(tree_marginal(&t, &[1], &[x]), 0.5);
        }
        assert_eq!(tree_marginal(&t, &[0, 1], &[0.2, 0.9]), 0.0);
        assert_eq!(tree_marginal(&t, &[0, 1], &[0.7, 0.1]), 1.0);
    }

    #[test]
    fn step_tree_variances() {
        let t = step_tree();
        assert!((t.variance() - 0.25).abs() < 1e-15);
        assert!((single_variance(&t, 0) - 0.25).abs() < 1e-15);
        assert_eq!(single_variance(&t, 1), 0.0);
        let d = decompose_tree(&t, &[(0, 1)]);
        assert!(d.pairs[0].2.abs() < 1e-15);
    }

    #[test]
    fn product_tree_matches_analytic_decomposition() {
        // 2x2 checkerboard of f = x1*x2 cell means: exact V_12 is non-zero.
        let cell = |a: f64, b: f64, c: f64, d: f64, v| Leaf {
            lower: vec![a, c],
            upper: vec![b, d],
            value: v,
        };
        let t = Tree::from_leaves(vec![
            cell(0.0, 0.5, 0.0, 0.5, 0.0625),
            cell(0.5, 1.0, 0.0, 0.5, 0.1875),
            cell(0.0, 0.5, 0.5, 1.0, 0.1875),
            cell(0.5, 1.0, 0.5, 1.0, 0.5625),
        ]);
        let d = decompose_tree(&t, &[(0, 1)]);
        assert!((d.singles[0] + d.singles[1] + d.pairs[0].2 - d.total).abs() < 1e-12);
        assert!((d.singles[0] - 0.015625).abs() < 1e-12);
        assert!((d.pairs[0].2 - 0.00390625).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_report() {
        let forest = SurrogateForest::from_trees(vec![Tree::constant(2, 1.0); 3], ForestConfig::default(), 0);
        let r = variance_fractions(&forest, &unit_space(2), true, DEFAULT_TOP_PAIRS);
        assert!(r.zero_variance);
        assert_eq!(r.entries.len(), 3);
        assert!(r.entries.iter().all(|e| e.fraction == 0.0));
    }

    #[test]
    fn marginal_curve_of_step_and_constant() {
        let space = unit_space(2);
        let forest = SurrogateForest::from_trees(vec![step_tree()], ForestConfig::default(), 0);
        let c = marginal_curve(&forest, &space, &["x1"], 11).unwrap();
        for (x, m) in c.axes[0].iter().zip(&c.mean) {
            assert_eq!(*m, if *x < 0.5 { 0.0 } else { 1.0 });
        }
        let flat = SurrogateForest::from_trees(vec![Tree::constant(2, 3.0); 4], ForestConfig::default(), 0);
        let c = marginal_curve(&flat, &space, &["x2"], 5).unwrap();
        assert!(c.mean.iter().all(|&m| m == 3.0));
        assert!(c.std.iter().all(|&s| s == 0.0));
        let heat = marginal_curve(&forest, &space, &["x1", "x2"], 4).unwrap();
        assert_eq!(heat.mean.len(), 16);
        assert!(matches!(
            marginal_curve(&forest, &space, &["x1"], 1),
            Err(ImportanceError::Resolution)
        ));
        assert!(matches!(
            marginal_curve(&forest, &space, &["nope"], 4),
            Err(ImportanceError::UnknownParam(_))
        ));
    }

    #[test]
    fn full_brush_matches_unconditioned() {
        let space = unit_space(2);
        let forest = SurrogateForest::from_trees(vec![step_tree()], ForestConfig::default(), 0);
        let a = marginal_curve(&forest, &space, &["x1"], 9).unwrap();
        let b = conditional_effect(&forest, &space, &[("x2", 0.0, 1.0)], "x1", 9).unwrap();
        assert_eq!(a.mean, b.mean);
        assert!(matches!(
            conditional_effect(&forest, &space, &[("x2", 0.5, 0.5)], "x1", 9),
            Err(ImportanceError::EmptyBrush(_))
        ));
    }
}
