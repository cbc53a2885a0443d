// SPDX-License-Identifier: Apache-2.0

//! Small sequence helpers shared by the analytics endpoints and the CLI.

use alloc::vec;
use alloc::vec::Vec;

use crate::pareto::Direction;

/// Running best of `values` in `direction` (the peak-performance series).
pub fn running_best(values: &[f64], direction: Direction) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut best: Option<f64> = None;
    for &v in values {
        best = Some(match best {
            Some(b) if !direction.better(v, b) => b,
            _ => v,
        });
        out.push(best.expect("set above"));
    }
    out
}

/// Centered moving average; windows are truncated at the edges.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    if window <= 1 {
        return values.to_vec();
    }
    let left = (window - 1) / 2;
    let right = window / 2;
    let mut prefix = vec![0.0; values.len() + 1];
    for (i, v) in values.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(left);
            let hi = (i + right + 1).min(values.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Evenly spaced indices into a sequence of `len` items, at most `max_points`
/// of them, always including the first and last item.
pub fn downsample_indices(len: usize, max_points: usize) -> Vec<usize> {
    if len <= max_points {
        return (0..len).collect();
    }
    match max_points {
        0 => Vec::new(),
        1 => vec![len - 1],
        m => {
            let mut idx: Vec<usize> = (0..m)
                .map(|i| libm::round(i as f64 * (len - 1) as f64 / (m - 1) as f64) as usize)
                .collect();
            idx.dedup();
            idx
        }
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, libm::sqrt(var)))
}

/// Equal-width histogram covering `[min, max]` of the data.
pub fn histogram(values: &[f64], bins: usize) -> (Vec<f64>, Vec<u64>) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() || bins == 0 {
        return (Vec::new(), Vec::new());
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return (vec![lo, hi], vec![finite.len() as u64]);
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| if i == bins { hi } else { lo + i as f64 * width }).collect();
    let mut counts = vec![0u64; bins];
    for v in finite {
        let b = (libm::floor((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    (edges, counts)
}
