// SPDX-License-Identifier: Apache-2.0

//! Closed-form synthetic objectives used by the built-in workers.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::rng;

/// Branin-Hoo on `x1 ∈ [-5, 10]`, `x2 ∈ [0, 15]`; global minimum 0.397887.
pub fn branin(x1: f64, x2: f64) -> f64 {
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    let a = x2 - b * x1 * x1 + c * x1 - 6.0;
    a * a + 10.0 * (1.0 - t) * libm::cos(x1) + 10.0
}

const HARTMANN3_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
const HARTMANN3_A: [[f64; 3]; 4] = [
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
];
const HARTMANN3_P: [[f64; 3]; 4] = [
    [0.3689, 0.1170, 0.2673],
    [0.4699, 0.4387, 0.7470],
    [0.1091, 0.8732, 0.5547],
    [0.0381, 0.5743, 0.8828],
];

/// Hartmann 3-D on `[0, 1]^3`; global minimum about -3.86278.
pub fn hartmann3(x: [f64; 3]) -> f64 {
    -(0..4)
        .map(|i| {
            let inner: f64 = (0..3)
                .map(|j| HARTMANN3_A[i][j] * (x[j] - HARTMANN3_P[i][j]) * (x[j] - HARTMANN3_P[i][j]))
                .sum();
            HARTMANN3_ALPHA[i] * libm::exp(-inner)
        })
        .sum::<f64>()
}

/// Squared distance to the centre of the unit cube; 0 at the optimum.
pub fn quad_bowl(x: &[f64]) -> f64 {
    x.iter().map(|v| (v - 0.5) * (v - 0.5)).sum()
}

/// `1 - |x - 0.5|^2`, a maximization-oriented bowl.
pub fn quadratic(x: &[f64]) -> f64 {
    1.0 - quad_bowl(x)
}

pub fn product_surface(x1: f64, x2: f64) -> f64 {
    x1 * x2
}

/// Weighted sum `Σ (i + 1) x_i / d` plus Gaussian noise (σ = `noise`) that
/// is a deterministic function of `seed` and the inputs.
pub fn noisy_additive(x: &[f64], noise: f64, seed: u64) -> f64 {
    let d = x.len().max(1) as f64;
    let signal: f64 = x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v / d).sum();
    let key = x.iter().fold(seed, |acc, v| rng::derive(acc, v.to_bits()));
    signal + noise * rng::standard_normal(&mut rng::seeded(key))
}

/// Names of the built-in objectives with their parameter names.
pub fn builtin_params(name: &str, dims: usize) -> Option<Vec<alloc::string::String>> {
    use alloc::format;
    use alloc::string::ToString;
    match name {
        "branin" | "product_surface" => Some(["x1", "x2"].iter().map(|s| s.to_string()).collect()),
        "hartmann3" => Some(["x1", "x2", "x3"].iter().map(|s| s.to_string()).collect()),
        "quad_bowl" | "quadratic" | "noisy_additive" => Some((0..dims).map(|i| format!("x{}", i + 1)).collect()),
        _ => None,
    }
}
