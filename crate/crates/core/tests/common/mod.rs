//! Random scenes and weights shared by the integration tests.
#![allow(dead_code)]

use ctxloc::gp::ArdKernel;
use ctxloc::{KernelConfig, RelationPrediction, SceneContext, Window, WeightVector, NUM_FEATURES};
use rand::Rng;

pub fn random_window<R: Rng>(rng: &mut R, extent: f64) -> Window {
    let w = rng.random_range(0.02..0.8) * extent;
    let h = rng.random_range(0.02..0.8) * extent;
    let x = rng.random_range(0.0..extent - w);
    let y = rng.random_range(0.0..extent - h);
    Window::new(x, y, x + w, y + h).unwrap()
}

pub fn random_kernel<R: Rng>(rng: &mut R, dim: usize) -> KernelConfig {
    KernelConfig {
        length_scales: (0..dim).map(|_| rng.random_range(0.3..3.0)).collect(),
        signal_variance: rng.random_range(0.2..2.0),
        noise_variance: rng.random_range(1e-3..0.1),
    }
}

/// A scene with random windows, appearance, kernel and predictions. A few
/// windows are duplicated so ties and identical relations occur.
pub fn random_context<R: Rng>(rng: &mut R, n: usize, dim: usize) -> SceneContext {
    let mut windows: Vec<Window> = (0..n).map(|_| random_window(rng, 100.0)).collect();
    let mut appearance: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect())
        .collect();
    if n > 3 {
        for _ in 0..n / 10 {
            let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
            windows[a] = windows[b];
            appearance[a] = appearance[b].clone();
        }
    }
    let predictions = (0..n)
        .map(|_| RelationPrediction {
            raw_mean: [0; 3].map(|_| rng.random_range(-0.2..1.2)),
            sigma: rng.random_range(0.0..1.0),
        })
        .collect();
    let kernel = ArdKernel::new(&random_kernel(rng, dim));
    SceneContext::new(windows, appearance, predictions, &kernel).unwrap()
}

pub fn random_alpha<R: Rng>(rng: &mut R) -> WeightVector {
    let mut a = WeightVector::zeros();
    for k in 0..NUM_FEATURES {
        a[k] = rng.random_range(-2.0..2.0);
    }
    a
}
