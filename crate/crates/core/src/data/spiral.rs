use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{CounterRng, Purpose};
use crate::tensor::Tensor;

/// Angle (radians) an arm turns through between the centre and radius 1.
pub const SPIRAL_SWEEP: f64 = 4.0;

/// Noise-free point of arm `class` (out of `classes`) at curve parameter `t ∈ [0, 1)`.
pub fn spiral_point(class: usize, classes: usize, t: f64) -> [f64; 2] {
    let angle = 2.0 * PI * class as f64 / classes as f64 + SPIRAL_SWEEP * t;
    [t * angle.cos(), t * angle.sin()]
}

/// Interleaved 2-D spiral arms, `n_per_class` points per arm, grouped by class.
///
/// Curve positions are uniform on `[0, 1)`; isotropic Gaussian noise with
/// standard deviation `noise_std` is then added to both coordinates.
pub fn gen_spiral(n_per_class: usize, classes: usize, noise_std: f64, seed: u64) -> Result<LabeledDataset> {
    if n_per_class == 0 || classes < 2 {
        return Err(Error::Parameter(format!(
            "spiral needs n_per_class ≥ 1 and classes ≥ 2, got {n_per_class} and {classes}"
        )));
    }
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::Parameter(format!("noise std must be ≥ 0, got {noise_std}")));
    }
    let noise = Normal::new(0.0, noise_std).expect("validated std");
    let mut rng = CounterRng::new(seed, Purpose::Data, 0, 0);
    let mut data = Vec::with_capacity(2 * n_per_class * classes);
    let mut labels = Vec::with_capacity(n_per_class * classes);
    for class in 0..classes {
        for _ in 0..n_per_class {
            let t: f64 = rng.random();
            let [x, y] = spiral_point(class, classes, t);
            if noise_std > 0.0 {
                data.push(x + noise.sample(&mut rng));
                data.push(y + noise.sample(&mut rng));
            } else {
                data.push(x);
                data.push(y);
            }
            labels.push(class);
        }
    }
    LabeledDataset::new(Tensor::new(vec![labels.len(), 2], data)?, labels, classes)
}
