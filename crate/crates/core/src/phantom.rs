//! Built-in synthetic phantoms.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gauss_model::{uniform_quaternion, Gaussian, GaussianSet};

pub const BUILTIN_NAMES: [&str; 1] = ["ribo-toy"];

const RIBO_SEED: u64 = 0x5249_424f;

/// Two-lobed particle of 200 anisotropic kernels, sized for a 64-pixel box
/// at 1.5 Å: a large body of 130 kernels and a smaller head of 70, all
/// centers within 30 Å of the origin.
pub fn ribo_toy() -> GaussianSet {
    let mut rng = ChaCha8Rng::seed_from_u64(RIBO_SEED);
    let mut kernels = Vec::with_capacity(200);
    let lobes: [(usize, [f64; 3], [f64; 3]); 2] = [
        (130, [0.0, -6.0, 0.0], [19.0, 14.0, 17.0]),
        (70, [3.0, 15.0, 4.0], [15.0, 8.0, 11.0]),
    ];
    for (count, center, radii) in lobes {
        let mut placed = 0;
        while placed < count {
            let u: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            if u.iter().map(|v| v * v).sum::<f64>() > 1.0 {
                continue;
            }
            let c = Vector3::new(
                center[0] + u[0] * radii[0],
                center[1] + u[1] * radii[1],
                center[2] + u[2] * radii[2],
            );
            if c.norm() > 30.0 {
                continue;
            }
            let log_scales = Vector3::from_fn(|_, _| rng.random_range(1.5f64..3.0).ln());
            kernels.push(Gaussian {
                center: c,
                log_scales,
                quat: uniform_quaternion(&mut rng),
                density: rng.random_range(0.5..1.5),
            });
            placed += 1;
        }
    }
    GaussianSet::new(kernels, [30.0; 3]).expect("phantom is non-empty")
}

pub fn builtin(name: &str) -> Result<GaussianSet> {
    match name {
        "ribo-toy" => Ok(ribo_toy()),
        other => Err(Error::InvalidArgument(format!(
            "unknown builtin phantom {other:?} (available: {})",
            BUILTIN_NAMES.join(", ")
        ))),
    }
}
