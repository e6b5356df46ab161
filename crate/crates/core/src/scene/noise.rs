//! Floater injection: low-opacity splats scattered through the scene bounds.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Splat, SplatKind, SplatScene};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloaterSpec {
    pub count: usize,
    pub seed: u64,
    #[serde(default = "default_opacity_range")]
    pub opacity_range: [f64; 2],
    /// Isotropic standard deviation of each floater (m).
    #[serde(default = "default_scale")]
    pub scale: f64,
}

fn default_opacity_range() -> [f64; 2] {
    [0.05, 0.5]
}

fn default_scale() -> f64 {
    0.005
}

impl FloaterSpec {
    pub fn new(count: usize, seed: u64) -> Self {
        FloaterSpec {
            count,
            seed,
            opacity_range: default_opacity_range(),
            scale: default_scale(),
        }
    }
}

/// Adds `spec.count` volumetric floaters uniformly inside the scene bounds.
/// Existing splats keep their order and values.
pub fn inject_floaters(scene: &SplatScene, spec: &FloaterSpec) -> Result<SplatScene> {
    let [lo, hi] = spec.opacity_range;
    if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "opacity range [{lo}, {hi}] must satisfy 0 <= lo <= hi <= 1"
        )));
    }
    if !(spec.scale > 0.0) {
        return Err(Error::InvalidArgument(format!("floater scale must be > 0, got {}", spec.scale)));
    }
    if spec.count == 0 {
        return Ok(scene.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let b = *scene.bounds();
    let axis = |rng: &mut ChaCha8Rng, k: usize| {
        if b.max[k] > b.min[k] {
            rng.random_range(b.min[k]..=b.max[k])
        } else {
            b.min[k]
        }
    };
    let floaters = (0..spec.count)
        .map(|_| {
            let mean = Vector3::new(axis(&mut rng, 0), axis(&mut rng, 1), axis(&mut rng, 2));
            let opacity = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            Splat::new(
                mean,
                Vector3::repeat(spec.scale),
                [1.0, 0.0, 0.0, 0.0],
                opacity,
                SplatKind::Volumetric,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    scene.with_additional(floaters)
}
