//! Weak augmentation: zero-mean Gaussian jitter scaled per channel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::FeatureStats;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Noise standard deviation as a fraction of each channel's std.
    pub noise_scale: f64,
    /// Set from the run seed, not from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            noise_scale: 0.05,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.noise_scale > 0.0 && self.noise_scale <= 1.0 {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "augment.noise_scale must lie in (0, 1], got {}",
                self.noise_scale
            )))
        }
    }
}

/// `x + N(0, (noise_scale · std_c)²)` elementwise, with `std_c` taken from
/// `stats` for channel `c`.
pub fn weak_augment(x: &Tensor, cfg: &AugmentConfig, stats: Option<&FeatureStats>) -> Result<Tensor> {
    cfg.validate()?;
    let stats = stats.ok_or_else(|| Error::Precondition("weak augmentation needs per-channel feature statistics".into()))?;
    let (k, len) = match x.shape() {
        [_, k, len] if *k == stats.channels() => (*k, *len),
        s => {
            return Err(Error::dim(format!(
                "cannot augment {s:?} with statistics for {} channels",
                stats.channels()
            )))
        }
    };
    let sigma: Vec<f64> = stats.std.iter().map(|s| cfg.noise_scale * s).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = x.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v = (*v as f64 + sigma[(i / len) % k] * z) as f32;
    }
    Ok(out)
}
