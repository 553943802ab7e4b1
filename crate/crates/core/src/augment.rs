//! Weak and strong perturbations of point data.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::ndcore::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSpec {
    pub weak_sigma: f64,
    pub strong_sigma: f64,
    pub strong_scale_range: [f64; 2],
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            weak_sigma: 0.05,
            strong_sigma: 0.2,
            strong_scale_range: [0.9, 1.1],
        }
    }
}

impl AugmentSpec {
    /// The all-zero spec: both maps become the identity.
    pub fn identity() -> Self {
        Self {
            weak_sigma: 0.0,
            strong_sigma: 0.0,
            strong_scale_range: [1.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.strong_scale_range;
        contract!(
            self.weak_sigma >= 0.0 && self.strong_sigma >= 0.0,
            "augmentation sigmas must be non-negative"
        );
        // The identity spec (both zero) is the one allowed tie.
        contract!(
            self.weak_sigma < self.strong_sigma
                || (self.weak_sigma == 0.0 && self.strong_sigma == 0.0),
            "weak_sigma {} must be below strong_sigma {}",
            self.weak_sigma,
            self.strong_sigma
        );
        contract!(lo <= 1.0 && 1.0 <= hi, "scale range [{lo}, {hi}] must contain 1");
        Ok(())
    }

    /// `x + N(0, weak_sigma^2)` per coordinate.
    pub fn weak<R: Rng + ?Sized>(&self, x: &Tensor, rng: &mut R) -> Tensor {
        let s = self.weak_sigma;
        let mut out = x.clone().with_requires_grad(false);
        for v in out.data_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += s * z;
        }
        out
    }

    /// Per-coordinate uniform rescale from `strong_scale_range`, then
    /// `+ N(0, strong_sigma^2)`.
    pub fn strong<R: Rng + ?Sized>(&self, x: &Tensor, rng: &mut R) -> Tensor {
        let [lo, hi] = self.strong_scale_range;
        let s = self.strong_sigma;
        let mut out = x.clone().with_requires_grad(false);
        for v in out.data_mut() {
            let scale = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let z: f64 = rng.sample(StandardNormal);
            *v = *v * scale + s * z;
        }
        out
    }
}
