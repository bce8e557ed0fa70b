//! The parameter-less corruption processes `C(x̃ | x)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Salt-and-pepper noise level: fixed, or redrawn from `U(0, 1)` every time
/// an example is corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLevel {
    Fixed(f64),
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorruptionSpec {
    Gaussian { sigma: f64 },
    SaltPepper { level: NoiseLevel },
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CorruptionSpec::Gaussian { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(Error::InvalidArgument(format!(
                    "gaussian sigma must be finite and ≥ 0, got {sigma}"
                )))
            }
            CorruptionSpec::SaltPepper {
                level: NoiseLevel::Fixed(l),
            } if !(0.0..=1.0).contains(&l) => Err(Error::InvalidArgument(format!(
                "salt-and-pepper level must lie in [0, 1], got {l}"
            ))),
            _ => Ok(()),
        }
    }

    /// Corrupts one example. A dynamic level is drawn once for this call.
    pub fn corrupt<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        match *self {
            CorruptionSpec::Gaussian { sigma } => Ok(gaussian_corrupt(x, sigma, rng)),
            CorruptionSpec::SaltPepper { level } => {
                let level = match level {
                    NoiseLevel::Fixed(l) => l,
                    NoiseLevel::Dynamic => draw_dynamic_level(rng),
                };
                salt_pepper_corrupt(x, level, rng)
            }
        }
    }
}

/// `x + ε` with `ε ~ N(0, σ² I)`.
pub fn gaussian_corrupt<R: Rng + ?Sized>(x: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let e: f64 = rng.sample(StandardNormal);
            v + sigma * e
        })
        .collect()
}

/// Each coordinate is, with probability `level`, replaced by a fair coin.
pub fn salt_pepper_corrupt<R: Rng + ?Sized>(
    x: &[f64],
    level: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::InvalidArgument(format!(
            "salt-and-pepper level must lie in [0, 1], got {level}"
        )));
    }
    if x.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Data(
            "salt-and-pepper noise needs binary input".into(),
        ));
    }
    Ok(x.iter()
        .map(|&v| {
            if rng.random::<f64>() < level {
                if rng.random::<bool>() {
                    1.0
                } else {
                    0.0
                }
            } else {
                v
            }
        })
        .collect())
}

pub fn draw_dynamic_level<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}

/// Probability of `x̃` given `x` under fixed-level salt-and-pepper noise.
pub fn salt_pepper_prob(x: &[f64], x_tilde: &[f64], level: f64) -> f64 {
    let keep = 1.0 - 0.5 * level;
    let change = 0.5 * level;
    x.iter()
        .zip(x_tilde)
        .map(|(a, b)| if a == b { keep } else { change })
        .product()
}
