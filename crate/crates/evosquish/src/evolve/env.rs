//! Synthesis constraints: the environmental factor and degeneracy guards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::encoding::EncodingModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvironmentConfig {
    /// Environmental factor in (0, 1]; values below one starve the offspring.
    pub r: f64,
    pub min_filters_per_layer: u32,
    pub max_resample_attempts: u32,
    pub rng_seed: u64,
    pub encoding: EncodingModel,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        EnvironmentConfig {
            r: 0.9,
            min_filters_per_layer: 1,
            max_resample_attempts: 10,
            rng_seed: 0,
            encoding: EncodingModel::default(),
        }
    }
}

impl EnvironmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r <= 1.0) || !self.r.is_finite() {
            return Err(Error::InvalidEnvironmentFactor(self.r));
        }
        if self.min_filters_per_layer == 0 {
            return Err(Error::InvalidConfig("min_filters_per_layer must be >= 1".into()));
        }
        if self.max_resample_attempts == 0 {
            return Err(Error::InvalidConfig("max_resample_attempts must be >= 1".into()));
        }
        if let EncodingModel::Saturating { kappa } = self.encoding {
            if !(kappa > 0.0) || !kappa.is_finite() {
                return Err(Error::InvalidConfig("saturating kappa must be positive".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_above_one_is_rejected() {
        let env = EnvironmentConfig { r: 1.5, ..Default::default() };
        assert!(matches!(env.validate(), Err(Error::InvalidEnvironmentFactor(_))));
    }

    #[test]
    fn factor_of_one_is_the_neutral_boundary() {
        let env = EnvironmentConfig { r: 1.0, ..Default::default() };
        env.validate().unwrap();
        let env = EnvironmentConfig { r: 0.0, ..Default::default() };
        assert!(env.validate().is_err());
    }
}
