use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the leveled scheme.
///
/// The modulus at level `l` is `2^(log_q0 + l * log_scale)`; fresh ciphertexts sit at
/// level `levels`. Key switching uses the special modulus `P = Q_levels`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CkksParams {
    pub log_n: u32,
    pub log_scale: u32,
    pub log_q0: u32,
    pub levels: usize,
    /// Nonzero coefficients of the ternary secret.
    pub hamming_weight: usize,
    /// Standard deviation of the error distribution.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for CkksParams {
    fn default() -> Self {
        Self { log_n: 12, log_scale: 40, log_q0: 60, levels: 4, hamming_weight: 64, sigma: 3.2, seed: 0 }
    }
}

impl CkksParams {
    /// Ring degree `2^13`, used for the single-row convolution check.
    pub fn n13() -> Self {
        Self { log_n: 13, ..Self::default() }
    }

    /// Small ring with a deeper chain, for isolated shallow blocks in the harness.
    pub fn harness() -> Self {
        Self { log_n: 11, levels: 6, ..Self::default() }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn ring_degree(&self) -> usize {
        1 << self.log_n
    }

    pub fn max_slots(&self) -> usize {
        self.ring_degree() / 2
    }

    pub fn scale(&self) -> f64 {
        2f64.powi(self.log_scale as i32)
    }

    pub fn log_q(&self, level: usize) -> u32 {
        self.log_q0 + level as u32 * self.log_scale
    }

    pub fn log_big_q(&self) -> u32 {
        self.log_q(self.levels)
    }

    pub fn log_special(&self) -> u32 {
        self.log_big_q()
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=15).contains(&self.log_n) {
            return Err(Error::Params(format!("log N = {} outside 2..=15", self.log_n)));
        }
        if self.levels < 1 {
            return Err(Error::Params("need at least one level".into()));
        }
        if self.log_scale == 0 || self.log_scale >= self.log_q0 {
            return Err(Error::Params(format!(
                "scale 2^{} must be below the base modulus 2^{}",
                self.log_scale, self.log_q0
            )));
        }
        if self.hamming_weight == 0 || self.hamming_weight > self.ring_degree() {
            return Err(Error::Params(format!("hamming weight {} invalid", self.hamming_weight)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Params(format!("error std-dev {} invalid", self.sigma)));
        }
        if self.log_big_q() > 1200 {
            return Err(Error::Params("modulus chain too long".into()));
        }
        Ok(())
    }
}
