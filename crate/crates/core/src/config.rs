//! Deployment configuration: key lengths, noise level, challenge grid shape,
//! and database sizing. One validated `Config` drives enrollment, sessions,
//! and attack campaigns alike.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("key length {0} outside supported range 8..=512")]
    KeyLength(usize),
    #[error("pin key length {0} below minimum 42")]
    PinKeyLength(usize),
    #[error("{needed} helper positions exceed {n_out} output pixels")]
    HelperCapacity { needed: usize, n_out: usize },
    #[error("output pixel count {0} outside supported range 8..=65536")]
    OutputPixels(usize),
    #[error("input mode count {0} must be at least 2")]
    InputModes(usize),
    #[error("noise sigma {0} must be nonnegative and finite")]
    Sigma(f64),
    #[error("grid dimension {name} = {value} outside 1..={max}")]
    Grid {
        name: &'static str,
        value: u32,
        max: u32,
    },
    #[error("pin retry limit must be at least 1")]
    RetryLimit,
}

/// Shape of the discrete challenge alphabet. Every dimension must fit the
/// one-byte fields of the canonical parameter encoding; the phase mask seed
/// is capped at 64 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub wavelengths: u32,
    pub points_per_axis: u32,
    pub angles: u32,
    pub phase_mask_bits: u32,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            wavelengths: 16,
            points_per_axis: 8,
            angles: 8,
            phase_mask_bits: 64,
        }
    }
}

impl GridSpec {
    /// Total number of distinct challenges, saturating at `u128::MAX`.
    pub fn size(&self) -> u128 {
        let masks: u128 = 1u128 << self.phase_mask_bits.min(64);
        (self.wavelengths as u128)
            .saturating_mul(self.points_per_axis as u128)
            .saturating_mul(self.points_per_axis as u128)
            .saturating_mul(self.angles as u128)
            .saturating_mul(masks)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let dims: [(&'static str, u32, u32); 4] = [
            ("wavelengths", self.wavelengths, 256),
            ("points_per_axis", self.points_per_axis, 256),
            ("angles", self.angles, 256),
            ("phase_mask_bits", self.phase_mask_bits, 64),
        ];
        for (name, value, max) in dims {
            let lo = if name == "phase_mask_bits" { 0 } else { 1 };
            if value < lo || value > max {
                return Err(ConfigError::Grid { name, value, max });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// Session key length n in bits.
    pub n: usize,
    /// Key length used for PIN derivation during stage E1 (independent of
    /// `n`: PIN derivation needs at least 42 bits, while sessions may run
    /// at n = 8).
    pub pin_key_len: usize,
    /// Relative multiplicative intensity noise at the terminal.
    pub sigma: f64,
    /// Challenge-response rows written at enrollment.
    pub num_rows: usize,
    /// Input modes of the interrogating field.
    pub n_in: usize,
    /// Output speckle pixels.
    pub n_out: usize,
    pub grid: GridSpec,
    /// Master seed for enrollment and session randomness.
    pub seed: u64,
    /// Wrong-PIN attempts allowed at stage V1.
    pub pin_retry_limit: u32,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            n: 128,
            pin_key_len: 128,
            sigma: 0.02,
            num_rows: 64,
            n_in: 64,
            n_out: 4096,
            grid: GridSpec::default(),
            seed: 0,
            pin_retry_limit: 1,
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n < 8 || self.n > 512 {
            return Err(ConfigError::KeyLength(self.n));
        }
        if self.pin_key_len < 42 || self.pin_key_len > 512 {
            return Err(ConfigError::PinKeyLength(self.pin_key_len));
        }
        if self.n_out < 8 || self.n_out > 65536 {
            return Err(ConfigError::OutputPixels(self.n_out));
        }
        if self.n_in < 2 {
            return Err(ConfigError::InputModes(self.n_in));
        }
        for needed in [3 * self.n, 3 * self.pin_key_len] {
            if needed > self.n_out {
                return Err(ConfigError::HelperCapacity {
                    needed,
                    n_out: self.n_out,
                });
            }
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(ConfigError::Sigma(self.sigma));
        }
        if self.pin_retry_limit == 0 {
            return Err(ConfigError::RetryLimit);
        }
        self.grid.validate()
    }

    /// Compact configuration for high-volume attack campaigns: smaller
    /// speckle, same statistical behavior (intensities stay exactly
    /// exponential at any pixel count).
    pub fn campaign(n: usize, sigma: f64, seed: u64) -> Config {
        let n_out = (3 * n.max(128)).next_power_of_two().max(512);
        Config {
            n,
            n_out,
            n_in: 16,
            sigma,
            seed,
            ..Config::default()
        }
    }
}
