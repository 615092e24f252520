//! Simulated optical token and its speckle response.
//!
//! The token's internal disorder is a 256-bit seed that expands, per
//! wavelength, into a complex transmission matrix with i.i.d. circular
//! Gaussian entries (variance 1/n_in). Interrogating with a parameterized
//! input field and taking pixel intensities |u|^2 yields fully developed
//! speckle: exponentially distributed intensities with unit contrast, and
//! decorrelation under any change of token or light parameters.

use std::f64::consts::TAU;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::config::GridSpec;
use crate::stats;

/// Stream ids partition the token seed's ChaCha keystream into independent
/// domains; the low 32 bits select the wavelength within a domain.
const STREAM_TRANSMISSION: u64 = 1 << 56;
const STREAM_FINGERPRINT: u64 = 2 << 56;

#[derive(Debug, Error, PartialEq)]
pub enum PufError {
    #[error("light parameter {field} = {value} outside grid bound {max}")]
    ParamOutOfRange {
        field: &'static str,
        value: u64,
        max: u64,
    },
    #[error("speckle length mismatch: {left} vs {right}")]
    ShapeMismatch { left: usize, right: usize },
    #[error("correlation undefined: pattern has zero variance")]
    ZeroVariance,
    #[error("intensities must be finite, nonnegative, and not all zero")]
    BadIntensities,
    #[error("invalid token seed encoding")]
    BadSeed,
}

/// The unclonable physical token: an opaque 256-bit disorder seed plus the
/// mode counts of the optical readout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TokenDisorder {
    seed: [u8; 32],
    pub n_in: usize,
    pub n_out: usize,
}

impl TokenDisorder {
    pub fn new(seed: [u8; 32], n_in: usize, n_out: usize) -> Self {
        TokenDisorder { seed, n_in, n_out }
    }

    /// Deterministic token for tests and examples: the index fills the low
    /// eight seed bytes.
    pub fn from_seed_index(index: u64, n_in: usize, n_out: usize) -> Self {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&index.to_le_bytes());
        TokenDisorder { seed, n_in, n_out }
    }

    /// Freshly manufactured token with uniformly random disorder.
    pub fn random(rng: &mut impl Rng, n_in: usize, n_out: usize) -> Self {
        let mut seed = [0u8; 32];
        rng.fill(&mut seed);
        TokenDisorder { seed, n_in, n_out }
    }

    /// Seed as 64 lowercase hex characters (the token store line format).
    pub fn seed_hex(&self) -> String {
        crate::hex::encode(&self.seed)
    }

    pub fn from_seed_hex(s: &str, n_in: usize, n_out: usize) -> Result<Self, PufError> {
        let bytes = crate::hex::decode(s).map_err(|_| PufError::BadSeed)?;
        let seed: [u8; 32] = bytes.try_into().map_err(|_| PufError::BadSeed)?;
        Ok(TokenDisorder { seed, n_in, n_out })
    }

    /// Short public identifier of the disorder. Derived one-way from the
    /// seed so it can name the token in records that must not allow
    /// re-simulating it.
    pub fn fingerprint(&self) -> String {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(STREAM_FINGERPRINT);
        let mut id = [0u8; 16];
        rng.fill(&mut id);
        crate::hex::encode(&id)
    }
}

/// A challenge: discretized interrogation-light parameters.
///
/// `power` is a positive scale that cancels under mean normalization; the
/// discrete challenge alphabet is the (wavelength, point, angle, phase mask)
/// grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LightParams {
    pub wavelength_index: u8,
    pub incidence_point: (u8, u8),
    pub incidence_angle_index: u8,
    pub phase_mask_seed: u64,
    pub power: f64,
}

pub const PARAMS_ENCODED_LEN: usize = 20;

impl LightParams {
    /// The fixed, publicly documented default parameter set used by stage
    /// E1 and stage V1: all-zero indices, phase mask seed 0, unit power.
    pub fn default_public() -> Self {
        LightParams {
            wavelength_index: 0,
            incidence_point: (0, 0),
            incidence_angle_index: 0,
            phase_mask_seed: 0,
            power: 1.0,
        }
    }

    /// Uniform draw from the grid.
    pub fn sample(grid: &GridSpec, rng: &mut impl Rng) -> Self {
        let mask = if grid.phase_mask_bits == 0 {
            0
        } else {
            rng.random::<u64>() >> (64 - grid.phase_mask_bits)
        };
        LightParams {
            wavelength_index: rng.random_range(0..grid.wavelengths) as u8,
            incidence_point: (
                rng.random_range(0..grid.points_per_axis) as u8,
                rng.random_range(0..grid.points_per_axis) as u8,
            ),
            incidence_angle_index: rng.random_range(0..grid.angles) as u8,
            phase_mask_seed: mask,
            power: 1.0,
        }
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<(), PufError> {
        let checks: [(&'static str, u64, u64); 4] = [
            (
                "wavelength_index",
                self.wavelength_index as u64,
                grid.wavelengths as u64,
            ),
            (
                "incidence_point.x",
                self.incidence_point.0 as u64,
                grid.points_per_axis as u64,
            ),
            (
                "incidence_point.y",
                self.incidence_point.1 as u64,
                grid.points_per_axis as u64,
            ),
            (
                "incidence_angle_index",
                self.incidence_angle_index as u64,
                grid.angles as u64,
            ),
        ];
        for (field, value, max) in checks {
            if value >= max {
                return Err(PufError::ParamOutOfRange { field, value, max });
            }
        }
        if grid.phase_mask_bits < 64 && self.phase_mask_seed >> grid.phase_mask_bits != 0 {
            return Err(PufError::ParamOutOfRange {
                field: "phase_mask_seed",
                value: self.phase_mask_seed,
                max: 1u64 << grid.phase_mask_bits,
            });
        }
        if !(self.power.is_finite() && self.power > 0.0) {
            return Err(PufError::ParamOutOfRange {
                field: "power",
                value: self.power.to_bits(),
                max: 0,
            });
        }
        Ok(())
    }

    /// Canonical 20-byte encoding, injective over the discrete grid.
    pub fn encode(&self) -> [u8; PARAMS_ENCODED_LEN] {
        let mut out = [0u8; PARAMS_ENCODED_LEN];
        out[0] = self.wavelength_index;
        out[1] = self.incidence_point.0;
        out[2] = self.incidence_point.1;
        out[3] = self.incidence_angle_index;
        out[4..12].copy_from_slice(&self.phase_mask_seed.to_be_bytes());
        out[12..20].copy_from_slice(&self.power.to_bits().to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PufError> {
        if bytes.len() != PARAMS_ENCODED_LEN {
            return Err(PufError::ShapeMismatch {
                left: bytes.len(),
                right: PARAMS_ENCODED_LEN,
            });
        }
        let mask = u64::from_be_bytes(bytes[4..12].try_into().unwrap());
        let power = f64::from_bits(u64::from_be_bytes(bytes[12..20].try_into().unwrap()));
        Ok(LightParams {
            wavelength_index: bytes[0],
            incidence_point: (bytes[1], bytes[2]),
            incidence_angle_index: bytes[3],
            phase_mask_seed: mask,
            power,
        })
    }

    pub fn encode_hex(&self) -> String {
        crate::hex::encode(&self.encode())
    }

    pub fn decode_hex(s: &str) -> Result<Self, PufError> {
        let bytes = crate::hex::decode(s).map_err(|_| PufError::BadSeed)?;
        Self::decode(&bytes)
    }
}

/// Multiplicative per-pixel intensity noise. sigma = 0 makes interrogation a
/// pure function; each instance carries its own generator so concurrent
/// sessions never share state.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    pub sigma: f64,
    rng: ChaCha8Rng,
}

impl NoiseModel {
    pub fn new(sigma: f64, rng_seed: u64) -> Self {
        assert!(sigma.is_finite() && sigma >= 0.0, "sigma must be >= 0");
        NoiseModel {
            sigma,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        }
    }

    pub fn noiseless() -> Self {
        NoiseModel::new(0.0, 0)
    }

    /// Per-pixel gain 1 + eps, eps ~ Normal(0, sigma^2), floored at zero so
    /// intensities stay physical under stress-level noise.
    fn sample_gain(&mut self) -> f64 {
        let eps: f64 = StandardNormal.sample(&mut self.rng);
        (1.0 + self.sigma * eps).max(0.0)
    }
}

/// Intensity grid produced by one interrogation, mean-normalized to 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecklePattern {
    intensities: Vec<f64>,
}

impl SpecklePattern {
    pub fn from_intensities(raw: Vec<f64>) -> Result<Self, PufError> {
        if raw.is_empty() || raw.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(PufError::BadIntensities);
        }
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        if mean <= 0.0 {
            return Err(PufError::BadIntensities);
        }
        let intensities = raw.into_iter().map(|x| x / mean).collect();
        Ok(SpecklePattern { intensities })
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn len(&self) -> usize {
        self.intensities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensities.is_empty()
    }

    /// std/mean; equals the standard deviation since the mean is 1.0.
    pub fn contrast(&self) -> f64 {
        stats::std_dev(&self.intensities)
    }
}

/// Complex transmission matrix for one (token, wavelength), row-major
/// n_out x n_in.
#[derive(Debug, Clone)]
pub struct TransmissionMatrix {
    pub n_in: usize,
    pub n_out: usize,
    entries: Vec<Complex64>,
}

impl TransmissionMatrix {
    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    fn apply(&self, input: &[Complex64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.n_in);
        let mut out = Vec::with_capacity(self.n_out);
        for row in self.entries.chunks_exact(self.n_in) {
            let mut acc = Complex64::new(0.0, 0.0);
            for (t, a) in row.iter().zip(input) {
                acc += t * a;
            }
            out.push(acc.norm_sqr());
        }
        out
    }
}

/// Expands (seed, wavelength) into the transmission matrix: i.i.d. circular
/// complex Gaussian entries, variance 1/n_in. Pure function of its inputs.
pub fn derive_transmission_matrix(
    token: &TokenDisorder,
    wavelength_index: u8,
    grid: &GridSpec,
) -> Result<TransmissionMatrix, PufError> {
    if (wavelength_index as u32) >= grid.wavelengths {
        return Err(PufError::ParamOutOfRange {
            field: "wavelength_index",
            value: wavelength_index as u64,
            max: grid.wavelengths as u64,
        });
    }
    let mut rng = ChaCha8Rng::from_seed(token.seed);
    rng.set_stream(STREAM_TRANSMISSION | wavelength_index as u64);
    let scale = (1.0 / (2.0 * token.n_in as f64)).sqrt();
    let entries = (0..token.n_in * token.n_out)
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re * scale, im * scale)
        })
        .collect();
    Ok(TransmissionMatrix {
        n_in: token.n_in,
        n_out: token.n_out,
        entries,
    })
}

/// Input field for a challenge: random phase mask expanded from the mask
/// seed, plus a linear phase ramp encoding incidence point and angle. The
/// ramp index (x + points_per_axis*y + angle) mod n_in changes by a nonzero
/// amount under any single-field change, which makes the ramps orthogonal
/// and the speckle decorrelated.
fn input_field(params: &LightParams, grid: &GridSpec, n_in: usize) -> Vec<Complex64> {
    let mut mask_rng = ChaCha8Rng::seed_from_u64(params.phase_mask_seed);
    let ramp = (params.incidence_point.0 as usize
        + grid.points_per_axis as usize * params.incidence_point.1 as usize
        + params.incidence_angle_index as usize)
        % n_in;
    let amp = (params.power / n_in as f64).sqrt();
    (0..n_in)
        .map(|i| {
            let mask_phase: f64 = mask_rng.random::<f64>() * TAU;
            let ramp_phase = TAU * (ramp * i % n_in) as f64 / n_in as f64;
            Complex64::from_polar(amp, mask_phase + ramp_phase)
        })
        .collect()
}

fn finish_interrogation(
    matrix: &TransmissionMatrix,
    params: &LightParams,
    grid: &GridSpec,
    noise: &mut NoiseModel,
) -> Result<SpecklePattern, PufError> {
    let field = input_field(params, grid, matrix.n_in);
    let mut raw = matrix.apply(&field);
    if noise.sigma > 0.0 {
        for x in raw.iter_mut() {
            *x *= noise.sample_gain();
        }
    }
    SpecklePattern::from_intensities(raw)
}

/// One-shot interrogation of a token. Derives the transmission matrix on the
/// fly; use [`Interrogator`] when the same token is probed repeatedly.
pub fn interrogate(
    token: &TokenDisorder,
    params: &LightParams,
    grid: &GridSpec,
    noise: &mut NoiseModel,
) -> Result<SpecklePattern, PufError> {
    params.validate(grid)?;
    let matrix = derive_transmission_matrix(token, params.wavelength_index, grid)?;
    finish_interrogation(&matrix, params, grid, noise)
}

/// Pearson correlation between two speckle patterns.
pub fn speckle_correlation(a: &SpecklePattern, b: &SpecklePattern) -> Result<f64, PufError> {
    if a.len() != b.len() {
        return Err(PufError::ShapeMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    stats::pearson(a.intensities(), b.intensities()).ok_or(PufError::ZeroVariance)
}

/// Readout bench for one inserted token: caches the per-wavelength
/// transmission matrices so repeated interrogations cost one matrix-vector
/// product. Shareable across threads; cloning shares nothing mutable.
#[derive(Clone)]
pub struct Interrogator {
    token: TokenDisorder,
    grid: GridSpec,
    matrices: Vec<OnceLock<Arc<TransmissionMatrix>>>,
}

impl Interrogator {
    pub fn new(token: TokenDisorder, grid: GridSpec) -> Self {
        let mut matrices = Vec::with_capacity(grid.wavelengths as usize);
        matrices.resize_with(grid.wavelengths as usize, OnceLock::new);
        Interrogator {
            token,
            grid,
            matrices,
        }
    }

    pub fn token(&self) -> &TokenDisorder {
        &self.token
    }

    pub fn matrix(&self, wavelength_index: u8) -> Result<Arc<TransmissionMatrix>, PufError> {
        if (wavelength_index as u32) >= self.grid.wavelengths {
            return Err(PufError::ParamOutOfRange {
                field: "wavelength_index",
                value: wavelength_index as u64,
                max: self.grid.wavelengths as u64,
            });
        }
        let slot = &self.matrices[wavelength_index as usize];
        if let Some(m) = slot.get() {
            return Ok(Arc::clone(m));
        }
        let m = Arc::new(derive_transmission_matrix(
            &self.token,
            wavelength_index,
            &self.grid,
        )?);
        Ok(Arc::clone(slot.get_or_init(|| m)))
    }

    pub fn interrogate(
        &self,
        params: &LightParams,
        noise: &mut NoiseModel,
    ) -> Result<SpecklePattern, PufError> {
        params.validate(&self.grid)?;
        let matrix = self.matrix(params.wavelength_index)?;
        finish_interrogation(&matrix, params, &self.grid, noise)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_token(index: u64) -> TokenDisorder {
        TokenDisorder::from_seed_index(index, 16, 256)
    }

    #[test]
    fn matrix_is_pure_function() {
        let grid = GridSpec::default();
        let t = small_token(0);
        let a = derive_transmission_matrix(&t, 0, &grid).unwrap();
        let b = derive_transmission_matrix(&t, 0, &grid).unwrap();
        assert_eq!(a.entries(), b.entries());
    }

    #[test]
    fn wavelength_out_of_range_rejected() {
        let grid = GridSpec::default();
        let t = small_token(0);
        assert!(matches!(
            derive_transmission_matrix(&t, 16, &grid),
            Err(PufError::ParamOutOfRange { .. })
        ));
    }

    #[test]
    fn noiseless_interrogation_is_deterministic() {
        let grid = GridSpec::default();
        let t = small_token(3);
        let p = LightParams::default_public();
        let s1 = interrogate(&t, &p, &grid, &mut NoiseModel::noiseless()).unwrap();
        let s2 = interrogate(&t, &p, &grid, &mut NoiseModel::noiseless()).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn interrogator_matches_one_shot() {
        let grid = GridSpec::default();
        let t = small_token(5);
        let bench = Interrogator::new(t, grid);
        let p = LightParams {
            wavelength_index: 7,
            incidence_point: (3, 1),
            incidence_angle_index: 2,
            phase_mask_seed: 99,
            power: 1.0,
        };
        let a = bench.interrogate(&p, &mut NoiseModel::noiseless()).unwrap();
        let b = interrogate(&t, &p, &grid, &mut NoiseModel::noiseless()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn off_grid_params_rejected() {
        let grid = GridSpec::default();
        let t = small_token(0);
        let mut p = LightParams::default_public();
        p.incidence_point = (8, 0);
        assert!(matches!(
            interrogate(&t, &p, &grid, &mut NoiseModel::noiseless()),
            Err(PufError::ParamOutOfRange { .. })
        ));
        let mut q = LightParams::default_public();
        q.power = 0.0;
        assert!(q.validate(&grid).is_err());
    }

    #[test]
    fn mean_is_normalized_and_intensities_nonnegative() {
        let grid = GridSpec::default();
        let t = small_token(1);
        let mut noise = NoiseModel::new(0.5, 42);
        let s = interrogate(&t, &LightParams::default_public(), &grid, &mut noise).unwrap();
        let mean = stats::mean(s.intensities());
        assert!((mean - 1.0).abs() < 1e-12);
        assert!(s.intensities().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn params_encoding_roundtrips() {
        let p = LightParams {
            wavelength_index: 15,
            incidence_point: (7, 2),
            incidence_angle_index: 5,
            phase_mask_seed: u64::MAX,
            power: 1.0,
        };
        assert_eq!(LightParams::decode(&p.encode()).unwrap(), p);
        assert_eq!(LightParams::decode_hex(&p.encode_hex()).unwrap(), p);
    }

    #[test]
    fn self_correlation_is_one_and_constant_errors() {
        let grid = GridSpec::default();
        let t = small_token(2);
        let s = interrogate(&t, &LightParams::default_public(), &grid, &mut NoiseModel::noiseless())
            .unwrap();
        assert!((speckle_correlation(&s, &s).unwrap() - 1.0).abs() < 1e-12);
        let flat = SpecklePattern::from_intensities(vec![1.0; s.len()]).unwrap();
        assert_eq!(speckle_correlation(&s, &flat), Err(PufError::ZeroVariance));
        let short = SpecklePattern::from_intensities(vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            speckle_correlation(&s, &short),
            Err(PufError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn token_seed_hex_roundtrip() {
        let t = TokenDisorder::from_seed_index(77, 64, 4096);
        let hex = t.seed_hex();
        assert_eq!(hex.len(), 64);
        let back = TokenDisorder::from_seed_hex(&hex, 64, 4096).unwrap();
        assert_eq!(t, back);
        assert_eq!(t.fingerprint().len(), 32);
        assert_ne!(
            t.fingerprint(),
            TokenDisorder::from_seed_index(78, 64, 4096).fingerprint()
        );
    }

    #[test]
    fn bad_intensities_rejected() {
        assert!(SpecklePattern::from_intensities(vec![]).is_err());
        assert!(SpecklePattern::from_intensities(vec![1.0, -0.5]).is_err());
        assert!(SpecklePattern::from_intensities(vec![0.0, 0.0]).is_err());
        assert!(SpecklePattern::from_intensities(vec![1.0, f64::NAN]).is_err());
    }
}
