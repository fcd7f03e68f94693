//! DN → radiance → electrons → noisy DN → radiance → TOA reflectance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imaging::{BandedImage, ImageMetadata, SensorConfig, Unit};
use crate::optics::f_number;

pub const PLANCK_J_S: f64 = 6.6260e-34;
pub const LIGHT_SPEED_M_S: f64 = 2.9979e8;

/// Image radiance is per micrometre of bandwidth; the electron scalar is
/// derived in SI (per metre), so it is rescaled once here.
const PER_UM_TO_PER_M: f64 = 1e6;

/// Per-band conversion scalars for one sensor configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiometricScalars {
    /// Flux scalar per band, m²·m·sr (SI).
    pub alpha: Vec<f64>,
    /// Electrons per unit of image radiance (W·µm⁻¹·m⁻²·sr⁻¹) per band.
    pub beta: Vec<f64>,
    /// Electrons per DN.
    pub gain: f64,
    pub bit_depth: u32,
}

impl RadiometricScalars {
    pub fn new(config: &SensorConfig) -> Result<Self> {
        config.validate()?;
        let alpha: Vec<f64> = (0..config.band_count())
            .map(|b| flux_scalar(config, b))
            .collect::<Result<_>>()?;
        let beta = alpha
            .iter()
            .enumerate()
            .map(|(b, &a)| electron_scalar(config, b, a).map(|v| v * PER_UM_TO_PER_M))
            .collect::<Result<_>>()?;
        Ok(RadiometricScalars {
            alpha,
            beta,
            gain: gain(config),
            bit_depth: config.bit_depth,
        })
    }

    pub fn max_dn(&self) -> f64 {
        ((1u64 << self.bit_depth) - 1) as f64
    }
}

/// α = Δλ·τ·p²·π / (1 + 4·FN²).
pub fn flux_scalar(config: &SensorConfig, band: usize) -> Result<f64> {
    check_band(config, band)?;
    let fnum = f_number(config.focal_length_m, config.aperture_diameter_m)?;
    let p = config.pixel_pitch_m;
    Ok(config.spectral_bandwidth_m[band] * config.optical_transmission[band] * p * p * std::f64::consts::PI
        / (1.0 + 4.0 * fnum * fnum))
}

/// β = QE·T·α·λ / (h·c), in electrons per SI radiance unit (W·m⁻³·sr⁻¹).
pub fn electron_scalar(config: &SensorConfig, band: usize, alpha: f64) -> Result<f64> {
    check_band(config, band)?;
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::InvalidArgument(format!("flux scalar must be non-negative, got {alpha}")));
    }
    Ok(config.quantum_efficiency[band] * config.integration_time_s * alpha * config.center_wavelength_m[band]
        / (PLANCK_J_S * LIGHT_SPEED_M_S))
}

/// G = ε / 2ⁿ.
pub fn gain(config: &SensorConfig) -> f64 {
    config.well_depth_e / (1u64 << config.bit_depth) as f64
}

fn check_band(config: &SensorConfig, band: usize) -> Result<()> {
    if band >= config.band_count() {
        return Err(Error::InvalidArgument(format!(
            "band {band} out of range for {}-band sensor",
            config.band_count()
        )));
    }
    Ok(())
}

fn check_scalars(image: &BandedImage, what: &'static str, len: usize) -> Result<()> {
    if len != image.band_count() {
        return Err(Error::BandCountMismatch {
            what,
            expected: image.band_count(),
            found: len,
        });
    }
    Ok(())
}

/// L = DN·abscal / effective bandwidth, W·µm⁻¹·m⁻²·sr⁻¹.
pub fn dn_to_radiance(image: &BandedImage, metadata: &ImageMetadata) -> Result<BandedImage> {
    image.unit().expect(Unit::DigitalNumber)?;
    metadata.check_bands(image.band_count())?;
    image.map_bands(Unit::AtApertureRadiance, |b, band| {
        let k = metadata.abscal_factor[b] / metadata.effective_bandwidth_um[b];
        band.map(|dn| dn * k)
    })
}

pub fn radiance_to_electrons(image: &BandedImage, beta: &[f64]) -> Result<BandedImage> {
    image.unit().expect(Unit::AtApertureRadiance)?;
    check_scalars(image, "beta", beta.len())?;
    image.map_bands(Unit::Electrons, |b, band| band.map(|l| l * beta[b]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    Off,
    /// Shot noise as √I_e times a standard normal draw.
    #[default]
    Gaussian,
    /// Exact Poisson photon counts.
    Poisson,
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(NoiseMode::Off),
            "gaussian" => Ok(NoiseMode::Gaussian),
            "poisson" => Ok(NoiseMode::Poisson),
            other => Err(Error::InvalidArgument(format!("unknown noise mode {other:?}"))),
        }
    }
}

/// Identifies one reproducible noise stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseStream {
    pub seed: u64,
    pub stream_id: String,
}

impl NoiseStream {
    pub fn new(seed: u64, stream_id: impl Into<String>) -> Self {
        NoiseStream {
            seed,
            stream_id: stream_id.into(),
        }
    }

    /// Generator for one band; keyed only by (seed, stream id, band).
    pub fn band_rng(&self, band: usize) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update((self.stream_id.len() as u64).to_le_bytes());
        h.update(self.stream_id.as_bytes());
        h.update((band as u64).to_le_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }
}

/// Adds photon and read noise to an electron image. Negative electron
/// counts are clamped to zero first.
pub fn add_noise(
    image: &BandedImage,
    read_noise_e: f64,
    mode: NoiseMode,
    stream: &NoiseStream,
) -> Result<BandedImage> {
    image.unit().expect(Unit::Electrons)?;
    if read_noise_e.is_nan() || read_noise_e < 0.0 {
        return Err(Error::InvalidArgument(format!("read noise must be non-negative, got {read_noise_e}")));
    }
    if mode == NoiseMode::Off {
        return image.map_bands(Unit::Electrons, |_, band| band.clone());
    }
    let mut failure = None;
    let out = image.map_bands(Unit::Electrons, |b, band| {
        let mut rng = stream.band_rng(b);
        band.map(|e| {
            let e = e.max(0.0);
            let signal = match mode {
                NoiseMode::Poisson => match poisson_draw(e, &mut rng) {
                    Ok(v) => v,
                    Err(err) => {
                        failure.get_or_insert(err);
                        e
                    }
                },
                _ => {
                    let z: f64 = rng.sample(StandardNormal);
                    e + z * e.sqrt()
                }
            };
            let z: f64 = rng.sample(StandardNormal);
            signal + z * read_noise_e
        })
    })?;
    match failure {
        Some(err) => Err(err),
        None => Ok(out),
    }
}

fn poisson_draw(mean: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
    if mean == 0.0 {
        return Ok(0.0);
    }
    Poisson::new(mean)
        .map(|d| d.sample(rng))
        .map_err(|e| Error::InvalidArgument(format!("poisson mean {mean}: {e}")))
}

/// DN = clamp(round_half_even(I_e / G), 0, 2ⁿ − 1). With `quantize` off the
/// scaled value passes through unrounded and unclamped.
pub fn apply_gain_quantize(image: &BandedImage, scalars: &RadiometricScalars, quantize: bool) -> Result<BandedImage> {
    image.unit().expect(Unit::Electrons)?;
    let g = scalars.gain;
    let max = scalars.max_dn();
    image.map_bands(Unit::DigitalNumber, |_, band| {
        band.map(|e| {
            let v = e / g;
            if quantize {
                v.round_ties_even().clamp(0.0, max)
            } else {
                v
            }
        })
    })
}

/// L = DN·G / β.
pub fn back_to_radiance(image: &BandedImage, scalars: &RadiometricScalars) -> Result<BandedImage> {
    image.unit().expect(Unit::DigitalNumber)?;
    check_scalars(image, "beta", scalars.beta.len())?;
    if scalars.beta.iter().any(|&b| b <= 0.0) {
        return Err(Error::InvalidArgument("electron scalar must be positive to invert".into()));
    }
    image.map_bands(Unit::AtApertureRadiance, |b, band| {
        let k = scalars.gain / scalars.beta[b];
        band.map(|dn| dn * k)
    })
}

/// ρ = π·L·d² / (Esun·cos θ_s).
pub fn toa_reflectance(image: &BandedImage, metadata: &ImageMetadata, clamp: bool) -> Result<BandedImage> {
    image.unit().expect(Unit::AtApertureRadiance)?;
    metadata.check_bands(image.band_count())?;
    let theta = metadata.solar_zenith_deg;
    if !(0.0..90.0).contains(&theta) {
        return Err(Error::InvalidArgument(format!("solar zenith must lie in [0, 90) degrees, got {theta}")));
    }
    let d2 = metadata.earth_sun_distance_au.powi(2);
    let cos = theta.to_radians().cos();
    image.map_bands(Unit::ToaReflectance, |b, band| {
        let k = std::f64::consts::PI * d2 / (metadata.esun[b] * cos);
        band.map(|l| {
            let r = l * k;
            if clamp {
                r.clamp(0.0, 1.0)
            } else {
                r
            }
        })
    })
}
