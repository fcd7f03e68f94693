//! Diffraction-limited optics: f-number, optical Q, the frequency budget of a
//! sensor, and the incoherent transfer function of a clear circular aperture.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::SensorConfig;

/// Default sampling grid for the pupil autocorrelation.
pub const DEFAULT_MTF_GRID: usize = 512;

/// Relative tolerance under which Q is treated as exactly 2 (Nyquist-matched).
const Q_TIE_TOLERANCE: f64 = 1e-12;

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
    }
}

pub fn f_number(focal_length_m: f64, aperture_diameter_m: f64) -> Result<f64> {
    Ok(positive("focal length", focal_length_m)? / positive("aperture diameter", aperture_diameter_m)?)
}

/// Q = λ_min·FN / p.
pub fn optical_q(min_wavelength_m: f64, f_number: f64, pixel_pitch_m: f64) -> Result<f64> {
    Ok(positive("wavelength", min_wavelength_m)? * positive("f-number", f_number)?
        / positive("pixel pitch", pixel_pitch_m)?)
}

/// Derived frequency quantities of a sensor. Image-plane frequencies are in
/// cycles per metre at the focal plane; `_gnd` values are projected to the
/// ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBudget {
    pub fn_: f64,
    pub q: f64,
    pub gsd_m: f64,
    pub gss_optics_m: f64,
    pub nu_optcut_cyc_per_m: f64,
    pub nu_optcut_gnd: f64,
    pub nu_nyquist: f64,
    pub nu_nyquist_gnd: f64,
    pub nu_cutoff: f64,
    pub nu_cutoff_gnd: f64,
    pub oversampled: bool,
}

impl FrequencyBudget {
    /// Detector pixel pitch recovered from the image-plane Nyquist limit.
    pub fn pixel_pitch_m(&self) -> f64 {
        1.0 / (2.0 * self.nu_nyquist)
    }
}

pub fn frequency_budget(config: &SensorConfig) -> Result<FrequencyBudget> {
    config.validate()?;
    let lambda = config.min_wavelength_m();
    let f = config.focal_length_m;
    let d = config.aperture_diameter_m;
    let p = config.pixel_pitch_m;
    let h = config.altitude_m;

    let fn_ = f_number(f, d)?;
    let q = optical_q(lambda, fn_, p)?;
    let gsd_m = p * h / f;
    let gss_optics_m = lambda * h / d;
    let nu_optcut = 1.0 / (lambda * fn_);
    let nu_optcut_gnd = d / (2.0 * lambda * h);
    let nu_nyquist = 1.0 / (2.0 * p);
    let nu_nyquist_gnd = 1.0 / (2.0 * gsd_m);

    // ν_optcut > ν_nyquist ⇔ Q < 2; equality falls through to the Nyquist branch.
    let undersampled = q < 2.0 * (1.0 - Q_TIE_TOLERANCE);
    let (nu_cutoff, nu_cutoff_gnd) = if undersampled {
        (nu_optcut, nu_optcut_gnd)
    } else {
        (nu_nyquist, nu_nyquist_gnd)
    };
    Ok(FrequencyBudget {
        fn_,
        q,
        gsd_m,
        gss_optics_m,
        nu_optcut_cyc_per_m: nu_optcut,
        nu_optcut_gnd,
        nu_nyquist,
        nu_nyquist_gnd,
        nu_cutoff,
        nu_cutoff_gnd,
        oversampled: !undersampled,
    })
}

/// Diffraction-limited MTF of a clear circular aperture at normalized
/// frequency `x = ν/ν_optcut`.
pub fn analytic_circular_mtf(x: f64) -> f64 {
    let x = x.abs();
    if x >= 1.0 {
        0.0
    } else {
        (2.0 / std::f64::consts::PI) * (x.acos() - x * (1.0 - x * x).sqrt())
    }
}

/// Sampled pupil in frequency-plane coordinates.
#[derive(Debug, Clone)]
pub struct PupilField {
    pub grid_size: usize,
    pub radius_samples: f64,
    pub values: Vec<Complex64>,
}

impl PupilField {
    pub fn at(&self, row: usize, col: usize) -> Complex64 {
        self.values[row * self.grid_size + col]
    }

    pub fn nonzero_fraction(&self) -> f64 {
        self.values.iter().filter(|v| v.re != 0.0).count() as f64 / self.values.len() as f64
    }
}

/// Circle function scaled so that its autocorrelation reaches zero at
/// ν_optcut = 1/(λ·FN). `sample_pitch` is the frequency spacing of the grid
/// in cycles/m, so the pupil radius is `1 / (2·λ·FN·sample_pitch)` samples.
/// The grid must hold twice the pupil diameter so the autocorrelation does
/// not wrap.
pub fn pupil_function(
    grid_size: usize,
    f_number: f64,
    wavelength_m: f64,
    sample_pitch: f64,
) -> Result<PupilField> {
    positive("f-number", f_number)?;
    positive("wavelength", wavelength_m)?;
    positive("sample pitch", sample_pitch)?;
    let radius = 1.0 / (2.0 * wavelength_m * f_number * sample_pitch);
    if (grid_size as f64) < 4.0 * radius || grid_size < 4 {
        return Err(Error::InvalidArgument(format!(
            "grid of {grid_size} samples too small for pupil radius {radius:.2} (needs >= {:.0})",
            (4.0 * radius).ceil()
        )));
    }
    let c = (grid_size / 2) as f64;
    let r2 = radius * radius;
    let mut values = vec![Complex64::new(0.0, 0.0); grid_size * grid_size];
    for row in 0..grid_size {
        let dy = row as f64 - c;
        for col in 0..grid_size {
            let dx = col as f64 - c;
            if dx * dx + dy * dy <= r2 {
                values[row * grid_size + col] = Complex64::new(1.0, 0.0);
            }
        }
    }
    Ok(PupilField {
        grid_size,
        radius_samples: radius,
        values,
    })
}

/// Normalized pupil autocorrelation on a centered grid; one sample step is
/// `1 / (2·radius)` of the optical cutoff.
#[derive(Debug)]
struct NormalizedOtf {
    grid: usize,
    samples_per_cutoff: f64,
    values: Vec<f64>,
}

impl NormalizedOtf {
    fn compute(grid: usize) -> Result<Self> {
        // Unit cutoff: λ·FN = 1 and sample pitch chosen for radius = grid/4.
        let radius = grid as f64 / 4.0;
        let pupil = pupil_function(grid, 1.0, 1.0, 1.0 / (2.0 * radius))?;
        let mut buf = pupil.values;
        let n = grid;
        fft2(&mut buf, n, n, false);
        for v in buf.iter_mut() {
            *v = Complex64::new(v.norm_sqr(), 0.0);
        }
        fft2(&mut buf, n, n, true);
        // The inverse is unnormalized; the scale cancels in the DC normalization.
        let dc = buf[0].re;
        let half = n / 2;
        let mut values = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                let src = ((r + n - half) % n) * n + (c + n - half) % n;
                values[r * n + c] = (buf[src].re / dc).clamp(0.0, 1.0);
            }
        }
        Ok(NormalizedOtf {
            grid: n,
            samples_per_cutoff: 2.0 * radius,
            values,
        })
    }

    /// Bilinear lookup at normalized frequency (x, y) = ν/ν_optcut.
    fn sample(&self, x: f64, y: f64) -> f64 {
        if (x * x + y * y) >= 1.0 {
            return 0.0;
        }
        let c = (self.grid / 2) as f64;
        let fx = c + x * self.samples_per_cutoff;
        let fy = c + y * self.samples_per_cutoff;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let tx = fx - x0;
        let ty = fy - y0;
        let at = |r: f64, c: f64| -> f64 {
            let (r, c) = (r as isize, c as isize);
            if r < 0 || c < 0 || r >= self.grid as isize || c >= self.grid as isize {
                0.0
            } else {
                self.values[r as usize * self.grid + c as usize]
            }
        };
        let v = at(y0, x0) * (1.0 - tx) * (1.0 - ty)
            + at(y0, x0 + 1.0) * tx * (1.0 - ty)
            + at(y0 + 1.0, x0) * (1.0 - tx) * ty
            + at(y0 + 1.0, x0 + 1.0) * tx * ty;
        v.clamp(0.0, 1.0)
    }
}

fn otf_cache(grid: usize) -> Result<Arc<NormalizedOtf>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<NormalizedOtf>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(hit) = cache.lock().unwrap().get(&grid) {
        return Ok(hit.clone());
    }
    let otf = Arc::new(NormalizedOtf::compute(grid)?);
    cache.lock().unwrap().insert(grid, otf.clone());
    Ok(otf)
}

/// A sampled transfer function on a (rows × cols) frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    pub values: Vec<f64>,
    pub freq_y: Vec<f64>,
    pub freq_x: Vec<f64>,
    pub band_wavelength_m: f64,
}

impl TransferFunction {
    /// MTF ≡ 1 on the given axes.
    pub fn unity(freq_y: Vec<f64>, freq_x: Vec<f64>) -> Self {
        TransferFunction {
            values: vec![1.0; freq_y.len() * freq_x.len()],
            freq_y,
            freq_x,
            band_wavelength_m: 0.0,
        }
    }

    pub fn rows(&self) -> usize {
        self.freq_y.len()
    }

    pub fn cols(&self) -> usize {
        self.freq_x.len()
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols() + col]
    }

    /// Samples along +ν_x on the row closest to ν_y = 0.
    pub fn positive_x_profile(&self) -> Vec<(f64, f64)> {
        let row = self
            .freq_y
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        self.freq_x
            .iter()
            .enumerate()
            .filter(|(_, &f)| f >= 0.0)
            .map(|(c, &f)| (f, self.at(row, c)))
            .collect()
    }
}

fn check_axis(name: &str, axis: &[f64]) -> Result<()> {
    if axis.is_empty() || axis.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} axis empty or non-finite")));
    }
    if axis.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(format!("{name} axis must be strictly increasing")));
    }
    let (lo, hi) = (axis[0], axis[axis.len() - 1]);
    if lo > 0.0 || hi < 0.0 {
        return Err(Error::InvalidArgument(format!("{name} axis must span zero")));
    }
    Ok(())
}

/// Optics-only system MTF for one band, sampled on image-plane frequency axes
/// (cycles/m at the focal plane).
pub fn system_mtf(
    config: &SensorConfig,
    band_index: usize,
    freq_y: &[f64],
    freq_x: &[f64],
) -> Result<TransferFunction> {
    system_mtf_with_grid(config, band_index, freq_y, freq_x, DEFAULT_MTF_GRID)
}

/// System MTF sampled at ground frequencies (cycles/m on the ground); the
/// returned function carries the ground axes.
pub fn ground_mtf(
    config: &SensorConfig,
    band_index: usize,
    freq_y_gnd: &[f64],
    freq_x_gnd: &[f64],
) -> Result<TransferFunction> {
    let scale = config.altitude_m / config.focal_length_m;
    let to_image = |axis: &[f64]| axis.iter().map(|v| v * scale).collect::<Vec<_>>();
    let mut tf = system_mtf(config, band_index, &to_image(freq_y_gnd), &to_image(freq_x_gnd))?;
    tf.freq_y = freq_y_gnd.to_vec();
    tf.freq_x = freq_x_gnd.to_vec();
    Ok(tf)
}

pub fn system_mtf_with_grid(
    config: &SensorConfig,
    band_index: usize,
    freq_y: &[f64],
    freq_x: &[f64],
    grid: usize,
) -> Result<TransferFunction> {
    config.validate()?;
    let wavelength = *config.center_wavelength_m.get(band_index).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "band {band_index} out of range for {} bands",
            config.band_count()
        ))
    })?;
    check_axis("y", freq_y)?;
    check_axis("x", freq_x)?;
    let fn_ = f_number(config.focal_length_m, config.aperture_diameter_m)?;
    let cutoff = 1.0 / (wavelength * fn_);
    let otf = otf_cache(grid)?;
    let mut values = Vec::with_capacity(freq_y.len() * freq_x.len());
    for &fy in freq_y {
        for &fx in freq_x {
            let v = if fx == 0.0 && fy == 0.0 {
                1.0
            } else {
                otf.sample(fx / cutoff, fy / cutoff)
            };
            values.push(v);
        }
    }
    Ok(TransferFunction {
        values,
        freq_y: freq_y.to_vec(),
        freq_x: freq_x.to_vec(),
        band_wavelength_m: wavelength,
    })
}

/// In-place 2-D FFT over a row-major `rows × cols` buffer. The inverse is
/// unnormalized.
pub(crate) fn fft2(buf: &mut [Complex64], rows: usize, cols: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = if inverse {
        planner.plan_fft_inverse(cols)
    } else {
        planner.plan_fft_forward(cols)
    };
    for row in buf.chunks_exact_mut(cols) {
        row_fft.process(row);
    }
    let col_fft = if inverse {
        planner.plan_fft_inverse(rows)
    } else {
        planner.plan_fft_forward(rows)
    };
    let mut column = vec![Complex64::new(0.0, 0.0); rows];
    for c in 0..cols {
        for r in 0..rows {
            column[r] = buf[r * cols + c];
        }
        col_fft.process(&mut column);
        for r in 0..rows {
            buf[r * cols + c] = column[r];
        }
    }
}
