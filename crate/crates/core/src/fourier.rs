//! DC-centered spectra on ground-frequency axes, MTF filtering, and
//! crop-plus-fold resampling to a coarser detector grid.
//!
//! Axis convention: bin `k` of an `N`-sample axis sits at
//! `(k − ⌊N/2⌋)·2ν/N` with `ν = 1/(2·gsd)`, so even-length axes run from `−ν`
//! up to `ν − 2ν/N`. The unpaired `−ν` bin of an even axis is split into two
//! conjugate halves at `±ν` whenever it is mapped onto another grid.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::imaging::Raster;
use crate::optics::{fft2, FrequencyBudget, TransferFunction};

/// Residual imaginary energy allowed when returning to the spatial domain.
pub const HERMITIAN_TOLERANCE: f64 = 1e-9;

const AXIS_TOLERANCE: f64 = 1e-9;

/// Half-open DC-centered frequency axis (cycles/m) for `n` samples at `gsd`.
pub fn dg_frequency_axis(gsd_m: f64, n_samples: usize) -> Result<Vec<f64>> {
    if !(gsd_m > 0.0 && gsd_m.is_finite()) {
        return Err(Error::InvalidArgument(format!("gsd must be positive, got {gsd_m}")));
    }
    if n_samples < 2 {
        return Err(Error::InvalidArgument("frequency axis needs at least 2 samples".into()));
    }
    Ok(centered_axis(n_samples, gsd_m * n_samples as f64))
}

/// Centered axis with spacing `1/extent`.
fn centered_axis(n: usize, extent_m: f64) -> Vec<f64> {
    let half = (n / 2) as f64;
    (0..n).map(|k| (k as f64 - half) / extent_m).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
    freq_y: Vec<f64>,
    freq_x: Vec<f64>,
    extent_m: (f64, f64),
}

impl Spectrum {
    /// Builds a DC-centered spectrum directly; axes follow from the extent.
    pub fn from_centered(
        rows: usize,
        cols: usize,
        data: Vec<Complex64>,
        extent_m: (f64, f64),
    ) -> Result<Self> {
        if data.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(Error::DimensionMismatch(format!(
                "spectrum {rows}x{cols} given {} bins",
                data.len()
            )));
        }
        Ok(Spectrum {
            rows,
            cols,
            data,
            freq_y: centered_axis(rows, extent_m.0),
            freq_x: centered_axis(cols, extent_m.1),
            extent_m,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn freq_y(&self) -> &[f64] {
        &self.freq_y
    }

    pub fn freq_x(&self) -> &[f64] {
        &self.freq_x
    }

    pub fn extent_m(&self) -> (f64, f64) {
        self.extent_m
    }

    /// Ground sample distance per axis (rows, cols).
    pub fn gsd_m(&self) -> (f64, f64) {
        (self.extent_m.0 / self.rows as f64, self.extent_m.1 / self.cols as f64)
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.cols + col]
    }

    pub fn dc(&self) -> Complex64 {
        self.at(self.rows / 2, self.cols / 2)
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    /// Energy in bins whose |ν_y| or |ν_x| exceeds `limit` (cycles/m).
    pub fn energy_beyond(&self, limit: f64) -> f64 {
        let mut e = 0.0;
        for (r, fy) in self.freq_y.iter().enumerate() {
            for (c, fx) in self.freq_x.iter().enumerate() {
                if fy.abs() > limit * (1.0 + AXIS_TOLERANCE) || fx.abs() > limit * (1.0 + AXIS_TOLERANCE) {
                    e += self.at(r, c).norm_sqr();
                }
            }
        }
        e
    }

    pub fn magnitude(&self) -> Raster {
        Raster::new(self.rows, self.cols, self.data.iter().map(|v| v.norm()).collect())
            .expect("shape matches")
    }
}

/// Forward DFT (unnormalized, DC-centered) of a band sampled at `gsd_m`.
pub fn forward_spectrum(band: &Raster, gsd_m: f64) -> Result<Spectrum> {
    if !band.is_finite() {
        return Err(Error::NonFinite);
    }
    let (rows, cols) = band.shape();
    let mut buf: Vec<Complex64> = band.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut buf, rows, cols, false);
    let data = shift(&buf, rows, cols, true);
    Spectrum::from_centered(
        rows,
        cols,
        data,
        (gsd_m * rows as f64, gsd_m * cols as f64),
    )
}

/// Inverse DFT back to a real raster, rejecting spectra whose imaginary
/// residue signals a broken Hermitian symmetry.
pub fn inverse_spectrum(spectrum: &Spectrum) -> Result<Raster> {
    let (rows, cols) = (spectrum.rows, spectrum.cols);
    let mut buf = shift(&spectrum.data, rows, cols, false);
    fft2(&mut buf, rows, cols, true);
    let n = (rows * cols) as f64;
    let mut imag = 0.0;
    let mut total = 0.0;
    let data: Vec<f64> = buf
        .iter()
        .map(|v| {
            let v = v / n;
            imag += v.im * v.im;
            total += v.norm_sqr();
            v.re
        })
        .collect();
    if total > 0.0 && imag / total > HERMITIAN_TOLERANCE {
        return Err(Error::NotHermitian {
            ratio: imag / total,
        });
    }
    Raster::new(rows, cols, data)
}

/// Moves DC between index 0 (`to_center = false` target) and the center.
fn shift(src: &[Complex64], rows: usize, cols: usize, to_center: bool) -> Vec<Complex64> {
    let (hr, hc) = (rows / 2, cols / 2);
    let mut out = vec![Complex64::new(0.0, 0.0); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            // centered index r ↔ natural index (r - hr) mod rows
            let (nr, nc) = ((r + rows - hr) % rows, (c + cols - hc) % cols);
            if to_center {
                out[r * cols + c] = src[nr * cols + nc];
            } else {
                out[nr * cols + nc] = src[r * cols + c];
            }
        }
    }
    out
}

fn axes_match(a: &[f64], b: &[f64]) -> bool {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= AXIS_TOLERANCE * scale)
}

/// Multiplies the spectrum by a transfer function sampled on its own axes.
pub fn apply_mtf(spectrum: &Spectrum, tf: &TransferFunction) -> Result<Spectrum> {
    if !axes_match(&tf.freq_y, &spectrum.freq_y) || !axes_match(&tf.freq_x, &spectrum.freq_x) {
        return Err(Error::DimensionMismatch(format!(
            "transfer function axes ({}x{}) do not match spectrum axes ({}x{})",
            tf.rows(),
            tf.cols(),
            spectrum.rows,
            spectrum.cols
        )));
    }
    let data = spectrum
        .data
        .iter()
        .zip(&tf.values)
        .map(|(s, &m)| s * m)
        .collect();
    Ok(Spectrum {
        data,
        ..spectrum.clone()
    })
}

/// For each input bin along one axis: the output bins it lands on and the
/// weight it carries there.
fn fold_map(n_in: usize, n_out: usize) -> Vec<[(usize, f64); 2]> {
    let half_in = (n_in / 2) as isize;
    let half_out = (n_out / 2) as isize;
    let wrap = |m: isize| -> usize { (m + half_out).rem_euclid(n_out as isize) as usize };
    (0..n_in)
        .map(|k| {
            let m = k as isize - half_in;
            if n_in.is_multiple_of(2) && m == -half_in {
                [(wrap(m), 0.5), (wrap(-m), 0.5)]
            } else {
                [(wrap(m), 1.0), (usize::MAX, 0.0)]
            }
        })
        .collect()
}

fn output_size(extent_m: f64, target_gsd_m: f64) -> usize {
    ((extent_m / target_gsd_m).round() as usize).max(1)
}

fn check_degradation(spectrum: &Spectrum, target_gsd_m: f64) -> Result<()> {
    if !(target_gsd_m > 0.0 && target_gsd_m.is_finite()) {
        return Err(Error::InvalidArgument(format!("target gsd must be positive, got {target_gsd_m}")));
    }
    let (gy, gx) = spectrum.gsd_m();
    let source = gy.min(gx);
    if target_gsd_m < source * (1.0 - 1e-12) {
        return Err(Error::SuperResolution {
            target: target_gsd_m,
            source_gsd: source,
        });
    }
    Ok(())
}

/// Zeroes every bin whose per-axis frequency index lies past the index
/// closest to `cutoff`.
fn crop_at(spectrum: &Spectrum, cutoff_gnd: f64) -> Spectrum {
    let keep = |axis: &[f64], extent: f64| -> Vec<bool> {
        let kmax = (cutoff_gnd * extent).round();
        axis.iter().map(|f| (f * extent).round().abs() <= kmax).collect()
    };
    let ky = keep(&spectrum.freq_y, spectrum.extent_m.0);
    let kx = keep(&spectrum.freq_x, spectrum.extent_m.1);
    let mut out = spectrum.clone();
    for r in 0..spectrum.rows {
        for c in 0..spectrum.cols {
            if !(ky[r] && kx[c]) {
                out.data[r * spectrum.cols + c] = Complex64::new(0.0, 0.0);
            }
        }
    }
    out
}

/// Tiled summation onto an `n_out` grid over the same ground extent: every
/// input bin is added to the output bin congruent to it modulo the output
/// sampling frequency. Equivalent to sampling the trigonometric interpolant
/// of the input at the coarser pixel centers.
pub fn fold_spectrum(spectrum: &Spectrum, rows_out: usize, cols_out: usize) -> Result<Spectrum> {
    if rows_out == 0 || cols_out == 0 {
        return Err(Error::InvalidArgument("empty output grid".into()));
    }
    let my = fold_map(spectrum.rows, rows_out);
    let mx = fold_map(spectrum.cols, cols_out);
    let scale = (rows_out * cols_out) as f64 / (spectrum.rows * spectrum.cols) as f64;
    let mut out = vec![Complex64::new(0.0, 0.0); rows_out * cols_out];
    for (r, ty) in my.iter().enumerate() {
        for (c, tx) in mx.iter().enumerate() {
            let v = spectrum.at(r, c);
            if v.re == 0.0 && v.im == 0.0 {
                continue;
            }
            for &(oy, wy) in ty.iter().filter(|t| t.1 != 0.0) {
                for &(ox, wx) in tx.iter().filter(|t| t.1 != 0.0) {
                    out[oy * cols_out + ox] += v * (wy * wx);
                }
            }
        }
    }
    for v in out.iter_mut() {
        *v *= scale;
    }
    Spectrum::from_centered(rows_out, cols_out, out, spectrum.extent_m)
}

/// Pure crop onto an `n_out` grid: keeps the central bins and discards the
/// rest. On inputs with no content at or beyond the output Nyquist this is
/// identical to [`fold_spectrum`].
pub fn crop_spectrum(spectrum: &Spectrum, rows_out: usize, cols_out: usize) -> Result<Spectrum> {
    if rows_out > spectrum.rows || cols_out > spectrum.cols || rows_out == 0 || cols_out == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot crop {}x{} to {rows_out}x{cols_out}",
            spectrum.rows, spectrum.cols
        )));
    }
    let scale = (rows_out * cols_out) as f64 / (spectrum.rows * spectrum.cols) as f64;
    let (hy_in, hx_in) = (spectrum.rows / 2, spectrum.cols / 2);
    let (hy_out, hx_out) = (rows_out / 2, cols_out / 2);
    let mut out = vec![Complex64::new(0.0, 0.0); rows_out * cols_out];
    for r in 0..rows_out {
        for c in 0..cols_out {
            let sr = r + hy_in - hy_out;
            let sc = c + hx_in - hx_out;
            out[r * cols_out + c] = spectrum.at(sr, sc) * scale;
        }
    }
    Spectrum::from_centered(rows_out, cols_out, out, spectrum.extent_m)
}

/// Resamples a filtered ground spectrum to the detector grid of `target_gsd`.
///
/// Content beyond `budget.nu_cutoff_gnd` is discarded first; anything still
/// above the output Nyquist (only possible when the system undersamples) is
/// folded back by tiled summation. The ground extent is held fixed and the
/// output size is `round(extent / target_gsd)` per axis.
pub fn resample_with_alias(
    spectrum: &Spectrum,
    budget: &FrequencyBudget,
    target_gsd_m: f64,
) -> Result<Spectrum> {
    check_degradation(spectrum, target_gsd_m)?;
    let rows_out = output_size(spectrum.extent_m.0, target_gsd_m);
    let cols_out = output_size(spectrum.extent_m.1, target_gsd_m);
    let cropped = crop_at(spectrum, budget.nu_cutoff_gnd);
    fold_spectrum(&cropped, rows_out, cols_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::SensorConfig;
    use crate::optics::frequency_budget;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_raster(rows: usize, cols: usize, seed: u64) -> Raster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Raster::from_fn(rows, cols, |_, _| rng.random::<f64>() * 100.0)
    }

    #[test]
    fn axis_examples() {
        assert_eq!(dg_frequency_axis(0.5, 4).unwrap(), vec![-1.0, -0.5, 0.0, 0.5]);
        let ax = dg_frequency_axis(2.0, 224).unwrap();
        assert!((ax[0] + 0.25).abs() < 1e-15);
        assert_eq!(ax[112], 0.0);
        assert!((ax[223] - (0.25 - 0.5 / 224.0)).abs() < 1e-15);
        for k in 1..112 {
            assert!((ax[112 + k] + ax[112 - k]).abs() < 1e-15);
        }
        let odd = dg_frequency_axis(1.0, 5).unwrap();
        assert_eq!(odd[0], -odd[4]);
        assert!(dg_frequency_axis(0.0, 4).is_err());
        assert!(dg_frequency_axis(1.0, 1).is_err());
    }

    #[test]
    fn constant_image_is_pure_dc() {
        let s = forward_spectrum(&Raster::filled(8, 6, 3.0), 1.0).unwrap();
        assert!((s.dc().re - 3.0 * 48.0).abs() < 1e-9);
        let off_dc: f64 = s.energy() - s.dc().norm_sqr();
        assert!(off_dc < 1e-18);
        let back = inverse_spectrum(&s).unwrap();
        assert!(back.max_abs_diff(&Raster::filled(8, 6, 3.0)) < 1e-12);
    }

    #[test]
    fn cosine_gives_conjugate_peaks() {
        let n = 32;
        let k0 = 5;
        let img = Raster::from_fn(n, n, |_, c| (2.0 * PI * k0 as f64 * c as f64 / n as f64).cos());
        let s = forward_spectrum(&img, 1.0).unwrap();
        let (plus, minus) = (s.at(16, 16 + k0), s.at(16, 16 - k0));
        assert!((plus.re - (n * n) as f64 / 2.0).abs() < 1e-9);
        assert!((plus - minus.conj()).norm() < 1e-9);
        let rest = s.energy() - plus.norm_sqr() - minus.norm_sqr();
        assert!(rest < 1e-12);
    }

    #[test]
    fn round_trip_and_parseval() {
        let img = random_raster(64, 64, 7);
        let s = forward_spectrum(&img, 0.5).unwrap();
        let back = inverse_spectrum(&s).unwrap();
        assert!(back.max_abs_diff(&img) < 1e-9);
        let spatial: f64 = img.data().iter().map(|v| v * v).sum();
        let spectral = s.energy() / (64.0 * 64.0);
        assert!((spatial - spectral).abs() / spatial < 1e-9);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut img = Raster::filled(4, 4, 1.0);
        img.set(1, 1, f64::NAN);
        assert!(matches!(forward_spectrum(&img, 1.0), Err(Error::NonFinite)));
    }

    #[test]
    fn broken_symmetry_is_rejected() {
        let mut data = vec![Complex64::new(0.0, 0.0); 16];
        data[5] = Complex64::new(1.0, 1.0);
        let s = Spectrum::from_centered(4, 4, data, (4.0, 4.0)).unwrap();
        assert!(matches!(inverse_spectrum(&s), Err(Error::NotHermitian { .. })));
        let mut dc = vec![Complex64::new(0.0, 0.0); 16];
        dc[10] = Complex64::new(32.0, 0.0);
        let flat = inverse_spectrum(&Spectrum::from_centered(4, 4, dc, (4.0, 4.0)).unwrap()).unwrap();
        assert!(flat.max_abs_diff(&Raster::filled(4, 4, 2.0)) < 1e-12);
    }

    #[test]
    fn unity_mtf_is_identity_and_axes_are_checked() {
        let s = forward_spectrum(&random_raster(16, 12, 1), 2.0).unwrap();
        let tf = TransferFunction::unity(s.freq_y().to_vec(), s.freq_x().to_vec());
        assert_eq!(apply_mtf(&s, &tf).unwrap(), s);
        let wrong = TransferFunction::unity(s.freq_x().to_vec(), s.freq_y().to_vec());
        assert!(apply_mtf(&s, &wrong).is_err());
    }

    #[test]
    fn single_tone_scaled_by_mtf() {
        let n = 64;
        let k0 = 6;
        let img = Raster::from_fn(n, n, |r, c| 10.0 + 3.0 * (2.0 * PI * (k0 * c + 2 * k0 * r) as f64 / n as f64).cos());
        let s = forward_spectrum(&img, 1.0).unwrap();
        // a radial transfer function, 1 - |ν|/ν_max
        let vmax = 0.5;
        let values = s
            .freq_y()
            .iter()
            .flat_map(|fy| s.freq_x().iter().map(move |fx| (1.0 - (fx * fx + fy * fy).sqrt() / vmax).max(0.0)))
            .collect();
        let tf = TransferFunction {
            values,
            freq_y: s.freq_y().to_vec(),
            freq_x: s.freq_x().to_vec(),
            band_wavelength_m: 0.0,
        };
        let filtered = inverse_spectrum(&apply_mtf(&s, &tf).unwrap()).unwrap();
        let nu = ((k0 as f64 / n as f64).powi(2) + (2.0 * k0 as f64 / n as f64).powi(2)).sqrt();
        let gain = 1.0 - nu / vmax;
        let expected = Raster::from_fn(n, n, |r, c| 10.0 + 3.0 * gain * (2.0 * PI * (k0 * c + 2 * k0 * r) as f64 / n as f64).cos());
        assert!(filtered.max_abs_diff(&expected) < 1e-6);
        assert!((apply_mtf(&s, &tf).unwrap().dc() - s.dc()).norm() < 1e-9);
    }

    fn wide_open_budget() -> FrequencyBudget {
        // large aperture: undersampled, optical cutoff far beyond any test grid
        frequency_budget(&SensorConfig::reference(1.0, 2.0)).unwrap()
    }

    #[test]
    fn same_gsd_resample_is_exact_noop() {
        let s = forward_spectrum(&random_raster(20, 20, 3), 1.0).unwrap();
        let out = resample_with_alias(&s, &wide_open_budget(), 1.0).unwrap();
        assert_eq!(out, s);
        let odd = forward_spectrum(&random_raster(15, 9, 4), 1.0).unwrap();
        assert_eq!(resample_with_alias(&odd, &wide_open_budget(), 1.0).unwrap(), odd);
    }

    #[test]
    fn super_resolution_is_refused() {
        let s = forward_spectrum(&random_raster(8, 8, 3), 1.0).unwrap();
        let err = resample_with_alias(&s, &wide_open_budget(), 0.5).unwrap_err();
        assert!(err.to_string().contains("cannot super-resolve"));
    }

    #[test]
    fn tone_above_new_nyquist_folds_to_mirror() {
        // 128 samples at 1 m → 64 samples at 2 m; new Nyquist 0.25 cyc/m.
        let n = 128;
        let nyq_out = 0.25;
        let nu = 1.5 * nyq_out;
        let img = Raster::from_fn(n, n, |_, c| 2.0 * (2.0 * PI * nu * c as f64).cos());
        let s = forward_spectrum(&img, 1.0).unwrap();
        let out = resample_with_alias(&s, &wide_open_budget(), 2.0).unwrap();
        let back = inverse_spectrum(&out).unwrap();
        let peak = out
            .freq_x()
            .iter()
            .enumerate()
            .max_by(|a, b| out.at(32, a.0).norm().total_cmp(&out.at(32, b.0).norm()))
            .map(|(_, f)| f.abs())
            .unwrap();
        assert!((peak - 0.5 * nyq_out).abs() < 1e-12);
        let amp = back.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((amp - 2.0).abs() < 0.1);
    }

    #[test]
    fn fold_preserves_mean_of_band_limited_input() {
        let img = Raster::from_fn(50, 50, |r, c| 4.0 + (2.0 * PI * (3 * r + 5 * c) as f64 / 50.0).sin());
        let s = forward_spectrum(&img, 0.5).unwrap();
        let out = inverse_spectrum(&resample_with_alias(&s, &wide_open_budget(), 1.7).unwrap()).unwrap();
        assert!((out.mean() - img.mean()).abs() < 1e-9);
        let flat = forward_spectrum(&Raster::filled(40, 40, 7.5), 1.0).unwrap();
        let flat_out = inverse_spectrum(&resample_with_alias(&flat, &wide_open_budget(), 3.0).unwrap()).unwrap();
        assert!(flat_out.max_abs_diff(&Raster::filled(13, 13, 7.5)) < 1e-9);
    }

    #[test]
    fn band_limited_fold_equals_crop_bitwise() {
        // exact zeros outside the central 19x19 bins
        let n = 48;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = (0..n * n)
            .map(|i| {
                let (r, c) = ((i / n) as isize - 24, (i % n) as isize - 24);
                if r.abs() <= 9 && c.abs() <= 9 {
                    Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        let s = Spectrum::from_centered(n, n, data, (48.0, 48.0)).unwrap();
        for out_n in [20, 21, 30] {
            assert_eq!(fold_spectrum(&s, out_n, out_n).unwrap(), crop_spectrum(&s, out_n, out_n).unwrap());
        }
    }

    #[test]
    fn oversampled_resample_has_no_content_past_cutoff() {
        let cfg = SensorConfig::reference(1.0, 0.01);
        let budget = frequency_budget(&cfg).unwrap();
        assert!(budget.oversampled);
        let s = forward_spectrum(&random_raster(90, 90, 5), 1.0).unwrap();
        let out = resample_with_alias(&s, &budget, budget.gsd_m).unwrap();
        assert_eq!(out.rows(), 30);
        let back = inverse_spectrum(&out).unwrap();
        assert!(back.is_finite());
        // crop only: energy per pixel cannot grow
        let power_in = s.energy() / (90.0f64 * 90.0).powi(2);
        let power_out = out.energy() / (30.0f64 * 30.0).powi(2);
        assert!(power_out <= power_in * (1.0 + 1e-12));
    }
}
