//! Interpretability and full-reference quality scores: GIQE5 NIIRS with its
//! RER and SNR inputs, PSNR, and SSIM.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Raster, SensorConfig};
use crate::optics::{self, TransferFunction};
use crate::radiometry::RadiometricScalars;

const METRES_PER_INCH: f64 = 0.0254;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GsdUnit {
    Meters,
    Inches,
}

/// Coefficients A₀..A₅ of GIQE5 together with the GSD unit they expect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Giqe5Coefficients {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub a5: f64,
    pub gsd_unit: GsdUnit,
    /// Scene radiance (W·µm⁻¹·m⁻²·sr⁻¹, shortest-wavelength band) at which SNR
    /// is evaluated. Absent means half-full-well signal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_reference_radiance: Option<f64>,
    pub provenance: String,
}

const BUNDLED_GIQE5: &str = include_str!("../assets/giqe5.json");

impl Giqe5Coefficients {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let c: Giqe5Coefficients = serde_json::from_str(text)?;
        if c.provenance.trim().is_empty() {
            return Err(Error::InvalidArgument("coefficient file needs a provenance string".into()));
        }
        let all = [c.a0, c.a1, c.a2, c.a3, c.a4, c.a5];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite GIQE coefficient".into()));
        }
        if let Some(l) = c.snr_reference_radiance {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidArgument(format!("snr_reference_radiance must be positive, got {l}")));
            }
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e))?;
        Self::from_json_str(&text).map_err(|e| Error::load(path, e))
    }

    /// The coefficient file shipped in `assets/giqe5.json`.
    pub fn bundled() -> Self {
        Self::from_json_str(BUNDLED_GIQE5).expect("bundled coefficient file is valid")
    }

    fn gsd_in_unit(&self, gsd_m: f64) -> f64 {
        match self.gsd_unit {
            GsdUnit::Meters => gsd_m,
            GsdUnit::Inches => gsd_m / METRES_PER_INCH,
        }
    }
}

/// NIIRS with each additive term exposed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NiirsBreakdown {
    pub gsd_m: f64,
    pub rer: f64,
    pub snr: f64,
    pub terms: [f64; 5],
    pub niirs: f64,
}

pub fn giqe5_breakdown(gsd_m: f64, rer: f64, snr: f64, c: &Giqe5Coefficients) -> Result<NiirsBreakdown> {
    for (name, v) in [("gsd", gsd_m), ("rer", rer), ("snr", snr)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
        }
    }
    let lr = rer.log10();
    let terms = [
        c.a0,
        c.a1 * c.gsd_in_unit(gsd_m).log10(),
        c.a2 * (1.0 - (c.a3 / snr).exp()) * lr,
        c.a4 * lr.powi(4),
        c.a5 / snr,
    ];
    Ok(NiirsBreakdown {
        gsd_m,
        rer,
        snr,
        terms,
        niirs: terms.iter().sum(),
    })
}

pub fn giqe5_niirs(gsd_m: f64, rer: f64, snr: f64, c: &Giqe5Coefficients) -> Result<f64> {
    giqe5_breakdown(gsd_m, rer, snr, c).map(|b| b.niirs)
}

/// Composite Simpson rule on uniformly spaced samples (odd count).
fn simpson(samples: &[f64], step: f64) -> f64 {
    let n = samples.len();
    debug_assert!(n >= 3 && n % 2 == 1);
    let mut acc = samples[0] + samples[n - 1];
    for (i, v) in samples.iter().enumerate().take(n - 1).skip(1) {
        acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    acc * step / 3.0
}

fn interp(profile: &[(f64, f64)], x: f64) -> f64 {
    match profile.partition_point(|p| p.0 <= x) {
        0 => profile[0].1,
        i if i >= profile.len() => profile[profile.len() - 1].1,
        i => {
            let (x0, y0) = profile[i - 1];
            let (x1, y1) = profile[i];
            y0 + (y1 - y0) * (x - x0) / (x1 - x0)
        }
    }
}

const RER_SAMPLES: usize = 8193;

/// Relative edge response from the ν_y = 0 profile of a transfer function.
///
/// The edge response is the integral of the line spread function; for a
/// real symmetric MTF the difference ER(+½ px) − ER(−½ px) reduces to
/// `(2/π)∫ MTF(u)·sin(πu)/u du` with `u` in cycles per pixel.
pub fn estimate_rer(tf: &TransferFunction, pixel_pitch_m: f64) -> Result<f64> {
    if !(pixel_pitch_m > 0.0) {
        return Err(Error::InvalidArgument("pixel pitch must be positive".into()));
    }
    let profile: Vec<(f64, f64)> = tf
        .positive_x_profile()
        .into_iter()
        .map(|(f, m)| (f * pixel_pitch_m, m))
        .collect();
    if profile.len() < 2 || profile.iter().all(|p| p.1 == 0.0) {
        return Err(Error::Metric("degenerate MTF: no positive-frequency support".into()));
    }
    let u_max = profile[profile.len() - 1].0;
    let step = u_max / (RER_SAMPLES - 1) as f64;
    let integrand: Vec<f64> = (0..RER_SAMPLES)
        .map(|i| {
            let u = i as f64 * step;
            let m = interp(&profile, u);
            if u == 0.0 {
                m * std::f64::consts::PI
            } else {
                m * (std::f64::consts::PI * u).sin() / u
            }
        })
        .collect();
    Ok(2.0 / std::f64::consts::PI * simpson(&integrand, step))
}

/// RER of the optics for the shortest-wavelength band.
pub fn rer_for_config(config: &SensorConfig) -> Result<f64> {
    let budget = optics::frequency_budget(config)?;
    let band = config.min_wavelength_band();
    let cut = budget.nu_optcut_cyc_per_m;
    let n = 1025;
    let axis: Vec<f64> = (0..n).map(|i| cut * (2.0 * i as f64 / (n - 1) as f64 - 1.0)).collect();
    let tf = optics::system_mtf(config, band, &[0.0], &axis)?;
    estimate_rer(&tf, config.pixel_pitch_m)
}

/// Radiance giving half a full well in the shortest-wavelength band.
pub fn mid_well_radiance(config: &SensorConfig) -> Result<f64> {
    let scalars = RadiometricScalars::new(config)?;
    Ok(config.well_depth_e / 2.0 / scalars.beta[config.min_wavelength_band()])
}

/// SNR = I_e / √(I_e + σ_read²), I_e = β·L in the shortest-wavelength band.
pub fn estimate_snr(config: &SensorConfig, reference_radiance: f64) -> Result<f64> {
    if !(reference_radiance > 0.0 && reference_radiance.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "reference radiance must be positive, got {reference_radiance}"
        )));
    }
    let scalars = RadiometricScalars::new(config)?;
    let ie = scalars.beta[config.min_wavelength_band()] * reference_radiance;
    Ok(ie / (ie + config.read_noise_e * config.read_noise_e).sqrt())
}

/// Predicted NIIRS for a sensor: detector GSD, optics RER, SNR at the
/// coefficient file's reference radiance.
pub fn predict_niirs(config: &SensorConfig, c: &Giqe5Coefficients) -> Result<NiirsBreakdown> {
    let budget = optics::frequency_budget(config)?;
    let rer = rer_for_config(config)?;
    let radiance = match c.snr_reference_radiance {
        Some(l) => l,
        None => mid_well_radiance(config)?,
    };
    let snr = estimate_snr(config, radiance)?;
    giqe5_breakdown(budget.gsd_m, rer, snr, c)
}

/// A score with per-band detail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub metric: String,
    pub value: f64,
    pub per_band: Vec<f64>,
    pub params: BTreeMap<String, f64>,
}

fn check_pair(reference: &[Raster], test: &[Raster]) -> Result<()> {
    if reference.len() != test.len() || reference.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "band counts {} and {}",
            reference.len(),
            test.len()
        )));
    }
    for (a, b) in reference.iter().zip(test) {
        if a.shape() != b.shape() {
            return Err(Error::DimensionMismatch(format!("shapes {:?} and {:?}", a.shape(), b.shape())));
        }
    }
    Ok(())
}

/// Mean over bands of 10·log₁₀(range²/MSE); identical bands give +∞.
pub fn psnr(reference: &[Raster], test: &[Raster], data_range: f64) -> Result<QualityScore> {
    check_pair(reference, test)?;
    if !(data_range > 0.0) {
        return Err(Error::InvalidArgument("data range must be positive".into()));
    }
    let per_band: Vec<f64> = reference
        .iter()
        .zip(test)
        .map(|(a, b)| {
            let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data().len() as f64;
            if mse == 0.0 {
                f64::INFINITY
            } else {
                10.0 * (data_range * data_range / mse).log10()
            }
        })
        .collect();
    Ok(QualityScore {
        metric: "psnr".into(),
        value: per_band.iter().sum::<f64>() / per_band.len() as f64,
        per_band,
        params: BTreeMap::from([("data_range".into(), data_range)]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub sigma: f64,
    /// Kernel half-width in units of sigma.
    pub truncate: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            sigma: 1.5,
            truncate: 3.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

impl SsimParams {
    fn radius(&self) -> usize {
        (self.truncate * self.sigma + 0.5) as usize
    }

    fn kernel(&self) -> Vec<f64> {
        let r = self.radius() as isize;
        let w: Vec<f64> = (-r..=r)
            .map(|i| (-0.5 * (i as f64 / self.sigma).powi(2)).exp())
            .collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    }
}

/// Half-sample symmetric index (d c b a | a b c d | d c b a).
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn convolve_line(line: &[f64], padded: &mut Vec<f64>, kernel: &[f64], out: &mut [f64]) {
    let r = kernel.len() / 2;
    let n = line.len();
    padded.clear();
    padded.extend((0..n + 2 * r).map(|i| line[mirror(i as isize - r as isize, n)]));
    for (x, o) in out.iter_mut().enumerate() {
        *o = padded[x..x + kernel.len()].iter().zip(kernel).map(|(v, k)| v * k).sum();
    }
}

fn gaussian_filter(src: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let mut padded = Vec::new();
    let mut tmp = vec![0.0; h * w];
    for (row, out) in src.chunks(w).zip(tmp.chunks_mut(w)) {
        convolve_line(row, &mut padded, kernel, out);
    }
    let mut out = vec![0.0; h * w];
    let (mut col, mut col_out) = (vec![0.0; h], vec![0.0; h]);
    for x in 0..w {
        for y in 0..h {
            col[y] = tmp[y * w + x];
        }
        convolve_line(&col, &mut padded, kernel, &mut col_out);
        for y in 0..h {
            out[y * w + x] = col_out[y];
        }
    }
    out
}

fn ssim_band(a: &Raster, b: &Raster, p: &SsimParams) -> Result<f64> {
    let (h, w) = a.shape();
    let win = 2 * p.radius() + 1;
    if h < win || w < win {
        return Err(Error::InvalidArgument(format!("image {h}x{w} smaller than the {win}x{win} window")));
    }
    let k = p.kernel();
    let (x, y) = (a.data(), b.data());
    let prod = |f: &dyn Fn(usize) -> f64| (0..h * w).map(f).collect::<Vec<_>>();
    let ux = gaussian_filter(x, h, w, &k);
    let uy = gaussian_filter(y, h, w, &k);
    let uxx = gaussian_filter(&prod(&|i| x[i] * x[i]), h, w, &k);
    let uyy = gaussian_filter(&prod(&|i| y[i] * y[i]), h, w, &k);
    let uxy = gaussian_filter(&prod(&|i| x[i] * y[i]), h, w, &k);
    let c1 = (p.k1 * p.data_range).powi(2);
    let c2 = (p.k2 * p.data_range).powi(2);
    let pad = (win - 1) / 2;
    let mut sum = 0.0;
    let mut count = 0usize;
    for r in pad..h - pad {
        for c in pad..w - pad {
            let i = r * w + c;
            let vx = uxx[i] - ux[i] * ux[i];
            let vy = uyy[i] - uy[i] * uy[i];
            let vxy = uxy[i] - ux[i] * uy[i];
            let num = (2.0 * ux[i] * uy[i] + c1) * (2.0 * vxy + c2);
            let den = (ux[i] * ux[i] + uy[i] * uy[i] + c1) * (vx + vy + c2);
            sum += num / den;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Gaussian-window SSIM per band, averaged over bands.
pub fn ssim(reference: &[Raster], test: &[Raster], params: &SsimParams) -> Result<QualityScore> {
    check_pair(reference, test)?;
    if !(params.data_range > 0.0 && params.sigma > 0.0) {
        return Err(Error::InvalidArgument("SSIM needs positive data range and sigma".into()));
    }
    let per_band = reference
        .iter()
        .zip(test)
        .map(|(a, b)| ssim_band(a, b, params))
        .collect::<Result<Vec<_>>>()?;
    Ok(QualityScore {
        metric: "ssim".into(),
        value: per_band.iter().sum::<f64>() / per_band.len() as f64,
        per_band,
        params: BTreeMap::from([
            ("sigma".into(), params.sigma),
            ("k1".into(), params.k1),
            ("k2".into(), params.k2),
            ("data_range".into(), params.data_range),
        ]),
    })
}

/// One point of a two-parameter (diameter × focal length) sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub group: f64,
    pub q: f64,
    pub value: f64,
}

/// Q at which a metric peaks, summarized over groups (e.g. diameters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalQ {
    pub metric: String,
    pub per_group: Vec<(f64, f64, f64)>,
    pub mean_q: f64,
    pub std_q: f64,
    pub val_min: f64,
    pub val_max: f64,
}

/// Per group, the Q of the largest value (first on ties); then mean and
/// population standard deviation of those Q values.
pub fn optimal_q(metric: &str, points: &[SweepPoint]) -> Result<OptimalQ> {
    let mut groups: Vec<f64> = points.iter().map(|p| p.group).collect();
    groups.sort_by(f64::total_cmp);
    groups.dedup();
    if groups.is_empty() {
        return Err(Error::Metric("no sweep points".into()));
    }
    let mut per_group = Vec::new();
    for g in groups {
        let best = points
            .iter()
            .filter(|p| p.group == g && p.value.is_finite())
            .fold(None::<&SweepPoint>, |best, p| match best {
                Some(b) if b.value >= p.value => Some(b),
                _ => Some(p),
            })
            .ok_or_else(|| Error::Metric(format!("no finite values for group {g}")))?;
        per_group.push((g, best.q, best.value));
    }
    let n = per_group.len() as f64;
    let mean_q = per_group.iter().map(|p| p.1).sum::<f64>() / n;
    let std_q = (per_group.iter().map(|p| (p.1 - mean_q).powi(2)).sum::<f64>() / n).sqrt();
    let vals = per_group.iter().map(|p| p.2);
    Ok(OptimalQ {
        metric: metric.into(),
        mean_q,
        std_q,
        val_min: vals.clone().fold(f64::INFINITY, f64::min),
        val_max: vals.fold(f64::NEG_INFINITY, f64::max),
        per_group,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeros() -> Giqe5Coefficients {
        Giqe5Coefficients {
            a0: 0.0,
            a1: 0.0,
            a2: 0.0,
            a3: 0.0,
            a4: 0.0,
            a5: 0.0,
            gsd_unit: GsdUnit::Meters,
            snr_reference_radiance: None,
            provenance: "test".into(),
        }
    }

    #[test]
    fn giqe_trivial_cases() {
        assert_eq!(giqe5_niirs(1.0, 0.5, 10.0, &zeros()).unwrap(), 0.0);
        let c = Giqe5Coefficients::bundled();
        let n = giqe5_niirs(2.0, 1.0, 8.0, &c).unwrap();
        let expect = c.a0 + c.a1 * (2.0 / 0.0254f64).log10() + c.a5 / 8.0;
        assert!((n - expect).abs() < 1e-12);
        assert!(giqe5_niirs(0.0, 0.5, 1.0, &c).is_err());
        assert!(giqe5_niirs(1.0, -0.5, 1.0, &c).is_err());
        assert!(Giqe5Coefficients::from_json_str(r#"{"a0":1,"a1":1,"a2":1,"a3":1,"a4":1,"a5":1,"gsd_unit":"meters","provenance":" "}"#).is_err());
    }

    #[test]
    fn giqe_matches_frozen_oracle() {
        let c = Giqe5Coefficients::bundled();
        for (g, r, s, want) in [
            (0.5, 0.9, 50.0, 5.231794298534435),
            (1.0, 0.6, 10.0, 3.9617521918174554),
            (3.0, 0.45, 4.0, 1.7757429254274386),
            (6.0, 0.3, 2.5, -0.10302014220704248),
            (12.0, 0.75, 120.0, 0.6691629849404294),
        ] {
            assert!((giqe5_niirs(g, r, s, &c).unwrap() - want).abs() < 1e-9);
        }
    }

    #[test]
    fn niirs_decreases_with_gsd() {
        let c = Giqe5Coefficients::bundled();
        let mut last = f64::INFINITY;
        for g in [0.3, 0.6, 1.0, 2.0, 5.0] {
            let v = giqe5_niirs(g, 0.7, 20.0, &c).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn rer_of_ideal_and_reference_systems() {
        // MTF ≡ 1 out to 100.5 cycles/pixel
        let axis: Vec<f64> = (-201..=201).map(|i| i as f64 * 0.5).collect();
        let unity = TransferFunction::unity(vec![0.0], axis.clone());
        let ideal = estimate_rer(&unity, 1.0).unwrap();
        assert!((ideal - 1.0).abs() < 1e-2, "{ideal}");

        let rer = rer_for_config(&SensorConfig::reference(0.5, 0.05)).unwrap();
        assert!((rer - 0.80010987301287).abs() < 5e-2, "{rer}");
        assert!((rer - 0.80010987301287).abs() < 1e-3, "{rer}");

        let zero = TransferFunction {
            values: vec![0.0; axis.len()],
            freq_y: vec![0.0],
            freq_x: axis,
            band_wavelength_m: 0.0,
        };
        assert!(estimate_rer(&zero, 1.0).is_err());
    }

    #[test]
    fn shrinking_mtf_lowers_rer() {
        let cfg = SensorConfig::reference(0.5, 0.05);
        let cut = 1.0 / (4.5e-7 * 10.0);
        let axis: Vec<f64> = (0..=400).map(|i| cut * (i as f64 / 200.0 - 1.0)).collect();
        let tf = optics::system_mtf(&cfg, 2, &[0.0], &axis).unwrap();
        let mut half = tf.clone();
        for (v, f) in half.values.iter_mut().zip(&axis) {
            if *f != 0.0 {
                *v *= 0.5;
            }
        }
        assert!(estimate_rer(&half, 6e-6).unwrap() < estimate_rer(&tf, 6e-6).unwrap());
    }

    #[test]
    fn snr_cases() {
        let mut cfg = SensorConfig::reference(0.5, 0.05);
        cfg.read_noise_e = 0.0;
        let ie = RadiometricScalars::new(&cfg).unwrap().beta[2] * 40.0;
        assert!((estimate_snr(&cfg, 40.0).unwrap() - ie.sqrt()).abs() < 1e-9);
        let cfg = SensorConfig::reference(0.5, 0.05);
        let beta = RadiometricScalars::new(&cfg).unwrap().beta[2];
        let l = 156.25 / beta;
        assert!((estimate_snr(&cfg, l).unwrap() - 12.5 / 2f64.sqrt()).abs() < 1e-9);
        assert!(estimate_snr(&cfg, 0.0).is_err());
        let mut last = 0.0;
        for d in [0.05, 0.055, 0.06, 0.065, 0.07, 0.075] {
            let s = estimate_snr(&SensorConfig::reference(0.5, d), 20.0).unwrap();
            assert!(s > last);
            last = s;
        }
    }

    #[test]
    fn psnr_cases() {
        let a = vec![Raster::from_fn(8, 8, |r, c| (r + c) as f64 / 20.0)];
        assert_eq!(psnr(&a, &a, 1.0).unwrap().value, f64::INFINITY);
        let shifted = vec![a[0].map(|v| v + 0.1)];
        assert!((psnr(&a, &shifted, 1.0).unwrap().value - 20.0).abs() < 1e-9);
        let zeros = vec![Raster::filled(4, 4, 0.0)];
        let ones = vec![Raster::filled(4, 4, 1.0)];
        assert!(psnr(&zeros, &ones, 1.0).unwrap().value.abs() < 1e-12);
        assert!(psnr(&a, &zeros, 1.0).is_err());
    }

    pub(crate) fn golden_pair() -> (Raster, Raster) {
        let pattern = |i: i64, j: i64, a: i64, b: i64| ((i * a) ^ (j * b)).rem_euclid(1000) as f64 / 1000.0;
        let reference = Raster::from_fn(64, 64, |i, j| {
            let (fi, fj) = (i as f64, j as f64);
            0.5 + 0.3 * (0.3 * fi).sin() * (0.2 * fj).cos() + 0.1 * pattern(i as i64, j as i64, 73856093, 19349663)
        });
        let test = Raster::from_fn(64, 64, |i, j| {
            0.9 * reference.get(i, j) + 0.05 + 0.05 * pattern(i as i64, j as i64, 83492791, 35761)
        });
        (reference, test)
    }

    #[test]
    fn ssim_golden_and_symmetry() {
        let (a, b) = golden_pair();
        assert!((a.get(3, 5) - 0.7097700006560879).abs() < 1e-15);
        assert!((b.get(3, 5) - 0.7323930005904791).abs() < 1e-15);
        let p = SsimParams::default();
        let s = ssim(&[a.clone()], &[b.clone()], &p).unwrap().value;
        assert!((s - 0.9751603142616624).abs() < 1e-4, "{s}");
        let t = ssim(&[b.clone()], &[a.clone()], &p).unwrap().value;
        assert!((s - t).abs() < 1e-12);
        assert!((ssim(&[a.clone()], &[a.clone()], &p).unwrap().value - 1.0).abs() < 1e-12);
        let small = Raster::filled(8, 8, 0.0);
        assert!(ssim(&[small.clone()], &[small], &p).is_err());
    }

    #[test]
    fn mirror_indexing() {
        let got: Vec<usize> = (-3..7).map(|i| mirror(i, 4)).collect();
        assert_eq!(got, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
    }

    #[test]
    fn optimal_q_summary() {
        let pts = [
            SweepPoint { group: 1.0, q: 0.5, value: 1.0 },
            SweepPoint { group: 1.0, q: 0.8, value: 3.0 },
            SweepPoint { group: 2.0, q: 0.6, value: 2.0 },
            SweepPoint { group: 2.0, q: 1.0, value: 0.5 },
        ];
        let o = optimal_q("m", &pts).unwrap();
        assert!((o.mean_q - 0.7).abs() < 1e-12);
        assert!((o.std_q - 0.1).abs() < 1e-12);
        assert_eq!((o.val_min, o.val_max), (2.0, 3.0));
    }
}
