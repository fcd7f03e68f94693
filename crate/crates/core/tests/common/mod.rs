//! Synthetic scenes shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use sensorsim::formats;
use sensorsim::imaging::{BandedImage, DatasetManifest, ImageMetadata, ManifestEntry, Raster, Unit};

pub const ABSCAL: f64 = 0.01;
pub const BANDWIDTH_UM: f64 = 0.05;
pub const ESUN: f64 = 1800.0;
pub const ZENITH_DEG: f64 = 30.0;
pub const MEAN_DARK_REFLECTANCE: f64 = 0.045;

pub fn metadata(id: &str, class: &str, gsd_m: f64) -> ImageMetadata {
    ImageMetadata {
        abscal_factor: vec![ABSCAL; 3],
        effective_bandwidth_um: vec![BANDWIDTH_UM; 3],
        earth_sun_distance_au: 1.0,
        solar_zenith_deg: ZENITH_DEG,
        esun: vec![ESUN; 3],
        source_gsd_m: gsd_m,
        class_label: class.into(),
        instance_id: id.into(),
        bbox: None,
        band_names: None,
    }
}

/// DN that calibrates to TOA reflectance `rho` under [`metadata`].
pub fn reflectance_to_dn(rho: f64) -> f64 {
    let radiance = rho * ESUN * ZENITH_DEG.to_radians().cos() / std::f64::consts::PI;
    radiance * BANDWIDTH_UM / ABSCAL
}

pub fn dn_image(bands: Vec<Raster>, gsd_m: f64) -> BandedImage {
    let dn = bands.into_iter().map(|b| b.map(reflectance_to_dn)).collect();
    BandedImage::with_default_names(dn, Unit::DigitalNumber, gsd_m).unwrap()
}

/// Zero-mean Gaussian field shaped by `gain(ν_y, ν_x)` (cycles per pixel), scaled to unit standard deviation.
pub fn filtered_field(n: usize, rng: &mut ChaCha8Rng, gain: impl Fn(f64, f64) -> f64) -> Raster {
    let mut buf: Vec<Complex64> = (0..n * n).map(|_| Complex64::new(rng.sample(StandardNormal), 0.0)).collect();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    fft2(&mut buf, n, &*fwd);
    let axis = |i: usize| (if i <= n / 2 { i as f64 } else { i as f64 - n as f64 }) / n as f64;
    for r in 0..n {
        for c in 0..n {
            let (fy, fx) = (axis(r), axis(c));
            buf[r * n + c] *= if fy == 0.0 && fx == 0.0 { 0.0 } else { gain(fy, fx) };
        }
    }
    fft2(&mut buf, n, &*inv);
    let data: Vec<f64> = buf.iter().map(|v| v.re).collect();
    let mean = data.iter().sum::<f64>() / data.len() as f64;
    let sd = (data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / data.len() as f64).sqrt();
    Raster::new(n, n, data.iter().map(|v| (v - mean) / sd).collect()).unwrap()
}

/// Field with amplitude spectrum ∝ 1/|ν|^slope.
pub fn power_law_field(n: usize, slope: f64, rng: &mut ChaCha8Rng) -> Raster {
    filtered_field(n, rng, |fy, fx| fy.hypot(fx).powf(-slope))
}

/// Texture confined to an annulus of ±`rel_width` around the frequency of
/// `period_px`, and to directions within `half_angle` radians of `axis`
/// (0 for frequencies along x, π/2 along y).
pub fn oriented_ring_field(n: usize, period_px: f64, rel_width: f64, axis: f64, half_angle: f64, rng: &mut ChaCha8Rng) -> Raster {
    let center = 1.0 / period_px;
    filtered_field(n, rng, |fy, fx| {
        let nu = fx.hypot(fy);
        let off = (fy.atan2(fx) - axis).rem_euclid(std::f64::consts::PI);
        let off = off.min(std::f64::consts::PI - off);
        if (nu - center).abs() <= rel_width * center && off <= half_angle {
            1.0
        } else {
            0.0
        }
    })
}

fn fft2(buf: &mut [Complex64], n: usize, plan: &dyn rustfft::Fft<f64>) {
    for row in buf.chunks_mut(n) {
        plan.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for c in 0..n {
        for r in 0..n {
            col[r] = buf[r * n + c];
        }
        plan.process(&mut col);
        for r in 0..n {
            buf[r * n + c] = col[r];
        }
    }
}

/// Natural-looking RGB reflectance scene: a shared 1/ν field with per-band
/// gain, mean reflectance drawn from `base` and standard deviation a
/// fraction `contrast` of it.
pub fn natural_scene(n: usize, seed: u64, base: std::ops::Range<f64>, contrast: f64) -> Vec<Raster> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let field = power_law_field(n, 1.0, &mut rng);
    let base: f64 = rng.random_range(base);
    let contrast = contrast * base;
    [1.0, 0.9, 0.8]
        .iter()
        .map(|k| field.map(|v| (k * (base + contrast * v)).max(0.002)))
        .collect()
}

pub fn write_entry(dir: &Path, image: &BandedImage, md: &ImageMetadata) -> ManifestEntry {
    let image_name = format!("{}.bimg", md.instance_id);
    let md_name = format!("{}.json", md.instance_id);
    formats::write_bimg(&dir.join(&image_name), image.bands(), Unit::DigitalNumber).unwrap();
    std::fs::write(dir.join(&md_name), serde_json::to_string(md).unwrap()).unwrap();
    ManifestEntry {
        image: image_name.into(),
        metadata: md_name.into(),
        class_label: md.class_label.clone(),
        instance_id: md.instance_id.clone(),
    }
}

pub fn write_manifest(dir: &Path, classes: Vec<String>, entries: Vec<ManifestEntry>) -> DatasetManifest {
    let manifest = DatasetManifest {
        classes,
        entries,
        base_dir: dir.to_path_buf(),
    };
    manifest.save(&dir.join("manifest.json")).unwrap();
    manifest
}

/// Scene whose class sets how a fixed energy of texture at period
/// `period_m` splits between near-horizontal and near-vertical
/// orientations. Brightness and the strength of a 1/ν background vary per
/// image.
pub fn texture_scene(
    n: usize,
    gsd_m: f64,
    class: usize,
    classes: usize,
    period_m: f64,
    texture: f64,
    background: f64,
    seed: u64,
) -> Vec<Raster> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: f64 = rng.random_range(0.03..0.06);
    let bg = background * MEAN_DARK_REFLECTANCE * rng.random_range(0.5..1.5);
    let w = class as f64 / (classes - 1) as f64;
    let amp = texture * MEAN_DARK_REFLECTANCE;
    let field = power_law_field(n, 1.0, &mut rng);
    let sector = 20f64.to_radians();
    let along_x = oriented_ring_field(n, period_m / gsd_m, 0.1, 0.0, sector, &mut rng);
    let along_y = oriented_ring_field(n, period_m / gsd_m, 0.1, std::f64::consts::FRAC_PI_2, sector, &mut rng);
    let (ax, ay) = (amp * w.sqrt(), amp * (1.0 - w).sqrt());
    let scene = Raster::from_fn(n, n, |r, c| base + bg * field.get(r, c) + ax * along_x.get(r, c) + ay * along_y.get(r, c));
    [1.0, 0.9, 0.8].iter().map(|g| scene.map(|v| (g * v).max(0.002))).collect()
}
