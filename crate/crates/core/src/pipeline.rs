//! Per-image simulation: preprocessing, the physics chain, and resampling
//! back to the 224×224 analysis grid.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats;
use crate::fourier::{self, Spectrum};
use crate::imaging::{self, BandedImage, DatasetManifest, ImageMetadata, Raster, SensorConfig, Unit};
use crate::optics::{self, FrequencyBudget, TransferFunction};
use crate::radiometry::{self, NoiseMode, NoiseStream, RadiometricScalars};

pub const OUTPUT_SIZE: usize = 224;
/// Reflect padding added on every side in resize mode.
pub const RESIZE_MARGIN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreprocessMode {
    #[default]
    Crop,
    Resize,
}

impl std::str::FromStr for PreprocessMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crop" => Ok(PreprocessMode::Crop),
            "resize" => Ok(PreprocessMode::Resize),
            other => Err(Error::InvalidArgument(format!("unknown preprocessing mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MtfMode {
    #[default]
    Diffraction,
    /// Perfect optics: no blur and no optical band limit.
    Unity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationOptions {
    pub noise: NoiseMode,
    pub quantize: bool,
    pub mtf: MtfMode,
    pub clamp_reflectance: bool,
    pub seed: u64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions {
            noise: NoiseMode::Gaussian,
            quantize: true,
            mtf: MtfMode::Diffraction,
            clamp_reflectance: false,
            seed: 0,
        }
    }
}

impl SimulationOptions {
    /// Noise, quantization and blur all disabled.
    pub fn ideal(seed: u64) -> Self {
        SimulationOptions {
            noise: NoiseMode::Off,
            quantize: false,
            mtf: MtfMode::Unity,
            clamp_reflectance: false,
            seed,
        }
    }
}

/// A 224×224 analysis window (plus reflect margin in resize mode) in DN.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub image: BandedImage,
    pub mode: PreprocessMode,
    pub margin: usize,
    /// Source pixels per output pixel along (rows, cols).
    pub warp: (f64, f64),
}

/// Samples `src` with bilinear interpolation at fractional pixel
/// coordinates, clamping at the borders.
fn bilinear_at(src: &Raster, y: f64, x: f64) -> f64 {
    let (h, w) = src.shape();
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (ty, tx) = (y - y0 as f64, x - x0 as f64);
    let top = src.get(y0, x0) * (1.0 - tx) + src.get(y0, x1) * tx;
    let bottom = src.get(y1, x0) * (1.0 - tx) + src.get(y1, x1) * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Bilinear warp of the window `(y0, x0, height, width)` onto an
/// `out_h × out_w` grid, pixel centers aligned.
pub fn warp_region(
    src: &Raster,
    window: (f64, f64, f64, f64),
    out_h: usize,
    out_w: usize,
) -> Raster {
    let (y0, x0, wh, ww) = window;
    let (sy, sx) = (wh / out_h as f64, ww / out_w as f64);
    Raster::from_fn(out_h, out_w, |r, c| {
        bilinear_at(src, y0 + (r as f64 + 0.5) * sy - 0.5, x0 + (c as f64 + 0.5) * sx - 0.5)
    })
}

/// Bilinear resize of the whole raster.
pub fn resize_bilinear(src: &Raster, out_h: usize, out_w: usize) -> Raster {
    let (h, w) = src.shape();
    if (h, w) == (out_h, out_w) {
        return src.clone();
    }
    warp_region(src, (0.0, 0.0, h as f64, w as f64), out_h, out_w)
}

/// Mirror padding without repeating the edge sample.
pub fn reflect_pad(src: &Raster, margin: usize) -> Result<Raster> {
    let (h, w) = src.shape();
    if margin >= h || margin >= w {
        return Err(Error::InvalidArgument(format!("reflect margin {margin} needs an image larger than {h}x{w}")));
    }
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let i = if i < 0 { -i } else { i };
        (if i >= n { 2 * (n - 1) - i } else { i }) as usize
    };
    let m = margin as isize;
    Ok(Raster::from_fn(h + 2 * margin, w + 2 * margin, |r, c| {
        src.get(reflect(r as isize - m, h), reflect(c as isize - m, w))
    }))
}

fn clip_margin(src: &Raster, margin: usize) -> Raster {
    let (h, w) = src.shape();
    Raster::from_fn(h - 2 * margin, w - 2 * margin, |r, c| src.get(r + margin, c + margin))
}

/// Cuts or warps the object region to the analysis grid.
pub fn preprocess(image: &BandedImage, metadata: &ImageMetadata, mode: PreprocessMode) -> Result<Preprocessed> {
    image.unit().expect(Unit::DigitalNumber)?;
    let (h, w) = (image.height(), image.width());
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    match mode {
        PreprocessMode::Crop => {
            let (cx, cy) = metadata
                .bbox
                .map(|b| b.center())
                .unwrap_or((w as f64 / 2.0, h as f64 / 2.0));
            let half = (OUTPUT_SIZE / 2) as f64;
            let (top, left) = ((cy - half).round() as isize, (cx - half).round() as isize);
            let bands = image
                .bands()
                .iter()
                .map(|b| {
                    Raster::from_fn(OUTPUT_SIZE, OUTPUT_SIZE, |r, c| {
                        let (sr, sc) = (top + r as isize, left + c as isize);
                        if sr < 0 || sc < 0 || sr >= h as isize || sc >= w as isize {
                            0.0
                        } else {
                            b.get(sr as usize, sc as usize)
                        }
                    })
                })
                .collect();
            Ok(Preprocessed {
                image: image.derive(bands, Unit::DigitalNumber, image.gsd_m_per_px())?,
                mode,
                margin: 0,
                warp: (1.0, 1.0),
            })
        }
        PreprocessMode::Resize => {
            let bbox = metadata.bbox.unwrap_or(imaging::BoundingBox {
                x: 0.0,
                y: 0.0,
                width: w as f64,
                height: h as f64,
            });
            if !(bbox.width > 0.0 && bbox.height > 0.0) {
                return Err(Error::InvalidArgument("bounding box has no area".into()));
            }
            let bands = image
                .bands()
                .iter()
                .map(|b| {
                    let warped = warp_region(b, (bbox.y, bbox.x, bbox.height, bbox.width), OUTPUT_SIZE, OUTPUT_SIZE);
                    reflect_pad(&warped, RESIZE_MARGIN)
                })
                .collect::<Result<Vec<_>>>()?;
            let warp = (bbox.height / OUTPUT_SIZE as f64, bbox.width / OUTPUT_SIZE as f64);
            let gsd = image.gsd_m_per_px() * (warp.0 * warp.1).sqrt();
            Ok(Preprocessed {
                image: image.derive(bands, Unit::DigitalNumber, gsd)?,
                mode,
                margin: RESIZE_MARGIN,
                warp,
            })
        }
    }
}

/// Resamples a simulated image onto the analysis grid: bilinear to the
/// padded size, then the reflect margin is clipped off.
pub fn postprocess_resample(image: &BandedImage, margin: usize) -> Result<BandedImage> {
    let padded = OUTPUT_SIZE + 2 * margin;
    let footprint_m = image.height() as f64 * image.gsd_m_per_px();
    let gsd = footprint_m / padded as f64;
    let bands = image
        .bands()
        .iter()
        .map(|b| clip_margin(&resize_bilinear(b, padded, padded), margin))
        .collect();
    image.derive(bands, image.unit(), gsd)
}

/// Everything recorded about one simulation besides timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub instance_id: String,
    pub class_label: String,
    pub config_hash: String,
    pub mode: PreprocessMode,
    pub options: SimulationOptions,
    pub budget: FrequencyBudget,
    pub source_gsd_m: f64,
    pub preprocessed_gsd_m: f64,
    pub warp_factors: [f64; 2],
    pub sensor_grid: [usize; 2],
    pub sensor_gsd_m: f64,
    pub output_gsd_m: f64,
    pub version: String,
}

#[derive(Debug, Clone)]
pub struct SimulationProducts {
    /// Simulated TOA reflectance on the 224×224 grid.
    pub output: BandedImage,
    /// Preprocessed image converted straight to reflectance, same grid.
    pub reference: BandedImage,
    pub budget: FrequencyBudget,
    pub provenance: Provenance,
    pub elapsed: Duration,
    /// Filtered and resampled spectra per band, before noise; only kept on
    /// request.
    pub spectra: Option<Vec<Spectrum>>,
}

/// Preprocesses and simulates one DN image.
pub fn simulate(
    image: &BandedImage,
    metadata: &ImageMetadata,
    config: &SensorConfig,
    mode: PreprocessMode,
    options: &SimulationOptions,
) -> Result<SimulationProducts> {
    run(image, metadata, config, mode, options, false)
}

/// As [`simulate`], also returning the pre-noise spectra.
pub fn simulate_with_spectra(
    image: &BandedImage,
    metadata: &ImageMetadata,
    config: &SensorConfig,
    mode: PreprocessMode,
    options: &SimulationOptions,
) -> Result<SimulationProducts> {
    run(image, metadata, config, mode, options, true)
}

fn run(
    image: &BandedImage,
    metadata: &ImageMetadata,
    config: &SensorConfig,
    mode: PreprocessMode,
    options: &SimulationOptions,
    keep_spectra: bool,
) -> Result<SimulationProducts> {
    let start = Instant::now();
    config.validate().map_err(Error::at("configuration"))?;
    metadata.check_bands(image.band_count()).map_err(Error::at("metadata"))?;
    if config.band_count() != image.band_count() {
        return Err(Error::BandCountMismatch {
            what: "sensor configuration",
            expected: image.band_count(),
            found: config.band_count(),
        });
    }
    let budget = optics::frequency_budget(config).map_err(Error::at("frequency_budget"))?;
    let scalars = RadiometricScalars::new(config).map_err(Error::at("radiometric_scalars"))?;

    let pre = preprocess(image, metadata, mode).map_err(Error::at("preprocess"))?;
    let radiance = radiometry::dn_to_radiance(&pre.image, metadata).map_err(Error::at("dn_to_radiance"))?;

    let reference = radiometry::toa_reflectance(&radiance, metadata, options.clamp_reflectance)
        .map_err(Error::at("toa_reflectance"))?;
    let reference = reference.derive(
        reference.bands().iter().map(|b| clip_margin(b, pre.margin)).collect(),
        Unit::ToaReflectance,
        reference.gsd_m_per_px(),
    )?;

    let mut crop_budget = budget;
    if options.mtf == MtfMode::Unity {
        crop_budget.nu_cutoff_gnd = f64::INFINITY;
    }
    let gsd_in = radiance.gsd_m_per_px();
    let mut spectra = Vec::new();
    let mut sensor_bands = Vec::with_capacity(radiance.band_count());
    for (b, band) in radiance.bands().iter().enumerate() {
        let spectrum = fourier::forward_spectrum(band, gsd_in).map_err(Error::at("forward_spectrum"))?;
        let tf = match options.mtf {
            MtfMode::Diffraction => optics::ground_mtf(config, b, spectrum.freq_y(), spectrum.freq_x())
                .map_err(Error::at("system_mtf"))?,
            MtfMode::Unity => TransferFunction::unity(spectrum.freq_y().to_vec(), spectrum.freq_x().to_vec()),
        };
        let filtered = fourier::apply_mtf(&spectrum, &tf).map_err(Error::at("apply_mtf"))?;
        let resampled = fourier::resample_with_alias(&filtered, &crop_budget, budget.gsd_m)
            .map_err(Error::at("resample_with_alias"))?;
        sensor_bands.push(fourier::inverse_spectrum(&resampled).map_err(Error::at("inverse_spectrum"))?);
        if keep_spectra {
            spectra.push(resampled);
        }
    }
    let (sensor_h, sensor_w) = sensor_bands[0].shape();
    let sensor_gsd = radiance.height() as f64 * gsd_in / sensor_h as f64;
    let sensor = radiance.derive(sensor_bands, Unit::AtApertureRadiance, sensor_gsd)?;

    let electrons = radiometry::radiance_to_electrons(&sensor, &scalars.beta).map_err(Error::at("radiance_to_electrons"))?;
    let stream = NoiseStream::new(options.seed, metadata.instance_id.clone());
    let noisy = radiometry::add_noise(&electrons, config.read_noise_e, options.noise, &stream)
        .map_err(Error::at("add_noise"))?;
    let dn = radiometry::apply_gain_quantize(&noisy, &scalars, options.quantize).map_err(Error::at("apply_gain_quantize"))?;
    let back = radiometry::back_to_radiance(&dn, &scalars).map_err(Error::at("back_to_radiance"))?;
    let reflectance = radiometry::toa_reflectance(&back, metadata, options.clamp_reflectance)
        .map_err(Error::at("toa_reflectance"))?;
    let output = postprocess_resample(&reflectance, pre.margin).map_err(Error::at("postprocess_resample"))?;

    let provenance = Provenance {
        instance_id: metadata.instance_id.clone(),
        class_label: metadata.class_label.clone(),
        config_hash: config.content_hash(),
        mode,
        options: *options,
        budget,
        source_gsd_m: image.gsd_m_per_px(),
        preprocessed_gsd_m: gsd_in,
        warp_factors: [pre.warp.0, pre.warp.1],
        sensor_grid: [sensor_h, sensor_w],
        sensor_gsd_m: sensor_gsd,
        output_gsd_m: output.gsd_m_per_px(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    Ok(SimulationProducts {
        output,
        reference,
        budget,
        provenance,
        elapsed: start.elapsed(),
        spectra: keep_spectra.then_some(spectra),
    })
}

#[derive(Debug, Clone, Default)]
pub struct BatchOptions {
    pub mode: PreprocessMode,
    pub simulation: SimulationOptions,
    /// Worker threads; 0 lets the pool pick.
    pub workers: usize,
    pub dump_spectra: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryOutcome {
    pub instance_id: String,
    pub elapsed_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub entries: Vec<EntryOutcome>,
}

impl BatchReport {
    pub fn failures(&self) -> impl Iterator<Item = &EntryOutcome> {
        self.entries.iter().filter(|e| e.error.is_some())
    }

    pub fn is_success(&self) -> bool {
        self.failures().next().is_none()
    }
}

/// File names written for one entry: simulated image, reference, provenance.
pub fn output_paths(out_dir: &Path, instance_id: &str) -> [PathBuf; 3] {
    [
        out_dir.join(format!("{instance_id}.bimg")),
        out_dir.join(format!("{instance_id}.ref.bimg")),
        out_dir.join(format!("{instance_id}.json")),
    ]
}

fn simulate_entry(
    manifest: &DatasetManifest,
    index: usize,
    config: &SensorConfig,
    options: &BatchOptions,
    out_dir: &Path,
) -> Result<()> {
    let entry = &manifest.entries[index];
    let (image, metadata) = imaging::load_image(&manifest.resolve(&entry.image), &manifest.resolve(&entry.metadata))?;
    let products = run(
        &image,
        &metadata,
        config,
        options.mode,
        &options.simulation,
        options.dump_spectra.is_some(),
    )?;
    let [sim, reference, prov] = output_paths(out_dir, &entry.instance_id);
    formats::write_bimg(&sim, products.output.bands(), Unit::ToaReflectance)?;
    formats::write_bimg(&reference, products.reference.bands(), Unit::ToaReflectance)?;
    formats::write_atomic(&prov, serde_json::to_string_pretty(&products.provenance)?.as_bytes())?;
    if let (Some(dir), Some(spectra)) = (&options.dump_spectra, &products.spectra) {
        let magnitudes: Vec<Raster> = spectra.iter().map(Spectrum::magnitude).collect();
        formats::write_bimg(
            &dir.join(format!("{}.spectrum.bimg", entry.instance_id)),
            &magnitudes,
            Unit::AtApertureRadiance,
        )?;
    }
    Ok(())
}

/// Simulates every manifest entry into `out_dir`. Entry failures are
/// recorded in the report and do not stop the batch.
pub fn simulate_batch(
    manifest: &DatasetManifest,
    config: &SensorConfig,
    options: &BatchOptions,
    out_dir: &Path,
) -> Result<BatchReport> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    if let Some(dir) = &options.dump_spectra {
        std::fs::create_dir_all(dir)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    let entries = pool.install(|| {
        (0..manifest.entries.len())
            .into_par_iter()
            .map(|i| {
                let start = Instant::now();
                let result = simulate_entry(manifest, i, config, options, out_dir);
                EntryOutcome {
                    instance_id: manifest.entries[i].instance_id.clone(),
                    elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
                    error: result.err().map(|e| e.to_string()),
                }
            })
            .collect()
    });
    Ok(BatchReport { entries })
}
