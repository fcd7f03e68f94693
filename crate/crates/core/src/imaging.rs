//! Shared data model: rasters, banded images, metadata, sensor parameters and
//! dataset manifests.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats;

/// Physical unit carried by every band of a [`BandedImage`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    DigitalNumber,
    /// W·µm⁻¹·m⁻²·sr⁻¹
    AtApertureRadiance,
    Electrons,
    Volts,
    ToaReflectance,
}

impl Unit {
    pub fn code(self) -> u8 {
        match self {
            Unit::DigitalNumber => 0,
            Unit::AtApertureRadiance => 1,
            Unit::Electrons => 2,
            Unit::Volts => 3,
            Unit::ToaReflectance => 4,
        }
    }

    pub fn from_code(code: u8) -> Result<Unit> {
        Ok(match code {
            0 => Unit::DigitalNumber,
            1 => Unit::AtApertureRadiance,
            2 => Unit::Electrons,
            3 => Unit::Volts,
            4 => Unit::ToaReflectance,
            other => return Err(Error::Format(format!("unknown unit code {other}"))),
        })
    }

    pub(crate) fn expect(self, expected: Unit) -> Result<()> {
        if self == expected {
            Ok(())
        } else {
            Err(Error::UnitMismatch {
                expected,
                found: self,
            })
        }
    }
}

/// A single row-major 2-D real raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "raster {height}x{width} needs {} samples, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Raster {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Raster {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Raster {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Raster {
        Raster {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn max_abs_diff(&self, other: &Raster) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Multi-band floating-point raster with a physical unit and ground sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedImage {
    bands: Vec<Raster>,
    unit: Unit,
    gsd_m_per_px: f64,
    band_names: Vec<String>,
}

impl BandedImage {
    pub fn new(
        bands: Vec<Raster>,
        unit: Unit,
        gsd_m_per_px: f64,
        band_names: Vec<String>,
    ) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::InvalidArgument("image has no bands".into()));
        }
        let shape = bands[0].shape();
        if let Some(bad) = bands.iter().position(|b| b.shape() != shape) {
            return Err(Error::DimensionMismatch(format!(
                "band {bad} is {:?}, band 0 is {shape:?}",
                bands[bad].shape()
            )));
        }
        if !(gsd_m_per_px > 0.0 && gsd_m_per_px.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gsd must be positive, got {gsd_m_per_px}"
            )));
        }
        if band_names.len() != bands.len() {
            return Err(Error::BandCountMismatch {
                what: "band_names",
                expected: bands.len(),
                found: band_names.len(),
            });
        }
        Ok(BandedImage {
            bands,
            unit,
            gsd_m_per_px,
            band_names,
        })
    }

    /// Builds an image with default band labels (`R,G,B` for three bands,
    /// `b0..bn` otherwise).
    pub fn with_default_names(bands: Vec<Raster>, unit: Unit, gsd_m_per_px: f64) -> Result<Self> {
        let names = default_band_names(bands.len());
        Self::new(bands, unit, gsd_m_per_px, names)
    }

    pub fn bands(&self) -> &[Raster] {
        &self.bands
    }

    pub fn band(&self, index: usize) -> &Raster {
        &self.bands[index]
    }

    pub fn band_count(&self) -> usize {
        self.bands.len()
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn gsd_m_per_px(&self) -> f64 {
        self.gsd_m_per_px
    }

    pub fn band_names(&self) -> &[String] {
        &self.band_names
    }

    pub fn height(&self) -> usize {
        self.bands[0].height()
    }

    pub fn width(&self) -> usize {
        self.bands[0].width()
    }

    pub fn into_bands(self) -> Vec<Raster> {
        self.bands
    }

    /// Replaces the band data, keeping names. Only the radiometry and
    /// pipeline stages change units, so this stays crate-private.
    pub(crate) fn derive(&self, bands: Vec<Raster>, unit: Unit, gsd_m_per_px: f64) -> Result<Self> {
        Self::new(bands, unit, gsd_m_per_px, self.band_names.clone())
    }

    pub(crate) fn map_bands(
        &self,
        unit: Unit,
        mut f: impl FnMut(usize, &Raster) -> Raster,
    ) -> Result<Self> {
        let bands = self
            .bands
            .iter()
            .enumerate()
            .map(|(i, b)| f(i, b))
            .collect();
        self.derive(bands, unit, self.gsd_m_per_px)
    }
}

pub fn default_band_names(count: usize) -> Vec<String> {
    if count == 3 {
        vec!["R".into(), "G".into(), "B".into()]
    } else {
        (0..count).map(|i| format!("b{i}")).collect()
    }
}

/// Axis-aligned object box in source pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl BoundingBox {
    pub fn center(&self) -> (f64, f64) {
        (self.x + self.width / 2.0, self.y + self.height / 2.0)
    }
}

/// Per-image calibration and labelling metadata (JSON sidecar).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetadata {
    pub abscal_factor: Vec<f64>,
    pub effective_bandwidth_um: Vec<f64>,
    pub earth_sun_distance_au: f64,
    pub solar_zenith_deg: f64,
    pub esun: Vec<f64>,
    #[serde(rename = "gsd_m")]
    pub source_gsd_m: f64,
    #[serde(rename = "class")]
    pub class_label: String,
    #[serde(rename = "id")]
    pub instance_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_names: Option<Vec<String>>,
}

impl ImageMetadata {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let md: ImageMetadata = serde_json::from_str(text)?;
        md.validate_fields()?;
        Ok(md)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e))?;
        Self::from_json_str(&text).map_err(|e| Error::load(path, format!("schema violation: {e}")))
    }

    pub fn band_count(&self) -> usize {
        self.abscal_factor.len()
    }

    fn validate_fields(&self) -> Result<()> {
        let n = self.abscal_factor.len();
        if n == 0 {
            return Err(Error::InvalidArgument("abscal_factor is empty".into()));
        }
        for (what, len) in [
            ("effective_bandwidth_um", self.effective_bandwidth_um.len()),
            ("esun", self.esun.len()),
        ] {
            if len != n {
                return Err(Error::BandCountMismatch {
                    what,
                    expected: n,
                    found: len,
                });
            }
        }
        if self.effective_bandwidth_um.iter().any(|&w| w <= 0.0) {
            return Err(Error::InvalidArgument(
                "effective_bandwidth_um must be positive".into(),
            ));
        }
        if self.esun.iter().any(|&e| e <= 0.0) {
            return Err(Error::InvalidArgument("esun must be positive".into()));
        }
        if self.earth_sun_distance_au <= 0.0 {
            return Err(Error::InvalidArgument(
                "earth_sun_distance_au must be positive".into(),
            ));
        }
        if !(0.0..90.0).contains(&self.solar_zenith_deg) {
            return Err(Error::InvalidArgument(format!(
                "solar_zenith_deg must lie in [0, 90), got {}",
                self.solar_zenith_deg
            )));
        }
        if self.source_gsd_m <= 0.0 {
            return Err(Error::InvalidArgument("gsd_m must be positive".into()));
        }
        Ok(())
    }

    /// Checks that every per-band list matches the image band count.
    pub fn check_bands(&self, bands: usize) -> Result<()> {
        for (what, len) in [
            ("abscal_factor", self.abscal_factor.len()),
            ("effective_bandwidth_um", self.effective_bandwidth_um.len()),
            ("esun", self.esun.len()),
        ] {
            if len != bands {
                return Err(Error::BandCountMismatch {
                    what,
                    expected: bands,
                    found: len,
                });
            }
        }
        if let Some(names) = &self.band_names {
            if names.len() != bands {
                return Err(Error::BandCountMismatch {
                    what: "band_names",
                    expected: bands,
                    found: names.len(),
                });
            }
        }
        Ok(())
    }
}

/// Modeled sensor parameters. Per-band lists follow the image band order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub focal_length_m: f64,
    pub aperture_diameter_m: f64,
    pub pixel_pitch_m: f64,
    pub altitude_m: f64,
    pub integration_time_s: f64,
    pub optical_transmission: Vec<f64>,
    pub center_wavelength_m: Vec<f64>,
    pub spectral_bandwidth_m: Vec<f64>,
    pub quantum_efficiency: Vec<f64>,
    pub read_noise_e: f64,
    pub well_depth_e: f64,
    pub bit_depth: u32,
}

impl SensorConfig {
    /// The constant sensor parameters of the reference study with the given
    /// focal length and aperture, bands ordered R, G, B. Spectral bandwidth is
    /// 100 nm per band.
    pub fn reference(focal_length_m: f64, aperture_diameter_m: f64) -> Self {
        SensorConfig {
            focal_length_m,
            aperture_diameter_m,
            pixel_pitch_m: 6e-6,
            altitude_m: 500e3,
            integration_time_s: 2.5e-4,
            optical_transmission: vec![0.95, 0.95, 0.95],
            center_wavelength_m: vec![6.5e-7, 5.5e-7, 4.5e-7],
            spectral_bandwidth_m: vec![1e-7, 1e-7, 1e-7],
            quantum_efficiency: vec![0.16, 0.22, 0.22],
            read_noise_e: 12.5,
            well_depth_e: 40300.0,
            bit_depth: 13,
        }
    }

    pub fn band_count(&self) -> usize {
        self.center_wavelength_m.len()
    }

    pub fn validate(&self) -> Result<()> {
        let scalars = [
            ("focal_length_m", self.focal_length_m),
            ("aperture_diameter_m", self.aperture_diameter_m),
            ("pixel_pitch_m", self.pixel_pitch_m),
            ("altitude_m", self.altitude_m),
            ("integration_time_s", self.integration_time_s),
            ("well_depth_e", self.well_depth_e),
        ];
        for (name, v) in scalars {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.read_noise_e >= 0.0 && self.read_noise_e.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "read_noise_e must be non-negative, got {}",
                self.read_noise_e
            )));
        }
        if !(1..=16).contains(&self.bit_depth) {
            return Err(Error::InvalidConfig(format!(
                "bit_depth must lie in [1, 16], got {}",
                self.bit_depth
            )));
        }
        let n = self.center_wavelength_m.len();
        if n == 0 {
            return Err(Error::InvalidConfig("no bands configured".into()));
        }
        let lists: [(&str, &[f64]); 4] = [
            ("optical_transmission", &self.optical_transmission),
            ("center_wavelength_m", &self.center_wavelength_m),
            ("spectral_bandwidth_m", &self.spectral_bandwidth_m),
            ("quantum_efficiency", &self.quantum_efficiency),
        ];
        for (name, list) in lists {
            if list.len() != n {
                return Err(Error::InvalidConfig(format!(
                    "{name} has {} entries, expected {n}",
                    list.len()
                )));
            }
            if list.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidConfig(format!(
                    "{name} entries must be positive"
                )));
            }
        }
        for (name, list) in [
            ("optical_transmission", &self.optical_transmission),
            ("quantum_efficiency", &self.quantum_efficiency),
        ] {
            if list.iter().any(|&v| v > 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} entries must lie in (0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Shortest band center wavelength; drives FN/Q and the cutoff selection.
    pub fn min_wavelength_m(&self) -> f64 {
        self.center_wavelength_m
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn min_wavelength_band(&self) -> usize {
        let min = self.min_wavelength_m();
        self.center_wavelength_m
            .iter()
            .position(|&w| w == min)
            .unwrap_or(0)
    }

    /// SHA-256 over the canonical JSON encoding, hex encoded.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e))?;
        let cfg: SensorConfig =
            serde_json::from_str(&text).map_err(|e| Error::load(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets a named scalar parameter (used by sweeps).
    pub fn with_param(&self, name: &str, value: f64) -> Result<Self> {
        let mut cfg = self.clone();
        match name {
            "focal_length_m" | "focal_length" | "f" => cfg.focal_length_m = value,
            "aperture_diameter_m" | "aperture_diameter" | "D" => cfg.aperture_diameter_m = value,
            "pixel_pitch_m" | "pixel_pitch" | "p" => cfg.pixel_pitch_m = value,
            "altitude_m" | "altitude" | "H" => cfg.altitude_m = value,
            "integration_time_s" | "integration_time" => cfg.integration_time_s = value,
            "read_noise_e" | "read_noise" => cfg.read_noise_e = value,
            "well_depth_e" | "well_depth" => cfg.well_depth_e = value,
            "bit_depth" => {
                if value.fract() != 0.0 || value < 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "bit_depth must be an integer, got {value}"
                    )));
                }
                cfg.bit_depth = value as u32
            }
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown sweep parameter '{other}'"
                )))
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One dataset entry; paths are relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub metadata: PathBuf,
    #[serde(rename = "class")]
    pub class_label: String,
    #[serde(rename = "id")]
    pub instance_id: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub entries: Vec<ManifestEntry>,
    /// Directory the entry paths are resolved against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e))?;
        let mut manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::load(path, e))?;
        manifest.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        if rel.is_absolute() {
            rel.to_path_buf()
        } else {
            self.base_dir.join(rel)
        }
    }

    pub fn class_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts: BTreeMap<&str, usize> =
            self.classes.iter().map(|c| (c.as_str(), 0)).collect();
        for e in &self.entries {
            *counts.entry(e.class_label.as_str()).or_default() += 1;
        }
        counts
    }

    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ManifestIssue {
    DuplicateId { id: String },
    MissingFile { id: String, path: PathBuf },
    UnknownClass { id: String, class: String },
    DuplicateClass { class: String },
    ClassTooSmall { class: String, count: usize, folds: usize },
}

impl std::fmt::Display for ManifestIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ManifestIssue::DuplicateId { id } => write!(f, "duplicate id '{id}'"),
            ManifestIssue::MissingFile { id, path } => {
                write!(f, "missing file for '{id}': {}", path.display())
            }
            ManifestIssue::UnknownClass { id, class } => {
                write!(f, "entry '{id}' has class '{class}' not in class list")
            }
            ManifestIssue::DuplicateClass { class } => write!(f, "duplicate class '{class}'"),
            ManifestIssue::ClassTooSmall {
                class,
                count,
                folds,
            } => write!(
                f,
                "class too small for {folds} folds: '{class}' has {count} entries"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<ManifestIssue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Report-only manifest audit. `fold_count` sets the per-class sample
/// threshold; pass `check_files = false` to skip filesystem probes.
pub fn validate_manifest(
    manifest: &DatasetManifest,
    fold_count: usize,
    check_files: bool,
) -> ValidationReport {
    let mut issues = Vec::new();
    let mut seen_classes = HashSet::new();
    for class in &manifest.classes {
        if !seen_classes.insert(class.as_str()) {
            issues.push(ManifestIssue::DuplicateClass {
                class: class.clone(),
            });
        }
    }
    let mut seen = HashSet::new();
    for entry in &manifest.entries {
        if !seen.insert(entry.instance_id.as_str()) {
            issues.push(ManifestIssue::DuplicateId {
                id: entry.instance_id.clone(),
            });
        }
        if !seen_classes.contains(entry.class_label.as_str()) {
            issues.push(ManifestIssue::UnknownClass {
                id: entry.instance_id.clone(),
                class: entry.class_label.clone(),
            });
        }
        if check_files {
            for rel in [&entry.image, &entry.metadata] {
                let path = manifest.resolve(rel);
                if !path.is_file() {
                    issues.push(ManifestIssue::MissingFile {
                        id: entry.instance_id.clone(),
                        path,
                    });
                }
            }
        }
    }
    for (class, count) in manifest.class_counts() {
        if count < fold_count && seen_classes.contains(class) {
            issues.push(ManifestIssue::ClassTooSmall {
                class: class.to_string(),
                count,
                folds: fold_count,
            });
        }
    }
    ValidationReport { issues }
}

/// Loads a DN image (16-bit TIFF or BIMG) and its metadata sidecar.
pub fn load_image(path: &Path, metadata_path: &Path) -> Result<(BandedImage, ImageMetadata)> {
    let metadata = ImageMetadata::load(metadata_path)?;
    let (bands, unit) = formats::read_raster_file(path)?;
    if unit != Unit::DigitalNumber {
        return Err(Error::load(
            path,
            format!("expected digital numbers, file stores {unit:?}"),
        ));
    }
    metadata
        .check_bands(bands.len())
        .map_err(|e| Error::load(metadata_path, e))?;
    let names = metadata
        .band_names
        .clone()
        .unwrap_or_else(|| default_band_names(bands.len()));
    let image = BandedImage::new(bands, Unit::DigitalNumber, metadata.source_gsd_m, names)
        .map_err(|e| Error::load(path, e))?;
    Ok((image, metadata))
}
