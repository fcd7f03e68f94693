//! On-disk formats: the `BIMG` raster container, the `EMB1` embedding file,
//! and 16-bit TIFF input.
//!
//! `BIMG` layout (little-endian):
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `"BIMG"`                |
//! | 4      | 2    | version (= 1)                 |
//! | 6      | 2    | band count                    |
//! | 8      | 4    | height                        |
//! | 12     | 4    | width                         |
//! | 16     | 1    | unit code                     |
//! | 17     | ...  | f32 planes, band-major        |
//!
//! `EMB1` layout (little-endian):
//!
//! | offset | size    | field                                      |
//! |--------|---------|--------------------------------------------|
//! | 0      | 4       | magic `"EMB1"`                             |
//! | 4      | 4       | vector count M                             |
//! | 8      | 4       | dimension d                                |
//! | 12     | 8       | trailer offset (= 20 + 4·M·d)              |
//! | 20     | 4·M·d   | f32 vectors, row-major                     |
//! | trailer| rest    | UTF-8 JSON `{"ids": [...], "labels": [...]}` |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Raster, Unit};

pub const BIMG_MAGIC: &[u8; 4] = b"BIMG";
pub const BIMG_VERSION: u16 = 1;
const BIMG_HEADER_LEN: usize = 17;

pub const EMB1_MAGIC: &[u8; 4] = b"EMB1";
pub const EMB1_HEADER_LEN: u64 = 20;

pub fn encode_bimg(bands: &[Raster], unit: Unit) -> Result<Vec<u8>> {
    let first = bands
        .first()
        .ok_or_else(|| Error::Format("BIMG needs at least one band".into()))?;
    let (h, w) = first.shape();
    if bands.iter().any(|b| b.shape() != (h, w)) {
        return Err(Error::DimensionMismatch("BIMG bands differ in size".into()));
    }
    let band_count = u16::try_from(bands.len())
        .map_err(|_| Error::Format("too many bands for BIMG".into()))?;
    let mut out = Vec::with_capacity(BIMG_HEADER_LEN + bands.len() * h * w * 4);
    out.extend_from_slice(BIMG_MAGIC);
    out.extend_from_slice(&BIMG_VERSION.to_le_bytes());
    out.extend_from_slice(&band_count.to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.push(unit.code());
    for band in bands {
        for &v in band.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_bimg(bytes: &[u8]) -> Result<(Vec<Raster>, Unit)> {
    if bytes.len() < BIMG_HEADER_LEN || &bytes[0..4] != BIMG_MAGIC {
        return Err(Error::Format("not a BIMG file".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != BIMG_VERSION {
        return Err(Error::Format(format!("unsupported BIMG version {version}")));
    }
    let bands = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let unit = Unit::from_code(bytes[16])?;
    if bands == 0 {
        return Err(Error::Format("missing band: BIMG declares zero bands".into()));
    }
    let expected = BIMG_HEADER_LEN + bands * h * w * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "BIMG payload is {} bytes, header implies {expected} (missing band or truncated)",
            bytes.len()
        )));
    }
    let payload = &bytes[BIMG_HEADER_LEN..];
    let plane = h * w;
    let rasters = (0..bands)
        .map(|b| {
            let data = payload[b * plane * 4..(b + 1) * plane * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            Raster::new(h, w, data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((rasters, unit))
}

pub fn write_bimg(path: &Path, bands: &[Raster], unit: Unit) -> Result<()> {
    let bytes = encode_bimg(bands, unit)?;
    write_atomic(path, &bytes)
}

pub fn read_bimg(path: &Path) -> Result<(Vec<Raster>, Unit)> {
    let bytes = std::fs::read(path).map_err(|e| Error::load(path, e))?;
    decode_bimg(&bytes).map_err(|e| Error::load(path, e))
}

/// Writes through a temporary file in the destination directory and renames
/// it into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Reads either a BIMG file or a 16-bit TIFF (chunky or planar), detected by
/// magic bytes. TIFF input is always reported as digital numbers.
pub fn read_raster_file(path: &Path) -> Result<(Vec<Raster>, Unit)> {
    let mut head = [0u8; 4];
    {
        let mut f = File::open(path).map_err(|e| Error::load(path, e))?;
        f.read_exact(&mut head).map_err(|e| Error::load(path, e))?;
    }
    if &head == BIMG_MAGIC {
        read_bimg(path)
    } else if &head == b"II*\0" || &head == b"MM\0*" || &head[..2] == b"II" || &head[..2] == b"MM" {
        read_tiff_u16(path).map(|bands| (bands, Unit::DigitalNumber))
    } else {
        Err(Error::load(path, "unrecognized raster format"))
    }
}

pub fn read_tiff_u16(path: &Path) -> Result<Vec<Raster>> {
    use tiff::decoder::{Decoder, DecodingResult};
    use tiff::tags::Tag;

    let file = File::open(path).map_err(|e| Error::load(path, e))?;
    let mut decoder = Decoder::new(BufReader::new(file)).map_err(|e| Error::load(path, e))?;
    let (w, h) = decoder.dimensions().map_err(|e| Error::load(path, e))?;
    let (w, h) = (w as usize, h as usize);
    let colortype = decoder.colortype().map_err(|e| Error::load(path, e))?;
    if colortype.bit_depth() != 16 {
        return Err(Error::load(
            path,
            format!("expected 16-bit samples, found {}-bit", colortype.bit_depth()),
        ));
    }
    let bands = colortype.num_samples() as usize;
    let planar = decoder
        .find_tag_unsigned::<u16>(Tag::PlanarConfiguration)
        .map_err(|e| Error::load(path, e))?
        == Some(2);
    let mut result = DecodingResult::U16(Vec::new());
    let layout = decoder
        .read_image_to_buffer(&mut result)
        .map_err(|e| Error::load(path, e))?;
    let samples = match result {
        DecodingResult::U16(v) => v,
        _ => return Err(Error::load(path, "expected 16-bit unsigned samples")),
    };
    if samples.len() * 2 < layout.complete_len || samples.len() < w * h * bands {
        return Err(Error::load(path, "missing band: TIFF planes incomplete"));
    }
    let plane = w * h;
    let rasters = (0..bands)
        .map(|b| {
            let data: Vec<f64> = if planar {
                samples[b * plane..(b + 1) * plane]
                    .iter()
                    .map(|&v| v as f64)
                    .collect()
            } else {
                samples.iter().skip(b).step_by(bands).take(plane).map(|&v| v as f64).collect()
            };
            Raster::new(h, w, data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rasters)
}

/// Writes a 1-, 3- or 4-band 16-bit chunky TIFF. Values are rounded and
/// clamped to `u16`.
pub fn write_tiff_u16(path: &Path, bands: &[Raster]) -> Result<()> {
    use tiff::encoder::{colortype, TiffEncoder};

    let first = bands
        .first()
        .ok_or_else(|| Error::Format("TIFF needs at least one band".into()))?;
    let (h, w) = first.shape();
    let mut interleaved = Vec::with_capacity(h * w * bands.len());
    for i in 0..h * w {
        for b in bands {
            interleaved.push(b.data()[i].round().clamp(0.0, u16::MAX as f64) as u16);
        }
    }
    let file = File::create(path)?;
    let mut enc = TiffEncoder::new(BufWriter::new(file)).map_err(|e| Error::Format(e.to_string()))?;
    let (w32, h32) = (w as u32, h as u32);
    let res = match bands.len() {
        1 => enc.write_image::<colortype::Gray16>(w32, h32, &interleaved),
        3 => enc.write_image::<colortype::RGB16>(w32, h32, &interleaved),
        4 => enc.write_image::<colortype::RGBA16>(w32, h32, &interleaved),
        n => {
            return Err(Error::Format(format!(
                "TIFF writer supports 1, 3 or 4 bands, got {n}"
            )))
        }
    };
    res.map_err(|e| Error::Format(e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
struct Emb1Trailer {
    ids: Vec<String>,
    labels: Vec<String>,
}

/// Labelled fixed-dimension feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    vectors: Vec<f64>,
    ids: Vec<String>,
    labels: Vec<String>,
}

impl EmbeddingSet {
    pub fn new(dim: usize, vectors: Vec<f64>, ids: Vec<String>, labels: Vec<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        if vectors.len() != dim * ids.len() || ids.len() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} ids / {} labels at dim {dim}",
                vectors.len(),
                ids.len(),
                labels.len()
            )));
        }
        if vectors.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite);
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::InvalidArgument(format!("duplicate embedding id '{dup}'")));
        }
        Ok(EmbeddingSet {
            dim,
            vectors,
            ids,
            labels,
        })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, ids: Vec<String>, labels: Vec<String>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch("ragged embedding rows".into()));
        }
        Self::new(dim, rows.concat(), ids, labels)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Asserts every vector has unit 2-norm within `tol`.
    pub fn check_unit_norm(&self, tol: f64) -> Result<()> {
        for i in 0..self.len() {
            let n = self.vector(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if (n - 1.0).abs() > tol {
                return Err(Error::InvalidArgument(format!(
                    "vector '{}' has norm {n}",
                    self.ids[i]
                )));
            }
        }
        Ok(())
    }

    pub fn with_labels(&self, labels: Vec<String>) -> Result<Self> {
        Self::new(self.dim, self.vectors.clone(), self.ids.clone(), labels)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        EmbeddingSet {
            vectors: self.vectors.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let count = u32::try_from(self.len()).map_err(|_| Error::Format("too many vectors".into()))?;
        let dim = u32::try_from(self.dim).map_err(|_| Error::Format("dimension too large".into()))?;
        let trailer_offset = EMB1_HEADER_LEN + 4 * self.vectors.len() as u64;
        let trailer = serde_json::to_vec(&Emb1Trailer {
            ids: self.ids.clone(),
            labels: self.labels.clone(),
        })?;
        let mut out = Vec::with_capacity(trailer_offset as usize + trailer.len());
        out.extend_from_slice(EMB1_MAGIC);
        out.extend_from_slice(&count.to_le_bytes());
        out.extend_from_slice(&dim.to_le_bytes());
        out.extend_from_slice(&trailer_offset.to_le_bytes());
        for &v in &self.vectors {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.extend_from_slice(&trailer);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < EMB1_HEADER_LEN as usize || &bytes[0..4] != EMB1_MAGIC {
            return Err(Error::Format("not an EMB1 file".into()));
        }
        let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let offset = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let expected = EMB1_HEADER_LEN + 4 * (count as u64) * (dim as u64);
        if offset != expected || bytes.len() < expected as usize {
            return Err(Error::Format(format!(
                "EMB1 trailer offset {offset} inconsistent with {count}x{dim} payload"
            )));
        }
        let vectors: Vec<f64> = bytes[EMB1_HEADER_LEN as usize..offset as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let trailer: Emb1Trailer = serde_json::from_slice(&bytes[offset as usize..])
            .map_err(|e| Error::Format(format!("EMB1 trailer: {e}")))?;
        if trailer.ids.len() != count || trailer.labels.len() != count {
            return Err(Error::Format(format!(
                "EMB1 trailer lists {} ids / {} labels for {count} vectors",
                trailer.ids.len(),
                trailer.labels.len()
            )));
        }
        Self::new(dim, vectors, trailer.ids, trailer.labels)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::load(path, e))?;
        Self::decode(&bytes).map_err(|e| Error::load(path, e))
    }
}
