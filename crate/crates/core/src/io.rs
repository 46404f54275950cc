//! On-disk formats. Arrays are little-endian `f32` binaries with a JSON
//! sidecar of the same stem that is enough to load them back; images also
//! get a 16-bit PGM preview.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::forward::{RawHeader, RawPAData};
use crate::geometry::{Vec3, VolumeGrid};
use crate::image::{Image2D, Volume};
use crate::perturb::CvMap;
use crate::zsa2a::network::layer_shapes;
use crate::zsa2a::{LossRecord, NetworkParams, Normalization, TrainConfig, TrainedModel};

pub fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn write_f32(path: &Path, values: impl IntoIterator<Item = f64>) -> Result<()> {
    let bytes: Vec<u8> = values.into_iter().flat_map(|v| (v as f32).to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_f32(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 4 * expected {
        return Err(Error::invalid(format!(
            "{} holds {} bytes, expected {} f32 values",
            path.display(),
            bytes.len(),
            expected
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect())
}

pub fn save_raw(stem: &Path, raw: &RawPAData) -> Result<()> {
    write_f32(&with_ext(stem, "f32"), raw.data.iter().copied())?;
    write_json(&with_ext(stem, "json"), &raw.header())
}

pub fn load_raw(stem: &Path) -> Result<RawPAData> {
    let header: RawHeader = read_json(&with_ext(stem, "json"))?;
    let data = read_f32(&with_ext(stem, "f32"), header.n_channels * header.n_samples)?;
    RawPAData::new(header, data)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing: f64,
    pub origin: Vec3,
}

pub fn save_volume(stem: &Path, vol: &Volume) -> Result<()> {
    write_f32(&with_ext(stem, "f32"), vol.values.iter().copied())?;
    let g = vol.grid;
    write_json(
        &with_ext(stem, "json"),
        &VolumeHeader {
            dims: g.dims,
            spacing: g.spacing,
            origin: g.origin,
        },
    )
}

pub fn load_volume(stem: &Path) -> Result<Volume> {
    let h: VolumeHeader = read_json(&with_ext(stem, "json"))?;
    let grid = VolumeGrid::new(h.origin, h.spacing, h.dims)?;
    let values = read_f32(&with_ext(stem, "f32"), grid.len())?;
    Volume::new(grid, values)
}

/// Linear map from values to PGM grey levels: `level = (v − min)/(max − min)·65535`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PgmScaling {
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageHeader {
    pub rows: usize,
    pub cols: usize,
    pub pixel_spacing: f64,
    pub pgm: Option<PgmScaling>,
    /// Free-form provenance (target plane, detector count, ...).
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub info: serde_json::Map<String, serde_json::Value>,
}

/// 16-bit binary PGM scaled to the finite range of `values`; non-finite
/// pixels are written as 0.
pub fn write_pgm16(path: &Path, rows: usize, cols: usize, values: &[f64]) -> Result<PgmScaling> {
    let finite = values.iter().filter(|v| v.is_finite());
    let min = finite.clone().fold(f64::INFINITY, |a, &b| a.min(b));
    let max = finite.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let (min, max) = if min.is_finite() { (min, max) } else { (0.0, 0.0) };
    let span = if max > min { max - min } else { 1.0 };
    let mut out = format!("P5\n{cols} {rows}\n65535\n").into_bytes();
    for &v in values {
        let level = if v.is_finite() {
            ((v - min) / span * 65535.0).round().clamp(0.0, 65535.0) as u16
        } else {
            0
        };
        out.extend_from_slice(&level.to_be_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    Ok(PgmScaling { min, max })
}

/// Binary PBM (P4) bitmask; set bits are black.
pub fn write_pbm(path: &Path, rows: usize, cols: usize, mask: &[bool]) -> Result<()> {
    let mut out = format!("P4\n{cols} {rows}\n").into_bytes();
    for r in 0..rows {
        for chunk in mask[r * cols..(r + 1) * cols].chunks(8) {
            let mut byte = 0u8;
            for (b, &m) in chunk.iter().enumerate() {
                if m {
                    byte |= 0x80 >> b;
                }
            }
            out.push(byte);
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn save_image(stem: &Path, img: &Image2D, info: serde_json::Map<String, serde_json::Value>) -> Result<()> {
    write_f32(&with_ext(stem, "f32"), img.values.iter().copied())?;
    let pgm = write_pgm16(&with_ext(stem, "pgm"), img.rows, img.cols, &img.values)?;
    let header = ImageHeader {
        rows: img.rows,
        cols: img.cols,
        pixel_spacing: img.pixel_spacing,
        pgm: Some(pgm),
        info,
    };
    write_json(&with_ext(stem, "json"), &header)
}

pub fn load_image(stem: &Path) -> Result<Image2D> {
    let h: ImageHeader = read_json(&with_ext(stem, "json"))?;
    let values = read_f32(&with_ext(stem, "f32"), h.rows * h.cols)?;
    Image2D::new(h.rows, h.cols, h.pixel_spacing, values)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvHeader {
    pub shape: Vec<usize>,
    pub pixel_spacing: f64,
    pub n_trials: usize,
    pub subset_size: usize,
    pub seed: u64,
    pub valid_pixels: usize,
    /// Scaling of the CV preview, over valid pixels.
    pub pgm: Option<PgmScaling>,
}

/// Writes `<stem>.f32` (CV in percent, NaN where undefined), `<stem>.json`,
/// `<stem>_mean.f32`, `<stem>_std.f32`, and for 2D maps a PGM preview plus
/// `<stem>_valid.pbm`.
pub fn save_cv_map(stem: &Path, cv: &CvMap) -> Result<()> {
    write_f32(&with_ext(stem, "f32"), cv.cv.iter().copied())?;
    let side = |suffix: &str| {
        let mut s = stem.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    };
    write_f32(&with_ext(&side("_mean"), "f32"), cv.mean.iter().copied())?;
    write_f32(&with_ext(&side("_std"), "f32"), cv.std.iter().copied())?;
    let pgm = if let [rows, cols] = cv.shape[..] {
        write_pbm(&with_ext(&side("_valid"), "pbm"), rows, cols, &cv.valid)?;
        Some(write_pgm16(&with_ext(stem, "pgm"), rows, cols, &cv.cv)?)
    } else {
        None
    };
    let header = CvHeader {
        shape: cv.shape.clone(),
        pixel_spacing: cv.pixel_spacing,
        n_trials: cv.n_trials,
        subset_size: cv.subset_size,
        seed: cv.seed,
        valid_pixels: cv.valid.iter().filter(|&&v| v).count(),
        pgm,
    };
    write_json(&with_ext(stem, "json"), &header)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub channels: usize,
    pub parameter_count: usize,
    /// Tensor names and shapes in storage order.
    pub layers: Vec<(String, Vec<usize>)>,
    pub normalization: Normalization,
    pub rows: usize,
    pub cols: usize,
    pub config: TrainConfig,
}

/// Flat `f32` parameters plus a header; see [`layer_shapes`] for the order.
pub fn save_model(stem: &Path, model: &TrainedModel<f32>) -> Result<()> {
    write_f32(&with_ext(stem, "f32"), model.params.data.iter().map(|&v| v as f64))?;
    let header = ModelHeader {
        channels: model.params.channels,
        parameter_count: model.params.len(),
        layers: layer_shapes(model.params.channels)
            .into_iter()
            .map(|(n, s)| (n.to_string(), s))
            .collect(),
        normalization: model.normalization,
        rows: model.rows,
        cols: model.cols,
        config: model.config.clone(),
    };
    write_json(&with_ext(stem, "json"), &header)
}

pub fn load_model(stem: &Path) -> Result<TrainedModel<f32>> {
    let h: ModelHeader = read_json(&with_ext(stem, "json"))?;
    let data = read_f32(&with_ext(stem, "f32"), h.parameter_count)?;
    let params = NetworkParams {
        channels: h.channels,
        data: data.into_iter().map(|v| v as f32).collect(),
    };
    if params.len() != crate::zsa2a::parameter_count(h.channels) {
        return Err(Error::invalid(format!(
            "model has {} parameters, header says width {}",
            params.len(),
            h.channels
        )));
    }
    Ok(TrainedModel {
        params,
        normalization: h.normalization,
        config: h.config,
        rows: h.rows,
        cols: h.cols,
        log: Vec::new(),
    })
}

/// CSV with columns `iteration, lr, residual, consistency, total`.
pub fn write_loss_log(path: &Path, log: &[LossRecord]) -> Result<()> {
    let to_io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(to_io)?;
    for rec in log {
        w.serialize(rec).map_err(to_io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_loss_log(path: &Path) -> Result<Vec<LossRecord>> {
    let to_io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut r = csv::Reader::from_path(path).map_err(to_io)?;
    r.deserialize().map(|rec| rec.map_err(to_io)).collect()
}

/// Write bytes, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
