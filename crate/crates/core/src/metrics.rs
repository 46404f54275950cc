//! Image quality metrics against a reference image and a ground-truth support.

use serde::{Deserialize, Serialize, Serializer};
use std::fs::OpenOptions;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Image2D, Volume};
use crate::morphology::dilate;

/// Largest PSNR written to reports; identical images otherwise give +∞.
pub const PSNR_CAP_DB: f64 = 200.0;

/// Anything the metrics can be evaluated on.
pub trait Field {
    fn values(&self) -> &[f64];
    /// Row-major shape, last axis fastest.
    fn shape(&self) -> Vec<usize>;
}

impl Field for Image2D {
    fn values(&self) -> &[f64] {
        &self.values
    }
    fn shape(&self) -> Vec<usize> {
        vec![self.rows, self.cols]
    }
}

impl Field for Volume {
    fn values(&self) -> &[f64] {
        &self.values
    }
    fn shape(&self) -> Vec<usize> {
        self.grid.dims.to_vec()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskRole {
    Signal,
    Background,
    Artifact,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionMask {
    pub role: MaskRole,
    pub mask: Vec<bool>,
}

impl RegionMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

fn check_shapes(a: &impl Field, b: &impl Field) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean squared error after mapping both images with the reference's range
/// onto `[0, 1]`.
pub fn normalized_mse(reference: &impl Field, test: &impl Field) -> Result<f64> {
    check_shapes(reference, test)?;
    let r = reference.values();
    let (lo, hi) = r.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if !(hi > lo) {
        return Err(Error::invalid(
            "reference image is constant; its range cannot normalise",
        ));
    }
    let span = hi - lo;
    let sum: f64 = r
        .iter()
        .zip(test.values())
        .map(|(&a, &b)| {
            let e = (a - lo) / span - (b - lo) / span;
            e * e
        })
        .sum();
    Ok(sum / r.len() as f64)
}

/// Peak signal-to-noise ratio in dB with unit peak after normalisation.
/// Identical images give `+∞`.
pub fn psnr(reference: &impl Field, test: &impl Field) -> Result<f64> {
    let mse = normalized_mse(reference, test)?;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}

fn mean_std(values: &[f64], mask: &[bool]) -> (f64, f64, usize) {
    let picked = || values.iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v);
    let n = picked().count();
    let mean = picked().sum::<f64>() / n as f64;
    let var = picked().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt(), n)
}

/// Contrast-to-noise ratio `|μ_s − μ_b| / σ_b` with population σ.
pub fn cnr(image: &impl Field, signal: &RegionMask, background: &RegionMask) -> Result<f64> {
    let v = image.values();
    if signal.mask.len() != v.len() || background.mask.len() != v.len() {
        return Err(Error::invalid("mask size does not match the image"));
    }
    if signal.count() == 0 || background.count() == 0 {
        return Err(Error::invalid("signal and background masks must be non-empty"));
    }
    if signal.mask.iter().zip(&background.mask).any(|(&s, &b)| s && b) {
        return Err(Error::invalid("signal and background masks overlap"));
    }
    let (mu_s, _, _) = mean_std(v, &signal.mask);
    let (mu_b, sigma_b, _) = mean_std(v, &background.mask);
    if sigma_b == 0.0 {
        return Err(Error::UndefinedMetric("background standard deviation is zero".into()));
    }
    Ok((mu_s - mu_b).abs() / sigma_b)
}

/// Signal: the ground-truth support grown by one voxel. Background: all
/// voxels more than two voxels away from the signal mask.
pub fn default_masks(ground_truth: &impl Field) -> Result<(RegionMask, RegionMask)> {
    let dims = ground_truth.shape();
    let support: Vec<bool> = ground_truth.values().iter().map(|&v| v != 0.0).collect();
    let signal = dilate(&support, &dims, 1);
    let guard = dilate(&signal, &dims, 2);
    let background: Vec<bool> = guard.iter().map(|&g| !g).collect();
    let signal = RegionMask {
        role: MaskRole::Signal,
        mask: signal,
    };
    let background = RegionMask {
        role: MaskRole::Background,
        mask: background,
    };
    if signal.count() == 0 {
        return Err(Error::invalid("ground truth has empty support"));
    }
    if background.count() == 0 {
        return Err(Error::invalid("background mask is empty; the support fills the image"));
    }
    Ok((signal, background))
}

fn capped<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(v.min(PSNR_CAP_DB))
}

fn capped_opt<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(v) => capped(v, s),
        None => s.serialize_none(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub reference_id: String,
    pub test_id: String,
    #[serde(serialize_with = "capped_opt")]
    pub psnr_db: Option<f64>,
    pub cnr: Option<f64>,
    pub mse: Option<f64>,
}

impl MetricsReport {
    /// Append one row to a CSV table, writing the header for a new file.
    pub fn append_csv(&self, path: &Path) -> Result<()> {
        let fresh = !path.exists() || std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        if fresh {
            w.write_record(["reference_id", "test_id", "psnr_db", "cnr", "mse"])
                .map_err(csv_err)?;
        }
        let num = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        w.write_record([
            self.reference_id.clone(),
            self.test_id.clone(),
            num(self.psnr_db.map(|p| p.min(PSNR_CAP_DB))),
            num(self.cnr),
            num(self.mse),
        ])
        .map_err(csv_err)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}
