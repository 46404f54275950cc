//! Random detector subsets and the per-pixel coefficient of variation they
//! induce in the reconstruction.
//!
//! Structures seen by many detectors stay put when a fraction of the array is
//! dropped, while streaks built from a handful of elements move around. The
//! CV map separates the two.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::RawPAData;
use crate::geometry::{DetectorArray, VolumeGrid};
use crate::image::Image2D;
use crate::metrics::{MaskRole, RegionMask};
use crate::morphology::dilate;
use crate::ubp::{reconstruct, reconstruct_image, ImageTarget};

/// Pixels whose mean magnitude is below this fraction of the largest mean
/// magnitude have no meaningful CV.
pub const CV_MEAN_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetIndices {
    /// Strictly increasing.
    pub indices: Vec<usize>,
    pub n_total: usize,
    pub seed: u64,
}

/// `m` distinct indices from `0..n_total`, drawn by a seeded partial
/// Fisher–Yates shuffle and returned sorted.
pub fn random_subset(n_total: usize, m: usize, seed: u64) -> Result<SubsetIndices> {
    if m == 0 || m > n_total {
        return Err(Error::invalid(format!("subset size {m} must be in 1..={n_total}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<usize> = (0..n_total).collect();
    for i in 0..m {
        let j = rng.random_range(i..n_total);
        pool.swap(i, j);
    }
    let mut indices = pool[..m].to_vec();
    indices.sort_unstable();
    Ok(SubsetIndices { indices, n_total, seed })
}

/// Traces and elements restricted to `subset`. The per-element patch area is
/// left unchanged.
pub fn subset_raw(
    raw: &RawPAData,
    array: &DetectorArray,
    subset: &SubsetIndices,
) -> Result<(RawPAData, DetectorArray)> {
    if subset.n_total != array.len() || raw.n_channels != array.len() {
        return Err(Error::invalid(format!(
            "subset drawn from {} elements, array has {} and data {} channels",
            subset.n_total,
            array.len(),
            raw.n_channels
        )));
    }
    Ok((raw.select_channels(&subset.indices)?, array.select(&subset.indices)?))
}

/// What the CV is computed over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CvTarget {
    Image(ImageTarget),
    Volume,
}

/// Per-pixel statistics over the subset trials.
#[derive(Clone, Debug, PartialEq)]
pub struct CvMap {
    /// Row-major shape (two entries for an image, three for a volume).
    pub shape: Vec<usize>,
    pub pixel_spacing: f64,
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
    /// Percent; NaN where undefined.
    pub cv: Vec<f64>,
    pub valid: Vec<bool>,
    pub n_trials: usize,
    pub subset_size: usize,
    pub seed: u64,
}

impl CvMap {
    pub fn cv_image(&self) -> Result<Image2D> {
        match self.shape[..] {
            [rows, cols] => Image2D::new(rows, cols, self.pixel_spacing, self.cv.clone()),
            _ => Err(Error::invalid("CV map is not two-dimensional")),
        }
    }
}

/// Streaming mean and variance (Welford).
#[derive(Clone, Debug)]
pub struct Moments {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    pub fn new(len: usize) -> Moments {
        Moments {
            n: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.mean.len(), "sample length changed");
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn population_std(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2.iter().map(|s| (s / n).max(0.0).sqrt()).collect()
    }
}

/// Reconstruct `n_trials` random `m`-element subsets (trial `t` uses seed
/// `seed + t`) and summarise the spread per pixel.
pub fn cv_analysis(
    raw: &RawPAData,
    array: &DetectorArray,
    grid: &VolumeGrid,
    target: CvTarget,
    m: usize,
    n_trials: usize,
    seed: u64,
) -> Result<CvMap> {
    if n_trials < 2 {
        return Err(Error::invalid(format!("need at least 2 trials, got {n_trials}")));
    }
    if m == 0 || m > array.len() {
        return Err(Error::invalid(format!(
            "subset size {m} must be in 1..={}",
            array.len()
        )));
    }
    let trial = |t: usize| -> Result<Vec<f64>> {
        let subset = random_subset(array.len(), m, seed.wrapping_add(t as u64))?;
        let (r, a) = subset_raw(raw, array, &subset)?;
        Ok(match target {
            CvTarget::Image(it) => reconstruct_image(&r, &a, grid, it)?.values,
            CvTarget::Volume => reconstruct(&r, &a, grid)?.values,
        })
    };
    let (shape, first) = match target {
        CvTarget::Image(it) => {
            let img = reconstruct_image(raw, array, grid, it)?;
            (vec![img.rows, img.cols], img.len())
        }
        CvTarget::Volume => (grid.dims.to_vec(), grid.len()),
    };

    // Trials run in parallel batches but are folded in trial order, so the
    // result does not depend on the thread count.
    let mut moments = Moments::new(first);
    let batch = rayon::current_num_threads().max(1);
    let mut t = 0;
    while t < n_trials {
        let end = (t + batch).min(n_trials);
        let images: Vec<Vec<f64>> = (t..end).into_par_iter().map(trial).collect::<Result<_>>()?;
        for img in &images {
            moments.push(img);
        }
        t = end;
    }

    let mean = moments.mean().to_vec();
    let std = moments.population_std();
    let peak = mean.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let floor = CV_MEAN_FLOOR * peak;
    let valid: Vec<bool> = mean.iter().map(|m| peak > 0.0 && m.abs() >= floor).collect();
    let cv = mean
        .iter()
        .zip(&std)
        .zip(&valid)
        .map(|((m, s), &ok)| if ok { s / m.abs() * 100.0 } else { f64::NAN })
        .collect();
    Ok(CvMap {
        shape,
        pixel_spacing: grid.spacing,
        mean,
        std,
        cv,
        valid,
        n_trials,
        subset_size: m,
        seed,
    })
}

/// Signal: ground-truth support grown by one pixel. Artifact: pixels outside
/// it whose magnitude exceeds `fraction` of the image's peak magnitude.
pub fn signal_artifact_masks(truth: &Image2D, recon: &Image2D, fraction: f64) -> Result<(RegionMask, RegionMask)> {
    if !truth.same_shape(recon) {
        return Err(Error::invalid("truth and reconstruction differ in shape"));
    }
    let dims = [truth.rows, truth.cols];
    let support: Vec<bool> = truth.values.iter().map(|&v| v != 0.0).collect();
    let signal = dilate(&support, &dims, 1);
    let level = fraction * recon.max_abs();
    let artifact = recon
        .values
        .iter()
        .zip(&signal)
        .map(|(v, &s)| !s && v.abs() > level)
        .collect();
    Ok((
        RegionMask {
            role: MaskRole::Signal,
            mask: signal,
        },
        RegionMask {
            role: MaskRole::Artifact,
            mask: artifact,
        },
    ))
}

/// Median of the finite values under `mask`; `None` if there are none.
pub fn masked_median(values: &[f64], mask: &RegionMask) -> Option<f64> {
    let mut picked: Vec<f64> = values
        .iter()
        .zip(&mask.mask)
        .filter(|(v, &m)| m && v.is_finite())
        .map(|(&v, _)| v)
        .collect();
    if picked.is_empty() {
        return None;
    }
    picked.sort_by(|a, b| a.total_cmp(b));
    let n = picked.len();
    Some(if n % 2 == 1 {
        picked[n / 2]
    } else {
        0.5 * (picked[n / 2 - 1] + picked[n / 2])
    })
}
