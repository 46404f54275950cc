//! Universal back-projection onto a voxel grid.
//!
//! Each detector contributes `b(t̄) = 2p − 2t̄·∂p/∂t̄` (with `t̄ = c·t`)
//! evaluated at the voxel's distance, weighted by the solid angle its
//! element subtends from the voxel. Elements that see the voxel from behind
//! get no weight. Output values are rounded to `f32`, the precision of every
//! image file the toolkit writes, so that images survive a save/load cycle
//! unchanged.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::RawPAData;
use crate::geometry::{dot, norm, sub, DetectorArray, Vec3, VolumeGrid};
use crate::image::{plane_shape, plane_voxel, Image2D, SliceSpec, Volume};

pub use crate::image::Axis;

/// Back-projection term of one trace. Derivatives are central inside and
/// one-sided at the first and last sample.
pub fn backprojection_term(trace: &[f64], dt: f64, t0: f64, sound_speed: f64) -> Result<Vec<f64>> {
    let n = trace.len();
    if n < 3 {
        return Err(Error::invalid(format!("a trace needs at least 3 samples, got {n}")));
    }
    let cdt = sound_speed * dt;
    Ok((0..n)
        .map(|k| {
            let dp = if k == 0 {
                (trace[1] - trace[0]) / cdt
            } else if k == n - 1 {
                (trace[n - 1] - trace[n - 2]) / cdt
            } else {
                (trace[k + 1] - trace[k - 1]) / (2.0 * cdt)
            };
            let tbar = sound_speed * (t0 + k as f64 * dt);
            2.0 * trace[k] - 2.0 * tbar * dp
        })
        .collect())
}

/// Back-projection terms for every channel, laid out like the raw data.
struct Terms<'a> {
    b: Vec<f64>,
    n_samples: usize,
    array: &'a DetectorArray,
    inv_cdt: f64,
    t0_bins: f64,
}

impl<'a> Terms<'a> {
    fn new(raw: &RawPAData, array: &'a DetectorArray, grid: &VolumeGrid) -> Result<Terms<'a>> {
        if raw.n_channels != array.len() {
            return Err(Error::invalid(format!(
                "raw data has {} channels but the array has {} elements",
                raw.n_channels,
                array.len()
            )));
        }
        if array.is_empty() {
            return Err(Error::invalid("detector array is empty"));
        }
        let cdt = raw.sound_speed * raw.dt;
        let t0_bins = raw.t0 / raw.dt;
        // Every voxel centre must interpolate between two recorded samples.
        let (mut near, mut far) = (f64::INFINITY, 0.0f64);
        for &p in &array.positions {
            for c in grid.corners() {
                far = far.max(norm(sub(c, p)));
            }
            near = near.min(distance_to_box(p, grid));
        }
        if far / cdt - t0_bins > (raw.n_samples - 2) as f64 {
            return Err(Error::precondition(format!(
                "time window too short: {} samples cover {:.3} mm but the grid reaches {:.3} mm",
                raw.n_samples,
                (raw.n_samples as f64 - 2.0 + t0_bins) * cdt,
                far
            )));
        }
        if near / cdt < t0_bins {
            return Err(Error::precondition(format!(
                "recording starts at {:.3} mm but the grid comes within {near:.3} mm of a detector",
                t0_bins * cdt
            )));
        }
        let rows: Vec<Vec<f64>> = (0..raw.n_channels)
            .into_par_iter()
            .map(|i| backprojection_term(raw.channel(i), raw.dt, raw.t0, raw.sound_speed))
            .collect::<Result<_>>()?;
        let b = rows.concat();
        Ok(Terms {
            b,
            n_samples: raw.n_samples,
            array,
            inv_cdt: 1.0 / cdt,
            t0_bins,
        })
    }

    /// Weighted mean of the interpolated terms at voxel position `r`.
    #[inline]
    fn voxel(&self, r: Vec3) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        let area = self.array.patch_area;
        for (i, (&p, &n)) in self.array.positions.iter().zip(&self.array.normals).enumerate() {
            let diff = sub(r, p);
            let d2 = dot(diff, diff);
            let d = d2.sqrt();
            let w = area * dot(n, diff) / (d2 * d);
            if w <= 0.0 {
                continue;
            }
            let f = d * self.inv_cdt - self.t0_bins;
            let k0 = f.floor();
            let frac = f - k0;
            let row = &self.b[i * self.n_samples..(i + 1) * self.n_samples];
            let k0 = k0 as usize;
            let v = row[k0] * (1.0 - frac) + row[k0 + 1] * frac;
            num += w * v;
            den += w;
        }
        let value = if den > 0.0 { num / den } else { 0.0 };
        value as f32 as f64
    }
}

fn distance_to_box(p: Vec3, grid: &VolumeGrid) -> f64 {
    let h = grid.spacing / 2.0;
    let mut d2 = 0.0;
    for a in 0..3 {
        let lo = grid.origin[a] - h;
        let hi = lo + grid.spacing * grid.dims[a] as f64;
        let e = if p[a] < lo {
            lo - p[a]
        } else if p[a] > hi {
            p[a] - hi
        } else {
            0.0
        };
        d2 += e * e;
    }
    d2.sqrt()
}

/// Reconstruct the full grid.
pub fn reconstruct(raw: &RawPAData, array: &DetectorArray, grid: &VolumeGrid) -> Result<Volume> {
    let terms = Terms::new(raw, array, grid)?;
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let [i, j, k] = grid.unravel(idx);
            terms.voxel(grid.position(i, j, k))
        })
        .collect();
    Volume::new(*grid, values)
}

/// Reconstruct a single plane. Identical, value for value, to the same plane
/// of [`reconstruct`].
pub fn reconstruct_slice(
    raw: &RawPAData,
    array: &DetectorArray,
    grid: &VolumeGrid,
    axis: Axis,
    index: usize,
) -> Result<Image2D> {
    let slice = SliceSpec { axis, index };
    let (rows, cols) = plane_shape(grid, slice)?;
    let terms = Terms::new(raw, array, grid)?;
    let values: Vec<f64> = (0..rows * cols)
        .into_par_iter()
        .map(|p| {
            let [i, j, k] = grid.unravel(plane_voxel(grid, slice, p / cols, p % cols));
            terms.voxel(grid.position(i, j, k))
        })
        .collect();
    Image2D::new(rows, cols, grid.spacing, values)
}

/// What to image from a reconstruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageTarget {
    Slice(SliceSpec),
    /// Maximum-amplitude projection of the full grid along an axis.
    Map(Axis),
}

impl std::fmt::Display for ImageTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ImageTarget::Slice(s) => write!(f, "slice {s}"),
            ImageTarget::Map(a) => write!(f, "MAP along {a}"),
        }
    }
}

/// Reconstruct the image selected by `target`.
pub fn reconstruct_image(
    raw: &RawPAData,
    array: &DetectorArray,
    grid: &VolumeGrid,
    target: ImageTarget,
) -> Result<Image2D> {
    match target {
        ImageTarget::Slice(s) => reconstruct_slice(raw, array, grid, s.axis, s.index),
        ImageTarget::Map(axis) => Ok(map_projection(&reconstruct(raw, array, grid)?, axis)),
    }
}

/// Maximum-amplitude projection along `axis`: the value of largest magnitude
/// on each ray, sign kept. Ties go to the lowest index.
pub fn map_projection(volume: &Volume, axis: Axis) -> Image2D {
    let grid = &volume.grid;
    let (ra, ca) = axis.plane_axes();
    let (rows, cols) = (grid.dims[ra], grid.dims[ca]);
    let depth = grid.dims[axis.index()];
    let mut values = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let mut best = 0.0f64;
            for s in 0..depth {
                let v = volume.values[plane_voxel(grid, SliceSpec { axis, index: s }, r, c)];
                if v.abs() > best.abs() {
                    best = v;
                }
            }
            values.push(best);
        }
    }
    Image2D {
        rows,
        cols,
        pixel_spacing: grid.spacing,
        values,
    }
}
