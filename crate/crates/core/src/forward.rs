//! Forward model: initial pressure on a grid to time-resolved pressure at
//! each detector, for a homogeneous lossless medium.
//!
//! The pressure at a detector is the time derivative of the spherical mean of
//! the source. Each voxel contributes its mass `p0·h³` to the distance shells
//! it overlaps. The overlap uses the voxel's exact extent projected onto the
//! line of sight, which is the distribution of a sum of three uniforms with
//! widths `h·|u_x|, h·|u_y|, h·|u_z|`. Assigning whole voxels to their
//! nearest shell instead aliases the lattice into the derivative and swamps
//! the N-wave shape at practical grid spacings.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{norm, sub, DetectorArray, VolumeGrid};
use crate::phantom::SourceVolume;

/// Speed of sound in soft tissue, mm/s.
pub const DEFAULT_SOUND_SPEED: f64 = 1.5e6;

/// Sampling interval with `c·dt` equal to half a voxel.
pub fn default_dt(spacing: f64, sound_speed: f64) -> f64 {
    spacing / (2.0 * sound_speed)
}

/// Time-resolved pressure traces, one row per detector element.
#[derive(Clone, Debug, PartialEq)]
pub struct RawPAData {
    pub n_channels: usize,
    pub n_samples: usize,
    /// Sampling interval (s).
    pub dt: f64,
    /// Time of the first sample (s).
    pub t0: f64,
    /// mm/s.
    pub sound_speed: f64,
    /// `n_channels × n_samples`, row-major.
    pub data: Vec<f64>,
}

/// Acquisition metadata stored next to the binary traces.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawHeader {
    pub n_channels: usize,
    pub n_samples: usize,
    pub dt: f64,
    pub t0: f64,
    pub sound_speed: f64,
}

impl RawPAData {
    pub fn new(header: RawHeader, data: Vec<f64>) -> Result<RawPAData> {
        let RawHeader {
            n_channels,
            n_samples,
            dt,
            t0,
            sound_speed,
        } = header;
        if data.len() != n_channels * n_samples {
            return Err(Error::invalid(format!(
                "raw data {n_channels}x{n_samples} needs {} samples, got {}",
                n_channels * n_samples,
                data.len()
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) || !(sound_speed > 0.0 && sound_speed.is_finite()) {
            return Err(Error::invalid(format!(
                "dt and sound speed must be positive, got {dt} and {sound_speed}"
            )));
        }
        if !(t0 >= 0.0 && t0.is_finite()) {
            return Err(Error::invalid(format!("t0 must be non-negative, got {t0}")));
        }
        Ok(RawPAData {
            n_channels,
            n_samples,
            dt,
            t0,
            sound_speed,
            data,
        })
    }

    pub fn header(&self) -> RawHeader {
        RawHeader {
            n_channels: self.n_channels,
            n_samples: self.n_samples,
            dt: self.dt,
            t0: self.t0,
            sound_speed: self.sound_speed,
        }
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_samples..(i + 1) * self.n_samples]
    }

    /// Rows at `indices`, in the given order.
    pub fn select_channels(&self, indices: &[usize]) -> Result<RawPAData> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n_channels) {
            return Err(Error::invalid(format!(
                "channel {bad} out of range for {} channels",
                self.n_channels
            )));
        }
        let mut data = Vec::with_capacity(indices.len() * self.n_samples);
        for &i in indices {
            data.extend_from_slice(self.channel(i));
        }
        Ok(RawPAData {
            n_channels: indices.len(),
            data,
            ..self.clone()
        })
    }
}

/// Samples needed so that every voxel of `grid`, including its footprint and
/// the stencils used downstream, lies inside the recorded window.
pub fn required_samples(array: &DetectorArray, grid: &VolumeGrid, dt: f64, sound_speed: f64) -> usize {
    let far = array
        .positions
        .iter()
        .flat_map(|&p| grid.corners().map(move |c| norm(sub(c, p))))
        .fold(0.0, f64::max);
    let cdt = sound_speed * dt;
    let footprint = (grid.spacing * 3f64.sqrt() / 2.0 / cdt).ceil();
    (far / cdt).ceil() as usize + footprint as usize + 3
}

/// CDF of the sum of three centred uniforms with the given widths.
#[inline]
fn box_cdf(x: f64, w: [f64; 3], half_total: f64, inv_norm: f64) -> f64 {
    if x <= -half_total {
        return 0.0;
    }
    if x >= half_total {
        return 1.0;
    }
    let mut acc = 0.0;
    for s in 0..8u32 {
        let e = |bit: u32| if s & (1 << bit) == 0 { 1.0 } else { -1.0 };
        let (e0, e1, e2) = (e(0), e(1), e(2));
        let z = x + 0.5 * (e0 * w[0] + e1 * w[1] + e2 * w[2]);
        if z > 0.0 {
            acc += e0 * e1 * e2 * z * z * z;
        }
    }
    (acc * inv_norm).clamp(0.0, 1.0)
}

/// Pressure traces at every element of `array` for the source `source`,
/// sampled at `t_k = k·dt`, `k < t_count`.
pub fn simulate_signals(
    source: &SourceVolume,
    array: &DetectorArray,
    dt: f64,
    t_count: usize,
    sound_speed: f64,
) -> Result<RawPAData> {
    if array.is_empty() {
        return Err(Error::invalid("detector array is empty"));
    }
    if t_count < 2 {
        return Err(Error::invalid(format!("need at least 2 time samples, got {t_count}")));
    }
    let header = RawHeader {
        n_channels: array.len(),
        n_samples: t_count,
        dt,
        t0: 0.0,
        sound_speed,
    };
    let needed = required_samples(array, &source.grid, dt, sound_speed);
    if t_count < needed {
        return Err(Error::precondition(format!(
            "time window too short: t_count = {t_count}, need t_count >= {needed}"
        )));
    }

    let grid = &source.grid;
    let h = grid.spacing;
    let cdt = sound_speed * dt;
    let mass = h * h * h / cdt;
    let sources: Vec<([f64; 3], f64)> = source
        .values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(idx, &v)| {
            let [i, j, k] = grid.unravel(idx);
            (grid.position(i, j, k), v * mass)
        })
        .collect();

    let mut data = vec![0.0; array.len() * t_count];
    data.par_chunks_mut(t_count)
        .zip(array.positions.par_iter())
        .try_for_each(|(row, &det)| -> Result<()> {
            let mut shells = vec![0.0; t_count];
            for &(p, m) in &sources {
                let diff = sub(p, det);
                let d = norm(diff);
                let floor = 1e-3 * h;
                let w = [
                    (h * diff[0].abs() / d).max(floor),
                    (h * diff[1].abs() / d).max(floor),
                    (h * diff[2].abs() / d).max(floor),
                ];
                let half_total = 0.5 * (w[0] + w[1] + w[2]);
                if d - half_total <= 0.5 * cdt {
                    return Err(Error::precondition(format!(
                        "source voxel at {p:?} overlaps the detector at {det:?}"
                    )));
                }
                let inv_norm = 1.0 / (6.0 * w[0] * w[1] * w[2]);
                let k_lo = ((d - half_total) / cdt).round() as usize;
                let k_hi = ((d + half_total) / cdt).round() as usize;
                let mut f_lo = box_cdf((k_lo as f64 - 0.5) * cdt - d, w, half_total, inv_norm);
                for (k, shell) in shells.iter_mut().enumerate().take(k_hi + 1).skip(k_lo) {
                    let f_hi = box_cdf((k as f64 + 0.5) * cdt - d, w, half_total, inv_norm);
                    *shell += m * (f_hi - f_lo);
                    f_lo = f_hi;
                }
            }
            for (k, s) in shells.iter_mut().enumerate().skip(1) {
                let t = k as f64 * dt;
                *s /= 4.0 * PI * sound_speed * sound_speed * t;
            }
            shells[0] = 0.0;
            time_derivative(&shells, dt, row);
            Ok(())
        })?;
    RawPAData::new(header, data)
}

/// Central differences inside, one-sided at both ends.
pub fn time_derivative(g: &[f64], dt: f64, out: &mut [f64]) {
    let n = g.len();
    debug_assert_eq!(out.len(), n);
    if n < 2 {
        out.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    out[0] = (g[1] - g[0]) / dt;
    out[n - 1] = (g[n - 1] - g[n - 2]) / dt;
    for k in 1..n - 1 {
        out[k] = (g[k + 1] - g[k - 1]) / (2.0 * dt);
    }
}
