//! Detector arrays on a sphere and the Cartesian reconstruction grid.
//!
//! Lengths are in millimetres throughout. Detector normals point at the
//! sphere centre, which is where the imaging target sits.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Point-like detector elements with a common per-element surface area.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorArray {
    /// Radius of the sphere the elements were placed on.
    pub radius: f64,
    pub positions: Vec<Vec3>,
    /// Unit inward normals.
    pub normals: Vec<Vec3>,
    /// Surface area represented by each element (mm²).
    pub patch_area: f64,
}

impl DetectorArray {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Elements at `indices`, keeping the patch area unchanged.
    pub fn select(&self, indices: &[usize]) -> Result<DetectorArray> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!(
                "detector index {bad} out of range for {} elements",
                self.len()
            )));
        }
        Ok(DetectorArray {
            radius: self.radius,
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            normals: indices.iter().map(|&i| self.normals[i]).collect(),
            patch_area: self.patch_area,
        })
    }

    /// Lower half of the array (z ≤ 0), for a hemispherical aperture.
    pub fn lower_hemisphere(&self) -> DetectorArray {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.positions[i][2] <= 0.0).collect();
        self.select(&keep).expect("indices are in range")
    }
}

/// `n` elements on a sphere of `radius` following the golden-angle spiral.
pub fn fibonacci_sphere_array(n: usize, radius: f64) -> Result<DetectorArray> {
    if n == 0 {
        return Err(Error::invalid("detector count must be positive"));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid(format!("sphere radius must be positive, got {radius}")));
    }
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let golden = 2.0 * PI / (phi * phi);
    let mut positions = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for i in 0..n {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let s = (1.0 - z * z).max(0.0).sqrt();
        let az = golden * i as f64;
        let u = [s * az.cos(), s * az.sin(), z];
        let len = norm(u);
        let u = [u[0] / len, u[1] / len, u[2] / len];
        positions.push([radius * u[0], radius * u[1], radius * u[2]]);
        normals.push([-u[0], -u[1], -u[2]]);
    }
    Ok(DetectorArray {
        radius,
        positions,
        normals,
        patch_area: 4.0 * PI * radius * radius / n as f64,
    })
}

/// Indices `round(j·n/k)` for `j < k`, i.e. an evenly strided pick.
pub fn uniform_indices(n: usize, k: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..k).map(|j| (2 * j * n + k) / (2 * k)).collect();
    out.dedup();
    out
}

/// Evenly strided `k`-element sub-array. The patch area is rescaled so that
/// the elements still tile the full sphere.
pub fn subsample_uniform(array: &DetectorArray, k: usize) -> Result<DetectorArray> {
    if k == 0 || k > array.len() {
        return Err(Error::invalid(format!(
            "cannot subsample {k} of {} elements",
            array.len()
        )));
    }
    let mut sub = array.select(&uniform_indices(array.len(), k))?;
    sub.patch_area = 4.0 * PI * array.radius * array.radius / sub.len() as f64;
    Ok(sub)
}

/// Regular cubic voxel grid; `origin` is the centre of voxel (0, 0, 0).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeGrid {
    pub origin: Vec3,
    pub spacing: f64,
    pub dims: [usize; 3],
}

impl VolumeGrid {
    pub fn new(origin: Vec3, spacing: f64, dims: [usize; 3]) -> Result<VolumeGrid> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::invalid(format!("grid spacing must be positive, got {spacing}")));
        }
        if dims.contains(&0) {
            return Err(Error::invalid(format!("grid dims must be at least 1, got {dims:?}")));
        }
        Ok(VolumeGrid { origin, spacing, dims })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Linear index, x slowest and z fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.dims[2];
        let ij = idx / self.dims[2];
        [ij / self.dims[1], ij % self.dims[1], k]
    }

    #[inline]
    pub fn position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        [
            self.origin[0] + self.spacing * i as f64,
            self.origin[1] + self.spacing * j as f64,
            self.origin[2] + self.spacing * k as f64,
        ]
    }

    /// The eight outer corners of the grid's bounding box.
    pub fn corners(&self) -> [Vec3; 8] {
        let h = self.spacing / 2.0;
        let lo = [self.origin[0] - h, self.origin[1] - h, self.origin[2] - h];
        let hi = [
            lo[0] + self.spacing * self.dims[0] as f64,
            lo[1] + self.spacing * self.dims[1] as f64,
            lo[2] + self.spacing * self.dims[2] as f64,
        ];
        let mut out = [[0.0; 3]; 8];
        for (c, o) in out.iter_mut().enumerate() {
            *o = [
                if c & 1 == 0 { lo[0] } else { hi[0] },
                if c & 2 == 0 { lo[1] } else { hi[1] },
                if c & 4 == 0 { lo[2] } else { hi[2] },
            ];
        }
        out
    }
}

/// Cubic grid centred on `center` spanning `±half_extent` with voxel centres
/// at `center - half_extent + spacing/2 + i·spacing`.
pub fn make_grid(center: Vec3, half_extent: f64, spacing: f64) -> Result<VolumeGrid> {
    if !(half_extent > 0.0 && half_extent.is_finite()) {
        return Err(Error::invalid(format!(
            "half extent must be positive, got {half_extent}"
        )));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::invalid(format!("grid spacing must be positive, got {spacing}")));
    }
    let n = (2.0 * half_extent / spacing).round();
    if n < 1.0 {
        return Err(Error::invalid(format!(
            "half extent {half_extent} is smaller than half a voxel of {spacing}"
        )));
    }
    let n = n as usize;
    let o = |c: f64| c - half_extent + spacing / 2.0;
    VolumeGrid::new([o(center[0]), o(center[1]), o(center[2])], spacing, [n; 3])
}
