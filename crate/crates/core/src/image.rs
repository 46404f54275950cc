//! Reconstructed volumes, 2D images and the axis conventions tying them.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::VolumeGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    /// The two in-plane axes, in increasing order. They become image rows
    /// and columns respectively.
    pub fn plane_axes(self) -> (usize, usize) {
        match self {
            Axis::X => (1, 2),
            Axis::Y => (0, 2),
            Axis::Z => (0, 1),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Axis> {
        match s.trim().to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => Err(Error::invalid(format!("unknown axis `{other}` (expected x, y or z)"))),
        }
    }
}

/// A plane of a grid: `index` along `axis`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub axis: Axis,
    pub index: usize,
}

impl FromStr for SliceSpec {
    type Err = Error;

    /// Parses `AXIS:INDEX`, e.g. `z:64`.
    fn from_str(s: &str) -> Result<SliceSpec> {
        let (a, i) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("slice `{s}` is not of the form AXIS:INDEX")))?;
        let index = i
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("slice index `{i}` is not a non-negative integer")))?;
        Ok(SliceSpec {
            axis: a.parse()?,
            index,
        })
    }
}

impl fmt::Display for SliceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.axis, self.index)
    }
}

/// Row-major image. Pixel `(r, c)` lives at `values[r * cols + c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image2D {
    pub rows: usize,
    pub cols: usize,
    pub pixel_spacing: f64,
    pub values: Vec<f64>,
}

impl Image2D {
    pub fn new(rows: usize, cols: usize, pixel_spacing: f64, values: Vec<f64>) -> Result<Image2D> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!("image must be non-empty, got {rows}x{cols}")));
        }
        if values.len() != rows * cols {
            return Err(Error::invalid(format!(
                "image {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(Image2D {
            rows,
            cols,
            pixel_spacing,
            values,
        })
    }

    pub fn zeros(rows: usize, cols: usize, pixel_spacing: f64) -> Image2D {
        Image2D {
            rows,
            cols,
            pixel_spacing,
            values: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_shape(&self, other: &Image2D) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `(row, col)` of the largest value.
    pub fn argmax(&self) -> (usize, usize) {
        let i = argmax(&self.values);
        (i / self.cols, i % self.cols)
    }
}

/// Scalar field on a [`VolumeGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub grid: VolumeGrid,
    pub values: Vec<f64>,
}

impl Volume {
    pub fn new(grid: VolumeGrid, values: Vec<f64>) -> Result<Volume> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "volume with dims {:?} needs {} values, got {}",
                grid.dims,
                grid.len(),
                values.len()
            )));
        }
        Ok(Volume { grid, values })
    }

    pub fn zeros(grid: VolumeGrid) -> Volume {
        Volume {
            values: vec![0.0; grid.len()],
            grid,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.grid.index(i, j, k)]
    }

    pub fn argmax(&self) -> [usize; 3] {
        self.grid.unravel(argmax(&self.values))
    }

    /// The plane `slice.index` along `slice.axis` as an image.
    pub fn plane(&self, slice: SliceSpec) -> Result<Image2D> {
        let (rows, cols) = plane_shape(&self.grid, slice)?;
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(self.values[plane_voxel(&self.grid, slice, r, c)]);
            }
        }
        Image2D::new(rows, cols, self.grid.spacing, values)
    }

    /// Write `image` into the plane `slice`.
    pub fn set_plane(&mut self, slice: SliceSpec, image: &Image2D) -> Result<()> {
        let (rows, cols) = plane_shape(&self.grid, slice)?;
        if image.rows != rows || image.cols != cols {
            return Err(Error::invalid(format!(
                "plane {slice} is {rows}x{cols}, image is {}x{}",
                image.rows, image.cols
            )));
        }
        for r in 0..rows {
            for c in 0..cols {
                let v = plane_voxel(&self.grid, slice, r, c);
                self.values[v] = image.get(r, c);
            }
        }
        Ok(())
    }
}

/// Image shape of a plane, checking the index is inside the grid.
pub fn plane_shape(grid: &VolumeGrid, slice: SliceSpec) -> Result<(usize, usize)> {
    let a = slice.axis.index();
    if slice.index >= grid.dims[a] {
        return Err(Error::invalid(format!(
            "slice {slice} outside grid with {} planes along {}",
            grid.dims[a], slice.axis
        )));
    }
    let (ra, ca) = slice.axis.plane_axes();
    Ok((grid.dims[ra], grid.dims[ca]))
}

/// Linear voxel index of image pixel `(r, c)` in the plane `slice`.
#[inline]
pub fn plane_voxel(grid: &VolumeGrid, slice: SliceSpec, r: usize, c: usize) -> usize {
    match slice.axis {
        Axis::X => grid.index(slice.index, r, c),
        Axis::Y => grid.index(r, slice.index, c),
        Axis::Z => grid.index(r, c, slice.index),
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
