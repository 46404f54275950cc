//! The seeded desk-scale vessel experiment shared by the acceptance suite and
//! the `desk` example.
//!
//! A 128³ grid at 0.1 mm inside a 60 mm sphere. The reference image uses all
//! 256 elements, the sparse input an evenly strided 64 of them, and training
//! subsets hold 50 elements (78% of the sparse array).

use crate::error::Result;
use crate::forward::{default_dt, required_samples, simulate_signals, RawPAData, DEFAULT_SOUND_SPEED};
use crate::geometry::{
    fibonacci_sphere_array, make_grid, subsample_uniform, uniform_indices, DetectorArray, VolumeGrid,
};
use crate::image::{Axis, Image2D, SliceSpec, Volume};
use crate::metrics::{default_masks, RegionMask};
use crate::phantom::{rasterize_phantom, PhantomSpec, VesselTreeParams};
use crate::ubp::{reconstruct_image, ImageTarget};

pub const ELEMENTS: usize = 256;
pub const SPARSE_ELEMENTS: usize = 64;
pub const SUBSET_SIZE: usize = 50;
pub const ARRAY_RADIUS: f64 = 60.0;
pub const HALF_EXTENT: f64 = 6.4;
pub const SPACING: f64 = 0.1;

pub struct DeskScene {
    pub grid: VolumeGrid,
    pub phantom: PhantomSpec,
    pub source: Volume,
    pub full: DetectorArray,
    pub raw: RawPAData,
    pub sparse: DetectorArray,
    pub sparse_raw: RawPAData,
    pub slice: SliceSpec,
    /// Ground truth on the slice.
    pub truth: Image2D,
    /// Full-array reconstruction of the slice.
    pub reference: Image2D,
    /// Sparse-array reconstruction of the slice.
    pub recon: Image2D,
    pub signal: RegionMask,
    pub background: RegionMask,
}

impl DeskScene {
    /// Simulate the default vessel phantom on the desk geometry. `spacing`
    /// other than [`SPACING`] keeps the extent and refines the grid.
    pub fn build(spacing: f64) -> Result<DeskScene> {
        let grid = make_grid([0.0; 3], HALF_EXTENT, spacing)?;
        let full = fibonacci_sphere_array(ELEMENTS, ARRAY_RADIUS)?;
        let phantom = VesselTreeParams::default().generate();
        let source = rasterize_phantom(&phantom, &grid);
        let c = DEFAULT_SOUND_SPEED;
        let dt = default_dt(spacing, c);
        let raw = simulate_signals(&source, &full, dt, required_samples(&full, &grid, dt, c), c)?;
        let sparse = subsample_uniform(&full, SPARSE_ELEMENTS)?;
        let sparse_raw = raw.select_channels(&uniform_indices(ELEMENTS, SPARSE_ELEMENTS))?;
        let slice = SliceSpec {
            axis: Axis::Z,
            index: grid.dims[2] / 2,
        };
        let target = ImageTarget::Slice(slice);
        let truth = source.plane(slice)?;
        let reference = reconstruct_image(&raw, &full, &grid, target)?;
        let recon = reconstruct_image(&sparse_raw, &sparse, &grid, target)?;
        let (signal, background) = default_masks(&truth)?;
        Ok(DeskScene {
            grid,
            phantom,
            source,
            full,
            raw,
            sparse,
            sparse_raw,
            slice,
            truth,
            reference,
            recon,
            signal,
            background,
        })
    }

    pub fn target(&self) -> ImageTarget {
        ImageTarget::Slice(self.slice)
    }
}
