//! Sparse-view photoacoustic computed tomography toolkit.
//!
//! The pipeline runs from a spherical detector array and a numerical phantom
//! through a forward model to raw pressure traces, reconstructs them with
//! universal back-projection, probes artifact variability by random detector
//! subsets, and removes sparse-view artifacts with a small self-supervised
//! network trained on the measurement alone.
//!
//! ```no_run
//! use paray::{forward, geometry, phantom, ubp};
//!
//! let array = geometry::fibonacci_sphere_array(256, 60.0).unwrap();
//! let grid = geometry::make_grid([0.0; 3], 6.4, 0.1).unwrap();
//! let spec = phantom::VesselTreeParams::default().generate();
//! let source = phantom::rasterize_phantom(&spec, &grid);
//! let dt = forward::default_dt(grid.spacing, forward::DEFAULT_SOUND_SPEED);
//! let t_count = forward::required_samples(&array, &grid, dt, forward::DEFAULT_SOUND_SPEED);
//! let raw = forward::simulate_signals(&source, &array, dt, t_count, forward::DEFAULT_SOUND_SPEED).unwrap();
//! let slice = ubp::reconstruct_slice(&raw, &array, &grid, ubp::Axis::Z, 64).unwrap();
//! ```

pub mod cli;
pub mod desk;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod image;
pub mod io;
pub mod metrics;
pub mod morphology;
pub mod perturb;
pub mod phantom;
pub mod ubp;
pub mod zsa2a;

pub use error::{Error, Result};
