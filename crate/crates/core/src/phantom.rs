//! Numerical phantoms built from spheres and tubes, plus a seeded generator
//! for planar branching vessel trees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dot, norm, sub, Vec3, VolumeGrid};
use crate::image::Volume;

/// Initial pressure distribution sampled on a grid.
pub type SourceVolume = Volume;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
    pub amplitude: f64,
}

/// Capsule around the segment `a`-`b`: every point within `radius` of it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "primitives", rename_all = "snake_case")]
pub enum Primitives {
    Spheres(Vec<Sphere>),
    Tubes(Vec<Tube>),
}

/// How overlapping primitives combine at a voxel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    #[default]
    Sum,
    /// Largest amplitude wins; keeps joints of connected tubes at unit level.
    Max,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    #[serde(flatten)]
    pub primitives: Primitives,
    #[serde(default)]
    pub combine: Combine,
}

impl PhantomSpec {
    pub fn spheres(spheres: Vec<Sphere>) -> PhantomSpec {
        PhantomSpec {
            primitives: Primitives::Spheres(spheres),
            combine: Combine::Sum,
        }
    }

    pub fn tubes(tubes: Vec<Tube>) -> PhantomSpec {
        PhantomSpec {
            primitives: Primitives::Tubes(tubes),
            combine: Combine::Sum,
        }
    }

    /// Radii and amplitudes must be positive and every coordinate finite.
    pub fn validate(&self) -> Result<()> {
        let check = |i: usize, points: &[Vec3], radius: f64, amplitude: f64| {
            if !(radius > 0.0 && radius.is_finite()) {
                return Err(Error::invalid(format!(
                    "primitive {i}: radius must be positive, got {radius}"
                )));
            }
            if !(amplitude > 0.0 && amplitude.is_finite()) {
                return Err(Error::invalid(format!(
                    "primitive {i}: amplitude must be positive, got {amplitude}"
                )));
            }
            if points.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("primitive {i}: coordinates must be finite")));
            }
            Ok(())
        };
        match &self.primitives {
            Primitives::Spheres(v) => v
                .iter()
                .enumerate()
                .try_for_each(|(i, s)| check(i, &[s.center], s.radius, s.amplitude)),
            Primitives::Tubes(v) => v
                .iter()
                .enumerate()
                .try_for_each(|(i, t)| check(i, &[t.a, t.b], t.radius, t.amplitude)),
        }
    }
}

fn in_tube(p: Vec3, t: &Tube) -> bool {
    let ab = sub(t.b, t.a);
    let ap = sub(p, t.a);
    let len2 = dot(ab, ab);
    let s = if len2 > 0.0 {
        (dot(ap, ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [t.a[0] + s * ab[0], t.a[1] + s * ab[1], t.a[2] + s * ab[2]];
    norm(sub(p, q)) <= t.radius
}

/// Voxel index range along one axis whose centres fall inside `[lo, hi]`.
fn index_range(grid: &VolumeGrid, axis: usize, lo: f64, hi: f64) -> std::ops::Range<usize> {
    let n = grid.dims[axis] as f64;
    let a = ((lo - grid.origin[axis]) / grid.spacing).ceil().clamp(0.0, n);
    let b = ((hi - grid.origin[axis]) / grid.spacing).floor().clamp(-1.0, n - 1.0);
    a as usize..(b + 1.0).max(a) as usize
}

fn stamp(
    grid: &VolumeGrid,
    values: &mut [f64],
    combine: Combine,
    lo: Vec3,
    hi: Vec3,
    amplitude: f64,
    inside: impl Fn(Vec3) -> bool,
) {
    for i in index_range(grid, 0, lo[0], hi[0]) {
        for j in index_range(grid, 1, lo[1], hi[1]) {
            for k in index_range(grid, 2, lo[2], hi[2]) {
                if inside(grid.position(i, j, k)) {
                    let v = &mut values[grid.index(i, j, k)];
                    match combine {
                        Combine::Sum => *v += amplitude,
                        Combine::Max => *v = v.max(amplitude),
                    }
                }
            }
        }
    }
}

/// Sample the phantom at voxel centres.
pub fn rasterize_phantom(spec: &PhantomSpec, grid: &VolumeGrid) -> SourceVolume {
    let mut values = vec![0.0; grid.len()];
    match &spec.primitives {
        Primitives::Spheres(spheres) => {
            for s in spheres {
                let lo = [s.center[0] - s.radius, s.center[1] - s.radius, s.center[2] - s.radius];
                let hi = [s.center[0] + s.radius, s.center[1] + s.radius, s.center[2] + s.radius];
                stamp(grid, &mut values, spec.combine, lo, hi, s.amplitude, |p| {
                    norm(sub(p, s.center)) <= s.radius
                });
            }
        }
        Primitives::Tubes(tubes) => {
            for t in tubes {
                let lo = std::array::from_fn(|d| t.a[d].min(t.b[d]) - t.radius);
                let hi = std::array::from_fn(|d| t.a[d].max(t.b[d]) + t.radius);
                stamp(grid, &mut values, spec.combine, lo, hi, t.amplitude, |p| in_tube(p, t));
            }
        }
    }
    Volume { grid: *grid, values }
}

/// Parameters of a planar branching vessel tree.
///
/// Each tree starts `start_distance` from the in-plane origin at a random
/// azimuth and heads toward it. A branch is `segments` short tubes whose
/// heading wanders by `N(0, wiggle)` radians per tube, then forks into two
/// children turned by `±U(branch_angle)`, with length and radius scaled by
/// the ratios. Growth stops after `depth` levels or below `min_radius`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VesselTreeParams {
    pub seed: u64,
    pub trees: usize,
    pub depth: u32,
    pub root_radius: f64,
    pub root_length: f64,
    pub start_distance: f64,
    pub plane_z: f64,
    pub min_radius: f64,
    pub segments: usize,
    pub wiggle: f64,
    pub branch_angle: [f64; 2],
    pub length_ratio: f64,
    pub radius_ratio: f64,
    pub amplitude: f64,
}

impl Default for VesselTreeParams {
    fn default() -> Self {
        VesselTreeParams {
            seed: 3,
            trees: 2,
            depth: 3,
            root_radius: 0.25,
            root_length: 4.0,
            start_distance: 5.5,
            plane_z: 0.0,
            min_radius: 0.12,
            segments: 4,
            wiggle: 0.15,
            branch_angle: [0.35, 0.8],
            length_ratio: 0.72,
            radius_ratio: 0.75,
            amplitude: 1.0,
        }
    }
}

struct Grower<'a> {
    p: &'a VesselTreeParams,
    rng: ChaCha8Rng,
    wiggle: Normal<f64>,
    tubes: Vec<Tube>,
}

impl Grower<'_> {
    fn grow(&mut self, start: [f64; 2], heading: f64, length: f64, radius: f64, depth: u32) {
        if depth == 0 || radius < self.p.min_radius {
            return;
        }
        let z = self.p.plane_z;
        let step = length / self.p.segments as f64;
        let (mut q, mut h) = (start, heading);
        for _ in 0..self.p.segments {
            h += self.wiggle.sample(&mut self.rng);
            let q2 = [q[0] + step * h.cos(), q[1] + step * h.sin()];
            self.tubes.push(Tube {
                a: [q[0], q[1], z],
                b: [q2[0], q2[1], z],
                radius,
                amplitude: self.p.amplitude,
            });
            q = q2;
        }
        let [lo, hi] = self.p.branch_angle;
        for side in [1.0, -1.0] {
            let turn = side * self.rng.random_range(lo..=hi);
            self.grow(
                q,
                h + turn,
                length * self.p.length_ratio,
                radius * self.p.radius_ratio,
                depth - 1,
            );
        }
    }
}

impl VesselTreeParams {
    pub fn generate(&self) -> PhantomSpec {
        let mut g = Grower {
            p: self,
            rng: ChaCha8Rng::seed_from_u64(self.seed),
            wiggle: Normal::new(0.0, self.wiggle.abs()).expect("finite standard deviation"),
            tubes: Vec::new(),
        };
        for _ in 0..self.trees {
            let az: f64 = g.rng.random_range(0.0..std::f64::consts::TAU);
            let start = [-self.start_distance * az.cos(), -self.start_distance * az.sin()];
            g.grow(start, az, self.root_length, self.root_radius, self.depth);
        }
        PhantomSpec {
            primitives: Primitives::Tubes(g.tubes),
            combine: Combine::Max,
        }
    }
}
