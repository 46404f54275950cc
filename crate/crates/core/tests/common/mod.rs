//! Shared fixtures for the integration and acceptance tests.
#![allow(dead_code)]

use paray::forward::{default_dt, required_samples, simulate_signals, RawPAData, DEFAULT_SOUND_SPEED};
use paray::geometry::{make_grid, norm, DetectorArray, Vec3, VolumeGrid};
use paray::phantom::{rasterize_phantom, PhantomSpec, SourceVolume, Sphere};

/// A one-element array at `position` facing the origin.
pub fn single_detector(position: Vec3) -> DetectorArray {
    let r = norm(position);
    DetectorArray {
        radius: r,
        positions: vec![position],
        normals: vec![[-position[0] / r, -position[1] / r, -position[2] / r]],
        patch_area: 1.0,
    }
}

/// Relative L2 error between the simulated trace of a uniform sphere and the
/// closed-form N-wave `p0·(r − ct)/(2r)` on `|r − ct| ≤ a`, leaving out the
/// `skip` samples nearest each of the two jumps.
pub struct NWave {
    pub error: f64,
    pub compared: usize,
}

pub fn nwave(radius: f64, distance: f64, direction: Vec3, spacing: f64, skip: usize) -> NWave {
    let grid = make_grid([0.0; 3], radius + 2.0 * spacing, spacing).unwrap();
    nwave_on(&grid, radius, distance, direction, skip)
}

/// As [`nwave`], on a given grid centred at the origin.
pub fn nwave_on(grid: &VolumeGrid, radius: f64, distance: f64, direction: Vec3, skip: usize) -> NWave {
    let c = DEFAULT_SOUND_SPEED;
    let spacing = grid.spacing;
    let amp = 1.0;
    let spec = PhantomSpec::spheres(vec![Sphere {
        center: [0.0; 3],
        radius,
        amplitude: amp,
    }]);
    let source = rasterize_phantom(&spec, grid);
    let u = norm(direction);
    let pos = [
        distance * direction[0] / u,
        distance * direction[1] / u,
        distance * direction[2] / u,
    ];
    let det = single_detector(pos);
    let dt = default_dt(spacing, c);
    let t_count = required_samples(&det, grid, dt, c);
    let raw = simulate_signals(&source, &det, dt, t_count, c).unwrap();
    let cdt = c * dt;
    let excluded: Vec<std::ops::Range<f64>> = [distance - radius, distance + radius]
        .iter()
        .map(|&x| {
            let lo = (x / cdt - skip as f64 / 2.0).ceil();
            lo..lo + skip as f64
        })
        .collect();
    let (mut num, mut den, mut compared) = (0.0, 0.0, 0);
    for (k, &p) in raw.channel(0).iter().enumerate() {
        if excluded.iter().any(|r| r.contains(&(k as f64))) {
            continue;
        }
        let ct = k as f64 * cdt;
        let exact = if (distance - ct).abs() <= radius {
            amp * (distance - ct) / (2.0 * distance)
        } else {
            0.0
        };
        num += (p - exact) * (p - exact);
        den += exact * exact;
        compared += 1;
    }
    NWave {
        error: (num / den).sqrt(),
        compared,
    }
}

/// Trace of a voxelised source at one detector, treating every voxel as a
/// uniform cube sampled at `sub³` points binned to the nearest shell.
pub fn supersampled_trace(source: &SourceVolume, det: Vec3, dt: f64, t_count: usize, c: f64, sub: usize) -> Vec<f64> {
    let grid = &source.grid;
    let h = grid.spacing;
    let cdt = c * dt;
    let weight = h.powi(3) / (sub.pow(3) as f64) / cdt;
    let offset = |n: usize| ((n as f64 + 0.5) / sub as f64 - 0.5) * h;
    let mut g = vec![0.0; t_count];
    for (idx, &v) in source.values.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let [i, j, k] = grid.unravel(idx);
        let p = grid.position(i, j, k);
        for a in 0..sub {
            for b in 0..sub {
                for e in 0..sub {
                    let q = [
                        p[0] + offset(a) - det[0],
                        p[1] + offset(b) - det[1],
                        p[2] + offset(e) - det[2],
                    ];
                    g[(norm(q) / cdt).round() as usize] += v * weight;
                }
            }
        }
    }
    for (k, x) in g.iter_mut().enumerate() {
        *x = if k == 0 {
            0.0
        } else {
            *x / (4.0 * std::f64::consts::PI * c * c * k as f64 * dt)
        };
    }
    let n = g.len();
    (0..n)
        .map(|k| match k {
            0 => (g[1] - g[0]) / dt,
            _ if k == n - 1 => (g[k] - g[k - 1]) / dt,
            _ => (g[k + 1] - g[k - 1]) / (2.0 * dt),
        })
        .collect()
}

/// Simulate `spec` on `array` over `grid` with the default sampling.
pub fn simulate(spec: &PhantomSpec, array: &DetectorArray, grid: &VolumeGrid) -> RawPAData {
    let c = DEFAULT_SOUND_SPEED;
    let source = rasterize_phantom(spec, grid);
    let dt = default_dt(grid.spacing, c);
    simulate_signals(&source, array, dt, required_samples(array, grid, dt, c), c).unwrap()
}

/// A small sphere whose support is about one voxel across.
pub fn point_source(center: Vec3, spacing: f64) -> PhantomSpec {
    PhantomSpec::spheres(vec![Sphere {
        center,
        radius: 0.6 * spacing,
        amplitude: 1.0,
    }])
}

pub fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// Two reconstructions of a small two-sphere scene from random 24-of-32
/// element subsets, on a `n × n` plane.
pub fn subset_pair(n: usize, seed: u64) -> (paray::image::Image2D, paray::image::Image2D) {
    use paray::geometry::fibonacci_sphere_array;
    use paray::image::{Axis, SliceSpec};
    use paray::perturb::{random_subset, subset_raw};
    use paray::ubp::{reconstruct_image, ImageTarget};
    let h = 0.1;
    let grid = make_grid([0.0; 3], n as f64 * h / 2.0, h).unwrap();
    let arr = fibonacci_sphere_array(32, 20.0).unwrap();
    let r = n as f64 * h / 2.0;
    let spec = PhantomSpec::spheres(vec![
        Sphere {
            center: [0.2 * r, -0.3 * r, 0.0],
            radius: 0.25 * r,
            amplitude: 1.0,
        },
        Sphere {
            center: [-0.4 * r, 0.35 * r, 0.05],
            radius: 0.15 * r,
            amplitude: 0.7,
        },
    ]);
    let raw = simulate(&spec, &arr, &grid);
    let target = ImageTarget::Slice(SliceSpec {
        axis: Axis::Z,
        index: grid.dims[2] / 2,
    });
    let pick = |s: u64| {
        let sub = random_subset(32, 24, s).unwrap();
        let (r, a) = subset_raw(&raw, &arr, &sub).unwrap();
        reconstruct_image(&r, &a, &grid, target).unwrap()
    };
    (pick(2 * seed), pick(2 * seed + 1))
}

pub struct FdReport {
    pub checked: usize,
    pub failures: usize,
    /// Largest `|analytic − fd| / (|analytic| + 1e-6)`.
    pub worst: f64,
    pub worst_index: usize,
    /// Worst relative error of the failing parameters when rechecked with
    /// step `h/100`, which rarely moves a pre-activation across a ReLU kink.
    pub recheck_worst: f64,
}

/// Compare the analytic gradient of the training loss with central
/// differences (step `h`) for every parameter, in `f64`, at a randomly
/// initialised network with small random biases.
pub fn finite_difference_check(n: usize, channels: usize, seed: u64, h: f64, tol: f64) -> FdReport {
    use paray::zsa2a::{init_network, NetworkParams, Normalization, Objective};
    use rand::{Rng, SeedableRng};
    let (a, b) = subset_pair(n, seed);
    let norm = Normalization::fit(&[&a, &b]);
    let inputs = vec![norm.apply::<f64>(&a), norm.apply::<f64>(&b)];
    let mut obj = Objective::new(inputs, n, n, channels);
    let mut params: NetworkParams<f64> = init_network(channels, seed);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    set_biases(&mut params, || rng.random_range(-0.1..0.1));
    let mut grad = NetworkParams::zeros(channels);
    obj.loss_and_gradient(&params, &mut grad);
    let mut report = FdReport {
        checked: 0,
        failures: 0,
        worst: 0.0,
        worst_index: 0,
        recheck_worst: 0.0,
    };
    for i in 0..params.len() {
        let orig = params.data[i];
        params.data[i] = orig + h;
        let up = obj.loss(&params).total;
        params.data[i] = orig - h;
        let down = obj.loss(&params).total;
        params.data[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let an = grad.data[i];
        let rel = (an - fd).abs() / (an.abs() + 1e-6);
        if rel > tol {
            report.failures += 1;
            let small = h / 100.0;
            params.data[i] = orig + small;
            let up = obj.loss(&params).total;
            params.data[i] = orig - small;
            let down = obj.loss(&params).total;
            params.data[i] = orig;
            let fd = (up - down) / (2.0 * small);
            report.recheck_worst = report.recheck_worst.max((an - fd).abs() / (an.abs() + 1e-6));
        }
        if rel > report.worst {
            report.worst = rel;
            report.worst_index = i;
        }
        report.checked += 1;
    }
    report
}

pub fn set_biases(p: &mut paray::zsa2a::NetworkParams<f64>, mut value: impl FnMut() -> f64) {
    use paray::zsa2a::NetworkParams;
    let layers: [fn(&mut NetworkParams<f64>) -> &mut [f64]; 3] =
        [NetworkParams::b1_mut, NetworkParams::b2_mut, NetworkParams::b3_mut];
    for get in layers {
        get(p).iter_mut().for_each(|b| *b = value());
    }
}
