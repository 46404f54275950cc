mod common;

use common::{point_source, relative_l2, simulate, single_detector};
use paray::forward::{default_dt, required_samples, simulate_signals, RawPAData, DEFAULT_SOUND_SPEED};
use paray::geometry::{fibonacci_sphere_array, make_grid, norm, subsample_uniform, uniform_indices, VolumeGrid};
use paray::image::{Axis, SliceSpec, Volume};
use paray::metrics::psnr;
use paray::phantom::{rasterize_phantom, PhantomSpec, Sphere, VesselTreeParams};
use paray::ubp::{backprojection_term, map_projection, reconstruct, reconstruct_slice};
use paray::Error;

const C: f64 = DEFAULT_SOUND_SPEED;

#[test]
fn sphere_voxel_count_matches_volume() {
    let grid = make_grid([0.0; 3], 2.5, 0.1).unwrap();
    let spec = PhantomSpec::spheres(vec![Sphere {
        center: [0.0; 3],
        radius: 2.0,
        amplitude: 1.0,
    }]);
    let v = rasterize_phantom(&spec, &grid);
    let count = v.values.iter().filter(|&&x| x == 1.0).count() as f64;
    let exact = 4.0 / 3.0 * std::f64::consts::PI * 8.0 / 1e-3;
    assert!((count - exact).abs() / exact < 0.02, "{count} vs {exact}");
}

#[test]
fn phantom_edge_cases() {
    let grid = make_grid([0.0; 3], 1.0, 0.1).unwrap();
    let empty = rasterize_phantom(&PhantomSpec::spheres(vec![]), &grid);
    assert!(empty.values.iter().all(|&v| v == 0.0));
    let two = PhantomSpec::spheres(vec![
        Sphere {
            center: [-0.5, 0.0, 0.0],
            radius: 0.3,
            amplitude: 1.0,
        },
        Sphere {
            center: [0.5, 0.0, 0.0],
            radius: 0.3,
            amplitude: 2.0,
        },
    ]);
    let v = rasterize_phantom(&two, &grid);
    assert_eq!(v.values.iter().cloned().fold(f64::MIN, f64::max), 2.0);
    assert_eq!(v.values.iter().cloned().fold(f64::MAX, f64::min), 0.0);
    let bad = PhantomSpec::spheres(vec![Sphere {
        center: [0.0; 3],
        radius: -1.0,
        amplitude: 1.0,
    }]);
    assert!(bad.validate().is_err());
}

#[test]
fn trace_matches_supersampled_voxels() {
    let grid = make_grid([0.0; 3], 1.2, 0.1).unwrap();
    let spec = PhantomSpec::spheres(vec![Sphere {
        center: [0.0; 3],
        radius: 1.0,
        amplitude: 1.0,
    }]);
    let source = rasterize_phantom(&spec, &grid);
    let d = [0.31, -0.77, 0.56];
    let u = norm(d);
    let det = [40.0 * d[0] / u, 40.0 * d[1] / u, 40.0 * d[2] / u];
    let arr = single_detector(det);
    let dt = default_dt(0.1, C);
    let t = required_samples(&arr, &grid, dt, C);
    let raw = simulate_signals(&source, &arr, dt, t, C).unwrap();
    let oracle = common::supersampled_trace(&source, det, dt, t, C, 16);
    let err = relative_l2(raw.channel(0), &oracle);
    assert!(err < 1e-3, "relative L2 {err}");
}

#[test]
fn nwave_error_falls_with_spacing() {
    let errors: Vec<f64> = [0.1, 0.05, 0.025]
        .iter()
        .map(|&h| common::nwave(1.0, 40.0, [0.31, -0.77, 0.56], h, 2).error)
        .collect();
    assert!(errors.windows(2).all(|w| w[1] < 0.8 * w[0]), "{errors:?}");
    assert!(errors[2] < 0.05, "{errors:?}");
}

#[test]
fn zero_source_gives_zero_traces() {
    let grid = make_grid([0.0; 3], 0.5, 0.1).unwrap();
    let arr = fibonacci_sphere_array(16, 20.0).unwrap();
    let raw = simulate(&PhantomSpec::spheres(vec![]), &arr, &grid);
    assert!(raw.data.iter().all(|&v| v == 0.0));
    let vol = reconstruct(&raw, &arr, &grid).unwrap();
    assert!(vol.values.iter().all(|&v| v == 0.0));
    let img = reconstruct_slice(&raw, &arr, &grid, Axis::Z, 3).unwrap();
    assert!(img.values.iter().all(|&v| v == 0.0));
}

#[test]
fn single_voxel_arrival_time() {
    let grid = VolumeGrid::new([0.0; 3], 0.1, [1, 1, 1]).unwrap();
    let mut src = Volume::zeros(grid);
    src.values[0] = 1.0;
    let pos = [12.0, -5.0, 3.0];
    let det = single_detector(pos);
    let dt = default_dt(0.1, C);
    let raw = simulate_signals(&src, &det, dt, required_samples(&det, &grid, dt, C), C).unwrap();
    let centre = norm(pos) / (C * dt);
    let support: Vec<usize> = (0..raw.n_samples).filter(|&k| raw.channel(0)[k] != 0.0).collect();
    let (first, last) = (support[0] as f64, *support.last().unwrap() as f64);
    assert!(
        ((first + last) / 2.0 - centre).abs() <= 2.0,
        "support {first}..{last} vs arrival {centre}"
    );
    // Box half-width is at most √3·h/2, plus one sample for the derivative.
    let reach = 3f64.sqrt() * 0.1 / 2.0 / (C * dt) + 1.0;
    assert!(first >= centre - reach - 1.0 && last <= centre + reach + 1.0);
}

#[test]
fn short_window_names_required_count() {
    let grid = make_grid([0.0; 3], 0.5, 0.1).unwrap();
    let arr = fibonacci_sphere_array(4, 20.0).unwrap();
    let src = rasterize_phantom(&point_source([0.0; 3], 0.1), &grid);
    let dt = default_dt(0.1, C);
    let need = required_samples(&arr, &grid, dt, C);
    match simulate_signals(&src, &arr, dt, need - 1, C) {
        Err(Error::Precondition(msg)) => {
            assert!(msg.contains("t_count") && msg.contains(&need.to_string()), "{msg}");
        }
        other => panic!("expected a precondition error, got {other:?}"),
    }
    let raw = simulate_signals(&src, &arr, dt, need, C).unwrap();
    let short = raw.select_channels(&[0]).unwrap();
    let cut = RawPAData::new(
        paray::forward::RawHeader {
            n_samples: 50,
            ..short.header()
        },
        short.data[..50].to_vec(),
    )
    .unwrap();
    let one = arr.select(&[0]).unwrap();
    assert!(matches!(reconstruct(&cut, &one, &grid), Err(Error::Precondition(_))));
}

#[test]
fn simulation_is_linear_and_integrates_to_zero() {
    let grid = make_grid([0.0; 3], 1.0, 0.1).unwrap();
    let arr = fibonacci_sphere_array(12, 15.0).unwrap();
    let a = rasterize_phantom(&point_source([0.2, -0.3, 0.1], 0.1), &grid);
    let b = rasterize_phantom(
        &PhantomSpec::spheres(vec![Sphere {
            center: [-0.4, 0.3, 0.0],
            radius: 0.4,
            amplitude: 1.0,
        }]),
        &grid,
    );
    let combo = Volume::new(
        grid,
        a.values.iter().zip(&b.values).map(|(x, y)| 2.0 * x - 0.5 * y).collect(),
    )
    .unwrap();
    let dt = default_dt(0.1, C);
    let n = required_samples(&arr, &grid, dt, C);
    let sa = simulate_signals(&a, &arr, dt, n, C).unwrap();
    let sb = simulate_signals(&b, &arr, dt, n, C).unwrap();
    let sc = simulate_signals(&combo, &arr, dt, n, C).unwrap();
    let expect: Vec<f64> = sa.data.iter().zip(&sb.data).map(|(x, y)| 2.0 * x - 0.5 * y).collect();
    assert!(relative_l2(&sc.data, &expect) <= 1e-6);
    for i in 0..arr.len() {
        let ch = sb.channel(i);
        let max = ch.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let integral: f64 = ch.iter().sum::<f64>() * dt;
        assert!(integral.abs() <= 1e-3 * max * n as f64 * dt, "channel {i}: {integral}");
    }
}

#[test]
fn backprojection_term_examples() {
    let constant = backprojection_term(&[3.0; 6], 1.0, 0.0, 1.0).unwrap();
    assert!(constant[1..5].iter().all(|&b| b == 6.0));
    // p = t̄ with c = 2, dt = 0.5, so t̄_k = k.
    let ramp: Vec<f64> = (0..6).map(|k| k as f64).collect();
    let b = backprojection_term(&ramp, 0.5, 0.0, 2.0).unwrap();
    assert!(b[1..5].iter().all(|&v| v.abs() < 1e-12), "{b:?}");
    let quad: Vec<f64> = (0..5).map(|k| (k * k) as f64).collect();
    assert_eq!(backprojection_term(&quad, 1.0, 0.0, 1.0).unwrap()[2], -8.0);
    assert!(matches!(
        backprojection_term(&[1.0, 2.0], 1.0, 0.0, 1.0),
        Err(Error::InvalidArgument(_))
    ));
}

struct PointCase {
    grid: VolumeGrid,
    arr: paray::geometry::DetectorArray,
}

fn point_case() -> PointCase {
    PointCase {
        grid: make_grid([0.0; 3], 1.0, 0.1).unwrap(),
        arr: fibonacci_sphere_array(256, 20.0).unwrap(),
    }
}

#[test]
fn point_source_is_localised_and_shift_equivariant() {
    let PointCase { grid, arr } = point_case();
    let mut peaks = Vec::new();
    for shift in [0.0, 0.1] {
        let centre = grid.position(10, 9, 10);
        let centre = [centre[0] + shift, centre[1], centre[2]];
        let raw = simulate(&point_source(centre, 0.1), &arr, &grid);
        let vol = reconstruct(&raw, &arr, &grid).unwrap();
        let peak = vol.argmax();
        peaks.push(peak);
        let img = reconstruct_slice(&raw, &arr, &grid, Axis::Z, 10).unwrap();
        assert_eq!(img.argmax(), (10 + (shift * 10.0).round() as usize, 9));
    }
    assert_eq!(peaks[0], [10, 9, 10]);
    assert_eq!(peaks[1], [11, 9, 10]);
}

#[test]
fn slices_equal_volume_planes_bitwise() {
    let PointCase { grid, arr } = point_case();
    let raw = simulate(&point_source([0.13, -0.2, 0.05], 0.1), &arr, &grid);
    let vol = reconstruct(&raw, &arr, &grid).unwrap();
    for axis in [Axis::X, Axis::Y, Axis::Z] {
        for index in [0, 7, 19] {
            let img = reconstruct_slice(&raw, &arr, &grid, axis, index).unwrap();
            assert_eq!(img, vol.plane(SliceSpec { axis, index }).unwrap(), "{axis}:{index}");
        }
    }
    assert!(reconstruct_slice(&raw, &arr, &grid, Axis::Z, 20).is_err());
}

#[test]
fn reconstruction_is_linear_and_area_invariant() {
    let PointCase { grid, arr } = point_case();
    let r1 = simulate(&point_source([0.13, -0.2, 0.05], 0.1), &arr, &grid);
    let r2 = simulate(
        &PhantomSpec::spheres(vec![Sphere {
            center: [-0.3, 0.3, 0.0],
            radius: 0.35,
            amplitude: 1.0,
        }]),
        &arr,
        &grid,
    );
    let (a, b) = (1.7, -0.6);
    let mix = RawPAData {
        data: r1.data.iter().zip(&r2.data).map(|(x, y)| a * x + b * y).collect(),
        ..r1.clone()
    };
    let v1 = reconstruct(&r1, &arr, &grid).unwrap();
    let v2 = reconstruct(&r2, &arr, &grid).unwrap();
    let vm = reconstruct(&mix, &arr, &grid).unwrap();
    let expect: Vec<f64> = v1.values.iter().zip(&v2.values).map(|(x, y)| a * x + b * y).collect();
    assert!(
        relative_l2(&vm.values, &expect) <= 1e-6,
        "{}",
        relative_l2(&vm.values, &expect)
    );

    let mut scaled = arr.clone();
    scaled.patch_area *= 37.5;
    let vs = reconstruct(&r1, &scaled, &grid).unwrap();
    assert!(relative_l2(&vs.values, &v1.values) <= 1e-6);
}

#[test]
fn channel_mismatch_is_rejected() {
    let PointCase { grid, arr } = point_case();
    let raw = simulate(&point_source([0.0; 3], 0.1), &arr, &grid);
    let fewer = arr.select(&[0, 1, 2]).unwrap();
    assert!(matches!(
        reconstruct(&raw, &fewer, &grid),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn map_projection_examples() {
    let grid = VolumeGrid::new([0.0; 3], 1.0, [3, 2, 4]).unwrap();
    let mut v = Volume::zeros(grid);
    v.values[grid.index(1, 1, 2)] = 2.5;
    let m = map_projection(&v, Axis::Z);
    assert_eq!(m.values.iter().filter(|&&x| x != 0.0).count(), 1);
    assert_eq!(m.get(1, 1), 2.5);
    let c = Volume::new(grid, vec![0.7; grid.len()]).unwrap();
    for axis in [Axis::X, Axis::Y, Axis::Z] {
        assert!(map_projection(&c, axis).values.iter().all(|&x| x == 0.7));
    }
    let g2 = VolumeGrid::new([0.0; 3], 1.0, [2, 2, 2]).unwrap();
    let mut w = Volume::zeros(g2);
    w.values[g2.index(0, 0, 0)] = -3.0;
    w.values[g2.index(0, 0, 1)] = 2.0;
    assert_eq!(map_projection(&w, Axis::Z).get(0, 0), -3.0);
}

#[test]
fn sparser_arrays_give_lower_psnr() {
    // Vessel slice on a coarse grid, 2048-element reference.
    let grid = make_grid([0.0; 3], 6.4, 0.2).unwrap();
    let full = fibonacci_sphere_array(2048, 60.0).unwrap();
    let spec = VesselTreeParams::default().generate();
    let raw = simulate(&spec, &full, &grid);
    let z = grid.dims[2] / 2;
    let reference = reconstruct_slice(&raw, &full, &grid, Axis::Z, z).unwrap();
    let mut last = f64::INFINITY;
    for k in [1024, 512, 256] {
        let sub = subsample_uniform(&full, k).unwrap();
        let sraw = raw.select_channels(&uniform_indices(2048, k)).unwrap();
        let img = reconstruct_slice(&sraw, &sub, &grid, Axis::Z, z).unwrap();
        let p = psnr(&reference, &img).unwrap();
        assert!(p < last, "{k} elements: {p} dB after {last} dB");
        last = p;
    }
}
