//! Acceptance criteria, one line per criterion.
//!
//! `cargo test --release --test acceptance -- [N ...]` runs the listed
//! criteria (all by default). Failures are reported but only change the exit
//! status when `ACCEPTANCE_STRICT=1` is set.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{finite_difference_check, nwave_on, point_source, relative_l2};
use paray::desk::{DeskScene, SPACING, SPARSE_ELEMENTS, SUBSET_SIZE};
use paray::forward::RawPAData;
use paray::geometry::{fibonacci_sphere_array, make_grid};
use paray::image::Image2D;
use paray::metrics::{cnr, psnr};
use paray::perturb::{cv_analysis, masked_median, random_subset, signal_artifact_masks, subset_raw, CvTarget};
use paray::ubp::{reconstruct, reconstruct_image};
use paray::zsa2a::{
    apply, generalized_loss, pair_loss, parameter_count, remove_artifacts, run_zsa2a, subset_seeds, train, CleanTarget,
    NetworkParams, TrainConfig, TrainedModel, ZsOutput,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn single_threaded<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(f)
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Every parameter of the default-width network on a 16×16 pair.
fn gradient_check() -> Outcome {
    let t = Instant::now();
    let r = finite_difference_check(16, 48, 7, 1e-4, 1e-3);
    let elapsed = t.elapsed();
    let pass = r.checked == parameter_count(48) && r.failures == 0 && elapsed < Duration::from_secs(60);
    outcome(
        pass,
        format!(
            "{}/{} parameters within 1e-3 at step 1e-4, worst {:.2e} at #{} (limit 60 s); \
             the failing ones rechecked at step 1e-6 agree within {:.1e}",
            r.checked - r.failures,
            r.checked,
            r.worst,
            r.worst_index,
            r.recheck_worst
        ),
    )
}

fn nwave_oracle() -> Outcome {
    let t = Instant::now();
    let grid = make_grid([0.0; 3], paray::desk::HALF_EXTENT, SPACING).unwrap();
    let dirs = fibonacci_sphere_array(5, 1.0).unwrap().positions;
    let cases = [(1.0, dirs[2]), (2.5, dirs[0]), (4.0, dirs[4])];
    let errors: Vec<f64> = cases
        .iter()
        .map(|&(r, d)| nwave_on(&grid, r, paray::desk::ARRAY_RADIUS, d, 2).error)
        .collect();
    let worst = errors.iter().cloned().fold(0.0, f64::max);
    let elapsed = t.elapsed();
    outcome(
        worst <= 0.05 && elapsed < Duration::from_secs(60),
        format!(
            "relative L2 {:.4}, {:.4}, {:.4} for 1, 2.5 and 4 mm spheres (limit 0.05)",
            errors[0], errors[1], errors[2]
        ),
    )
}

fn ubp_localisation() -> Outcome {
    let grid = make_grid([0.0; 3], paray::desk::HALF_EXTENT, SPACING).unwrap();
    let array = fibonacci_sphere_array(paray::desk::ELEMENTS, paray::desk::ARRAY_RADIUS).unwrap();
    let truth = [37usize, 81, 52];
    let centre = grid.position(truth[0], truth[1], truth[2]);
    let centre = [centre[0] + 0.02, centre[1] - 0.03, centre[2] + 0.01];
    let r1 = common::simulate(&point_source(centre, SPACING), &array, &grid);
    let v1 = reconstruct(&r1, &array, &grid).unwrap();
    let peak = v1.argmax();
    let off = (0..3).map(|a| peak[a].abs_diff(truth[a])).max().unwrap();

    let desk = DeskScene::build(SPACING).unwrap();
    let v2 = reconstruct(&desk.raw, &array, &grid).unwrap();
    let (a, b) = (2.5, -0.75);
    let mix = RawPAData {
        data: r1.data.iter().zip(&desk.raw.data).map(|(x, y)| a * x + b * y).collect(),
        ..r1.clone()
    };
    let vm = reconstruct(&mix, &array, &grid).unwrap();
    let expect: Vec<f64> = v1.values.iter().zip(&v2.values).map(|(x, y)| a * x + b * y).collect();
    let lin = relative_l2(&vm.values, &expect);
    outcome(
        off <= 1 && lin <= 1e-6,
        format!("argmax {peak:?} vs source voxel {truth:?} (off by {off}), linearity error {lin:.2e} (limit 1e-6)"),
    )
}

fn cv_contrast() -> Outcome {
    let t = Instant::now();
    let d = DeskScene::build(SPACING).unwrap();
    let m = (0.78 * SPARSE_ELEMENTS as f64).round() as usize;
    let map = cv_analysis(
        &d.sparse_raw,
        &d.sparse,
        &d.grid,
        CvTarget::Image(d.target()),
        m,
        200,
        0,
    )
    .unwrap();
    let (signal, artifact) = signal_artifact_masks(&d.truth, &d.recon, 0.1).unwrap();
    let ms = masked_median(&map.cv, &signal);
    let ma = masked_median(&map.cv, &artifact);
    let elapsed = t.elapsed();
    match (ms, ma) {
        (Some(s), Some(a)) => outcome(
            a >= 2.0 * s && elapsed < Duration::from_secs(600),
            format!(
                "median CV artifact {a:.1}% vs signal {s:.1}% (ratio {:.2}, limit 2), {} artifact pixels, {:.1} s",
                a / s,
                artifact.count(),
                secs(elapsed)
            ),
        ),
        _ => outcome(false, "empty signal or artifact mask"),
    }
}

fn end_to_end() -> Outcome {
    let t = Instant::now();
    let d = DeskScene::build(SPACING).unwrap();
    let p0 = psnr(&d.reference, &d.recon).unwrap();
    let c0 = cnr(&d.recon, &d.signal, &d.background).unwrap();
    let mut good = 0;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let run = match run_zsa2a(
            &d.sparse_raw,
            &d.sparse,
            &d.grid,
            CleanTarget::Image(d.target()),
            SUBSET_SIZE,
            &cfg,
        ) {
            Ok(ZsOutput::Image(run)) => run,
            other => return outcome(false, format!("seed {seed}: {:?}", other.err())),
        };
        let p = psnr(&d.reference, &run.clean).unwrap();
        let c = cnr(&run.clean, &d.signal, &d.background).unwrap();
        let ok = p >= p0 + 0.5 && c >= 1.5 * c0;
        good += ok as usize;
        lines.push(format!(
            "seed {seed}: PSNR {p0:.2} -> {p:.2} dB ({:+.2}), CNR {c0:.3} -> {c:.3} (x{:.2}){}",
            p - p0,
            c / c0,
            if ok { "" } else { "  [short]" }
        ));
    }
    let elapsed = t.elapsed();
    let pass = good >= 4 && elapsed < Duration::from_secs(900);
    outcome(
        pass,
        format!(
            "{good}/5 seeds reach +0.5 dB and x1.5 CNR (need 4), {:.0} s single-threaded (limit 900 s)\n      {}",
            secs(elapsed),
            lines.join("\n      ")
        ),
    )
}

/// Subset reconstructions of the desk slice for `k` training subsets.
fn desk_subsets(d: &DeskScene, k: usize, seed: u64) -> Vec<Image2D> {
    subset_seeds(seed, k)
        .into_iter()
        .map(|s| {
            let sub = random_subset(d.sparse.len(), SUBSET_SIZE, s).unwrap();
            let (r, a) = subset_raw(&d.sparse_raw, &d.sparse, &sub).unwrap();
            reconstruct_image(&r, &a, &d.grid, d.target()).unwrap()
        })
        .collect()
}

fn network_outputs(model: &TrainedModel<f32>, images: &[Image2D]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let r: Vec<Vec<f64>> = images
        .iter()
        .map(|i| model.normalization.apply::<f32>(i).iter().map(|&v| v as f64).collect())
        .collect();
    let g = images
        .iter()
        .map(|i| {
            let x = model.normalization.apply::<f32>(i);
            apply(&model.params, i.rows, i.cols, &x)
                .iter()
                .map(|&v| v as f64)
                .collect()
        })
        .collect();
    (r, g)
}

const ABLATION_ITERATIONS: usize = 500;

fn ablation() -> Outcome {
    let t = Instant::now();
    let d = DeskScene::build(SPACING).unwrap();
    let mut parts = Vec::new();
    let mut pass = true;
    for k in [2, 3, 4] {
        let images = desk_subsets(&d, k, 1);
        let cfg = TrainConfig {
            iterations: ABLATION_ITERATIONS,
            k_subsets: k,
            seed: 1,
            ..TrainConfig::default()
        };
        match train::<f32>(&images, &cfg) {
            Ok(m) => {
                let last = m.log.last().unwrap().total;
                pass &= last.is_finite() && m.params.data.iter().all(|v| v.is_finite());
                parts.push(format!("K={k} loss {:.4} -> {last:.4}", m.log[0].total));
                if k == 2 {
                    let (r, g) = network_outputs(&m, &images);
                    let a = pair_loss(&r[0], &g[0], &r[1], &g[1]);
                    let b = generalized_loss(&[&r[0], &r[1]], &[&g[0], &g[1]]);
                    let same = [
                        (a.residual, b.residual),
                        (a.consistency, b.consistency),
                        (a.total, b.total),
                    ]
                    .iter()
                    .all(|(x, y)| x.to_bits() == y.to_bits());
                    pass &= same;
                    parts.push(format!(
                        "K=2 generalized loss {} the pair loss",
                        if same { "bitwise equals" } else { "DIFFERS from" }
                    ));
                }
            }
            Err(e) => {
                pass = false;
                parts.push(format!("K={k}: {e}"));
            }
        }
    }
    outcome(
        pass,
        format!(
            "{} iterations each; {}; {:.0} s",
            ABLATION_ITERATIONS,
            parts.join(", "),
            secs(t.elapsed())
        ),
    )
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_paray"))
        .args(args)
        .env("PARAY_THREADS", "1")
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr)))
    }
}

fn cli_outputs(config: &Path, out: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let (c, o) = (config.to_str().unwrap(), out.to_str().unwrap());
    let stages: [&[&str]; 8] = [
        &["simulate"],
        &["reconstruct"],
        &["reconstruct", "--slice", "z:16"],
        &["reconstruct", "--map", "z", "--k", "32", "--subset-size", "20"],
        &["cvmap", "--slice", "z:16"],
        &["clean", "--slice", "z:16"],
        &["clean", "--map", "z"],
        &["clean", "--volume", "x"],
    ];
    for stage in stages {
        let mut args = stage.to_vec();
        args.extend(["--config", c, "--out", o]);
        run_cli(&args)?;
    }
    let reference = out.join("reference_z16");
    let clean = out.join("clean_z16");
    run_cli(&[
        "metrics",
        "--reference",
        reference.to_str().unwrap(),
        "--test",
        clean.to_str().unwrap(),
        "--out",
        o,
    ])?;
    let mut files = BTreeMap::new();
    for e in std::fs::read_dir(out).map_err(|e| e.to_string())? {
        let p = e.map_err(|e| e.to_string())?.path();
        files.insert(
            p.file_name().unwrap().to_string_lossy().into_owned(),
            std::fs::read(&p).map_err(|e| e.to_string())?,
        );
    }
    Ok(files)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = serde_json::json!({
        "phantom": {"vessel_tree": {"start_distance": 1.5, "root_length": 1.2, "root_radius": 0.2}},
        "array": {"n_elements": 64, "radius": 20.0, "sparse_elements": 32},
        "grid": {"half_extent": 1.6, "spacing": 0.1},
        "zsa2a": {"iterations": 20, "channels": 8},
        "cv": {"trials": 10},
        "seed": 5
    });
    let path = dir.path().join("config.json");
    std::fs::write(&path, config.to_string()).unwrap();
    let a = cli_outputs(&path, &dir.path().join("a"));
    let b = cli_outputs(&path, &dir.path().join("b"));
    match (a, b) {
        (Ok(a), Ok(b)) => {
            let differing: Vec<&String> = a.iter().filter(|(k, v)| b.get(*k) != Some(v)).map(|(k, _)| k).collect();
            let pass = differing.is_empty() && a.len() == b.len();
            outcome(
                pass,
                if pass {
                    format!(
                        "{} output files bitwise identical across reruns of all commands",
                        a.len()
                    )
                } else {
                    format!("differing files: {differing:?}")
                },
            )
        }
        (Err(e), _) | (_, Err(e)) => outcome(false, e),
    }
}

fn identities() -> Outcome {
    let t = Instant::now();
    let d = DeskScene::build(SPACING).unwrap();
    let images = desk_subsets(&d, 2, 2);
    let cfg = TrainConfig {
        iterations: 300,
        seed: 2,
        ..TrainConfig::default()
    };
    let model = train::<f32>(&images, &cfg).unwrap();
    let dec = remove_artifacts(&model, &d.recon).unwrap();
    let exact = dec
        .clean
        .values
        .iter()
        .zip(&dec.artifact.values)
        .zip(&d.recon.values)
        .all(|((c, a), r)| c + a == *r);

    let zero = TrainedModel {
        params: NetworkParams::zeros(model.params.channels),
        ..model.clone()
    };
    let z = remove_artifacts(&zero, &d.recon).unwrap();
    let identity = z.clean == d.recon && z.artifact.values.iter().all(|&v| v == 0.0);

    let r1 = images[0].clone();
    let same = train::<f32>(
        &[r1.clone(), r1.clone()],
        &TrainConfig {
            seed: 2,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let g = remove_artifacts(&same, &r1).unwrap().artifact;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let ratio = norm(&g.values) / norm(&r1.values);
    outcome(
        exact && identity && ratio <= 1e-2,
        format!(
            "clean + artifact = recon: {exact}; zero network identity: {identity}; identical-subset |g(r1)|/|r1| = {ratio:.2e} (limit 1e-2); {:.0} s",
            secs(t.elapsed())
        ),
    )
}

fn throughput() -> Outcome {
    let t = Instant::now();
    let d = DeskScene::build(SPACING / 2.0).unwrap();
    let setup = t.elapsed();
    let images = desk_subsets(&d, 2, 0);
    let (rows, cols) = (images[0].rows, images[0].cols);
    let t = Instant::now();
    let model = train::<f32>(&images, &TrainConfig::default());
    let elapsed = t.elapsed();
    match model {
        Ok(m) => outcome(
            (rows, cols) == (256, 256) && elapsed < Duration::from_secs(600),
            format!(
                "{rows}x{cols}, {} iterations in {:.0} s single-threaded ({:.0} ms/iteration, limit 600 s); final loss {:.4}; scene setup {:.0} s",
                m.config.iterations,
                secs(elapsed),
                1e3 * secs(elapsed) / m.config.iterations as f64,
                m.log.last().unwrap().total,
                secs(setup)
            ),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome, bool); 9] = [
        (1, "analytic gradients match finite differences", gradient_check, false),
        (2, "forward model matches the N-wave", nwave_oracle, false),
        (3, "UBP localisation and linearity", ubp_localisation, false),
        (4, "CV contrast between artifact and signal", cv_contrast, false),
        (5, "end-to-end PSNR and CNR improvement", end_to_end, true),
        (6, "subset-count ablation", ablation, true),
        (7, "bitwise determinism of the CLI", determinism, false),
        (8, "decomposition and trivial-map identities", identities, true),
        (9, "training throughput on a 256x256 slice", throughput, true),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for (n, name, f, serial) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| if serial { single_threaded(f) } else { f() }));
        let o = result.unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "[{tag}] criterion {n}: {name}; {} ({:.1} s)",
            o.detail,
            secs(t.elapsed())
        );
        if !o.pass {
            failed.push(n);
        }
    }
    println!(
        "acceptance: {}/{ran} criteria passed{}",
        ran - failed.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(", failed: {failed:?}")
        }
    );
    if !failed.is_empty() && std::env::var_os("ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
