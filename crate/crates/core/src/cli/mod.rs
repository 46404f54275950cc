//! `paray` command line: simulate, reconstruct, cvmap, clean, metrics.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error,
//! 3 precondition or invalid input, 4 training diverged.

pub mod config;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::forward::{default_dt, required_samples, simulate_signals, RawPAData};
use crate::geometry::DetectorArray;
use crate::image::{Axis, Image2D, SliceSpec, Volume};
use crate::io;
use crate::metrics::{cnr, default_masks, normalized_mse, psnr, MetricsReport};
use crate::perturb::{cv_analysis, random_subset, subset_raw, CvTarget};
use crate::phantom::rasterize_phantom;
use crate::ubp::{map_projection, reconstruct, reconstruct_image, ImageTarget};
use crate::zsa2a::{run_zsa2a, CleanTarget, ZsOutput};

pub use config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(
    name = "paray",
    version,
    about = "Sparse-view photoacoustic reconstruction and artifact removal"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, env = "PARAY_THREADS")]
    pub threads: Option<usize>,

    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Default, Clone)]
pub struct TargetArgs {
    /// Reconstruct one plane, e.g. `z:64`.
    #[arg(long, value_name = "AXIS:INDEX")]
    pub slice: Option<String>,

    /// Maximum-amplitude projection along an axis.
    #[arg(long, value_name = "AXIS", conflicts_with = "slice")]
    pub map: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rasterize the phantom and simulate traces on the full array.
    Simulate,
    /// Back-project simulated traces.
    Reconstruct {
        #[command(flatten)]
        target: TargetArgs,
        /// Use an evenly strided subset of this many elements.
        #[arg(long)]
        k: Option<usize>,
        /// Then keep a random subset of this many elements (uses --seed).
        #[arg(long)]
        subset_size: Option<usize>,
        /// Output stem inside the output directory.
        #[arg(long)]
        name: Option<String>,
    },
    /// Coefficient-of-variation map over random subsets of the sparse array.
    Cvmap {
        #[command(flatten)]
        target: TargetArgs,
        /// Number of random subsets; overrides `cv.trials`.
        #[arg(long)]
        trials: Option<usize>,
        /// Elements per subset; defaults to 78% of the sparse array.
        #[arg(long)]
        subset_size: Option<usize>,
    },
    /// Train on subset reconstructions and clean the sparse reconstruction.
    Clean {
        #[command(flatten)]
        target: TargetArgs,
        /// Clean every plane along this axis instead of one image.
        #[arg(long, value_name = "AXIS", conflicts_with_all = ["slice", "map"])]
        volume: Option<String>,
        /// Elements per training subset; defaults to 78% of the sparse array.
        #[arg(long)]
        subset_size: Option<usize>,
        /// Training iterations; overrides `zsa2a.iterations`.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Compare two saved images.
    Metrics {
        /// Reference image stem (without extension).
        #[arg(long)]
        reference: PathBuf,
        /// Test image stem.
        #[arg(long)]
        test: PathBuf,
        /// Ground-truth image stem for signal/background masks.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::Json { .. } => 2,
        Error::InvalidArgument(_) | Error::Precondition(_) | Error::UndefinedMetric(_) => 3,
        Error::TrainingDiverged { .. } => 4,
        Error::Io { .. } => 1,
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn config_error(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| config_error("--config", "this command needs --config"))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
        cfg.base_dir = PathBuf::new();
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    Ok(cfg)
}

fn init_threads(n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        if n == 0 {
            return Err(config_error("--threads", "must be positive"));
        }
        // A global pool can only be built once per process; later calls in
        // the same process keep the first size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn parse_target(args: &TargetArgs, cfg: &ExperimentConfig, grid_dims: [usize; 3]) -> Result<ImageTarget> {
    if let Some(s) = &args.slice {
        return Ok(ImageTarget::Slice(
            s.parse().map_err(|e: Error| config_error("--slice", e.to_string()))?,
        ));
    }
    if let Some(a) = &args.map {
        return Ok(ImageTarget::Map(
            a.parse().map_err(|e: Error| config_error("--map", e.to_string()))?,
        ));
    }
    if let Some(s) = &cfg.target.slice {
        return Ok(ImageTarget::Slice(s.parse()?));
    }
    if let Some(a) = cfg.target.map {
        return Ok(ImageTarget::Map(a));
    }
    Ok(ImageTarget::Slice(SliceSpec {
        axis: Axis::Z,
        index: grid_dims[2] / 2,
    }))
}

fn target_tag(t: ImageTarget) -> String {
    match t {
        ImageTarget::Slice(s) => format!("{}{}", s.axis, s.index),
        ImageTarget::Map(a) => format!("map{a}"),
    }
}

fn target_info(t: ImageTarget) -> Value {
    match t {
        ImageTarget::Slice(s) => json!({"slice": s.to_string()}),
        ImageTarget::Map(a) => json!({"map": a.to_string()}),
    }
}

struct Acquired {
    raw: RawPAData,
    array: DetectorArray,
}

fn load_acquired(out: &Path) -> Result<Acquired> {
    let raw = io::load_raw(&out.join("raw")).map_err(|e| {
        Error::precondition(format!(
            "no simulated data in {} ({e}); run `simulate` first",
            out.display()
        ))
    })?;
    let array: DetectorArray = io::read_json(&out.join("array.json"))?;
    if array.len() != raw.n_channels {
        return Err(Error::precondition("array.json does not match the raw data"));
    }
    Ok(Acquired { raw, array })
}

fn sparse(cfg: &ExperimentConfig, acq: &Acquired) -> Result<(RawPAData, DetectorArray)> {
    let idx = cfg.sparse_indices(&acq.array)?;
    Ok((acq.raw.select_channels(&idx)?, cfg.sparse_array(&acq.array)?))
}

fn truth_image(out: &Path, target: ImageTarget) -> Result<Option<Image2D>> {
    let stem = out.join("truth");
    if !io::with_ext(&stem, "json").exists() {
        return Ok(None);
    }
    let vol = io::load_volume(&stem)?;
    Ok(Some(match target {
        ImageTarget::Slice(s) => vol.plane(s)?,
        ImageTarget::Map(a) => map_projection(&vol, a),
    }))
}

fn info(pairs: Value) -> Map<String, Value> {
    match pairs {
        Value::Object(m) => m,
        _ => Map::new(),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn execute(cli: &Cli) -> Result<()> {
    if let Command::Metrics { reference, test, truth } = &cli.command {
        init_threads(cli.threads)?;
        return cmd_metrics(cli, reference, test, truth.as_deref());
    }
    let cfg = load_config(cli)?;
    init_threads(cfg.threads)?;
    let out = cfg.output_dir();
    ensure_dir(&out)?;
    let started = Instant::now();
    match &cli.command {
        Command::Simulate => cmd_simulate(&cfg, &out)?,
        Command::Reconstruct {
            target,
            k,
            subset_size,
            name,
        } => cmd_reconstruct(&cfg, &out, target, *k, *subset_size, name.as_deref())?,
        Command::Cvmap {
            target,
            trials,
            subset_size,
        } => cmd_cvmap(&cfg, &out, target, *trials, *subset_size)?,
        Command::Clean {
            target,
            volume,
            subset_size,
            iterations,
        } => cmd_clean(&cfg, &out, target, volume.as_deref(), *subset_size, *iterations)?,
        Command::Metrics { .. } => unreachable!("handled above"),
    }
    log::info!("done in {:.1} s", started.elapsed().as_secs_f64());
    Ok(())
}

fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let grid = cfg.grid()?;
    let array = cfg.full_array()?;
    let spec = cfg.phantom_spec()?;
    let source = rasterize_phantom(&spec, &grid);
    let c = cfg.acquisition.sound_speed;
    let dt = cfg.acquisition.dt.unwrap_or_else(|| default_dt(grid.spacing, c));
    let t_count = cfg
        .acquisition
        .t_count
        .unwrap_or_else(|| required_samples(&array, &grid, dt, c));
    log::info!(
        "simulating {} elements x {} samples, {} source voxels",
        array.len(),
        t_count,
        source.values.iter().filter(|&&v| v != 0.0).count()
    );
    let raw = simulate_signals(&source, &array, dt, t_count, c)?;
    io::save_raw(&out.join("raw"), &raw)?;
    io::write_json(&out.join("array.json"), &array)?;
    io::write_json(&out.join("phantom.json"), &spec)?;
    io::save_volume(&out.join("truth"), &source)?;
    Ok(())
}

fn cmd_reconstruct(
    cfg: &ExperimentConfig,
    out: &Path,
    target: &TargetArgs,
    k: Option<usize>,
    subset_size: Option<usize>,
    name: Option<&str>,
) -> Result<()> {
    let grid = cfg.grid()?;
    let acq = load_acquired(out)?;
    let (mut raw, mut array, mut tag) = (acq.raw.clone(), acq.array.clone(), format!("n{}", acq.array.len()));
    if let Some(k) = k {
        let idx = crate::geometry::uniform_indices(array.len(), k);
        if k == 0 || k > array.len() {
            return Err(config_error("--k", format!("must be in 1..={}", array.len())));
        }
        raw = raw.select_channels(&idx)?;
        array = crate::geometry::subsample_uniform(&array, k)?;
        tag = format!("k{k}");
    }
    if let Some(m) = subset_size {
        let s = random_subset(array.len(), m, cfg.seed)?;
        (raw, array) = subset_raw(&raw, &array, &s)?;
        tag = format!("{tag}_m{m}_s{}", cfg.seed);
    }
    let volume_mode = target.slice.is_none() && target.map.is_none();
    if volume_mode {
        let vol = reconstruct(&raw, &array, &grid)?;
        let stem = out.join(name.map(str::to_string).unwrap_or(format!("recon_{tag}")));
        io::save_volume(&stem, &vol)?;
    } else {
        let t = parse_target(target, cfg, grid.dims)?;
        let img = reconstruct_image(&raw, &array, &grid, t)?;
        let stem = out.join(
            name.map(str::to_string)
                .unwrap_or(format!("recon_{tag}_{}", target_tag(t))),
        );
        let mut meta = info(target_info(t));
        meta.insert("elements".into(), json!(array.len()));
        io::save_image(&stem, &img, meta)?;
    }
    Ok(())
}

fn cmd_cvmap(
    cfg: &ExperimentConfig,
    out: &Path,
    target: &TargetArgs,
    trials: Option<usize>,
    subset_size: Option<usize>,
) -> Result<()> {
    let grid = cfg.grid()?;
    let acq = load_acquired(out)?;
    let (raw, array) = sparse(cfg, &acq)?;
    let t = parse_target(target, cfg, grid.dims)?;
    let trials = trials.unwrap_or(cfg.cv.trials);
    let m = subset_size
        .or(cfg.cv.subset_size)
        .or(cfg.subset_size)
        .unwrap_or_else(|| ExperimentConfig::default_subset_size(array.len()));
    log::info!("CV over {trials} subsets of {m}/{} elements, {t}", array.len());
    let cv = cv_analysis(&raw, &array, &grid, CvTarget::Image(t), m, trials, cfg.seed)?;
    io::save_cv_map(&out.join(format!("cv_{}", target_tag(t))), &cv)
}

fn cmd_clean(
    cfg: &ExperimentConfig,
    out: &Path,
    target: &TargetArgs,
    volume: Option<&str>,
    subset_size: Option<usize>,
    iterations: Option<usize>,
) -> Result<()> {
    let grid = cfg.grid()?;
    let acq = load_acquired(out)?;
    let (raw, array) = sparse(cfg, &acq)?;
    let mut train = cfg.zsa2a.clone();
    train.seed = cfg.seed;
    if let Some(it) = iterations {
        train.iterations = it;
    }
    train.validate().map_err(|e| config_error("zsa2a", e.to_string()))?;
    let m = subset_size
        .or(cfg.subset_size)
        .unwrap_or_else(|| ExperimentConfig::default_subset_size(array.len()));
    let volume_axis = match volume {
        Some(a) => Some(a.parse::<Axis>().map_err(|e| config_error("--volume", e.to_string()))?),
        None if target.slice.is_none() && target.map.is_none() => cfg.target.volume,
        None => None,
    };
    let clean_target = match volume_axis {
        Some(a) => CleanTarget::Volume(a),
        None => CleanTarget::Image(parse_target(target, cfg, grid.dims)?),
    };
    log::info!(
        "training on {} subsets of {m}/{} elements for {} iterations",
        train.k_subsets,
        array.len(),
        train.iterations
    );
    let started = Instant::now();
    let result = run_zsa2a(&raw, &array, &grid, clean_target, m, &train)?;
    log::info!("zero-shot run took {:.1} s", started.elapsed().as_secs_f64());

    match result {
        ZsOutput::Image(run) => {
            let t = match clean_target {
                CleanTarget::Image(t) => t,
                CleanTarget::Volume(_) => unreachable!(),
            };
            let tag = target_tag(t);
            let meta = |what: &str| {
                let mut m = info(target_info(t));
                m.insert("kind".into(), json!(what));
                m.insert("elements".into(), json!(array.len()));
                m
            };
            io::save_image(&out.join(format!("sparse_{tag}")), &run.recon, meta("sparse"))?;
            io::save_image(&out.join(format!("clean_{tag}")), &run.clean, meta("clean"))?;
            io::save_image(&out.join(format!("artifact_{tag}")), &run.artifact, meta("artifact"))?;
            io::save_model(&out.join(format!("model_{tag}")), &run.model)?;
            io::write_loss_log(&out.join(format!("loss_{tag}.csv")), &run.model.log)?;
            io::write_json(&out.join(format!("subsets_{tag}.json")), &run.subsets)?;

            // Metrics against the full-array image when available.
            let reference = reconstruct_image(&acq.raw, &acq.array, &grid, t)?;
            io::save_image(&out.join(format!("reference_{tag}")), &reference, meta("reference"))?;
            let truth = truth_image(out, t)?;
            let mut reports = Vec::new();
            for (id, img) in [
                (format!("sparse_{tag}"), &run.recon),
                (format!("clean_{tag}"), &run.clean),
            ] {
                reports.push(report(
                    &format!("reference_{tag}"),
                    &id,
                    &reference,
                    img,
                    truth.as_ref(),
                )?);
            }
            io::write_json(&out.join(format!("metrics_{tag}.json")), &reports)?;
            for r in &reports {
                r.append_csv(&out.join("results.csv"))?;
                let show = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
                log::info!("{}: PSNR {} dB, CNR {}", r.test_id, show(r.psnr_db), show(r.cnr));
            }
        }
        ZsOutput::Volume(run) => {
            let tag = format!("vol{}", run.axis);
            io::save_volume(&out.join(format!("sparse_{tag}")), &run.recon)?;
            io::save_volume(&out.join(format!("clean_{tag}")), &run.clean)?;
            io::save_volume(&out.join(format!("artifact_{tag}")), &run.artifact)?;
            io::write_json(&out.join(format!("subsets_{tag}.json")), &run.subsets)?;
            for (i, log) in run.logs.iter().enumerate() {
                io::write_loss_log(&out.join(format!("loss_{tag}_{i:04}.csv")), log)?;
            }
            let map_axis = run.axis;
            let maps: [(&str, &Volume); 2] = [("sparse", &run.recon), ("clean", &run.clean)];
            for (what, v) in maps {
                let mut m = Map::new();
                m.insert("map".into(), json!(map_axis.to_string()));
                io::save_image(&out.join(format!("{what}_{tag}_map")), &map_projection(v, map_axis), m)?;
            }
        }
    }
    Ok(())
}

fn report(
    ref_id: &str,
    test_id: &str,
    reference: &Image2D,
    test: &Image2D,
    truth: Option<&Image2D>,
) -> Result<MetricsReport> {
    let psnr_db = Some(psnr(reference, test)?);
    let mse = Some(normalized_mse(reference, test)?);
    let cnr = match truth {
        Some(t) => {
            let (s, b) = default_masks(t)?;
            Some(cnr(test, &s, &b)?)
        }
        None => None,
    };
    Ok(MetricsReport {
        reference_id: ref_id.into(),
        test_id: test_id.into(),
        psnr_db,
        cnr,
        mse,
    })
}

fn cmd_metrics(cli: &Cli, reference: &Path, test: &Path, truth: Option<&Path>) -> Result<()> {
    let r = io::load_image(reference)?;
    let t = io::load_image(test)?;
    let truth = truth.map(io::load_image).transpose()?;
    let id = |p: &Path| {
        p.file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    let rep = report(&id(reference), &id(test), &r, &t, truth.as_ref())?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    ensure_dir(&out)?;
    io::write_json(&out.join(format!("metrics_{}.json", id(test))), &rep)?;
    rep.append_csv(&out.join("results.csv"))?;
    println!("{}", serde_json::to_string(&rep).map_err(|e| Error::json("report", e))?);
    Ok(())
}
