//! Zero-shot sparse-view artifact removal.
//!
//! Reconstructions from a few random detector subsets share the true
//! structures but carry different streaks. A small network `g` is trained on
//! those reconstructions alone to predict the artifact component, and the
//! trained network is then applied to the reconstruction from all available
//! detectors: `clean = recon − g(recon)`.

pub mod adam;
pub mod gemm;
pub mod loss;
pub mod network;
pub mod real;
pub mod simd;
pub mod winograd;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::RawPAData;
use crate::geometry::{DetectorArray, VolumeGrid};
use crate::image::{Axis, Image2D, SliceSpec, Volume};
use crate::perturb::{random_subset, subset_raw, SubsetIndices};
use crate::ubp::{reconstruct, reconstruct_image, ImageTarget};

pub use adam::{step_lr, Adam};
pub use loss::{generalized_loss, loss_gradient, pair_loss, LossTerms};
pub use network::{apply, init_network, parameter_count, Engine, NetworkParams};
pub use real::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr: f64,
    pub step_size: usize,
    pub gamma: f64,
    pub k_subsets: usize,
    pub channels: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 3000,
            lr: 0.01,
            step_size: 1000,
            gamma: 0.6,
            k_subsets: 2,
            channels: 48,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.step_size == 0 {
            return bad("step_size must be positive".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if self.k_subsets < 2 {
            return bad(format!("need at least 2 subsets, got {}", self.k_subsets));
        }
        if self.channels == 0 {
            return bad("channels must be positive".into());
        }
        Ok(())
    }
}

/// Joint intensity normalisation of the training images. Both numbers are
/// `f32`-representable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Normalization {
    pub fn fit(images: &[&Image2D]) -> Normalization {
        let n: usize = images.iter().map(|i| i.len()).sum();
        let mean = images.iter().flat_map(|i| &i.values).sum::<f64>() / n as f64;
        let var = images
            .iter()
            .flat_map(|i| &i.values)
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n as f64;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Normalization {
            mean: mean as f32 as f64,
            std: std as f32 as f64,
        }
    }

    pub fn apply<T: Real>(&self, image: &Image2D) -> Vec<T> {
        image
            .values
            .iter()
            .map(|v| T::lit((v - self.mean) / self.std))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub lr: f64,
    pub residual: f64,
    pub consistency: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel<T> {
    pub params: NetworkParams<T>,
    pub normalization: Normalization,
    pub config: TrainConfig,
    pub rows: usize,
    pub cols: usize,
    /// One record per iteration (before its update) and a final record at
    /// `iteration == config.iterations`.
    pub log: Vec<LossRecord>,
}

/// Loss and gradient of the network over a fixed set of normalised images.
pub struct Objective<T> {
    engine: Engine<T>,
    inputs: Vec<Vec<T>>,
    r: Vec<Vec<f64>>,
    g: Vec<Vec<f64>>,
    dg: Vec<Vec<f64>>,
    out: Vec<T>,
    dy: Vec<T>,
}

impl<T: Real> Objective<T> {
    pub fn new(inputs: Vec<Vec<T>>, rows: usize, cols: usize, channels: usize) -> Self {
        let k = inputs.len();
        let n = rows * cols;
        assert!(
            k >= 2 && inputs.iter().all(|x| x.len() == n),
            "need >= 2 images of {rows}x{cols}"
        );
        let r = inputs.iter().map(|x| x.iter().map(|v| v.as_f64()).collect()).collect();
        Objective {
            engine: Engine::new(rows, cols, channels, k),
            inputs,
            r,
            g: vec![vec![0.0; n]; k],
            dg: vec![vec![0.0; n]; k],
            out: vec![T::zero(); n],
            dy: vec![T::zero(); n],
        }
    }

    fn run_forward(&mut self, params: &NetworkParams<T>) -> LossTerms {
        self.engine.load(params);
        for i in 0..self.inputs.len() {
            self.engine.forward(params, i, &self.inputs[i], &mut self.out);
            for (g, o) in self.g[i].iter_mut().zip(&self.out) {
                *g = o.as_f64();
            }
        }
        let r: Vec<&[f64]> = self.r.iter().map(|v| &v[..]).collect();
        let g: Vec<&[f64]> = self.g.iter().map(|v| &v[..]).collect();
        generalized_loss(&r, &g)
    }

    pub fn loss(&mut self, params: &NetworkParams<T>) -> LossTerms {
        self.run_forward(params)
    }

    /// Loss, with its gradient written to `grad`.
    pub fn loss_and_gradient(&mut self, params: &NetworkParams<T>, grad: &mut NetworkParams<T>) -> LossTerms {
        let terms = self.run_forward(params);
        {
            let r: Vec<&[f64]> = self.r.iter().map(|v| &v[..]).collect();
            let g: Vec<&[f64]> = self.g.iter().map(|v| &v[..]).collect();
            loss_gradient(&r, &g, &mut self.dg);
        }
        self.engine.begin_backward(grad);
        for i in 0..self.inputs.len() {
            for (d, &v) in self.dy.iter_mut().zip(&self.dg[i]) {
                *d = T::lit(v);
            }
            self.engine.backward(params, i, &self.dy, grad);
        }
        self.engine.end_backward(grad);
        terms
    }
}

fn check_images(images: &[Image2D]) -> Result<(usize, usize)> {
    let first = images.first().ok_or_else(|| Error::invalid("no training images"))?;
    if images.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 training images, got {}",
            images.len()
        )));
    }
    if images.iter().any(|i| !i.same_shape(first)) {
        return Err(Error::invalid("training images differ in shape"));
    }
    if images.iter().flat_map(|i| &i.values).any(|v| !v.is_finite()) {
        return Err(Error::invalid("training images contain non-finite values"));
    }
    Ok((first.rows, first.cols))
}

/// Train a fresh network on subset reconstructions.
pub fn train<T: Real>(images: &[Image2D], config: &TrainConfig) -> Result<TrainedModel<T>> {
    config.validate()?;
    let (rows, cols) = check_images(images)?;
    let normalization = Normalization::fit(&images.iter().collect::<Vec<_>>());
    let inputs = images.iter().map(|i| normalization.apply::<T>(i)).collect();
    let mut objective = Objective::new(inputs, rows, cols, config.channels);
    let mut params: NetworkParams<T> = init_network(config.channels, config.seed);
    let mut grad = NetworkParams::zeros(config.channels);
    let mut adam = Adam::new(params.len());
    let mut log = Vec::with_capacity(config.iterations + 1);
    let record = |iteration: usize, t: LossTerms| -> Result<LossRecord> {
        if !t.total.is_finite() {
            return Err(Error::TrainingDiverged {
                iteration,
                loss: t.total,
            });
        }
        Ok(LossRecord {
            iteration,
            lr: step_lr(config.lr, config.step_size, config.gamma, iteration),
            residual: t.residual,
            consistency: t.consistency,
            total: t.total,
        })
    };
    for it in 0..config.iterations {
        let terms = objective.loss_and_gradient(&params, &mut grad);
        let rec = record(it, terms)?;
        adam.step(&mut params.data, &grad.data, rec.lr);
        log.push(rec);
        if it % 500 == 0 {
            log::debug!("iteration {it}: loss {:.6e}", rec.total);
        }
    }
    log.push(record(config.iterations, objective.loss(&params))?);
    Ok(TrainedModel {
        params,
        normalization,
        config: config.clone(),
        rows,
        cols,
        log,
    })
}

/// Artifact estimate and cleaned image.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub clean: Image2D,
    pub artifact: Image2D,
}

/// Split `recon` into `clean + artifact` with the trained network.
///
/// The artifact is computed at `f32` precision. When `recon` holds
/// `f32`-representable values (every reconstruction produced by this crate
/// does), `clean + artifact == recon` holds exactly: the subtraction of two
/// `f32` values whose exponents differ by at most 29 is exact in `f64`, and
/// artifact values smaller than `2⁻²⁹·|recon|` are below the precision of the
/// input and are dropped.
pub fn remove_artifacts<T: Real>(model: &TrainedModel<T>, recon: &Image2D) -> Result<Decomposition> {
    if recon.rows != model.rows || recon.cols != model.cols {
        return Err(Error::invalid(format!(
            "network trained on {}x{} images, got {}x{}",
            model.rows, model.cols, recon.rows, recon.cols
        )));
    }
    let x = model.normalization.apply::<T>(recon);
    let g = apply(&model.params, recon.rows, recon.cols, &x);
    let std = model.normalization.std as f32;
    let tiny = 2f64.powi(-29);
    let artifact: Vec<f64> = g
        .iter()
        .zip(&recon.values)
        .map(|(gv, &r)| {
            let a = (gv.as_f64() as f32 * std) as f64;
            if a.abs() < tiny * r.abs() {
                0.0
            } else {
                a
            }
        })
        .collect();
    let clean = recon.values.iter().zip(&artifact).map(|(r, a)| r - a).collect();
    Ok(Decomposition {
        clean: Image2D {
            values: clean,
            ..recon.clone()
        },
        artifact: Image2D {
            values: artifact,
            ..recon.clone()
        },
    })
}

/// Seeds for the `k` training subsets, from a stream separate from the
/// network initialisation.
pub fn subset_seeds(master: u64, k: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(1);
    (0..k).map(|_| rng.next_u64()).collect()
}

/// What to clean.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CleanTarget {
    Image(ImageTarget),
    /// Every plane along the axis, each with its own network.
    Volume(Axis),
}

#[derive(Clone, Debug)]
pub struct ImageRun {
    pub recon: Image2D,
    pub clean: Image2D,
    pub artifact: Image2D,
    pub subsets: Vec<SubsetIndices>,
    pub model: TrainedModel<f32>,
}

#[derive(Clone, Debug)]
pub struct VolumeRun {
    pub axis: Axis,
    pub recon: Volume,
    pub clean: Volume,
    pub artifact: Volume,
    pub subsets: Vec<SubsetIndices>,
    /// Per-plane loss logs, indexed by plane.
    pub logs: Vec<Vec<LossRecord>>,
}

#[derive(Clone, Debug)]
pub enum ZsOutput {
    Image(ImageRun),
    Volume(VolumeRun),
}

/// Full pipeline: draw `k` subsets of size `m`, reconstruct them, train, and
/// clean the reconstruction from all elements of `array`.
pub fn run_zsa2a(
    raw: &RawPAData,
    array: &DetectorArray,
    grid: &VolumeGrid,
    target: CleanTarget,
    m: usize,
    config: &TrainConfig,
) -> Result<ZsOutput> {
    config.validate()?;
    if m == 0 || m >= array.len() {
        return Err(Error::invalid(format!(
            "subset size {m} must be in 1..{} (fewer than the available elements)",
            array.len()
        )));
    }
    let subsets: Vec<SubsetIndices> = subset_seeds(config.seed, config.k_subsets)
        .into_iter()
        .map(|s| random_subset(array.len(), m, s))
        .collect::<Result<_>>()?;
    let subset_data: Vec<(RawPAData, DetectorArray)> = subsets
        .iter()
        .map(|s| subset_raw(raw, array, s))
        .collect::<Result<_>>()?;

    match target {
        CleanTarget::Image(it) => {
            let images: Vec<Image2D> = subset_data
                .iter()
                .map(|(r, a)| reconstruct_image(r, a, grid, it))
                .collect::<Result<_>>()?;
            let model = train::<f32>(&images, config)?;
            let recon = reconstruct_image(raw, array, grid, it)?;
            let Decomposition { clean, artifact } = remove_artifacts(&model, &recon)?;
            Ok(ZsOutput::Image(ImageRun {
                recon,
                clean,
                artifact,
                subsets,
                model,
            }))
        }
        CleanTarget::Volume(axis) => {
            let vols: Vec<Volume> = subset_data
                .iter()
                .map(|(r, a)| reconstruct(r, a, grid))
                .collect::<Result<_>>()?;
            let recon = reconstruct(raw, array, grid)?;
            let planes = grid.dims[axis.index()];
            let done = std::sync::atomic::AtomicUsize::new(0);
            let results: Vec<(Decomposition, Vec<LossRecord>)> = (0..planes)
                .into_par_iter()
                .map(|index| -> Result<_> {
                    let s = SliceSpec { axis, index };
                    let images: Vec<Image2D> = vols.iter().map(|v| v.plane(s)).collect::<Result<_>>()?;
                    let cfg = TrainConfig {
                        seed: config.seed ^ index as u64,
                        ..config.clone()
                    };
                    let model = train::<f32>(&images, &cfg)?;
                    let d = remove_artifacts(&model, &recon.plane(s)?)?;
                    let n = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
                    log::info!("cleaned plane {index} ({n}/{planes})");
                    Ok((d, model.log))
                })
                .collect::<Result<_>>()?;
            let mut clean = Volume::zeros(*grid);
            let mut artifact = Volume::zeros(*grid);
            let mut logs = Vec::with_capacity(planes);
            for (index, (d, log)) in results.into_iter().enumerate() {
                let s = SliceSpec { axis, index };
                clean.set_plane(s, &d.clean)?;
                artifact.set_plane(s, &d.artifact)?;
                logs.push(log);
            }
            Ok(ZsOutput::Volume(VolumeRun {
                axis,
                recon,
                clean,
                artifact,
                subsets,
                logs,
            }))
        }
    }
}
