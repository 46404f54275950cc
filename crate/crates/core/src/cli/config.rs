//! Experiment configuration: one JSON document, overridable from flags.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::forward::DEFAULT_SOUND_SPEED;
use crate::geometry::{fibonacci_sphere_array, make_grid, subsample_uniform, DetectorArray, Vec3, VolumeGrid};
use crate::image::{Axis, SliceSpec};
use crate::phantom::{PhantomSpec, VesselTreeParams};
use crate::zsa2a::TrainConfig;

/// Where the phantom comes from: a JSON file, an inline spec, or the vessel
/// generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhantomSource {
    File(PathBuf),
    Generator { vessel_tree: VesselTreeParams },
    Inline(PhantomSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    /// Elements of the full (reference) array.
    pub n_elements: usize,
    pub radius: f64,
    /// Evenly strided sparse input drawn from the full array; `None` uses
    /// every element.
    pub sparse_elements: Option<usize>,
    /// Keep only the lower half (z ≤ 0) of the sphere.
    pub hemisphere: bool,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        ArrayConfig {
            n_elements: 256,
            radius: 60.0,
            sparse_elements: Some(64),
            hemisphere: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub center: Vec3,
    pub half_extent: f64,
    pub spacing: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            center: [0.0; 3],
            half_extent: 6.4,
            spacing: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionConfig {
    pub sound_speed: f64,
    /// Defaults to half a voxel of travel per sample.
    pub dt: Option<f64>,
    /// Defaults to the shortest window covering the grid.
    pub t_count: Option<usize>,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        AcquisitionConfig {
            sound_speed: DEFAULT_SOUND_SPEED,
            dt: None,
            t_count: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    /// `AXIS:INDEX`, e.g. `z:64`.
    pub slice: Option<String>,
    /// Axis of a maximum-amplitude projection.
    pub map: Option<Axis>,
    /// Clean every plane along this axis.
    pub volume: Option<Axis>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub trials: usize,
    pub subset_size: Option<usize>,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            trials: 200,
            subset_size: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub phantom: PhantomSource,
    #[serde(default)]
    pub array: ArrayConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub acquisition: AcquisitionConfig,
    #[serde(default)]
    pub zsa2a: TrainConfig,
    /// Subset size for training; defaults to 78% of the sparse array.
    #[serde(default)]
    pub subset_size: Option<usize>,
    #[serde(default)]
    pub target: TargetConfig,
    #[serde(default)]
    pub cv: CvConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
    /// Directory relative paths are resolved against; set on load.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn config_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<ExperimentConfig> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(if path.is_empty() { "." } else { &path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.array;
        if a.n_elements == 0 {
            return Err(config_err("array.n_elements", "must be positive"));
        }
        if !(a.radius > 0.0 && a.radius.is_finite()) {
            return Err(config_err("array.radius", "must be positive"));
        }
        if let Some(k) = a.sparse_elements {
            if k == 0 || k > a.n_elements {
                return Err(config_err(
                    "array.sparse_elements",
                    format!("must be in 1..={}", a.n_elements),
                ));
            }
        }
        let g = &self.grid;
        if !(g.spacing > 0.0 && g.spacing.is_finite()) {
            return Err(config_err("grid.spacing", "must be positive"));
        }
        if !(g.half_extent > 0.0 && g.half_extent.is_finite()) {
            return Err(config_err("grid.half_extent", "must be positive"));
        }
        if g.half_extent >= a.radius {
            return Err(config_err(
                "grid.half_extent",
                "the grid must lie inside the detector sphere",
            ));
        }
        if !(self.acquisition.sound_speed > 0.0 && self.acquisition.sound_speed.is_finite()) {
            return Err(config_err("acquisition.sound_speed", "must be positive"));
        }
        if let Some(dt) = self.acquisition.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(config_err("acquisition.dt", "must be positive"));
            }
        }
        self.zsa2a.validate().map_err(|e| config_err("zsa2a", e.to_string()))?;
        if self.cv.trials < 2 {
            return Err(config_err("cv.trials", "need at least 2 trials"));
        }
        if let Some(s) = &self.target.slice {
            s.parse::<SliceSpec>()
                .map_err(|e| config_err("target.slice", e.to_string()))?;
        }
        let set = [
            self.target.slice.is_some(),
            self.target.map.is_some(),
            self.target.volume.is_some(),
        ];
        if set.iter().filter(|&&b| b).count() > 1 {
            return Err(config_err("target", "choose at most one of slice, map and volume"));
        }
        if let PhantomSource::Inline(spec) = &self.phantom {
            spec.validate().map_err(|e| config_err("phantom", e.to_string()))?;
        }
        if let Some(t) = self.threads {
            if t == 0 {
                return Err(config_err("threads", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn phantom_spec(&self) -> Result<PhantomSpec> {
        let spec = self.phantom_source()?;
        spec.validate().map_err(|e| config_err("phantom", e.to_string()))?;
        Ok(spec)
    }

    fn phantom_source(&self) -> Result<PhantomSpec> {
        match &self.phantom {
            PhantomSource::Inline(spec) => Ok(spec.clone()),
            PhantomSource::Generator { vessel_tree } => Ok(vessel_tree.generate()),
            PhantomSource::File(p) => {
                let path = self.resolve(p);
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let de = &mut serde_json::Deserializer::from_str(&text);
                let src: PhantomSource = serde_path_to_error::deserialize(de)
                    .map_err(|e| config_err(&format!("phantom ({})", path.display()), e.into_inner().to_string()))?;
                match src {
                    PhantomSource::File(_) => Err(config_err("phantom", "a phantom file cannot point to another file")),
                    PhantomSource::Generator { vessel_tree } => Ok(vessel_tree.generate()),
                    PhantomSource::Inline(spec) => Ok(spec),
                }
            }
        }
    }

    pub fn grid(&self) -> Result<VolumeGrid> {
        make_grid(self.grid.center, self.grid.half_extent, self.grid.spacing)
            .map_err(|e| config_err("grid", e.to_string()))
    }

    /// The full array used for simulation and reference images.
    pub fn full_array(&self) -> Result<DetectorArray> {
        let a = fibonacci_sphere_array(self.array.n_elements, self.array.radius)?;
        Ok(if self.array.hemisphere { a.lower_hemisphere() } else { a })
    }

    /// Indices of the sparse input within the full array.
    pub fn sparse_indices(&self, full: &DetectorArray) -> Result<Vec<usize>> {
        match self.array.sparse_elements {
            None => Ok((0..full.len()).collect()),
            Some(k) if k > full.len() => Err(config_err(
                "array.sparse_elements",
                format!("{k} exceeds the {} available elements", full.len()),
            )),
            Some(k) => Ok(crate::geometry::uniform_indices(full.len(), k)),
        }
    }

    /// Evenly strided sparse array with the patch area rescaled.
    pub fn sparse_array(&self, full: &DetectorArray) -> Result<DetectorArray> {
        match self.array.sparse_elements {
            None => Ok(full.clone()),
            Some(k) => subsample_uniform(full, k),
        }
    }

    pub fn default_subset_size(n: usize) -> usize {
        ((0.78 * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1))
    }
}
