//! Run configuration.
//!
//! Loaded from TOML whose keys mirror [`PipelineConfig`] field names; missing
//! keys take defaults, unknown keys are rejected. Command-line values are
//! layered on top with [`Overrides::apply`], giving flag > file > default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::GenParams;
use crate::dataset_io::{ClassMap, Layout};
use crate::prompting::DEFAULT_CLASS_WEIGHT;
use crate::visual_prior::EdgeParams;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config field `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resolution {
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub d1: bool,
    pub d2: bool,
}

impl std::str::FromStr for Paths {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "d1" => Ok(Paths { d1: true, d2: false }),
            "d2" => Ok(Paths { d1: false, d2: true }),
            "both" => Ok(Paths { d1: true, d2: true }),
            other => Err(format!("unknown paths {other:?} (expected d1, d2 or both)")),
        }
    }
}

/// Where the image-side structure prior comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImagePriorSource {
    /// Local edge detector.
    Edges,
    /// The backend's `/v1/prior` line-art endpoint.
    Backend,
}

/// `"voc"`, `"binary:<class name>"`, or an explicit table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassMapSetting {
    Preset(String),
    Explicit(ClassMap),
}

impl ClassMapSetting {
    pub fn resolve(&self) -> Result<ClassMap, ConfigError> {
        match self {
            ClassMapSetting::Explicit(map) => Ok(map.clone()),
            ClassMapSetting::Preset(name) if name == "voc" => Ok(ClassMap::voc()),
            ClassMapSetting::Preset(name) => match name.strip_prefix("binary:") {
                Some(fg) if !fg.trim().is_empty() => Ok(ClassMap::binary(fg.trim())),
                _ => Err(invalid(
                    "dataset.class_map",
                    format!("unknown preset {name:?} (expected \"voc\" or \"binary:<name>\")"),
                )),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub layout: Layout,
    pub class_map: ClassMapSetting,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            layout: Layout::VocIndexed,
            class_map: ClassMapSetting::Preset("voc".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Weight of the image-derived prior in the blend.
    pub alpha: f64,
    pub class_weight: f64,
    pub boundary_width: u32,
    pub edge_params: EdgeParams,
    pub inpaint_dilation_radius: u32,
    pub gen_params: GenParams,
    pub gen_resolution: Resolution,
    pub run_seed: u64,
    pub paths: Paths,
    pub parallelism: usize,
    pub variants_per_image: u32,
    pub negative_prompt: Option<String>,
    pub use_backend_captions: bool,
    pub image_prior: ImagePriorSource,
    /// `"mock"` or a worker base URL.
    pub backend: String,
    pub data_root: Option<PathBuf>,
    pub out_root: Option<PathBuf>,
    pub dataset: DatasetConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            class_weight: DEFAULT_CLASS_WEIGHT,
            boundary_width: 2,
            edge_params: EdgeParams::default(),
            inpaint_dilation_radius: 8,
            gen_params: GenParams::default(),
            gen_resolution: Resolution {
                width: 1024,
                height: 1024,
            },
            run_seed: 0,
            paths: Paths { d1: true, d2: true },
            parallelism: 2,
            variants_per_image: 1,
            negative_prompt: None,
            use_backend_captions: true,
            image_prior: ImagePriorSource::Edges,
            backend: "mock".into(),
            data_root: None,
            out_root: None,
            dataset: DatasetConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid("alpha", format!("{} is outside [0, 1]", self.alpha)));
        }
        if !(self.class_weight.is_finite() && self.class_weight >= 1.0) {
            return Err(invalid("class_weight", format!("{} must be >= 1", self.class_weight)));
        }
        if self.boundary_width == 0 {
            return Err(invalid("boundary_width", "must be at least 1"));
        }
        self.edge_params
            .validate()
            .map_err(|e| invalid("edge_params", e.to_string()))?;
        let g = &self.gen_params;
        if !(g.strength > 0.0 && g.strength <= 1.0) {
            return Err(invalid("gen_params.strength", format!("{} is outside (0, 1]", g.strength)));
        }
        if g.steps == 0 {
            return Err(invalid("gen_params.steps", "must be positive"));
        }
        if g.guidance_scale.is_nan() || g.guidance_scale <= 0.0 {
            return Err(invalid("gen_params.guidance_scale", "must be positive"));
        }
        let r = self.gen_resolution;
        if r.width == 0 || r.height == 0 || r.width % 8 != 0 || r.height % 8 != 0 {
            return Err(invalid(
                "gen_resolution",
                format!("{}x{} must be positive multiples of 8", r.width, r.height),
            ));
        }
        if !(self.paths.d1 || self.paths.d2) {
            return Err(invalid("paths", "at least one of d1, d2 must be enabled"));
        }
        if self.parallelism == 0 {
            return Err(invalid("parallelism", "must be at least 1"));
        }
        if self.variants_per_image == 0 {
            return Err(invalid("variants_per_image", "must be at least 1"));
        }
        if self.backend.trim().is_empty() {
            return Err(invalid("backend", "must be \"mock\" or a URL"));
        }
        self.dataset.class_map.resolve()?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config always serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// Values given on the command line; `None` leaves the file/default value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data_root: Option<PathBuf>,
    pub out_root: Option<PathBuf>,
    pub backend: Option<String>,
    pub run_seed: Option<u64>,
    pub paths: Option<Paths>,
    pub variants_per_image: Option<u32>,
    pub alpha: Option<f64>,
    pub class_weight: Option<f64>,
    pub parallelism: Option<usize>,
    pub gen_resolution: Option<Resolution>,
    pub layout: Option<Layout>,
}

impl Overrides {
    pub fn apply(&self, mut cfg: PipelineConfig) -> Result<PipelineConfig, ConfigError> {
        if let Some(v) = &self.data_root {
            cfg.data_root = Some(v.clone());
        }
        if let Some(v) = &self.out_root {
            cfg.out_root = Some(v.clone());
        }
        if let Some(v) = &self.backend {
            cfg.backend = v.clone();
        }
        if let Some(v) = self.run_seed {
            cfg.run_seed = v;
        }
        if let Some(v) = self.paths {
            cfg.paths = v;
        }
        if let Some(v) = self.variants_per_image {
            cfg.variants_per_image = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.class_weight {
            cfg.class_weight = v;
        }
        if let Some(v) = self.parallelism {
            cfg.parallelism = v;
        }
        if let Some(v) = self.gen_resolution {
            cfg.gen_resolution = v;
        }
        if let Some(v) = self.layout {
            cfg.dataset.layout = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
