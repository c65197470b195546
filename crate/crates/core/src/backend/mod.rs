//! Generation backend contract.
//!
//! Two generation calls matter:
//!
//! - `img2img(image, prior, prompt)` regenerates the whole frame anchored on
//!   the reference image,
//! - `inpaint(image, prior, mask, prompt)` regenerates one class region.
//!
//! plus `caption` and an optional model-based `prior`. [`MockBackend`] is a
//! pure, deterministic implementation; [`HttpBackend`] talks to a worker over
//! the JSON protocol in [`wire`], which [`server::MockServer`] also serves.

pub mod http;
pub mod mock;
pub mod server;
pub mod wire;

use std::fmt;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::mask_ops::BinaryMask;
use crate::prompting::PromptSpec;
use crate::visual_prior::VisualPrior;

pub use http::HttpBackend;
pub use mock::MockBackend;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    /// Connection-level failure; worth retrying.
    #[error("transport error: {0}")]
    Transport(String),
    /// The backend understood and refused the request.
    #[error("backend rejected request{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Protocol { status: Option<u16>, message: String },
    #[error("backend does not offer {0}")]
    Unsupported(Capability),
}

impl BackendError {
    pub fn protocol(message: impl Into<String>) -> Self {
        BackendError::Protocol {
            status: None,
            message: message.into(),
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Capability {
    Img2img,
    Inpaint,
    Caption,
    Prior,
}

impl Capability {
    pub const ALL: [Capability; 4] = [
        Capability::Img2img,
        Capability::Inpaint,
        Capability::Caption,
        Capability::Prior,
    ];
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Capability::Img2img => "img2img",
            Capability::Inpaint => "inpaint",
            Capability::Caption => "caption",
            Capability::Prior => "prior",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub capabilities: Vec<Capability>,
}

impl Health {
    pub fn supports(&self, cap: Capability) -> bool {
        self.capabilities.contains(&cap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenParams {
    pub strength: f64,
    pub steps: u32,
    pub guidance_scale: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            strength: 0.75,
            steps: 30,
            guidance_scale: 7.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Img2ImgRequest {
    pub image: RgbImage,
    pub prior: VisualPrior,
    pub prompt: PromptSpec,
    pub params: GenParams,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
}

impl Img2ImgRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: String| Err(BackendError::protocol(m));
        if self.width == 0 || self.height == 0 || self.width % 8 != 0 || self.height % 8 != 0 {
            return bad(format!(
                "output size {}x{} must be positive multiples of 8",
                self.width, self.height
            ));
        }
        if self.prior.dims() != (self.width, self.height) {
            return bad(format!(
                "prior is {:?}, output is {:?}",
                self.prior.dims(),
                (self.width, self.height)
            ));
        }
        if self.image.width() == 0 || self.image.height() == 0 {
            return bad("empty input image".into());
        }
        let s = self.params.strength;
        if !(s > 0.0 && s <= 1.0) {
            return bad(format!("strength {s} outside (0, 1]"));
        }
        if self.params.steps == 0 {
            return bad("steps must be positive".into());
        }
        if self.params.guidance_scale.is_nan() || self.params.guidance_scale <= 0.0 {
            return bad(format!(
                "guidance_scale {} must be positive",
                self.params.guidance_scale
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InpaintRequest {
    pub base: Img2ImgRequest,
    pub mask: BinaryMask,
}

impl InpaintRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        self.base.validate()?;
        if self.mask.dims() != (self.base.width, self.base.height) {
            return Err(BackendError::protocol(format!(
                "mask is {:?}, output is {:?}",
                self.mask.dims(),
                (self.base.width, self.base.height)
            )));
        }
        if self.mask.is_empty() {
            return Err(BackendError::protocol("inpaint mask is all zero"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenResponse {
    pub image: RgbImage,
    pub seed_used: u64,
    pub backend_info: String,
}

pub trait GenerationBackend: Send + Sync {
    fn health(&self) -> Result<Health, BackendError>;
    fn img2img(&self, req: &Img2ImgRequest) -> Result<GenResponse, BackendError>;
    fn inpaint(&self, req: &InpaintRequest) -> Result<GenResponse, BackendError>;
    fn caption(&self, image: &RgbImage, class_names: &[String]) -> Result<String, BackendError>;
    fn prior(&self, image: &RgbImage) -> Result<VisualPrior, BackendError>;
}

/// Rejects responses whose image size differs from the request.
pub(crate) fn check_response_dims(resp: &GenResponse, width: u32, height: u32) -> Result<(), BackendError> {
    if resp.image.dimensions() != (width, height) {
        return Err(BackendError::protocol(format!(
            "response image is {:?}, requested {:?}",
            resp.image.dimensions(),
            (width, height)
        )));
    }
    Ok(())
}
