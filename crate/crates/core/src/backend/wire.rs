//! JSON message bodies for the worker protocol.
//!
//! | route             | request                    | 200 response                         |
//! |-------------------|----------------------------|--------------------------------------|
//! | `POST /v1/img2img`| [`Img2ImgBody`]            | [`GenBody`]                          |
//! | `POST /v1/inpaint`| [`InpaintBody`]            | [`GenBody`]                          |
//! | `POST /v1/caption`| [`CaptionRequestBody`]     | [`CaptionResponseBody`]              |
//! | `POST /v1/prior`  | [`PriorRequestBody`]       | [`PriorResponseBody`]                |
//! | `GET /healthz`    |                            | [`Health`](super::Health)            |
//!
//! Errors come back as 4xx/5xx with an [`ErrorBody`]. Binary payloads are
//! base64 PNG: RGB for images, 8-bit gray for priors, 0/255 gray for masks.

use std::io::Cursor;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::{GrayImage, ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use super::{BackendError, GenParams, GenResponse, Img2ImgRequest, InpaintRequest};
use crate::mask_ops::BinaryMask;
use crate::prompting::PromptSpec;
use crate::visual_prior::{PriorSource, VisualPrior};

pub const REQUEST_ID_HEADER: &str = "x-request-id";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Img2ImgBody {
    pub image: String,
    pub prior: String,
    pub prompt: PromptSpec,
    pub strength: f64,
    pub steps: u32,
    pub guidance_scale: f64,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintBody {
    #[serde(flatten)]
    pub base: Img2ImgBody,
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenBody {
    pub image: String,
    pub seed_used: u64,
    pub backend_info: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRequestBody {
    pub image: String,
    pub class_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionResponseBody {
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorRequestBody {
    pub image: String,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorResponseBody {
    pub prior: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

fn png_base64<F>(write: F) -> String
where
    F: FnOnce(&mut Cursor<&mut Vec<u8>>) -> image::ImageResult<()>,
{
    let mut bytes = Vec::new();
    write(&mut Cursor::new(&mut bytes)).expect("PNG encoding into memory cannot fail");
    B64.encode(bytes)
}

pub fn encode_rgb(image: &RgbImage) -> String {
    png_base64(|c| image.write_to(c, ImageFormat::Png))
}

pub fn encode_gray(image: &GrayImage) -> String {
    png_base64(|c| image.write_to(c, ImageFormat::Png))
}

pub fn encode_prior(prior: &VisualPrior) -> String {
    encode_gray(&prior.to_gray())
}

pub fn encode_mask(mask: &BinaryMask) -> String {
    let gray = GrayImage::from_raw(mask.width(), mask.height(), mask.to_gray_bytes())
        .expect("mask buffer sized from dimensions");
    encode_gray(&gray)
}

fn decode_png(field: &str, data: &str) -> Result<image::DynamicImage, BackendError> {
    let bytes = B64
        .decode(data.trim())
        .map_err(|e| BackendError::protocol(format!("{field}: invalid base64: {e}")))?;
    image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| BackendError::protocol(format!("{field}: invalid PNG: {e}")))
}

pub fn decode_rgb(field: &str, data: &str) -> Result<RgbImage, BackendError> {
    Ok(decode_png(field, data)?.to_rgb8())
}

pub fn decode_prior(field: &str, data: &str, source: PriorSource) -> Result<VisualPrior, BackendError> {
    Ok(VisualPrior::from_gray(&decode_png(field, data)?.to_luma8(), source))
}

pub fn decode_mask(field: &str, data: &str, class_id: u8) -> Result<BinaryMask, BackendError> {
    let gray = decode_png(field, data)?.to_luma8();
    let (w, h) = gray.dimensions();
    BinaryMask::from_raw(w, h, gray.into_raw(), class_id)
        .map_err(|e| BackendError::protocol(format!("{field}: {e}")))
}

impl Img2ImgRequest {
    pub fn to_wire(&self) -> Img2ImgBody {
        Img2ImgBody {
            image: encode_rgb(&self.image),
            prior: encode_prior(&self.prior),
            prompt: self.prompt.clone(),
            strength: self.params.strength,
            steps: self.params.steps,
            guidance_scale: self.params.guidance_scale,
            seed: self.seed,
            width: self.width,
            height: self.height,
        }
    }

    /// The prior comes back at 8-bit precision.
    pub fn from_wire(body: &Img2ImgBody) -> Result<Self, BackendError> {
        Ok(Self {
            image: decode_rgb("image", &body.image)?,
            prior: decode_prior("prior", &body.prior, PriorSource::Blended)?,
            prompt: body.prompt.clone(),
            params: GenParams {
                strength: body.strength,
                steps: body.steps,
                guidance_scale: body.guidance_scale,
            },
            seed: body.seed,
            width: body.width,
            height: body.height,
        })
    }
}

impl InpaintRequest {
    pub fn to_wire(&self) -> InpaintBody {
        InpaintBody {
            base: self.base.to_wire(),
            mask: encode_mask(&self.mask),
        }
    }

    /// The mask's class id is not transmitted and comes back as 0.
    pub fn from_wire(body: &InpaintBody) -> Result<Self, BackendError> {
        Ok(Self {
            base: Img2ImgRequest::from_wire(&body.base)?,
            mask: decode_mask("mask", &body.mask, 0)?,
        })
    }
}

impl GenResponse {
    pub fn to_wire(&self) -> GenBody {
        GenBody {
            image: encode_rgb(&self.image),
            seed_used: self.seed_used,
            backend_info: self.backend_info.clone(),
        }
    }

    pub fn from_wire(body: &GenBody) -> Result<Self, BackendError> {
        Ok(Self {
            image: decode_rgb("image", &body.image)?,
            seed_used: body.seed_used,
            backend_info: body.backend_info.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::PromptSegment;
    use image::Rgb;
    use proptest::prelude::*;

    fn request_strategy() -> impl Strategy<Value = InpaintRequest> {
        (1u32..4, 1u32..4, any::<u64>(), "[a-z ]{1,20}", 1u32..200, 0.01f64..=1.0)
            .prop_flat_map(|(bw, bh, seed, text, steps, strength)| {
                let (w, h) = (bw * 8, bh * 8);
                let n = (w * h) as usize;
                (
                    prop::collection::vec(any::<u8>(), n * 3),
                    prop::collection::vec(any::<u8>(), n),
                    prop::collection::vec(any::<bool>(), n),
                )
                    .prop_map(move |(rgb, gray, bits)| {
                        let image = RgbImage::from_raw(w, h, rgb).unwrap();
                        let prior = VisualPrior::from_gray(
                            &GrayImage::from_raw(w, h, gray).unwrap(),
                            PriorSource::Blended,
                        );
                        let mask = BinaryMask::from_raw(w, h, bits.into_iter().map(u8::from).collect(), 0).unwrap();
                        InpaintRequest {
                            base: Img2ImgRequest {
                                image,
                                prior,
                                prompt: PromptSpec::new(vec![
                                    PromptSegment::plain(text.clone()),
                                    PromptSegment::new("dog", 1.21),
                                ]),
                                params: GenParams { strength, steps, guidance_scale: 7.5 },
                                seed,
                                width: w,
                                height: h,
                            },
                            mask,
                        }
                    })
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn inpaint_request_round_trips(req in request_strategy()) {
            let json = serde_json::to_string(&req.to_wire()).unwrap();
            let body: InpaintBody = serde_json::from_str(&json).unwrap();
            let back = InpaintRequest::from_wire(&body).unwrap();
            prop_assert_eq!(&back, &req);
            prop_assert_eq!(serde_json::to_string(&back.to_wire()).unwrap(), json);
        }
    }

    #[test]
    fn response_round_trips() {
        let resp = GenResponse {
            image: RgbImage::from_fn(8, 8, |x, y| Rgb([x as u8, y as u8, 200])),
            seed_used: u64::MAX,
            backend_info: "mock".into(),
        };
        let json = serde_json::to_string(&resp.to_wire()).unwrap();
        let body: GenBody = serde_json::from_str(&json).unwrap();
        assert_eq!(GenResponse::from_wire(&body).unwrap(), resp);
    }

    #[test]
    fn inpaint_body_is_flat() {
        let req = Img2ImgRequest {
            image: RgbImage::new(8, 8),
            prior: VisualPrior::zeros(8, 8, PriorSource::Blended),
            prompt: PromptSpec::default(),
            params: GenParams::default(),
            seed: 1,
            width: 8,
            height: 8,
        };
        let body = InpaintRequest {
            base: req,
            mask: BinaryMask::zeros(8, 8, 0),
        }
        .to_wire();
        let value = serde_json::to_value(&body).unwrap();
        for key in ["image", "prior", "prompt", "strength", "steps", "guidance_scale", "seed", "width", "height", "mask"] {
            assert!(value.get(key).is_some(), "missing {key}");
        }
        assert!(value["prompt"].get("segments").is_some());
    }

    #[test]
    fn garbage_payloads_are_protocol_errors() {
        assert!(matches!(decode_rgb("image", "%%%"), Err(BackendError::Protocol { .. })));
        assert!(matches!(
            decode_rgb("image", &B64.encode(b"not a png")),
            Err(BackendError::Protocol { .. })
        ));
    }
}
