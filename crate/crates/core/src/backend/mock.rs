//! Deterministic stand-in for a diffusion worker.
//!
//! Every output is a pure function of the request: the same request always
//! yields the same bytes, and changing the seed or prompt text changes the
//! output. Priors are first reduced to their 8-bit wire precision so that an
//! in-process call and a call through the HTTP server agree byte for byte.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{
    BackendError, Capability, GenResponse, GenerationBackend, Health, Img2ImgRequest, InpaintRequest,
};
use crate::raster;
use crate::visual_prior::{edges_from_image, EdgeParams, VisualPrior};

pub const MOCK_BACKEND_INFO: &str = "mock/1";

/// Coarse colour-field resolution for img2img.
const FIELD_CELLS: u32 = 6;

#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    capabilities: Option<Vec<Capability>>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Advertises only `capabilities`; calls outside them fail with
    /// [`BackendError::Unsupported`].
    pub fn with_capabilities(capabilities: Vec<Capability>) -> Self {
        Self {
            capabilities: Some(capabilities),
        }
    }

    fn require(&self, cap: Capability) -> Result<(), BackendError> {
        match &self.capabilities {
            Some(caps) if !caps.contains(&cap) => Err(BackendError::Unsupported(cap)),
            _ => Ok(()),
        }
    }
}

fn request_rng(tag: &str, seed: u64, text: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    h.update(seed.to_le_bytes());
    h.update(text.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

fn mix(base: u8, target: f32, strength: f32) -> u8 {
    (base as f32 * (1.0 - strength) + target * strength + 0.5)
        .floor()
        .clamp(0.0, 255.0) as u8
}

/// Moves `base` toward `target` by `strength`, where `target` is darkened
/// along prior strokes.
fn stamp(base: &RgbImage, target: &[f32], prior: &VisualPrior, strength: f32) -> RgbImage {
    let mut out = base.clone();
    for (i, px) in out.pixels_mut().enumerate() {
        let ink = 1.0 - prior.data()[i];
        for c in 0..3 {
            px[c] = mix(px[c], target[i * 3 + c] * ink, strength);
        }
    }
    out
}

impl GenerationBackend for MockBackend {
    fn health(&self) -> Result<Health, BackendError> {
        Ok(Health {
            status: "ok".into(),
            capabilities: self
                .capabilities
                .clone()
                .unwrap_or_else(|| Capability::ALL.to_vec()),
        })
    }

    fn img2img(&self, req: &Img2ImgRequest) -> Result<GenResponse, BackendError> {
        self.require(Capability::Img2img)?;
        req.validate()?;
        let (w, h) = (req.width, req.height);
        let prior = req.prior.quantized();
        let base = raster::resize_rgb(&req.image, w, h);

        let mut rng = request_rng("img2img", req.seed, &req.prompt.plain_text());
        let cells: Vec<f32> = (0..FIELD_CELLS * FIELD_CELLS * 3)
            .map(|_| rng.random_range(0..=255u8) as f32)
            .collect();
        let field = raster::bilinear_f32(&cells, FIELD_CELLS, FIELD_CELLS, 3, w, h);

        Ok(GenResponse {
            image: stamp(&base, &field, &prior, req.params.strength as f32),
            seed_used: req.seed,
            backend_info: MOCK_BACKEND_INFO.into(),
        })
    }

    fn inpaint(&self, req: &InpaintRequest) -> Result<GenResponse, BackendError> {
        self.require(Capability::Inpaint)?;
        req.validate()?;
        let (w, h) = (req.base.width, req.base.height);
        let prior = req.base.prior.quantized();
        let base = raster::resize_rgb(&req.base.image, w, h);

        // Stripe texture keyed on seed and prompt text.
        let mut rng = request_rng("inpaint", req.base.seed, &req.base.prompt.plain_text());
        let colors: [[f32; 3]; 2] =
            std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(0..=255u8) as f32));
        let period = rng.random_range(2..7u32);
        let (dx, dy) = (rng.random_range(0..3u32), rng.random_range(1..3u32));
        let mut texture = vec![0f32; (w * h * 3) as usize];
        for y in 0..h {
            for x in 0..w {
                let band = ((x * dx + y * dy) / period) % 2;
                let i = ((y * w + x) * 3) as usize;
                texture[i..i + 3].copy_from_slice(&colors[band as usize]);
            }
        }
        let painted = stamp(&base, &texture, &prior, req.base.params.strength as f32);

        // Outside the mask, return the base with a faint deterministic
        // perturbation; callers must composite to keep those pixels exact.
        let mut out = base;
        for (i, (px, src)) in out.pixels_mut().zip(painted.pixels()).enumerate() {
            let (x, y) = (i as u32 % w, i as u32 / w);
            if req.mask.get(x, y) {
                *px = *src;
            } else if rng.random_bool(0.25) {
                *px = Rgb(px.0.map(|v| v ^ 1));
            }
        }
        Ok(GenResponse {
            image: out,
            seed_used: req.base.seed,
            backend_info: MOCK_BACKEND_INFO.into(),
        })
    }

    fn caption(&self, _image: &RgbImage, class_names: &[String]) -> Result<String, BackendError> {
        self.require(Capability::Caption)?;
        if class_names.is_empty() {
            return Ok("a photo".into());
        }
        Ok(format!("a photo of {}", class_names.join(" and ")))
    }

    fn prior(&self, image: &RgbImage) -> Result<VisualPrior, BackendError> {
        self.require(Capability::Prior)?;
        edges_from_image(image, &EdgeParams::default())
            .map_err(|e| BackendError::protocol(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::GenParams;
    use crate::mask_ops::BinaryMask;
    use crate::prompting::{PromptSegment, PromptSpec};
    use crate::visual_prior::PriorSource;

    fn photo(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7) as u8, (y * 5) as u8, ((x + y) * 3) as u8]))
    }

    fn request(seed: u64, strength: f64, text: &str) -> Img2ImgRequest {
        let mut prior = vec![0.0; 64 * 48];
        for y in 0..48 {
            prior[y * 64 + 20] = 1.0;
        }
        Img2ImgRequest {
            image: photo(64, 48),
            prior: VisualPrior::new(64, 48, prior, PriorSource::Blended),
            prompt: PromptSpec::new(vec![PromptSegment::plain(text)]),
            params: GenParams {
                strength,
                ..GenParams::default()
            },
            seed,
            width: 64,
            height: 48,
        }
    }

    fn differing_fraction(a: &RgbImage, b: &RgbImage) -> f64 {
        let n = a.pixels().zip(b.pixels()).filter(|(p, q)| p != q).count();
        n as f64 / (a.width() * a.height()) as f64
    }

    #[test]
    fn tiny_strength_barely_moves_pixels() {
        let req = request(3, 0.01, "a dog");
        let out = MockBackend::new().img2img(&req).unwrap();
        for (a, b) in out.image.as_raw().iter().zip(req.image.as_raw()) {
            assert!((*a as i32 - *b as i32).abs() <= 3);
        }
    }

    #[test]
    fn identical_requests_identical_output() {
        let m = MockBackend::new();
        let req = request(9, 0.75, "a dog");
        assert_eq!(m.img2img(&req).unwrap(), m.img2img(&req).unwrap());
    }

    #[test]
    fn adjacent_seeds_differ() {
        let m = MockBackend::new();
        let a = m.img2img(&request(100, 0.75, "a dog")).unwrap();
        let b = m.img2img(&request(101, 0.75, "a dog")).unwrap();
        assert!(differing_fraction(&a.image, &b.image) >= 0.01);
    }

    #[test]
    fn output_follows_requested_size() {
        let mut req = request(1, 0.5, "x");
        req.image = photo(30, 20);
        let out = MockBackend::new().img2img(&req).unwrap();
        assert_eq!(out.image.dimensions(), (64, 48));
    }

    fn inpaint_request(text: &str) -> InpaintRequest {
        let mut mask = BinaryMask::zeros(64, 48, 3);
        for y in 10..30 {
            for x in 5..40 {
                mask.set(x, y, true);
            }
        }
        InpaintRequest {
            base: request(5, 0.75, text),
            mask,
        }
    }

    #[test]
    fn inpaint_dims_and_determinism() {
        let m = MockBackend::new();
        let req = inpaint_request("A photograph of dog");
        let a = m.inpaint(&req).unwrap();
        assert_eq!(a.image.dimensions(), (64, 48));
        assert_eq!(a, m.inpaint(&req).unwrap());
    }

    #[test]
    fn inpaint_prompt_changes_masked_region() {
        let m = MockBackend::new();
        let req_a = inpaint_request("A photograph of dog");
        let req_b = inpaint_request("A photograph of cat");
        let a = m.inpaint(&req_a).unwrap().image;
        let b = m.inpaint(&req_b).unwrap().image;
        let differing = (0..48u32)
            .flat_map(|y| (0..64u32).map(move |x| (x, y)))
            .filter(|&(x, y)| req_a.mask.get(x, y) && a.get_pixel(x, y) != b.get_pixel(x, y))
            .count();
        assert!(differing > 0);
    }

    #[test]
    fn empty_mask_rejected() {
        let mut req = inpaint_request("x");
        req.mask = BinaryMask::zeros(64, 48, 3);
        assert!(matches!(
            MockBackend::new().inpaint(&req),
            Err(BackendError::Protocol { .. })
        ));
    }

    #[test]
    fn invalid_requests_rejected() {
        let m = MockBackend::new();
        let mut bad = request(1, 0.5, "x");
        bad.width = 60;
        assert!(m.img2img(&bad).is_err());
        let mut bad = request(1, 0.0, "x");
        bad.params.strength = 0.0;
        assert!(m.img2img(&bad).is_err());
        let mut bad = request(1, 0.5, "x");
        bad.prior = VisualPrior::zeros(8, 8, PriorSource::Blended);
        assert!(m.img2img(&bad).is_err());
    }

    #[test]
    fn captions_and_health() {
        let m = MockBackend::new();
        assert_eq!(m.caption(&photo(4, 4), &["dog".into()]).unwrap(), "a photo of dog");
        assert_eq!(m.caption(&photo(4, 4), &[]).unwrap(), "a photo");
        assert_eq!(
            m.caption(&photo(4, 4), &["dog".into(), "cat".into()]).unwrap(),
            "a photo of dog and cat"
        );
        assert_eq!(m.health().unwrap().capabilities, Capability::ALL.to_vec());

        let limited = MockBackend::with_capabilities(vec![Capability::Img2img, Capability::Inpaint]);
        assert!(!limited.health().unwrap().supports(Capability::Caption));
        assert_eq!(
            limited.caption(&photo(4, 4), &[]),
            Err(BackendError::Unsupported(Capability::Caption))
        );
    }
}
