//! Structural guide images for controllable generation.
//!
//! Three priors are produced per sample: edges extracted from the photo
//! ([`edges_from_image`]), object outlines rendered from the label
//! ([`prior_from_label`]), and their blend ([`blend`]):
//!
//! ```text
//! V*(p) = min(1, α·V_image(p) + V_label(p))
//! ```
//!
//! With α < 1 the label outlines dominate wherever both are active.

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::dataset_io::ClassMap;
use crate::mask_ops::{dilate, BinaryMask, LabelMask};
use crate::raster;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PriorError {
    #[error("edge thresholds must satisfy 0 <= low < high <= 1 (got low={low}, high={high})")]
    Thresholds { low: f64, high: f64 },
    #[error("blur sigma must be non-negative and finite (got {0})")]
    Sigma(f64),
    #[error("alpha must lie in [0, 1] (got {0})")]
    Alpha(f64),
    #[error("boundary width must be at least 1")]
    BoundaryWidth,
    #[error("prior dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((u32, u32), (u32, u32)),
    #[error("target dimensions must be positive")]
    EmptyTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorSource {
    Image,
    Label,
    Blended,
}

/// Single-channel raster with every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualPrior {
    width: u32,
    height: u32,
    data: Vec<f32>,
    source: PriorSource,
}

impl VisualPrior {
    /// Values are clamped into `[0, 1]`; NaN becomes 0.
    pub fn new(width: u32, height: u32, mut data: Vec<f32>, source: PriorSource) -> Self {
        assert_eq!(data.len(), width as usize * height as usize);
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self {
            width,
            height,
            data,
            source,
        }
    }

    pub fn zeros(width: u32, height: u32, source: PriorSource) -> Self {
        Self::new(width, height, vec![0.0; width as usize * height as usize], source)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn source(&self) -> PriorSource {
        self.source
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    /// 8-bit grayscale, `value·255` rounded half up.
    pub fn to_gray(&self) -> GrayImage {
        let bytes = self.data.iter().map(|&v| quantize(v)).collect();
        GrayImage::from_raw(self.width, self.height, bytes).expect("sized from dimensions")
    }

    pub fn from_gray(gray: &GrayImage, source: PriorSource) -> Self {
        let data = gray.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Self::new(gray.width(), gray.height(), data, source)
    }

    /// Round-trips through 8 bits, the precision priors have on the wire.
    pub fn quantized(&self) -> Self {
        Self::from_gray(&self.to_gray(), self.source)
    }
}

fn quantize(v: f32) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeParams {
    pub low_threshold: f64,
    pub high_threshold: f64,
    pub blur_sigma: f64,
}

impl Default for EdgeParams {
    fn default() -> Self {
        Self {
            low_threshold: 0.1,
            high_threshold: 0.25,
            blur_sigma: 1.0,
        }
    }
}

impl EdgeParams {
    pub fn validate(&self) -> Result<(), PriorError> {
        let (low, high) = (self.low_threshold, self.high_threshold);
        if !(0.0 <= low && low < high && high <= 1.0) {
            return Err(PriorError::Thresholds { low, high });
        }
        if !(self.blur_sigma.is_finite() && self.blur_sigma >= 0.0) {
            return Err(PriorError::Sigma(self.blur_sigma));
        }
        Ok(())
    }
}

/// Canny-style line map: Gaussian blur, Sobel gradients, non-maximum
/// suppression and hysteresis. Edge pixels are 1.0, everything else 0.0.
///
/// Gradient strength is `|∇I| / 4` on luma in `[0, 1]` (so a sharp
/// black-to-white step scores 1) and the thresholds apply to that scale.
pub fn edges_from_image(image: &image::RgbImage, params: &EdgeParams) -> Result<VisualPrior, PriorError> {
    params.validate()?;
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 {
        return Ok(VisualPrior::zeros(w, h, PriorSource::Image));
    }
    let gray = raster::luma(image);
    let blurred = gaussian_blur(&gray, w as usize, h as usize, params.blur_sigma);
    let (gx, gy) = sobel(&blurred, w as usize, h as usize);
    let strength: Vec<f32> = gx
        .iter()
        .zip(&gy)
        .map(|(x, y)| x.hypot(*y) / 4.0)
        .collect();
    let thin = non_maximum_suppression(&strength, &gx, &gy, w as usize, h as usize);
    let edges = hysteresis(
        &thin,
        w as usize,
        h as usize,
        params.low_threshold as f32,
        params.high_threshold as f32,
    );
    Ok(VisualPrior::new(w, h, edges, PriorSource::Image))
}

fn clamp_idx(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

fn gaussian_blur(src: &[f32], w: usize, h: usize, sigma: f64) -> Vec<f32> {
    if sigma == 0.0 {
        return src.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32)
        .collect();
    let sum: f32 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);

    let mut tmp = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, wt)| wt * src[y * w + clamp_idx(x as isize + k as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, wt)| wt * tmp[clamp_idx(y as isize + k as isize - radius, h) * w + x])
                .sum();
        }
    }
    out
}

fn sobel(src: &[f32], w: usize, h: usize) -> (Vec<f32>, Vec<f32>) {
    let at = |x: isize, y: isize| src[clamp_idx(y, h) * w + clamp_idx(x, w)];
    let mut gx = vec![0.0f32; w * h];
    let mut gy = vec![0.0f32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            gx[i] = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            gy[i] = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
        }
    }
    (gx, gy)
}

/// Keeps pixels that are not smaller than both neighbours along the
/// quantized gradient direction.
fn non_maximum_suppression(g: &[f32], gx: &[f32], gy: &[f32], w: usize, h: usize) -> Vec<f32> {
    let at = |x: isize, y: isize| g[clamp_idx(y, h) * w + clamp_idx(x, w)];
    let mut out = vec![0.0f32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            if g[i] == 0.0 {
                continue;
            }
            let mut angle = gy[i].atan2(gx[i]).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            let (dx, dy) = if !(22.5..157.5).contains(&angle) {
                (1, 0)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (0, 1)
            } else {
                (-1, 1)
            };
            if g[i] >= at(x + dx, y + dy) && g[i] >= at(x - dx, y - dy) {
                out[i] = g[i];
            }
        }
    }
    out
}

/// Strong pixels seed an 8-connected flood through weak ones.
fn hysteresis(g: &[f32], w: usize, h: usize, low: f32, high: f32) -> Vec<f32> {
    let mut out = vec![0.0f32; w * h];
    let mut stack: Vec<usize> = Vec::new();
    for (i, &v) in g.iter().enumerate() {
        if v >= high && v > 0.0 {
            out[i] = 1.0;
            stack.push(i);
        }
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if out[j] == 0.0 && g[j] >= low && g[j] > 0.0 {
                    out[j] = 1.0;
                    stack.push(j);
                }
            }
        }
    }
    out
}

/// Outline render of the label: 1.0 within `boundary_width - 1` pixels
/// (Chebyshev) of a foreground pixel whose 4-neighbour holds a different
/// value, 0.0 elsewhere.
///
/// Only boundaries that touch a foreground class count, so a background/void
/// transition on its own draws nothing while a class/void one does.
pub fn prior_from_label(
    label: &LabelMask,
    class_map: &ClassMap,
    boundary_width: u32,
) -> Result<VisualPrior, PriorError> {
    if boundary_width == 0 {
        return Err(PriorError::BoundaryWidth);
    }
    let (w, h) = label.dims();
    let mut seeds = BinaryMask::zeros(w, h, 0);
    for y in 0..h {
        for x in 0..w {
            let v = label.get(x, y);
            if !class_map.is_foreground(v) {
                continue;
            }
            let differs = |nx: i64, ny: i64| {
                nx >= 0
                    && ny >= 0
                    && nx < w as i64
                    && ny < h as i64
                    && label.get(nx as u32, ny as u32) != v
            };
            let (xi, yi) = (x as i64, y as i64);
            if differs(xi - 1, yi) || differs(xi + 1, yi) || differs(xi, yi - 1) || differs(xi, yi + 1) {
                seeds.set(x, y, true);
            }
        }
    }
    let ring = dilate(&seeds, boundary_width - 1);
    let data = ring.data().iter().map(|&v| v as f32).collect();
    Ok(VisualPrior::new(w, h, data, PriorSource::Label))
}

/// Pointwise `min(1, alpha·image_prior + label_prior)`.
pub fn blend(
    image_prior: &VisualPrior,
    label_prior: &VisualPrior,
    alpha: f64,
) -> Result<VisualPrior, PriorError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(PriorError::Alpha(alpha));
    }
    if image_prior.dims() != label_prior.dims() {
        return Err(PriorError::DimensionMismatch(
            image_prior.dims(),
            label_prior.dims(),
        ));
    }
    let a = alpha as f32;
    let data = image_prior
        .data
        .iter()
        .zip(&label_prior.data)
        .map(|(&vi, &vs)| (a * vi + vs).min(1.0))
        .collect();
    Ok(VisualPrior::new(
        image_prior.width,
        image_prior.height,
        data,
        PriorSource::Blended,
    ))
}

/// Bilinear resample, re-clamped into `[0, 1]`.
pub fn resize_prior(prior: &VisualPrior, width: u32, height: u32) -> Result<VisualPrior, PriorError> {
    if width == 0 || height == 0 {
        return Err(PriorError::EmptyTarget);
    }
    if prior.dims() == (width, height) {
        return Ok(prior.clone());
    }
    let data = raster::bilinear_f32(&prior.data, prior.width, prior.height, 1, width, height);
    Ok(VisualPrior::new(width, height, data, prior.source))
}
