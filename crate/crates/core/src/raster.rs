//! Bilinear resampling shared by priors and RGB images.
//!
//! Pixel centres sit at half-integer coordinates; samples outside the source
//! are clamped to the border. Resizing to the source dimensions is a no-op.

use image::RgbImage;

/// Source coordinate pair and blend weight for each destination index.
fn axis_taps(dst_len: u32, src_len: u32) -> Vec<(usize, usize, f32)> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src_len as usize - 1);
            (lo, hi, (s - lo as f64) as f32)
        })
        .collect()
}

/// Resamples an interleaved `channels`-plane f32 raster.
pub fn bilinear_f32(
    src: &[f32],
    width: u32,
    height: u32,
    channels: usize,
    dst_width: u32,
    dst_height: u32,
) -> Vec<f32> {
    assert_eq!(src.len(), width as usize * height as usize * channels);
    if (width, height) == (dst_width, dst_height) {
        return src.to_vec();
    }
    let xs = axis_taps(dst_width, width);
    let ys = axis_taps(dst_height, height);
    let row = width as usize * channels;
    let mut out = Vec::with_capacity(dst_width as usize * dst_height as usize * channels);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..channels {
                let at = |x: usize, y: usize| src[y * row + x * channels + c];
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    out
}

/// Bilinear RGB resize with round-half-up back to 8 bits.
pub fn resize_rgb(image: &RgbImage, width: u32, height: u32) -> RgbImage {
    if image.dimensions() == (width, height) {
        return image.clone();
    }
    let src: Vec<f32> = image.as_raw().iter().map(|&v| v as f32).collect();
    let out = bilinear_f32(&src, image.width(), image.height(), 3, width, height);
    let bytes = out
        .into_iter()
        .map(|v| (v + 0.5).floor().clamp(0.0, 255.0) as u8)
        .collect();
    RgbImage::from_raw(width, height, bytes).expect("buffer sized from dimensions")
}

/// ITU-R 601 luma in `[0, 1]`.
pub fn luma(image: &RgbImage) -> Vec<f32> {
    image
        .pixels()
        .map(|p| (0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32) / 255.0)
        .collect()
}
