//! Binary-mask algebra over segmentation labels.
//!
//! Per-class masks are extracted from a [`LabelMask`], optionally dilated for
//! inpainting requests, and merged back onto the source image with
//! [`composite`]:
//!
//! ```text
//! out = base ⊙ (1 − Σ Mᵢ) + Σ (patchᵢ ⊙ Mᵢ)
//! ```
//!
//! Masks passed to [`composite`] must be pairwise disjoint, so every output
//! pixel is copied verbatim from exactly one source and no blending happens.

use image::RgbImage;

use crate::dataset_io::ClassMap;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MaskError {
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("label value {value} at ({x}, {y}) is not in the class map")]
    UnknownLabelValue { value: u8, x: u32, y: u32 },
    #[error("masks for classes {first} and {second} overlap at ({x}, {y})")]
    Overlap {
        first: u8,
        second: u8,
        x: u32,
        y: u32,
    },
    #[error("raster buffer has {len} values, expected {expected}")]
    BadBuffer { len: usize, expected: usize },
}

/// Class-indexed raster: one small integer per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, MaskError> {
        let expected = width as usize * height as usize;
        if data.len() != expected {
            return Err(MaskError::BadBuffer {
                len: data.len(),
                expected,
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
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

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: u8) {
        self.data[y as usize * self.width as usize + x as usize] = value;
    }

    /// Checks every pixel against `class_map`, reporting the first offender
    /// in row-major order.
    pub fn validate(&self, class_map: &ClassMap) -> Result<(), MaskError> {
        let mut known = [false; 256];
        for entry in class_map.entries() {
            known[entry.class_id as usize] = true;
        }
        if let Some(void) = class_map.void_id() {
            known[void as usize] = true;
        }
        match self.data.iter().position(|&v| !known[v as usize]) {
            None => Ok(()),
            Some(i) => Err(MaskError::UnknownLabelValue {
                value: self.data[i],
                x: (i % self.width as usize) as u32,
                y: (i / self.width as usize) as u32,
            }),
        }
    }

    /// Distinct foreground class ids present, ascending.
    pub fn present_classes(&self, class_map: &ClassMap) -> Vec<u8> {
        let mut seen = [false; 256];
        for &v in &self.data {
            seen[v as usize] = true;
        }
        (0..=255u8)
            .filter(|&v| seen[v as usize] && class_map.is_foreground(v))
            .collect()
    }
}

/// A {0,1} raster selecting the pixels of one class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    data: Vec<u8>,
    class_id: u8,
}

impl BinaryMask {
    pub fn zeros(width: u32, height: u32, class_id: u8) -> Self {
        Self {
            width,
            height,
            data: vec![0; width as usize * height as usize],
            class_id,
        }
    }

    /// Builds a mask from arbitrary bytes; any nonzero value becomes 1.
    pub fn from_raw(
        width: u32,
        height: u32,
        data: Vec<u8>,
        class_id: u8,
    ) -> Result<Self, MaskError> {
        let expected = width as usize * height as usize;
        if data.len() != expected {
            return Err(MaskError::BadBuffer {
                len: data.len(),
                expected,
            });
        }
        let data = data.into_iter().map(|v| u8::from(v != 0)).collect();
        Ok(Self {
            width,
            height,
            data,
            class_id,
        })
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

    pub fn class_id(&self) -> u8 {
        self.class_id
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize] != 0
    }

    pub fn set(&mut self, x: u32, y: u32, on: bool) {
        self.data[y as usize * self.width as usize + x as usize] = u8::from(on);
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Nearest-neighbour resample; masks must stay strictly binary.
    pub fn resize_nearest(&self, width: u32, height: u32) -> BinaryMask {
        if (width, height) == self.dims() {
            return self.clone();
        }
        let mut out = BinaryMask::zeros(width, height, self.class_id);
        for y in 0..height {
            let sy = nearest_index(y, height, self.height);
            for x in 0..width {
                let sx = nearest_index(x, width, self.width);
                out.set(x, y, self.get(sx, sy));
            }
        }
        out
    }

    /// 0/255 grayscale bytes, the on-the-wire and on-disk form.
    pub fn to_gray_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| v * 255).collect()
    }
}

/// Source index whose pixel centre is nearest to destination pixel `dst`.
fn nearest_index(dst: u32, dst_len: u32, src_len: u32) -> u32 {
    let centre = (dst as f64 + 0.5) * src_len as f64 / dst_len as f64;
    (centre.floor() as u32).min(src_len - 1)
}

/// One mask per foreground class present in `label`, ascending by class id.
pub fn extract_class_masks(
    label: &LabelMask,
    class_map: &ClassMap,
) -> Result<Vec<BinaryMask>, MaskError> {
    label.validate(class_map)?;
    let (w, h) = label.dims();
    let classes = label.present_classes(class_map);
    let mut slot = [usize::MAX; 256];
    let mut masks: Vec<BinaryMask> = classes
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            slot[c as usize] = i;
            BinaryMask::zeros(w, h, c)
        })
        .collect();
    for (i, &v) in label.data().iter().enumerate() {
        let s = slot[v as usize];
        if s != usize::MAX {
            masks[s].data[i] = 1;
        }
    }
    Ok(masks)
}

/// Square-structuring-element dilation (side `2·radius + 1`).
pub fn dilate(mask: &BinaryMask, radius: u32) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width as usize, mask.height as usize);
    let r = radius as usize;
    // Separable max filter: rows, then columns.
    let mut rows = vec![0u8; w * h];
    for y in 0..h {
        let src = &mask.data[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            rows[y * w + x] = u8::from(src[lo..=hi].iter().any(|&v| v != 0));
        }
    }
    let mut out = vec![0u8; w * h];
    for x in 0..w {
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r).min(h - 1);
            out[y * w + x] = u8::from((lo..=hi).any(|yy| rows[yy * w + x] != 0));
        }
    }
    BinaryMask {
        width: mask.width,
        height: mask.height,
        data: out,
        class_id: mask.class_id,
    }
}

/// Pointwise OR. The result carries class id 0.
pub fn union(masks: &[BinaryMask], width: u32, height: u32) -> Result<BinaryMask, MaskError> {
    let mut out = BinaryMask::zeros(width, height, 0);
    for m in masks {
        check_dims((width, height), m.dims())?;
        for (o, &v) in out.data.iter_mut().zip(&m.data) {
            *o |= v;
        }
    }
    Ok(out)
}

/// Fraction of pixels set, in `[0, 1]`.
pub fn coverage(mask: &BinaryMask) -> f64 {
    if mask.data.is_empty() {
        return 0.0;
    }
    mask.count_ones() as f64 / mask.data.len() as f64
}

/// Fails on the first pixel claimed by two masks.
pub fn ensure_disjoint(masks: &[&BinaryMask]) -> Result<(), MaskError> {
    let Some(first) = masks.first() else {
        return Ok(());
    };
    let (w, _) = first.dims();
    let mut owner: Vec<Option<u8>> = vec![None; first.data.len()];
    for m in masks {
        check_dims(first.dims(), m.dims())?;
        for (i, &v) in m.data.iter().enumerate() {
            if v == 0 {
                continue;
            }
            if let Some(prev) = owner[i] {
                return Err(MaskError::Overlap {
                    first: prev,
                    second: m.class_id,
                    x: (i % w as usize) as u32,
                    y: (i / w as usize) as u32,
                });
            }
            owner[i] = Some(m.class_id);
        }
    }
    Ok(())
}

/// Merges per-class patches onto `base`: inside mask `i` the output is
/// `patch_i`, outside every mask it is `base`, bit for bit.
pub fn composite(base: &RgbImage, patches: &[(RgbImage, BinaryMask)]) -> Result<RgbImage, MaskError> {
    let dims = base.dimensions();
    for (img, mask) in patches {
        check_dims(dims, img.dimensions())?;
        check_dims(dims, mask.dims())?;
    }
    let masks: Vec<&BinaryMask> = patches.iter().map(|(_, m)| m).collect();
    ensure_disjoint(&masks)?;

    let mut out = base.clone();
    let buf: &mut [u8] = &mut out;
    for (img, mask) in patches {
        let src: &[u8] = img;
        for (i, _) in mask.data.iter().enumerate().filter(|(_, &v)| v != 0) {
            buf[i * 3..i * 3 + 3].copy_from_slice(&src[i * 3..i * 3 + 3]);
        }
    }
    Ok(out)
}

fn check_dims(expected: (u32, u32), actual: (u32, u32)) -> Result<(), MaskError> {
    if expected != actual {
        return Err(MaskError::DimensionMismatch { expected, actual });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset_io::ClassMap;
    use image::Rgb;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_map() -> ClassMap {
        ClassMap::from_names(&["background", "a", "b", "c", "d", "e", "f", "g"], Some(255)).unwrap()
    }

    #[test]
    fn all_background_yields_no_masks() {
        let label = LabelMask::filled(4, 4, 0);
        assert!(extract_class_masks(&label, &small_map()).unwrap().is_empty());
    }

    #[test]
    fn two_halves_are_disjoint_and_cover() {
        let mut label = LabelMask::filled(4, 4, 3);
        for y in 0..4 {
            for x in 2..4 {
                label.set(x, y, 7);
            }
        }
        let masks = extract_class_masks(&label, &small_map()).unwrap();
        assert_eq!(masks.len(), 2);
        assert_eq!(masks[0].class_id(), 3);
        assert_eq!(masks[1].class_id(), 7);
        for i in 0..16 {
            assert_eq!(masks[0].data()[i] + masks[1].data()[i], 1);
        }
    }

    #[test]
    fn unknown_value_names_first_coordinate() {
        let mut label = LabelMask::filled(4, 4, 0);
        label.set(2, 1, 42);
        label.set(3, 3, 42);
        let err = extract_class_masks(&label, &small_map()).unwrap_err();
        assert_eq!(
            err,
            MaskError::UnknownLabelValue {
                value: 42,
                x: 2,
                y: 1
            }
        );
    }

    #[test]
    fn extraction_matches_double_loop_scan() {
        let map = small_map();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let values = [0u8, 1, 2, 255];
        for _ in 0..20 {
            let data: Vec<u8> = (0..64).map(|_| values[rng.random_range(0..4)]).collect();
            let label = LabelMask::new(8, 8, data).unwrap();
            let masks = extract_class_masks(&label, &map).unwrap();
            let mut expected_ids = vec![];
            for c in [1u8, 2] {
                let mut any = false;
                for y in 0..8 {
                    for x in 0..8 {
                        if label.get(x, y) == c {
                            any = true;
                        }
                    }
                }
                if any {
                    expected_ids.push(c);
                }
            }
            assert_eq!(masks.iter().map(|m| m.class_id()).collect::<Vec<_>>(), expected_ids);
            for m in &masks {
                for y in 0..8 {
                    for x in 0..8 {
                        assert_eq!(m.get(x, y), label.get(x, y) == m.class_id());
                    }
                }
            }
        }
    }

    #[test]
    fn dilate_radius_zero_is_identity() {
        let mut m = BinaryMask::zeros(5, 5, 1);
        m.set(1, 3, true);
        assert_eq!(dilate(&m, 0), m);
    }

    #[test]
    fn dilate_center_pixel_to_block() {
        let mut m = BinaryMask::zeros(7, 7, 1);
        m.set(3, 3, true);
        let d = dilate(&m, 1);
        for y in 0..7 {
            for x in 0..7 {
                let inside = (2..=4).contains(&x) && (2..=4).contains(&y);
                assert_eq!(d.get(x, y), inside, "({x},{y})");
            }
        }
    }

    fn brute_max_filter(m: &BinaryMask, r: i64) -> BinaryMask {
        let (w, h) = (m.width() as i64, m.height() as i64);
        let mut out = BinaryMask::zeros(m.width(), m.height(), m.class_id());
        for y in 0..h {
            for x in 0..w {
                let mut on = false;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (xx, yy) = (x + dx, y + dy);
                        if xx >= 0 && yy >= 0 && xx < w && yy < h && m.get(xx as u32, yy as u32) {
                            on = true;
                        }
                    }
                }
                out.set(x as u32, y as u32, on);
            }
        }
        out
    }

    #[test]
    fn dilate_matches_brute_force_max_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let data: Vec<u8> = (0..256).map(|_| u8::from(rng.random_bool(0.08))).collect();
            let m = BinaryMask::from_raw(16, 16, data, 4).unwrap();
            assert_eq!(dilate(&m, 2), brute_max_filter(&m, 2));
        }
    }

    #[test]
    fn composite_with_no_patches_is_identity() {
        let base = RgbImage::from_fn(5, 3, |x, y| Rgb([x as u8, y as u8, 9]));
        assert_eq!(composite(&base, &[]).unwrap(), base);
    }

    #[test]
    fn composite_full_mask_replaces_everything() {
        let base = RgbImage::from_pixel(4, 4, Rgb([255, 0, 0]));
        let blue = RgbImage::from_pixel(4, 4, Rgb([0, 0, 255]));
        let mask = BinaryMask::from_raw(4, 4, vec![1; 16], 1).unwrap();
        let out = composite(&base, &[(blue.clone(), mask)]).unwrap();
        assert_eq!(out, blue);
    }

    #[test]
    fn composite_rejects_overlap_with_location() {
        let base = RgbImage::new(4, 4);
        let mut a = BinaryMask::zeros(4, 4, 3);
        let mut b = BinaryMask::zeros(4, 4, 7);
        a.set(1, 2, true);
        b.set(1, 2, true);
        let err = composite(&base, &[(base.clone(), a), (base.clone(), b)]).unwrap_err();
        assert_eq!(
            err,
            MaskError::Overlap {
                first: 3,
                second: 7,
                x: 1,
                y: 2
            }
        );
    }

    #[test]
    fn composite_rejects_dimension_mismatch() {
        let base = RgbImage::new(4, 4);
        let mask = BinaryMask::zeros(4, 4, 1);
        let err = composite(&base, &[(RgbImage::new(3, 4), mask)]).unwrap_err();
        assert!(matches!(err, MaskError::DimensionMismatch { .. }));
    }

    #[test]
    fn union_and_coverage_basics() {
        let u = union(&[], 3, 2).unwrap();
        assert!(u.is_empty());
        assert_eq!(u.dims(), (3, 2));
        let full = BinaryMask::from_raw(8, 8, vec![1; 64], 1).unwrap();
        assert_eq!(coverage(&full), 1.0);
        assert!(matches!(
            union(&[full], 4, 4),
            Err(MaskError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn union_of_extracted_is_foreground_complement() {
        let map = small_map();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values = [0u8, 1, 2, 3, 255];
        let data: Vec<u8> = (0..100).map(|_| values[rng.random_range(0..5)]).collect();
        let label = LabelMask::new(10, 10, data).unwrap();
        let masks = extract_class_masks(&label, &map).unwrap();
        let u = union(&masks, 10, 10).unwrap();
        for y in 0..10 {
            for x in 0..10 {
                let v = label.get(x, y);
                assert_eq!(u.get(x, y), v != 0 && v != 255);
            }
        }
    }

    #[test]
    fn resize_nearest_keeps_binary_values() {
        let mut m = BinaryMask::zeros(4, 4, 2);
        m.set(0, 0, true);
        let up = m.resize_nearest(8, 8);
        assert_eq!(up.count_ones(), 4);
        assert!(up.get(0, 0) && up.get(1, 1) && !up.get(2, 2));
        assert!(up.data().iter().all(|&v| v <= 1));
    }

    fn label_strategy() -> impl Strategy<Value = LabelMask> {
        (1u32..12, 1u32..12).prop_flat_map(|(w, h)| {
            prop::collection::vec(prop::sample::select(vec![0u8, 1, 2, 3, 255]), (w * h) as usize)
                .prop_map(move |d| LabelMask::new(w, h, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn extracted_masks_partition_foreground(label in label_strategy()) {
            let map = small_map();
            let masks = extract_class_masks(&label, &map).unwrap();
            let refs: Vec<&BinaryMask> = masks.iter().collect();
            prop_assert!(ensure_disjoint(&refs).is_ok());
            let u = union(&masks, label.width(), label.height()).unwrap();
            for (i, &v) in label.data().iter().enumerate() {
                prop_assert_eq!(u.data()[i] == 1, map.is_foreground(v));
            }
        }

        #[test]
        fn composite_respects_masks_and_is_idempotent(label in label_strategy(), seed in any::<u64>()) {
            let map = small_map();
            let masks = extract_class_masks(&label, &map).unwrap();
            let (w, h) = label.dims();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut noise = |_: u32, _: u32| Rgb([rng.random(), rng.random(), rng.random()]);
            let base = RgbImage::from_fn(w, h, &mut noise);
            let patches: Vec<(RgbImage, BinaryMask)> = masks
                .into_iter()
                .map(|m| (RgbImage::from_fn(w, h, &mut noise), m))
                .collect();
            let out = composite(&base, &patches).unwrap();
            for y in 0..h {
                for x in 0..w {
                    let owner = patches.iter().find(|(_, m)| m.get(x, y));
                    let expected = owner.map_or(base.get_pixel(x, y), |(p, _)| p.get_pixel(x, y));
                    prop_assert_eq!(out.get_pixel(x, y), expected);
                }
            }
            prop_assert_eq!(composite(&out, &patches).unwrap(), out);
        }

        #[test]
        fn dilation_is_monotone(bits in prop::collection::vec(any::<bool>(), 81), r in 0u32..4) {
            let m = BinaryMask::from_raw(9, 9, bits.into_iter().map(u8::from).collect(), 1).unwrap();
            let d = dilate(&m, r);
            for i in 0..81 {
                prop_assert!(d.data()[i] >= m.data()[i]);
            }
        }
    }
}
