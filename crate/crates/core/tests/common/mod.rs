#![allow(dead_code)]

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segsynth::dataset_io::{encode_indexed_png, sha256_hex};
use segsynth::mask_ops::LabelMask;

pub const VOID: u8 = 255;

/// Textured photo-like image: a gradient plus per-pixel noise.
pub fn photo(w: u32, h: u32, rng: &mut ChaCha8Rng) -> RgbImage {
    let base: [u8; 3] = std::array::from_fn(|_| rng.random_range(40..200));
    RgbImage::from_fn(w, h, |x, y| {
        Rgb(std::array::from_fn(|c| {
            let g = (x * (c as u32 + 1) + y * 2) as i32 / 3;
            (base[c] as i32 + g + rng.random_range(-12..=12)).clamp(0, 255) as u8
        }))
    })
}

/// Up to `classes.len()` rectangles, each outlined by a void ring on one side.
pub fn label(w: u32, h: u32, classes: &[u8], rng: &mut ChaCha8Rng) -> LabelMask {
    let mut label = LabelMask::filled(w, h, 0);
    let n = rng.random_range(1..=classes.len());
    for (i, &c) in classes.iter().take(n).enumerate() {
        let x0 = rng.random_range(0..w / 2);
        let y0 = rng.random_range(0..h / 2);
        let x1 = (x0 + rng.random_range(w / 8..w / 2)).min(w);
        let y1 = (y0 + rng.random_range(h / 8..h / 2)).min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                label.set(x, y, c);
            }
        }
        if i == 0 && y1 < h {
            for x in x0..x1 {
                label.set(x, y1, VOID);
            }
        }
    }
    label
}

/// Writes `images/` and `labels/` for `n` samples under `root` and returns
/// their ids.
pub fn write_voc_dataset(root: &Path, n: usize, w: u32, h: u32, classes: &[u8], seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::fs::create_dir_all(root.join("images")).unwrap();
    std::fs::create_dir_all(root.join("labels")).unwrap();
    (0..n)
        .map(|i| {
            let id = format!("s{i:03}");
            photo(w, h, &mut rng).save(root.join(format!("images/{id}.png"))).unwrap();
            let l = label(w, h, classes, &mut rng);
            std::fs::write(root.join(format!("labels/{id}.png")), encode_indexed_png(&l)).unwrap();
            id
        })
        .collect()
}

/// Adds a sample whose label is background and void only.
pub fn write_empty_sample(root: &Path, id: &str, w: u32, h: u32) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    photo(w, h, &mut rng).save(root.join(format!("images/{id}.png"))).unwrap();
    let mut l = LabelMask::filled(w, h, 0);
    l.set(0, 0, VOID);
    std::fs::write(root.join(format!("labels/{id}.png")), encode_indexed_png(&l)).unwrap();
}

/// SHA-256 of every file under `root`, keyed by relative path, skipping
/// files whose name is in `skip`.
pub fn tree_digests(root: &Path, skip: &[&str]) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if !skip.iter().any(|s| path.file_name().unwrap() == *s) {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, sha256_hex(&std::fs::read(&path).unwrap())));
            }
        }
    }
    out.sort();
    out
}
