mod common;

use std::path::Path;
use std::sync::Mutex;

use image::RgbImage;
use segsynth::backend::{
    BackendError, GenResponse, GenerationBackend, Health, Img2ImgRequest, InpaintRequest, MockBackend,
};
use segsynth::config::{Paths, PipelineConfig, Resolution};
use segsynth::dataset_io::{load_dataset, load_manifest, ClassMap, Layout, PathTag, MANIFEST_FILE};
use segsynth::mask_ops::{extract_class_masks, LabelMask};
use segsynth::pipeline::{derive_seed, generate_d2, run_dataset, structure_prior};
use segsynth::raster::resize_rgb;
use segsynth::visual_prior::VisualPrior;
use segsynth::{run, verify_run};

const CLASSES: [u8; 3] = [8, 12, 15];

fn config(data: &Path, out: &Path) -> PipelineConfig {
    PipelineConfig {
        gen_resolution: Resolution { width: 64, height: 64 },
        data_root: Some(data.to_path_buf()),
        out_root: Some(out.to_path_buf()),
        run_seed: 11,
        ..PipelineConfig::default()
    }
}

#[test]
fn both_paths_produce_two_entries_per_sample() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, out) = (tmp.path().join("data"), tmp.path().join("out"));
    common::write_voc_dataset(&data, 5, 48, 40, &CLASSES, 1);
    let report = run(&config(&data, &out)).unwrap();
    assert_eq!(report.counts.samples, 5);
    assert_eq!((report.counts.d1_ok, report.counts.d2_ok, report.counts.failed), (5, 5, 0));
    let manifest = load_manifest(&out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.len(), 10);
    for e in &manifest {
        assert!(out.join(&e.image_path).is_file());
        assert_eq!(e.alpha, 0.8);
        assert_eq!(e.backend_info, "mock/1");
    }
    let qa = verify_run(&out, &data, Layout::VocIndexed, &ClassMap::voc()).unwrap();
    assert!(qa.passed(), "{qa:#?}");
    assert!(out.join("qa_report.json").is_file());
}

#[test]
fn disabled_d1_writes_only_d2() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, out) = (tmp.path().join("data"), tmp.path().join("out"));
    common::write_voc_dataset(&data, 3, 32, 32, &CLASSES, 2);
    let cfg = PipelineConfig {
        paths: Paths { d1: false, d2: true },
        ..config(&data, &out)
    };
    run(&cfg).unwrap();
    let manifest = load_manifest(&out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.len(), 3);
    assert!(manifest.iter().all(|e| e.path_tag == PathTag::D2));
    assert!(!out.join("d1").exists());
}

#[test]
fn variants_differ_but_share_the_label() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, out) = (tmp.path().join("data"), tmp.path().join("out"));
    common::write_voc_dataset(&data, 2, 32, 32, &CLASSES, 3);
    let cfg = PipelineConfig {
        variants_per_image: 3,
        paths: Paths { d1: true, d2: false },
        ..config(&data, &out)
    };
    run(&cfg).unwrap();
    let manifest = load_manifest(&out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.len(), 6);
    for id in ["s000", "s001"] {
        let entries: Vec<_> = manifest.iter().filter(|e| e.source_id == id).collect();
        assert_eq!(entries.len(), 3);
        let images: Vec<RgbImage> = entries
            .iter()
            .map(|e| image::open(out.join(&e.image_path)).unwrap().to_rgb8())
            .collect();
        assert_ne!(images[0], images[1]);
        assert_ne!(images[1], images[2]);
        assert_ne!(images[0], images[2]);
        let seeds: std::collections::HashSet<u64> = entries.iter().map(|e| e.seed).collect();
        assert_eq!(seeds.len(), 3);
        assert!(entries.iter().all(|e| e.label_sha256 == entries[0].label_sha256));
    }
}

#[test]
fn label_free_sample_skips_d2_and_reconciles_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, out) = (tmp.path().join("data"), tmp.path().join("out"));
    common::write_voc_dataset(&data, 2, 32, 32, &CLASSES, 4);
    common::write_empty_sample(&data, "blank", 32, 32);
    let report = run(&config(&data, &out)).unwrap();
    let c = &report.counts;
    assert_eq!((c.samples, c.d1_ok, c.d2_ok, c.d2_skipped, c.failed), (3, 3, 2, 1, 0));
    assert_eq!(load_manifest(&out.join(MANIFEST_FILE)).unwrap().len(), c.d1_ok + c.d2_ok);
    assert!(!report.has_failures());
}

#[test]
fn repeated_runs_are_byte_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    common::write_voc_dataset(&data, 4, 40, 24, &CLASSES, 5);
    let mut digests = Vec::new();
    for (i, k) in [1usize, 4].into_iter().enumerate() {
        let out = tmp.path().join(format!("out{i}"));
        let cfg = PipelineConfig {
            parallelism: k,
            ..config(&data, &out)
        };
        run(&cfg).unwrap();
        digests.push(common::tree_digests(&out, &["run_report.json", "run_config.toml"]));
    }
    assert_eq!(digests[0], digests[1]);
}

/// Delegates to the mock, optionally failing img2img, and records inpaint
/// requests in order.
#[derive(Default)]
struct Flaky {
    mock: MockBackend,
    fail_img2img: bool,
    inpaints: Mutex<Vec<InpaintRequest>>,
}

impl GenerationBackend for Flaky {
    fn health(&self) -> Result<Health, BackendError> {
        self.mock.health()
    }
    fn img2img(&self, req: &Img2ImgRequest) -> Result<GenResponse, BackendError> {
        if self.fail_img2img {
            return Err(BackendError::Transport("connection reset".into()));
        }
        self.mock.img2img(req)
    }
    fn inpaint(&self, req: &InpaintRequest) -> Result<GenResponse, BackendError> {
        self.inpaints.lock().unwrap().push(req.clone());
        self.mock.inpaint(req)
    }
    fn caption(&self, image: &RgbImage, names: &[String]) -> Result<String, BackendError> {
        self.mock.caption(image, names)
    }
    fn prior(&self, image: &RgbImage) -> Result<VisualPrior, BackendError> {
        self.mock.prior(image)
    }
}

#[test]
fn failed_d1_is_recorded_and_run_continues() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, out) = (tmp.path().join("data"), tmp.path().join("out"));
    common::write_voc_dataset(&data, 3, 32, 32, &CLASSES, 6);
    let map = ClassMap::voc();
    let dataset = load_dataset(&data, Layout::VocIndexed, &map).unwrap();
    let backend = Flaky {
        fail_img2img: true,
        ..Flaky::default()
    };
    let report = run_dataset(&config(&data, &out), &dataset, &map, &backend, &out).unwrap();
    assert_eq!((report.counts.d1_ok, report.counts.d2_ok, report.counts.failed), (0, 3, 3));
    assert!(report.failures.iter().all(|f| f.path_tag == Some(PathTag::D1)));
    assert!(report.has_failures());
    assert_eq!(load_manifest(&out.join(MANIFEST_FILE)).unwrap().len(), 3);
}

#[test]
fn d2_requests_follow_class_order_and_match_compositing_oracle() {
    let (w, h) = (20u32, 14u32);
    let mut label = LabelMask::filled(w, h, 0);
    for y in 2..8 {
        for x in 1..7 {
            label.set(x, y, 7);
        }
        for x in 10..18 {
            label.set(x, y + 4, 3);
        }
    }
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(2);
    let map = ClassMap::voc();
    let sample = segsynth::dataset_io::Sample {
        id: "pair".into(),
        image: common::photo(w, h, &mut rng),
        classes: label.present_classes(&map),
        label: label.clone(),
        caption: Some("a cat and a bus".into()),
        image_path: "pair.png".into(),
        label_path: "pair_label.png".into(),
    };
    let backend = Flaky::default();
    let cfg = PipelineConfig {
        gen_resolution: Resolution { width: 32, height: 24 },
        ..PipelineConfig::default()
    };
    let prior = structure_prior(&sample, &map, &backend, &cfg).unwrap();
    let out = generate_d2(&sample, &map, sample.caption.as_deref(), &prior, &backend, &cfg, 0).unwrap();

    let reqs = backend.inpaints.lock().unwrap();
    assert_eq!(reqs.len(), 2);
    assert_eq!(reqs[0].base.seed, derive_seed(cfg.run_seed, "pair", PathTag::D2, 0, Some(3)));
    assert_eq!(reqs[1].base.seed, derive_seed(cfg.run_seed, "pair", PathTag::D2, 0, Some(7)));

    // Replay the requests and evaluate the merge pixel by pixel.
    let patches: Vec<RgbImage> = reqs
        .iter()
        .map(|r| resize_rgb(&MockBackend::new().inpaint(r).unwrap().image, w, h))
        .collect();
    let masks = extract_class_masks(&label, &map).unwrap();
    for y in 0..h {
        for x in 0..w {
            let covered: u32 = masks.iter().map(|m| m.get(x, y) as u32).sum();
            let expect: [u32; 3] = std::array::from_fn(|c| {
                let mut v = sample.image.get_pixel(x, y)[c] as u32 * (1 - covered);
                for (m, p) in masks.iter().zip(&patches) {
                    v += p.get_pixel(x, y)[c] as u32 * m.get(x, y) as u32;
                }
                v
            });
            let got = out.image.get_pixel(x, y).0.map(u32::from);
            assert_eq!(got, expect, "pixel ({x}, {y})");
        }
    }
}

#[test]
fn verify_flags_tampered_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, out) = (tmp.path().join("data"), tmp.path().join("out"));
    common::write_voc_dataset(&data, 2, 32, 32, &CLASSES, 7);
    run(&config(&data, &out)).unwrap();
    let manifest = load_manifest(&out.join(MANIFEST_FILE)).unwrap();
    let map = ClassMap::voc();

    // Background pixel of a d2 image.
    let d2 = manifest.iter().find(|e| e.path_tag == PathTag::D2).unwrap();
    let dataset = load_dataset(&data, Layout::VocIndexed, &map).unwrap();
    let src = dataset.samples.iter().find(|s| s.id == d2.source_id).unwrap();
    let (bx, by) = (0..32u32)
        .flat_map(|y| (0..32u32).map(move |x| (x, y)))
        .find(|&(x, y)| src.label.get(x, y) == 0)
        .unwrap();
    let path = out.join(&d2.image_path);
    let mut img = image::open(&path).unwrap().to_rgb8();
    img.get_pixel_mut(bx, by).0[0] ^= 0x80;
    img.save(&path).unwrap();

    // A d1 label copy.
    let d1 = manifest.iter().find(|e| e.path_tag == PathTag::D1).unwrap();
    let mut bytes = std::fs::read(out.join(&d1.label_path)).unwrap();
    bytes.push(0);
    std::fs::write(out.join(&d1.label_path), bytes).unwrap();

    let qa = verify_run(&out, &data, Layout::VocIndexed, &map).unwrap();
    assert_eq!(qa.aggregate.failures, 2);
    let c2 = qa.entries.iter().find(|c| c.synthetic_id == d2.synthetic_id).unwrap();
    assert_eq!(c2.outside_mask_unchanged, Some(false));
    let c1 = qa.entries.iter().find(|c| c.synthetic_id == d1.synthetic_id).unwrap();
    assert!(!c1.label_digest_match);
}

#[test]
fn missing_data_root_aborts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(&tmp.path().join("nope"), &tmp.path().join("out"));
    assert!(matches!(run(&cfg), Err(segsynth::pipeline::PipelineError::Dataset(_))));
}
