//! Dataset-level orchestration of both synthesis paths.
//!
//! `d1` regenerates each image as a whole, steered by the blended structure
//! prior and a class-aware prompt. `d2` inpaints each class region separately
//! and pastes the results back onto the untouched real image. Either way the
//! label file is copied verbatim.

use std::path::{Path, PathBuf};
use std::time::Instant;

use image::RgbImage;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::backend::{BackendError, Capability, GenerationBackend, HttpBackend, Img2ImgRequest, InpaintRequest, MockBackend};
use crate::config::{ConfigError, ImagePriorSource, PipelineConfig};
use crate::dataset_io::{
    load_dataset, sha256_hex, write_manifest, write_synthetic_sample, ClassMap, DatasetError, LoadedDataset,
    ManifestEntry, PathTag, Sample, SyntheticRecord, MANIFEST_FILE,
};
use crate::mask_ops::{composite, dilate, extract_class_masks, MaskError};
use crate::prompting::{build_class_aware_prompt, build_inpaint_prompt, PromptSpec};
use crate::raster::resize_rgb;
use crate::visual_prior::{blend, edges_from_image, prior_from_label, resize_prior, PriorError, VisualPrior};

pub const RUN_REPORT_FILE: &str = "run_report.json";
pub const RUN_CONFIG_FILE: &str = "run_config.toml";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("backend does not offer {0}, which this run needs")]
    MissingCapability(Capability),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("sample has no foreground classes")]
    NoClasses,
    #[error("every class inpaint failed: {0}")]
    AllClassesFailed(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

/// Builds the backend named by `spec`: `"mock"` or an `http(s)://` base URL.
pub fn backend_from_spec(spec: &str) -> Result<Box<dyn GenerationBackend>, ConfigError> {
    if spec == "mock" {
        Ok(Box::new(MockBackend::new()))
    } else if spec.starts_with("http://") || spec.starts_with("https://") {
        Ok(Box::new(HttpBackend::new(spec)))
    } else {
        Err(ConfigError::Invalid {
            field: "backend",
            message: format!("{spec:?} is neither \"mock\" nor an http(s) URL"),
        })
    }
}

/// Seed for one generation call, stable across runs, thread counts and
/// sample order.
pub fn derive_seed(run_seed: u64, sample_id: &str, tag: PathTag, variant: u32, class_id: Option<u8>) -> u64 {
    let mut h = Sha256::new();
    h.update(b"segsynth-seed\0");
    h.update(run_seed.to_le_bytes());
    h.update((sample_id.len() as u64).to_le_bytes());
    h.update(sample_id.as_bytes());
    h.update(tag.as_str().as_bytes());
    h.update(variant.to_le_bytes());
    match class_id {
        Some(c) => h.update([1, c]),
        None => h.update([0, 0]),
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn class_names<'a>(sample: &Sample, class_map: &'a ClassMap) -> Vec<&'a str> {
    sample
        .classes
        .iter()
        .filter_map(|&c| class_map.name(c))
        .collect()
}

/// Sidecar caption first, then the backend's captioner, else none.
pub fn resolve_caption(
    sample: &Sample,
    class_map: &ClassMap,
    backend: &dyn GenerationBackend,
    cfg: &PipelineConfig,
    backend_captions: bool,
) -> Option<String> {
    if let Some(c) = &sample.caption {
        return Some(c.clone());
    }
    if !(cfg.use_backend_captions && backend_captions) {
        return None;
    }
    let names: Vec<String> = class_names(sample, class_map).into_iter().map(String::from).collect();
    match backend.caption(&sample.image, &names) {
        Ok(c) => Some(c),
        Err(e) => {
            log::warn!("{}: captioning failed, using class names only: {e}", sample.id);
            None
        }
    }
}

/// The blended structure prior at the sample's own resolution.
pub fn structure_prior(
    sample: &Sample,
    class_map: &ClassMap,
    backend: &dyn GenerationBackend,
    cfg: &PipelineConfig,
) -> Result<VisualPrior, PipelineError> {
    let image_prior = match cfg.image_prior {
        ImagePriorSource::Edges => edges_from_image(&sample.image, &cfg.edge_params)?,
        ImagePriorSource::Backend => {
            let p = backend.prior(&sample.image)?;
            resize_prior(&p, sample.image.width(), sample.image.height())?
        }
    };
    let label_prior = prior_from_label(&sample.label, class_map, cfg.boundary_width)?;
    Ok(blend(&image_prior, &label_prior, cfg.alpha)?)
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub image: RgbImage,
    pub prompt_rendered: String,
    pub seed: u64,
    pub backend_info: String,
    /// Classes whose inpaint failed and were left as real pixels.
    pub class_failures: Vec<(u8, String)>,
}

fn base_request(
    sample: &Sample,
    prior: &VisualPrior,
    prompt: PromptSpec,
    seed: u64,
    cfg: &PipelineConfig,
) -> Result<Img2ImgRequest, PipelineError> {
    let (w, h) = (cfg.gen_resolution.width, cfg.gen_resolution.height);
    Ok(Img2ImgRequest {
        image: resize_rgb(&sample.image, w, h),
        prior: resize_prior(prior, w, h)?,
        prompt,
        params: cfg.gen_params,
        seed,
        width: w,
        height: h,
    })
}

/// Whole-image regeneration.
pub fn generate_d1(
    sample: &Sample,
    class_map: &ClassMap,
    caption: Option<&str>,
    prior: &VisualPrior,
    backend: &dyn GenerationBackend,
    cfg: &PipelineConfig,
    variant: u32,
) -> Result<Generated, PipelineError> {
    let names = class_names(sample, class_map);
    let prompt = build_class_aware_prompt(caption.unwrap_or(""), &names, cfg.class_weight)
        .with_negative(cfg.negative_prompt.clone());
    let prompt_rendered = prompt.rendered();
    let seed = derive_seed(cfg.run_seed, &sample.id, PathTag::D1, variant, None);
    let req = base_request(sample, prior, prompt, seed, cfg)?;
    let resp = backend.img2img(&req)?;
    let (w, h) = sample.dims();
    Ok(Generated {
        image: resize_rgb(&resp.image, w, h),
        prompt_rendered,
        seed,
        backend_info: resp.backend_info,
        class_failures: Vec::new(),
    })
}

/// Per-class inpainting composited onto the real image.
///
/// Inpaint masks are dilated; compositing uses the exact class masks, so
/// pixels outside every class region stay identical to the source.
pub fn generate_d2(
    sample: &Sample,
    class_map: &ClassMap,
    caption: Option<&str>,
    prior: &VisualPrior,
    backend: &dyn GenerationBackend,
    cfg: &PipelineConfig,
    variant: u32,
) -> Result<Generated, PipelineError> {
    let masks = extract_class_masks(&sample.label, class_map)?;
    if masks.is_empty() {
        return Err(PipelineError::NoClasses);
    }
    let (w, h) = sample.dims();
    let (gw, gh) = (cfg.gen_resolution.width, cfg.gen_resolution.height);
    let seed = derive_seed(cfg.run_seed, &sample.id, PathTag::D2, variant, None);

    let mut patches = Vec::with_capacity(masks.len());
    let mut prompts = Vec::with_capacity(masks.len());
    let mut failures = Vec::new();
    let mut backend_info = String::new();
    for mask in masks {
        let class_id = mask.class_id();
        let name = class_map.name(class_id).unwrap_or("object");
        let prompt = build_inpaint_prompt(name, caption, cfg.class_weight).with_negative(cfg.negative_prompt.clone());
        let class_seed = derive_seed(cfg.run_seed, &sample.id, PathTag::D2, variant, Some(class_id));
        let gen_mask = dilate(&mask, cfg.inpaint_dilation_radius).resize_nearest(gw, gh);
        if gen_mask.is_empty() {
            failures.push((class_id, "region vanishes at generation resolution".to_string()));
            continue;
        }
        prompts.push(prompt.rendered());
        let req = InpaintRequest {
            base: base_request(sample, prior, prompt, class_seed, cfg)?,
            mask: gen_mask,
        };
        match backend.inpaint(&req) {
            Ok(resp) => {
                backend_info = resp.backend_info;
                patches.push((resize_rgb(&resp.image, w, h), mask));
            }
            Err(e) => {
                log::warn!("{}: class {class_id} inpaint failed: {e}", sample.id);
                failures.push((class_id, e.to_string()));
            }
        }
    }
    if patches.is_empty() {
        let detail = failures
            .iter()
            .map(|(c, m)| format!("class {c}: {m}"))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(PipelineError::AllClassesFailed(detail));
    }
    Ok(Generated {
        image: composite(&sample.image, &patches)?,
        prompt_rendered: prompts.join(" | "),
        seed,
        backend_info,
        class_failures: failures,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunCounts {
    pub samples: usize,
    pub d1_ok: usize,
    pub d2_ok: usize,
    /// d2 skipped because the label has no foreground class.
    pub d2_skipped: usize,
    pub failed: usize,
    pub class_failures: usize,
    pub load_issues: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Failure {
    pub sample_id: String,
    pub path_tag: Option<PathTag>,
    pub variant: Option<u32>,
    pub class_id: Option<u8>,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub counts: RunCounts,
    pub failures: Vec<Failure>,
    pub load_issues: Vec<String>,
    pub wall_clock_secs: f64,
    pub config_digest: String,
    pub manifest_path: PathBuf,
}

impl RunReport {
    /// True if any requested output or class patch was not produced.
    pub fn has_failures(&self) -> bool {
        self.counts.failed > 0 || self.counts.class_failures > 0
    }
}

#[derive(Default)]
struct SampleOutcome {
    entries: Vec<ManifestEntry>,
    failures: Vec<Failure>,
    d1_ok: usize,
    d2_ok: usize,
    d2_skipped: usize,
    failed: usize,
    class_failures: usize,
}

impl SampleOutcome {
    fn fail(&mut self, sample: &Sample, tag: Option<PathTag>, variant: Option<u32>, message: String) {
        self.failed += 1;
        self.failures.push(Failure {
            sample_id: sample.id.clone(),
            path_tag: tag,
            variant,
            class_id: None,
            message,
        });
    }
}

fn process_sample(
    sample: &Sample,
    class_map: &ClassMap,
    backend: &dyn GenerationBackend,
    cfg: &PipelineConfig,
    backend_captions: bool,
    out_root: &Path,
) -> SampleOutcome {
    let mut out = SampleOutcome::default();
    let caption = resolve_caption(sample, class_map, backend, cfg, backend_captions);
    let prior = match structure_prior(sample, class_map, backend, cfg) {
        Ok(p) => p,
        Err(e) => {
            out.fail(sample, None, None, format!("structure prior: {e}"));
            return out;
        }
    };

    let mut tags = Vec::new();
    if cfg.paths.d1 {
        tags.push(PathTag::D1);
    }
    if cfg.paths.d2 {
        if sample.classes.is_empty() {
            log::info!("{}: no foreground classes, skipping d2", sample.id);
            out.d2_skipped += cfg.variants_per_image as usize;
        } else {
            tags.push(PathTag::D2);
        }
    }

    for variant in 0..cfg.variants_per_image {
        for &tag in &tags {
            let generated = match tag {
                PathTag::D1 => generate_d1(sample, class_map, caption.as_deref(), &prior, backend, cfg, variant),
                PathTag::D2 => generate_d2(sample, class_map, caption.as_deref(), &prior, backend, cfg, variant),
            };
            let generated = match generated {
                Ok(g) => g,
                Err(e) => {
                    log::warn!("{} {tag} v{variant}: {e}", sample.id);
                    out.fail(sample, Some(tag), Some(variant), e.to_string());
                    continue;
                }
            };
            for (class_id, message) in &generated.class_failures {
                out.class_failures += 1;
                out.failures.push(Failure {
                    sample_id: sample.id.clone(),
                    path_tag: Some(tag),
                    variant: Some(variant),
                    class_id: Some(*class_id),
                    message: message.clone(),
                });
            }
            let record = SyntheticRecord {
                path_tag: tag,
                variant,
                seed: generated.seed,
                prompt_rendered: generated.prompt_rendered,
                alpha: cfg.alpha,
                backend_info: generated.backend_info,
            };
            match write_synthetic_sample(out_root, sample, &generated.image, record) {
                Ok(entry) => {
                    match tag {
                        PathTag::D1 => out.d1_ok += 1,
                        PathTag::D2 => out.d2_ok += 1,
                    }
                    out.entries.push(entry);
                }
                Err(e) => out.fail(sample, Some(tag), Some(variant), format!("write: {e}")),
            }
        }
    }
    out
}

/// Generates every requested output for an already-loaded dataset and
/// writes the manifest, run report and effective config under `out_root`.
///
/// Startup problems (unreachable backend, missing capability, unwritable
/// output root) abort with an error; per-sample failures are collected in
/// the report.
pub fn run_dataset(
    cfg: &PipelineConfig,
    dataset: &LoadedDataset,
    class_map: &ClassMap,
    backend: &dyn GenerationBackend,
    out_root: &Path,
) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let started = Instant::now();
    let health = backend.health()?;
    let mut needed = Vec::new();
    if cfg.paths.d1 {
        needed.push(Capability::Img2img);
    }
    if cfg.paths.d2 {
        needed.push(Capability::Inpaint);
    }
    if cfg.image_prior == ImagePriorSource::Backend {
        needed.push(Capability::Prior);
    }
    if let Some(&cap) = needed.iter().find(|&&c| !health.supports(c)) {
        return Err(PipelineError::MissingCapability(cap));
    }
    let backend_captions = health.supports(Capability::Caption);

    std::fs::create_dir_all(out_root).map_err(|e| PipelineError::Io {
        path: out_root.to_path_buf(),
        message: e.to_string(),
    })?;
    let write_text = |name: &str, text: &str| {
        let path = out_root.join(name);
        std::fs::write(&path, text).map_err(|e| PipelineError::Io {
            path,
            message: e.to_string(),
        })
    };
    write_text(RUN_CONFIG_FILE, &cfg.to_toml_string())?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| PipelineError::Io {
            path: out_root.to_path_buf(),
            message: format!("thread pool: {e}"),
        })?;
    let outcomes: Vec<SampleOutcome> = pool.install(|| {
        dataset
            .samples
            .par_iter()
            .map(|s| process_sample(s, class_map, backend, cfg, backend_captions, out_root))
            .collect()
    });

    let mut counts = RunCounts {
        samples: dataset.samples.len(),
        load_issues: dataset.issues.len(),
        ..RunCounts::default()
    };
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        counts.d1_ok += o.d1_ok;
        counts.d2_ok += o.d2_ok;
        counts.d2_skipped += o.d2_skipped;
        counts.failed += o.failed;
        counts.class_failures += o.class_failures;
        entries.extend(o.entries);
        failures.extend(o.failures);
    }

    // Written labels must still match their sources byte for byte.
    for sample in &dataset.samples {
        let source_digest = match std::fs::read(&sample.label_path) {
            Ok(bytes) => sha256_hex(&bytes),
            Err(e) => {
                failures.push(Failure {
                    sample_id: sample.id.clone(),
                    path_tag: None,
                    variant: None,
                    class_id: None,
                    message: format!("source label unreadable after run: {e}"),
                });
                counts.failed += 1;
                continue;
            }
        };
        for entry in entries.iter().filter(|e| e.source_id == sample.id) {
            let written = std::fs::read(out_root.join(&entry.label_path)).map(|b| sha256_hex(&b));
            if written.as_deref().ok() != Some(source_digest.as_str()) || entry.label_sha256 != source_digest {
                failures.push(Failure {
                    sample_id: sample.id.clone(),
                    path_tag: Some(entry.path_tag),
                    variant: Some(entry.variant),
                    class_id: None,
                    message: format!("label copy {} differs from source", entry.label_path),
                });
                counts.failed += 1;
            }
        }
    }

    let manifest_path = out_root.join(MANIFEST_FILE);
    write_manifest(&manifest_path, &entries)?;
    let report = RunReport {
        counts,
        failures,
        load_issues: dataset
            .issues
            .iter()
            .map(|i| format!("{}: {}", i.id, i.message))
            .collect(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
        config_digest: cfg.digest(),
        manifest_path,
    };
    write_text(
        RUN_REPORT_FILE,
        &serde_json::to_string_pretty(&report).expect("report always serializes"),
    )?;
    Ok(report)
}

/// Loads the dataset at `cfg.data_root`, builds the configured backend and
/// runs to `cfg.out_root`.
pub fn run(cfg: &PipelineConfig) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let missing = |field| ConfigError::Invalid {
        field,
        message: "not set".into(),
    };
    let data_root = cfg.data_root.as_deref().ok_or_else(|| missing("data_root"))?;
    let out_root = cfg.out_root.as_deref().ok_or_else(|| missing("out_root"))?;
    let class_map = cfg.dataset.class_map.resolve()?;
    let backend = backend_from_spec(&cfg.backend)?;
    let dataset = load_dataset(data_root, cfg.dataset.layout, &class_map)?;
    for issue in &dataset.issues {
        log::warn!("{}: {}", issue.id, issue.message);
    }
    run_dataset(cfg, &dataset, &class_map, backend.as_ref(), out_root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{GenResponse, Health};
    use crate::mask_ops::LabelMask;
    use image::Rgb;
    use std::collections::HashSet;
    use std::sync::Mutex;

    fn map() -> ClassMap {
        ClassMap::from_names(&["background", "cat", "dog"], Some(255)).unwrap()
    }

    fn sample(id: &str, classes: &[u8]) -> Sample {
        let (w, h) = (24, 16);
        let mut label = LabelMask::filled(w, h, 0);
        for (i, &c) in classes.iter().enumerate() {
            for y in 2..10 {
                for x in 2 + i as u32 * 10..8 + i as u32 * 10 {
                    label.set(x, y, c);
                }
            }
        }
        Sample {
            id: id.into(),
            image: RgbImage::from_fn(w, h, |x, y| Rgb([(x * 9) as u8, (y * 13) as u8, 90])),
            classes: label.present_classes(&map()),
            label,
            caption: None,
            image_path: PathBuf::new(),
            label_path: PathBuf::new(),
        }
    }

    fn cfg() -> PipelineConfig {
        PipelineConfig {
            gen_resolution: crate::config::Resolution { width: 32, height: 32 },
            inpaint_dilation_radius: 1,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn seeds_are_distinct_across_coordinates() {
        let mut seen = HashSet::new();
        for id in ["a", "b"] {
            for tag in [PathTag::D1, PathTag::D2] {
                for v in 0..3 {
                    for class in [None, Some(1), Some(2)] {
                        assert!(seen.insert(derive_seed(7, id, tag, v, class)));
                    }
                }
            }
        }
        assert_eq!(derive_seed(7, "a", PathTag::D1, 0, None), derive_seed(7, "a", PathTag::D1, 0, None));
        assert_ne!(derive_seed(7, "a", PathTag::D1, 0, None), derive_seed(8, "a", PathTag::D1, 0, None));
    }

    /// Records every request and fails inpaint for one class id's seed.
    #[derive(Default)]
    struct Recording {
        inner: MockBackend,
        img2img: Mutex<Vec<Img2ImgRequest>>,
        inpaint: Mutex<Vec<InpaintRequest>>,
        fail_seed: Option<u64>,
    }

    impl GenerationBackend for Recording {
        fn health(&self) -> Result<Health, BackendError> {
            self.inner.health()
        }
        fn img2img(&self, req: &Img2ImgRequest) -> Result<GenResponse, BackendError> {
            self.img2img.lock().unwrap().push(req.clone());
            self.inner.img2img(req)
        }
        fn inpaint(&self, req: &InpaintRequest) -> Result<GenResponse, BackendError> {
            self.inpaint.lock().unwrap().push(req.clone());
            if Some(req.base.seed) == self.fail_seed {
                return Err(BackendError::Transport("boom".into()));
            }
            self.inner.inpaint(req)
        }
        fn caption(&self, image: &RgbImage, names: &[String]) -> Result<String, BackendError> {
            self.inner.caption(image, names)
        }
        fn prior(&self, image: &RgbImage) -> Result<VisualPrior, BackendError> {
            self.inner.prior(image)
        }
    }

    #[test]
    fn d1_prompt_weights_present_classes_and_output_keeps_size() {
        let s = sample("s", &[1, 2]);
        let rec = Recording::default();
        let c = cfg();
        let prior = structure_prior(&s, &map(), &rec, &c).unwrap();
        let g = generate_d1(&s, &map(), Some("a cat near a sofa"), &prior, &rec, &c, 0).unwrap();
        assert_eq!(g.image.dimensions(), s.dims());
        assert_eq!(g.prompt_rendered, "a (cat)++ near a sofa, (dog)++");
        let req = &rec.img2img.lock().unwrap()[0];
        assert_eq!((req.width, req.height), (32, 32));
        assert_eq!(req.prior.dims(), (32, 32));
    }

    #[test]
    fn zero_alpha_sends_only_the_label_outline() {
        let s = sample("s", &[1]);
        let rec = Recording::default();
        let c = PipelineConfig {
            alpha: 0.0,
            gen_resolution: crate::config::Resolution { width: 24, height: 16 },
            ..cfg()
        };
        let prior = structure_prior(&s, &map(), &rec, &c).unwrap();
        generate_d1(&s, &map(), None, &prior, &rec, &c, 0).unwrap();
        let sent = &rec.img2img.lock().unwrap()[0].prior;
        let outline = prior_from_label(&s.label, &map(), c.boundary_width).unwrap();
        assert_eq!(sent.data(), outline.data());
    }

    #[test]
    fn d2_inpaints_classes_in_order_and_keeps_background() {
        let s = sample("s", &[2, 1]);
        let rec = Recording::default();
        let c = cfg();
        let prior = structure_prior(&s, &map(), &rec, &c).unwrap();
        let g = generate_d2(&s, &map(), None, &prior, &rec, &c, 0).unwrap();
        let reqs = rec.inpaint.lock().unwrap();
        assert_eq!(reqs.len(), 2);
        assert_eq!(g.prompt_rendered, "A photograph of (cat)++ | A photograph of (dog)++");
        for (x, y, px) in g.image.enumerate_pixels() {
            if s.label.get(x, y) == 0 {
                assert_eq!(px, s.image.get_pixel(x, y));
            }
        }
        assert_ne!(g.image, s.image);
    }

    #[test]
    fn d2_single_class_failure_leaves_region_real() {
        let s = sample("s", &[1, 2]);
        let c = cfg();
        let rec = Recording {
            fail_seed: Some(derive_seed(c.run_seed, "s", PathTag::D2, 0, Some(2))),
            ..Recording::default()
        };
        let prior = structure_prior(&s, &map(), &rec, &c).unwrap();
        let g = generate_d2(&s, &map(), None, &prior, &rec, &c, 0).unwrap();
        assert_eq!(g.class_failures.len(), 1);
        assert_eq!(g.class_failures[0].0, 2);
        for (x, y, px) in g.image.enumerate_pixels() {
            if s.label.get(x, y) != 1 {
                assert_eq!(px, s.image.get_pixel(x, y));
            }
        }
    }

    #[test]
    fn d2_without_classes_is_an_error() {
        let s = sample("s", &[]);
        let rec = Recording::default();
        let prior = VisualPrior::zeros(24, 16, crate::visual_prior::PriorSource::Blended);
        assert!(matches!(
            generate_d2(&s, &map(), None, &prior, &rec, &cfg(), 0),
            Err(PipelineError::NoClasses)
        ));
    }

    #[test]
    fn missing_capability_aborts_before_work() {
        let dir = tempfile::tempdir().unwrap();
        let backend = MockBackend::with_capabilities(vec![Capability::Img2img]);
        let err = run_dataset(&cfg(), &LoadedDataset::default(), &map(), &backend, dir.path()).unwrap_err();
        assert!(matches!(err, PipelineError::MissingCapability(Capability::Inpaint)));
        assert!(!dir.path().join(MANIFEST_FILE).exists());
    }

    #[test]
    fn backend_spec_parsing() {
        assert!(backend_from_spec("mock").is_ok());
        assert!(backend_from_spec("http://127.0.0.1:9").is_ok());
        assert!(backend_from_spec("ftp://x").is_err());
    }
}
