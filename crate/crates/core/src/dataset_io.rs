//! Dataset loading, synthetic-output persistence and the run manifest.
//!
//! Input layout is `root/images/<stem>.{png,jpg,jpeg}` paired with
//! `root/labels/<stem>.png`, plus optional `root/images/<stem>.caption.txt`
//! sidecars. Output layout is `out_root/{d1,d2}/{images,labels}` with one
//! `manifest.jsonl` at `out_root`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Cursor, Write};
use std::path::{Path, PathBuf};

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::mask_ops::{LabelMask, MaskError};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CAPTION_SUFFIX: &str = ".caption.txt";

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid dataset layout: {0}")]
    Layout(String),
    #[error("{path}: cannot decode: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("invalid class map: {0}")]
    ClassMap(String),
    #[error("generated image is {actual:?}, sample is {expected:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassEntry {
    pub class_id: u8,
    pub class_name: String,
    #[serde(default)]
    pub is_background: bool,
}

/// The labelled classes of a dataset plus the optional void value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawClassMap", into = "RawClassMap")]
pub struct ClassMap {
    entries: Vec<ClassEntry>,
    void_id: Option<u8>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClassMap {
    entries: Vec<ClassEntry>,
    #[serde(default)]
    void_id: Option<u8>,
}

impl TryFrom<RawClassMap> for ClassMap {
    type Error = DatasetError;
    fn try_from(raw: RawClassMap) -> Result<Self, Self::Error> {
        ClassMap::new(raw.entries, raw.void_id)
    }
}

impl From<ClassMap> for RawClassMap {
    fn from(map: ClassMap) -> Self {
        RawClassMap {
            entries: map.entries,
            void_id: map.void_id,
        }
    }
}

const VOC_NAMES: [&str; 21] = [
    "background",
    "aeroplane",
    "bicycle",
    "bird",
    "boat",
    "bottle",
    "bus",
    "car",
    "cat",
    "chair",
    "cow",
    "dining table",
    "dog",
    "horse",
    "motorbike",
    "person",
    "potted plant",
    "sheep",
    "sofa",
    "train",
    "tv monitor",
];

impl ClassMap {
    pub fn new(entries: Vec<ClassEntry>, void_id: Option<u8>) -> Result<Self, DatasetError> {
        let mut seen = [false; 256];
        for e in &entries {
            if std::mem::replace(&mut seen[e.class_id as usize], true) {
                return Err(DatasetError::ClassMap(format!(
                    "duplicate class_id {}",
                    e.class_id
                )));
            }
            if e.class_name.trim().is_empty() {
                return Err(DatasetError::ClassMap(format!(
                    "class_id {} has an empty name",
                    e.class_id
                )));
            }
        }
        if entries.iter().filter(|e| e.is_background).count() > 1 {
            return Err(DatasetError::ClassMap(
                "more than one background entry".into(),
            ));
        }
        if let Some(v) = void_id {
            if seen[v as usize] {
                return Err(DatasetError::ClassMap(format!(
                    "void_id {v} is also a class_id"
                )));
            }
        }
        Ok(Self { entries, void_id })
    }

    /// `names[i]` gets class id `i`; `names[0]` is the background.
    pub fn from_names(names: &[&str], void_id: Option<u8>) -> Result<Self, DatasetError> {
        let entries = names
            .iter()
            .enumerate()
            .map(|(i, n)| ClassEntry {
                class_id: i as u8,
                class_name: (*n).to_string(),
                is_background: i == 0,
            })
            .collect();
        Self::new(entries, void_id)
    }

    /// The 21-class Pascal VOC map with void 255.
    pub fn voc() -> Self {
        Self::from_names(&VOC_NAMES, Some(255)).expect("static VOC map is valid")
    }

    /// Background (id 0) plus one foreground class (id 1), for 0/255 masks.
    pub fn binary(foreground: &str) -> Self {
        Self::from_names(&["background", foreground], None).expect("binary map is valid")
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.entries
    }

    pub fn void_id(&self) -> Option<u8> {
        self.void_id
    }

    pub fn background_id(&self) -> Option<u8> {
        self.entries
            .iter()
            .find(|e| e.is_background)
            .map(|e| e.class_id)
    }

    /// True for class ids that are neither background nor void.
    pub fn is_foreground(&self, value: u8) -> bool {
        self.entries
            .iter()
            .any(|e| e.class_id == value && !e.is_background)
    }

    pub fn name(&self, class_id: u8) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.class_id == class_id)
            .map(|e| e.class_name.as_str())
    }

    fn foreground_ids(&self) -> Vec<u8> {
        self.entries
            .iter()
            .filter(|e| !e.is_background)
            .map(|e| e.class_id)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// Palette-indexed PNG labels; pixel value = palette index = class id.
    VocIndexed,
    /// Single-channel 0/255 labels for one foreground class.
    BinaryMasks,
}

impl std::str::FromStr for Layout {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "voc-indexed" => Ok(Layout::VocIndexed),
            "binary-masks" => Ok(Layout::BinaryMasks),
            other => Err(format!(
                "unknown layout {other:?} (expected voc-indexed or binary-masks)"
            )),
        }
    }
}

/// One real image with its label.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub image: RgbImage,
    pub label: LabelMask,
    /// Foreground class ids present in `label`, ascending.
    pub classes: Vec<u8>,
    pub caption: Option<String>,
    pub image_path: PathBuf,
    pub label_path: PathBuf,
}

impl Sample {
    pub fn dims(&self) -> (u32, u32) {
        self.image.dimensions()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadIssueKind {
    MissingLabel,
    MissingImage,
    DimensionMismatch,
    Decode,
    InvalidLabel,
}

#[derive(Debug, Clone)]
pub struct LoadIssue {
    pub id: String,
    pub kind: LoadIssueKind,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedDataset {
    pub samples: Vec<Sample>,
    pub issues: Vec<LoadIssue>,
}

fn list_files(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_file() {
            out.push(path);
        }
    }
    Ok(out)
}

fn extension_lower(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

fn stem_of(path: &Path) -> Option<String> {
    path.file_stem().and_then(|s| s.to_str()).map(str::to_owned)
}

/// Loads every matched image/label pair under `root`, sorted by id.
///
/// Unpaired files and undecodable or inconsistent pairs are reported in
/// [`LoadedDataset::issues`] rather than failing the whole load.
pub fn load_dataset(
    root: &Path,
    layout: Layout,
    class_map: &ClassMap,
) -> Result<LoadedDataset, DatasetError> {
    let images_dir = root.join("images");
    let labels_dir = root.join("labels");
    for dir in [&images_dir, &labels_dir] {
        if !dir.is_dir() {
            return Err(DatasetError::Layout(format!(
                "{} is not a directory",
                dir.display()
            )));
        }
    }
    if layout == Layout::BinaryMasks && class_map.foreground_ids().len() != 1 {
        return Err(DatasetError::ClassMap(
            "binary-masks layout needs exactly one foreground class".into(),
        ));
    }

    let mut images: BTreeMap<String, PathBuf> = BTreeMap::new();
    for path in list_files(&images_dir)? {
        let is_image = extension_lower(&path).is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str()));
        if let (true, Some(stem)) = (is_image, stem_of(&path)) {
            images.insert(stem, path);
        }
    }
    let mut labels: BTreeMap<String, PathBuf> = BTreeMap::new();
    for path in list_files(&labels_dir)? {
        if let (Some("png"), Some(stem)) = (extension_lower(&path).as_deref(), stem_of(&path)) {
            labels.insert(stem, path);
        }
    }

    let mut issues = Vec::new();
    let mut pairs = Vec::new();
    for (id, image_path) in &images {
        match labels.get(id) {
            Some(label_path) => pairs.push((id.clone(), image_path.clone(), label_path.clone())),
            None => issues.push(LoadIssue {
                id: id.clone(),
                kind: LoadIssueKind::MissingLabel,
                message: format!("no label for {}", image_path.display()),
            }),
        }
    }
    for (id, label_path) in &labels {
        if !images.contains_key(id) {
            issues.push(LoadIssue {
                id: id.clone(),
                kind: LoadIssueKind::MissingImage,
                message: format!("no image for {}", label_path.display()),
            });
        }
    }

    let results: Vec<Result<Sample, LoadIssue>> = pairs
        .into_par_iter()
        .map(|(id, image_path, label_path)| {
            load_pair(&id, &image_path, &label_path, layout, class_map)
        })
        .collect();

    let mut samples = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(s) => samples.push(s),
            Err(issue) => issues.push(issue),
        }
    }
    Ok(LoadedDataset { samples, issues })
}

fn load_pair(
    id: &str,
    image_path: &Path,
    label_path: &Path,
    layout: Layout,
    class_map: &ClassMap,
) -> Result<Sample, LoadIssue> {
    let issue = |kind, message: String| LoadIssue {
        id: id.to_string(),
        kind,
        message,
    };
    let image = image::open(image_path)
        .map_err(|e| issue(LoadIssueKind::Decode, format!("{}: {e}", image_path.display())))?
        .to_rgb8();
    let bytes = fs::read(label_path)
        .map_err(|e| issue(LoadIssueKind::Decode, format!("{}: {e}", label_path.display())))?;
    let label = decode_label(&bytes, layout, class_map)
        .map_err(|e| issue(LoadIssueKind::Decode, format!("{}: {e}", label_path.display())))?;
    if image.dimensions() != label.dims() {
        return Err(issue(
            LoadIssueKind::DimensionMismatch,
            format!(
                "image is {:?} but label is {:?}",
                image.dimensions(),
                label.dims()
            ),
        ));
    }
    label
        .validate(class_map)
        .map_err(|e| issue(LoadIssueKind::InvalidLabel, e.to_string()))?;
    let classes = label.present_classes(class_map);
    Ok(Sample {
        id: id.to_string(),
        image,
        label,
        classes,
        caption: read_caption(image_path),
        image_path: image_path.to_path_buf(),
        label_path: label_path.to_path_buf(),
    })
}

/// `<image-stem>.caption.txt` next to the image; first non-empty line.
pub fn read_caption(image_path: &Path) -> Option<String> {
    let stem = stem_of(image_path)?;
    let path = image_path.with_file_name(format!("{stem}{CAPTION_SUFFIX}"));
    let text = fs::read_to_string(path).ok()?;
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .map(str::to_owned)
}

/// Decodes label bytes into class ids according to `layout`.
pub fn decode_label(
    bytes: &[u8],
    layout: Layout,
    class_map: &ClassMap,
) -> Result<LabelMask, String> {
    match layout {
        Layout::VocIndexed => decode_indexed_png(bytes),
        Layout::BinaryMasks => {
            let fg = class_map
                .foreground_ids()
                .first()
                .copied()
                .ok_or("class map has no foreground class")?;
            let bg = class_map.background_id().unwrap_or(0);
            let gray = image::load_from_memory(bytes)
                .map_err(|e| e.to_string())?
                .to_luma8();
            let (w, h) = gray.dimensions();
            let data = gray
                .into_raw()
                .into_iter()
                .map(|v| if v == 0 { bg } else { fg })
                .collect();
            LabelMask::new(w, h, data).map_err(|e: MaskError| e.to_string())
        }
    }
}

/// Reads raw palette indices (or 8-bit gray values) without palette expansion.
fn decode_indexed_png(bytes: &[u8]) -> Result<LabelMask, String> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let size = reader
        .output_buffer_size()
        .ok_or("label image too large")?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    let (w, h) = (info.width, info.height);
    let bits = match (info.color_type, info.bit_depth) {
        (png::ColorType::Indexed, d) => d as u8,
        (png::ColorType::Grayscale, png::BitDepth::Eight) => 8,
        (ct, d) => {
            return Err(format!(
                "unsupported label format {ct:?}/{d:?}; expected palette-indexed or 8-bit gray"
            ))
        }
    };
    let mut data = Vec::with_capacity(w as usize * h as usize);
    for row in buf.chunks(info.line_size).take(h as usize) {
        if bits == 8 {
            data.extend_from_slice(&row[..w as usize]);
            continue;
        }
        let per_byte = 8 / bits as usize;
        let mask = (1u8 << bits) - 1;
        for x in 0..w as usize {
            let byte = row[x / per_byte];
            let shift = 8 - bits as usize * (x % per_byte + 1);
            data.push((byte >> shift) & mask);
        }
    }
    LabelMask::new(w, h, data).map_err(|e| e.to_string())
}

/// The standard VOC colour map: bit-interleaved RGB per index.
pub fn voc_palette() -> Vec<u8> {
    let mut palette = Vec::with_capacity(256 * 3);
    for i in 0..=255u8 {
        let (mut r, mut g, mut b) = (0u8, 0u8, 0u8);
        let mut c = i;
        for j in 0..8 {
            r |= (c & 1) << (7 - j);
            g |= ((c >> 1) & 1) << (7 - j);
            b |= ((c >> 2) & 1) << (7 - j);
            c >>= 3;
        }
        palette.extend_from_slice(&[r, g, b]);
    }
    palette
}

/// Encodes a label as an 8-bit palette PNG using [`voc_palette`].
pub fn encode_indexed_png(label: &LabelMask) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, label.width(), label.height());
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(voc_palette());
        let mut writer = enc.write_header().expect("in-memory PNG header");
        writer
            .write_image_data(label.data())
            .expect("buffer length matches dimensions");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathTag {
    D1,
    D2,
}

impl PathTag {
    pub fn as_str(self) -> &'static str {
        match self {
            PathTag::D1 => "d1",
            PathTag::D2 => "d2",
        }
    }
}

impl fmt::Display for PathTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub source_id: String,
    pub synthetic_id: String,
    pub path_tag: PathTag,
    pub variant: u32,
    pub seed: u64,
    /// Relative to the output root.
    pub image_path: String,
    /// Relative to the output root.
    pub label_path: String,
    pub label_sha256: String,
    pub prompt_rendered: String,
    pub alpha: f64,
    pub backend_info: String,
}

/// Provenance for one generated image, as handed to [`write_synthetic_sample`].
#[derive(Debug, Clone)]
pub struct SyntheticRecord {
    pub path_tag: PathTag,
    pub variant: u32,
    pub seed: u64,
    pub prompt_rendered: String,
    pub alpha: f64,
    pub backend_info: String,
}

pub fn synthetic_id(source_id: &str, tag: PathTag, variant: u32) -> String {
    format!("{source_id}_{tag}_v{variant}")
}

/// Writes `generated` as PNG and copies the source label file verbatim.
pub fn write_synthetic_sample(
    out_root: &Path,
    sample: &Sample,
    generated: &RgbImage,
    record: SyntheticRecord,
) -> Result<ManifestEntry, DatasetError> {
    if generated.dimensions() != sample.dims() {
        return Err(DatasetError::DimensionMismatch {
            expected: sample.dims(),
            actual: generated.dimensions(),
        });
    }
    let sid = synthetic_id(&sample.id, record.path_tag, record.variant);
    let tag = record.path_tag.as_str();
    let label_ext = extension_lower(&sample.label_path).unwrap_or_else(|| "png".into());
    let image_rel = format!("{tag}/images/{sid}.png");
    let label_rel = format!("{tag}/labels/{sid}.{label_ext}");

    let image_abs = out_root.join(&image_rel);
    let label_abs = out_root.join(&label_rel);
    for p in [&image_abs, &label_abs] {
        let parent = p.parent().expect("joined path has a parent");
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }

    let mut png_bytes = Vec::new();
    generated
        .write_to(&mut Cursor::new(&mut png_bytes), image::ImageFormat::Png)
        .map_err(|e| DatasetError::Decode {
            path: image_abs.clone(),
            message: e.to_string(),
        })?;
    fs::write(&image_abs, &png_bytes).map_err(io_err(&image_abs))?;

    let label_bytes = fs::read(&sample.label_path).map_err(io_err(&sample.label_path))?;
    fs::write(&label_abs, &label_bytes).map_err(io_err(&label_abs))?;

    Ok(ManifestEntry {
        source_id: sample.id.clone(),
        synthetic_id: sid,
        path_tag: record.path_tag,
        variant: record.variant,
        seed: record.seed,
        image_path: image_rel,
        label_path: label_rel,
        label_sha256: sha256_hex(&label_bytes),
        prompt_rendered: record.prompt_rendered,
        alpha: record.alpha,
        backend_info: record.backend_info,
    })
}

/// One JSON object per line.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), DatasetError> {
    let mut out = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut out, e).expect("manifest entries always serialize");
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&out).map_err(io_err(path))
}

/// Blank lines are skipped; unknown keys are ignored.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>, DatasetError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| DatasetError::Manifest {
            line: i + 1,
            message: e.to_string(),
        })?;
        entries.push(entry);
    }
    Ok(entries)
}
