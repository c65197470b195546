//! Post-hoc checks of a finished run, re-read entirely from disk.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset_io::{load_dataset, load_manifest, sha256_hex, ClassMap, DatasetError, Layout, PathTag, Sample, MANIFEST_FILE};
use crate::mask_ops::{extract_class_masks, union};

pub const QA_REPORT_FILE: &str = "qa_report.json";

#[derive(Debug, thiserror::Error)]
pub enum QaError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntryCheck {
    pub synthetic_id: String,
    pub path_tag: PathTag,
    pub dims_match: bool,
    pub label_digest_match: bool,
    /// d2 only: every pixel outside the class regions equals the source.
    pub outside_mask_unchanged: Option<bool>,
    /// Mean absolute channel difference from the source image.
    pub mean_abs_diff: Option<f64>,
    /// Fraction of pixels that differ from the source in any channel.
    pub changed_ratio: Option<f64>,
    pub problems: Vec<String>,
}

impl EntryCheck {
    pub fn passed(&self) -> bool {
        self.problems.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct QaAggregate {
    pub entries: usize,
    pub failures: usize,
    pub mean_abs_pixel_diff_d1: Option<f64>,
    pub changed_pixel_ratio_d2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QaReport {
    pub aggregate: QaAggregate,
    pub entries: Vec<EntryCheck>,
}

impl QaReport {
    pub fn passed(&self) -> bool {
        self.aggregate.failures == 0
    }
}

fn check_entry(
    out_root: &Path,
    entry: &crate::dataset_io::ManifestEntry,
    source: Option<&Sample>,
    class_map: &ClassMap,
) -> EntryCheck {
    let mut check = EntryCheck {
        synthetic_id: entry.synthetic_id.clone(),
        path_tag: entry.path_tag,
        dims_match: false,
        label_digest_match: false,
        outside_mask_unchanged: None,
        mean_abs_diff: None,
        changed_ratio: None,
        problems: Vec::new(),
    };
    let Some(source) = source else {
        check.problems.push(format!("source sample {:?} not found", entry.source_id));
        return check;
    };

    let label_digest = std::fs::read(out_root.join(&entry.label_path)).map(|b| sha256_hex(&b));
    let source_digest = std::fs::read(&source.label_path).map(|b| sha256_hex(&b));
    match (label_digest, source_digest) {
        (Ok(a), Ok(b)) => {
            check.label_digest_match = a == b && a == entry.label_sha256;
            if !check.label_digest_match {
                check.problems.push("label differs from source".into());
            }
        }
        (Err(e), _) => check.problems.push(format!("label {}: {e}", entry.label_path)),
        (_, Err(e)) => check.problems.push(format!("source label: {e}")),
    }

    let generated = match image::open(out_root.join(&entry.image_path)) {
        Ok(img) => img.to_rgb8(),
        Err(e) => {
            check.problems.push(format!("image {}: {e}", entry.image_path));
            return check;
        }
    };
    check.dims_match = generated.dimensions() == source.dims();
    if !check.dims_match {
        check.problems.push(format!(
            "image is {:?}, source is {:?}",
            generated.dimensions(),
            source.dims()
        ));
        return check;
    }

    let (w, h) = source.dims();
    let pixels = (w as usize * h as usize).max(1);
    let mut abs_sum = 0u64;
    let mut changed = 0usize;
    for (a, b) in generated.pixels().zip(source.image.pixels()) {
        abs_sum += a.0.iter().zip(b.0).map(|(&p, q)| p.abs_diff(q) as u64).sum::<u64>();
        changed += usize::from(a != b);
    }
    check.mean_abs_diff = Some(abs_sum as f64 / (pixels * 3) as f64);
    check.changed_ratio = Some(changed as f64 / pixels as f64);

    if entry.path_tag == PathTag::D2 {
        let unchanged = extract_class_masks(&source.label, class_map)
            .and_then(|m| union(&m, w, h))
            .map(|region| {
                generated
                    .enumerate_pixels()
                    .all(|(x, y, px)| region.get(x, y) || px == source.image.get_pixel(x, y))
            });
        match unchanged {
            Ok(ok) => {
                check.outside_mask_unchanged = Some(ok);
                if !ok {
                    check.problems.push("pixels outside class regions were modified".into());
                }
            }
            Err(e) => check.problems.push(format!("source label: {e}")),
        }
    }
    check
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Checks every manifest entry under `out_root` against the source dataset
/// and writes `qa_report.json` next to the manifest.
pub fn verify_run(
    out_root: &Path,
    source_root: &Path,
    layout: Layout,
    class_map: &ClassMap,
) -> Result<QaReport, QaError> {
    let manifest = load_manifest(&out_root.join(MANIFEST_FILE))?;
    let dataset = load_dataset(source_root, layout, class_map)?;
    let by_id: HashMap<&str, &Sample> = dataset.samples.iter().map(|s| (s.id.as_str(), s)).collect();

    let entries: Vec<EntryCheck> = manifest
        .par_iter()
        .map(|e| check_entry(out_root, e, by_id.get(e.source_id.as_str()).copied(), class_map))
        .collect();

    let aggregate = QaAggregate {
        entries: entries.len(),
        failures: entries.iter().filter(|c| !c.passed()).count(),
        mean_abs_pixel_diff_d1: mean(
            entries
                .iter()
                .filter(|c| c.path_tag == PathTag::D1)
                .filter_map(|c| c.mean_abs_diff),
        ),
        changed_pixel_ratio_d2: mean(
            entries
                .iter()
                .filter(|c| c.path_tag == PathTag::D2)
                .filter_map(|c| c.changed_ratio),
        ),
    };
    let report = QaReport { aggregate, entries };
    let path = out_root.join(QA_REPORT_FILE);
    let json = serde_json::to_string_pretty(&report).expect("report always serializes");
    std::fs::write(&path, json).map_err(|e| QaError::Io {
        path,
        message: e.to_string(),
    })?;
    Ok(report)
}
