//! Synthetic semantic-segmentation data from a real labelled dataset.
//!
//! Two generation paths share one label set:
//!
//! * **d1** regenerates the whole image with img2img, guided by a structure
//!   prior (image edges blended with the label outline) and a prompt that
//!   emphasises the classes present.
//! * **d2** inpaints each class region on its own and composites the results
//!   over the real image, so background pixels are preserved exactly.
//!
//! Labels are copied byte for byte. Diffusion inference goes through the
//! [`backend::GenerationBackend`] trait, implemented by an HTTP client for a
//! model worker and by a deterministic mock.

pub mod backend;
pub mod config;
pub mod dataset_io;
pub mod mask_ops;
pub mod pipeline;
pub mod prompting;
pub mod qa;
pub mod raster;
pub mod visual_prior;

pub use config::PipelineConfig;
pub use pipeline::{run, run_dataset, RunReport};
pub use qa::{verify_run, QaReport};
