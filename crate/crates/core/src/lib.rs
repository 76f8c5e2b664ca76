//! Zero-shot phrase grounding from the cross-attention maps of a frozen
//! text-conditioned denoiser.
//!
//! The pipeline encodes an image into a latent grid, runs deterministic DDIM
//! inversion driven by the unconditional noise prediction, harvests the
//! conditional cross-attention maps at every layer and timestep, and averages
//! a selected subset of them into a per-pixel grounding heatmap. A metrics
//! suite scores heatmaps against bounding-box ground truth (mIoU, AUC-ROC,
//! CNR and |CNR|).
//!
//! Module map:
//! - [`numerics`]: dense f32 tensors plus the image-processing kernels
//!   (matmul, row softmax, min-max normalization, bilinear/nearest resize,
//!   Gaussian smoothing).
//! - [`schedule`]: DDIM noise schedules and the per-step inversion/denoising
//!   updates.
//! - [`text`]: greedy longest-match subword tokenizer, lookup-table prompt
//!   embeddings, and token-index selection.
//! - [`denoiser`]: the compact cross-attention noise predictor and its image
//!   encoder.
//! - [`grounding`]: the inversion driver, attention aggregation, Otsu
//!   thresholding, and the end-to-end pipeline.
//! - [`metrics`]: mask rasterization and the evaluation metrics.
//! - [`io`]: manifests, images, checkpoints, vocabularies, heatmap dumps and
//!   CSV reports.
//! - [`synth`]: deterministic generators for demo checkpoints, vocabularies
//!   and datasets.

pub mod denoiser;
pub mod error;
pub mod grounding;
pub mod io;
pub mod metrics;
pub mod numerics;
pub mod schedule;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
pub use numerics::Tensor;
