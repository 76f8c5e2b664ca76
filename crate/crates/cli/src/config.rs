//! Resolved run configuration and its serialized log form.

use crate::args::SelectArgs;
use groundlens_core::denoiser::{DenoiserModel, IMAGE_SIZE};
use groundlens_core::error::Result;
use groundlens_core::grounding::SelectionConfig;
use groundlens_core::metrics::MIOU_THRESHOLDS;
use groundlens_core::schedule::{BetaSchedule, NoiseSchedule};
use groundlens_core::text::TokenMode;
use serde::Serialize;

/// Everything a run needs: the selection config plus the schedule parameters.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub selection: SelectionConfig,
    pub beta_start: f64,
    pub beta_end: f64,
    pub beta_schedule: BetaSchedule,
}

impl RunConfig {
    pub fn from_args(args: &SelectArgs) -> RunConfig {
        RunConfig {
            selection: SelectionConfig {
                layers: args.layers.clone(),
                t_range: args.t_range,
                token_mode: args.tokens,
                sigma: args.sigma,
                otsu: args.otsu,
                total_steps: args.timesteps,
                include_specials: args.include_specials,
                seq_len: args.seq_len,
            },
            beta_start: args.beta_start,
            beta_end: args.beta_end,
            beta_schedule: args.beta_schedule,
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(
            self.selection.total_steps,
            self.beta_start,
            self.beta_end,
            self.beta_schedule,
        )
    }
}

/// The config block written into run logs; checked against a golden copy in
/// the acceptance suite, so field order and types are frozen.
#[derive(Debug, Serialize)]
pub struct ConfigLog {
    pub total_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub beta_schedule: BetaSchedule,
    pub layers: Vec<usize>,
    /// Spatial attention size of each selected layer, from the checkpoint.
    pub layer_spatial_sizes: Vec<usize>,
    pub t_range: [usize; 2],
    pub sigma: f32,
    pub otsu: bool,
    pub token_mode: TokenMode,
    pub include_specials: bool,
    pub seq_len: usize,
    pub image_size: [usize; 2],
    pub miou_thresholds: [f32; 5],
}

impl ConfigLog {
    pub fn new(cfg: &RunConfig, model: &DenoiserModel) -> Result<ConfigLog> {
        let layer_spatial_sizes = cfg
            .selection
            .layers
            .iter()
            .map(|&l| model.layer_spatial(l))
            .collect::<Result<Vec<_>>>()?;
        Ok(ConfigLog {
            total_steps: cfg.selection.total_steps,
            beta_start: cfg.beta_start,
            beta_end: cfg.beta_end,
            beta_schedule: cfg.beta_schedule,
            layers: cfg.selection.layers.clone(),
            layer_spatial_sizes,
            t_range: [cfg.selection.t_range.0, cfg.selection.t_range.1],
            sigma: cfg.selection.sigma,
            otsu: cfg.selection.otsu,
            token_mode: cfg.selection.token_mode,
            include_specials: cfg.selection.include_specials,
            seq_len: cfg.selection.seq_len,
            image_size: [IMAGE_SIZE, IMAGE_SIZE],
            miou_thresholds: MIOU_THRESHOLDS,
        })
    }
}
