//! The grounding driver: DDIM inversion with unconditional latent updates,
//! conditional attention harvesting, map selection and aggregation, and the
//! heatmap post-processing chain (Gaussian smoothing, Otsu masking).
//!
//! The latent trajectory is driven exclusively by the unconditional noise
//! prediction; the prompt-conditioned call per step only contributes its
//! attention maps. Two different prompts therefore traverse bit-identical
//! latents.

use crate::denoiser::{DenoiserModel, LatentImage, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::numerics::{self, Tensor};
use crate::schedule::{ddim_invert_step, NoiseSchedule};
use crate::text::{
    self, null_context, select_token_indices, tokenize, PromptEmbedding, TokenMode,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// All conditional cross-attention maps of one inversion run, indexed by
/// (1-based layer, timestep).
#[derive(Debug, Clone)]
pub struct AttentionStack {
    num_layers: usize,
    total_steps: usize,
    seq_len: usize,
    /// entries[t * num_layers + (l-1)]
    entries: Vec<Tensor>,
}

impl AttentionStack {
    /// Assembles a stack from per-(t, layer) maps; mostly useful in tests.
    /// `entries` is ordered t-major: all layers of t=0, then t=1, ...
    pub fn from_entries(
        entries: Vec<Tensor>,
        num_layers: usize,
        total_steps: usize,
        seq_len: usize,
    ) -> Result<Self> {
        if entries.len() != num_layers * total_steps {
            return Err(Error::InvalidArgument(format!(
                "expected {} maps ({num_layers} layers x {total_steps} steps), got {}",
                num_layers * total_steps,
                entries.len()
            )));
        }
        for map in &entries {
            let (s, bh, bw) = map.dims3()?;
            if s != seq_len || bh != bw {
                return Err(Error::ShapeMismatch(format!(
                    "attention map shape {:?} is not {seq_len} x B x B",
                    map.shape()
                )));
            }
        }
        Ok(AttentionStack { num_layers, total_steps, seq_len, entries })
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    /// Total number of stored maps (layers x steps).
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The `seq_len x B x B` map of a 1-based layer at timestep `t`.
    pub fn map(&self, layer: usize, t: usize) -> Result<&Tensor> {
        if layer == 0 || layer > self.num_layers {
            return Err(Error::InvalidArgument(format!(
                "layer {layer} out of range 1..={}",
                self.num_layers
            )));
        }
        if t >= self.total_steps {
            return Err(Error::InvalidArgument(format!(
                "timestep {t} out of range 0..{}",
                self.total_steps
            )));
        }
        Ok(&self.entries[t * self.num_layers + layer - 1])
    }
}

/// Inversion output: the attention stack plus the latent trajectory
/// `z_1..z_T` (needed to verify prompt independence).
#[derive(Debug, Clone)]
pub struct HarvestResult {
    pub stack: AttentionStack,
    pub latents: Vec<Tensor>,
}

/// Runs the full DDIM inversion loop: at each step the unconditional
/// prediction updates the latent, the conditional prediction contributes its
/// attention maps (the unconditional maps are discarded).
pub fn harvest_attention(
    z0: &LatentImage,
    prompt: &PromptEmbedding,
    null: &PromptEmbedding,
    model: &DenoiserModel,
    sched: &NoiseSchedule,
) -> Result<HarvestResult> {
    let seq_len = prompt.seq_len();
    if null.seq_len() != seq_len {
        return Err(Error::InvalidArgument(
            "prompt and null context must share the sequence length".into(),
        ));
    }
    let total = sched.total_steps();
    let mut entries = Vec::with_capacity(total * model.num_layers());
    let mut latents = Vec::with_capacity(total);
    let mut z = z0.grid.clone();
    for t in 0..total {
        let uncond = model.predict_noise(&z, t, null)?;
        let cond = model.predict_noise(&z, t, prompt)?;
        entries.extend(cond.attn);
        z = ddim_invert_step(&z, &uncond.epsilon, t, sched)?;
        latents.push(z.clone());
    }
    Ok(HarvestResult {
        stack: AttentionStack::from_entries(entries, model.num_layers(), total, seq_len)?,
        latents,
    })
}

/// Which maps feed the heatmap: layer set, inclusive timestep range, token
/// mode, and the post-processing knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// 1-based cross-attention layer indices.
    pub layers: Vec<usize>,
    /// Inclusive timestep range `[lo, hi]`.
    pub t_range: (usize, usize),
    pub token_mode: TokenMode,
    /// Gaussian smoothing width applied to the aggregated heatmap.
    pub sigma: f32,
    /// Apply Otsu foreground masking after smoothing.
    pub otsu: bool,
    pub total_steps: usize,
    /// Keep begin/end tokens in `all` mode.
    pub include_specials: bool,
    /// Fixed token sequence length.
    pub seq_len: usize,
}

impl Default for SelectionConfig {
    /// The published defaults: layers {3,4,6,7}, timesteps 120..=180 out of
    /// 300, sigma 2.5, Otsu on, all non-special tokens, S=77.
    fn default() -> Self {
        SelectionConfig {
            layers: vec![3, 4, 6, 7],
            t_range: (120, 180),
            token_mode: TokenMode::All,
            sigma: 2.5,
            otsu: true,
            total_steps: 300,
            include_specials: false,
            seq_len: text::DEFAULT_SEQ_LEN,
        }
    }
}

impl SelectionConfig {
    /// Checks internal consistency and compatibility with a model.
    pub fn validate(&self, num_layers: usize) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::EmptySelection("no layers selected".into()));
        }
        for &l in &self.layers {
            if l == 0 || l > num_layers {
                return Err(Error::InvalidArgument(format!(
                    "layer {l} out of range 1..={num_layers}"
                )));
            }
        }
        let (lo, hi) = self.t_range;
        if lo > hi || hi >= self.total_steps {
            return Err(Error::InvalidArgument(format!(
                "timestep range [{lo},{hi}] invalid for T={}",
                self.total_steps
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.seq_len < 2 {
            return Err(Error::InvalidArgument("seq_len must be >= 2".into()));
        }
        Ok(())
    }

    /// Number of selected timesteps (inclusive range).
    pub fn timestep_count(&self) -> usize {
        self.t_range.1 - self.t_range.0 + 1
    }
}

/// Final grounding heatmap with the configuration that produced it.
#[derive(Debug, Clone)]
pub struct Heatmap {
    /// `IMAGE_SIZE x IMAGE_SIZE`, values in `[0,1]`.
    pub grid: Tensor,
    pub config: SelectionConfig,
    pub sample_id: String,
}

/// Averages the selected `(layer, timestep, token)` attention slices into a
/// 512x512 heatmap: each B x B slice is min-max normalized, bilinearly
/// resized, and the mean is taken over all selected triples.
///
/// Slices are accumulated per spatial size and resized once per group;
/// because bilinear resizing is linear this equals the per-map definition up
/// to f32 rounding, independent of iteration order.
pub fn aggregate_heatmap(
    stack: &AttentionStack,
    token_indices: &[usize],
    cfg: &SelectionConfig,
    sample_id: &str,
) -> Result<Heatmap> {
    cfg.validate(stack.num_layers())?;
    if token_indices.is_empty() {
        return Err(Error::EmptySelection("no token indices selected".into()));
    }
    if cfg.total_steps != stack.total_steps() {
        return Err(Error::InvalidArgument(format!(
            "config expects T={} but stack holds T={}",
            cfg.total_steps,
            stack.total_steps()
        )));
    }
    for &s in token_indices {
        if s >= stack.seq_len() {
            return Err(Error::InvalidArgument(format!(
                "token index {s} out of range 0..{}",
                stack.seq_len()
            )));
        }
    }

    // Per-resolution f64 accumulators.
    let mut groups: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    let (t_lo, t_hi) = cfg.t_range;
    for &layer in &cfg.layers {
        for t in t_lo..=t_hi {
            let map = stack.map(layer, t)?;
            let (_, b, _) = map.dims3()?;
            let cells = b * b;
            let (acc, count) =
                groups.entry(b).or_insert_with(|| (vec![0.0f64; cells], 0usize));
            for &s in token_indices {
                let slice = &map.data()[s * cells..(s + 1) * cells];
                let norm = numerics::minmax_normalize(
                    &Tensor::new(vec![b, b], slice.to_vec())?,
                );
                for (a, &v) in acc.iter_mut().zip(norm.data()) {
                    *a += v as f64;
                }
                *count += 1;
            }
        }
    }

    let total: usize = groups.values().map(|(_, c)| *c).sum();
    let mut heat = vec![0.0f64; IMAGE_SIZE * IMAGE_SIZE];
    for (b, (acc, count)) in &groups {
        let mean: Vec<f32> = acc.iter().map(|v| (*v / *count as f64) as f32).collect();
        let resized = numerics::resize_bilinear(&Tensor::new(vec![*b, *b], mean)?, IMAGE_SIZE, IMAGE_SIZE)?;
        let weight = *count as f64 / total as f64;
        for (h, &v) in heat.iter_mut().zip(resized.data()) {
            *h += weight * v as f64;
        }
    }
    let grid = Tensor::new(
        vec![IMAGE_SIZE, IMAGE_SIZE],
        heat.into_iter().map(|v| (v as f32).clamp(0.0, 1.0)).collect(),
    )?;
    Ok(Heatmap { grid, config: cfg.clone(), sample_id: sample_id.to_string() })
}

/// Otsu threshold over 256 uniform bins on `[0,1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OtsuOutcome {
    /// Bin-edge threshold; the foreground is `{h > threshold}`.
    pub threshold: f32,
    /// Set when the input was constant (threshold defined as 0).
    pub degenerate: bool,
}

/// Histograms the map into 256 uniform bins over `[0,1]` and returns the
/// bin-edge threshold maximizing between-class variance; ties break toward
/// the lower threshold. A constant map yields threshold 0, flagged.
pub fn otsu_threshold(map: &Tensor) -> OtsuOutcome {
    let lo = map.min();
    let hi = map.max();
    if hi <= lo {
        return OtsuOutcome { threshold: 0.0, degenerate: true };
    }
    let mut hist = [0u64; 256];
    for &v in map.data() {
        let bin = ((v.clamp(0.0, 1.0) * 256.0) as usize).min(255);
        hist[bin] += 1;
    }
    let total: f64 = map.len() as f64;
    let sum_total: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();

    let mut best_k = 0usize;
    let mut best_var = f64::NEG_INFINITY;
    let mut w0 = 0.0f64;
    let mut sum0 = 0.0f64;
    for (k, &c) in hist.iter().enumerate() {
        w0 += c as f64;
        sum0 += k as f64 * c as f64;
        if w0 == 0.0 {
            continue;
        }
        let w1 = total - w0;
        if w1 == 0.0 {
            break;
        }
        let mu0 = sum0 / w0;
        let mu1 = (sum_total - sum0) / w1;
        let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if var > best_var {
            best_var = var;
            best_k = k;
        }
    }
    OtsuOutcome { threshold: (best_k as f32 + 1.0) / 256.0, degenerate: false }
}

/// Zeroes every value not strictly above the threshold; foreground values
/// pass through unchanged.
pub fn apply_foreground_mask(map: &Tensor, threshold: f32) -> Tensor {
    let data = map.data().iter().map(|&v| if v > threshold { v } else { 0.0 }).collect();
    Tensor::new(map.shape().to_vec(), data).expect("masking preserves shape and finiteness")
}

/// End-to-end result: the post-processed heatmap plus the diagnostics that
/// go into run logs.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub heatmap: Heatmap,
    /// Present when Otsu masking was enabled.
    pub otsu: Option<OtsuOutcome>,
    /// Token positions whose maps were aggregated.
    pub token_indices: Vec<usize>,
}

/// Runs the whole pipeline on one image/prompt pair: encode, embed, harvest,
/// select tokens, aggregate, smooth, and (optionally) Otsu-mask.
#[allow(clippy::too_many_arguments)]
pub fn run_pipeline(
    image: &Tensor,
    sample_id: &str,
    prompt: &str,
    pathology: Option<&str>,
    model: &DenoiserModel,
    vocab: &text::Vocabulary,
    sched: &NoiseSchedule,
    cfg: &SelectionConfig,
) -> Result<PipelineOutput> {
    cfg.validate(model.num_layers())?;
    if sched.total_steps() != cfg.total_steps {
        return Err(Error::InvalidArgument(format!(
            "schedule T={} does not match config T={}",
            sched.total_steps(),
            cfg.total_steps
        )));
    }
    let z0 = model.encode_image(image, sample_id)?;
    let tokens = tokenize(prompt, vocab, cfg.seq_len)?;
    let ctx = text::embed(&tokens, vocab)?;
    let null = null_context(vocab, cfg.seq_len)?;
    let token_indices =
        select_token_indices(&tokens, cfg.token_mode, pathology, vocab, cfg.include_specials)?;
    let harvest = harvest_attention(&z0, &ctx, &null, model, sched)?;
    let aggregated = aggregate_heatmap(&harvest.stack, &token_indices, cfg, sample_id)?;
    let smoothed = numerics::gaussian_smooth(&aggregated.grid, cfg.sigma)?;
    let (grid, otsu) = if cfg.otsu {
        let outcome = otsu_threshold(&smoothed);
        (apply_foreground_mask(&smoothed, outcome.threshold), Some(outcome))
    } else {
        (smoothed, None)
    };
    Ok(PipelineOutput {
        heatmap: Heatmap { grid, config: cfg.clone(), sample_id: sample_id.to_string() },
        otsu,
        token_indices,
    })
}
