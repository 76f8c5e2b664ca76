//! The noise predictor: a compact, deterministic stack of cross-attention
//! layers over a pooled latent grid, plus the matching image encoder.
//!
//! Each layer pools or replicates the running feature grid to its own spatial
//! size, applies a position-wise linear mix, attends over the prompt tokens
//! (queries from visual positions, keys/values from the prompt embedding) and
//! adds the projected result back residually. Sinusoidal timestep features
//! are added to the visual tokens at the input so the prediction depends on
//! t; they occupy the feature coordinates past the latent-channel block,
//! leaving the image-embedded coordinates untouched. There are no
//! convolutions, no self-attention and no normalization layers; the whole
//! forward pass is a fixed sequence of f32 matmuls and row softmaxes, so
//! identical inputs give bit-identical outputs.
//!
//! Checkpoint format (see [`DenoiserModel::from_bytes`]): a UTF-8 header
//! describing the architecture, a `---BLOB---` sentinel line, then the weight
//! matrices as raw little-endian f32 in header order.

use crate::error::{Error, Result};
use crate::numerics::{self, matmul, softmax_rows, Tensor};
use crate::text::PromptEmbedding;

/// Images are resized to this fixed side length before encoding.
pub const IMAGE_SIZE: usize = 512;

/// Spatial sizes a cross-attention layer may use.
pub const LAYER_SIZES: [usize; 2] = [16, 32];

const CKPT_MAGIC: &str = "GLCKPT";
const CKPT_VERSION: u32 = 1;
const BLOB_SENTINEL: &str = "---BLOB---";

/// One cross-attention layer: spatial size, projections and head count.
#[derive(Debug, Clone)]
pub struct LayerSpec {
    /// Spatial size B of this layer's attention grid (16 or 32).
    pub spatial: usize,
    /// Position-wise feature mix applied before attention (feat x feat).
    pub mix: Tensor,
    /// Query projection (feat x key).
    pub p_q: Tensor,
    /// Key projection (ctx x key).
    pub p_k: Tensor,
    /// Value projection (ctx x feat).
    pub p_v: Tensor,
    /// Output projection applied to the attention result (feat x feat).
    pub p_out: Tensor,
    pub heads: usize,
}

/// Noise estimate plus the per-layer cross-attention maps that produced it.
#[derive(Debug, Clone)]
pub struct DenoiserOutput {
    /// Same shape as the input latent.
    pub epsilon: Tensor,
    /// One `seq_len x B_l x B_l` map per layer; for every spatial query the
    /// weights over the token axis sum to 1.
    pub attn: Vec<Tensor>,
}

/// Encoded image: per-channel latent grid at the model's native resolution.
#[derive(Debug, Clone)]
pub struct LatentImage {
    /// channels x latent x latent.
    pub grid: Tensor,
    /// Identifier of the source image, carried through for reporting.
    pub provenance: String,
}

/// The frozen denoiser weights and architecture constants.
#[derive(Debug, Clone)]
pub struct DenoiserModel {
    channels: usize,
    latent_size: usize,
    feat_dim: usize,
    key_dim: usize,
    ctx_dim: usize,
    encoder_mu: Vec<f32>,
    encoder_sigma: Vec<f32>,
    /// channels x feat: lifts latent channels into feature space.
    embed_in: Tensor,
    /// feat x channels: projects features back to the noise estimate.
    proj_out: Tensor,
    layers: Vec<LayerSpec>,
}

impl DenoiserModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        channels: usize,
        latent_size: usize,
        feat_dim: usize,
        key_dim: usize,
        ctx_dim: usize,
        encoder_mu: Vec<f32>,
        encoder_sigma: Vec<f32>,
        embed_in: Tensor,
        proj_out: Tensor,
        layers: Vec<LayerSpec>,
    ) -> Result<Self> {
        let model = DenoiserModel {
            channels,
            latent_size,
            feat_dim,
            key_dim,
            ctx_dim,
            encoder_mu,
            encoder_sigma,
            embed_in,
            proj_out,
            layers,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ModelCorruption(msg));
        if self.layers.is_empty() {
            return bad("model has no cross-attention layers".into());
        }
        if self.channels == 0 || self.feat_dim == 0 || self.key_dim == 0 || self.ctx_dim == 0 {
            return bad("model dimensions must be positive".into());
        }
        if self.feat_dim <= self.channels {
            return bad(format!(
                "feat dim {} must exceed channel count {} to leave room for timestep features",
                self.feat_dim, self.channels
            ));
        }
        if self.latent_size == 0 || IMAGE_SIZE % self.latent_size != 0 {
            return bad(format!("latent size {} must divide {IMAGE_SIZE}", self.latent_size));
        }
        if self.encoder_mu.len() != self.channels || self.encoder_sigma.len() != self.channels {
            return bad("encoder mu/sigma must have one value per channel".into());
        }
        if self.encoder_sigma.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return bad("encoder sigma values must be positive and finite".into());
        }
        if self.embed_in.shape() != [self.channels, self.feat_dim] {
            return bad(format!("embed_in shape {:?} wrong", self.embed_in.shape()));
        }
        if self.proj_out.shape() != [self.feat_dim, self.channels] {
            return bad(format!("proj_out shape {:?} wrong", self.proj_out.shape()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let l = i + 1;
            if !LAYER_SIZES.contains(&layer.spatial) {
                return bad(format!("layer {l}: spatial size {} not in {:?}", layer.spatial, LAYER_SIZES));
            }
            let (a, b) = (layer.spatial.max(self.latent_size), layer.spatial.min(self.latent_size));
            if a % b != 0 {
                return bad(format!(
                    "layer {l}: spatial size {} incompatible with latent {}",
                    layer.spatial, self.latent_size
                ));
            }
            if layer.heads == 0 || self.key_dim % layer.heads != 0 || self.feat_dim % layer.heads != 0 {
                return bad(format!("layer {l}: head count {} must divide key and feat dims", layer.heads));
            }
            for (name, t, shape) in [
                ("mix", &layer.mix, [self.feat_dim, self.feat_dim]),
                ("p_q", &layer.p_q, [self.feat_dim, self.key_dim]),
                ("p_k", &layer.p_k, [self.ctx_dim, self.key_dim]),
                ("p_v", &layer.p_v, [self.ctx_dim, self.feat_dim]),
                ("p_out", &layer.p_out, [self.feat_dim, self.feat_dim]),
            ] {
                if t.shape() != shape {
                    return bad(format!("layer {l}: {name} shape {:?}, expected {shape:?}", t.shape()));
                }
            }
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn latent_size(&self) -> usize {
        self.latent_size
    }

    pub fn ctx_dim(&self) -> usize {
        self.ctx_dim
    }

    pub fn heads(&self) -> usize {
        self.layers[0].heads
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Spatial size of a 1-based layer index.
    pub fn layer_spatial(&self, layer: usize) -> Result<usize> {
        self.layers
            .get(layer.checked_sub(1).ok_or_else(|| {
                Error::InvalidArgument("layer indices are 1-based".into())
            })?)
            .map(|l| l.spatial)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "layer {layer} out of range (model has {} layers)",
                    self.layers.len()
                ))
            })
    }

    /// Encodes a 512x512 image into the latent grid: non-overlapping mean
    /// pooling per channel followed by a fixed per-channel affine.
    pub fn encode_image(&self, image: &Tensor, provenance: &str) -> Result<LatentImage> {
        let (h, w) = image.dims2()?;
        if h != IMAGE_SIZE || w != IMAGE_SIZE {
            return Err(Error::InvalidArgument(format!(
                "encoder expects {IMAGE_SIZE}x{IMAGE_SIZE} input, got {h}x{w}"
            )));
        }
        let pooled = numerics::mean_pool(image, self.latent_size)?;
        let cells = self.latent_size * self.latent_size;
        let mut data = Vec::with_capacity(self.channels * cells);
        for c in 0..self.channels {
            let (mu, sigma) = (self.encoder_mu[c], self.encoder_sigma[c]);
            data.extend(pooled.data().iter().map(|&v| (v - mu) / sigma));
        }
        Ok(LatentImage {
            grid: Tensor::new(vec![self.channels, self.latent_size, self.latent_size], data)?,
            provenance: provenance.to_string(),
        })
    }

    /// Full forward pass: noise estimate plus all per-layer attention maps.
    pub fn predict_noise(
        &self,
        z: &Tensor,
        t: usize,
        context: &PromptEmbedding,
    ) -> Result<DenoiserOutput> {
        let (c, bh, bw) = z.dims3()?;
        if c != self.channels || bh != self.latent_size || bw != self.latent_size {
            return Err(Error::ModelCorruption(format!(
                "latent shape {:?} does not match model ({} x {} x {})",
                z.shape(),
                self.channels,
                self.latent_size,
                self.latent_size
            )));
        }
        let (seq_len, ctx_dim) = context.matrix().dims2()?;
        if ctx_dim != self.ctx_dim {
            return Err(Error::ModelCorruption(format!(
                "context dim {ctx_dim} does not match model ctx dim {}",
                self.ctx_dim
            )));
        }

        // channels-first latent -> token rows, then lift into feature space.
        let cells = self.latent_size * self.latent_size;
        let mut tokens = vec![0.0f32; cells * self.channels];
        for ch in 0..c {
            let plane = &z.data()[ch * cells..(ch + 1) * cells];
            for (pos, &v) in plane.iter().enumerate() {
                tokens[pos * self.channels + ch] = v;
            }
        }
        let tokens = Tensor::new(vec![cells, self.channels], tokens)?;
        let mut features = matmul(&tokens, &self.embed_in)?;
        // timestep features occupy coordinates channels..feat_dim
        let tfeat = time_features(t, self.feat_dim);
        let mut data = features.data().to_vec();
        for row in data.chunks_mut(self.feat_dim) {
            for (v, tf) in row[self.channels..].iter_mut().zip(&tfeat[self.channels..]) {
                *v += tf;
            }
        }
        features = Tensor::new(vec![cells, self.feat_dim], data)?;

        let mut attn = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let grid_in = resample_tokens(&features, self.latent_size, layer.spatial)?;
            let mixed = matmul(&grid_in, &layer.mix)?;
            let (out, map) = cross_attention(&mixed, context, layer)?;
            let back = resample_tokens(&out, layer.spatial, self.latent_size)?;
            let summed: Vec<f32> =
                features.data().iter().zip(back.data()).map(|(a, b)| a + b).collect();
            features = Tensor::new(vec![cells, self.feat_dim], summed)?;
            debug_assert_eq!(map.shape(), &[seq_len, layer.spatial, layer.spatial]);
            attn.push(map);
        }

        let eps_tokens = matmul(&features, &self.proj_out)?;
        let mut eps = vec![0.0f32; self.channels * cells];
        for (pos, row) in eps_tokens.data().chunks(self.channels).enumerate() {
            for (ch, &v) in row.iter().enumerate() {
                eps[ch * cells + pos] = v;
            }
        }
        Ok(DenoiserOutput {
            epsilon: Tensor::new(z.shape().to_vec(), eps)?,
            attn,
        })
    }

    /// Serializes the model in the documented checkpoint format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        header.push_str(&format!("{CKPT_MAGIC} {CKPT_VERSION}\n"));
        header.push_str(&format!("channels {}\n", self.channels));
        header.push_str(&format!("latent {}\n", self.latent_size));
        header.push_str(&format!("feat_dim {}\n", self.feat_dim));
        header.push_str(&format!("key_dim {}\n", self.key_dim));
        header.push_str(&format!("ctx_dim {}\n", self.ctx_dim));
        header.push_str(&format!("heads {}\n", self.layers[0].heads));
        header.push_str(&format!("layers {}\n", self.layers.len()));
        header.push_str(&format!("encoder_mu {}\n", join_floats(&self.encoder_mu)));
        header.push_str(&format!("encoder_sigma {}\n", join_floats(&self.encoder_sigma)));
        for (i, layer) in self.layers.iter().enumerate() {
            header.push_str(&format!("layer {} {}\n", i + 1, layer.spatial));
        }
        header.push_str(BLOB_SENTINEL);
        header.push('\n');

        let mut bytes = header.into_bytes();
        let mut push = |t: &Tensor| {
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        };
        push(&self.embed_in);
        for layer in &self.layers {
            push(&layer.mix);
            push(&layer.p_q);
            push(&layer.p_k);
            push(&layer.p_v);
            push(&layer.p_out);
        }
        push(&self.proj_out);
        bytes
    }

    /// Parses the documented checkpoint format. `origin` names the source in
    /// error messages.
    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let fmt = |reason: String| Error::format(origin, reason);
        let sentinel = format!("{BLOB_SENTINEL}\n");
        let split = find_subslice(bytes, sentinel.as_bytes())
            .ok_or_else(|| fmt(format!("missing `{BLOB_SENTINEL}` sentinel")))?;
        let header = std::str::from_utf8(&bytes[..split])
            .map_err(|_| fmt("header is not valid UTF-8".into()))?;
        let blob = &bytes[split + sentinel.len()..];

        let mut lines = header.lines();
        let magic = lines.next().ok_or_else(|| fmt("empty header".into()))?;
        if magic != format!("{CKPT_MAGIC} {CKPT_VERSION}") {
            return Err(fmt(format!("bad magic/version line `{magic}`")));
        }
        let mut channels = None;
        let mut latent = None;
        let mut feat_dim = None;
        let mut key_dim = None;
        let mut ctx_dim = None;
        let mut heads = None;
        let mut n_layers = None;
        let mut encoder_mu: Option<Vec<f32>> = None;
        let mut encoder_sigma: Option<Vec<f32>> = None;
        let mut layer_sizes: Vec<usize> = Vec::new();
        for line in lines {
            let mut it = line.split_whitespace();
            let key = it.next().ok_or_else(|| fmt(format!("blank header line `{line}`")))?;
            let rest: Vec<&str> = it.collect();
            let one = || -> Result<usize> {
                rest.first()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| fmt(format!("bad value in line `{line}`")))
            };
            match key {
                "channels" => channels = Some(one()?),
                "latent" => latent = Some(one()?),
                "feat_dim" => feat_dim = Some(one()?),
                "key_dim" => key_dim = Some(one()?),
                "ctx_dim" => ctx_dim = Some(one()?),
                "heads" => heads = Some(one()?),
                "layers" => n_layers = Some(one()?),
                "encoder_mu" => encoder_mu = Some(parse_floats(&rest, line, origin)?),
                "encoder_sigma" => encoder_sigma = Some(parse_floats(&rest, line, origin)?),
                "layer" => {
                    if rest.len() != 2 {
                        return Err(fmt(format!("bad layer line `{line}`")));
                    }
                    let idx: usize =
                        rest[0].parse().map_err(|_| fmt(format!("bad layer index in `{line}`")))?;
                    if idx != layer_sizes.len() + 1 {
                        return Err(fmt(format!("layer lines out of order at `{line}`")));
                    }
                    layer_sizes.push(
                        rest[1].parse().map_err(|_| fmt(format!("bad layer size in `{line}`")))?,
                    );
                }
                other => return Err(fmt(format!("unknown header key `{other}`"))),
            }
        }
        let channels = channels.ok_or_else(|| fmt("missing `channels`".into()))?;
        let latent = latent.ok_or_else(|| fmt("missing `latent`".into()))?;
        let feat_dim = feat_dim.ok_or_else(|| fmt("missing `feat_dim`".into()))?;
        let key_dim = key_dim.ok_or_else(|| fmt("missing `key_dim`".into()))?;
        let ctx_dim = ctx_dim.ok_or_else(|| fmt("missing `ctx_dim`".into()))?;
        let heads = heads.ok_or_else(|| fmt("missing `heads`".into()))?;
        let n_layers = n_layers.ok_or_else(|| fmt("missing `layers`".into()))?;
        let encoder_mu = encoder_mu.ok_or_else(|| fmt("missing `encoder_mu`".into()))?;
        let encoder_sigma = encoder_sigma.ok_or_else(|| fmt("missing `encoder_sigma`".into()))?;
        if layer_sizes.len() != n_layers {
            return Err(fmt(format!(
                "header declares {n_layers} layers but lists {}",
                layer_sizes.len()
            )));
        }

        // Blob layout: embed_in, then (mix, p_q, p_k, p_v, p_out) per layer
        // in header order, then proj_out.
        let per_layer = feat_dim * feat_dim + feat_dim * key_dim + ctx_dim * key_dim
            + ctx_dim * feat_dim
            + feat_dim * feat_dim;
        let expect = channels * feat_dim + n_layers * per_layer + feat_dim * channels;
        if blob.len() != expect * 4 {
            return Err(fmt(format!(
                "weight blob has {} bytes, expected {} (truncated or padded checkpoint)",
                blob.len(),
                expect * 4
            )));
        }
        let mut floats = Vec::with_capacity(expect);
        for chunk in blob.chunks_exact(4) {
            floats.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
        }
        let mut cursor = 0usize;
        let mut take = |rows: usize, cols: usize| -> Result<Tensor> {
            let n = rows * cols;
            let slice = &floats[cursor..cursor + n];
            cursor += n;
            Tensor::new(vec![rows, cols], slice.to_vec())
                .map_err(|e| fmt(format!("invalid weights: {e}")))
        };
        let embed_in = take(channels, feat_dim)?;
        let mut layers = Vec::with_capacity(n_layers);
        for &spatial in &layer_sizes {
            layers.push(LayerSpec {
                spatial,
                mix: take(feat_dim, feat_dim)?,
                p_q: take(feat_dim, key_dim)?,
                p_k: take(ctx_dim, key_dim)?,
                p_v: take(ctx_dim, feat_dim)?,
                p_out: take(feat_dim, feat_dim)?,
                heads,
            });
        }
        let proj_out = take(feat_dim, channels)?;
        DenoiserModel::new(
            channels,
            latent,
            feat_dim,
            key_dim,
            ctx_dim,
            encoder_mu,
            encoder_sigma,
            embed_in,
            proj_out,
            layers,
        )
    }
}

/// Single cross-attention layer application.
///
/// `visual` is B^2 x feat. Per head: queries `visual * P_Q`, keys/values from
/// the context, softmax over the token axis at scale `1/sqrt(key_dim/heads)`.
/// Heads are averaged into the stored map; the returned output is the
/// concatenated per-head attention result through the output projection.
pub fn cross_attention(
    visual: &Tensor,
    context: &PromptEmbedding,
    layer: &LayerSpec,
) -> Result<(Tensor, Tensor)> {
    let (m, feat_dim) = visual.dims2()?;
    let b = layer.spatial;
    if m != b * b {
        return Err(Error::ModelCorruption(format!(
            "visual rows {m} do not form a {b}x{b} grid"
        )));
    }
    let q = matmul(visual, &layer.p_q)?;
    let k = matmul(context.matrix(), &layer.p_k)?;
    let v = matmul(context.matrix(), &layer.p_v)?;
    let (seq_len, key_dim) = k.dims2()?;
    let heads = layer.heads;
    let (dk, dv) = (key_dim / heads, feat_dim / heads);
    let scale = 1.0 / (dk as f32).sqrt();

    let mut map_acc = vec![0.0f32; seq_len * m];
    let mut out = vec![0.0f32; m * feat_dim];
    for h in 0..heads {
        let (koff, voff) = (h * dk, h * dv);
        // contiguous per-head copies so the contractions are plain matmuls
        let q_h = Tensor::from_fn(vec![m, dk], |i| {
            q.data()[(i / dk) * key_dim + koff + i % dk]
        })?;
        let kt_h = Tensor::from_fn(vec![dk, seq_len], |i| {
            k.data()[(i % seq_len) * key_dim + koff + i / seq_len]
        })?;
        let v_h = Tensor::from_fn(vec![seq_len, dv], |i| {
            v.data()[(i / dv) * feat_dim + voff + i % dv]
        })?;
        let attn = softmax_rows(&matmul(&q_h, &kt_h)?, scale)?;
        let aw = attn.data();
        // transpose into the stored per-token map layout
        for (s, mrow) in map_acc.chunks_mut(m).enumerate() {
            for (pos, d) in mrow.iter_mut().enumerate() {
                *d += aw[pos * seq_len + s];
            }
        }
        let out_h = matmul(&attn, &v_h)?;
        for (pos, orow) in out_h.data().chunks(dv).enumerate() {
            out[pos * feat_dim + voff..pos * feat_dim + voff + dv].copy_from_slice(orow);
        }
    }
    let inv = 1.0 / heads as f32;
    for w in &mut map_acc {
        *w *= inv;
    }
    let map = Tensor::new(vec![seq_len, b, b], map_acc)?;
    let projected = matmul(&Tensor::new(vec![m, feat_dim], out)?, &layer.p_out)?;
    Ok((projected, map))
}

/// Moves a token grid between spatial resolutions: mean pooling when going
/// down, nearest replication when going up.
fn resample_tokens(tokens: &Tensor, from: usize, to: usize) -> Result<Tensor> {
    if from == to {
        return Ok(tokens.clone());
    }
    let (m, dim) = tokens.dims2()?;
    debug_assert_eq!(m, from * from);
    let src = tokens.data();
    let mut out = vec![0.0f32; to * to * dim];
    if to < from {
        let f = from / to;
        let norm = 1.0 / (f * f) as f32;
        for r in 0..to {
            for c in 0..to {
                let dst = &mut out[(r * to + c) * dim..(r * to + c + 1) * dim];
                for ir in 0..f {
                    for ic in 0..f {
                        let pos = (r * f + ir) * from + (c * f + ic);
                        for (d, &s) in dst.iter_mut().zip(&src[pos * dim..(pos + 1) * dim]) {
                            *d += s;
                        }
                    }
                }
                for d in dst.iter_mut() {
                    *d *= norm;
                }
            }
        }
    } else {
        let f = to / from;
        for r in 0..to {
            for c in 0..to {
                let pos = (r / f) * from + c / f;
                out[(r * to + c) * dim..(r * to + c + 1) * dim]
                    .copy_from_slice(&src[pos * dim..(pos + 1) * dim]);
            }
        }
    }
    Tensor::new(vec![to * to, dim], out)
}

/// Classic sinusoidal features: pairs of sin/cos at geometrically spaced
/// frequencies.
fn time_features(t: usize, dim: usize) -> Vec<f32> {
    (0..dim)
        .map(|j| {
            let pair = (j / 2) as f64;
            let omega = 10000f64.powf(-2.0 * pair / dim as f64);
            let angle = t as f64 * omega;
            if j % 2 == 0 {
                angle.sin() as f32
            } else {
                angle.cos() as f32
            }
        })
        .collect()
}

fn join_floats(vals: &[f32]) -> String {
    vals.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
}

fn parse_floats(parts: &[&str], line: &str, origin: &str) -> Result<Vec<f32>> {
    parts
        .iter()
        .map(|p| {
            p.parse::<f32>()
                .map_err(|_| Error::format(origin, format!("bad float in line `{line}`")))
        })
        .collect()
}

fn find_subslice(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}
