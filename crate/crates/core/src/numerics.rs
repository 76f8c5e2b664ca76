//! Dense f32 tensors and the small set of numeric kernels the pipeline needs.
//!
//! Everything is row-major `Vec<f32>` with shape metadata; there is no
//! broadcasting, no autodiff and no GPU path. All public operations are pure
//! functions on immutable inputs and keep two invariants: the flat data
//! length equals the product of the extents, and every element is finite.
//!
//! Conventions frozen here because downstream golden values depend on them:
//! - `matmul` accumulates sequentially over the inner dimension in row-major
//!   order, so results are bit-exact across platforms.
//! - `resize_bilinear` and `resize_nearest` use half-pixel-center coordinate
//!   mapping with edge clamping.
//! - `gaussian_smooth` uses a separable 1-D kernel truncated at radius
//!   `ceil(4*sigma)`, renormalized to sum 1, with reflect padding.

use crate::error::{Error, Result};

/// Dense row-major tensor of 32-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, validating extents, length and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&e| e == 0) {
            return Err(Error::InvalidArgument(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::ShapeMismatch(format!(
                "data length {} does not match shape {:?} (expects {})",
                data.len(),
                shape,
                expect
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("Tensor::new"));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len: usize = shape.iter().product();
        Tensor::new(shape, vec![0.0; len])
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> f32) -> Result<Self> {
        let len: usize = shape.iter().product();
        Tensor::new(shape, (0..len).map(|i| f(i)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Extents of a 2-D tensor as `(rows, cols)`.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            other => Err(Error::ShapeMismatch(format!("expected 2-D tensor, got {other:?}"))),
        }
    }

    /// Extents of a 3-D tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[a, b, c] => Ok((a, b, c)),
            other => Err(Error::ShapeMismatch(format!("expected 3-D tensor, got {other:?}"))),
        }
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    /// Largest absolute elementwise difference between two same-shape tensors.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    /// Reinterprets the flat data under a new shape with the same length.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        let expect: usize = shape.iter().product();
        if expect != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        Ok(Tensor { shape, data: self.data.clone() })
    }
}

/// Matrix product of `a` (m×k) and `b` (k×n).
///
/// The accumulation order is fixed: for each output element the inner sum
/// runs sequentially over k. Tests rely on bit-exact agreement with a naive
/// triple loop.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, ka) = a.dims2()?;
    let (kb, n) = b.dims2()?;
    if ka != kb {
        return Err(Error::ShapeMismatch(format!(
            "matmul inner extents differ: {m}x{ka} vs {kb}x{n}"
        )));
    }
    let av = a.data();
    let bv = b.data();
    // k-outer accumulation: each output element still sums its k terms in
    // ascending order (bit-identical to the naive triple loop), but the
    // inner loop runs over independent accumulators and vectorizes.
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let arow = &av[i * ka..(i + 1) * ka];
        let dst = &mut out[i * n..(i + 1) * n];
        for (k, &x) in arow.iter().enumerate() {
            let brow = &bv[k * n..(k + 1) * n];
            for (d, &y) in dst.iter_mut().zip(brow) {
                *d += x * y;
            }
        }
    }
    if !out.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("matmul"));
    }
    Ok(Tensor { shape: vec![m, n], data: out })
}

/// Row-wise softmax of `scale * logits` with per-row max subtraction. The
/// denominator is accumulated in f64 so row sums hold 1 within 1e-6 even for
/// long rows.
pub fn softmax_rows(logits: &Tensor, scale: f32) -> Result<Tensor> {
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument(format!("softmax scale must be > 0, got {scale}")));
    }
    let (m, n) = logits.dims2()?;
    let src = logits.data();
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let row = &src[i * n..(i + 1) * n];
        let dst = &mut out[i * n..(i + 1) * n];
        let mut hi = f32::NEG_INFINITY;
        for &x in row {
            hi = hi.max(x * scale);
        }
        let mut sum = 0.0f64;
        for (d, &x) in dst.iter_mut().zip(row) {
            let e = (x * scale - hi).exp();
            *d = e;
            sum += e as f64;
        }
        for d in dst.iter_mut() {
            *d = (*d as f64 / sum) as f32;
        }
    }
    Ok(Tensor { shape: vec![m, n], data: out })
}

/// Rescales values affinely so the minimum maps to 0 and the maximum to 1.
///
/// A constant input maps to all zeros, so degenerate maps contribute nothing
/// when averaged into a heatmap.
pub fn minmax_normalize(map: &Tensor) -> Tensor {
    let lo = map.min();
    let hi = map.max();
    if hi <= lo {
        return Tensor { shape: map.shape.clone(), data: vec![0.0; map.data.len()] };
    }
    let span = hi - lo;
    let data = map.data.iter().map(|&v| ((v - lo) / span).clamp(0.0, 1.0)).collect();
    Tensor { shape: map.shape.clone(), data }
}

/// Source coordinate for destination index `i` under half-pixel centers.
#[inline]
fn src_coord(i: usize, src: usize, dst: usize) -> f32 {
    (i as f32 + 0.5) * (src as f32 / dst as f32) - 0.5
}

/// Bilinear resize of a 2-D map with half-pixel-center mapping and edge
/// clamping. Output values stay inside the input's [min, max] envelope.
pub fn resize_bilinear(map: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w) = map.dims2()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument("resize target extents must be >= 1".into()));
    }
    if out_h == h && out_w == w {
        return Ok(map.clone());
    }
    let src = map.data();
    let mut out = vec![0.0f32; out_h * out_w];
    // Precompute the horizontal taps once per output column.
    let mut cols = Vec::with_capacity(out_w);
    for j in 0..out_w {
        let x = src_coord(j, w, out_w).max(0.0);
        let x0 = (x.floor() as usize).min(w - 1);
        let x1 = (x0 + 1).min(w - 1);
        let fx = (x - x0 as f32).clamp(0.0, 1.0);
        cols.push((x0, x1, fx));
    }
    for i in 0..out_h {
        let y = src_coord(i, h, out_h).max(0.0);
        let y0 = (y.floor() as usize).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fy = (y - y0 as f32).clamp(0.0, 1.0);
        let top = &src[y0 * w..y0 * w + w];
        let bot = &src[y1 * w..y1 * w + w];
        let dst = &mut out[i * out_w..(i + 1) * out_w];
        for (d, &(x0, x1, fx)) in dst.iter_mut().zip(&cols) {
            let t = top[x0] + (top[x1] - top[x0]) * fx;
            let b = bot[x0] + (bot[x1] - bot[x0]) * fx;
            *d = t + (b - t) * fy;
        }
    }
    Ok(Tensor { shape: vec![out_h, out_w], data: out })
}

/// Nearest-neighbor resize with half-pixel-center mapping; used when scaling
/// heatmaps to the original image resolution before metric evaluation.
pub fn resize_nearest(map: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w) = map.dims2()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument("resize target extents must be >= 1".into()));
    }
    let src = map.data();
    let mut out = vec![0.0f32; out_h * out_w];
    let col_idx: Vec<usize> = (0..out_w)
        .map(|j| (src_coord(j, w, out_w).round().max(0.0) as usize).min(w - 1))
        .collect();
    for i in 0..out_h {
        let si = (src_coord(i, h, out_h).round().max(0.0) as usize).min(h - 1);
        let row = &src[si * w..si * w + w];
        let dst = &mut out[i * out_w..(i + 1) * out_w];
        for (d, &sj) in dst.iter_mut().zip(&col_idx) {
            *d = row[sj];
        }
    }
    Ok(Tensor { shape: vec![out_h, out_w], data: out })
}

/// Normalized 1-D Gaussian kernel truncated at radius `ceil(4*sigma)`.
pub fn gaussian_kernel(sigma: f32) -> Result<Vec<f32>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be > 0, got {sigma}")));
    }
    let radius = (4.0 * sigma).ceil() as i64;
    let inv = -0.5 / (sigma as f64 * sigma as f64);
    let mut k: Vec<f64> = (-radius..=radius).map(|i| ((i * i) as f64 * inv).exp()).collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    Ok(k.into_iter().map(|v| v as f32).collect())
}

/// Reflects an out-of-range index back into `0..n` (edge sample repeated).
#[inline]
fn reflect(mut i: i64, n: i64) -> usize {
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Separable Gaussian convolution with reflect padding. A constant map is
/// invariant; output values are clamped to the input's [min, max] envelope
/// (the convex-combination bound, made exact under f32 rounding).
pub fn gaussian_smooth(map: &Tensor, sigma: f32) -> Result<Tensor> {
    let (h, w) = map.dims2()?;
    let kernel = gaussian_kernel(sigma)?;
    let radius = (kernel.len() / 2) as i64;
    let src = map.data();
    let (lo, hi) = (map.min(), map.max());

    // Horizontal pass.
    let mut mid = vec![0.0f32; h * w];
    for i in 0..h {
        let row = &src[i * w..(i + 1) * w];
        let dst = &mut mid[i * w..(i + 1) * w];
        for (j, d) in dst.iter_mut().enumerate() {
            let mut acc = 0.0f32;
            for (ki, &kv) in kernel.iter().enumerate() {
                let sj = reflect(j as i64 + ki as i64 - radius, w as i64);
                acc += kv * row[sj];
            }
            *d = acc;
        }
    }
    // Vertical pass.
    let mut out = vec![0.0f32; h * w];
    for j in 0..w {
        for i in 0..h {
            let mut acc = 0.0f32;
            for (ki, &kv) in kernel.iter().enumerate() {
                let si = reflect(i as i64 + ki as i64 - radius, h as i64);
                acc += kv * mid[si * w + j];
            }
            out[i * w + j] = acc.clamp(lo, hi);
        }
    }
    Ok(Tensor { shape: vec![h, w], data: out })
}

/// Non-overlapping mean pooling of a 2-D map down to `out×out`; the input
/// extents must be exact multiples of the target.
pub fn mean_pool(map: &Tensor, out: usize) -> Result<Tensor> {
    let (h, w) = map.dims2()?;
    if out == 0 || h % out != 0 || w % out != 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot mean-pool {h}x{w} to {out}x{out}: extents must divide evenly"
        )));
    }
    let (bh, bw) = (h / out, w / out);
    let norm = 1.0 / (bh * bw) as f32;
    let src = map.data();
    let mut dst = vec![0.0f32; out * out];
    for oi in 0..out {
        for oj in 0..out {
            let mut acc = 0.0f32;
            for r in 0..bh {
                let row = &src[(oi * bh + r) * w + oj * bw..][..bw];
                for &v in row {
                    acc += v;
                }
            }
            dst[oi * out + oj] = acc * norm;
        }
    }
    Ok(Tensor { shape: vec![out, out], data: dst })
}
