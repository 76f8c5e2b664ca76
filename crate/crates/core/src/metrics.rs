//! Phrase-grounding evaluation: ground-truth rasterization, IoU/mIoU,
//! pixelwise AUC-ROC, CNR and |CNR|, and per-pathology summaries.
//!
//! All metrics are computed per image against the union mask of that image's
//! boxes, in f64. Thresholded masks use strict `h > thr`. CNR uses population
//! variances within each region; summaries use sample standard deviations.

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// The five thresholds averaged into mIoU.
pub const MIOU_THRESHOLDS: [f32; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

/// Axis-aligned box in original-image pixels: `x` is the left column, `y`
/// the top row, half-open extents `[x, x+w) x [y, y+h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        BBox { x, y, w, h }
    }
}

/// Binary ground-truth mask: union of box interiors.
#[derive(Debug, Clone)]
pub struct GroundTruthMask {
    grid: Tensor,
    boxes: Vec<BBox>,
    positives: usize,
}

impl GroundTruthMask {
    pub fn grid(&self) -> &Tensor {
        &self.grid
    }

    pub fn boxes(&self) -> &[BBox] {
        &self.boxes
    }

    pub fn positives(&self) -> usize {
        self.positives
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims2().expect("mask grid is 2-D")
    }

    /// Builds a mask from an explicit 0/1 grid; escape hatch for tests and
    /// region manipulations that boxes cannot express.
    pub fn from_binary_grid(grid: Tensor) -> Result<Self> {
        grid.dims2()?;
        if !grid.data().iter().all(|&v| v == 0.0 || v == 1.0) {
            return Err(Error::InvalidGroundTruth("grid values must be exactly 0 or 1".into()));
        }
        let positives = grid.data().iter().filter(|&&v| v == 1.0).count();
        Ok(GroundTruthMask { grid, boxes: Vec::new(), positives })
    }

    /// Complement mask (region swap).
    pub fn complement(&self) -> Result<Self> {
        let data = self.grid.data().iter().map(|&v| 1.0 - v).collect();
        GroundTruthMask::from_binary_grid(Tensor::new(self.grid.shape().to_vec(), data)?)
    }
}

/// Rasterizes boxes into a binary union mask. Out-of-bounds boxes are
/// clamped with a warning; zero-area boxes are skipped with a warning; if no
/// box survives, the ground truth is invalid.
pub fn rasterize_bboxes(boxes: &[BBox], height: usize, width: usize) -> Result<GroundTruthMask> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("mask extents must be positive".into()));
    }
    let mut grid = vec![0.0f32; height * width];
    let mut kept = 0usize;
    for (i, b) in boxes.iter().enumerate() {
        let x0 = (b.x as usize).min(width);
        let y0 = (b.y as usize).min(height);
        let x1 = (b.x as usize).saturating_add(b.w as usize).min(width);
        let y1 = (b.y as usize).saturating_add(b.h as usize).min(height);
        if x1 > width || y1 > height || b.x as usize + b.w as usize > width || b.y as usize + b.h as usize > height {
            log::warn!("box {i} {b:?} clamped to {width}x{height} image");
        }
        if x0 >= x1 || y0 >= y1 {
            log::warn!("box {i} {b:?} has zero area after clamping; skipped");
            continue;
        }
        kept += 1;
        for row in grid[y0 * width..y1 * width].chunks_mut(width) {
            for v in &mut row[x0..x1] {
                *v = 1.0;
            }
        }
    }
    if kept == 0 {
        return Err(Error::InvalidGroundTruth(format!(
            "no box with positive area among {} boxes",
            boxes.len()
        )));
    }
    let positives = grid.iter().filter(|&&v| v == 1.0).count();
    Ok(GroundTruthMask {
        grid: Tensor::new(vec![height, width], grid)?,
        boxes: boxes.to_vec(),
        positives,
    })
}

/// IoU of `{h > thr}` against the ground-truth mask. An empty union is
/// defined as 0 and flagged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IouOutcome {
    pub value: f64,
    pub empty_union: bool,
}

pub fn iou_at_threshold(h: &Tensor, gt: &GroundTruthMask, thr: f32) -> Result<IouOutcome> {
    if h.shape() != gt.grid.shape() {
        return Err(Error::ShapeMismatch(format!(
            "heatmap {:?} vs ground truth {:?}",
            h.shape(),
            gt.grid.shape()
        )));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&score, &m) in h.data().iter().zip(gt.grid.data()) {
        let pred = score > thr;
        let pos = m == 1.0;
        if pred && pos {
            inter += 1;
        }
        if pred || pos {
            union += 1;
        }
    }
    if union == 0 {
        return Ok(IouOutcome { value: 0.0, empty_union: true });
    }
    Ok(IouOutcome { value: inter as f64 / union as f64, empty_union: false })
}

/// Mean IoU over the five fixed thresholds, with the per-threshold values.
#[derive(Debug, Clone, Copy)]
pub struct MiouOutcome {
    pub value: f64,
    pub per_threshold: [IouOutcome; 5],
}

pub fn miou(h: &Tensor, gt: &GroundTruthMask) -> Result<MiouOutcome> {
    let mut per = [IouOutcome { value: 0.0, empty_union: false }; 5];
    for (slot, &thr) in per.iter_mut().zip(&MIOU_THRESHOLDS) {
        *slot = iou_at_threshold(h, gt, thr)?;
    }
    let value = per.iter().map(|o| o.value).sum::<f64>() / per.len() as f64;
    Ok(MiouOutcome { value, per_threshold: per })
}

/// Pixelwise AUC-ROC via midrank Mann-Whitney; undefined when the ground
/// truth has a single class.
pub fn auc_roc(h: &Tensor, gt: &GroundTruthMask) -> Result<f64> {
    if h.shape() != gt.grid.shape() {
        return Err(Error::ShapeMismatch(format!(
            "heatmap {:?} vs ground truth {:?}",
            h.shape(),
            gt.grid.shape()
        )));
    }
    let n_pos = gt.positives;
    let n_neg = gt.grid.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC-ROC needs both classes; mask has {n_pos} positive / {n_neg} negative pixels"
        )));
    }
    let mut scored: Vec<(f32, bool)> = h
        .data()
        .iter()
        .zip(gt.grid.data())
        .map(|(&s, &m)| (s, m == 1.0))
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));

    // Midrank sum over positives, walking runs of tied scores.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0usize;
    while i < scored.len() {
        let mut j = i;
        let mut pos_in_run = 0usize;
        while j < scored.len() && scored[j].0 == scored[i].0 {
            if scored[j].1 {
                pos_in_run += 1;
            }
            j += 1;
        }
        // 1-based ranks i+1 ..= j share midrank (i + j + 1) / 2.
        let midrank = (i + j + 1) as f64 / 2.0;
        rank_sum_pos += midrank * pos_in_run as f64;
        i = j;
    }
    let p = n_pos as f64;
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    Ok(u / (p * n_neg as f64))
}

fn region_stats(h: &Tensor, gt: &GroundTruthMask) -> Result<(f64, f64, f64, f64)> {
    if h.shape() != gt.grid.shape() {
        return Err(Error::ShapeMismatch(format!(
            "heatmap {:?} vs ground truth {:?}",
            h.shape(),
            gt.grid.shape()
        )));
    }
    let n_pos = gt.positives;
    let n_neg = gt.grid.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "CNR needs both a region and a complement with at least one pixel each".into(),
        ));
    }
    let mut sum_a = 0.0f64;
    let mut sum_b = 0.0f64;
    for (&s, &m) in h.data().iter().zip(gt.grid.data()) {
        if m == 1.0 {
            sum_a += s as f64;
        } else {
            sum_b += s as f64;
        }
    }
    let mu_a = sum_a / n_pos as f64;
    let mu_b = sum_b / n_neg as f64;
    let mut ss_a = 0.0f64;
    let mut ss_b = 0.0f64;
    for (&s, &m) in h.data().iter().zip(gt.grid.data()) {
        let s = s as f64;
        if m == 1.0 {
            ss_a += (s - mu_a) * (s - mu_a);
        } else {
            ss_b += (s - mu_b) * (s - mu_b);
        }
    }
    // population variances
    Ok((mu_a, ss_a / n_pos as f64, mu_b, ss_b / n_neg as f64))
}

/// Contrast-to-noise ratio `(mu_A - mu_comp) / sqrt(var_A + var_comp)` with
/// population variances; undefined when both variances are zero.
pub fn cnr(h: &Tensor, gt: &GroundTruthMask) -> Result<f64> {
    let (mu_a, var_a, mu_b, var_b) = region_stats(h, gt)?;
    let denom = var_a + var_b;
    if denom == 0.0 {
        return Err(Error::UndefinedMetric("CNR denominator is zero (both regions constant)".into()));
    }
    Ok((mu_a - mu_b) / denom.sqrt())
}

/// `|CNR|`: absolute contrast over the same denominator.
pub fn abs_cnr(h: &Tensor, gt: &GroundTruthMask) -> Result<f64> {
    cnr(h, gt).map(f64::abs)
}

/// Per-sample metric values; `None` marks a metric that was undefined for
/// this sample (the flag list says why).
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRecord {
    pub sample_id: String,
    pub pathology: String,
    pub miou: Option<f64>,
    pub per_threshold_iou: Option<[f64; 5]>,
    pub auc_roc: Option<f64>,
    pub cnr: Option<f64>,
    pub abs_cnr: Option<f64>,
    pub flags: Vec<String>,
}

/// Mean and sample standard deviation of the defined values of one metric.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MetricStat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

fn stat(values: &[f64]) -> Option<MetricStat> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some(MetricStat { mean, std, count: values.len() })
}

/// Per-pathology aggregate row; the final row is the unweighted macro
/// average across labels.
#[derive(Debug, Clone, Serialize)]
pub struct PathologySummary {
    pub label: String,
    pub n: usize,
    pub excluded: usize,
    pub miou: Option<MetricStat>,
    pub auc_roc: Option<MetricStat>,
    pub cnr: Option<MetricStat>,
    pub abs_cnr: Option<MetricStat>,
}

/// Label used for the macro-average row.
pub const MACRO_LABEL: &str = "Avg";

/// Groups records by pathology (first-occurrence order), computes per-label
/// mean/sample-std for each metric, and appends an unweighted macro-average
/// row across the label means. `excluded` carries per-label counts of
/// samples dropped before metric computation.
pub fn summarize(
    records: &[MetricsRecord],
    excluded: &BTreeMap<String, usize>,
) -> Vec<PathologySummary> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records {
        if !groups.contains_key(&r.pathology) {
            order.push(r.pathology.clone());
        }
        groups.entry(r.pathology.clone()).or_default().push(r);
    }
    for label in excluded.keys() {
        if !groups.contains_key(label) {
            log::warn!("pathology `{label}` has only excluded samples");
            order.push(label.clone());
        }
    }

    let mut out = Vec::new();
    for label in &order {
        let rs = groups.get(label).map(|v| v.as_slice()).unwrap_or(&[]);
        let excluded_n = excluded.get(label).copied().unwrap_or(0);
        if rs.is_empty() && excluded_n == 0 {
            log::warn!("pathology `{label}` has no samples; omitted");
            continue;
        }
        let collect = |f: fn(&MetricsRecord) -> Option<f64>| -> Vec<f64> {
            rs.iter().filter_map(|r| f(r)).collect()
        };
        out.push(PathologySummary {
            label: label.clone(),
            n: rs.len(),
            excluded: excluded_n,
            miou: stat(&collect(|r| r.miou)),
            auc_roc: stat(&collect(|r| r.auc_roc)),
            cnr: stat(&collect(|r| r.cnr)),
            abs_cnr: stat(&collect(|r| r.abs_cnr)),
        });
    }

    // Unweighted macro average of the label means.
    let macro_stat = |f: fn(&PathologySummary) -> Option<MetricStat>| -> Option<MetricStat> {
        let means: Vec<f64> = out.iter().filter_map(|s| f(s).map(|m| m.mean)).collect();
        stat(&means)
    };
    let avg = PathologySummary {
        label: MACRO_LABEL.to_string(),
        n: out.iter().map(|s| s.n).sum(),
        excluded: out.iter().map(|s| s.excluded).sum(),
        miou: macro_stat(|s| s.miou),
        auc_roc: macro_stat(|s| s.auc_roc),
        cnr: macro_stat(|s| s.cnr),
        abs_cnr: macro_stat(|s| s.abs_cnr),
    };
    out.push(avg);
    out
}
