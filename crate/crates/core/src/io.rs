//! Dataset and artifact I/O: manifests, images, checkpoints, vocabularies,
//! heatmap dumps and CSV reports.
//!
//! File formats:
//! - Manifest: JSON, either a bare array of entry objects or a versioned
//!   object `{"version": 1, "labels": [...]?, "entries": [...]}`. Each entry
//!   is `{image, prompt, pathology, patient_id, boxes: [[x,y,w,h], ...],
//!   orig_size: [H, W]}` with box coordinates in original-image pixels,
//!   x = column / y = row from the top-left, half-open extents.
//! - Images: binary PGM (P5, maxval 255) or 8-bit grayscale PNG.
//! - Heatmap dump: quantized PGM preview plus an f32 sidecar with a 16-byte
//!   header (8-byte magic `HMAPv1\0\0`, u32 LE height, u32 LE width) and the
//!   row-major little-endian f32 payload.
//! - Reports: RFC-4180 CSV (CRLF line endings, quoted fields, header row).
//!
//! Writers stage into a sibling temp file and rename, so readers never see a
//! partial file.

use crate::denoiser::{DenoiserModel, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::metrics::{BBox, MetricsRecord, PathologySummary};
use crate::numerics::{self, Tensor};
use crate::text::Vocabulary;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

const HMAP_MAGIC: &[u8; 8] = b"HMAPv1\0\0";

/// One manifest row, validated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: String,
    pub prompt: String,
    pub pathology: String,
    pub patient_id: String,
    pub boxes: Vec<BBox>,
    /// Original image extents as (height, width); metrics run at this size.
    pub orig_size: (u32, u32),
}

#[derive(Deserialize)]
struct RawEntry {
    image: String,
    prompt: String,
    pathology: String,
    patient_id: String,
    boxes: Vec<[i64; 4]>,
    orig_size: [i64; 2],
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ManifestFile {
    Versioned {
        version: u32,
        #[serde(default)]
        labels: Option<Vec<String>>,
        entries: Vec<RawEntry>,
    },
    Bare(Vec<RawEntry>),
}

/// Parses and validates manifest JSON; every offending entry is reported in
/// one validation error.
pub fn parse_manifest(json: &str, origin: &str) -> Result<Vec<ManifestEntry>> {
    let file: ManifestFile = serde_json::from_str(json)
        .map_err(|e| Error::format(origin, format!("manifest JSON does not parse: {e}")))?;
    let (labels, raw) = match file {
        ManifestFile::Versioned { version, labels, entries } => {
            if version != 1 {
                return Err(Error::format(origin, format!("unsupported manifest version {version}")));
            }
            (labels, entries)
        }
        ManifestFile::Bare(entries) => (None, entries),
    };
    let mut problems: Vec<String> = Vec::new();
    let mut out = Vec::with_capacity(raw.len());
    for (i, e) in raw.into_iter().enumerate() {
        let e_id = format!("{}/{}", e.patient_id, e.image);
        let before = problems.len();
        if e.image.is_empty() {
            problems.push(format!("entry {i} ({e_id}): empty image path"));
        }
        if e.patient_id.is_empty() {
            problems.push(format!("entry {i} ({e_id}): empty patient_id"));
        }
        if let Some(ls) = &labels {
            if !ls.contains(&e.pathology) {
                problems.push(format!("entry {i} ({e_id}): unknown label `{}`", e.pathology));
            }
        }
        let (oh, ow) = (e.orig_size[0], e.orig_size[1]);
        if oh < 1 || ow < 1 {
            problems.push(format!("entry {i} ({e_id}): orig_size {:?} must be positive", e.orig_size));
        }
        let mut boxes = Vec::with_capacity(e.boxes.len());
        for (j, b) in e.boxes.iter().enumerate() {
            let [x, y, w, h] = *b;
            if x < 0 || y < 0 {
                problems.push(format!("entry {i} ({e_id}): box {j} has negative coordinates {b:?}"));
            } else if w < 1 || h < 1 {
                problems.push(format!("entry {i} ({e_id}): box {j} has non-positive extent {b:?}"));
            } else {
                boxes.push(BBox::new(x as u32, y as u32, w as u32, h as u32));
            }
        }
        if problems.len() == before {
            out.push(ManifestEntry {
                image: e.image,
                prompt: e.prompt,
                pathology: e.pathology,
                patient_id: e.patient_id,
                boxes,
                orig_size: (oh as u32, ow as u32),
            });
        }
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems.join("; ")));
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_manifest(&text, &path.display().to_string())
}

/// A merged evaluation sample: one per unique (patient_id, prompt) key, with
/// the union of the duplicate entries' box lists.
#[derive(Debug, Clone)]
pub struct GroundingSample {
    /// Deterministic id: `<patient_id>:<merge ordinal>`.
    pub sample_id: String,
    pub image: String,
    pub prompt: String,
    pub pathology: String,
    pub patient_id: String,
    pub boxes: Vec<BBox>,
    pub orig_size: (u32, u32),
}

/// Groups entries by (patient_id, prompt), concatenating box lists; order is
/// stable by first occurrence. Duplicate keys must agree on the image path.
pub fn merge_samples(entries: &[ManifestEntry]) -> Result<Vec<GroundingSample>> {
    let mut order: Vec<GroundingSample> = Vec::new();
    let mut index: HashMap<(String, String), usize> = HashMap::new();
    let mut problems: Vec<String> = Vec::new();
    for e in entries {
        let key = (e.patient_id.clone(), e.prompt.clone());
        match index.get(&key) {
            Some(&i) => {
                let s = &mut order[i];
                if s.image != e.image {
                    problems.push(format!(
                        "key ({}, `{}`) maps to both image `{}` and `{}`",
                        e.patient_id, e.prompt, s.image, e.image
                    ));
                    continue;
                }
                if s.pathology != e.pathology {
                    problems.push(format!(
                        "key ({}, `{}`) maps to both pathology `{}` and `{}`",
                        e.patient_id, e.prompt, s.pathology, e.pathology
                    ));
                    continue;
                }
                s.boxes.extend(e.boxes.iter().copied());
            }
            None => {
                let ordinal = order.len();
                index.insert(key, ordinal);
                order.push(GroundingSample {
                    sample_id: format!("{}:{:03}", e.patient_id, ordinal),
                    image: e.image.clone(),
                    prompt: e.prompt.clone(),
                    pathology: e.pathology.clone(),
                    patient_id: e.patient_id.clone(),
                    boxes: e.boxes.clone(),
                    orig_size: e.orig_size,
                });
            }
        }
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems.join("; ")));
    }
    Ok(order)
}

/// Loaded image: pixels scaled to `[0,1]` and resized to 512x512, plus the
/// file's own extents.
#[derive(Debug, Clone)]
pub struct LoadedImage {
    pub pixels: Tensor,
    /// (height, width) of the file before resizing.
    pub file_size: (u32, u32),
}

/// Reads a PGM (P5) or 8-bit grayscale PNG, scales bytes to `[0,1]`, and
/// bilinearly resizes to 512x512 (a 512x512 input is passed through).
pub fn load_image(path: &Path) -> Result<LoadedImage> {
    let origin = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| Error::io(origin.clone(), e))?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let (w, h, gray) = match ext.as_str() {
        "pgm" => parse_pgm(&bytes, &origin)?,
        "png" => {
            let img = image::load_from_memory(&bytes)
                .map_err(|e| Error::format(&origin, format!("PNG does not decode: {e}")))?;
            match img {
                image::DynamicImage::ImageLuma8(g) => {
                    (g.width() as usize, g.height() as usize, g.into_raw())
                }
                other => {
                    return Err(Error::format(
                        &origin,
                        format!("expected 8-bit grayscale PNG, got {other:?}"),
                    ))
                }
            }
        }
        other => {
            return Err(Error::format(
                &origin,
                format!("unsupported image extension `.{other}` (PGM or PNG)"),
            ))
        }
    };
    let raw = Tensor::new(vec![h, w], gray.iter().map(|&b| b as f32 / 255.0).collect())?;
    let pixels = if h == IMAGE_SIZE && w == IMAGE_SIZE {
        raw
    } else {
        numerics::resize_bilinear(&raw, IMAGE_SIZE, IMAGE_SIZE)?
    };
    Ok(LoadedImage { pixels, file_size: (h as u32, w as u32) })
}

/// Minimal P5 parser: `P5`, whitespace/comments, width, height, maxval 255,
/// one whitespace byte, then raw samples.
fn parse_pgm(bytes: &[u8], origin: &str) -> Result<(usize, usize, Vec<u8>)> {
    let fmt = |reason: &str| Error::format(origin, reason.to_string());
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(fmt("not a binary PGM (missing P5 magic)"));
    }
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(fmt("corrupt PGM header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| fmt("corrupt PGM header"))?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(fmt("only 8-bit PGM (maxval 255) is supported"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(fmt("corrupt PGM header"));
    }
    pos += 1;
    let data = &bytes[pos..];
    if data.len() != w * h {
        return Err(Error::format(
            origin,
            format!("PGM payload has {} bytes, expected {}", data.len(), w * h),
        ));
    }
    Ok((w, h, data.to_vec()))
}

/// Writes `bytes` to `path` atomically (temp file + rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let origin = path.display().to_string();
    let tmp: PathBuf = {
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".tmp");
        path.with_file_name(name)
    };
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(tmp.display().to_string(), e))?;
        f.write_all(bytes).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(origin, e))?;
    Ok(())
}

/// Serializes a `[0,1]` map as an 8-bit binary PGM.
pub fn pgm_bytes(map: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = map.dims2()?;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(map.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn save_pgm(path: &Path, map: &Tensor) -> Result<()> {
    write_atomic(path, &pgm_bytes(map)?)
}

/// Writes the heatmap pair: `<stem>.pgm` preview and `<stem>.hmap` f32
/// sidecar. Returns the two paths.
pub fn save_heatmap(stem: &Path, map: &Tensor) -> Result<(PathBuf, PathBuf)> {
    let (h, w) = map.dims2()?;
    let pgm_path = stem.with_extension("pgm");
    save_pgm(&pgm_path, map)?;

    let mut sidecar = Vec::with_capacity(16 + map.len() * 4);
    sidecar.extend_from_slice(HMAP_MAGIC);
    sidecar.extend_from_slice(&(h as u32).to_le_bytes());
    sidecar.extend_from_slice(&(w as u32).to_le_bytes());
    for v in map.data() {
        sidecar.extend_from_slice(&v.to_le_bytes());
    }
    let hmap_path = stem.with_extension("hmap");
    write_atomic(&hmap_path, &sidecar)?;
    Ok((pgm_path, hmap_path))
}

/// Reads back an f32 heatmap sidecar, bit-exactly.
pub fn load_heatmap(path: &Path) -> Result<Tensor> {
    let origin = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| Error::io(origin.clone(), e))?;
    if bytes.len() < 16 || &bytes[..8] != HMAP_MAGIC {
        return Err(Error::format(&origin, "bad heatmap sidecar magic/header"));
    }
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let payload = &bytes[16..];
    if payload.len() != h * w * 4 {
        return Err(Error::format(
            &origin,
            format!("sidecar payload has {} bytes, expected {}", payload.len(), h * w * 4),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(vec![h, w], data)
}

pub fn load_checkpoint(path: &Path) -> Result<DenoiserModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    DenoiserModel::from_bytes(&bytes, &path.display().to_string())
}

pub fn save_checkpoint(path: &Path, model: &DenoiserModel) -> Result<()> {
    write_atomic(path, &model.to_bytes())
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Vocabulary::from_bytes(&bytes, &path.display().to_string())
}

pub fn save_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    write_atomic(path, &vocab.to_bytes())
}

/// RFC-4180 field quoting: quotes when the field contains a comma, quote,
/// CR or LF; embedded quotes are doubled.
pub fn csv_field(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\r') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Serializes rows (header first) as RFC-4180 CSV with CRLF line endings.
pub fn csv_bytes(rows: &[Vec<String>]) -> Vec<u8> {
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row.iter().map(|f| csv_field(f)).collect();
        out.push_str(&line.join(","));
        out.push_str("\r\n");
    }
    out.into_bytes()
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// Per-sample report CSV: id, label, miou, auc_roc, cnr, abs_cnr, flags.
pub fn report_rows(records: &[MetricsRecord]) -> Vec<Vec<String>> {
    let mut rows = vec![vec![
        "sample_id".to_string(),
        "pathology".to_string(),
        "miou".to_string(),
        "auc_roc".to_string(),
        "cnr".to_string(),
        "abs_cnr".to_string(),
        "flags".to_string(),
    ]];
    for r in records {
        rows.push(vec![
            r.sample_id.clone(),
            r.pathology.clone(),
            fmt_metric(r.miou),
            fmt_metric(r.auc_roc),
            fmt_metric(r.cnr),
            fmt_metric(r.abs_cnr),
            r.flags.join(";"),
        ]);
    }
    rows
}

pub fn save_report(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    write_atomic(path, &csv_bytes(&report_rows(records)))
}

/// Summary CSV mirroring the per-pathology table: one row per label plus the
/// macro-average row.
pub fn summary_rows(summaries: &[PathologySummary]) -> Vec<Vec<String>> {
    let mut rows = vec![vec![
        "pathology".to_string(),
        "n".to_string(),
        "excluded".to_string(),
        "miou_mean".to_string(),
        "miou_std".to_string(),
        "auc_roc_mean".to_string(),
        "auc_roc_std".to_string(),
        "cnr_mean".to_string(),
        "cnr_std".to_string(),
        "abs_cnr_mean".to_string(),
        "abs_cnr_std".to_string(),
    ]];
    for s in summaries {
        let pair = |m: &Option<crate::metrics::MetricStat>| {
            (
                fmt_metric(m.as_ref().map(|m| m.mean)),
                fmt_metric(m.as_ref().map(|m| m.std)),
            )
        };
        let (miou_m, miou_s) = pair(&s.miou);
        let (auc_m, auc_s) = pair(&s.auc_roc);
        let (cnr_m, cnr_s) = pair(&s.cnr);
        let (acnr_m, acnr_s) = pair(&s.abs_cnr);
        rows.push(vec![
            s.label.clone(),
            s.n.to_string(),
            s.excluded.to_string(),
            miou_m,
            miou_s,
            auc_m,
            auc_s,
            cnr_m,
            cnr_s,
            acnr_m,
            acnr_s,
        ]);
    }
    rows
}

pub fn save_summary(path: &Path, summaries: &[PathologySummary]) -> Result<()> {
    write_atomic(path, &csv_bytes(&summary_rows(summaries)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn entry(patient: &str, prompt: &str, image: &str, boxes: Vec<[i64; 4]>) -> String {
        format!(
            r#"{{"image": "{image}", "prompt": "{prompt}", "pathology": "edema", "patient_id": "{patient}", "boxes": {boxes:?}, "orig_size": [64, 64]}}"#
        )
    }

    #[test]
    fn empty_manifest_array_is_empty_list() {
        assert!(parse_manifest("[]", "mem").unwrap().is_empty());
        let versioned = r#"{"version": 1, "entries": []}"#;
        assert!(parse_manifest(versioned, "mem").unwrap().is_empty());
    }

    #[test]
    fn manifest_rejects_zero_extent_box_by_name() {
        let json = format!("[{}]", entry("p1", "edema", "img.pgm", vec![[0, 0, 0, 5]]));
        let err = parse_manifest(&json, "mem").unwrap_err();
        match err {
            Error::Validation(msg) => {
                assert!(msg.contains("p1"), "message should name the entry: {msg}");
                assert!(msg.contains("non-positive extent"));
            }
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn manifest_collects_all_offenders() {
        let json = format!(
            "[{}, {}]",
            entry("p1", "a", "x.pgm", vec![[0, 0, 0, 5]]),
            entry("p2", "b", "y.pgm", vec![[-1, 0, 3, 3]])
        );
        let err = parse_manifest(&json, "mem").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("p1") && msg.contains("p2"));
    }

    #[test]
    fn manifest_golden_fixture_round_trip() {
        let json = r#"{
            "version": 1,
            "labels": ["edema", "lesion"],
            "entries": [
                {"image": "a.pgm", "prompt": "mild edema", "pathology": "edema",
                 "patient_id": "p01", "boxes": [[4, 8, 16, 12]], "orig_size": [100, 120]},
                {"image": "b.pgm", "prompt": "lesion", "pathology": "lesion",
                 "patient_id": "p02", "boxes": [[0, 0, 5, 5], [10, 10, 6, 6]], "orig_size": [64, 64]},
                {"image": "c.png", "prompt": "edema", "pathology": "edema",
                 "patient_id": "p03", "boxes": [], "orig_size": [80, 80]}
            ]
        }"#;
        let entries = parse_manifest(json, "mem").unwrap();
        assert_eq!(entries.len(), 3);
        assert_eq!(entries[0].image, "a.pgm");
        assert_eq!(entries[0].prompt, "mild edema");
        assert_eq!(entries[0].boxes, vec![BBox::new(4, 8, 16, 12)]);
        assert_eq!(entries[0].orig_size, (100, 120));
        assert_eq!(entries[1].boxes.len(), 2);
        assert!(entries[2].boxes.is_empty());

        // unknown label rejected when labels are declared
        let bad = json.replace("\"pathology\": \"lesion\"", "\"pathology\": \"ghost\"");
        assert!(matches!(parse_manifest(&bad, "mem"), Err(Error::Validation(_))));
    }

    fn me(patient: &str, prompt: &str, image: &str, nboxes: usize) -> ManifestEntry {
        ManifestEntry {
            image: image.to_string(),
            prompt: prompt.to_string(),
            pathology: "edema".to_string(),
            patient_id: patient.to_string(),
            boxes: (0..nboxes as u32).map(|i| BBox::new(i * 4, 0, 2, 2)).collect(),
            orig_size: (64, 64),
        }
    }

    #[test]
    fn merge_groups_by_patient_and_prompt() {
        let entries = vec![
            me("p1", "edema", "a.pgm", 1),
            me("p1", "edema", "a.pgm", 1),
            me("p1", "other prompt", "a.pgm", 1),
        ];
        let merged = merge_samples(&entries).unwrap();
        assert_eq!(merged.len(), 2);
        assert_eq!(merged[0].boxes.len(), 2);
        assert_eq!(merged[1].boxes.len(), 1);
    }

    #[test]
    fn merge_five_entries_two_duplicate_keys() {
        let entries = vec![
            me("p1", "a", "i1.pgm", 1),
            me("p2", "b", "i2.pgm", 1),
            me("p1", "a", "i1.pgm", 1),
            me("p3", "c", "i3.pgm", 1),
            me("p2", "b", "i2.pgm", 1),
        ];
        let merged = merge_samples(&entries).unwrap();
        assert_eq!(merged.len(), 3);
        let counts: Vec<usize> = merged.iter().map(|s| s.boxes.len()).collect();
        assert_eq!(counts, vec![2, 2, 1]);
        // idempotent and order-stable
        assert_eq!(merged[0].patient_id, "p1");
        assert_eq!(merged[1].patient_id, "p2");
        assert_eq!(merged[2].patient_id, "p3");
        assert_eq!(merged[0].sample_id, "p1:000");
    }

    #[test]
    fn merge_is_idempotent() {
        let entries = vec![
            me("p1", "a", "i1.pgm", 1),
            me("p2", "b", "i2.pgm", 2),
            me("p1", "a", "i1.pgm", 1),
        ];
        let merged = merge_samples(&entries).unwrap();
        // feed the merged samples back through as entries
        let as_entries: Vec<ManifestEntry> = merged
            .iter()
            .map(|s| ManifestEntry {
                image: s.image.clone(),
                prompt: s.prompt.clone(),
                pathology: s.pathology.clone(),
                patient_id: s.patient_id.clone(),
                boxes: s.boxes.clone(),
                orig_size: s.orig_size,
            })
            .collect();
        let again = merge_samples(&as_entries).unwrap();
        assert_eq!(again.len(), merged.len());
        for (a, b) in merged.iter().zip(&again) {
            assert_eq!(a.sample_id, b.sample_id);
            assert_eq!(a.boxes, b.boxes);
        }
    }

    #[test]
    fn merge_rejects_conflicting_image_paths() {
        let mut second = me("p1", "a", "i1.pgm", 1);
        second.image = "other.pgm".to_string();
        let err = merge_samples(&[me("p1", "a", "i1.pgm", 1), second]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn pgm_round_trip_and_gradient_fixture() {
        let dir = tempdir().unwrap();
        // 4x4 gradient with known bytes
        let bytes: Vec<u8> = (0..16).map(|i| (i * 17) as u8).collect();
        let mut file = b"P5\n# comment\n4 4\n255\n".to_vec();
        file.extend_from_slice(&bytes);
        let path = dir.path().join("grad.pgm");
        std::fs::write(&path, &file).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.file_size, (4, 4));
        assert_eq!(img.pixels.shape(), &[IMAGE_SIZE, IMAGE_SIZE]);

        // constant image loads to a constant tensor at any size
        let mut cfile = b"P5\n3 5\n255\n".to_vec();
        cfile.extend(std::iter::repeat(100u8).take(15));
        let cpath = dir.path().join("const.pgm");
        std::fs::write(&cpath, &cfile).unwrap();
        let cimg = load_image(&cpath).unwrap();
        for &v in cimg.pixels.data() {
            assert!((v - 100.0 / 255.0).abs() < 1e-6);
        }
    }

    #[test]
    fn image_512_input_is_byte_over_255_exactly() {
        let dir = tempdir().unwrap();
        let mut file = format!("P5\n{IMAGE_SIZE} {IMAGE_SIZE}\n255\n").into_bytes();
        let payload: Vec<u8> = (0..IMAGE_SIZE * IMAGE_SIZE).map(|i| (i % 251) as u8).collect();
        file.extend_from_slice(&payload);
        let path = dir.path().join("big.pgm");
        std::fs::write(&path, &file).unwrap();
        let img = load_image(&path).unwrap();
        for (&v, &b) in img.pixels.data().iter().zip(&payload) {
            assert_eq!(v, b as f32 / 255.0);
        }
    }

    #[test]
    fn corrupt_pgm_headers_are_format_errors() {
        let dir = tempdir().unwrap();
        for (name, bytes) in [
            ("bad_magic.pgm", b"P6\n2 2\n255\n1234".to_vec()),
            ("bad_maxval.pgm", b"P5\n2 2\n65535\n1234".to_vec()),
            ("short.pgm", b"P5\n4 4\n255\nxx".to_vec()),
        ] {
            let p = dir.path().join(name);
            std::fs::write(&p, &bytes).unwrap();
            assert!(matches!(load_image(&p), Err(Error::Format { .. })), "{name}");
        }
        let missing = dir.path().join("nope.pgm");
        assert!(matches!(load_image(&missing), Err(Error::Io { .. })));
    }

    #[test]
    fn png_grayscale_loads() {
        let dir = tempdir().unwrap();
        let img = image::GrayImage::from_fn(6, 4, |x, y| image::Luma([(x * 40 + y) as u8]));
        let path = dir.path().join("g.png");
        img.save(&path).unwrap();
        let loaded = load_image(&path).unwrap();
        assert_eq!(loaded.file_size, (4, 6));
    }

    #[test]
    fn heatmap_sidecar_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let map = Tensor::from_fn(vec![7, 5], |i| (i as f32 * 0.618).fract()).unwrap();
        let stem = dir.path().join("heat");
        let (pgm, hmap) = save_heatmap(&stem, &map).unwrap();
        assert!(pgm.exists() && hmap.exists());
        let back = load_heatmap(&hmap).unwrap();
        assert_eq!(back.shape(), map.shape());
        assert_eq!(back.data(), map.data());

        // truncated sidecar is a format error
        let bytes = std::fs::read(&hmap).unwrap();
        std::fs::write(&hmap, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(load_heatmap(&hmap), Err(Error::Format { .. })));
    }

    #[test]
    fn report_csv_matches_golden() {
        let records = vec![
            MetricsRecord {
                sample_id: "p1:000".into(),
                pathology: "edema".into(),
                miou: Some(0.25),
                per_threshold_iou: None,
                auc_roc: Some(0.75),
                cnr: Some(1.5),
                abs_cnr: Some(1.5),
                flags: vec![],
            },
            MetricsRecord {
                sample_id: "p2:001".into(),
                pathology: "lung opacity".into(),
                miou: Some(0.1),
                per_threshold_iou: None,
                auc_roc: None,
                cnr: None,
                abs_cnr: None,
                flags: vec!["auc_undefined".into(), "cnr_undefined".into()],
            },
        ];
        let got = String::from_utf8(csv_bytes(&report_rows(&records))).unwrap();
        let want = "sample_id,pathology,miou,auc_roc,cnr,abs_cnr,flags\r\n\
                    p1:000,edema,0.250000,0.750000,1.500000,1.500000,\r\n\
                    p2:001,lung opacity,0.100000,,,,auc_undefined;cnr_undefined\r\n";
        assert_eq!(got, want);
    }

    #[test]
    fn csv_quoting_is_rfc4180() {
        assert_eq!(csv_field("plain"), "plain");
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
        let rows = vec![vec!["a,b".to_string(), "c".to_string()]];
        assert_eq!(String::from_utf8(csv_bytes(&rows)).unwrap(), "\"a,b\",c\r\n");
    }

    #[test]
    fn checkpoint_file_round_trip() {
        let dir = tempdir().unwrap();
        let model = crate::synth::planted_checkpoint();
        let path = dir.path().join("model.glckpt");
        save_checkpoint(&path, &model).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.num_layers(), model.num_layers());

        // truncated checkpoint leaves no partial model
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
    }
}
