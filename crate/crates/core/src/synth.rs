//! Deterministic generators for demo artifacts: a checkpoint with a planted
//! image-text alignment, a matching vocabulary, a synthetic scene whose
//! ground truth is known exactly, and a small manifest-backed dataset.
//!
//! The planted coupling works through one feature channel: the encoder maps
//! image brightness into feature coordinate 0, the query projection of the
//! 3rd/4th/6th/7th layers reads only that coordinate, and the key projection
//! maps embedding coordinate 0 into the same attention direction. Pathology
//! words carry a strong key coordinate (1.0), connective words and characters
//! a weak one (0.4), and the specials none, so bright regions attend hardest
//! to pathology tokens while the rest of the prompt follows brightness
//! weakly. All other layers produce exactly uniform maps, which min-max
//! normalization turns into zeros. This gives the whole pipeline a known
//! answer: a bright box grounds the pathology word at the box, selecting
//! only the aligned layers scores strictly better than averaging everything,
//! and every contract stays testable without any pretrained weights.

use crate::denoiser::{DenoiserModel, LayerSpec, IMAGE_SIZE};
use crate::error::Result;
use crate::io;
use crate::metrics::BBox;
use crate::numerics::Tensor;
use crate::text::Vocabulary;
use std::path::{Path, PathBuf};

/// Query-side gain of the planted coupling (feature coord 0 -> key coord 0).
/// Together with the key gain this keeps in-box logits in a moderate range,
/// so pathology tokens dominate without starving the rest of the prompt.
pub const PLANT_QUERY_GAIN: f32 = 3.3;
/// Key-side gain of the planted coupling (embedding coord 0 -> key coord 0).
pub const PLANT_KEY_GAIN: f32 = 2.0;
/// Key coordinate of connective words and characters.
pub const FILLER_KEY_COORD: f32 = 0.4;
/// 1-based layers carrying the planted coupling.
pub const PLANTED_LAYERS: [usize; 4] = [3, 4, 6, 7];

/// Spatial sizes per layer: six middle layers at 16, outer layers at 32.
const LAYER_PATTERN: [usize; 11] = [32, 32, 16, 16, 16, 16, 16, 16, 32, 32, 32];

const CHANNELS: usize = 4;
const LATENT: usize = 16;
const FEAT: usize = 16;
const KEY: usize = 16;
const CTX: usize = 16;
const HEADS: usize = 2;

/// Words whose embeddings carry the planted key coordinate.
const PLANTED_WORDS: [&str; 12] = [
    "pneumonia",
    "pneumo",
    "thorax",
    "consolidation",
    "atelectasis",
    "edema",
    "cardiomegaly",
    "opacity",
    "effusion",
    "lesion",
    "mass",
    "nodule",
];

/// Connective vocabulary with zero planted coordinate.
const FILLER_WORDS: [&str; 27] = [
    "right",
    "left",
    "small",
    "large",
    "mild",
    "moderate",
    "severe",
    "lung",
    "pleural",
    "the",
    "in",
    "of",
    "at",
    "on",
    "is",
    "no",
    "with",
    "seen",
    "upper",
    "lower",
    "base",
    "bibasilar",
    "air",
    "apical",
    "clear",
    "costophrenic",
    "angle",
];

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform value in [-amp, amp], derived from the generator state.
fn noise(state: &mut u64, amp: f32) -> f32 {
    let unit = (splitmix(state) >> 40) as f32 / (1u64 << 24) as f32;
    (2.0 * unit - 1.0) * amp
}

/// The demo vocabulary: specials, single characters (including space and
/// basic punctuation), pathology words with the planted coordinate, and
/// filler words without it.
pub fn demo_vocabulary() -> Vocabulary {
    let mut entries: Vec<(String, u32)> = Vec::new();
    let push = |s: &str, entries: &mut Vec<(String, u32)>| {
        let id = entries.len() as u32;
        entries.push((s.to_string(), id));
    };
    push("<|start|>", &mut entries);
    push("<|end|>", &mut entries);
    push("<|pad|>", &mut entries);
    for ch in "abcdefghijklmnopqrstuvwxyz .,-".chars() {
        push(&ch.to_string(), &mut entries);
    }
    for w in PLANTED_WORDS {
        push(w, &mut entries);
    }
    for w in FILLER_WORDS {
        push(w, &mut entries);
    }

    let n = entries.len();
    let mut table = vec![0.0f32; n * CTX];
    let mut state = 0x5EED_0001u64;
    for (tok, id) in &entries {
        let row = &mut table[*id as usize * CTX..(*id as usize + 1) * CTX];
        match *id {
            0 => row[1] = 0.5,            // begin
            1 => row[2] = 0.5,            // end
            2 => {}                       // pad stays zero
            _ if PLANTED_WORDS.contains(&tok.as_str()) => {
                row[0] = 1.0;
                for v in row[8..].iter_mut() {
                    *v = noise(&mut state, 0.05);
                }
            }
            _ => {
                row[0] = FILLER_KEY_COORD;
                for v in row[1..8].iter_mut() {
                    *v = noise(&mut state, 0.3);
                }
            }
        }
    }
    Vocabulary::from_parts(entries, 0, 1, 2, CTX, table)
        .expect("demo vocabulary is consistent by construction")
}

/// The planted checkpoint (see the module docs for the mechanism).
pub fn planted_checkpoint() -> DenoiserModel {
    let mut state = 0x5EED_0002u64;
    let identity = Tensor::from_fn(vec![FEAT, FEAT], |i| {
        if i / FEAT == i % FEAT {
            1.0
        } else {
            0.0
        }
    })
    .unwrap();

    let embed_in = Tensor::from_fn(vec![CHANNELS, FEAT], |i| {
        let (ch, d) = (i / FEAT, i % FEAT);
        match (ch, d) {
            (0, 0) => 1.0,
            (1, 1) | (2, 2) | (3, 3) => 0.7,
            _ => 0.0,
        }
    })
    .unwrap();

    // Features -> noise estimate. Channel 0 reads the planted coordinate and
    // one pure-time coordinate, the rest read mixed value/time coordinates.
    let proj_out = Tensor::from_fn(vec![FEAT, CHANNELS], |i| {
        let (d, ch) = (i / CHANNELS, i % CHANNELS);
        match (d, ch) {
            // small gain on the query channel so inversion feedback cannot
            // blow up attention logits over a long run
            (0, 0) => 0.04,
            (13, 0) => 0.08,
            (5, 1) => 0.10,
            (12, 1) => 0.06,
            (6, 2) => 0.10,
            (14, 2) => 0.05,
            (7, 3) => 0.10,
            (15, 3) => 0.05,
            _ => 0.0,
        }
    })
    .unwrap();

    let mut layers = Vec::with_capacity(LAYER_PATTERN.len());
    for (idx, &spatial) in LAYER_PATTERN.iter().enumerate() {
        let planted = PLANTED_LAYERS.contains(&(idx + 1));
        let p_q = Tensor::from_fn(vec![FEAT, KEY], |i| {
            if planted && i == 0 {
                PLANT_QUERY_GAIN
            } else {
                0.0
            }
        })
        .unwrap();
        let p_k = Tensor::from_fn(vec![CTX, KEY], |i| if i == 0 { PLANT_KEY_GAIN } else { 0.0 })
            .unwrap();
        // Values live in feature coords 4..12 so the planted query channel
        // stays untouched by attention residuals.
        let p_v = Tensor::from_fn(vec![CTX, FEAT], |i| {
            let d = i % FEAT;
            if (4..12).contains(&d) {
                noise(&mut state, 0.08)
            } else {
                0.0
            }
        })
        .unwrap();
        let p_out = Tensor::from_fn(vec![FEAT, FEAT], |i| {
            let (r, c) = (i / FEAT, i % FEAT);
            if r == c && (4..12).contains(&r) {
                0.1
            } else {
                0.0
            }
        })
        .unwrap();
        layers.push(LayerSpec {
            spatial,
            mix: identity.clone(),
            p_q,
            p_k,
            p_v,
            p_out,
            heads: HEADS,
        });
    }

    DenoiserModel::new(
        CHANNELS,
        LATENT,
        FEAT,
        KEY,
        CTX,
        vec![0.25, 0.30, 0.20, 0.25],
        vec![0.50, 0.60, 0.55, 0.50],
        embed_in,
        proj_out,
        layers,
    )
    .expect("planted checkpoint is consistent by construction")
}

/// A synthetic scene with exactly known ground truth: a dark gradient
/// background and one bright box, grid-aligned to the encoder pooling.
#[derive(Debug, Clone)]
pub struct PlantedScene {
    /// 512x512 image in `[0,1]`.
    pub image: Tensor,
    pub bbox: BBox,
    pub prompt: String,
    pub pathology: String,
}

pub fn planted_scene() -> PlantedScene {
    let bbox = BBox::new(128, 192, 160, 128);
    PlantedScene {
        image: scene_image(IMAGE_SIZE as u32, IMAGE_SIZE as u32, &[bbox]),
        bbox,
        prompt: "lesion".to_string(),
        pathology: "lesion".to_string(),
    }
}

/// Gradient background with bright boxes burned in.
fn scene_image(height: u32, width: u32, boxes: &[BBox]) -> Tensor {
    Tensor::from_fn(vec![height as usize, width as usize], |i| {
        let (r, c) = ((i / width as usize) as u32, (i % width as usize) as u32);
        let inside = boxes.iter().any(|b| c >= b.x && c < b.x + b.w && r >= b.y && r < b.y + b.h);
        if inside {
            1.0
        } else {
            0.02 + 0.10 * r as f32 / height as f32
        }
    })
    .unwrap()
}

/// Paths of a generated demo workspace.
#[derive(Debug, Clone)]
pub struct DemoArtifacts {
    pub checkpoint: PathBuf,
    pub vocab: PathBuf,
    pub manifest: PathBuf,
    /// Standalone planted image, convenient for single-image runs.
    pub planted_image: PathBuf,
}

struct DemoEntry {
    patient: &'static str,
    prompt: &'static str,
    pathology: &'static str,
    size: (u32, u32), // (H, W)
    boxes: &'static [[u32; 4]],
    png: bool,
}

/// Twelve manifest entries over ten images; two (patient, prompt) keys are
/// duplicated so merging is exercised, and one prompt lacks its pathology
/// word so pathology-token runs have something to exclude.
const DEMO_ENTRIES: [DemoEntry; 12] = [
    DemoEntry { patient: "p01", prompt: "edema", pathology: "edema", size: (512, 512), boxes: &[[300, 100, 120, 120]], png: false },
    DemoEntry { patient: "p02", prompt: "mild edema", pathology: "edema", size: (600, 500), boxes: &[[100, 350, 150, 120]], png: false },
    DemoEntry { patient: "p03", prompt: "lesion", pathology: "lesion", size: (512, 512), boxes: &[[128, 192, 160, 128]], png: false },
    DemoEntry { patient: "p04", prompt: "small lesion in the left lung", pathology: "lesion", size: (480, 640), boxes: &[[400, 150, 140, 160]], png: false },
    DemoEntry { patient: "p05", prompt: "lung opacity", pathology: "opacity", size: (512, 512), boxes: &[[60, 60, 130, 130]], png: true },
    DemoEntry { patient: "p06", prompt: "pleural effusion", pathology: "effusion", size: (640, 640), boxes: &[[380, 420, 160, 140]], png: false },
    DemoEntry { patient: "p06", prompt: "pleural effusion", pathology: "effusion", size: (640, 640), boxes: &[[100, 420, 120, 140]], png: false },
    DemoEntry { patient: "p07", prompt: "clear costophrenic angle", pathology: "effusion", size: (512, 512), boxes: &[[200, 300, 140, 100]], png: false },
    DemoEntry { patient: "p08", prompt: "mass", pathology: "mass", size: (512, 512), boxes: &[[320, 320, 120, 120]], png: false },
    DemoEntry { patient: "p09", prompt: "pneumonia seen", pathology: "pneumonia", size: (600, 600), boxes: &[[220, 150, 160, 160]], png: false },
    DemoEntry { patient: "p10", prompt: "moderate edema", pathology: "edema", size: (512, 512), boxes: &[[60, 340, 140, 120]], png: false },
    DemoEntry { patient: "p10", prompt: "moderate edema", pathology: "edema", size: (512, 512), boxes: &[[240, 340, 100, 120]], png: false },
];

/// Writes the demo checkpoint, vocabulary, images and manifest under `dir`.
pub fn write_demo_artifacts(dir: &Path) -> Result<DemoArtifacts> {
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir)
        .map_err(|e| crate::error::Error::io(images_dir.display().to_string(), e))?;

    let checkpoint = dir.join("checkpoint.glckpt");
    io::save_checkpoint(&checkpoint, &planted_checkpoint())?;
    let vocab = dir.join("vocab.glvocab");
    io::save_vocab(&vocab, &demo_vocabulary())?;

    let planted_image = dir.join("planted.pgm");
    io::save_pgm(&planted_image, &planted_scene().image)?;

    // One image per (patient, prompt) key, bright over the union of that
    // key's boxes.
    let mut manifest_entries: Vec<serde_json::Value> = Vec::new();
    let mut written: std::collections::HashSet<String> = std::collections::HashSet::new();
    for e in &DEMO_ENTRIES {
        let ext = if e.png { "png" } else { "pgm" };
        let rel = format!("images/{}.{ext}", e.patient);
        if written.insert(rel.clone()) {
            let key_boxes: Vec<BBox> = DEMO_ENTRIES
                .iter()
                .filter(|o| o.patient == e.patient && o.prompt == e.prompt)
                .flat_map(|o| o.boxes.iter().map(|b| BBox::new(b[0], b[1], b[2], b[3])))
                .collect();
            let img = scene_image(e.size.0, e.size.1, &key_boxes);
            let path = dir.join(&rel);
            if e.png {
                let (h, w) = (e.size.0, e.size.1);
                let buf: Vec<u8> =
                    img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
                let gray = image::GrayImage::from_raw(w, h, buf)
                    .expect("buffer matches image extents");
                gray.save(&path).map_err(|err| {
                    crate::error::Error::format(path.display().to_string(), format!("PNG encode: {err}"))
                })?;
            } else {
                io::save_pgm(&path, &img)?;
            }
        }
        manifest_entries.push(serde_json::json!({
            "image": rel,
            "prompt": e.prompt,
            "pathology": e.pathology,
            "patient_id": e.patient,
            "boxes": e.boxes,
            "orig_size": [e.size.0, e.size.1],
        }));
    }
    let manifest_json = serde_json::json!({
        "version": 1,
        "labels": ["edema", "lesion", "opacity", "effusion", "mass", "pneumonia"],
        "entries": manifest_entries,
    });
    let manifest = dir.join("manifest.json");
    io::write_atomic(&manifest, serde_json::to_string_pretty(&manifest_json).unwrap().as_bytes())?;

    Ok(DemoArtifacts { checkpoint, vocab, manifest, planted_image })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn generators_are_deterministic() {
        let a = planted_checkpoint().to_bytes();
        let b = planted_checkpoint().to_bytes();
        assert_eq!(a, b);
        assert_eq!(demo_vocabulary().to_bytes(), demo_vocabulary().to_bytes());
    }

    #[test]
    fn demo_vocabulary_tokenizes_its_own_words() {
        let v = demo_vocabulary();
        for w in PLANTED_WORDS.iter().chain(&FILLER_WORDS) {
            let t = crate::text::tokenize(w, &v, 8).unwrap();
            assert_eq!(t.real_len(), 3, "word `{w}` should be one subtoken");
        }
        // pneumothorax is out-of-vocabulary and splits in two
        let t = crate::text::tokenize("pneumothorax", &v, 8).unwrap();
        assert_eq!(t.real_len(), 4);
    }

    #[test]
    fn demo_artifacts_parse_back_and_merge_to_ten_samples() {
        let dir = tempdir().unwrap();
        let art = write_demo_artifacts(dir.path()).unwrap();
        let model = io::load_checkpoint(&art.checkpoint).unwrap();
        assert_eq!(model.num_layers(), 11);
        for &l in &PLANTED_LAYERS {
            assert_eq!(model.layer_spatial(l).unwrap(), 16);
        }
        let vocab = io::load_vocab(&art.vocab).unwrap();
        assert_eq!(vocab.embed_dim(), model.ctx_dim());

        let entries = io::load_manifest(&art.manifest).unwrap();
        assert_eq!(entries.len(), 12);
        let merged = io::merge_samples(&entries).unwrap();
        assert_eq!(merged.len(), 10);
        let two_boxed: Vec<_> = merged.iter().filter(|s| s.boxes.len() == 2).collect();
        assert_eq!(two_boxed.len(), 2);
        for s in &merged {
            let img = io::load_image(&dir.path().join(&s.image)).unwrap();
            assert_eq!(img.file_size, s.orig_size);
        }
    }
}
