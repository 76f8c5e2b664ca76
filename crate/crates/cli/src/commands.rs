//! Subcommand implementations.

use crate::args::{AblateArgs, EvaluateArgs, GroundArgs, InspectArgs, ModelArgs, SynthDemoArgs};
use crate::config::{ConfigLog, RunConfig};
use groundlens_core::denoiser::DenoiserModel;
use groundlens_core::error::{Error, Result};
use groundlens_core::grounding::{
    aggregate_heatmap, apply_foreground_mask, harvest_attention, otsu_threshold, run_pipeline,
    OtsuOutcome, SelectionConfig,
};
use groundlens_core::io::{self, GroundingSample};
use groundlens_core::metrics::{
    abs_cnr, auc_roc, cnr, miou, rasterize_bboxes, summarize, MetricsRecord, MIOU_THRESHOLDS,
};
use groundlens_core::numerics::{gaussian_smooth, resize_nearest, Tensor};
use groundlens_core::schedule::ddim_invert_step;
use groundlens_core::synth;
use groundlens_core::text::{embed, null_context, select_token_indices, tokenize, TokenMode, Vocabulary};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

fn load_model_and_vocab(args: &ModelArgs) -> Result<(DenoiserModel, Vocabulary)> {
    let model = io::load_checkpoint(&args.checkpoint)?;
    let vocab = io::load_vocab(&args.vocab)?;
    if vocab.embed_dim() != model.ctx_dim() {
        return Err(Error::Validation(format!(
            "vocabulary embedding dim {} does not match checkpoint context dim {}",
            vocab.embed_dim(),
            model.ctx_dim()
        )));
    }
    Ok((model, vocab))
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

#[derive(Serialize)]
struct GroundResultLog {
    sample_id: String,
    prompt: String,
    otsu_threshold: Option<f32>,
    otsu_degenerate: bool,
    selected_layer_count: usize,
    selected_timestep_count: usize,
    token_count: usize,
    token_indices: Vec<usize>,
}

#[derive(Serialize)]
struct GroundLog {
    config: ConfigLog,
    result: GroundResultLog,
}

pub fn cmd_ground(args: &GroundArgs) -> Result<()> {
    let (model, vocab) = load_model_and_vocab(&args.model)?;
    let cfg = RunConfig::from_args(&args.select);
    cfg.selection.validate(model.num_layers())?;
    let sched = cfg.schedule()?;
    let image = io::load_image(&args.image)?;
    let sample_id = args
        .image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".to_string());

    let out = run_pipeline(
        &image.pixels,
        &sample_id,
        &args.prompt,
        args.pathology.as_deref(),
        &model,
        &vocab,
        &sched,
        &cfg.selection,
    )?;

    ensure_out_dir(&args.out)?;
    let (pgm, hmap) = io::save_heatmap(&args.out.join("heatmap"), &out.heatmap.grid)?;
    let log = GroundLog {
        config: ConfigLog::new(&cfg, &model)?,
        result: GroundResultLog {
            sample_id,
            prompt: args.prompt.clone(),
            otsu_threshold: out.otsu.map(|o| o.threshold),
            otsu_degenerate: out.otsu.map(|o| o.degenerate).unwrap_or(false),
            selected_layer_count: cfg.selection.layers.len(),
            selected_timestep_count: cfg.selection.timestep_count(),
            token_count: out.token_indices.len(),
            token_indices: out.token_indices,
        },
    };
    let log_path = args.out.join("run.json");
    io::write_atomic(&log_path, serde_json::to_string_pretty(&log).unwrap().as_bytes())?;
    log::info!(
        "wrote {}, {}, {}",
        pgm.display(),
        hmap.display(),
        log_path.display()
    );
    Ok(())
}

/// Per-sample evaluation outcome: a full metrics record, or exclusion when
/// pathology-token selection finds nothing.
enum SampleOutcome {
    Record(MetricsRecord),
    Excluded { sample_id: String, pathology: String },
}

/// Scores one post-processed heatmap against a sample's ground truth at the
/// original image resolution.
fn metrics_for_sample(
    heat512: &Tensor,
    sample: &GroundingSample,
    otsu: Option<OtsuOutcome>,
) -> Result<MetricsRecord> {
    let (oh, ow) = (sample.orig_size.0 as usize, sample.orig_size.1 as usize);
    let heat = resize_nearest(heat512, oh, ow)?;
    let gt = rasterize_bboxes(&sample.boxes, oh, ow)?;
    let mut flags: Vec<String> = Vec::new();
    if otsu.map(|o| o.degenerate).unwrap_or(false) {
        flags.push("otsu_degenerate".to_string());
    }
    let m = miou(&heat, &gt)?;
    for (o, thr) in m.per_threshold.iter().zip(MIOU_THRESHOLDS) {
        if o.empty_union {
            flags.push(format!("iou_empty_union@{thr}"));
        }
    }
    let auc = match auc_roc(&heat, &gt) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMetric(_)) => {
            flags.push("auc_undefined".to_string());
            None
        }
        Err(e) => return Err(e),
    };
    let (c, a) = match cnr(&heat, &gt) {
        Ok(v) => (Some(v), Some(abs_cnr(&heat, &gt)?)),
        Err(Error::UndefinedMetric(_)) => {
            flags.push("cnr_undefined".to_string());
            (None, None)
        }
        Err(e) => return Err(e),
    };
    let mut per = [0.0f64; 5];
    for (slot, o) in per.iter_mut().zip(&m.per_threshold) {
        *slot = o.value;
    }
    Ok(MetricsRecord {
        sample_id: sample.sample_id.clone(),
        pathology: sample.pathology.clone(),
        miou: Some(m.value),
        per_threshold_iou: Some(per),
        auc_roc: auc,
        cnr: c,
        abs_cnr: a,
        flags,
    })
}

fn load_samples_for_eval(manifest: &Path) -> Result<(PathBuf, Vec<GroundingSample>)> {
    let entries = io::load_manifest(manifest)?;
    let samples = io::merge_samples(&entries)?;
    let boxless: Vec<&str> = samples
        .iter()
        .filter(|s| s.boxes.is_empty())
        .map(|s| s.sample_id.as_str())
        .collect();
    if !boxless.is_empty() {
        return Err(Error::Validation(format!(
            "evaluation requires ground-truth boxes; samples without any: {}",
            boxless.join(", ")
        )));
    }
    let base = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok((base, samples))
}

/// Runs `work` over samples, optionally on a bounded worker pool; results
/// come back in sample order either way.
fn map_samples<T: Send>(
    samples: &[GroundingSample],
    jobs: usize,
    work: impl Fn(&GroundingSample) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?;
        pool.install(|| samples.par_iter().map(&work).collect())
    } else {
        samples.iter().map(|s| work(s)).collect()
    }
}

fn reduce_outcomes(
    outcomes: Vec<SampleOutcome>,
) -> (Vec<MetricsRecord>, BTreeMap<String, usize>) {
    let mut records = Vec::new();
    let mut excluded: BTreeMap<String, usize> = BTreeMap::new();
    for o in outcomes {
        match o {
            SampleOutcome::Record(r) => records.push(r),
            SampleOutcome::Excluded { sample_id, pathology } => {
                *excluded.entry(pathology.clone()).or_insert(0) += 1;
                records.push(MetricsRecord {
                    sample_id,
                    pathology,
                    miou: None,
                    per_threshold_iou: None,
                    auc_roc: None,
                    cnr: None,
                    abs_cnr: None,
                    flags: vec!["excluded_no_pathology_tokens".to_string()],
                });
            }
        }
    }
    records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    (records, excluded)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let (model, vocab) = load_model_and_vocab(&args.model)?;
    let cfg = RunConfig::from_args(&args.select);
    cfg.selection.validate(model.num_layers())?;
    let sched = cfg.schedule()?;
    let (base, samples) = load_samples_for_eval(&args.manifest)?;

    let outcomes = map_samples(&samples, args.jobs, |s| {
        let image = io::load_image(&base.join(&s.image))?;
        match run_pipeline(
            &image.pixels,
            &s.sample_id,
            &s.prompt,
            Some(&s.pathology),
            &model,
            &vocab,
            &sched,
            &cfg.selection,
        ) {
            Ok(out) => Ok(SampleOutcome::Record(metrics_for_sample(
                &out.heatmap.grid,
                s,
                out.otsu,
            )?)),
            Err(Error::EmptySelection(_)) if cfg.selection.token_mode == TokenMode::Pathology => {
                Ok(SampleOutcome::Excluded {
                    sample_id: s.sample_id.clone(),
                    pathology: s.pathology.clone(),
                })
            }
            Err(e) => Err(e),
        }
    })?;

    let (records, excluded) = reduce_outcomes(outcomes);
    // Records with no metrics at all (exclusions) carry flags only; they do
    // not enter the per-label statistics.
    let scored: Vec<MetricsRecord> =
        records.iter().filter(|r| r.miou.is_some()).cloned().collect();
    let summaries = summarize(&scored, &excluded);

    ensure_out_dir(&args.out)?;
    io::save_report(&args.out.join("report.csv"), &records)?;
    io::save_summary(&args.out.join("summary.csv"), &summaries)?;
    log::info!("evaluated {} samples ({} excluded)", records.len(), excluded.values().sum::<usize>());
    Ok(())
}

/// One point of the ablation grid.
#[derive(Debug, Clone)]
struct SweepPoint {
    layers: Vec<usize>,
    t_range: (usize, usize),
    otsu: bool,
    tokens: TokenMode,
}

impl SweepPoint {
    fn selection(&self, base: &SelectionConfig) -> SelectionConfig {
        SelectionConfig {
            layers: self.layers.clone(),
            t_range: self.t_range,
            token_mode: self.tokens,
            otsu: self.otsu,
            ..base.clone()
        }
    }
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let (model, vocab) = load_model_and_vocab(&args.model)?;
    let cfg = RunConfig::from_args(&args.select);
    let sched = cfg.schedule()?;
    let (base, samples) = load_samples_for_eval(&args.manifest)?;

    let mut sweep: Vec<SweepPoint> = Vec::new();
    for layers in &args.layer_sets.0 {
        for &t_range in &args.t_ranges.0 {
            for &otsu in &args.otsu_modes {
                for &tokens in &args.token_modes {
                    sweep.push(SweepPoint { layers: layers.clone(), t_range, otsu, tokens });
                }
            }
        }
    }
    for point in &sweep {
        point.selection(&cfg.selection).validate(model.num_layers())?;
    }

    let null = null_context(&vocab, cfg.selection.seq_len)?;
    // Harvest once per sample; every grid point reuses the same stack.
    let per_sample = map_samples(&samples, args.jobs, |s| {
        let image = io::load_image(&base.join(&s.image))?;
        let z0 = model.encode_image(&image.pixels, &s.sample_id)?;
        let tokens = tokenize(&s.prompt, &vocab, cfg.selection.seq_len)?;
        let ctx = embed(&tokens, &vocab)?;
        let harvest = harvest_attention(&z0, &ctx, &null, &model, &sched)?;
        let mut outcomes: Vec<(usize, SampleOutcome)> = Vec::with_capacity(sweep.len());
        for (i, point) in sweep.iter().enumerate() {
            let sel = point.selection(&cfg.selection);
            let idx = match select_token_indices(
                &tokens,
                point.tokens,
                Some(&s.pathology),
                &vocab,
                sel.include_specials,
            ) {
                Ok(idx) => idx,
                Err(Error::EmptySelection(_)) if point.tokens == TokenMode::Pathology => {
                    outcomes.push((
                        i,
                        SampleOutcome::Excluded {
                            sample_id: s.sample_id.clone(),
                            pathology: s.pathology.clone(),
                        },
                    ));
                    continue;
                }
                Err(e) => return Err(e),
            };
            let agg = aggregate_heatmap(&harvest.stack, &idx, &sel, &s.sample_id)?;
            let smoothed = gaussian_smooth(&agg.grid, sel.sigma)?;
            let (grid, otsu_out) = if sel.otsu {
                let o = otsu_threshold(&smoothed);
                (apply_foreground_mask(&smoothed, o.threshold), Some(o))
            } else {
                (smoothed, None)
            };
            outcomes.push((i, SampleOutcome::Record(metrics_for_sample(&grid, s, otsu_out)?)));
        }
        Ok(outcomes)
    })?;

    // Regroup by grid point, then summarize each.
    let mut by_point: Vec<Vec<SampleOutcome>> = (0..sweep.len()).map(|_| Vec::new()).collect();
    for sample_outcomes in per_sample {
        for (i, o) in sample_outcomes {
            by_point[i].push(o);
        }
    }

    let mut rows: Vec<Vec<String>> = vec![vec![
        "layer_set".to_string(),
        "t_lo".to_string(),
        "t_hi".to_string(),
        "otsu".to_string(),
        "tokens".to_string(),
        "pathology".to_string(),
        "metric".to_string(),
        "mean".to_string(),
        "std".to_string(),
        "n".to_string(),
        "excluded".to_string(),
    ]];
    for (point, outcomes) in sweep.iter().zip(by_point) {
        let (records, excluded) = reduce_outcomes(outcomes);
        let scored: Vec<MetricsRecord> =
            records.iter().filter(|r| r.miou.is_some()).cloned().collect();
        let summaries = summarize(&scored, &excluded);
        let layer_set =
            point.layers.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",");
        let tokens = match point.tokens {
            TokenMode::All => "all",
            TokenMode::Pathology => "pathology",
        };
        for s in &summaries {
            let metrics: [(&str, Option<groundlens_core::metrics::MetricStat>); 4] = [
                ("miou", s.miou),
                ("auc_roc", s.auc_roc),
                ("cnr", s.cnr),
                ("abs_cnr", s.abs_cnr),
            ];
            for (name, stat) in metrics {
                rows.push(vec![
                    layer_set.clone(),
                    point.t_range.0.to_string(),
                    point.t_range.1.to_string(),
                    if point.otsu { "on" } else { "off" }.to_string(),
                    tokens.to_string(),
                    s.label.clone(),
                    name.to_string(),
                    stat.map(|m| format!("{:.6}", m.mean)).unwrap_or_default(),
                    stat.map(|m| format!("{:.6}", m.std)).unwrap_or_default(),
                    s.n.to_string(),
                    s.excluded.to_string(),
                ]);
            }
        }
    }
    ensure_out_dir(&args.out)?;
    io::write_atomic(&args.out.join("ablation.csv"), &io::csv_bytes(&rows))?;
    log::info!("swept {} configurations over {} samples", sweep.len(), samples.len());
    Ok(())
}

fn sanitize_token(token: &str) -> String {
    token
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

pub fn cmd_inspect(args: &InspectArgs) -> Result<()> {
    let (model, vocab) = load_model_and_vocab(&args.model)?;
    let cfg = RunConfig::from_args(&args.select);
    let sched = cfg.schedule()?;
    if args.layer == 0 || args.layer > model.num_layers() {
        return Err(Error::InvalidArgument(format!(
            "layer {} out of range 1..={}",
            args.layer,
            model.num_layers()
        )));
    }
    if args.timestep >= sched.total_steps() {
        return Err(Error::InvalidArgument(format!(
            "timestep {} out of range 0..{}",
            args.timestep,
            sched.total_steps()
        )));
    }

    let image = io::load_image(&args.image)?;
    let z0 = model.encode_image(&image.pixels, "inspect")?;
    let tokens = tokenize(&args.prompt, &vocab, cfg.selection.seq_len)?;
    let ctx = embed(&tokens, &vocab)?;
    let null = null_context(&vocab, cfg.selection.seq_len)?;

    // Walk the inversion to the requested timestep, then take the
    // conditional maps there.
    let mut z = z0.grid.clone();
    for t in 0..args.timestep {
        let uncond = model.predict_noise(&z, t, &null)?;
        z = ddim_invert_step(&z, &uncond.epsilon, t, &sched)?;
    }
    let cond = model.predict_noise(&z, args.timestep, &ctx)?;
    let map = &cond.attn[args.layer - 1];
    let (_, b, _) = map.dims3()?;

    ensure_out_dir(&args.out)?;
    let mut written = 0usize;
    for (pos, (&id, &real)) in tokens.ids().iter().zip(tokens.padding_mask()).enumerate() {
        if !real {
            continue;
        }
        let name = sanitize_token(vocab.token_str(id).unwrap_or("unk"));
        let slice = Tensor::new(
            vec![b, b],
            map.data()[pos * b * b..(pos + 1) * b * b].to_vec(),
        )?;
        io::save_heatmap(&args.out.join(format!("tok{pos:02}_{name}")), &slice)?;
        written += 1;
    }
    log::info!(
        "dumped {written} token maps at layer {} timestep {}",
        args.layer,
        args.timestep
    );
    Ok(())
}

pub fn cmd_synth_demo(args: &SynthDemoArgs) -> Result<()> {
    ensure_out_dir(&args.out)?;
    let artifacts = synth::write_demo_artifacts(&args.out)?;
    println!("checkpoint: {}", artifacts.checkpoint.display());
    println!("vocab:      {}", artifacts.vocab.display());
    println!("manifest:   {}", artifacts.manifest.display());
    println!("image:      {}", artifacts.planted_image.display());
    Ok(())
}
