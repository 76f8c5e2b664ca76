//! Command-line surface.

use clap::{Args, Parser, Subcommand};
use groundlens_core::error::{Error, Result};
use groundlens_core::schedule::BetaSchedule;
use groundlens_core::text::TokenMode;
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(
    name = "groundlens",
    version,
    about = "Zero-shot phrase grounding from cross-attention maps gathered during DDIM inversion",
    after_help = "Set GROUNDLENS_LOG={error|info|debug} to control logging."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Ground a prompt on one image; writes heatmap PGM + f32 sidecar + JSON log.
    Ground(GroundArgs),
    /// Run the pipeline over a manifest; writes per-sample and summary CSVs.
    Evaluate(EvaluateArgs),
    /// Sweep selection configurations over a manifest; writes one long-format CSV.
    Ablate(AblateArgs),
    /// Dump each token's attention map at one layer/timestep.
    Inspect(InspectArgs),
    /// Generate the demo checkpoint, vocabulary, images and manifest.
    SynthDemo(SynthDemoArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Denoiser checkpoint file.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Vocabulary file.
    #[arg(long)]
    pub vocab: PathBuf,
}

/// Selection and schedule flags; defaults are the published configuration.
#[derive(Args, Debug, Clone)]
pub struct SelectArgs {
    /// Total DDIM inversion steps T.
    #[arg(long = "timesteps", default_value_t = 300)]
    pub timesteps: usize,
    /// Inclusive harvested timestep range LO:HI.
    #[arg(long = "t-range", default_value = "120:180", value_parser = parse_t_range)]
    pub t_range: (usize, usize),
    /// 1-based cross-attention layers to aggregate.
    #[arg(long, value_delimiter = ',', default_value = "3,4,6,7")]
    pub layers: Vec<usize>,
    /// Gaussian smoothing sigma (pixels).
    #[arg(long, default_value_t = 2.5)]
    pub sigma: f32,
    /// Otsu foreground masking.
    #[arg(long, default_value = "on", value_parser = parse_on_off, action = clap::ArgAction::Set)]
    pub otsu: bool,
    /// Which token maps enter the aggregation.
    #[arg(long = "tokens", default_value = "all", value_parser = parse_token_mode)]
    pub tokens: TokenMode,
    /// Keep begin/end tokens when --tokens all.
    #[arg(long = "include-specials", default_value_t = false)]
    pub include_specials: bool,
    /// Fixed token sequence length S.
    #[arg(long = "seq-len", default_value_t = 77)]
    pub seq_len: usize,
    /// Noise-schedule beta at t=0.
    #[arg(long = "beta-start", default_value_t = 0.0015)]
    pub beta_start: f64,
    /// Noise-schedule beta at t=T.
    #[arg(long = "beta-end", default_value_t = 0.0205)]
    pub beta_end: f64,
    /// Beta ramp spacing: linear or scaled_linear.
    #[arg(long = "beta-schedule", default_value = "scaled_linear", value_parser = parse_beta_schedule)]
    pub beta_schedule: BetaSchedule,
}

#[derive(Args, Debug)]
pub struct GroundArgs {
    /// Input image (PGM or grayscale PNG).
    #[arg(long)]
    pub image: PathBuf,
    /// Text prompt to ground.
    #[arg(long)]
    pub prompt: String,
    /// Pathology string; required when --tokens pathology.
    #[arg(long)]
    pub pathology: Option<String>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub select: SelectArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub select: SelectArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Sample-level worker count.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Reserved; the pipeline is deterministic and ignores it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub select: SelectArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Semicolon-separated layer sets, e.g. "3,4,6,7;1-11".
    #[arg(long = "layer-sets", value_parser = parse_layer_sets)]
    pub layer_sets: LayerSets,
    /// Semicolon-separated timestep ranges, e.g. "120:180;0:299".
    #[arg(long = "t-ranges", value_parser = parse_t_ranges)]
    pub t_ranges: TRanges,
    /// Comma-separated Otsu settings to sweep (on,off).
    #[arg(long = "otsu-modes", default_value = "on", value_delimiter = ',', value_parser = parse_on_off)]
    pub otsu_modes: Vec<bool>,
    /// Comma-separated token modes to sweep (all,pathology).
    #[arg(long = "token-modes", default_value = "all", value_delimiter = ',', value_parser = parse_token_mode)]
    pub token_modes: Vec<TokenMode>,
    /// Sample-level worker count.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    /// Input image (PGM or grayscale PNG).
    #[arg(long)]
    pub image: PathBuf,
    /// Text prompt.
    #[arg(long)]
    pub prompt: String,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub select: SelectArgs,
    /// 1-based layer to dump.
    #[arg(long)]
    pub layer: usize,
    /// Timestep to dump (0-based, < T).
    #[arg(long)]
    pub timestep: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthDemoArgs {
    /// Output directory for the generated artifacts.
    #[arg(long)]
    pub out: PathBuf,
}

/// Wrapper types so clap's value_parser has concrete targets.
#[derive(Debug, Clone)]
pub struct LayerSets(pub Vec<Vec<usize>>);

#[derive(Debug, Clone)]
pub struct TRanges(pub Vec<(usize, usize)>);

fn parse_t_range(s: &str) -> Result<(usize, usize)> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| Error::InvalidArgument(format!("expected LO:HI, got `{s}`")))?;
    let lo = lo.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad LO in `{s}`")))?;
    let hi = hi.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad HI in `{s}`")))?;
    Ok((lo, hi))
}

fn parse_on_off(s: &str) -> Result<bool> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(Error::InvalidArgument(format!("expected on|off, got `{other}`"))),
    }
}

fn parse_token_mode(s: &str) -> Result<TokenMode> {
    s.parse()
}

fn parse_beta_schedule(s: &str) -> Result<BetaSchedule> {
    s.parse()
}

/// One layer set: comma-separated indices, each either `N` or a range `A-B`.
fn parse_layer_set(s: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for tok in s.split(',') {
        let tok = tok.trim();
        if tok.is_empty() {
            continue;
        }
        if let Some((a, b)) = tok.split_once('-') {
            let a: usize =
                a.parse().map_err(|_| Error::InvalidArgument(format!("bad layer range `{tok}`")))?;
            let b: usize =
                b.parse().map_err(|_| Error::InvalidArgument(format!("bad layer range `{tok}`")))?;
            if a == 0 || a > b {
                return Err(Error::InvalidArgument(format!("bad layer range `{tok}`")));
            }
            out.extend(a..=b);
        } else {
            out.push(tok.parse().map_err(|_| Error::InvalidArgument(format!("bad layer `{tok}`")))?);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!("layer set `{s}` is empty")));
    }
    Ok(out)
}

fn parse_layer_sets(s: &str) -> Result<LayerSets> {
    let sets = s.split(';').map(parse_layer_set).collect::<Result<Vec<_>>>()?;
    if sets.is_empty() {
        return Err(Error::InvalidArgument("no layer sets given".into()));
    }
    Ok(LayerSets(sets))
}

fn parse_t_ranges(s: &str) -> Result<TRanges> {
    let ranges = s.split(';').map(parse_t_range).collect::<Result<Vec<_>>>()?;
    if ranges.is_empty() {
        return Err(Error::InvalidArgument("no timestep ranges given".into()));
    }
    Ok(TRanges(ranges))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    #[test]
    fn defaults_are_the_published_config() {
        let cli = Cli::try_parse_from([
            "groundlens", "ground", "--image", "x.pgm", "--prompt", "edema", "--checkpoint",
            "c", "--vocab", "v", "--out", "o",
        ])
        .unwrap();
        let Command::Ground(args) = cli.command else { panic!("wrong subcommand") };
        assert_eq!(args.select.timesteps, 300);
        assert_eq!(args.select.t_range, (120, 180));
        assert_eq!(args.select.layers, vec![3, 4, 6, 7]);
        assert_eq!(args.select.sigma, 2.5);
        assert!(args.select.otsu);
        assert_eq!(args.select.tokens, TokenMode::All);
        assert_eq!(args.select.seq_len, 77);
        assert_eq!(args.select.beta_start, 0.0015);
        assert_eq!(args.select.beta_end, 0.0205);
        assert_eq!(args.select.beta_schedule, BetaSchedule::ScaledLinear);
    }

    #[test]
    fn layer_set_parsing_supports_ranges() {
        assert_eq!(parse_layer_set("3,4,6,7").unwrap(), vec![3, 4, 6, 7]);
        assert_eq!(parse_layer_set("1-4,9").unwrap(), vec![1, 2, 3, 4, 9]);
        assert!(parse_layer_set("0-3").is_err());
        assert!(parse_layer_set("").is_err());
        let sets = parse_layer_sets("3,4,6,7;1-11").unwrap();
        assert_eq!(sets.0.len(), 2);
        assert_eq!(sets.0[1].len(), 11);
    }

    #[test]
    fn t_range_parsing() {
        assert_eq!(parse_t_range("120:180").unwrap(), (120, 180));
        assert!(parse_t_range("120-180").is_err());
        let rs = parse_t_ranges("0:9;4:5").unwrap();
        assert_eq!(rs.0, vec![(0, 9), (4, 5)]);
    }

    #[test]
    fn otsu_flag_takes_explicit_value() {
        let cli = Cli::try_parse_from([
            "groundlens", "ground", "--image", "x.pgm", "--prompt", "p", "--checkpoint", "c",
            "--vocab", "v", "--out", "o", "--otsu", "off",
        ])
        .unwrap();
        let Command::Ground(args) = cli.command else { panic!("wrong subcommand") };
        assert!(!args.select.otsu);
        assert!(Cli::try_parse_from([
            "groundlens", "ground", "--image", "x.pgm", "--prompt", "p", "--checkpoint", "c",
            "--vocab", "v", "--out", "o", "--otsu", "maybe",
        ])
        .is_err());
    }
}
